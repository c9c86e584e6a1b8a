#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssldg/ssldg.hpp"

using namespace ssldg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("ssldg_trainer_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.batch_size = 2;
    cfg.eval_every = 0;
    cfg.k = 3;
    cfg.channels = 4;
    cfg.grid_g = 2;
    cfg.seed = 11;
    cfg.train_domain = 'A';
    cfg.eval_domain = 'B';
    return cfg;
}

Dataset small_dataset(int n_a = 8, int n_b = 4) {
    PhantomConfig pc;
    pc.size = 16;
    pc.classes = 3;
    return synth_dataset(pc, {'A', 'B'}, {n_a, n_b}, 0.5, 5);
}

}  // namespace

TEST_CASE("batches keep the half labeled / half unlabeled composition") {
    const Dataset ds = small_dataset(10, 2);
    TrainConfig cfg = small_config();
    cfg.batch_size = 4;
    for (long step = 0; step < 25; ++step) {
        const auto batch = assemble_batch(ds, cfg, step);
        REQUIRE(batch.size() == 4);
        int labeled = 0;
        for (const Sample* s : batch) {
            REQUIRE(s->domain == 'A');
            labeled += s->labeled;
        }
        REQUIRE(labeled == 2);
    }
    // deterministic in (seed, step)
    const auto a = assemble_batch(ds, cfg, 3);
    const auto b = assemble_batch(ds, cfg, 3);
    REQUIRE(a == b);
}

TEST_CASE("training steps reject an empty batch") {
    TrainState state;
    state.model = SegModel::build(3, 4, 3, 1);
    state.adam.init(state.model.parameters());
    REQUIRE_THROWS_AS(train_step(state, {}, small_config()), ContractError);
}

TEST_CASE("supervised-only weights reproduce the plain supervised trajectory") {
    const Dataset ds = small_dataset();
    TrainConfig cfg = small_config();
    cfg.weights.mu = 1.0;
    cfg.domain_aug = false;

    TrainState state;
    state.model = SegModel::build(cfg.k, cfg.channels, 3, cfg.seed);
    state.adam.init(state.model.parameters());

    // labeled-only batch
    std::vector<const Sample*> batch;
    for (const Sample& s : ds.samples)
        if (s.domain == 'A' && s.labeled && batch.size() < 2) batch.push_back(&s);
    const StepRecord rec = train_step(state, batch, cfg);
    REQUIRE(rec.une == 0.0);
    REQUIRE(rec.wsm == 0.0);
    REQUIRE(rec.total == rec.sup);

    // hand-rolled supervised step with the same streams and optimizer
    SegModel ref = SegModel::build(cfg.k, cfg.channels, 3, cfg.seed);
    AdamState ropt;
    ropt.init(ref.parameters());
    Tensor acc = Tensor::scalar(0.0);
    for (const Sample* s : batch) {
        Rng srng = Rng(cfg.seed).fork(stream::kTrainAug).fork(0).fork(s->id);
        const WeakAugDraw draw =
            WeakAugDraw::sample(cfg.weak, s->img.h, s->img.w, srng.fork(stream::kWeakAug));
        const Tensor view = to_tensor(draw.apply_image(s->img));
        const Mask m = draw.apply_mask(s->mask);
        acc = add(acc, supervised_loss(ref.forward_all({view, view, view}), m));
    }
    backward(mul_scalar(acc, 1.0 / 2.0));
    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.weight_decay = cfg.weight_decay;
    std::vector<Tensor> params = ref.parameters();
    adam_step(params, ropt, ac);

    const auto got = state.model.parameters();
    const auto want = ref.parameters();
    for (std::size_t i = 0; i < got.size(); ++i) {
        const auto g = got[i].values(), w = want[i].values();
        for (std::size_t j = 0; j < g.size(); ++j) REQUIRE(g[j] == w[j]);
    }
}

TEST_CASE("cloned decoders and identical views give zero mutual loss at step 0") {
    const Dataset ds = small_dataset();
    TrainConfig cfg = small_config();
    cfg.domain_aug = false;  // identical views on every branch

    TrainState state;
    state.model = SegModel::build(cfg.k, cfg.channels, 3, cfg.seed);
    for (int b = 2; b <= 3; ++b) {
        auto src = state.model.decoder_parameters(1);
        auto dst = state.model.decoder_parameters(b);
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto s = src[i].values();
            auto d = dst[i].values_mut();
            std::copy(s.begin(), s.end(), d.begin());
        }
    }
    state.adam.init(state.model.parameters());
    const auto batch = assemble_batch(ds, cfg, 0);
    const StepRecord rec = train_step(state, batch, cfg);
    REQUIRE(rec.wsm == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(rec.une == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("two identical runs produce byte-identical logs") {
    const Dataset ds = small_dataset();
    TrainConfig cfg = small_config();
    const auto d1 = temp_dir("run1");
    const auto d2 = temp_dir("run2");
    train(cfg, ds, d1.string());
    train(cfg, ds, d2.string());
    REQUIRE(slurp(d1 / "losses.csv") == slurp(d2 / "losses.csv"));
    REQUIRE(slurp(d1 / "metrics.csv") == slurp(d2 / "metrics.csv"));
    REQUIRE(!slurp(d1 / "losses.csv").empty());
}

TEST_CASE("checkpoints restore parameters and optimizer state bit-exactly") {
    const Dataset ds = small_dataset();
    TrainConfig cfg = small_config();
    cfg.steps = 3;
    const auto dir = temp_dir("ckpt");
    train(cfg, ds, dir.string());
    const Checkpoint ck = load_checkpoint((dir / "checkpoint-final").string());
    REQUIRE(ck.step == 3);
    REQUIRE(ck.seed == cfg.seed);

    const auto dir2 = temp_dir("ckpt2");
    save_checkpoint((dir2 / "again").string(), ck.model, ck.adam, ck.step, ck.seed);
    const Checkpoint ck2 = load_checkpoint((dir2 / "again").string());
    const auto a = ck.model.parameters(), b = ck2.model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto va = a[i].values(), vb = b[i].values();
        for (std::size_t j = 0; j < va.size(); ++j) REQUIRE(va[j] == vb[j]);
    }
    for (std::size_t i = 0; i < ck.adam.m.size(); ++i) {
        REQUIRE(ck.adam.m[i] == ck2.adam.m[i]);
        REQUIRE(ck.adam.v[i] == ck2.adam.v[i]);
    }
}

TEST_CASE("resumed training matches the uninterrupted run bit-exactly") {
    const Dataset ds = small_dataset();
    TrainConfig cfg = small_config();
    cfg.steps = 14;
    const auto full = temp_dir("full");
    train(cfg, ds, full.string());

    TrainConfig half = cfg;
    half.steps = 7;
    const auto part = temp_dir("part");
    train(half, ds, part.string());

    const auto resumed = temp_dir("resumed");
    train(cfg, ds, resumed.string(), (part / "checkpoint-final").string());

    // the resumed log holds steps 8..14; they must match the full run's rows
    std::istringstream full_csv(slurp(full / "losses.csv"));
    std::istringstream res_csv(slurp(resumed / "losses.csv"));
    std::string line;
    std::vector<std::string> full_rows, res_rows;
    while (std::getline(full_csv, line)) full_rows.push_back(line);
    while (std::getline(res_csv, line)) res_rows.push_back(line);
    REQUIRE(res_rows.size() == 8);  // header + 7 rows
    for (std::size_t i = 0; i < 7; ++i) REQUIRE(res_rows[1 + i] == full_rows[8 + i]);

    const Checkpoint a = load_checkpoint((full / "checkpoint-final").string());
    const Checkpoint b = load_checkpoint((resumed / "checkpoint-final").string());
    const auto pa = a.model.parameters(), pb = b.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto va = pa[i].values(), vb = pb[i].values();
        for (std::size_t j = 0; j < va.size(); ++j) REQUIRE(va[j] == vb[j]);
    }
}

TEST_CASE("corrupted manifests raise load errors instead of crashing") {
    const Dataset ds = small_dataset();
    TrainConfig cfg = small_config();
    cfg.steps = 1;
    const auto dir = temp_dir("corrupt");
    train(cfg, ds, dir.string());
    const fs::path ck = dir / "checkpoint-final";

    {
        std::ofstream os(ck / "manifest.txt", std::ios::trunc);
        os << "ssldg-checkpoint v999\n";
    }
    REQUIRE_THROWS_AS(load_checkpoint(ck.string()), LoadError);

    {
        std::ofstream os(ck / "manifest.txt", std::ios::trunc);
        os << kCheckpointVersion << "\nstep 1\nseed 11\nk 3\nchannels 4\nclasses 3\nadam_t 1\n"
           << "tensor enc1.w 4 4 1 3 3 @99999999\n";
    }
    REQUIRE_THROWS_AS(load_checkpoint(ck.string()), LoadError);
    REQUIRE_THROWS_AS(load_checkpoint((dir / "missing").string()), LoadError);
}

TEST_CASE("evaluation scores stub models as expected") {
    // dataset whose masks are constant class 1
    Dataset ds;
    ds.classes = 3;
    for (int i = 0; i < 3; ++i) {
        Sample s;
        s.id = static_cast<std::uint64_t>(i);
        s.domain = 'B';
        s.img = Image(16, 16, 0.5);
        s.mask = Mask(16, 16, 1);
        ds.samples.push_back(std::move(s));
    }

    SegModel stub = SegModel::build(3, 4, 3, 1);
    for (Tensor& p : stub.parameters())
        std::fill(p.values_mut().begin(), p.values_mut().end(), 0.0);
    auto bias = stub.decoders[0].head.b.values_mut();
    bias[1] = 5.0;  // constant class-1 prediction
    const EvalResult perfect = evaluate(stub, ds, 'B', 1);
    REQUIRE(perfect.per_class[0] == 1.0);
    REQUIRE(perfect.per_class[1] == 1.0);  // empty-vs-empty convention
    REQUIRE(perfect.average == 1.0);

    bias[1] = 0.0;  // ties resolve to class 0: constant background
    // make the truth contain both foreground classes
    for (auto& s : ds.samples)
        for (int y = 8; y < 16; ++y)
            for (int x = 0; x < 16; ++x) s.mask.at(y, x) = 2;
    const EvalResult blank = evaluate(stub, ds, 'B', 1);
    REQUIRE(blank.per_class[0] == 0.0);
    REQUIRE(blank.per_class[1] == 0.0);
    REQUIRE(blank.average == 0.0);

    const EvalResult again = evaluate(stub, ds, 'B', 1);
    REQUIRE(again.per_class == blank.per_class);
    REQUIRE_THROWS_AS(evaluate(stub, ds, 'Q', 1), ContractError);
}

TEST_CASE("config files populate the training configuration") {
    const Config c = Config::parse_string(
        "steps = 9\nlr = 0.001  # comment\nmu = 0.75\nsba = off\ntrain_domain = B\n");
    const TrainConfig cfg = TrainConfig::from_config(c);
    REQUIRE(cfg.steps == 9);
    REQUIRE(cfg.lr == 0.001);
    REQUIRE(cfg.weights.mu == 0.75);
    REQUIRE(!cfg.sba);
    REQUIRE(cfg.train_domain == 'B');
    REQUIRE(cfg.weights.T == 0.1);  // untouched default

    REQUIRE_THROWS_AS(Config::parse_string("novalue\n"), ParseError);
    REQUIRE_THROWS_AS(Config::parse_string("x = y\n").get_double("x", 0.0), ParseError);
}
