#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ssldg/adam.hpp"
#include "ssldg/checkpoint.hpp"
#include "ssldg/config.hpp"
#include "ssldg/dataio.hpp"
#include "ssldg/errors.hpp"
#include "ssldg/losses.hpp"
#include "ssldg/model.hpp"
#include "ssldg/saliency.hpp"

namespace ssldg {

struct TrainConfig {
    long steps = 0;  // 0: derived as epochs * ceil(train samples / batch)
    int epochs = 3;
    int batch_size = 4;
    double labeled_fraction = -1.0;  // < 0: keep the flags from split.txt
    double lr = 5e-3;
    double weight_decay = 3e-5;
    LossWeights weights;
    int grid_g = 3;
    std::uint64_t seed = 1;
    long eval_every = 50;
    int k = 3;
    int channels = 8;
    int classes = 0;  // 0: taken from the dataset
    char train_domain = 'A';
    char eval_domain = 'B';

    bool domain_aug = true;  // false: weak augmentation only (supervised baseline)
    bool sba = true;         // false: branch 3 receives the focal view directly
    bool pseudo_mask_unlabeled = true;
    bool unr_squared = false;
    int wsm_reference = 0;  // 0: cycle j over 2..k by step
    int eval_branch = 1;    // 0: average the branch outputs
    bool cosine_lr = false;
    double rampup_frac = 0.0;  // >0: linear unsupervised ramp over this step fraction
    bool sba_cached = false;   // reuse the first saliency map per sample

    GlobalAugParams ga;
    FocalAugParams fa;
    WeakAugConfig weak;

    static TrainConfig from_config(const Config& c) {
        TrainConfig t;
        t.steps = c.get_long("steps", t.steps);
        t.epochs = c.get_int("epochs", t.epochs);
        t.batch_size = c.get_int("batch_size", t.batch_size);
        t.labeled_fraction = c.get_double("labeled_fraction", t.labeled_fraction);
        t.lr = c.get_double("lr", t.lr);
        t.weight_decay = c.get_double("weight_decay", t.weight_decay);
        t.weights.T = c.get_double("T", t.weights.T);
        t.weights.alpha = c.get_double("alpha", t.weights.alpha);
        t.weights.gamma = c.get_double("gamma", t.weights.gamma);
        t.weights.mu = c.get_double("mu", t.weights.mu);
        t.grid_g = c.get_int("grid_g", t.grid_g);
        t.seed = c.get_u64("seed", t.seed);
        t.eval_every = c.get_long("eval_every", t.eval_every);
        t.k = c.get_int("k", t.k);
        t.channels = c.get_int("channels", t.channels);
        t.classes = c.get_int("classes", t.classes);
        t.train_domain = c.get_string("train_domain", std::string(1, t.train_domain))[0];
        t.eval_domain = c.get_string("eval_domain", std::string(1, t.eval_domain))[0];
        t.domain_aug = c.get_bool("domain_aug", t.domain_aug);
        t.sba = c.get_bool("sba", t.sba);
        t.pseudo_mask_unlabeled = c.get_bool("pseudo_mask_unlabeled", t.pseudo_mask_unlabeled);
        t.unr_squared = c.get_bool("unr_squared", t.unr_squared);
        t.wsm_reference = c.get_int("wsm_reference", t.wsm_reference);
        t.eval_branch = c.get_int("eval_branch", t.eval_branch);
        t.cosine_lr = c.get_bool("cosine_lr", t.cosine_lr);
        t.rampup_frac = c.get_double("rampup_frac", t.rampup_frac);
        t.sba_cached = c.get_bool("sba_cached", t.sba_cached);
        t.ga.sigma1 = c.get_double("ga_sigma1", t.ga.sigma1);
        t.ga.sigma2 = c.get_double("ga_sigma2", t.ga.sigma2);
        t.ga.invert_prob = c.get_double("ga_invert_prob", t.ga.invert_prob);
        t.ga.bezier = c.get_bool("ga_bezier", t.ga.bezier);
        t.fa.sigma1 = c.get_double("fa_sigma1", t.fa.sigma1);
        t.fa.sigma2 = c.get_double("fa_sigma2", t.fa.sigma2);
        t.fa.bezier = c.get_bool("fa_bezier", t.fa.bezier);
        t.weak.affine = c.get_bool("weak_affine", t.weak.affine);
        t.weak.elastic = c.get_bool("weak_elastic", t.weak.elastic);
        t.weak.brightness = c.get_bool("weak_brightness", t.weak.brightness);
        t.weak.contrast = c.get_bool("weak_contrast", t.weak.contrast);
        t.weak.gamma = c.get_bool("weak_gamma", t.weak.gamma);
        t.weak.noise = c.get_bool("weak_noise", t.weak.noise);
        t.weak.noise_sigma = c.get_double("weak_noise_sigma", t.weak.noise_sigma);
        return t;
    }

    void validate() const {
        weights.validate();
        if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be positive");
        if (epochs < 1 && steps < 1) throw ContractError("TrainConfig: need epochs or steps");
        if (lr <= 0.0 || weight_decay < 0.0) throw ContractError("TrainConfig: bad optimizer settings");
        if (labeled_fraction > 1.0) throw ContractError("TrainConfig: labeled_fraction must be <= 1");
        if (grid_g < 1) throw ContractError("TrainConfig: grid_g must be >= 1");
    }
};

struct StepRecord {
    long step = 0;
    double sup = 0.0, une = 0.0, unr = 0.0, uec = 0.0, wsm = 0.0, total = 0.0;
};

struct TrainState {
    SegModel model;
    AdamState adam;
    long step = 0;
    std::uint64_t seed = 0;
    std::vector<StepRecord> history;
    std::map<std::uint64_t, Image> saliency_cache;
};

struct EvalResult {
    std::vector<double> per_class;  // foreground classes 1..C-1
    double average = 0.0;
};

// ---------------------------------------------------------------------------
// Batch assembly: half annotated, half unannotated, deterministic in
// (seed, step)
// ---------------------------------------------------------------------------

inline std::vector<const Sample*> assemble_batch(const Dataset& ds, const TrainConfig& cfg,
                                                 long step) {
    std::vector<const Sample*> labeled, unlabeled;
    for (const Sample& s : ds.samples) {
        if (s.domain != cfg.train_domain) continue;
        (s.labeled ? labeled : unlabeled).push_back(&s);
    }
    if (labeled.empty() && unlabeled.empty())
        throw ContractError("assemble_batch: no samples in the training domain");
    Rng rng = Rng(cfg.seed).fork(stream::kBatch).fork(static_cast<std::uint64_t>(step));
    std::vector<const Sample*> batch;
    const int half = cfg.batch_size / 2;
    for (int i = 0; i < cfg.batch_size; ++i) {
        bool want_labeled = i < half;
        if (unlabeled.empty()) want_labeled = true;
        if (labeled.empty()) want_labeled = false;
        const auto& pool = want_labeled ? labeled : unlabeled;
        batch.push_back(pool[static_cast<std::size_t>(rng.below(static_cast<int>(pool.size())))]);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

// Routing: branch 1 sees the weakly augmented original, branch 2 the global
// view, branch 3 the saliency-balanced blend. Labeled samples contribute the
// Dice term plus all consistency terms; unlabeled samples contribute the
// consistency terms only. One backward pass, one Adam update.
inline StepRecord train_step(TrainState& state, const std::vector<const Sample*>& batch,
                             const TrainConfig& cfg) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    cfg.weights.validate();
    if (state.model.k != 3)
        throw ContractError("train_step: view routing expects exactly 3 branches");
    const long step = state.step;
    const bool supervised_only = cfg.weights.mu >= 1.0;

    Tensor sup_acc = Tensor::scalar(0.0);
    Tensor une_acc = Tensor::scalar(0.0);
    Tensor unr_acc = Tensor::scalar(0.0);
    Tensor wsm_acc = Tensor::scalar(0.0);
    int n_labeled = 0;

    for (const Sample* s : batch) {
        Rng srng = Rng(cfg.seed)
                       .fork(stream::kTrainAug)
                       .fork(static_cast<std::uint64_t>(step))
                       .fork(s->id);
        std::vector<Tensor> views(3);
        Mask sup_mask;
        if (cfg.domain_aug) {
            DomainDiffusionOptions opt;
            opt.ga = cfg.ga;
            opt.fa = cfg.fa;
            opt.saliency.grid_g = cfg.grid_g;
            opt.weak = cfg.weak;
            opt.sba = cfg.sba;
            opt.pseudo_mask_unlabeled = cfg.pseudo_mask_unlabeled;
            auto cached = state.saliency_cache.find(s->id);
            if (cfg.sba_cached && cached != state.saliency_cache.end())
                opt.cached_saliency = &cached->second;
            DomainDiffusionResult dd = domain_diffusion(
                s->img, s->labeled ? &s->mask : nullptr, state.model, opt, srng);
            if (cfg.sba_cached && cached == state.saliency_cache.end())
                state.saliency_cache.emplace(s->id, dd.saliency);
            views[0] = to_tensor(dd.weak_original);
            views[1] = to_tensor(dd.ga);
            views[2] = to_tensor(dd.sba);
            sup_mask = std::move(dd.mask);
        } else {
            const WeakAugDraw draw =
                WeakAugDraw::sample(cfg.weak, s->img.h, s->img.w, srng.fork(stream::kWeakAug));
            const Tensor weak_view = to_tensor(draw.apply_image(s->img));
            views[0] = views[1] = views[2] = weak_view;
            sup_mask = draw.apply_mask(s->mask);
        }

        const std::vector<Tensor> probs = state.model.forward_all(views);
        if (s->labeled) {
            sup_acc = add(sup_acc, supervised_loss(probs, sup_mask));
            ++n_labeled;
        }
        if (!supervised_only) {
            const ConsistencyTerms ct =
                consistency_losses(probs, cfg.weights.T, cfg.unr_squared);
            une_acc = add(une_acc, ct.une);
            unr_acc = add(unr_acc, ct.unr);
            const int j = cfg.wsm_reference > 0
                              ? cfg.wsm_reference
                              : 2 + static_cast<int>(step % (state.model.k - 1));
            wsm_acc = add(wsm_acc, mutual_learning_loss(probs, j));
        }
    }

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const Tensor sup = n_labeled > 0 ? mul_scalar(sup_acc, 1.0 / n_labeled) : sup_acc;
    Tensor total;
    StepRecord rec;
    rec.step = step + 1;
    if (supervised_only) {
        total = sup;
    } else {
        const Tensor une = mul_scalar(une_acc, inv_batch);
        const Tensor unr = mul_scalar(unr_acc, inv_batch);
        const Tensor uec = loss_uec(une, unr, cfg.weights.alpha);
        const Tensor wsm = mul_scalar(wsm_acc, inv_batch);
        double ramp = 1.0;
        if (cfg.rampup_frac > 0.0 && cfg.steps > 0) {
            const double horizon = cfg.rampup_frac * static_cast<double>(cfg.steps);
            ramp = std::min(1.0, static_cast<double>(step) / std::max(1.0, horizon));
        }
        const Tensor unsup = add(mul_scalar(uec, cfg.weights.gamma),
                                 mul_scalar(wsm, 1.0 - cfg.weights.gamma));
        total = add(mul_scalar(sup, cfg.weights.mu),
                    mul_scalar(unsup, (1.0 - cfg.weights.mu) * ramp));
        rec.une = une.item();
        rec.unr = unr.item();
        rec.uec = uec.item();
        rec.wsm = wsm.item();
    }
    rec.sup = sup.item();
    rec.total = total.item();

    backward(total);
    AdamConfig ac;
    ac.lr = cfg.lr;
    if (cfg.cosine_lr && cfg.steps > 0) {
        constexpr double kPi = 3.14159265358979323846;
        ac.lr = cfg.lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / cfg.steps));
    }
    ac.weight_decay = cfg.weight_decay;
    std::vector<Tensor> params = state.model.parameters();
    adam_step(params, state.adam, ac);
    for (Tensor& p : params) p.zero_grad();

    state.step += 1;
    state.history.push_back(rec);
    return rec;
}

// ---------------------------------------------------------------------------
// Evaluation: argmax prediction vs ground truth, no augmentation, no RNG
// ---------------------------------------------------------------------------

inline EvalResult evaluate(const SegModel& model, const Dataset& ds, char domain,
                           int branch = 1) {
    if (branch < 0 || branch > model.k) throw ContractError("evaluate: bad branch selector");
    const int classes = model.classes;
    EvalResult r;
    r.per_class.assign(static_cast<std::size_t>(classes - 1), 0.0);
    int count = 0;
    for (const Sample& s : ds.samples) {
        if (s.domain != domain) continue;
        const Tensor x = to_tensor(s.img);
        Tensor probs;
        if (branch == 0) {
            Tensor acc = model.forward_branch(x, 1, /*frozen=*/true);
            for (int m = 2; m <= model.k; ++m)
                acc = add(acc, model.forward_branch(x, m, /*frozen=*/true));
            probs = mul_scalar(acc, 1.0 / model.k);
        } else {
            probs = model.forward_branch(x, branch, /*frozen=*/true);
        }
        const Mask pred = argmax_channels(probs);
        for (int c = 1; c < classes; ++c)
            r.per_class[static_cast<std::size_t>(c - 1)] += dice_score(pred, s.mask, c);
        ++count;
    }
    if (count == 0) throw ContractError("evaluate: no samples in that domain");
    for (double& v : r.per_class) v /= count;
    for (double v : r.per_class) r.average += v;
    r.average /= static_cast<double>(classes - 1);
    return r;
}

// ---------------------------------------------------------------------------
// Full training loop with CSV logs and periodic checkpoints
// ---------------------------------------------------------------------------

namespace detail {
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

inline long resolve_steps(const TrainConfig& cfg, const Dataset& ds) {
    if (cfg.steps > 0) return cfg.steps;
    long n = 0;
    for (const Sample& s : ds.samples)
        if (s.domain == cfg.train_domain) ++n;
    const long per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    return cfg.epochs * std::max<long>(1, per_epoch);
}

struct TrainOutputs {
    EvalResult final_eval;
    long steps = 0;
};

// Runs the loop, appending one row per step to <out>/losses.csv and one row
// per evaluation to <out>/metrics.csv, and writing checkpoint-<step>
// directories every eval_every steps plus checkpoint-final at the end.
// `resume_from` restores a checkpoint and continues from its step counter.
inline TrainOutputs train(TrainConfig cfg, Dataset dataset, const std::string& out_dir,
                          const std::string& resume_from = "") {
    namespace fs = std::filesystem;
    cfg.validate();
    if (cfg.labeled_fraction >= 0.0)
        apply_labeled_split(dataset, cfg.train_domain, cfg.labeled_fraction, cfg.seed);
    if (cfg.classes == 0) cfg.classes = dataset.classes;

    TrainState state;
    if (resume_from.empty()) {
        state.model = SegModel::build(cfg.k, cfg.channels, cfg.classes, cfg.seed);
        state.adam.init(state.model.parameters());
        state.seed = cfg.seed;
    } else {
        Checkpoint ck = load_checkpoint(resume_from);
        state.model = std::move(ck.model);
        state.adam = std::move(ck.adam);
        state.step = ck.step;
        state.seed = ck.seed;
        cfg.seed = ck.seed;
    }
    cfg.steps = resolve_steps(cfg, dataset);

    fs::create_directories(out_dir);
    std::ofstream losses(fs::path(out_dir) / "losses.csv");
    if (!losses) throw ParseError("train: cannot write losses.csv in " + out_dir);
    losses << "step,l_sup,l_une,l_unr,l_uec,l_wsm,l_total\n";
    std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
    if (!metrics) throw ParseError("train: cannot write metrics.csv in " + out_dir);
    metrics << "step,domain";
    for (int c = 1; c < cfg.classes; ++c) metrics << ",dice_class" << c;
    metrics << ",dice_avg\n";

    auto write_metrics = [&](long step, const EvalResult& r) {
        metrics << step << "," << cfg.eval_domain;
        for (double v : r.per_class) metrics << "," << detail::g17(v);
        metrics << "," << detail::g17(r.average) << "\n";
        metrics.flush();
    };

    EvalResult last_eval;
    bool evaluated = false;
    while (state.step < cfg.steps) {
        const auto batch = assemble_batch(dataset, cfg, state.step);
        const StepRecord rec = train_step(state, batch, cfg);
        losses << rec.step << "," << detail::g17(rec.sup) << "," << detail::g17(rec.une) << ","
               << detail::g17(rec.unr) << "," << detail::g17(rec.uec) << ","
               << detail::g17(rec.wsm) << "," << detail::g17(rec.total) << "\n";
        if (cfg.eval_every > 0 && state.step % cfg.eval_every == 0 && state.step < cfg.steps) {
            last_eval = evaluate(state.model, dataset, cfg.eval_domain, cfg.eval_branch);
            evaluated = true;
            write_metrics(state.step, last_eval);
            save_checkpoint(
                (fs::path(out_dir) / ("checkpoint-" + std::to_string(state.step))).string(),
                state.model, state.adam, state.step, state.seed);
        }
    }
    last_eval = evaluate(state.model, dataset, cfg.eval_domain, cfg.eval_branch);
    evaluated = true;
    write_metrics(state.step, last_eval);
    save_checkpoint((fs::path(out_dir) / "checkpoint-final").string(), state.model, state.adam,
                    state.step, state.seed);
    losses.flush();
    if (!losses || !metrics) throw ParseError("train: log write failed in " + out_dir);
    (void)evaluated;
    return {last_eval, cfg.steps};
}

}  // namespace ssldg
