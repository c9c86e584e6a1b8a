// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one [PASS]/[FAIL] line per criterion. Exit code 0 only if all
// criteria hold.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ssldg/ssldg.hpp"

using namespace ssldg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& label, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", id, label.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

void run_criterion(int id, const std::string& label,
                   const std::function<std::pair<bool, std::string>()>& body) {
    try {
        auto [ok, detail] = body();
        report(id, label, ok, detail);
    } catch (const std::exception& e) {
        report(id, label, false, std::string("exception: ") + e.what());
    }
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("ssldg_acceptance_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// Desk-scale benchmark fixed by the acceptance experiment.
constexpr int kBenchSize = 64;
constexpr int kBenchClasses = 4;
constexpr int kBenchTrain = 200;
constexpr int kBenchTest = 50;
constexpr double kBenchLabeledFraction = 0.2;
constexpr long kBenchSteps = 120;

Dataset benchmark_dataset(std::uint64_t seed) {
    PhantomConfig cfg;
    cfg.size = kBenchSize;
    cfg.classes = kBenchClasses;
    return synth_dataset(cfg, {'A', 'B'}, {kBenchTrain, kBenchTest}, kBenchLabeledFraction, seed);
}

TrainConfig bench_config(std::uint64_t seed) {
    TrainConfig cfg;  // defaults: T=0.1, alpha=gamma=mu=0.5, lr=5e-3, wd=3e-5
    cfg.steps = kBenchSteps;
    cfg.batch_size = 4;
    cfg.eval_every = 0;
    cfg.seed = seed;
    cfg.grid_g = 3;
    return cfg;
}

double run_benchmark(const TrainConfig& cfg, const Dataset& ds, const std::string& tag) {
    const auto out = temp_dir("bench_" + tag);
    const TrainOutputs r = train(cfg, ds, out.string());
    return r.final_eval.average;
}

}  // namespace

int main() {
    // ------------------------------------------------------------------ 1
    run_criterion(1, "paper-scale results are explicitly out of scope", [] {
        // The suite never touches the real cross-modality datasets; the
        // checks below run the synthetic two-domain benchmark instead.
        const bool desk_scale = kBenchSize == 64 && kBenchTrain == 200 && kBenchTest == 50;
        return std::make_pair(desk_scale,
                              std::string("full-scale Dice tables are not reproduced; "
                                          "property checks + 64x64 synthetic benchmark substitute"));
    });

    // ------------------------------------------------------------------ 2
    run_criterion(2, "finite-difference gradient suite (rel err <= 1e-4, < 60 s)", [] {
        const double t0 = now_seconds();
        const auto results = run_gradcheck(20250809);
        const double elapsed = now_seconds() - t0;
        double worst = 0.0;
        std::string worst_name = "-";
        bool ok = !results.empty();
        for (const auto& r : results) {
            if (r.max_rel_err > worst) {
                worst = r.max_rel_err;
                worst_name = r.name;
            }
            ok = ok && r.pass;
        }
        ok = ok && elapsed < 60.0;
        return std::make_pair(ok, "worst " + worst_name + " rel_err=" + fmt(worst) + ", " +
                                      fmt(elapsed) + " s, " + std::to_string(results.size()) +
                                      " checks");
    });

    // ------------------------------------------------------------------ 3
    run_criterion(3, "loss identities", [] {
        Rng rng(33);
        bool ok = true;
        std::string why;

        std::vector<double> logits(2 * 25);
        for (double& v : logits) v = rng.uniform(-2, 2);
        const Tensor p = softmax_channels(Tensor::from(Shape{1, 2, 5, 5}, logits));
        const ConsistencyTerms ct = consistency_losses({p, p, p}, 0.1);
        const double wsm0 = mutual_learning_loss({p, p, p}, 2).item();
        if (std::fabs(ct.une.item()) > 1e-10 || std::fabs(ct.unr.item()) > 1e-10 ||
            std::fabs(wsm0) > 1e-10) {
            ok = false;
            why = "identical branches did not zero the losses";
        }

        for (double x = 0.01; x < 1.0; x += 0.007) {
            if (std::fabs(sharpen(Tensor::scalar(x), 1.0).item() - x) > 1e-12) {
                ok = false;
                why = "sharpen(.,1) is not the identity";
                break;
            }
        }
        if (std::fabs(sharpen(Tensor::scalar(0.8), 0.5).item() - 16.0 / 17.0) > 1e-12) {
            ok = false;
            why = "sharpen(0.8,0.5) != 16/17";
        }

        for (int i = 0; i < 1000 && ok; ++i) {
            std::vector<Tensor> branches;
            for (int m = 0; m < 3; ++m)
                branches.push_back(Tensor::scalar(rng.uniform(1e-4, 1.0 - 1e-4)));
            const Tensor pavg = avg_probability(branches);
            const UncertaintyMaps u = pixel_uncertainty(branches, pavg);
            double total = 0.0;
            for (const Tensor& t : u.per_pixel) total += t.item();
            if (total < -1e-12) {
                ok = false;
                why = "sum of branch uncertainties went negative";
            }
        }
        return std::make_pair(ok, ok ? "sharpen fixed points, zero-divergence and KL-sum hold"
                                     : why);
    });

    // ------------------------------------------------------------------ 4
    run_criterion(4, "augmentation invariants (10k randomized applications)", [] {
        Rng rng(44);
        bool ok = true;
        std::string why;

        GlobalAugParams ga;
        FocalAugParams fa;
        for (int i = 0; i < 5000 && ok; ++i) {
            Rng sub = rng.fork(static_cast<std::uint64_t>(i));
            Image img(12, 12);
            for (double& v : img.pix) v = sub.uniform();
            const Image g = global_augment(img, ga, sub.fork(1));
            Mask mask(12, 12, 0);
            for (int& v : mask.lab) v = sub.below(4);
            const Image f = focal_augment(img, mask, fa, sub.fork(2), 4);
            for (double v : g.pix) ok = ok && v >= 0.0 && v <= 1.0;
            for (double v : f.pix) ok = ok && v >= 0.0 && v <= 1.0;
            if (!ok) why = "augmented pixel escaped [0,1]";
        }

        for (int t = 0; t < 50 && ok; ++t) {
            Rng sub = rng.fork(1000 + static_cast<std::uint64_t>(t));
            const IntensityMap m = build_intensity_map(sub, true);
            for (int i = 0; i < 100; ++i) {
                double a = sub.uniform(), b = sub.uniform();
                if (a > b) std::swap(a, b);
                if (m(a) > m(b) + 1e-12) {
                    ok = false;
                    why = "monotone map broke ordering";
                }
            }
        }

        {
            Image img(16, 16);
            Rng sub = rng.fork(2000);
            for (double& v : img.pix) v = sub.uniform();
            const Image back = grayscale_invert(grayscale_invert(img));
            for (std::size_t i = 0; i < img.size(); ++i)
                if (back.pix[i] != img.pix[i]) {
                    ok = false;
                    why = "inversion is not an involution";
                }
        }

        // per-class stream isolation
        if (ok) {
            Image img(12, 12);
            Rng sub = rng.fork(3000);
            for (double& v : img.pix) v = 0.1 + 0.8 * sub.uniform();
            Mask mask(12, 12, 0);
            for (int y = 0; y < 12; ++y)
                for (int x = 0; x < 12; ++x) mask.at(y, x) = x < 4 ? 1 : (x > 8 ? 2 : 0);
            FocalAugParams params;
            const Image base = focal_augment(img, mask, params, Rng(900), 3);
            std::vector<ClassTransform> per_class(3);
            for (int n = 0; n < 3; ++n) {
                Rng cls = Rng(900).fork(static_cast<std::uint64_t>(n));
                Rng curve = cls.fork(1);
                Rng factors = cls.fork(2);
                per_class[static_cast<std::size_t>(n)].map = build_intensity_map(curve, false);
                per_class[static_cast<std::size_t>(n)].scale =
                    factors.trunc_normal(1.0, params.sigma1);
                per_class[static_cast<std::size_t>(n)].shift =
                    factors.trunc_normal(0.0, params.sigma2);
            }
            Rng other(901);
            per_class[2].map = build_intensity_map(other, false);
            per_class[2].scale = other.trunc_normal(1.0, params.sigma1);
            per_class[2].shift = other.trunc_normal(0.0, params.sigma2);
            const Image tweaked = focal_augment_with(img, mask, params, per_class);
            for (int y = 0; y < 12 && ok; ++y)
                for (int x = 0; x < 12; ++x)
                    if (mask.at(y, x) == 1 && tweaked.at(y, x) != base.at(y, x)) {
                        ok = false;
                        why = "class-2 stream changed class-1 pixels";
                    }
        }

        // identical geometry on image and mask (piecewise-constant probe)
        if (ok) {
            const int n = 32, classes = 3;
            for (int trial = 0; trial < 10 && ok; ++trial) {
                Rng sub = rng.fork(4000 + static_cast<std::uint64_t>(trial));
                Mask mask(n, n, 0);
                for (int y = 10; y < 22; ++y)
                    for (int x = 6; x < 14; ++x) mask.at(y, x) = 1;
                for (int y = 6; y < 14; ++y)
                    for (int x = 18; x < 27; ++x) mask.at(y, x) = 2;
                Image img(n, n);
                for (std::size_t i = 0; i < img.size(); ++i)
                    img.pix[i] = static_cast<double>(mask.lab[i]) / (classes - 1);
                WeakAugConfig cfg = WeakAugConfig::disabled();
                cfg.affine = cfg.elastic = true;
                const WeakAugDraw draw = WeakAugDraw::sample(cfg, n, n, sub.fork(5));
                const Image wimg = draw.apply_image(img);
                const Mask wmask = draw.apply_mask(mask);
                std::vector<bool> boundary(wmask.size(), false);
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x) {
                        bool edge = y < 1 || x < 1 || y > n - 2 || x > n - 2;
                        for (int dy = -1; dy <= 1 && !edge; ++dy)
                            for (int dx = -1; dx <= 1; ++dx)
                                if (wmask.at(std::min(n - 1, std::max(0, y + dy)),
                                             std::min(n - 1, std::max(0, x + dx))) !=
                                    wmask.at(y, x))
                                    edge = true;
                        boundary[static_cast<std::size_t>(y) * n + x] = edge;
                    }
                auto near_boundary = [&](int y, int x) {
                    for (int dy = -2; dy <= 2; ++dy)
                        for (int dx = -2; dx <= 2; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || xx < 0 || yy >= n || xx >= n) continue;
                            if (boundary[static_cast<std::size_t>(yy) * n + xx]) return true;
                        }
                    return false;
                };
                for (int y = 0; y < n && ok; ++y)
                    for (int x = 0; x < n; ++x) {
                        if (near_boundary(y, x)) continue;
                        const double expect = static_cast<double>(wmask.at(y, x)) / (classes - 1);
                        if (std::fabs(wimg.at(y, x) - expect) > 1e-9) {
                            ok = false;
                            why = "image and mask geometry diverged";
                        }
                    }
            }
        }
        return std::make_pair(ok, ok ? "range, ordering, involution, isolation, shared warp"
                                     : why);
    });

    // ------------------------------------------------------------------ 5
    run_criterion(5, "scale-balancing sanity", [] {
        Rng rng(55);
        bool ok = true;
        std::string why;

        for (int g : {3, 18}) {
            Image grad(kBenchSize, kBenchSize);
            for (double& v : grad.pix) v = rng.uniform(-2, 2);
            SaliencyConfig cfg;
            cfg.grid_g = g;
            const Image s = smooth_saliency(grad, cfg);
            for (double v : s.pix)
                if (v < 0.0 || v > 1.0) {
                    ok = false;
                    why = "saliency escaped [0,1]";
                }
        }

        Image ga(8, 8), fa(8, 8);
        for (double& v : ga.pix) v = rng.uniform();
        for (double& v : fa.pix) v = rng.uniform();
        if (blend_sba(ga, fa, Image(8, 8, 1.0)).pix != ga.pix ||
            blend_sba(ga, fa, Image(8, 8, 0.0)).pix != fa.pix) {
            ok = false;
            why = "blend endpoints broken";
        }

        const Image s = smooth_saliency(Image(24, 24, 0.4), SaliencyConfig{5});
        for (double v : s.pix)
            if (v != s.pix[0]) {
                ok = false;
                why = "constant gradient gave non-constant saliency";
            }
        return std::make_pair(ok,
                              ok ? "S in [0,1], exact endpoints, constant case, g in {3,18}" : why);
    });

    // ------------------------------------------------------------------ 6
    double full_dice[3] = {0, 0, 0};
    Dataset bench[3];
    bool bench_ready = false;
    run_criterion(6, "end-to-end desk experiment (gap >= 5 points, <= 15 min)", [&] {
        const double t0 = now_seconds();
        double gaps = 0.0;
        bool direction_stable = true;
        std::string detail;
        for (int i = 0; i < 3; ++i) {
            const std::uint64_t seed = 101 + static_cast<std::uint64_t>(i);
            bench[i] = benchmark_dataset(seed);

            TrainConfig base_cfg = bench_config(seed);
            base_cfg.weights.mu = 1.0;
            base_cfg.domain_aug = false;
            const double base = run_benchmark(base_cfg, bench[i], "base_" + std::to_string(i));

            TrainConfig full_cfg = bench_config(seed);
            full_dice[i] = run_benchmark(full_cfg, bench[i], "full_" + std::to_string(i));

            const double gap = full_dice[i] - base;
            gaps += gap;
            direction_stable = direction_stable && gap > 0.0;
            detail += "seed" + std::to_string(i) + ": full=" + fmt(full_dice[i]) +
                      " base=" + fmt(base) + " gap=" + fmt(gap) + "; ";
        }
        const double mean_gap = gaps / 3.0;
        const double elapsed = now_seconds() - t0;
        bench_ready = true;
        const bool ok = mean_gap >= 0.05 && direction_stable && elapsed <= 900.0;
        return std::make_pair(ok, detail + "mean gap=" + fmt(mean_gap) + ", " + fmt(elapsed) + " s");
    });

    // ------------------------------------------------------------------ 7
    run_criterion(7, "ablation directions (no SBA, no entropy term)", [&] {
        if (!bench_ready) return std::make_pair(false, std::string("benchmark unavailable"));
        double no_sba = 0.0, no_une = 0.0, full = 0.0;
        for (int i = 0; i < 3; ++i) {
            const std::uint64_t seed = 101 + static_cast<std::uint64_t>(i);
            TrainConfig sba_cfg = bench_config(seed);
            sba_cfg.sba = false;  // branch 3 receives the focal view directly
            no_sba += run_benchmark(sba_cfg, bench[i], "nosba_" + std::to_string(i)) / 3.0;

            TrainConfig une_cfg = bench_config(seed);
            une_cfg.weights.alpha = 0.0;  // drops the entropy-style term
            no_une += run_benchmark(une_cfg, bench[i], "noune_" + std::to_string(i)) / 3.0;

            full += full_dice[i] / 3.0;
        }
        const bool ok = no_sba < full && no_une < full;
        return std::make_pair(ok, "full=" + fmt(full) + " noSBA=" + fmt(no_sba) +
                                      " noUNE=" + fmt(no_une));
    });

    // ------------------------------------------------------------------ 8
    run_criterion(8, "bit-exact determinism and checkpoint resume", [] {
        PhantomConfig pc;
        pc.size = 32;
        const Dataset ds = synth_dataset(pc, {'A', 'B'}, {16, 4}, 0.5, 77);
        TrainConfig cfg;
        cfg.steps = 20;
        cfg.batch_size = 2;
        cfg.channels = 4;
        cfg.grid_g = 2;
        cfg.eval_every = 0;
        cfg.seed = 7;

        const auto d1 = temp_dir("det1"), d2 = temp_dir("det2");
        train(cfg, ds, d1.string());
        train(cfg, ds, d2.string());
        if (slurp(d1 / "losses.csv") != slurp(d2 / "losses.csv"))
            return std::make_pair(false, std::string("losses.csv differs between runs"));

        TrainConfig half = cfg;
        half.steps = 10;
        const auto dh = temp_dir("det_half"), dr = temp_dir("det_resume");
        train(half, ds, dh.string());
        train(cfg, ds, dr.string(), (dh / "checkpoint-final").string());

        std::vector<std::string> full_rows, res_rows;
        std::istringstream f(slurp(d1 / "losses.csv")), r(slurp(dr / "losses.csv"));
        std::string line;
        while (std::getline(f, line)) full_rows.push_back(line);
        while (std::getline(r, line)) res_rows.push_back(line);
        if (res_rows.size() != 11) return std::make_pair(false, std::string("resume row count"));
        for (int i = 0; i < 10; ++i)
            if (res_rows[static_cast<std::size_t>(1 + i)] !=
                full_rows[static_cast<std::size_t>(11 + i)])
                return std::make_pair(false, std::string("resumed step ") + std::to_string(11 + i) +
                                                 " diverged");

        const Checkpoint a = load_checkpoint((d1 / "checkpoint-final").string());
        const Checkpoint b = load_checkpoint((dr / "checkpoint-final").string());
        const auto pa = a.model.parameters(), pb = b.model.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            const auto va = pa[i].values(), vb = pb[i].values();
            for (std::size_t j = 0; j < va.size(); ++j)
                if (va[j] != vb[j])
                    return std::make_pair(false, std::string("parameters diverged after resume"));
        }
        return std::make_pair(true, std::string("byte-identical logs; resume matches for 10 steps"));
    });

    std::printf("acceptance: %d of 8 criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
