#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/image.hpp"
#include "ssldg/pgm.hpp"
#include "ssldg/rng.hpp"

namespace ssldg {

// ---------------------------------------------------------------------------
// Synthetic two-domain phantom dataset
// ---------------------------------------------------------------------------
// Each sample is a body disc containing 1..3 elliptical "organs" per
// foreground class. Geometry depends only on (seed, sample_id), so domains A
// and B share masks exactly; the intensity palette, per-sample jitter and
// noise depend on the domain, which simulates a modality shift.

struct PhantomConfig {
    int size = 64;
    int classes = 4;  // background + 3 foreground classes
    char domain = 'A';
    int organs_min = 1;
    int organs_max = 3;
    double noise_sigma = 0.02;

    // Class intensities, background (body) first. Within a domain the values
    // are pairwise separated by at least 0.1 so the task stays learnable; the
    // relative ordering differs across domains.
    std::vector<double> palette() const {
        if (domain == 'A') return {0.30, 0.50, 0.70, 0.90, 0.15};
        return {0.80, 0.60, 0.20, 0.40, 0.95};
    }
};

namespace detail {

struct Ellipse {
    double cy, cx, ry, rx, cos_t, sin_t;

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = (cos_t * dx + sin_t * dy) / rx;
        const double v = (-sin_t * dx + cos_t * dy) / ry;
        return u * u + v * v <= 1.0;
    }
};

inline Ellipse random_ellipse(Rng& rng, double cy, double cx, double rlo, double rhi) {
    constexpr double kPi = 3.14159265358979323846;
    const double theta = rng.uniform(0.0, kPi);
    return Ellipse{cy, cx, rng.uniform(rlo, rhi), rng.uniform(rlo, rhi), std::cos(theta),
                   std::sin(theta)};
}

}  // namespace detail

inline std::pair<Image, Mask> gen_phantom(const PhantomConfig& cfg, std::uint64_t sample_id,
                                          std::uint64_t seed) {
    const int s = cfg.size;
    if (cfg.classes < 2 || static_cast<std::size_t>(cfg.classes) > cfg.palette().size())
        throw ContractError("gen_phantom: unsupported class count");
    Rng geom = Rng(seed).fork(stream::kPhantomGeometry).fork(sample_id);
    Rng inten = Rng(seed).fork(stream::kPhantomIntensity).fork(sample_id).fork(
        static_cast<std::uint64_t>(cfg.domain));

    const detail::Ellipse body = detail::random_ellipse(
        geom, s * geom.uniform(0.46, 0.54), s * geom.uniform(0.46, 0.54), s * 0.32, s * 0.42);

    Mask mask(s, s, 0);
    std::vector<bool> in_body(static_cast<std::size_t>(s) * s, false);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            in_body[static_cast<std::size_t>(y) * s + x] = body.contains(y, x);

    // Class identity is carried by geometry (size, shape, home region), the
    // way real anatomy distinguishes organs; intensity is the cue that
    // shifts across domains. Without a geometric signature the focal
    // augmentation would erase the class labels entirely.
    constexpr double kPi = 3.14159265358979323846;
    for (int c = 1; c < cfg.classes; ++c) {
        Rng crng = geom.fork(static_cast<std::uint64_t>(c));
        int count = cfg.organs_min + crng.below(cfg.organs_max - cfg.organs_min + 1);
        if (c == 1 || c == 3) count = 1;  // one large organ, one elongated organ
        for (int o = 0; o < count; ++o) {
            // home region: a class-specific angular sector of the body
            const double sector = 2.0 * kPi * (c - 1) / (cfg.classes - 1);
            const double ang = sector + crng.uniform(-0.5, 0.5);
            const double rad = crng.uniform(0.15, 0.5);
            double oy = body.cy + rad * body.ry * std::sin(ang);
            double ox = body.cx + rad * body.rx * std::cos(ang);
            for (int attempt = 0; attempt < 32 && !body.contains(oy, ox); ++attempt) {
                oy = crng.uniform(body.cy - 0.6 * body.ry, body.cy + 0.6 * body.ry);
                ox = crng.uniform(body.cx - 0.6 * body.rx, body.cx + 0.6 * body.rx);
            }
            detail::Ellipse organ{};
            if (c == 1) {  // one large roundish organ
                organ = detail::random_ellipse(crng, oy, ox, s * 0.14, s * 0.20);
            } else if (c == 3) {  // one thin elongated organ
                const double theta = crng.uniform(0.0, kPi);
                organ = detail::Ellipse{oy,
                                        ox,
                                        s * crng.uniform(0.035, 0.055),
                                        s * crng.uniform(0.16, 0.22),
                                        std::cos(theta),
                                        std::sin(theta)};
            } else {  // small round nodules
                const double r = crng.uniform(s * 0.045, s * 0.075);
                organ = detail::Ellipse{oy, ox, r, r * crng.uniform(0.9, 1.1), 1.0, 0.0};
            }
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    if (in_body[static_cast<std::size_t>(y) * s + x] && organ.contains(y, x))
                        mask.at(y, x) = c;
        }
    }

    // Intensities: palette value + per-sample class jitter + pixel noise,
    // kept strictly positive inside the body; air stays exactly 0 so the
    // body region remains detectable downstream.
    const std::vector<double> pal = cfg.palette();
    std::vector<double> level(static_cast<std::size_t>(cfg.classes));
    for (int c = 0; c < cfg.classes; ++c)
        level[static_cast<std::size_t>(c)] = pal[static_cast<std::size_t>(c)] + inten.normal() * 0.02;
    Image img(s, s, 0.0);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * s + x;
            if (!in_body[i]) continue;
            double v = level[static_cast<std::size_t>(mask.at(y, x))] + inten.normal() * cfg.noise_sigma;
            img.pix[i] = std::min(0.98, std::max(0.02, v));
        }
    return {std::move(img), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Dataset, splits, directory layout
// ---------------------------------------------------------------------------

struct Sample {
    std::uint64_t id = 0;
    char domain = 'A';
    bool labeled = true;
    Image img;
    Mask mask;
};

struct Dataset {
    int classes = 4;
    std::vector<Sample> samples;

    std::vector<std::size_t> indices(char domain) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].domain == domain) out.push_back(i);
        return out;
    }
};

// Marks the first round(fraction*n) samples of a seeded permutation of the
// domain as labeled, the rest unlabeled. Deterministic in (seed, fraction).
inline void apply_labeled_split(Dataset& ds, char domain, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw ContractError("apply_labeled_split: fraction must lie in [0,1]");
    auto idx = ds.indices(domain);
    Rng rng = Rng(seed).fork(stream::kSplit).fork(static_cast<std::uint64_t>(domain));
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.below(static_cast<int>(i)))]);
    const std::size_t n_labeled =
        static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) ds.samples[idx[i]].labeled = i < n_labeled;
}

inline Dataset synth_dataset(const PhantomConfig& base, const std::vector<char>& domains,
                             const std::vector<int>& counts, double labeled_fraction,
                             std::uint64_t seed) {
    if (domains.size() != counts.size())
        throw ContractError("synth_dataset: domains/counts length mismatch");
    Dataset ds;
    ds.classes = base.classes;
    for (std::size_t d = 0; d < domains.size(); ++d) {
        PhantomConfig cfg = base;
        cfg.domain = domains[d];
        for (int i = 0; i < counts[d]; ++i) {
            Sample s;
            s.id = static_cast<std::uint64_t>(i);
            s.domain = domains[d];
            auto [img, mask] = gen_phantom(cfg, s.id, seed);
            s.img = std::move(img);
            s.mask = std::move(mask);
            ds.samples.push_back(std::move(s));
        }
        apply_labeled_split(ds, domains[d], labeled_fraction, seed);
    }
    return ds;
}

// Layout: images/<domain>/<id>.pgm, masks/<domain>/<id>.pgm, split.txt with
// one "id domain labeled|unlabeled" line per sample.
inline void save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    std::ofstream split(fs::path(dir) / "split.txt");
    if (!split) throw ParseError("cannot write split file in " + dir);
    for (const Sample& s : ds.samples) {
        const std::string dom(1, s.domain);
        fs::create_directories(fs::path(dir) / "images" / dom);
        fs::create_directories(fs::path(dir) / "masks" / dom);
        const std::string name = std::to_string(s.id) + ".pgm";
        write_pgm((fs::path(dir) / "images" / dom / name).string(), s.img);
        write_pgm((fs::path(dir) / "masks" / dom / name).string(), s.mask, ds.classes);
        split << s.id << " " << dom << " " << (s.labeled ? "labeled" : "unlabeled") << "\n";
    }
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream split(fs::path(dir) / "split.txt");
    if (!split) throw LoadError("dataset: missing split.txt in " + dir);
    Dataset ds;
    ds.classes = 0;
    std::string line;
    int lineno = 0;
    while (std::getline(split, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        Sample s;
        std::string dom, flag;
        if (!(ss >> s.id >> dom >> flag) || dom.size() != 1 ||
            (flag != "labeled" && flag != "unlabeled"))
            throw ParseError("split.txt: malformed line " + std::to_string(lineno));
        s.domain = dom[0];
        s.labeled = flag == "labeled";
        const std::string name = std::to_string(s.id) + ".pgm";
        s.img = read_pgm_image((fs::path(dir) / "images" / dom / name).string());
        auto [mask, classes] = read_pgm_mask((fs::path(dir) / "masks" / dom / name).string());
        s.mask = std::move(mask);
        if (ds.classes == 0)
            ds.classes = classes;
        else if (ds.classes != classes)
            throw LoadError("dataset: inconsistent class count across masks");
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw LoadError("dataset: empty split.txt in " + dir);
    return ds;
}

// ---------------------------------------------------------------------------
// Dice score
// ---------------------------------------------------------------------------

// 2|A∩B| / (|A|+|B|); two empty sets count as perfect agreement.
inline double dice_score(const Mask& pred, const Mask& truth, int class_id) {
    if (pred.h != truth.h || pred.w != truth.w)
        throw DimensionError("dice_score: mask shapes differ");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool pa = pred.lab[i] == class_id;
        const bool pb = truth.lab[i] == class_id;
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

}  // namespace ssldg
