// Command-line front end: dataset synthesis, augmentation previews, training,
// evaluation and the finite-difference self-check.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssldg/ssldg.hpp"

namespace fs = std::filesystem;

namespace {

// SSLDG_SEED overrides --seed for every subcommand when set.
std::uint64_t effective_seed(std::uint64_t cli_seed) {
    if (const char* env = std::getenv("SSLDG_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ssldg::ContractError("SSLDG_SEED is not an integer");
        }
    }
    return cli_seed;
}

std::vector<char> parse_domains(const std::string& spec) {
    std::vector<char> out;
    for (char c : spec) {
        if (c == ',' || c == ' ') continue;
        if (c != 'A' && c != 'B') throw ssldg::ContractError("domains must be A and/or B");
        out.push_back(c);
    }
    if (out.empty()) throw ssldg::ContractError("no domains given");
    return out;
}

std::vector<int> parse_counts(const std::string& spec, std::size_t n_domains) {
    std::vector<int> out;
    std::string cur;
    for (char c : spec + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (out.size() == 1) out.assign(n_domains, out[0]);
    if (out.size() != n_domains)
        throw ssldg::ContractError("--n must give one count, or one per domain");
    return out;
}

int cmd_synth(const std::string& out_dir, const std::string& n_spec, const std::string& domains_spec,
              std::uint64_t seed, double labeled_fraction, int size, int classes, bool force) {
    const auto domains = parse_domains(domains_spec);
    const auto counts = parse_counts(n_spec, domains.size());
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
        std::cerr << "refusing to write into non-empty directory " << out_dir
                  << " (use --force)\n";
        return 1;
    }
    fs::create_directories(out_dir);
    ssldg::PhantomConfig cfg;
    cfg.size = size;
    cfg.classes = classes;
    const ssldg::Dataset ds = ssldg::synth_dataset(cfg, domains, counts, labeled_fraction, seed);
    ssldg::save_dataset(out_dir, ds);
    for (std::size_t d = 0; d < domains.size(); ++d) {
        int labeled = 0;
        for (const auto& s : ds.samples)
            if (s.domain == domains[d] && s.labeled) ++labeled;
        std::cout << "domain " << domains[d] << ": " << counts[d] << " samples (" << labeled
                  << " labeled)\n";
    }
    return 0;
}

int cmd_augment(const std::string& in_path, const std::string& mask_path, const std::string& mode,
                const std::string& ckpt, const std::string& config_path, std::uint64_t seed,
                const std::string& out_dir) {
    ssldg::Config cfg;
    if (!config_path.empty()) cfg = ssldg::Config::parse_file(config_path);
    ssldg::GlobalAugParams ga;
    ga.sigma1 = cfg.get_double("ga_sigma1", ga.sigma1);
    ga.sigma2 = cfg.get_double("ga_sigma2", ga.sigma2);
    ga.invert_prob = cfg.get_double("ga_invert_prob", ga.invert_prob);
    ga.bezier = cfg.get_bool("ga_bezier", ga.bezier);
    ssldg::FocalAugParams fa;
    fa.sigma1 = cfg.get_double("fa_sigma1", fa.sigma1);
    fa.sigma2 = cfg.get_double("fa_sigma2", fa.sigma2);
    fa.bezier = cfg.get_bool("fa_bezier", fa.bezier);

    const ssldg::Image img = ssldg::read_pgm_image(in_path);
    ssldg::Mask mask;
    int mask_classes = 0;
    if (!mask_path.empty()) {
        auto [m, c] = ssldg::read_pgm_mask(mask_path);
        mask = std::move(m);
        mask_classes = c;
    }
    fs::create_directories(out_dir);
    ssldg::Rng rng(seed);

    if (mode == "ga") {
        const ssldg::Image out = ssldg::global_augment(img, ga, rng.fork(ssldg::stream::kGlobalAug));
        ssldg::write_pgm((fs::path(out_dir) / "ga.pgm").string(), out);
        std::cout << "wrote " << (fs::path(out_dir) / "ga.pgm").string() << "\n";
        return 0;
    }
    if (mode == "fa") {
        if (mask_path.empty()) throw CLI::ValidationError("--mask is required for --mode fa");
        const ssldg::Image out = ssldg::focal_augment(img, mask, fa,
                                                      rng.fork(ssldg::stream::kFocalAug),
                                                      mask_classes);
        ssldg::write_pgm((fs::path(out_dir) / "fa.pgm").string(), out);
        std::cout << "wrote " << (fs::path(out_dir) / "fa.pgm").string() << "\n";
        return 0;
    }
    if (mode == "sba") {
        if (ckpt.empty()) throw CLI::ValidationError("--ckpt is required for --mode sba");
        const ssldg::Checkpoint ck = ssldg::load_checkpoint(ckpt);
        ssldg::DomainDiffusionOptions opt;
        opt.ga = ga;
        opt.fa = fa;
        opt.saliency.grid_g = cfg.get_int("grid_g", opt.saliency.grid_g);
        opt.weak = ssldg::WeakAugConfig::disabled();  // keep the panels comparable
        const ssldg::DomainDiffusionResult r = ssldg::domain_diffusion(
            img, mask_path.empty() ? nullptr : &mask, ck.model, opt, rng);
        ssldg::write_pgm((fs::path(out_dir) / "ga.pgm").string(), r.ga);
        ssldg::write_pgm((fs::path(out_dir) / "fa.pgm").string(), r.fa);
        ssldg::write_pgm((fs::path(out_dir) / "s.pgm").string(), r.saliency);
        ssldg::write_pgm((fs::path(out_dir) / "sba.pgm").string(), r.sba);
        std::cout << "wrote ga/fa/s/sba panels under " << out_dir << "\n";
        return 0;
    }
    throw CLI::ValidationError("--mode must be ga, fa or sba");
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume) {
    ssldg::Config file_cfg;
    if (!config_path.empty()) file_cfg = ssldg::Config::parse_file(config_path);
    ssldg::TrainConfig cfg = ssldg::TrainConfig::from_config(file_cfg);
    cfg.seed = effective_seed(cfg.seed);
    const ssldg::Dataset ds = ssldg::load_dataset(data_dir);
    const ssldg::TrainOutputs out = ssldg::train(cfg, ds, out_dir, resume);
    std::cout << "trained " << out.steps << " steps; target-domain dice:";
    for (std::size_t c = 0; c < out.final_eval.per_class.size(); ++c)
        std::printf(" class%zu=%.4f", c + 1, out.final_eval.per_class[c]);
    std::printf(" avg=%.4f\n", out.final_eval.average);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& domain,
             int branch, const std::string& out_path) {
    const ssldg::Checkpoint ck = ssldg::load_checkpoint(ckpt);
    const ssldg::Dataset ds = ssldg::load_dataset(data_dir);
    const ssldg::EvalResult r = ssldg::evaluate(ck.model, ds, domain.at(0), branch);
    for (std::size_t c = 0; c < r.per_class.size(); ++c)
        std::printf("dice class%zu: %.4f\n", c + 1, r.per_class[c]);
    std::printf("dice average: %.4f\n", r.average);
    if (!out_path.empty()) {
        std::ofstream os(out_path);
        os << "domain";
        for (std::size_t c = 0; c < r.per_class.size(); ++c) os << ",dice_class" << c + 1;
        os << ",dice_avg\n" << domain;
        char buf[40];
        for (double v : r.per_class) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << "," << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g", r.average);
        os << "," << buf << "\n";
        if (!os) throw ssldg::ParseError("cannot write " + out_path);
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
    if (inject_fault) ssldg::detail::fault_injection_scale() = 1.05;
    const auto results = ssldg::run_gradcheck(seed);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-20s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "PASS" : "FAIL");
        ok = ok && r.pass;
    }
    std::printf("gradcheck: %s (%zu checks)\n", ok ? "PASS" : "FAIL", results.size());
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised domain-generalized segmentation pipeline"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic two-domain dataset");
    std::string s_out, s_n = "100", s_domains = "A,B";
    std::uint64_t s_seed = 1;
    double s_fraction = 0.2;
    int s_size = 64, s_classes = 4;
    bool s_force = false;
    synth->add_option("--out", s_out, "output directory")->required();
    synth->add_option("--n", s_n, "samples per domain (one count, or one per domain)");
    synth->add_option("--domains", s_domains, "domains to emit (A, B or A,B)");
    synth->add_option("--seed", s_seed, "rng seed");
    synth->add_option("--labeled-fraction", s_fraction, "fraction of annotated samples");
    synth->add_option("--size", s_size, "image side length");
    synth->add_option("--classes", s_classes, "class count including background");
    synth->add_flag("--force", s_force, "write into a non-empty directory");

    auto* aug = app.add_subcommand("augment", "write augmented views of one image");
    std::string a_in, a_mask, a_mode, a_ckpt, a_config, a_out;
    std::uint64_t a_seed = 1;
    aug->add_option("--in", a_in, "input image (pgm)")->required();
    aug->add_option("--mask", a_mask, "label mask (pgm)");
    aug->add_option("--mode", a_mode, "ga | fa | sba")->required();
    aug->add_option("--ckpt", a_ckpt, "checkpoint directory (sba mode)");
    aug->add_option("--config", a_config, "augmentation parameter file");
    aug->add_option("--seed", a_seed, "rng seed");
    aug->add_option("--out", a_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "run the training loop");
    std::string t_config, t_data, t_out, t_resume;
    train->add_option("--config", t_config, "training config file");
    train->add_option("--data", t_data, "dataset directory")->required();
    train->add_option("--out", t_out, "output directory")->required();
    train->add_option("--resume", t_resume, "checkpoint directory to resume from");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one domain");
    std::string e_ckpt, e_data, e_domain = "B", e_out;
    int e_branch = 1;
    ev->add_option("--ckpt", e_ckpt, "checkpoint directory")->required();
    ev->add_option("--data", e_data, "dataset directory")->required();
    ev->add_option("--domain", e_domain, "domain tag");
    ev->add_option("--branch", e_branch, "decoder branch (0 = ensemble mean)");
    ev->add_option("--out", e_out, "write metrics csv here");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference self-check");
    std::uint64_t g_seed = 1;
    bool g_fault = false;
    gc->add_option("--seed", g_seed, "rng seed");
    gc->add_flag("--inject-fault", g_fault, "corrupt one backward rule (must then fail)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(s_out, s_n, s_domains, effective_seed(s_seed), s_fraction, s_size,
                             s_classes, s_force);
        if (aug->parsed())
            return cmd_augment(a_in, a_mask, a_mode, a_ckpt, a_config, effective_seed(a_seed),
                               a_out);
        if (train->parsed()) return cmd_train(t_config, t_data, t_out, t_resume);
        if (ev->parsed()) return cmd_eval(e_ckpt, e_data, e_domain, e_branch, e_out);
        if (gc->parsed()) return cmd_gradcheck(effective_seed(g_seed), g_fault);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
