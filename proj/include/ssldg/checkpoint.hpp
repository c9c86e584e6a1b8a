#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssldg/adam.hpp"
#include "ssldg/errors.hpp"
#include "ssldg/model.hpp"
#include "ssldg/serialize.hpp"

namespace ssldg {

// Checkpoint layout: a directory holding manifest.txt plus tensors.bin.
// The manifest lists metadata and, per tensor, its name, shape and byte
// offset into tensors.bin; each record there is a standalone "SDG1" tensor.

inline constexpr const char* kCheckpointVersion = "ssldg-checkpoint v1";

struct Checkpoint {
    SegModel model;
    AdamState adam;
    long step = 0;
    std::uint64_t seed = 0;
};

inline void save_checkpoint(const std::string& dir, const SegModel& model, const AdamState& adam,
                            long step, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::vector<std::pair<std::string, Tensor>> tensors = model.named_parameters();
    const std::size_t n_params = tensors.size();
    if (adam.m.size() != n_params || adam.v.size() != n_params)
        throw ContractError("save_checkpoint: optimizer state does not match model");
    std::vector<std::pair<std::string, Tensor>> opt_tensors;
    for (std::size_t i = 0; i < n_params; ++i) {
        const auto& [name, p] = tensors[i];
        opt_tensors.emplace_back("adam.m." + name, Tensor::from(p.shape(), adam.m[i]));
        opt_tensors.emplace_back("adam.v." + name, Tensor::from(p.shape(), adam.v[i]));
    }
    tensors.insert(tensors.end(), opt_tensors.begin(), opt_tensors.end());

    std::ofstream bin(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!bin) throw ParseError("checkpoint: cannot write tensors.bin in " + dir);
    std::ostringstream manifest;
    manifest << kCheckpointVersion << "\n";
    manifest << "step " << step << "\n";
    manifest << "seed " << seed << "\n";
    manifest << "k " << model.k << "\n";
    manifest << "channels " << model.channels << "\n";
    manifest << "classes " << model.classes << "\n";
    manifest << "adam_t " << adam.t << "\n";
    for (const auto& [name, t] : tensors) {
        manifest << "tensor " << name << " " << t.shape().size();
        for (std::size_t d : t.shape()) manifest << " " << d;
        manifest << " @" << bin.tellp() << "\n";
        write_tensor(bin, t);
    }
    if (!bin) throw ParseError("checkpoint: write failed in " + dir);

    std::ofstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw ParseError("checkpoint: cannot write manifest.txt in " + dir);
    mf << manifest.str();
    if (!mf) throw ParseError("checkpoint: write failed in " + dir);
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw LoadError("checkpoint: missing manifest.txt in " + dir);
    std::string line;
    if (!std::getline(mf, line) || line != kCheckpointVersion)
        throw LoadError("checkpoint: version mismatch in manifest (" + line + ")");

    long step = -1, adam_t = -1;
    std::uint64_t seed = 0;
    int k = 0, channels = 0, classes = 0;
    struct Entry {
        Shape shape;
        std::size_t offset;
    };
    std::map<std::string, Entry> entries;
    int lineno = 1;
    while (std::getline(mf, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        auto malformed = [&]() {
            return LoadError("checkpoint: malformed manifest line " + std::to_string(lineno));
        };
        if (key == "step") {
            if (!(ss >> step)) throw malformed();
        } else if (key == "seed") {
            if (!(ss >> seed)) throw malformed();
        } else if (key == "k") {
            if (!(ss >> k)) throw malformed();
        } else if (key == "channels") {
            if (!(ss >> channels)) throw malformed();
        } else if (key == "classes") {
            if (!(ss >> classes)) throw malformed();
        } else if (key == "adam_t") {
            if (!(ss >> adam_t)) throw malformed();
        } else if (key == "tensor") {
            std::string name;
            std::size_t rank = 0;
            if (!(ss >> name >> rank) || rank > 8) throw malformed();
            Entry e;
            e.shape.resize(rank);
            for (std::size_t i = 0; i < rank; ++i)
                if (!(ss >> e.shape[i])) throw malformed();
            std::string at;
            if (!(ss >> at) || at.size() < 2 || at[0] != '@') throw malformed();
            try {
                e.offset = std::stoull(at.substr(1));
            } catch (const std::exception&) {
                throw malformed();
            }
            entries[name] = std::move(e);
        } else {
            throw LoadError("checkpoint: unknown manifest key '" + key + "'");
        }
    }
    if (step < 0 || adam_t < 0 || k < 2 || channels < 1 || classes < 2)
        throw LoadError("checkpoint: manifest is missing required metadata");

    std::ifstream bin(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!bin) throw LoadError("checkpoint: missing tensors.bin in " + dir);
    auto fetch = [&](const std::string& name, const Shape& expect) {
        auto it = entries.find(name);
        if (it == entries.end()) throw LoadError("checkpoint: tensor '" + name + "' not in manifest");
        if (it->second.shape != expect)
            throw LoadError("checkpoint: tensor '" + name + "' has unexpected shape");
        bin.clear();
        bin.seekg(static_cast<std::streamoff>(it->second.offset));
        if (!bin) throw LoadError("checkpoint: bad offset for tensor '" + name + "'");
        Tensor t;
        try {
            t = read_tensor(bin, it->second.offset);
        } catch (const ParseError& e) {
            throw LoadError(std::string("checkpoint: ") + e.what());
        }
        if (t.shape() != expect)
            throw LoadError("checkpoint: stored shape of '" + name + "' disagrees with manifest");
        return t;
    };

    Checkpoint ck;
    ck.step = step;
    ck.seed = seed;
    ck.model = SegModel::build(k, channels, classes, seed);
    auto named = ck.model.named_parameters();
    ck.adam.init(ck.model.parameters());
    ck.adam.t = adam_t;
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, param] = named[i];
        const Tensor stored = fetch(name, param.shape());
        auto dst = param.values_mut();
        auto src = stored.values();
        std::copy(src.begin(), src.end(), dst.begin());
        const Tensor m = fetch("adam.m." + name, param.shape());
        const Tensor v = fetch("adam.v." + name, param.shape());
        ck.adam.m[i].assign(m.values().begin(), m.values().end());
        ck.adam.v[i].assign(v.values().begin(), v.values().end());
    }
    return ck;
}

}  // namespace ssldg
