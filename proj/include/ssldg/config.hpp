#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ssldg/errors.hpp"

namespace ssldg {

// Flat "key = value" configuration file; '#' starts a comment, blank lines
// are ignored. Values are stored as strings and converted on access.
class Config {
  public:
    static Config parse_string(const std::string& text) {
        Config c;
        std::istringstream ss(text);
        std::string line;
        int lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ParseError("config: missing '=' on line " + std::to_string(lineno));
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ParseError("config: empty key on line " + std::to_string(lineno));
            c.kv_[key] = value;
        }
        return c;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ParseError("config: cannot open " + path);
        std::ostringstream buf;
        buf << is.rdbuf();
        return parse_string(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }

    double get_double(const std::string& key, double dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ParseError("config: key '" + key + "' is not a number: " + it->second);
        }
    }

    long get_long(const std::string& key, long dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ParseError("config: key '" + key + "' is not an integer: " + it->second);
        }
    }

    int get_int(const std::string& key, int dflt) const {
        return static_cast<int>(get_long(key, dflt));
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        try {
            std::size_t pos = 0;
            const unsigned long long v = std::stoull(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ParseError("config: key '" + key + "' is not an integer: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        const std::string& v = it->second;
        if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "off" || v == "0" || v == "no") return false;
        throw ParseError("config: key '" + key + "' is not a boolean: " + v);
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace ssldg
