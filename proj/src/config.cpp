#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace tdcal {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw config_error("config line " + std::to_string(lineno) + ": empty key");
        cfg.entries_[key] = value;
    }
    return cfg;
}

void Config::apply_override(const std::string& keyval) {
    std::size_t eq = keyval.find('=');
    if (eq == std::string::npos)
        throw config_error("override '" + keyval + "' must be key=value");
    std::string key = trim(keyval.substr(0, eq));
    std::string value = trim(keyval.substr(eq + 1));
    if (key.empty()) throw config_error("override '" + keyval + "' has an empty key");
    entries_[key] = value;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw config_error("missing required config key '" + key + "'");
    return it->second;
}

long long Config::get_int(const std::string& key, long long fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t pos = 0;
        long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw config_error("config key '" + key + "': '" + it->second + "' is not an integer");
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw config_error("config key '" + key + "': '" + it->second + "' is not a number");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw config_error("config key '" + key + "': '" + it->second + "' is not a boolean");
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (...) {
            throw config_error("config key '" + key + "': '" + tok + "' is not a number");
        }
    }
    if (out.empty()) throw config_error("config key '" + key + "': empty list");
    return out;
}

std::vector<std::string> Config::get_str_list(const std::string& key,
                                              const std::vector<std::string>& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    if (out.empty()) throw config_error("config key '" + key + "': empty list");
    return out;
}

std::uint64_t Config::require_seed() const {
    if (!has("seed")) throw config_error("config must declare a 'seed'");
    long long v = get_int("seed", 0);
    if (v < 0) throw config_error("seed must be non-negative");
    return static_cast<std::uint64_t>(v);
}

std::string Config::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [k, v] : entries_) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace tdcal
