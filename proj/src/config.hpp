#ifndef TDCAL_CONFIG_HPP
#define TDCAL_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"

namespace tdcal {

// Flat `key = value` configuration with `#` comments. Later assignments and
// command-line overrides win. The hash covers the effective entries, so a
// run is reproducible from its output metadata.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    void apply_override(const std::string& keyval); // "key=value"

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;
    std::vector<std::string> get_str_list(const std::string& key,
                                          const std::vector<std::string>& fallback) const;

    std::uint64_t require_seed() const;

    // FNV-1a over the sorted effective entries, hex encoded
    std::string hash() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

} // namespace tdcal

#endif
