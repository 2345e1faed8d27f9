#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace inslam {

// Config-file or command-line problems; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value configuration. '#' starts a comment; whitespace around keys
// and values is trimmed. Later assignments (and CLI overrides) win.
class Config {
  public:
    static Config from_file(const std::filesystem::path& path);
    static Config from_overrides(const std::vector<std::string>& key_values);
    void merge(const Config& overrides);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated list of doubles.
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }
    std::string serialize() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace inslam
