#include "inslam/config.hpp"

#include <fstream>
#include <sstream>

namespace inslam {

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not key=value: " + line);
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::from_overrides(const std::vector<std::string>& key_values) {
    Config cfg;
    for (const std::string& kv : key_values) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override is not key=value: " + kv);
        }
        cfg.values_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
    }
    return cfg;
}

void Config::merge(const Config& overrides) {
    for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("key '" + key + "' is not a number: " + it->second);
    }
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("key '" + key + "' is not an integer: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key '" + key + "' is not a bool: " + it->second);
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(trim(item)));
        } catch (...) {
            throw ConfigError("key '" + key + "' has a bad number: " + item);
        }
    }
    return out;
}

std::string Config::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
}

}  // namespace inslam
