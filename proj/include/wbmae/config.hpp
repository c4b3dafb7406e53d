#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "wbmae/net.hpp"

namespace wbmae {

// Flat key=value files; '#' starts a comment, blank lines are skipped,
// whitespace around keys and values is trimmed. Duplicate keys are an error.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string body = trim(line);
        if (body.empty()) continue;
        std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(body.substr(0, eq));
        std::string val = trim(body.substr(eq + 1));
        if (key.empty() || val.empty())
            throw FormatError("config line " + std::to_string(lineno) + ": empty key or value");
        if (!out.emplace(key, val).second)
            throw FormatError("config line " + std::to_string(lineno) + ": duplicate key " + key);
    }
    return out;
}

// Recognized keys: L d K N patch_h patch_w channels eta lambda ln_eps
// head_classes. Unknown keys are rejected so typos cannot silently fall back
// to defaults.
inline ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg = toy_config();
    auto as_int = [](const std::string& key, const std::string& val) {
        std::size_t used = 0;
        int parsed = 0;
        try {
            parsed = std::stoi(val, &used);
        } catch (const std::exception&) {
            throw FormatError("config key " + key + ": not an integer: " + val);
        }
        if (used != val.size()) throw FormatError("config key " + key + ": not an integer: " + val);
        return parsed;
    };
    auto as_double = [](const std::string& key, const std::string& val) {
        std::size_t used = 0;
        double parsed = 0;
        try {
            parsed = std::stod(val, &used);
        } catch (const std::exception&) {
            throw FormatError("config key " + key + ": not a number: " + val);
        }
        if (used != val.size()) throw FormatError("config key " + key + ": not a number: " + val);
        return parsed;
    };
    for (const auto& [key, val] : kv) {
        if (key == "L") cfg.L = as_int(key, val);
        else if (key == "d") cfg.d = as_int(key, val);
        else if (key == "K") cfg.K = as_int(key, val);
        else if (key == "N") cfg.N = as_int(key, val);
        else if (key == "patch_h") cfg.patch_h = as_int(key, val);
        else if (key == "patch_w") cfg.patch_w = as_int(key, val);
        else if (key == "channels") cfg.channels = as_int(key, val);
        else if (key == "eta") cfg.eta = as_double(key, val);
        else if (key == "lambda") cfg.lambda = as_double(key, val);
        else if (key == "ln_eps") cfg.ln_eps = as_double(key, val);
        else if (key == "head_classes") cfg.head_classes = as_int(key, val);
        else throw FormatError("config: unknown key " + key);
    }
    validate_model_config(cfg);
    return cfg;
}

inline ModelConfig load_model_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("config: cannot open " + path);
    return model_config_from_kv(parse_key_values(is));
}

} // namespace wbmae
