#include "nusg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace nusg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, key + ": not a number: '" + v + "'");
    return out;
}

int64_t to_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, key + ": not an integer: '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key, key + ": expected true or false, got '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir) {
    TrainConfig c;
    auto path = [&](const std::string& v) {
        std::filesystem::path p(v);
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters{
        {"arch", [&](auto&, auto& v) { c.arch = v; }},
        {"data_root", [&](auto&, auto& v) { c.data_root = path(v); }},
        {"input_size", [&](auto& k, auto& v) { c.input_size = static_cast<int>(to_int(k, v)); }},
        {"train_fraction", [&](auto& k, auto& v) { c.train_fraction = to_double(k, v); }},
        {"seed", [&](auto& k, auto& v) {
             const int64_t s = to_int(k, v);
             if (s < 0) throw ConfigError(k, "seed must be non-negative");
             c.seed = static_cast<uint64_t>(s);
         }},
        {"batch_size", [&](auto& k, auto& v) { c.batch_size = static_cast<int>(to_int(k, v)); }},
        {"steps", [&](auto& k, auto& v) { c.steps = to_int(k, v); }},
        {"warmup_steps", [&](auto& k, auto& v) { c.warmup_steps = to_int(k, v); }},
        {"base_lr", [&](auto& k, auto& v) { c.base_lr = to_double(k, v); }},
        {"beta1", [&](auto& k, auto& v) { c.adamw.beta1 = to_double(k, v); }},
        {"beta2", [&](auto& k, auto& v) { c.adamw.beta2 = to_double(k, v); }},
        {"adam_eps", [&](auto& k, auto& v) { c.adamw.eps = to_double(k, v); }},
        {"weight_decay", [&](auto& k, auto& v) { c.adamw.weight_decay = to_double(k, v); }},
        {"loss", [&](auto& k, auto& v) {
             if (v == "bce") c.loss = LossKind::kBce;
             else if (v == "focal") c.loss = LossKind::kFocal;
             else throw ConfigError(k, "loss must be bce or focal, got '" + v + "'");
         }},
        {"focal_gamma", [&](auto& k, auto& v) { c.focal.gamma = to_double(k, v); }},
        {"focal_alpha", [&](auto& k, auto& v) { c.focal.alpha = to_double(k, v); }},
        {"focal_mu_ref", [&](auto& k, auto& v) { c.focal.mu_ref = to_double(k, v); }},
        {"focal_lambda_max", [&](auto& k, auto& v) { c.focal.lambda_max = to_double(k, v); }},
        {"focal_lambda", [&](auto& k, auto& v) { c.focal.lambda = to_double(k, v); }},
        {"aug_hflip", [&](auto& k, auto& v) { c.augment.hflip = to_bool(k, v); }},
        {"aug_p_hflip", [&](auto& k, auto& v) { c.augment.p_hflip = to_double(k, v); }},
        {"aug_vflip", [&](auto& k, auto& v) { c.augment.vflip = to_bool(k, v); }},
        {"aug_p_vflip", [&](auto& k, auto& v) { c.augment.p_vflip = to_double(k, v); }},
        {"aug_zoom", [&](auto& k, auto& v) { c.augment.zoom = to_bool(k, v); }},
        {"aug_p_zoom", [&](auto& k, auto& v) { c.augment.p_zoom = to_double(k, v); }},
        {"aug_zoom_min", [&](auto& k, auto& v) { c.augment.zoom_min = to_double(k, v); }},
        {"aug_zoom_max", [&](auto& k, auto& v) { c.augment.zoom_max = to_double(k, v); }},
        {"aug_rotate", [&](auto& k, auto& v) { c.augment.rotate = to_bool(k, v); }},
        {"aug_p_rotate", [&](auto& k, auto& v) { c.augment.p_rotate = to_double(k, v); }},
        {"aug_max_degrees", [&](auto& k, auto& v) { c.augment.max_degrees = to_double(k, v); }},
        {"checkpoint", [&](auto&, auto& v) { c.checkpoint = path(v); }},
        {"log", [&](auto&, auto& v) { c.log = path(v); }},
        {"checkpoint_every", [&](auto& k, auto& v) { c.checkpoint_every = to_int(k, v); }},
    };

    std::set<std::string> seen;
    std::istringstream in(text);
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError(key, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(key, "line " + std::to_string(lineno) + ": repeated key '" + key + "'");
        if (value.empty()) throw ConfigError(key, "line " + std::to_string(lineno) + ": empty value for '" + key + "'");
        it->second(key, value);
    }
    if (!seen.count("data_root")) throw ConfigError("data_root", "data_root is required");

    // Map validation failures back onto the key that caused them.
    try {
        parse_arch(c.arch);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("arch", std::string("arch: ") + e.what());
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        std::string key;
        for (const auto& [k, unused] : setters) {
            if (msg.find(k) != std::string::npos && k.size() > key.size()) key = k;
        }
        throw ConfigError(key, msg);
    }
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot read config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_train_config(ss.str(), path.parent_path());
}

}  // namespace nusg
