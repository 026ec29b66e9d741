#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "apcotta/adapt.hpp"
#include "apcotta/common.hpp"

namespace apcotta {

// Full description of one stream run. Mirrors the sectioned key=value
// config file; CLI flags override file values.
struct RunConfig {
    // [paths]
    std::string source_cloud;
    std::string checkpoint;
    std::string manifest;
    std::string report_dir;
    std::string clean_cloud; // optional single clean domain instead of the manifest
    // [adapt]
    AdaptConfig adapt;
    // [batch]
    std::size_t batch_size = 4;
    std::size_t n_points = 2048;
    double radius = 10.0;
    // [stream]
    std::size_t batches_per_domain = 50;
    std::uint64_t seed = 1;
    std::string method = "apcotta";
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ParseError("config: bad boolean for " + key + ": '" + v + "'");
}

} // namespace detail

// Applies one key from one section; shared by the file parser and CLI
// overrides so both spell values identically.
inline void apply_config_value(RunConfig& cfg, const std::string& section, const std::string& key,
                               const std::string& value) {
    const auto bad = [&]() {
        throw ParseError("config: unknown key '" + key + "' in section [" + section + "]");
    };
    try {
        if (section == "paths") {
            if (key == "source_cloud") cfg.source_cloud = value;
            else if (key == "checkpoint") cfg.checkpoint = value;
            else if (key == "manifest") cfg.manifest = value;
            else if (key == "report_dir") cfg.report_dir = value;
            else if (key == "clean_cloud") cfg.clean_cloud = value;
            else bad();
        } else if (section == "adapt") {
            if (key == "s0") cfg.adapt.s0 = std::stod(value);
            else if (key == "tau") cfg.adapt.tau = std::stod(value);
            else if (key == "alpha") cfg.adapt.alpha = std::stod(value);
            else if (key == "p") cfg.adapt.p = std::stod(value);
            else if (key == "temperature") cfg.adapt.temperature = std::stod(value);
            else if (key == "lr") cfg.adapt.lr = std::stod(value);
            else if (key == "momentum") cfg.adapt.momentum = std::stod(value);
            else if (key == "dstl") cfg.adapt.dstl = detail::parse_bool(value, key);
            else if (key == "ebcl") cfg.adapt.ebcl = detail::parse_bool(value, key);
            else if (key == "rpi") cfg.adapt.rpi = detail::parse_bool(value, key);
            else if (key == "stop_gradient_weak") cfg.adapt.stop_gradient_weak = detail::parse_bool(value, key);
            else if (key == "entropy_mode") {
                if (value == "normalized") cfg.adapt.entropy_mode = EntropyMode::Normalized;
                else if (value == "raw") cfg.adapt.entropy_mode = EntropyMode::Raw;
                else throw ParseError("config: entropy_mode must be normalized or raw");
            } else if (key == "predict_view") {
                if (value == "weak") cfg.adapt.predict_view = PredictView::Weak;
                else if (value == "clean") cfg.adapt.predict_view = PredictView::Clean;
                else throw ParseError("config: predict_view must be weak or clean");
            } else bad();
        } else if (section == "batch") {
            if (key == "b") cfg.batch_size = static_cast<std::size_t>(std::stoull(value));
            else if (key == "n_points") cfg.n_points = static_cast<std::size_t>(std::stoull(value));
            else if (key == "radius") cfg.radius = std::stod(value);
            else bad();
        } else if (section == "stream") {
            if (key == "batches_per_domain") cfg.batches_per_domain = static_cast<std::size_t>(std::stoull(value));
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "method") cfg.method = value;
            else bad();
        } else {
            throw ParseError("config: unknown section [" + section + "]");
        }
    } catch (const std::invalid_argument&) {
        throw ParseError("config: bad value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ParseError("config: value out of range for " + key + ": '" + value + "'");
    }
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    RunConfig cfg;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ParseError(path + ":" + std::to_string(line_no) + ": malformed section header");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (section.empty())
            throw ParseError(path + ":" + std::to_string(line_no) + ": key before any [section]");
        apply_config_value(cfg, section, key, value);
    }
    return cfg;
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config " + path);
    out << "[paths]\n";
    out << "source_cloud = " << cfg.source_cloud << "\n";
    out << "checkpoint = " << cfg.checkpoint << "\n";
    out << "manifest = " << cfg.manifest << "\n";
    out << "report_dir = " << cfg.report_dir << "\n";
    if (!cfg.clean_cloud.empty()) out << "clean_cloud = " << cfg.clean_cloud << "\n";
    out << "\n[adapt]\n";
    out << "s0 = " << cfg.adapt.s0 << "\n";
    out << "tau = " << cfg.adapt.tau << "\n";
    out << "alpha = " << cfg.adapt.alpha << "\n";
    out << "p = " << cfg.adapt.p << "\n";
    out << "temperature = " << cfg.adapt.temperature << "\n";
    out << "lr = " << cfg.adapt.lr << "\n";
    out << "momentum = " << cfg.adapt.momentum << "\n";
    out << "dstl = " << (cfg.adapt.dstl ? 1 : 0) << "\n";
    out << "ebcl = " << (cfg.adapt.ebcl ? 1 : 0) << "\n";
    out << "rpi = " << (cfg.adapt.rpi ? 1 : 0) << "\n";
    out << "entropy_mode = " << (cfg.adapt.entropy_mode == EntropyMode::Normalized ? "normalized" : "raw") << "\n";
    out << "stop_gradient_weak = " << (cfg.adapt.stop_gradient_weak ? 1 : 0) << "\n";
    out << "predict_view = " << (cfg.adapt.predict_view == PredictView::Weak ? "weak" : "clean") << "\n";
    out << "\n[batch]\n";
    out << "b = " << cfg.batch_size << "\n";
    out << "n_points = " << cfg.n_points << "\n";
    out << "radius = " << cfg.radius << "\n";
    out << "\n[stream]\n";
    out << "batches_per_domain = " << cfg.batches_per_domain << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "method = " << cfg.method << "\n";
}

} // namespace apcotta
