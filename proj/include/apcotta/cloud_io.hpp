#pragma once

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "apcotta/common.hpp"
#include "apcotta/pointcloud.hpp"

namespace apcotta {

// XYZL text format. Optional header:
//   # xyzl C=<class_count> F=<feature_count> labels=<0|1>
// then one point per line: x y z f1 ... fF [label], whitespace separated.
// Without a header the first data row fixes the column count; 4 columns read
// as x y z f1 (unlabeled), 5 or more as x y z f1..fF label.

namespace detail {

inline bool parse_double(const std::string& tok, double& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> toks;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) toks.emplace_back(line.substr(i, j - i));
        i = j;
    }
    return toks;
}

} // namespace detail

inline PointCloud load_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    PointCloud cloud;
    bool have_header = false;
    int header_c = -1;
    int header_f = -1;
    int header_labels = -1;
    int columns = -1;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string word;
            hs >> word;
            if (word == "xyzl" && !have_header) {
                have_header = true;
                while (hs >> word) {
                    const auto eq = word.find('=');
                    if (eq == std::string::npos) continue;
                    const std::string key = word.substr(0, eq);
                    const std::string val = word.substr(eq + 1);
                    try {
                        if (key == "C") header_c = std::stoi(val);
                        else if (key == "F") header_f = std::stoi(val);
                        else if (key == "labels") header_labels = std::stoi(val);
                    } catch (const std::exception&) {
                        throw ParseError(path + ":" + std::to_string(line_no) + ": bad header field '" + word + "'");
                    }
                }
                if (header_f >= 0 && header_f < 1)
                    throw ParseError(path + ":" + std::to_string(line_no) + ": header F must be >= 1");
                if (header_f >= 1 && header_labels >= 0)
                    columns = 3 + header_f + (header_labels ? 1 : 0);
            }
            continue;
        }

        const auto toks = detail::split_ws(line);
        if (columns < 0) {
            if (toks.size() < 4)
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": expected at least 4 columns (x y z f1), got " + std::to_string(toks.size()));
            columns = static_cast<int>(toks.size());
            if (header_labels < 0 && header_f >= 1) header_labels = columns - 3 - header_f;
            if (header_labels < 0) header_labels = columns >= 5 ? 1 : 0;
            if (header_f < 0) header_f = columns - 3 - header_labels;
            if (header_f < 1 || header_labels < 0 || header_labels > 1)
                throw ParseError(path + ":" + std::to_string(line_no) + ": column count " +
                                 std::to_string(columns) + " inconsistent with header");
        }
        if (static_cast<int>(toks.size()) != columns)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                             " columns, got " + std::to_string(toks.size()));

        const int f_count = header_f;
        Vec3 p;
        for (int a = 0; a < 3; ++a) {
            double v;
            if (!detail::parse_double(toks[static_cast<std::size_t>(a)], v) || !std::isfinite(v))
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad coordinate '" +
                                 toks[static_cast<std::size_t>(a)] + "'");
            p[a] = v;
        }
        cloud.positions.push_back(p);
        for (int f = 0; f < f_count; ++f) {
            double v;
            if (!detail::parse_double(toks[static_cast<std::size_t>(3 + f)], v) || !std::isfinite(v))
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad feature '" +
                                 toks[static_cast<std::size_t>(3 + f)] + "'");
            cloud.features.push_back(v);
        }
        if (header_labels == 1) {
            const std::string& tok = toks[static_cast<std::size_t>(3 + f_count)];
            int v = -1;
            const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0 || v > 255)
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad label '" + tok + "'");
            cloud.labels.push_back(static_cast<std::uint8_t>(v));
        }
    }
    if (cloud.positions.empty()) throw ValidationError("no points in " + path);

    cloud.feature_count = header_f;
    if (header_c > 0) {
        cloud.class_count = header_c;
    } else {
        int max_label = -1;
        for (std::uint8_t l : cloud.labels)
            if (l != kIgnoreLabel && l > max_label) max_label = l;
        cloud.class_count = std::max(2, max_label + 1);
    }
    validate_cloud(cloud);
    return cloud;
}

inline void save_cloud(const PointCloud& cloud, const std::string& path) {
    validate_cloud(cloud);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);

    out << "# xyzl C=" << cloud.class_count << " F=" << cloud.feature_count
        << " labels=" << (cloud.has_labels() ? 1 : 0) << "\n";

    char buf[64];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::string row;
        for (int a = 0; a < 3; ++a) {
            std::snprintf(buf, sizeof(buf), "%.6f", cloud.positions[i][a]);
            row += buf;
            row += ' ';
        }
        for (int f = 0; f < cloud.feature_count; ++f) {
            std::snprintf(buf, sizeof(buf), "%.6f", cloud.feature(i, f));
            row += buf;
            if (f + 1 < cloud.feature_count) row += ' ';
        }
        if (cloud.has_labels()) {
            row += ' ';
            row += std::to_string(static_cast<int>(cloud.labels[i]));
        }
        row += '\n';
        out << row;
    }
    if (!out) throw IoError("write failed for " + path);
}

} // namespace apcotta
