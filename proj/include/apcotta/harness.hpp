#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "apcotta/adapt.hpp"
#include "apcotta/config.hpp"
#include "apcotta/corrupt.hpp"
#include "apcotta/metrics.hpp"
#include "apcotta/net.hpp"
#include "apcotta/sampling.hpp"

#include "json.hpp"

namespace apcotta {

struct StreamRun {
    const Network* source = nullptr;
    std::vector<const PointCloud*> domains;
    std::vector<std::string> names;
    Method method = Method::Apcotta;
    AdaptConfig adapt;
    std::size_t batch_size = 4;
    std::size_t n_points = 2048;
    double radius = 10.0;
    std::size_t batches_per_domain = 50;
    std::uint64_t seed = 1;
    std::ostream* diagnostics = nullptr; // one JSON line per step when set
};

struct StreamReport {
    std::string method;
    int class_count = 0;
    std::vector<std::string> domain_names;
    std::vector<MetricsReport> domain_metrics;
    double mean_oa = 0.0;   // mean of per-domain OA
    double mean_miou = 0.0; // mean of per-domain mIoU
    std::uint64_t prediction_digest = 0; // order-sensitive hash of every prediction
};

namespace detail {

inline void digest_predictions(std::uint64_t& digest, const std::vector<std::uint8_t>& preds) {
    for (std::uint8_t p : preds) {
        digest ^= p;
        digest *= 0x100000001b3ULL;
    }
}

inline nlohmann::json step_diagnostics_json(std::uint64_t step, const std::string& domain,
                                            const StepResult& result) {
    nlohmann::json j;
    j["t"] = step;
    j["domain"] = domain;
    j["loss"] = result.loss;
    j["reliable_fraction"] = result.total_points == 0
                                 ? 0.0
                                 : static_cast<double>(result.reliable_count) /
                                       static_cast<double>(result.total_points);
    j["updated"] = result.updated;
    nlohmann::json selected = nlohmann::json::array();
    for (int id = 0; id < kLayerCount; ++id)
        if (id < static_cast<int>(result.selected.size()) && result.selected[static_cast<std::size_t>(id)])
            selected.push_back(id);
    j["selected_layers"] = selected;
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : result.scores)
        scores.push_back({{"layer", s.layer_id}, {"score", s.score}});
    j["scores"] = scores;
    return j;
}

} // namespace detail

// Sequentially adapts over the manifest-ordered domains, scoring every batch
// against ground truth that the adaptation path itself never sees (labels
// are gathered from the parent cloud only for the confusion update).
inline StreamReport run_stream(const StreamRun& run) {
    if (!run.source) throw StateError("run_stream: missing source network");
    if (run.domains.empty()) throw ValidationError("run_stream: no domains");
    if (run.domains.size() != run.names.size())
        throw ValidationError("run_stream: domain/name count mismatch");
    if (run.batches_per_domain == 0) throw ValidationError("run_stream: need at least one batch per domain");
    validate_config(run.adapt);

    const int c = run.source->spec.class_count;
    for (const PointCloud* cloud : run.domains)
        if (cloud->class_count != c)
            throw StateError("run_stream: domain class count does not match the checkpoint");

    StreamReport report;
    report.method = to_string(run.method);
    report.class_count = c;
    report.domain_names = run.names;
    report.prediction_digest = 0xcbf29ce484222325ULL;

    AdaptState state = AdaptState::from_source(*run.source, run.seed);
    std::uint64_t global_step = 0;

    for (std::size_t d = 0; d < run.domains.size(); ++d) {
        const PointCloud& cloud = *run.domains[d];
        if (run.method == Method::TentOnline && d > 0) state.reset_to_source();

        RngStream batch_rng(split_seed(run.seed, 1000 + d));
        ConfusionMatrix cm(c);
        for (std::size_t step = 0; step < run.batches_per_domain; ++step) {
            const SubCloudBatch batch = make_batch(cloud, run.batch_size, run.n_points, run.radius, batch_rng);
            const StepResult result = run.method == Method::Apcotta
                                          ? apcotta_step(state, batch, run.adapt)
                                          : baseline_step(state, batch, run.method, run.adapt);
            if (cloud.has_labels()) {
                const auto truths = gather_labels(cloud, batch);
                update(cm, truths, result.predictions);
            }
            detail::digest_predictions(report.prediction_digest, result.predictions);
            if (run.diagnostics)
                *run.diagnostics << detail::step_diagnostics_json(global_step, run.names[d], result).dump()
                                 << "\n";
            ++global_step;
        }
        report.domain_metrics.push_back(miou(cm));
    }

    double oa_sum = 0.0, miou_sum = 0.0;
    std::size_t oa_n = 0, miou_n = 0;
    for (const auto& m : report.domain_metrics) {
        if (m.oa) {
            oa_sum += *m.oa;
            ++oa_n;
        }
        if (m.miou) {
            miou_sum += *m.miou;
            ++miou_n;
        }
    }
    report.mean_oa = oa_n == 0 ? 0.0 : oa_sum / static_cast<double>(oa_n);
    report.mean_miou = miou_n == 0 ? 0.0 : miou_sum / static_cast<double>(miou_n);
    return report;
}

// ---- report files ------------------------------------------------------------

namespace detail {

inline std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace detail

inline void write_stream_csv(const StreamReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "domain,oa";
    for (int i = 0; i < report.class_count; ++i) out << ",iou_" << i;
    out << ",miou,undefined_classes\n";
    for (std::size_t d = 0; d < report.domain_metrics.size(); ++d) {
        const auto& m = report.domain_metrics[d];
        out << report.domain_names[d] << "," << (m.oa ? detail::fmt6(*m.oa) : "nan");
        for (const auto& iou : m.iou) out << "," << (iou ? detail::fmt6(*iou) : "nan");
        out << "," << (m.miou ? detail::fmt6(*m.miou) : "nan") << "," << m.undefined_classes << "\n";
    }
    out << "mean," << detail::fmt6(report.mean_oa);
    for (int i = 0; i < report.class_count; ++i) out << ",";
    out << "," << detail::fmt6(report.mean_miou) << ",\n";
}

inline void write_stream_json(const StreamReport& report, const std::string& path) {
    nlohmann::json j;
    j["method"] = report.method;
    j["class_count"] = report.class_count;
    j["domains"] = nlohmann::json::array();
    for (std::size_t d = 0; d < report.domain_metrics.size(); ++d) {
        nlohmann::json dj = report_to_json(report.domain_metrics[d]);
        dj["domain"] = report.domain_names[d];
        j["domains"].push_back(dj);
    }
    j["mean"] = {{"oa", report.mean_oa}, {"miou", report.mean_miou}};
    j["mean_convention"] = "mean over per-domain values";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

// ---- ablation and sweeps -------------------------------------------------------

struct AblationRow {
    std::string label;
    bool dstl, ebcl, rpi;
    double mean_oa = 0.0;
    double mean_miou = 0.0;
};

// The four module combinations, in table order: none, DSTL, DSTL+EBCL,
// DSTL+EBCL+RPI, all with shared seeds for a paired comparison.
inline std::vector<AblationRow> run_ablation(StreamRun base) {
    const bool combos[4][3] = {{false, false, false}, {true, false, false}, {true, true, false},
                               {true, true, true}};
    const char* labels[4] = {"none", "dstl", "dstl+ebcl", "dstl+ebcl+rpi"};
    std::vector<AblationRow> rows;
    base.method = Method::Apcotta;
    for (int r = 0; r < 4; ++r) {
        StreamRun run = base;
        run.adapt.dstl = combos[r][0];
        run.adapt.ebcl = combos[r][1];
        run.adapt.rpi = combos[r][2];
        const StreamReport report = run_stream(run);
        rows.push_back({labels[r], combos[r][0], combos[r][1], combos[r][2], report.mean_oa, report.mean_miou});
    }
    return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "row,dstl,ebcl,rpi,mean_oa,mean_miou\n";
    for (const auto& r : rows)
        out << r.label << "," << (r.dstl ? 1 : 0) << "," << (r.ebcl ? 1 : 0) << "," << (r.rpi ? 1 : 0) << ","
            << detail::fmt6(r.mean_oa) << "," << detail::fmt6(r.mean_miou) << "\n";
}

enum class SweepParam { S0, Tau, Alpha, P };

inline SweepParam sweep_param_from_string(const std::string& name) {
    if (name == "S0" || name == "s0") return SweepParam::S0;
    if (name == "tau") return SweepParam::Tau;
    if (name == "alpha") return SweepParam::Alpha;
    if (name == "p") return SweepParam::P;
    throw ValidationError("unknown sweep parameter '" + name + "' (expected S0|tau|alpha|p)");
}

inline std::string to_string(SweepParam p) {
    switch (p) {
        case SweepParam::S0: return "S0";
        case SweepParam::Tau: return "tau";
        case SweepParam::Alpha: return "alpha";
        case SweepParam::P: return "p";
    }
    throw ValidationError("unknown sweep parameter");
}

inline std::vector<double> default_sweep_grid(SweepParam p) {
    switch (p) {
        case SweepParam::S0: return {0.0, 0.0005, 0.001, 0.0015, 0.002};
        case SweepParam::Tau: return {0.7, 0.75, 0.8, 0.85, 0.9};
        case SweepParam::Alpha: return {0.9, 0.99, 0.999, 0.9999, 1.0};
        case SweepParam::P: return {0.001, 0.005, 0.01, 0.05, 0.1};
    }
    throw ValidationError("unknown sweep parameter");
}

struct SweepRow {
    double value = 0.0;
    double mean_miou = 0.0;
    double mean_oa = 0.0;
};

inline std::vector<SweepRow> run_sweep(StreamRun base, SweepParam param, std::vector<double> grid) {
    if (grid.empty()) grid = default_sweep_grid(param);
    std::vector<SweepRow> rows;
    base.method = Method::Apcotta;
    for (double value : grid) {
        StreamRun run = base;
        switch (param) {
            case SweepParam::S0: run.adapt.s0 = value; break;
            case SweepParam::Tau: run.adapt.tau = value; break;
            case SweepParam::Alpha: run.adapt.alpha = value; break;
            case SweepParam::P: run.adapt.p = value; break;
        }
        const StreamReport report = run_stream(run);
        rows.push_back({value, report.mean_miou, report.mean_oa});
    }
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, SweepParam param, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << to_string(param) << ",mean_miou,mean_oa\n";
    for (const auto& r : rows)
        out << detail::fmt6(r.value) << "," << detail::fmt6(r.mean_miou) << "," << detail::fmt6(r.mean_oa) << "\n";
}

// ---- file-level orchestration ---------------------------------------------------

struct LoadedBenchmark {
    std::vector<PointCloud> clouds;
    std::vector<std::string> names;
};

inline LoadedBenchmark load_benchmark_domains(const RunConfig& cfg) {
    LoadedBenchmark out;
    if (!cfg.clean_cloud.empty()) {
        out.clouds.push_back(load_cloud(cfg.clean_cloud));
        out.names.push_back("clean");
        return out;
    }
    const BenchmarkManifest manifest = load_manifest(cfg.manifest);
    for (const auto& d : manifest.domains) {
        out.clouds.push_back(load_cloud(d.path));
        out.names.push_back(to_string(d.kind));
    }
    return out;
}

inline StreamRun stream_run_from_config(const RunConfig& cfg, const Network& source,
                                        const LoadedBenchmark& bench) {
    StreamRun run;
    run.source = &source;
    for (const auto& cloud : bench.clouds) run.domains.push_back(&cloud);
    run.names = bench.names;
    run.method = method_from_string(cfg.method);
    run.adapt = cfg.adapt;
    run.batch_size = cfg.batch_size;
    run.n_points = cfg.n_points;
    run.radius = cfg.radius;
    run.batches_per_domain = cfg.batches_per_domain;
    run.seed = cfg.seed;
    return run;
}

// Loads checkpoint and benchmark, runs the stream, writes metrics.csv,
// summary.json and diagnostics.jsonl under the report directory.
inline StreamReport run_stream_files(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ValidationError("run config: checkpoint path is required");
    if (cfg.manifest.empty() && cfg.clean_cloud.empty())
        throw ValidationError("run config: either manifest or clean_cloud is required");
    const Network source = load_checkpoint(cfg.checkpoint);
    const LoadedBenchmark bench = load_benchmark_domains(cfg);

    StreamRun run = stream_run_from_config(cfg, source, bench);
    std::ofstream diag;
    if (!cfg.report_dir.empty()) {
        std::filesystem::create_directories(cfg.report_dir);
        diag.open((std::filesystem::path(cfg.report_dir) / "diagnostics.jsonl").string(), std::ios::binary);
        if (!diag) throw IoError("cannot write diagnostics in " + cfg.report_dir);
        run.diagnostics = &diag;
    }
    const StreamReport report = run_stream(run);
    if (!cfg.report_dir.empty()) {
        write_stream_csv(report, (std::filesystem::path(cfg.report_dir) / "metrics.csv").string());
        write_stream_json(report, (std::filesystem::path(cfg.report_dir) / "summary.json").string());
    }
    return report;
}

} // namespace apcotta
