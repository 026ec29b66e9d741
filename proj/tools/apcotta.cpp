// Command-line front end: scene synthesis, pretraining, benchmark
// generation, stream adaptation runs, ablations, sweeps and evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "apcotta/cloud_io.hpp"
#include "apcotta/config.hpp"
#include "apcotta/corrupt.hpp"
#include "apcotta/grid.hpp"
#include "apcotta/harness.hpp"
#include "apcotta/metrics.hpp"
#include "apcotta/pretrain.hpp"
#include "apcotta/synth.hpp"

namespace {

using namespace apcotta;

int exit_code_for(const std::string& category) {
    if (category == "usage") return 2;
    if (category == "io") return 3;
    if (category == "parse") return 4;
    if (category == "validation") return 5;
    if (category == "state") return 6;
    return 10;
}

SyntheticSceneSpec load_scene_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene spec " + path);
    SyntheticSceneSpec spec;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = apcotta::detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = apcotta::detail::trim(t.substr(0, eq));
        const std::string value = apcotta::detail::trim(t.substr(eq + 1));
        try {
            if (key == "extent") spec.extent = std::stod(value);
            else if (key == "ground_density") spec.ground_density = std::stod(value);
            else if (key == "surface_density") spec.surface_density = std::stod(value);
            else if (key == "buildings") spec.buildings = std::stoi(value);
            else if (key == "trees") spec.trees = std::stoi(value);
            else if (key == "cars") spec.cars = std::stoi(value);
            else if (key == "poles") spec.poles = std::stoi(value);
            else throw ParseError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad value '" + value + "'");
        }
    }
    return spec;
}

struct AdaptCliArgs {
    std::string config_path;
    std::string ckpt, manifest, clean, report, method;
    std::uint64_t seed = 0;
    std::size_t b = 0, n_points = 0, batches = 0;
    double radius = -1.0;
    double s0 = -1.0, tau = -1.0, alpha = -1.0, p = -1.0, lr = -1.0, momentum = -1.0;
    bool no_dstl = false, no_ebcl = false, no_rpi = false;
    std::string entropy_mode, predict_view;
};

void add_adapt_options(CLI::App* cmd, AdaptCliArgs& args, bool with_method) {
    cmd->add_option("--config", args.config_path, "run config file (sectioned key=value)");
    cmd->add_option("--ckpt", args.ckpt, "source checkpoint");
    cmd->add_option("--manifest", args.manifest, "benchmark manifest json");
    cmd->add_option("--clean", args.clean, "run a single clean domain from this cloud instead of the manifest");
    cmd->add_option("--report", args.report, "report directory");
    if (with_method)
        cmd->add_option("--method", args.method, "source|bnstats|pseudo|tent|tent-online|apcotta");
    cmd->add_option("--seed", args.seed, "run seed");
    cmd->add_option("--b", args.b, "sub-clouds per batch");
    cmd->add_option("--n-points", args.n_points, "points per sub-cloud");
    cmd->add_option("--radius", args.radius, "sub-cloud radius in meters");
    cmd->add_option("--batches", args.batches, "batches per domain");
    cmd->add_option("--s0", args.s0, "DSTL layer-score threshold");
    cmd->add_option("--tau", args.tau, "EBCL entropy threshold");
    cmd->add_option("--alpha", args.alpha, "RPI interpolation coefficient");
    cmd->add_option("--p", args.p, "RPI Bernoulli probability");
    cmd->add_option("--lr", args.lr, "learning rate");
    cmd->add_option("--momentum", args.momentum, "SGD momentum");
    cmd->add_flag("--no-dstl", args.no_dstl, "disable dynamic layer selection");
    cmd->add_flag("--no-ebcl", args.no_ebcl, "disable the entropy gate");
    cmd->add_flag("--no-rpi", args.no_rpi, "disable randomized parameter interpolation");
    cmd->add_option("--entropy-mode", args.entropy_mode, "normalized|raw");
    cmd->add_option("--predict-view", args.predict_view, "weak|clean");
}

RunConfig resolve_run_config(const CLI::App* cmd, const AdaptCliArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
    const auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
    if (passed("--ckpt")) cfg.checkpoint = args.ckpt;
    if (passed("--manifest")) cfg.manifest = args.manifest;
    if (passed("--clean")) cfg.clean_cloud = args.clean;
    if (passed("--report")) cfg.report_dir = args.report;
    if (cmd->get_option_no_throw("--method") && cmd->count("--method") > 0) cfg.method = args.method;
    if (passed("--seed")) cfg.seed = args.seed;
    if (passed("--b")) cfg.batch_size = args.b;
    if (passed("--n-points")) cfg.n_points = args.n_points;
    if (passed("--radius")) cfg.radius = args.radius;
    if (passed("--batches")) cfg.batches_per_domain = args.batches;
    if (passed("--s0")) cfg.adapt.s0 = args.s0;
    if (passed("--tau")) cfg.adapt.tau = args.tau;
    if (passed("--alpha")) cfg.adapt.alpha = args.alpha;
    if (passed("--p")) cfg.adapt.p = args.p;
    if (passed("--lr")) cfg.adapt.lr = args.lr;
    if (passed("--momentum")) cfg.adapt.momentum = args.momentum;
    if (args.no_dstl) cfg.adapt.dstl = false;
    if (args.no_ebcl) cfg.adapt.ebcl = false;
    if (args.no_rpi) cfg.adapt.rpi = false;
    if (passed("--entropy-mode")) apply_config_value(cfg, "adapt", "entropy_mode", args.entropy_mode);
    if (passed("--predict-view")) apply_config_value(cfg, "adapt", "predict_view", args.predict_view);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual test-time adaptation engine for point-cloud segmentation"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a labeled synthetic scene");
    std::string synth_spec_path, synth_out;
    std::uint64_t synth_seed = 1;
    double synth_cell = 0.0;
    synth_cmd->add_option("--spec", synth_spec_path, "scene spec file (key=value)");
    synth_cmd->add_option("--seed", synth_seed, "scene seed");
    synth_cmd->add_option("--out", synth_out, "output cloud (xyzl)")->required();
    synth_cmd->add_option("--grid", synth_cell, "optional grid subsample cell in meters");

    // pretrain
    auto* pre_cmd = app.add_subcommand("pretrain", "supervised training of the source model");
    std::string pre_cloud, pre_out;
    PretrainConfig pre_cfg;
    int pre_k = 16;
    pre_cmd->add_option("--cloud", pre_cloud, "labeled training cloud (xyzl)")->required();
    pre_cmd->add_option("--epochs", pre_cfg.epochs, "training epochs");
    pre_cmd->add_option("--steps", pre_cfg.steps_per_epoch, "steps per epoch");
    pre_cmd->add_option("--b", pre_cfg.batch_size, "sub-clouds per batch");
    pre_cmd->add_option("--n-points", pre_cfg.n_points, "points per sub-cloud");
    pre_cmd->add_option("--radius", pre_cfg.radius, "sub-cloud radius in meters");
    pre_cmd->add_option("--lr", pre_cfg.lr, "learning rate");
    pre_cmd->add_option("--momentum", pre_cfg.momentum, "SGD momentum");
    pre_cmd->add_option("--lr-decay", pre_cfg.lr_decay, "per-epoch lr multiplier");
    pre_cmd->add_option("--seed", pre_cfg.seed, "training seed");
    pre_cmd->add_option("--k", pre_k, "pooling neighborhood size");
    pre_cmd->add_option("--out", pre_out, "output checkpoint")->required();

    // corrupt
    auto* cor_cmd = app.add_subcommand("corrupt", "build the seven-domain corruption benchmark");
    std::string cor_cloud, cor_profile = "isprs", cor_dir;
    int cor_severity = 5;
    std::uint64_t cor_seed = 1;
    cor_cmd->add_option("--cloud", cor_cloud, "clean cloud (xyzl)")->required();
    cor_cmd->add_option("--profile", cor_profile, "isprs|h3d");
    cor_cmd->add_option("--severity", cor_severity, "severity level 1..5");
    cor_cmd->add_option("--seed", cor_seed, "benchmark seed");
    cor_cmd->add_option("--out-dir", cor_dir, "output directory")->required();

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "run one method over the benchmark stream");
    AdaptCliArgs adapt_args;
    add_adapt_options(adapt_cmd, adapt_args, true);

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run the four-module ablation table");
    AdaptCliArgs ablate_args;
    add_adapt_options(ablate_cmd, ablate_args, false);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sensitivity sweep");
    AdaptCliArgs sweep_args;
    std::string sweep_param;
    std::string sweep_grid;
    add_adapt_options(sweep_cmd, sweep_args, false);
    sweep_cmd->add_option("--param", sweep_param, "S0|tau|alpha|p")->required();
    sweep_cmd->add_option("--grid", sweep_grid, "comma-separated grid values (defaults to the published grid)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score a prediction file against a labeled cloud");
    std::string eval_pred, eval_truth;
    eval_cmd->add_option("--pred", eval_pred, "predicted labels, one integer per point")->required();
    eval_cmd->add_option("--truth", eval_truth, "ground-truth cloud (xyzl)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return exit_code_for("usage");
    }

    try {
        if (*synth_cmd) {
            const SyntheticSceneSpec spec =
                synth_spec_path.empty() ? SyntheticSceneSpec{} : load_scene_spec(synth_spec_path);
            PointCloud cloud = synth_scene(spec, synth_seed);
            if (synth_cell > 0.0) cloud = grid_subsample(cloud, synth_cell);
            save_cloud(cloud, synth_out);
            std::cout << "wrote " << synth_out << " with " << cloud.size() << " points\n";
        } else if (*pre_cmd) {
            const PointCloud cloud = load_cloud(pre_cloud);
            NetworkSpec sp;
            sp.class_count = cloud.class_count;
            sp.feature_count = cloud.feature_count;
            sp.k = pre_k;
            Network net = init_network(sp, pre_cfg.seed);
            const PretrainReport report = pretrain(net, cloud, pre_cfg);
            save_checkpoint(net, pre_out);
            std::cout << "wrote " << pre_out << " val_oa=" << report.val_oa
                      << " final_loss=" << report.epoch_loss.back() << "\n";
        } else if (*cor_cmd) {
            const PointCloud cloud = load_cloud(cor_cloud);
            const BenchmarkManifest manifest =
                default_manifest(cor_cloud, cor_dir, cor_profile, cor_severity, cor_seed);
            const std::string manifest_path =
                (std::filesystem::path(cor_dir) / "manifest.json").string();
            build_benchmark(cloud, manifest, manifest_path);
            std::cout << "wrote " << manifest.domains.size() << " domains and " << manifest_path << "\n";
        } else if (*adapt_cmd) {
            const RunConfig cfg = resolve_run_config(adapt_cmd, adapt_args);
            const StreamReport report = run_stream_files(cfg);
            std::cout << "method=" << report.method << " mean_oa=" << apcotta::detail::fmt6(report.mean_oa)
                      << " mean_miou=" << apcotta::detail::fmt6(report.mean_miou) << "\n";
        } else if (*ablate_cmd) {
            RunConfig cfg = resolve_run_config(ablate_cmd, ablate_args);
            const Network source = load_checkpoint(cfg.checkpoint);
            const LoadedBenchmark bench = load_benchmark_domains(cfg);
            const auto rows = run_ablation(stream_run_from_config(cfg, source, bench));
            if (!cfg.report_dir.empty()) {
                std::filesystem::create_directories(cfg.report_dir);
                write_ablation_csv(rows, (std::filesystem::path(cfg.report_dir) / "ablation.csv").string());
            }
            for (const auto& r : rows)
                std::cout << r.label << " mean_oa=" << apcotta::detail::fmt6(r.mean_oa)
                          << " mean_miou=" << apcotta::detail::fmt6(r.mean_miou) << "\n";
        } else if (*sweep_cmd) {
            RunConfig cfg = resolve_run_config(sweep_cmd, sweep_args);
            const Network source = load_checkpoint(cfg.checkpoint);
            const LoadedBenchmark bench = load_benchmark_domains(cfg);
            const SweepParam param = sweep_param_from_string(sweep_param);
            std::vector<double> grid;
            if (!sweep_grid.empty()) {
                std::stringstream ss(sweep_grid);
                std::string tok;
                while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
            }
            const auto rows = run_sweep(stream_run_from_config(cfg, source, bench), param, grid);
            if (!cfg.report_dir.empty()) {
                std::filesystem::create_directories(cfg.report_dir);
                write_sweep_csv(rows, param,
                                (std::filesystem::path(cfg.report_dir) / ("sweep_" + to_string(param) + ".csv")).string());
            }
            for (const auto& r : rows)
                std::cout << to_string(param) << "=" << r.value
                          << " mean_miou=" << apcotta::detail::fmt6(r.mean_miou)
                          << " mean_oa=" << apcotta::detail::fmt6(r.mean_oa) << "\n";
        } else if (*eval_cmd) {
            const PointCloud truth = load_cloud(eval_truth);
            if (!truth.has_labels()) throw ValidationError("truth cloud has no labels");
            std::ifstream in(eval_pred);
            if (!in) throw IoError("cannot open prediction file " + eval_pred);
            std::vector<std::uint8_t> preds;
            long v;
            while (in >> v) {
                if (v < 0 || v > 255) throw ParseError("prediction out of range: " + std::to_string(v));
                preds.push_back(static_cast<std::uint8_t>(v));
            }
            if (preds.size() != truth.size())
                throw ValidationError("prediction count " + std::to_string(preds.size()) +
                                      " does not match cloud size " + std::to_string(truth.size()));
            ConfusionMatrix cm(truth.class_count);
            update(cm, truth.labels, preds);
            const MetricsReport report = miou(cm);
            nlohmann::json j = report_to_json(report);
            std::cout << j.dump(2) << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return exit_code_for("internal");
    }
    return 0;
}
