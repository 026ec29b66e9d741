#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "apcotta/augment.hpp"
#include "apcotta/net.hpp"
#include "apcotta/pointcloud.hpp"
#include "apcotta/pretrain.hpp"
#include "apcotta/rng.hpp"

namespace apcotta {

enum class EntropyMode { Normalized, Raw };
enum class PredictView { Weak, Clean };

enum class Method { Source, BnStats, PseudoLabel, TentContinual, TentOnline, Apcotta };

inline Method method_from_string(const std::string& name) {
    if (name == "source") return Method::Source;
    if (name == "bnstats") return Method::BnStats;
    if (name == "pseudo") return Method::PseudoLabel;
    if (name == "tent") return Method::TentContinual;
    if (name == "tent-online") return Method::TentOnline;
    if (name == "apcotta") return Method::Apcotta;
    throw ValidationError("unknown method '" + name +
                          "' (expected source|bnstats|pseudo|tent|tent-online|apcotta)");
}

inline std::string to_string(Method m) {
    switch (m) {
        case Method::Source: return "source";
        case Method::BnStats: return "bnstats";
        case Method::PseudoLabel: return "pseudo";
        case Method::TentContinual: return "tent";
        case Method::TentOnline: return "tent-online";
        case Method::Apcotta: return "apcotta";
    }
    throw ValidationError("unknown method");
}

struct AdaptConfig {
    double s0 = 0.001;          // layer-score threshold
    double tau = 0.8;           // entropy gate, on normalized entropy by default
    double alpha = 0.999;       // interpolation coefficient toward source
    double p = 0.01;            // Bernoulli mask probability
    double temperature = 50.0;  // scoring softmax temperature
    double lr = 1e-2;
    double momentum = 0.98;
    bool dstl = true;
    bool ebcl = true;
    bool rpi = true;
    EntropyMode entropy_mode = EntropyMode::Normalized;
    bool stop_gradient_weak = true;
    PredictView predict_view = PredictView::Weak;
};

inline void validate_config(const AdaptConfig& cfg) {
    if (cfg.s0 < 0.0) throw ValidationError("adapt config: S0 must be >= 0");
    if (cfg.tau < 0.0) throw ValidationError("adapt config: tau must be >= 0");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ValidationError("adapt config: alpha must be in [0,1]");
    if (cfg.p < 0.0 || cfg.p > 1.0) throw ValidationError("adapt config: p must be in [0,1]");
    if (cfg.temperature <= 0.0) throw ValidationError("adapt config: temperature must be positive");
}

struct LayerScore {
    int layer_id = 0;
    double score = 0.0;
    std::size_t param_count = 0;
};

// Online adaptation state: the evolving model plus a frozen copy of the
// source parameters and the random streams the step consumes.
struct AdaptState {
    Network net;
    std::vector<std::vector<double>> source_values; // per tensor, frozen at construction
    std::uint64_t step_count = 0;
    RngStream augment_rng;
    RngStream mask_rng;
    std::vector<bool> last_mask;

    static AdaptState from_source(Network source, std::uint64_t seed) {
        AdaptState state;
        state.net = std::move(source);
        for (const auto& t : state.net.params) state.source_values.push_back(t.values);
        state.augment_rng = RngStream(split_seed(seed, 101));
        state.mask_rng = RngStream(split_seed(seed, 202));
        state.last_mask.assign(kLayerCount, true);
        return state;
    }

    // Full reset to the pretrained parameters with cleared optimizer state.
    void reset_to_source() {
        for (std::size_t i = 0; i < net.params.size(); ++i) {
            net.params[i].values = source_values[i];
            std::fill(net.params[i].momentum.begin(), net.params[i].momentum.end(), 0.0);
        }
    }
};

// d(mean KL(u || softmax(z/T)))/dz = (softmax(z/T) - 1/C) / (T * rows).
inline std::vector<double> kl_uniform_dlogits(const std::vector<double>& probs_t, std::size_t rows,
                                              int c, double temperature) {
    std::vector<double> d(probs_t.size());
    const double u = 1.0 / static_cast<double>(c);
    const double scale = 1.0 / (temperature * static_cast<double>(rows));
    for (std::size_t i = 0; i < probs_t.size(); ++i) d[i] = (probs_t[i] - u) * scale;
    return d;
}

inline double kl_uniform_loss(const std::vector<double>& probs_t, std::size_t rows, int c) {
    // KL(u||p) = -ln C - (1/C) sum_c ln p_c, averaged over rows
    double loss = 0.0;
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* pi = probs_t.data() + i * static_cast<std::size_t>(c);
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += std::log(std::max(pi[j], 1e-300));
        loss += -std::log(static_cast<double>(c)) - inv_c * acc;
    }
    return loss / static_cast<double>(rows);
}

inline std::vector<LayerScore> scores_from_grads(const Network& net) {
    std::vector<LayerScore> scores(kLayerCount);
    for (int id = 0; id < kLayerCount; ++id) {
        scores[static_cast<std::size_t>(id)].layer_id = id;
        scores[static_cast<std::size_t>(id)].param_count = net.layer_param_count(id);
    }
    for (const auto& t : net.params) {
        double l1 = 0.0;
        for (double g : t.grad) l1 += std::abs(g);
        scores[static_cast<std::size_t>(t.layer_id)].score += l1;
    }
    for (auto& s : scores)
        if (s.param_count > 0) s.score /= static_cast<double>(s.param_count);
    return scores;
}

// Per-layer confidence scores: L1 norm of the gradient of the KL-to-uniform
// loss on the weak view, normalized by the layer's parameter count. Leaves
// parameter values unmodified (only scratch gradients are written).
inline std::vector<LayerScore> layer_scores(AdaptState& state, const SubCloudBatch& weak_batch,
                                            double temperature) {
    ForwardTrace trace = forward(state.net, weak_batch, BnMode::BatchStats);
    const int c = state.net.spec.class_count;
    const auto probs_t = softmax_with_temperature(trace.logits, trace.total_points, c, temperature);
    const double loss = kl_uniform_loss(probs_t, trace.total_points, c);
    if (!std::isfinite(loss)) throw StateError("layer_scores: non-finite scoring loss");
    backward(state.net, trace, kl_uniform_dlogits(probs_t, trace.total_points, c, temperature));
    return scores_from_grads(state.net);
}

// Numerical check of the gradient identity
//   d KL(u || y_hat)/d theta = (1/C) sum_c d CE(logits/T, c)/d theta.
// The right side really runs C independent backward passes and averages the
// parameter gradients; returns the maximum elementwise deviation.
inline double check_gradient_identity(AdaptState& state, const SubCloudBatch& weak_batch,
                                      double temperature) {
    ForwardTrace trace = forward(state.net, weak_batch, BnMode::BatchStats);
    const int c = state.net.spec.class_count;
    const std::size_t rows = trace.total_points;
    const auto probs_t = softmax_with_temperature(trace.logits, rows, c, temperature);

    backward(state.net, trace, kl_uniform_dlogits(probs_t, rows, c, temperature));
    std::vector<std::vector<double>> kl_grads;
    for (const auto& t : state.net.params) kl_grads.push_back(t.grad);

    std::vector<std::vector<double>> ce_mean(state.net.params.size());
    for (std::size_t t = 0; t < state.net.params.size(); ++t)
        ce_mean[t].assign(state.net.params[t].grad.size(), 0.0);
    const double scale = 1.0 / (temperature * static_cast<double>(rows));
    for (int label = 0; label < c; ++label) {
        std::vector<double> d(probs_t.size());
        for (std::size_t i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j) {
                const std::size_t at = i * static_cast<std::size_t>(c) + static_cast<std::size_t>(j);
                d[at] = (probs_t[at] - (j == label ? 1.0 : 0.0)) * scale;
            }
        backward(state.net, trace, d);
        for (std::size_t t = 0; t < state.net.params.size(); ++t)
            for (std::size_t i = 0; i < ce_mean[t].size(); ++i)
                ce_mean[t][i] += state.net.params[t].grad[i] / static_cast<double>(c);
    }

    double max_dev = 0.0;
    for (std::size_t t = 0; t < kl_grads.size(); ++t)
        for (std::size_t i = 0; i < kl_grads[t].size(); ++i)
            max_dev = std::max(max_dev, std::abs(kl_grads[t][i] - ce_mean[t][i]));
    return max_dev;
}

// mask[l] = score_l < S0; ties at exactly S0 stay frozen.
inline std::vector<bool> select_layers(const std::vector<LayerScore>& scores, double s0) {
    std::vector<bool> mask(kLayerCount, false);
    for (const auto& s : scores)
        if (s.layer_id >= 0 && s.layer_id < kLayerCount)
            mask[static_cast<std::size_t>(s.layer_id)] = s.score < s0;
    return mask;
}

// Shannon entropy per row, with 0*ln(0) = 0. Normalized mode divides by
// ln(C) so thresholds are comparable across class counts.
inline std::vector<double> entropy(const std::vector<double>& probs, std::size_t rows, int c,
                                   EntropyMode mode) {
    std::vector<double> h(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* pi = probs.data() + i * static_cast<std::size_t>(c);
        double acc = 0.0;
        for (int j = 0; j < c; ++j)
            if (pi[j] > 0.0) acc -= pi[j] * std::log(pi[j]);
        h[i] = mode == EntropyMode::Normalized ? acc / std::log(static_cast<double>(c)) : acc;
    }
    return h;
}

struct ConsistencyResult {
    double loss = 0.0;
    std::size_t reliable_count = 0;
    std::vector<std::uint8_t> reliable; // per row
};

// Cross-entropy of the strong view against the weak view's distribution,
// averaged over rows whose weak-view entropy stays below tau. Zero reliable
// rows is a defined skip (loss 0), not an error.
inline ConsistencyResult consistency_loss(const std::vector<double>& p_weak,
                                          const std::vector<double>& p_strong, std::size_t rows,
                                          int c, double tau, EntropyMode mode) {
    if (p_weak.size() != p_strong.size() || p_weak.size() != rows * static_cast<std::size_t>(c))
        throw ValidationError("consistency_loss: shape mismatch");
    ConsistencyResult result;
    result.reliable.assign(rows, 0);
    const auto h = entropy(p_weak, rows, c, mode);
    double sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (!(h[i] < tau)) continue;
        result.reliable[i] = 1;
        ++result.reliable_count;
        const double* pw = p_weak.data() + i * static_cast<std::size_t>(c);
        const double* ps = p_strong.data() + i * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) sum -= pw[j] * std::log(std::max(ps[j], 1e-300));
    }
    if (result.reliable_count > 0) result.loss = sum / static_cast<double>(result.reliable_count);
    return result;
}

// Eq. 7 applied after the gradient update: masked elements of the selected
// layers move to alpha*theta0 + (1-alpha)*theta_tilde. Implemented as
// theta0 + (1-alpha)*(theta_tilde - theta0) so the contraction toward the
// source is exact in 64-bit; alpha 0 and 1 short-circuit to the bit-exact
// limits. One Bernoulli draw per element of every selected layer keeps the
// mask stream aligned across configurations.
inline void rpi_step(AdaptState& state, const AdaptConfig& cfg, const std::vector<bool>& selected_layers) {
    if (selected_layers.size() != static_cast<std::size_t>(kLayerCount))
        throw ValidationError("rpi_step: selected layer mask must cover every layer id");
    for (std::size_t t = 0; t < state.net.params.size(); ++t) {
        ParamTensor& tensor = state.net.params[t];
        if (!tensor.trainable_candidate || !selected_layers[static_cast<std::size_t>(tensor.layer_id)])
            continue;
        const std::vector<double>& source = state.source_values[t];
        for (std::size_t i = 0; i < tensor.values.size(); ++i) {
            if (!state.mask_rng.bernoulli(cfg.p)) continue;
            if (cfg.alpha == 0.0) continue;
            if (cfg.alpha == 1.0) {
                tensor.values[i] = source[i];
            } else {
                tensor.values[i] = source[i] + (1.0 - cfg.alpha) * (tensor.values[i] - source[i]);
            }
        }
    }
}

struct StepResult {
    std::vector<std::uint8_t> predictions;
    std::vector<LayerScore> scores;   // empty when DSTL is off
    std::vector<bool> selected;       // per layer id
    std::size_t reliable_count = 0;
    std::size_t total_points = 0;
    double loss = 0.0;
    bool updated = false;
};

// One APCoTTA adaptation step:
//   1. weak/strong views of the batch
//   2. scoring pass and layer selection (DSTL)
//   3. batch-stats forward of both views, predictions from the weak view
//   4. entropy-gated consistency loss (EBCL)
//   5. backward + SGD restricted to the selected layers
//   6. randomized interpolation toward the source (RPI)
inline StepResult apcotta_step(AdaptState& state, const SubCloudBatch& batch, const AdaptConfig& cfg) {
    validate_config(cfg);
    const int c = state.net.spec.class_count;
    StepResult result;

    const SubCloudBatch weak = weak_augment(batch, state.augment_rng);
    const SubCloudBatch strong = strong_augment(batch, state.augment_rng);

    ForwardTrace trace_w = forward(state.net, weak, BnMode::BatchStats);
    const std::size_t rows = trace_w.total_points;
    result.total_points = rows;

    if (cfg.dstl) {
        const auto probs_t = softmax_with_temperature(trace_w.logits, rows, c, cfg.temperature);
        const double scoring_loss = kl_uniform_loss(probs_t, rows, c);
        if (!std::isfinite(scoring_loss)) throw StateError("apcotta_step: non-finite scoring loss");
        backward(state.net, trace_w, kl_uniform_dlogits(probs_t, rows, c, cfg.temperature));
        result.scores = scores_from_grads(state.net);
        result.selected = select_layers(result.scores, cfg.s0);
    } else {
        result.selected.assign(kLayerCount, true);
    }
    state.last_mask = result.selected;

    const auto p_weak = softmax_with_temperature(trace_w.logits, rows, c, 1.0);
    if (cfg.predict_view == PredictView::Weak) {
        result.predictions = argmax_labels(p_weak, rows, c);
    } else {
        ForwardTrace clean = forward(state.net, batch, BnMode::BatchStats);
        const auto p_clean = softmax_with_temperature(clean.logits, clean.total_points, c, 1.0);
        result.predictions = argmax_labels(p_clean, clean.total_points, c);
    }

    ForwardTrace trace_s = forward(state.net, strong, BnMode::BatchStats);
    const auto p_strong = softmax_with_temperature(trace_s.logits, rows, c, 1.0);

    const double tau = cfg.ebcl ? cfg.tau : std::numeric_limits<double>::infinity();
    const ConsistencyResult con = consistency_loss(p_weak, p_strong, rows, c, tau, cfg.entropy_mode);
    result.loss = con.loss;
    result.reliable_count = con.reliable_count;

    if (con.reliable_count > 0) {
        const double inv = 1.0 / static_cast<double>(con.reliable_count);
        std::vector<double> d_strong(rows * static_cast<std::size_t>(c), 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            if (!con.reliable[i]) continue;
            const double* pw = p_weak.data() + i * static_cast<std::size_t>(c);
            const double* ps = p_strong.data() + i * static_cast<std::size_t>(c);
            double* di = d_strong.data() + i * static_cast<std::size_t>(c);
            for (int j = 0; j < c; ++j) di[j] = (ps[j] - pw[j]) * inv;
        }
        backward(state.net, trace_s, d_strong);

        if (!cfg.stop_gradient_weak) {
            std::vector<std::vector<double>> strong_grads;
            for (const auto& t : state.net.params) strong_grads.push_back(t.grad);
            std::vector<double> d_weak(rows * static_cast<std::size_t>(c), 0.0);
            for (std::size_t i = 0; i < rows; ++i) {
                if (!con.reliable[i]) continue;
                const double* pw = p_weak.data() + i * static_cast<std::size_t>(c);
                const double* ps = p_strong.data() + i * static_cast<std::size_t>(c);
                double* di = d_weak.data() + i * static_cast<std::size_t>(c);
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += pw[j] * -std::log(std::max(ps[j], 1e-300));
                for (int j = 0; j < c; ++j)
                    di[j] = pw[j] * (-std::log(std::max(ps[j], 1e-300)) - dot) * inv;
            }
            backward(state.net, trace_w, d_weak);
            for (std::size_t t = 0; t < state.net.params.size(); ++t)
                for (std::size_t i = 0; i < state.net.params[t].grad.size(); ++i)
                    state.net.params[t].grad[i] += strong_grads[t][i];
        }

        sgd_step(state.net, cfg.lr, cfg.momentum, result.selected);
        if (cfg.rpi) rpi_step(state, cfg, result.selected);
        result.updated = true;
    }

    ++state.step_count;
    return result;
}

// Simple CTTA baselines sharing the adaptation state.
inline StepResult baseline_step(AdaptState& state, const SubCloudBatch& batch, Method method,
                                const AdaptConfig& cfg) {
    const int c = state.net.spec.class_count;
    StepResult result;
    result.selected.assign(kLayerCount, false);

    switch (method) {
        case Method::Source: {
            ForwardTrace trace = forward(state.net, batch, BnMode::RunningStats);
            const auto probs = softmax_with_temperature(trace.logits, trace.total_points, c, 1.0);
            result.predictions = argmax_labels(probs, trace.total_points, c);
            result.total_points = trace.total_points;
            break;
        }
        case Method::BnStats: {
            ForwardTrace trace = forward(state.net, batch, BnMode::BatchStats);
            const auto probs = softmax_with_temperature(trace.logits, trace.total_points, c, 1.0);
            result.predictions = argmax_labels(probs, trace.total_points, c);
            result.total_points = trace.total_points;
            break;
        }
        case Method::PseudoLabel: {
            ForwardTrace trace = forward(state.net, batch, BnMode::BatchStats);
            const std::size_t rows = trace.total_points;
            const auto probs = softmax_with_temperature(trace.logits, rows, c, 1.0);
            result.predictions = argmax_labels(probs, rows, c);
            result.total_points = rows;
            std::vector<double> dlogits;
            result.loss = cross_entropy_loss(probs, result.predictions, rows, c, dlogits);
            backward(state.net, trace, dlogits);
            sgd_step(state.net, cfg.lr, cfg.momentum, std::vector<bool>(kLayerCount, true));
            result.updated = true;
            break;
        }
        case Method::TentContinual:
        case Method::TentOnline: {
            ForwardTrace trace = forward(state.net, batch, BnMode::BatchStats);
            const std::size_t rows = trace.total_points;
            const auto probs = softmax_with_temperature(trace.logits, rows, c, 1.0);
            result.predictions = argmax_labels(probs, rows, c);
            result.total_points = rows;
            const auto h = entropy(probs, rows, c, EntropyMode::Raw);
            double mean_h = 0.0;
            for (double v : h) mean_h += v;
            result.loss = mean_h / static_cast<double>(rows);
            // d(mean entropy)/dz_j = -(1/rows) p_j (ln p_j + H)
            std::vector<double> dlogits(rows * static_cast<std::size_t>(c));
            const double inv = 1.0 / static_cast<double>(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                const double* pi = probs.data() + i * static_cast<std::size_t>(c);
                double* di = dlogits.data() + i * static_cast<std::size_t>(c);
                for (int j = 0; j < c; ++j) {
                    const double lp = std::log(std::max(pi[j], 1e-300));
                    di[j] = -inv * pi[j] * (lp + h[i]);
                }
            }
            backward(state.net, trace, dlogits);
            // BN affine parameters only
            std::vector<bool> bn_mask(kLayerCount, false);
            bn_mask[1] = bn_mask[3] = bn_mask[5] = bn_mask[8] = bn_mask[10] = true;
            result.selected = bn_mask;
            sgd_step(state.net, cfg.lr, cfg.momentum, bn_mask);
            result.updated = true;
            break;
        }
        case Method::Apcotta:
            return apcotta_step(state, batch, cfg);
    }
    ++state.step_count;
    return result;
}

} // namespace apcotta
