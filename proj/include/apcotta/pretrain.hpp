#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "apcotta/net.hpp"
#include "apcotta/pointcloud.hpp"
#include "apcotta/sampling.hpp"

namespace apcotta {

struct PretrainConfig {
    std::size_t epochs = 10;
    std::size_t steps_per_epoch = 50;
    std::size_t batch_size = 4;
    std::size_t n_points = 2048;
    double radius = 10.0;
    double lr = 0.05;
    double momentum = 0.9;
    double lr_decay = 1.0; // per-epoch multiplier
    std::size_t val_batches = 8;
    std::uint64_t seed = 1;
};

struct PretrainReport {
    std::vector<double> epoch_loss; // mean per epoch
    double val_oa = 0.0;
};

// Mean cross-entropy over non-ignored points; fills dlogits for backward.
inline double cross_entropy_loss(const std::vector<double>& probs,
                                 const std::vector<std::uint8_t>& labels, std::size_t rows, int c,
                                 std::vector<double>& dlogits) {
    dlogits.assign(rows * static_cast<std::size_t>(c), 0.0);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < rows; ++i)
        if (labels[i] != kIgnoreLabel) ++valid;
    if (valid == 0) throw StateError("cross entropy: no labeled points in batch");

    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(valid);
    for (std::size_t i = 0; i < rows; ++i) {
        if (labels[i] == kIgnoreLabel) continue;
        const double* pi = probs.data() + i * static_cast<std::size_t>(c);
        double* di = dlogits.data() + i * static_cast<std::size_t>(c);
        const int y = labels[i];
        loss -= std::log(std::max(pi[y], 1e-300)) * inv;
        for (int j = 0; j < c; ++j) di[j] = (pi[j] - (j == y ? 1.0 : 0.0)) * inv;
    }
    return loss;
}

inline std::vector<std::uint8_t> argmax_labels(const std::vector<double>& probs, std::size_t rows, int c) {
    std::vector<std::uint8_t> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* pi = probs.data() + i * static_cast<std::size_t>(c);
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (pi[j] > pi[best]) best = j; // ties keep the lowest class id
        out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

// Supervised training of the source model. Batch-stats BN with running-stat
// updates (momentum 0.9), SGD on all layers. Returns per-epoch mean loss and
// a validation OA measured with running statistics on held-out batches.
inline PretrainReport pretrain(Network& net, const PointCloud& labeled, const PretrainConfig& cfg) {
    validate_cloud(labeled);
    if (!labeled.has_labels()) throw StateError("pretrain: cloud has no labels");
    bool any_valid = false;
    for (std::uint8_t l : labeled.labels)
        if (l != kIgnoreLabel) any_valid = true;
    if (!any_valid) throw StateError("pretrain: no labeled points");

    PretrainReport report;
    RngStream batch_rng(split_seed(cfg.seed, 0));
    const std::vector<bool> all_layers(kLayerCount, true);
    double lr = cfg.lr;
    std::vector<double> dlogits;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
            const SubCloudBatch batch =
                make_batch(labeled, cfg.batch_size, cfg.n_points, cfg.radius, batch_rng);
            const auto labels = gather_labels(labeled, batch);
            ForwardTrace trace = forward(net, batch, BnMode::BatchStats, nullptr, true);
            const auto probs =
                softmax_with_temperature(trace.logits, trace.total_points, net.spec.class_count, 1.0);
            loss_sum += cross_entropy_loss(probs, labels, trace.total_points, net.spec.class_count, dlogits);
            backward(net, trace, dlogits);
            sgd_step(net, lr, cfg.momentum, all_layers);
        }
        report.epoch_loss.push_back(loss_sum / static_cast<double>(cfg.steps_per_epoch));
        lr *= cfg.lr_decay;
    }

    // validation with frozen running statistics
    RngStream val_rng(split_seed(cfg.seed, 1));
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < cfg.val_batches; ++i) {
        const SubCloudBatch batch = make_batch(labeled, cfg.batch_size, cfg.n_points, cfg.radius, val_rng);
        const auto labels = gather_labels(labeled, batch);
        ForwardTrace trace = forward(net, batch, BnMode::RunningStats);
        const auto probs =
            softmax_with_temperature(trace.logits, trace.total_points, net.spec.class_count, 1.0);
        const auto pred = argmax_labels(probs, trace.total_points, net.spec.class_count);
        for (std::size_t j = 0; j < pred.size(); ++j) {
            if (labels[j] == kIgnoreLabel) continue;
            ++total;
            if (pred[j] == labels[j]) ++correct;
        }
    }
    report.val_oa = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    return report;
}

} // namespace apcotta
