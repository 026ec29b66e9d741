#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "apcotta/common.hpp"
#include "apcotta/knn.hpp"
#include "apcotta/pointcloud.hpp"
#include "apcotta/rng.hpp"

namespace apcotta {

// Compact per-point segmentation backbone:
//   input (dx, dy, dz, f1..fF)
//   -> three affine+BN+ReLU blocks (trunk widths)
//   -> max-pool over the k nearest neighbors, concatenated with the point's
//      own feature, read out by a fusion affine+ReLU
//   -> two affine+BN+ReLU blocks (post widths)
//   -> affine head emitting class logits.
// Twelve parameter-bearing layer ids: six affine weight+bias groups, five
// BatchNorm scale+shift groups, one head.
struct NetworkSpec {
    std::array<int, 3> trunk{32, 64, 64};
    int fusion = 128;
    std::array<int, 2> post{128, 64};
    int k = 16;
    int class_count = 5;
    int feature_count = 1;

    bool operator==(const NetworkSpec&) const = default;
    int input_dim() const { return 3 + feature_count; }
};

struct ParamTensor {
    int layer_id = 0;
    std::string name;
    std::vector<double> values;
    std::vector<double> grad;
    std::vector<double> momentum;
    bool trainable_candidate = true;

    std::size_t size() const { return values.size(); }
};

enum class BnMode { BatchStats, RunningStats };

struct BatchNormState {
    std::string name;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double epsilon = 1e-5;
};

inline constexpr int kLayerCount = 12;

struct Network {
    NetworkSpec spec;
    std::vector<ParamTensor> params; // fixed layout, see init_network
    std::vector<BatchNormState> bn;  // trunk0..2, post0, post1

    ParamTensor& tensor(std::size_t i) { return params[i]; }
    const ParamTensor& tensor(std::size_t i) const { return params[i]; }

    // Number of scalar parameters grouped under a layer id (K_l).
    std::size_t layer_param_count(int layer_id) const {
        std::size_t n = 0;
        for (const auto& p : params)
            if (p.layer_id == layer_id) n += p.size();
        return n;
    }

    std::size_t total_param_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    std::vector<int> layer_ids() const {
        std::vector<int> ids;
        for (const auto& p : params)
            if (ids.empty() || ids.back() != p.layer_id) ids.push_back(p.layer_id);
        return ids;
    }
};

// Fixed tensor layout indices.
namespace netidx {
inline constexpr int t0_w = 0, t0_b = 1, t0_g = 2, t0_s = 3;
inline constexpr int t1_w = 4, t1_b = 5, t1_g = 6, t1_s = 7;
inline constexpr int t2_w = 8, t2_b = 9, t2_g = 10, t2_s = 11;
inline constexpr int fu_w = 12, fu_b = 13;
inline constexpr int p0_w = 14, p0_b = 15, p0_g = 16, p0_s = 17;
inline constexpr int p1_w = 18, p1_b = 19, p1_g = 20, p1_s = 21;
inline constexpr int hd_w = 22, hd_b = 23;
} // namespace netidx

inline Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
    for (int w : {spec.trunk[0], spec.trunk[1], spec.trunk[2], spec.fusion, spec.post[0], spec.post[1]})
        if (w < 1) throw ValidationError("init_network: widths must be positive");
    if (spec.k < 1) throw ValidationError("init_network: k must be positive");
    if (spec.class_count < 2) throw ValidationError("init_network: class_count must be >= 2");
    if (spec.feature_count < 1) throw ValidationError("init_network: feature_count must be >= 1");

    Network net;
    net.spec = spec;
    RngStream rng(seed);

    const auto add_affine = [&](int layer_id, const std::string& name, int in, int out) {
        ParamTensor w;
        w.layer_id = layer_id;
        w.name = name + ".weight";
        w.values.resize(static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        w.grad.assign(w.values.size(), 0.0);
        w.momentum.assign(w.values.size(), 0.0);
        net.params.push_back(std::move(w));

        ParamTensor b;
        b.layer_id = layer_id;
        b.name = name + ".bias";
        b.values.assign(static_cast<std::size_t>(out), 0.0);
        b.grad.assign(b.values.size(), 0.0);
        b.momentum.assign(b.values.size(), 0.0);
        net.params.push_back(std::move(b));
    };
    const auto add_bn = [&](int layer_id, const std::string& name, int ch) {
        ParamTensor g;
        g.layer_id = layer_id;
        g.name = name + ".scale";
        g.values.assign(static_cast<std::size_t>(ch), 1.0);
        g.grad.assign(g.values.size(), 0.0);
        g.momentum.assign(g.values.size(), 0.0);
        net.params.push_back(std::move(g));

        ParamTensor s;
        s.layer_id = layer_id;
        s.name = name + ".shift";
        s.values.assign(static_cast<std::size_t>(ch), 0.0);
        s.grad.assign(s.values.size(), 0.0);
        s.momentum.assign(s.values.size(), 0.0);
        net.params.push_back(std::move(s));

        BatchNormState st;
        st.name = name;
        st.running_mean.assign(static_cast<std::size_t>(ch), 0.0);
        st.running_var.assign(static_cast<std::size_t>(ch), 1.0);
        net.bn.push_back(std::move(st));
    };

    const int din = spec.input_dim();
    add_affine(0, "trunk0", din, spec.trunk[0]);
    add_bn(1, "trunk0.bn", spec.trunk[0]);
    add_affine(2, "trunk1", spec.trunk[0], spec.trunk[1]);
    add_bn(3, "trunk1.bn", spec.trunk[1]);
    add_affine(4, "trunk2", spec.trunk[1], spec.trunk[2]);
    add_bn(5, "trunk2.bn", spec.trunk[2]);
    add_affine(6, "fusion", 2 * spec.trunk[2], spec.fusion);
    add_affine(7, "post0", spec.fusion, spec.post[0]);
    add_bn(8, "post0.bn", spec.post[0]);
    add_affine(9, "post1", spec.post[0], spec.post[1]);
    add_bn(10, "post1.bn", spec.post[1]);
    add_affine(11, "head", spec.post[1], spec.class_count);
    return net;
}

struct BlockCache {
    std::vector<double> xhat;   // normalized pre-affine activations
    std::vector<double> invstd; // per channel
    std::vector<double> out;    // post-ReLU activations
};

struct ForwardTrace {
    BnMode mode = BnMode::BatchStats;
    std::size_t total_points = 0;
    int class_count = 0;
    std::vector<std::size_t> cloud_offsets; // per sub-cloud start into the flat arrays
    std::vector<double> input;              // P x Din
    std::vector<std::uint32_t> neighbors;   // P x k, global indices
    std::array<BlockCache, 3> trunk;
    std::vector<double> pooled;             // P x trunk2
    std::vector<std::uint32_t> pool_argmax; // P x trunk2
    std::vector<double> concat;             // P x 2*trunk2
    std::vector<double> fusion_out;         // P x fusion, post-ReLU
    std::array<BlockCache, 2> post;
    std::vector<double> logits;             // P x C
};

namespace detail {

inline void affine_forward(const double* __restrict x, std::size_t p, int in, int out,
                           const double* __restrict w, const double* __restrict b,
                           double* __restrict y) {
    for (std::size_t i = 0; i < p; ++i) {
        double* __restrict yi = y + i * static_cast<std::size_t>(out);
        const double* __restrict xi = x + i * static_cast<std::size_t>(in);
        for (int j = 0; j < out; ++j) yi[j] = b[j];
        for (int c = 0; c < in; ++c) {
            const double xv = xi[c];
            const double* __restrict wc = w + static_cast<std::size_t>(c) * static_cast<std::size_t>(out);
            for (int j = 0; j < out; ++j) yi[j] += xv * wc[j];
        }
    }
}

inline void check_finite(const std::vector<double>& v, const char* where) {
    for (double x : v)
        if (!std::isfinite(x)) throw StateError(std::string("non-finite activation in ") + where);
}

} // namespace detail

// Flattens a batch into the trace input layout and computes neighborhoods.
// Neighborhoods may be supplied (local per-sub-cloud indices) to pin them
// across runs; otherwise exact knn on each sub-cloud's positions is used.
inline void prepare_input(const NetworkSpec& spec, const SubCloudBatch& batch, ForwardTrace& trace,
                          const std::vector<NeighborIndex>* local_neighbors) {
    if (batch.clouds.empty()) throw ValidationError("forward: empty batch");
    const int f = spec.feature_count;
    const int din = spec.input_dim();
    std::size_t total = 0;
    trace.cloud_offsets.clear();
    for (const SubCloud& sc : batch.clouds) {
        if (sc.feature_count != f)
            throw ValidationError("forward: sub-cloud feature count does not match network spec");
        if (sc.size() <= static_cast<std::size_t>(spec.k))
            throw ValidationError("forward: sub-cloud smaller than k+1 points");
        trace.cloud_offsets.push_back(total);
        total += sc.size();
    }
    trace.total_points = total;
    trace.input.resize(total * static_cast<std::size_t>(din));
    trace.neighbors.resize(total * static_cast<std::size_t>(spec.k));

    for (std::size_t s = 0; s < batch.clouds.size(); ++s) {
        const SubCloud& sc = batch.clouds[s];
        const std::size_t off = trace.cloud_offsets[s];
        for (std::size_t i = 0; i < sc.size(); ++i) {
            double* row = trace.input.data() + (off + i) * static_cast<std::size_t>(din);
            row[0] = sc.positions[i][0];
            row[1] = sc.positions[i][1];
            row[2] = sc.positions[i][2];
            for (int c = 0; c < f; ++c) row[3 + c] = sc.features[i * static_cast<std::size_t>(f) + static_cast<std::size_t>(c)];
        }
        NeighborIndex local;
        const NeighborIndex* nbr = nullptr;
        if (local_neighbors) {
            if (local_neighbors->size() != batch.clouds.size())
                throw ValidationError("forward: neighbor index count does not match batch size");
            nbr = &(*local_neighbors)[s];
            if (nbr->k != spec.k || nbr->rows() != sc.size())
                throw ValidationError("forward: neighbor index shape mismatch");
        } else {
            local = knn(sc.positions, spec.k);
            nbr = &local;
        }
        for (std::size_t i = 0; i < sc.size(); ++i)
            for (int m = 0; m < spec.k; ++m)
                trace.neighbors[(off + i) * static_cast<std::size_t>(spec.k) + static_cast<std::size_t>(m)] =
                    static_cast<std::uint32_t>(off) + nbr->row(i)[m];
    }
}

// One affine+BN+ReLU block. In batch mode BN normalizes by the current batch
// moments; running mode uses the stored statistics. `update_running` folds
// the batch moments into the running stats with momentum 0.9 (pretraining).
inline void block_forward(const char* name, const double* x, std::size_t p, int in, int out,
                          const ParamTensor& w, const ParamTensor& b, const ParamTensor& gamma,
                          const ParamTensor& beta, BatchNormState& bn, BnMode mode,
                          bool update_running, BlockCache& cache, std::vector<double>& scratch) {
    scratch.resize(p * static_cast<std::size_t>(out));
    detail::affine_forward(x, p, in, out, w.values.data(), b.values.data(), scratch.data());
    detail::check_finite(scratch, name);

    cache.xhat.resize(p * static_cast<std::size_t>(out));
    cache.invstd.resize(static_cast<std::size_t>(out));
    cache.out.resize(p * static_cast<std::size_t>(out));

    if (mode == BnMode::BatchStats) {
        std::vector<double> mu(static_cast<std::size_t>(out), 0.0);
        std::vector<double> var(static_cast<std::size_t>(out), 0.0);
        for (std::size_t i = 0; i < p; ++i) {
            const double* zi = scratch.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) mu[static_cast<std::size_t>(c)] += zi[c];
        }
        for (int c = 0; c < out; ++c) mu[static_cast<std::size_t>(c)] /= static_cast<double>(p);
        for (std::size_t i = 0; i < p; ++i) {
            const double* zi = scratch.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) {
                const double d = zi[c] - mu[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += d * d;
            }
        }
        for (int c = 0; c < out; ++c) var[static_cast<std::size_t>(c)] /= static_cast<double>(p);
        for (int c = 0; c < out; ++c)
            cache.invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + bn.epsilon);
        if (update_running) {
            for (int c = 0; c < out; ++c) {
                bn.running_mean[static_cast<std::size_t>(c)] =
                    0.9 * bn.running_mean[static_cast<std::size_t>(c)] + 0.1 * mu[static_cast<std::size_t>(c)];
                bn.running_var[static_cast<std::size_t>(c)] =
                    0.9 * bn.running_var[static_cast<std::size_t>(c)] + 0.1 * var[static_cast<std::size_t>(c)];
            }
        }
        for (std::size_t i = 0; i < p; ++i) {
            const double* zi = scratch.data() + i * static_cast<std::size_t>(out);
            double* xh = cache.xhat.data() + i * static_cast<std::size_t>(out);
            double* oi = cache.out.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) {
                const std::size_t cc = static_cast<std::size_t>(c);
                xh[c] = (zi[c] - mu[cc]) * cache.invstd[cc];
                const double y = gamma.values[cc] * xh[c] + beta.values[cc];
                oi[c] = y > 0.0 ? y : 0.0;
            }
        }
    } else {
        for (int c = 0; c < out; ++c)
            cache.invstd[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(bn.running_var[static_cast<std::size_t>(c)] + bn.epsilon);
        for (std::size_t i = 0; i < p; ++i) {
            const double* zi = scratch.data() + i * static_cast<std::size_t>(out);
            double* xh = cache.xhat.data() + i * static_cast<std::size_t>(out);
            double* oi = cache.out.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) {
                const std::size_t cc = static_cast<std::size_t>(c);
                xh[c] = (zi[c] - bn.running_mean[cc]) * cache.invstd[cc];
                const double y = gamma.values[cc] * xh[c] + beta.values[cc];
                oi[c] = y > 0.0 ? y : 0.0;
            }
        }
    }
}

inline ForwardTrace forward(Network& net, const SubCloudBatch& batch, BnMode mode,
                            const std::vector<NeighborIndex>* local_neighbors = nullptr,
                            bool update_running = false) {
    using namespace netidx;
    const NetworkSpec& sp = net.spec;
    ForwardTrace trace;
    trace.mode = mode;
    trace.class_count = sp.class_count;
    prepare_input(sp, batch, trace, local_neighbors);
    const std::size_t p = trace.total_points;
    std::vector<double> scratch;

    block_forward("trunk0", trace.input.data(), p, sp.input_dim(), sp.trunk[0], net.tensor(t0_w),
                  net.tensor(t0_b), net.tensor(t0_g), net.tensor(t0_s), net.bn[0], mode, update_running,
                  trace.trunk[0], scratch);
    block_forward("trunk1", trace.trunk[0].out.data(), p, sp.trunk[0], sp.trunk[1], net.tensor(t1_w),
                  net.tensor(t1_b), net.tensor(t1_g), net.tensor(t1_s), net.bn[1], mode, update_running,
                  trace.trunk[1], scratch);
    block_forward("trunk2", trace.trunk[1].out.data(), p, sp.trunk[1], sp.trunk[2], net.tensor(t2_w),
                  net.tensor(t2_b), net.tensor(t2_g), net.tensor(t2_s), net.bn[2], mode, update_running,
                  trace.trunk[2], scratch);

    // neighborhood max-pool concatenated with the point's own feature
    const int w3 = sp.trunk[2];
    trace.pooled.resize(p * static_cast<std::size_t>(w3));
    trace.pool_argmax.resize(p * static_cast<std::size_t>(w3));
    trace.concat.resize(p * 2 * static_cast<std::size_t>(w3));
    const double* a2 = trace.trunk[2].out.data();
    for (std::size_t i = 0; i < p; ++i) {
        const std::uint32_t* nbr = trace.neighbors.data() + i * static_cast<std::size_t>(sp.k);
        double* pool = trace.pooled.data() + i * static_cast<std::size_t>(w3);
        std::uint32_t* arg = trace.pool_argmax.data() + i * static_cast<std::size_t>(w3);
        const double* first = a2 + static_cast<std::size_t>(nbr[0]) * static_cast<std::size_t>(w3);
        for (int c = 0; c < w3; ++c) {
            pool[c] = first[c];
            arg[c] = nbr[0];
        }
        for (int m = 1; m < sp.k; ++m) {
            const double* cand = a2 + static_cast<std::size_t>(nbr[m]) * static_cast<std::size_t>(w3);
            for (int c = 0; c < w3; ++c) {
                if (cand[c] > pool[c]) {
                    pool[c] = cand[c];
                    arg[c] = nbr[m];
                }
            }
        }
        double* cat = trace.concat.data() + i * 2 * static_cast<std::size_t>(w3);
        const double* own = a2 + i * static_cast<std::size_t>(w3);
        std::memcpy(cat, pool, sizeof(double) * static_cast<std::size_t>(w3));
        std::memcpy(cat + w3, own, sizeof(double) * static_cast<std::size_t>(w3));
    }

    // fusion affine + ReLU (no BN)
    trace.fusion_out.resize(p * static_cast<std::size_t>(sp.fusion));
    detail::affine_forward(trace.concat.data(), p, 2 * w3, sp.fusion, net.tensor(fu_w).values.data(),
                           net.tensor(fu_b).values.data(), trace.fusion_out.data());
    detail::check_finite(trace.fusion_out, "fusion");
    for (double& v : trace.fusion_out) v = v > 0.0 ? v : 0.0;

    block_forward("post0", trace.fusion_out.data(), p, sp.fusion, sp.post[0], net.tensor(p0_w),
                  net.tensor(p0_b), net.tensor(p0_g), net.tensor(p0_s), net.bn[3], mode, update_running,
                  trace.post[0], scratch);
    block_forward("post1", trace.post[0].out.data(), p, sp.post[0], sp.post[1], net.tensor(p1_w),
                  net.tensor(p1_b), net.tensor(p1_g), net.tensor(p1_s), net.bn[4], mode, update_running,
                  trace.post[1], scratch);

    trace.logits.resize(p * static_cast<std::size_t>(sp.class_count));
    detail::affine_forward(trace.post[1].out.data(), p, sp.post[1], sp.class_count,
                           net.tensor(hd_w).values.data(), net.tensor(hd_b).values.data(), trace.logits.data());
    detail::check_finite(trace.logits, "head");
    return trace;
}

namespace detail {

inline void affine_backward(const double* __restrict x, const double* __restrict dy, std::size_t p,
                            int in, int out, const double* __restrict w, ParamTensor& wt,
                            ParamTensor& bt, double* __restrict dx) {
    std::fill(wt.grad.begin(), wt.grad.end(), 0.0);
    std::fill(bt.grad.begin(), bt.grad.end(), 0.0);
    double* __restrict gw_all = wt.grad.data();
    double* __restrict gb = bt.grad.data();
    for (std::size_t i = 0; i < p; ++i) {
        const double* __restrict xi = x + i * static_cast<std::size_t>(in);
        const double* __restrict dyi = dy + i * static_cast<std::size_t>(out);
        for (int j = 0; j < out; ++j) gb[j] += dyi[j];
        for (int c = 0; c < in; ++c) {
            const double xv = xi[c];
            double* __restrict gw = gw_all + static_cast<std::size_t>(c) * static_cast<std::size_t>(out);
            for (int j = 0; j < out; ++j) gw[j] += xv * dyi[j];
        }
    }
    if (dx) {
        for (std::size_t i = 0; i < p; ++i) {
            const double* __restrict dyi = dy + i * static_cast<std::size_t>(out);
            double* __restrict dxi = dx + i * static_cast<std::size_t>(in);
            for (int c = 0; c < in; ++c) {
                const double* __restrict wc = w + static_cast<std::size_t>(c) * static_cast<std::size_t>(out);
                double acc = 0.0;
                for (int j = 0; j < out; ++j) acc += dyi[j] * wc[j];
                dxi[c] = acc;
            }
        }
    }
}

// ReLU + BN + affine backward for one block. `dout` is the gradient at the
// block's post-ReLU output and is consumed in place.
inline void block_backward(const double* x, std::size_t p, int in, int out, ParamTensor& wt,
                           ParamTensor& bt, ParamTensor& gt, ParamTensor& st, const BlockCache& cache,
                           BnMode mode, std::vector<double>& dout, double* dx,
                           std::vector<double>& scratch) {
    // ReLU
    for (std::size_t i = 0; i < p * static_cast<std::size_t>(out); ++i)
        if (cache.out[i] <= 0.0) dout[i] = 0.0;

    std::fill(gt.grad.begin(), gt.grad.end(), 0.0);
    std::fill(st.grad.begin(), st.grad.end(), 0.0);
    scratch.resize(p * static_cast<std::size_t>(out)); // gradient at the affine output

    if (mode == BnMode::BatchStats) {
        std::vector<double> sum_dy(static_cast<std::size_t>(out), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<std::size_t>(out), 0.0);
        for (std::size_t i = 0; i < p; ++i) {
            const double* dyi = dout.data() + i * static_cast<std::size_t>(out);
            const double* xh = cache.xhat.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) {
                sum_dy[static_cast<std::size_t>(c)] += dyi[c];
                sum_dy_xhat[static_cast<std::size_t>(c)] += dyi[c] * xh[c];
            }
        }
        for (int c = 0; c < out; ++c) {
            gt.grad[static_cast<std::size_t>(c)] = sum_dy_xhat[static_cast<std::size_t>(c)];
            st.grad[static_cast<std::size_t>(c)] = sum_dy[static_cast<std::size_t>(c)];
        }
        const double inv_p = 1.0 / static_cast<double>(p);
        for (std::size_t i = 0; i < p; ++i) {
            const double* dyi = dout.data() + i * static_cast<std::size_t>(out);
            const double* xh = cache.xhat.data() + i * static_cast<std::size_t>(out);
            double* dzi = scratch.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) {
                const std::size_t cc = static_cast<std::size_t>(c);
                dzi[c] = gt.values[cc] * cache.invstd[cc] *
                         (dyi[c] - inv_p * sum_dy[cc] - xh[c] * inv_p * sum_dy_xhat[cc]);
            }
        }
    } else {
        for (std::size_t i = 0; i < p; ++i) {
            const double* dyi = dout.data() + i * static_cast<std::size_t>(out);
            const double* xh = cache.xhat.data() + i * static_cast<std::size_t>(out);
            double* dzi = scratch.data() + i * static_cast<std::size_t>(out);
            for (int c = 0; c < out; ++c) {
                const std::size_t cc = static_cast<std::size_t>(c);
                gt.grad[cc] += dyi[c] * xh[c];
                st.grad[cc] += dyi[c];
                dzi[c] = dyi[c] * gt.values[cc] * cache.invstd[cc];
            }
        }
    }
    affine_backward(x, scratch.data(), p, in, out, wt.values.data(), wt, bt, dx);
}

} // namespace detail

// Populates grad on every trainable-candidate tensor from d(loss)/d(logits).
// Overwrite semantics: one backward per loss.
inline void backward(Network& net, const ForwardTrace& trace, const std::vector<double>& dlogits) {
    using namespace netidx;
    const NetworkSpec& sp = net.spec;
    const std::size_t p = trace.total_points;
    if (dlogits.size() != p * static_cast<std::size_t>(sp.class_count))
        throw ValidationError("backward: dlogits shape mismatch");

    std::vector<double> scratch;
    std::vector<double> d_post1(p * static_cast<std::size_t>(sp.post[1]));
    detail::affine_backward(trace.post[1].out.data(), dlogits.data(), p, sp.post[1], sp.class_count,
                            net.tensor(hd_w).values.data(), net.tensor(hd_w), net.tensor(hd_b),
                            d_post1.data());

    std::vector<double> d_post0(p * static_cast<std::size_t>(sp.post[0]));
    detail::block_backward(trace.post[0].out.data(), p, sp.post[0], sp.post[1], net.tensor(p1_w),
                           net.tensor(p1_b), net.tensor(p1_g), net.tensor(p1_s), trace.post[1],
                           trace.mode, d_post1, d_post0.data(), scratch);

    std::vector<double> d_fusion(p * static_cast<std::size_t>(sp.fusion));
    detail::block_backward(trace.fusion_out.data(), p, sp.fusion, sp.post[0], net.tensor(p0_w),
                           net.tensor(p0_b), net.tensor(p0_g), net.tensor(p0_s), trace.post[0],
                           trace.mode, d_post0, d_fusion.data(), scratch);

    // fusion ReLU + affine
    for (std::size_t i = 0; i < d_fusion.size(); ++i)
        if (trace.fusion_out[i] <= 0.0) d_fusion[i] = 0.0;
    const int w3 = sp.trunk[2];
    std::vector<double> d_concat(p * 2 * static_cast<std::size_t>(w3));
    detail::affine_backward(trace.concat.data(), d_fusion.data(), p, 2 * w3, sp.fusion,
                            net.tensor(fu_w).values.data(), net.tensor(fu_w), net.tensor(fu_b),
                            d_concat.data());

    // un-pool: the max winner takes the pooled half, every point keeps its own half
    std::vector<double> d_trunk2(p * static_cast<std::size_t>(w3), 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        const double* dcat = d_concat.data() + i * 2 * static_cast<std::size_t>(w3);
        const std::uint32_t* arg = trace.pool_argmax.data() + i * static_cast<std::size_t>(w3);
        for (int c = 0; c < w3; ++c)
            d_trunk2[static_cast<std::size_t>(arg[c]) * static_cast<std::size_t>(w3) + static_cast<std::size_t>(c)] += dcat[c];
        double* down = d_trunk2.data() + i * static_cast<std::size_t>(w3);
        for (int c = 0; c < w3; ++c) down[c] += dcat[w3 + c];
    }

    std::vector<double> d_trunk1(p * static_cast<std::size_t>(sp.trunk[1]));
    detail::block_backward(trace.trunk[1].out.data(), p, sp.trunk[1], sp.trunk[2], net.tensor(t2_w),
                           net.tensor(t2_b), net.tensor(t2_g), net.tensor(t2_s), trace.trunk[2],
                           trace.mode, d_trunk2, d_trunk1.data(), scratch);
    std::vector<double> d_trunk0(p * static_cast<std::size_t>(sp.trunk[0]));
    detail::block_backward(trace.trunk[0].out.data(), p, sp.trunk[0], sp.trunk[1], net.tensor(t1_w),
                           net.tensor(t1_b), net.tensor(t1_g), net.tensor(t1_s), trace.trunk[1],
                           trace.mode, d_trunk1, d_trunk0.data(), scratch);
    detail::block_backward(trace.input.data(), p, sp.input_dim(), sp.trunk[0], net.tensor(t0_w),
                           net.tensor(t0_b), net.tensor(t0_g), net.tensor(t0_s), trace.trunk[0],
                           trace.mode, d_trunk0, nullptr, scratch);
}

// buf <- momentum*buf + grad; values <- values - lr*buf, on masked-in layers.
// Masked-out layers keep values and momentum untouched.
inline void sgd_step(Network& net, double lr, double momentum, const std::vector<bool>& layer_mask) {
    if (layer_mask.size() != static_cast<std::size_t>(kLayerCount))
        throw ValidationError("sgd_step: layer mask must cover every layer id");
    for (ParamTensor& t : net.params) {
        if (!t.trainable_candidate || !layer_mask[static_cast<std::size_t>(t.layer_id)]) continue;
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            t.momentum[i] = momentum * t.momentum[i] + t.grad[i];
            t.values[i] -= lr * t.momentum[i];
        }
    }
}

// Row-wise softmax of logits/T with max subtraction.
inline std::vector<double> softmax_with_temperature(const std::vector<double>& logits, std::size_t rows,
                                                    int c, double t) {
    if (t <= 0.0) throw ValidationError("softmax temperature must be positive");
    if (logits.size() != rows * static_cast<std::size_t>(c))
        throw ValidationError("softmax: shape mismatch");
    std::vector<double> probs(logits.size());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* zi = logits.data() + i * static_cast<std::size_t>(c);
        double* pi = probs.data() + i * static_cast<std::size_t>(c);
        double mx = zi[0] / t;
        for (int j = 1; j < c; ++j) mx = std::max(mx, zi[j] / t);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            pi[j] = std::exp(zi[j] / t - mx);
            sum += pi[j];
        }
        for (int j = 0; j < c; ++j) pi[j] /= sum;
    }
    return probs;
}

// ---- checkpoint io -----------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'A', 'P', 'C', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v, const char* what) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw StateError(std::string("truncated checkpoint while reading ") + what);
}

inline void write_string(std::ofstream& out, const std::string& s) {
    const std::uint16_t len = static_cast<std::uint16_t>(s.size());
    write_pod(out, len);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::ifstream& in, const char* what) {
    std::uint16_t len = 0;
    read_pod(in, len, what);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw StateError(std::string("truncated checkpoint while reading ") + what);
    return s;
}

inline void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    const std::uint64_t n = v.size();
    write_pod(out, n);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

inline std::vector<double> read_doubles(std::ifstream& in, const char* what) {
    std::uint64_t n = 0;
    read_pod(in, n, what);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw StateError(std::string("truncated checkpoint while reading ") + what);
    return v;
}

} // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 4);
    detail::write_pod(out, kCheckpointVersion);
    const NetworkSpec& sp = net.spec;
    for (std::int32_t v : {sp.trunk[0], sp.trunk[1], sp.trunk[2], sp.fusion, sp.post[0], sp.post[1],
                           sp.k, sp.class_count, sp.feature_count})
        detail::write_pod(out, v);
    detail::write_pod(out, static_cast<std::uint32_t>(net.params.size()));
    for (const ParamTensor& t : net.params) {
        detail::write_string(out, t.name);
        detail::write_pod(out, static_cast<std::int32_t>(t.layer_id));
        detail::write_pod(out, static_cast<std::uint8_t>(t.trainable_candidate ? 1 : 0));
        detail::write_doubles(out, t.values);
        detail::write_doubles(out, t.momentum);
    }
    detail::write_pod(out, static_cast<std::uint32_t>(net.bn.size()));
    for (const BatchNormState& s : net.bn) {
        detail::write_string(out, s.name);
        detail::write_doubles(out, s.running_mean);
        detail::write_doubles(out, s.running_var);
        detail::write_pod(out, s.epsilon);
    }
    if (!out) throw IoError("write failed for checkpoint " + path);
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw StateError("not an APCT checkpoint: " + path);
    std::uint32_t version = 0;
    detail::read_pod(in, version, "version");
    if (version != kCheckpointVersion)
        throw StateError("checkpoint version mismatch: expected " + std::to_string(kCheckpointVersion) +
                         ", found " + std::to_string(version));

    NetworkSpec sp;
    std::int32_t v[9];
    for (auto& x : v) detail::read_pod(in, x, "spec");
    sp.trunk = {v[0], v[1], v[2]};
    sp.fusion = v[3];
    sp.post = {v[4], v[5]};
    sp.k = v[6];
    sp.class_count = v[7];
    sp.feature_count = v[8];

    Network net = init_network(sp, 0);
    std::uint32_t count = 0;
    detail::read_pod(in, count, "tensor count");
    if (count != net.params.size()) throw StateError("checkpoint layout mismatch");
    for (ParamTensor& t : net.params) {
        const std::string name = detail::read_string(in, "tensor name");
        if (name != t.name) throw StateError("checkpoint layout mismatch at tensor " + name);
        std::int32_t layer_id = 0;
        detail::read_pod(in, layer_id, "layer id");
        std::uint8_t trainable = 0;
        detail::read_pod(in, trainable, "trainable flag");
        t.layer_id = layer_id;
        t.trainable_candidate = trainable != 0;
        auto values = detail::read_doubles(in, "values");
        auto momentum = detail::read_doubles(in, "momentum");
        if (values.size() != t.values.size() || momentum.size() != t.momentum.size())
            throw StateError("checkpoint tensor shape mismatch at " + name);
        t.values = std::move(values);
        t.momentum = std::move(momentum);
        std::fill(t.grad.begin(), t.grad.end(), 0.0);
    }
    std::uint32_t bn_count = 0;
    detail::read_pod(in, bn_count, "bn count");
    if (bn_count != net.bn.size()) throw StateError("checkpoint layout mismatch (bn)");
    for (BatchNormState& s : net.bn) {
        const std::string name = detail::read_string(in, "bn name");
        if (name != s.name) throw StateError("checkpoint layout mismatch at bn " + name);
        auto mean = detail::read_doubles(in, "running mean");
        auto var = detail::read_doubles(in, "running var");
        if (mean.size() != s.running_mean.size() || var.size() != s.running_var.size())
            throw StateError("checkpoint bn shape mismatch at " + name);
        s.running_mean = std::move(mean);
        s.running_var = std::move(var);
        detail::read_pod(in, s.epsilon, "bn epsilon");
    }
    return net;
}

inline Network load_checkpoint(const std::string& path, const NetworkSpec& expected) {
    Network net = load_checkpoint(path);
    if (!(net.spec == expected)) throw StateError("checkpoint spec mismatch for " + path);
    return net;
}

} // namespace apcotta
