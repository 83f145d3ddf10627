#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "../common.hpp"
#include "../straighten.hpp"
#include "layers.hpp"
#include "pooling.hpp"
#include "tensor.hpp"

namespace aas::mil {

struct MILConfig {
    std::size_t blocks = 4;
    std::size_t convs_per_block = 3;
    std::size_t filters = 64;
    std::size_t in_channels = 3;

    [[nodiscard]] std::size_t conv_layers() const noexcept { return blocks * convs_per_block; }
    void validate() const {
        if (blocks == 0 || convs_per_block == 0 || filters == 0 || in_channels == 0)
            throw MilError("model config values must be positive");
    }
    friend bool operator==(const MILConfig&, const MILConfig&) = default;
};

template <typename T>
struct ConvParams {
    std::vector<T> kernel;  // [3][3][in][out]
    std::vector<T> bias;
    std::vector<T> gamma;
    std::vector<T> beta;
};

/// Trainable parameters; also used as the gradient container.
template <typename T>
struct Params {
    std::vector<ConvParams<T>> convs;
    std::vector<T> dense_w;
    T dense_b{};
    T alpha{};

    static Params zeros(const MILConfig& cfg) {
        Params p;
        std::size_t in = cfg.in_channels;
        for (std::size_t l = 0; l < cfg.conv_layers(); ++l) {
            p.convs.push_back({std::vector<T>(9 * in * cfg.filters), std::vector<T>(cfg.filters),
                               std::vector<T>(cfg.filters), std::vector<T>(cfg.filters)});
            in = cfg.filters;
        }
        p.dense_w.assign(cfg.filters, T(0));
        return p;
    }

    /// Parameter groups in checkpoint order.
    std::vector<std::span<T>> groups() {
        std::vector<std::span<T>> g;
        for (auto& c : convs) {
            g.emplace_back(c.kernel);
            g.emplace_back(c.bias);
            g.emplace_back(c.gamma);
            g.emplace_back(c.beta);
        }
        g.emplace_back(dense_w);
        g.emplace_back(&dense_b, 1);
        g.emplace_back(&alpha, 1);
        return g;
    }
    std::vector<std::span<const T>> groups() const {
        std::vector<std::span<const T>> g;
        for (auto s : const_cast<Params*>(this)->groups()) g.emplace_back(s.data(), s.size());
        return g;
    }
    static std::vector<std::string> group_names(const MILConfig& cfg) {
        std::vector<std::string> n;
        for (std::size_t l = 0; l < cfg.conv_layers(); ++l) {
            const std::string p = "conv" + std::to_string(l) + ".";
            n.push_back(p + "kernel");
            n.push_back(p + "bias");
            n.push_back(p + "gamma");
            n.push_back(p + "beta");
        }
        n.insert(n.end(), {"dense.weight", "dense.bias", "alpha"});
        return n;
    }
    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        for (auto g : groups()) n += g.size();
        return n;
    }
};

template <typename T>
struct RunningStats {
    std::vector<T> mean;
    std::vector<T> var;
};

/// Per-slice CNN: blocks of (conv3x3 -> batchnorm -> relu) x convs_per_block,
/// each block followed by pad-to-even and 2x2 max pooling; then global average
/// pooling, a dense layer and a sigmoid. Slice scores are combined with
/// adaptive pooling of sharpness `alpha`.
template <typename T>
struct MILModel {
    MILConfig config;
    Params<T> params;
    std::vector<RunningStats<T>> running;

    static MILModel initialize(const MILConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        MILModel m;
        m.config = cfg;
        m.params = Params<T>::zeros(cfg);
        std::mt19937_64 rng(seed);
        std::size_t in = cfg.in_channels;
        for (auto& c : m.params.convs) {
            const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& w : c.kernel) w = static_cast<T>(u(rng));
            std::fill(c.gamma.begin(), c.gamma.end(), T(1));
            in = cfg.filters;
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(cfg.filters + 1));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& w : m.params.dense_w) w = static_cast<T>(u(rng));
        m.params.dense_b = T(0);
        m.params.alpha = T(1);
        m.running.assign(cfg.conv_layers(), {std::vector<T>(cfg.filters, T(0)), std::vector<T>(cfg.filters, T(1))});
        return m;
    }

    template <typename U>
    [[nodiscard]] MILModel<U> cast() const {
        MILModel<U> o;
        o.config = config;
        o.params = Params<U>::zeros(config);
        auto dst = o.params.groups();
        auto src = params.groups();
        for (std::size_t g = 0; g < src.size(); ++g)
            for (std::size_t i = 0; i < src[g].size(); ++i) dst[g][i] = static_cast<U>(src[g][i]);
        for (const auto& r : running)
            o.running.push_back({std::vector<U>(r.mean.begin(), r.mean.end()), std::vector<U>(r.var.begin(), r.var.end())});
        return o;
    }
};

// ---------------------------------------------------------------------------
// Forward / backward over a batch of images (sizes may differ).

template <typename T>
struct ForwardCache {
    struct Layer {
        std::vector<FeatureMap<T>> input;      // conv input
        BnCache<T> bn;
        std::vector<FeatureMap<T>> activated;  // relu output
    };
    struct Pool {
        std::vector<std::size_t> h, w;                  // shape before padding
        std::vector<std::size_t> ph, pw;                // padded shape
        std::vector<std::vector<std::uint32_t>> argmax;
    };
    std::vector<Layer> layers;
    std::vector<Pool> pools;
    std::vector<std::vector<T>> gap;
    std::vector<std::size_t> final_h, final_w;
    std::vector<T> logits;
};

/// Relu on/off states ([layer][image][element]) and max-pool argmaxes
/// ([block][image][element]) captured from a forward pass. Replaying a pattern
/// evaluates the smooth piece of the network that backprop differentiates.
struct ActivationPattern {
    std::vector<std::vector<std::vector<std::uint8_t>>> relu;
    std::vector<std::vector<std::vector<std::uint32_t>>> argmax;

    template <typename T>
    static ActivationPattern from(const ForwardCache<T>& c) {
        ActivationPattern p;
        for (const auto& l : c.layers) {
            auto& layer = p.relu.emplace_back();
            for (const auto& a : l.activated) {
                auto& m = layer.emplace_back(a.data.size());
                for (std::size_t e = 0; e < a.data.size(); ++e) m[e] = a.data[e] > T(0) ? 1 : 0;
            }
        }
        for (const auto& pool : c.pools) p.argmax.push_back(pool.argmax);
        return p;
    }
    friend bool operator==(const ActivationPattern&, const ActivationPattern&) = default;
};

template <typename T>
void check_images(const MILModel<T>& m, const std::vector<FeatureMap<T>>& images) {
    if (images.empty()) throw MilError("forward: empty batch");
    if (m.params.convs.size() != m.config.conv_layers() || m.running.size() != m.config.conv_layers())
        throw MilError("forward: model parameters do not match config");
    for (const auto& x : images) {
        if (x.c != m.config.in_channels)
            throw MilError("forward: image has " + std::to_string(x.c) + " channels, model expects " +
                           std::to_string(m.config.in_channels));
        if (x.h == 0 || x.w == 0) throw MilError("forward: empty image");
    }
}

/// Per-image logits. In train mode batch statistics are used (and reported
/// through the cache); the model itself is never modified.
template <typename T>
std::vector<T> forward(const MILModel<T>& m, std::vector<FeatureMap<T>> images, BnMode mode,
                       ForwardCache<T>* cache = nullptr, unsigned threads = 1,
                       const ActivationPattern* pattern = nullptr) {
    check_images(m, images);
    if (pattern && (pattern->relu.size() != m.config.conv_layers() || pattern->argmax.size() != m.config.blocks))
        throw MilError("forward: activation pattern does not match model");
    const auto& cfg = m.config;
    const std::size_t n = images.size();
    if (cache) {
        *cache = {};
        cache->layers.resize(cfg.conv_layers());
        cache->pools.resize(cfg.blocks);
    }
    std::size_t l = 0;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        for (std::size_t k = 0; k < cfg.convs_per_block; ++k, ++l) {
            const auto& p = m.params.convs[l];
            std::vector<FeatureMap<T>> out(n);
            parallel_for(n, threads, [&](std::size_t i) {
                out[i] = conv2d_forward<T>(images[i], p.kernel, p.bias, cfg.filters);
            });
            if (cache) cache->layers[l].input = std::move(images);
            batchnorm_forward<T>(out, p.gamma, p.beta, m.running[l].mean, m.running[l].var, mode,
                                 cache ? &cache->layers[l].bn : nullptr);
            for (std::size_t i = 0; i < n; ++i) {
                auto& x = out[i];
                if (pattern) {
                    const auto& mask = pattern->relu[l].at(i);
                    if (mask.size() != x.data.size()) throw MilError("forward: activation pattern shape mismatch");
                    for (std::size_t e = 0; e < x.data.size(); ++e) x.data[e] = mask[e] ? x.data[e] : T(0);
                } else {
                    relu_inplace(x);
                }
                require_finite(x.data, "activation");
            }
            if (cache) cache->layers[l].activated = out;
            images = std::move(out);
        }
        std::vector<FeatureMap<T>> pooled(n);
        if (cache) {
            auto& pc = cache->pools[b];
            pc.h.resize(n), pc.w.resize(n), pc.ph.resize(n), pc.pw.resize(n), pc.argmax.resize(n);
        }
        parallel_for(n, threads, [&](std::size_t i) {
            auto padded = pad_to_even(images[i]);
            auto res = maxpool2x2(padded);
            if (pattern) {
                const auto& am = pattern->argmax[b].at(i);
                if (am.size() != res.argmax.size()) throw MilError("forward: activation pattern shape mismatch");
                for (std::size_t o = 0; o < am.size(); ++o) res.out.data[o] = padded.data[am[o]];
                res.argmax = am;
            }
            if (cache) {
                auto& pc = cache->pools[b];
                pc.h[i] = images[i].h, pc.w[i] = images[i].w, pc.ph[i] = padded.h, pc.pw[i] = padded.w;
                pc.argmax[i] = std::move(res.argmax);
            }
            pooled[i] = std::move(res.out);
        });
        images = std::move(pooled);
    }
    std::vector<T> logits(n);
    if (cache) cache->gap.resize(n), cache->final_h.resize(n), cache->final_w.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& x = images[i];
        std::vector<T> g(x.c, T(0));
        for (std::size_t p = 0; p < x.pixels(); ++p)
            for (std::size_t ch = 0; ch < x.c; ++ch) g[ch] += x.data[p * x.c + ch];
        T z = m.params.dense_b;
        for (std::size_t ch = 0; ch < x.c; ++ch) {
            g[ch] /= static_cast<T>(x.pixels());
            z += m.params.dense_w[ch] * g[ch];
        }
        logits[i] = z;
        if (cache) cache->gap[i] = std::move(g), cache->final_h[i] = x.h, cache->final_w[i] = x.w;
    }
    require_finite(logits, "slice logits");
    if (cache) cache->logits = logits;
    return logits;
}

/// Gradients of the CNN and dense head given dLoss/dlogit. The alpha entry of
/// the result is left at zero. Per-image weight gradients are summed in image
/// order, so the result does not depend on `threads`.
template <typename T>
Params<T> backward(const MILModel<T>& m, const ForwardCache<T>& cache, const std::vector<T>& dlogits, BnMode mode,
                   unsigned threads = 1) {
    const auto& cfg = m.config;
    const std::size_t n = dlogits.size();
    Params<T> g = Params<T>::zeros(cfg);

    std::vector<FeatureMap<T>> grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.dense_b += dlogits[i];
        for (std::size_t ch = 0; ch < cfg.filters; ++ch) g.dense_w[ch] += dlogits[i] * cache.gap[i][ch];
        FeatureMap<T> d(cache.final_h[i], cache.final_w[i], cfg.filters);
        const T inv = T(1) / static_cast<T>(d.pixels());
        for (std::size_t p = 0; p < d.pixels(); ++p)
            for (std::size_t ch = 0; ch < cfg.filters; ++ch) d.data[p * cfg.filters + ch] = dlogits[i] * m.params.dense_w[ch] * inv;
        grad[i] = std::move(d);
    }

    std::size_t l = cfg.conv_layers();
    for (std::size_t b = cfg.blocks; b-- > 0;) {
        const auto& pc = cache.pools[b];
        parallel_for(n, threads, [&](std::size_t i) {
            auto dp = maxpool2x2_backward(grad[i], pc.argmax[i], pc.ph[i], pc.pw[i]);
            FeatureMap<T> d(pc.h[i], pc.w[i], cfg.filters);
            for (std::size_t r = 0; r < d.h; ++r)
                for (std::size_t c = 0; c < d.w; ++c)
                    for (std::size_t ch = 0; ch < d.c; ++ch) d.at(r, c, ch) = dp.at(r, c, ch);
            grad[i] = std::move(d);
        });
        for (std::size_t k = 0; k < cfg.convs_per_block; ++k) {
            --l;
            const auto& lc = cache.layers[l];
            auto& gp = g.convs[l];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t e = 0; e < grad[i].data.size(); ++e)
                    if (!(lc.activated[i].data[e] > T(0))) grad[i].data[e] = T(0);
            batchnorm_backward<T>(grad, lc.bn, m.params.convs[l].gamma, mode, gp.gamma, gp.beta);

            const bool need_dx = l > 0;
            std::vector<std::vector<T>> dk(n), db(n);
            std::vector<FeatureMap<T>> dx(n);
            parallel_for(n, threads, [&](std::size_t i) {
                dk[i].resize(gp.kernel.size());
                db[i].resize(gp.bias.size());
                conv2d_backward<T>(lc.input[i], m.params.convs[l].kernel, grad[i], dk[i], db[i],
                                   need_dx ? &dx[i] : nullptr);
            });
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t e = 0; e < gp.kernel.size(); ++e) gp.kernel[e] += dk[i][e];
                for (std::size_t e = 0; e < gp.bias.size(); ++e) gp.bias[e] += db[i][e];
            }
            if (need_dx) grad = std::move(dx);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Bag-level loss over a batch of volumes.

template <typename T>
struct Bag {
    std::vector<FeatureMap<T>> slices;
    int label = 0;
};

template <typename T>
struct BatchResult {
    T loss{};                       // mean BCE over bags
    std::vector<T> bag_scores;      // P per bag
    Params<T> grads;                // empty unless requested
    std::vector<BnCache<T>> bn;     // batch statistics (train mode)
};

template <typename T>
BatchResult<T> bag_loss(const MILModel<T>& m, const std::vector<Bag<T>>& bags, BnMode mode, bool with_grads,
                        unsigned threads = 1, ForwardCache<T>* cache_out = nullptr,
                        const ActivationPattern* pattern = nullptr) {
    if (bags.empty()) throw MilError("bag_loss: empty batch");
    std::vector<FeatureMap<T>> images;
    std::vector<std::size_t> offset{0};
    for (const auto& bag : bags) {
        if (bag.slices.empty()) throw MilError("bag_loss: bag without slices");
        images.insert(images.end(), bag.slices.begin(), bag.slices.end());
        offset.push_back(images.size());
    }
    ForwardCache<T> local;
    ForwardCache<T>* cache = cache_out ? cache_out : &local;
    const auto logits = mil::forward<T>(m, std::move(images), mode, cache, threads, pattern);

    BatchResult<T> res;
    res.bag_scores.resize(bags.size());
    std::vector<T> dlogits(logits.size(), T(0));
    T dalpha = 0;
    const T inv_b = T(1) / static_cast<T>(bags.size());
    for (std::size_t b = 0; b < bags.size(); ++b) {
        std::vector<T> p(logits.begin() + static_cast<std::ptrdiff_t>(offset[b]),
                         logits.begin() + static_cast<std::ptrdiff_t>(offset[b + 1]));
        for (auto& v : p) v = sigmoid(v);
        const auto pool = adaptive_pool<T>(p, m.params.alpha);
        const auto l = bce_loss<T>(pool.value, bags[b].label);
        if (!std::isfinite(l.loss)) throw MilError("bag_loss: non-finite loss");
        res.loss += l.loss * inv_b;
        res.bag_scores[b] = pool.value;
        const T dP = l.d_prob * inv_b;
        dalpha += dP * pool.d_alpha;
        for (std::size_t i = 0; i < p.size(); ++i)
            dlogits[offset[b] + i] = dP * pool.d_scores[i] * p[i] * (T(1) - p[i]);
    }
    if (with_grads) {
        res.grads = backward(m, *cache, dlogits, mode, threads);
        res.grads.alpha = dalpha;
    }
    if (mode == BnMode::Train)
        for (auto& layer : cache->layers) res.bn.push_back(layer.bn);
    return res;
}

template <typename T>
void apply_running_stats(MILModel<T>& m, const std::vector<BnCache<T>>& bn, double momentum = kBnMomentum) {
    for (std::size_t l = 0; l < bn.size(); ++l) update_running_stats<T>(bn[l], m.running[l].mean, m.running[l].var, momentum);
}

// ---------------------------------------------------------------------------
// Inference helpers.

template <typename T>
std::vector<FeatureMap<T>> to_feature_maps(const SliceSample& s) {
    std::vector<FeatureMap<T>> out;
    out.reserve(s.count());
    for (std::size_t i = 0; i < s.count(); ++i) {
        FeatureMap<T> f(s.rows, s.cols, SliceSample::channels);
        const float* src = s.slice(i);
        for (std::size_t e = 0; e < f.data.size(); ++e) f.data[e] = static_cast<T>(src[e]);
        out.push_back(std::move(f));
    }
    return out;
}

/// p(Y|slice) in inference mode.
template <typename T>
T slice_score(const MILModel<T>& m, const FeatureMap<T>& slice) {
    return sigmoid(mil::forward<T>(m, std::vector<FeatureMap<T>>{slice}, BnMode::Infer).front());
}

template <typename T>
std::vector<T> slice_scores(const MILModel<T>& m, std::vector<FeatureMap<T>> slices, unsigned threads = 1) {
    auto z = mil::forward<T>(m, std::move(slices), BnMode::Infer, nullptr, threads);
    for (auto& v : z) v = sigmoid(v);
    return z;
}

struct Prediction {
    double score = 0.0;
    std::vector<std::size_t> indices;
    std::vector<double> slice_scores;
};

/// Volume score from a seeded draw of `slice_count` slices.
template <typename T>
Prediction predict(const MILModel<T>& m, const StraightenedVolume& sv, std::size_t slice_count, std::uint64_t seed,
                   unsigned threads = 1) {
    if (!sv.normalized) throw MilError("predict: volume is not normalized");
    const auto sample = sample_slices(sv, slice_count, seed);
    const auto p = slice_scores(m, to_feature_maps<T>(sample), threads);
    Prediction out;
    out.indices = sample.indices;
    out.slice_scores.assign(p.begin(), p.end());
    out.score = static_cast<double>(adaptive_pool<T>(p, m.params.alpha).value);
    return out;
}

/// Scores every slice of the volume (for localisation), in slice order.
template <typename T>
std::vector<double> score_all_slices(const MILModel<T>& m, const StraightenedVolume& sv, unsigned threads = 1,
                                     std::size_t chunk = 64) {
    if (!sv.normalized) throw MilError("score_all_slices: volume is not normalized");
    std::vector<double> out;
    out.reserve(sv.slices);
    for (std::size_t start = 0; start < sv.slices; start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(sv.slices, start + chunk); ++i) idx.push_back(i);
        const auto p = slice_scores(m, to_feature_maps<T>(gather_slices(sv, idx)), threads);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "AASMIL\0\0", uint32 version, uint32 config[4], then every
// tensor as (uint32 length, float32 data...) in declared order: per conv layer
// kernel, bias, gamma, beta, running_mean, running_var; then dense weight,
// dense bias, alpha. All little-endian.

inline constexpr char kCheckpointMagic[8] = {'A', 'A', 'S', 'M', 'I', 'L', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& o, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    o.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw MilError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
void put_tensor(std::ostream& o, std::span<const T> v) {
    put_u32(o, static_cast<std::uint32_t>(v.size()));
    for (T x : v) {
        const float f = static_cast<float>(x);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(o, u);
    }
}

template <typename T>
void get_tensor(std::istream& in, std::span<T> v) {
    if (get_u32(in) != v.size()) throw MilError("checkpoint: tensor length does not match config");
    for (auto& x : v) {
        const std::uint32_t u = get_u32(in);
        float f;
        std::memcpy(&f, &u, 4);
        if (!std::isfinite(f)) throw MilError("checkpoint: non-finite parameter");
        x = static_cast<T>(f);
    }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const MILModel<T>& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MilError("cannot write checkpoint '" + path.string() + "'");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    for (std::size_t v : {m.config.blocks, m.config.convs_per_block, m.config.filters, m.config.in_channels})
        detail::put_u32(out, static_cast<std::uint32_t>(v));
    for (std::size_t l = 0; l < m.params.convs.size(); ++l) {
        const auto& c = m.params.convs[l];
        detail::put_tensor<T>(out, c.kernel);
        detail::put_tensor<T>(out, c.bias);
        detail::put_tensor<T>(out, c.gamma);
        detail::put_tensor<T>(out, c.beta);
        detail::put_tensor<T>(out, m.running[l].mean);
        detail::put_tensor<T>(out, m.running[l].var);
    }
    detail::put_tensor<T>(out, m.params.dense_w);
    detail::put_tensor<T>(out, std::span<const T>(&m.params.dense_b, 1));
    detail::put_tensor<T>(out, std::span<const T>(&m.params.alpha, 1));
    if (!out) throw MilError("checkpoint write failed");

    auto side = path;
    side += ".txt";
    std::ofstream s(side, std::ios::trunc);
    if (!s) throw MilError("cannot write checkpoint sidecar '" + side.string() + "'");
    s << "format AASMIL v" << kCheckpointVersion << "\n"
      << "blocks " << m.config.blocks << "\nconvs_per_block " << m.config.convs_per_block << "\nfilters "
      << m.config.filters << "\nin_channels " << m.config.in_channels << "\n";
    std::size_t in = m.config.in_channels;
    for (std::size_t l = 0; l < m.params.convs.size(); ++l) {
        s << "conv" << l << ".kernel 3x3x" << in << "x" << m.config.filters << "\n";
        for (const char* t : {"bias", "gamma", "beta", "running_mean", "running_var"})
            s << "conv" << l << "." << t << " " << m.config.filters << "\n";
        in = m.config.filters;
    }
    s << "dense.weight " << m.config.filters << "\ndense.bias 1\nalpha 1\n"
      << "trainable_parameters " << m.params.count() << "\n"
      << "alpha_value " << aas::detail::format_double(static_cast<double>(m.params.alpha)) << "\n";
}

template <typename T = float>
MILModel<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MilError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw MilError("checkpoint: bad magic");
    if (detail::get_u32(in) != kCheckpointVersion) throw MilError("checkpoint: unsupported version");
    MILConfig cfg;
    cfg.blocks = detail::get_u32(in);
    cfg.convs_per_block = detail::get_u32(in);
    cfg.filters = detail::get_u32(in);
    cfg.in_channels = detail::get_u32(in);
    cfg.validate();
    MILModel<T> m = MILModel<T>::initialize(cfg, 0);
    for (std::size_t l = 0; l < m.params.convs.size(); ++l) {
        auto& c = m.params.convs[l];
        detail::get_tensor<T>(in, c.kernel);
        detail::get_tensor<T>(in, c.bias);
        detail::get_tensor<T>(in, c.gamma);
        detail::get_tensor<T>(in, c.beta);
        detail::get_tensor<T>(in, m.running[l].mean);
        detail::get_tensor<T>(in, m.running[l].var);
        for (T v : m.running[l].var)
            if (v < T(0)) throw MilError("checkpoint: negative running variance");
    }
    detail::get_tensor<T>(in, m.params.dense_w);
    detail::get_tensor<T>(in, std::span<T>(&m.params.dense_b, 1));
    detail::get_tensor<T>(in, std::span<T>(&m.params.alpha, 1));
    if (in.peek() != std::char_traits<char>::eof()) throw MilError("checkpoint: trailing bytes");
    return m;
}

}  // namespace aas::mil
