#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ops.hpp"

namespace deepid {

// Network shape: four same-padded 3x3 conv stages (stride 1), each followed by
// ReLU and 2x2 max-pooling, with one supervised fully-connected branch
// (feature layer + identity classifier) attached to every pooled stage.
struct ArchConfig {
    int input_h = 32;
    int input_w = 32;
    int input_channels = 1;
    std::array<int, 4> conv_channels{8, 8, 8, 8};
    std::array<int, 4> kernels{3, 3, 3, 3};  // odd, per stage; pad = k/2
    int fc_dim = 64;
    int num_identities = 40;
    std::uint64_t seed = 1;
};

constexpr int kNumStages = 4;

inline void validate(const ArchConfig& cfg) {
    if (cfg.input_h < 1 || cfg.input_w < 1 || cfg.input_channels < 1)
        throw config_error("arch: input dimensions must be positive");
    if (cfg.fc_dim < 1) throw config_error("arch: fc_dim must be positive");
    if (cfg.num_identities < 1) throw config_error("arch: num_identities must be positive");
    int h = cfg.input_h, w = cfg.input_w;
    for (int s = 0; s < kNumStages; ++s) {
        if (cfg.conv_channels[s] < 1) throw config_error("arch: conv_channels must be positive");
        if (cfg.kernels[s] < 1 || cfg.kernels[s] % 2 == 0)
            throw config_error("arch: kernels must be odd and positive (stage " + std::to_string(s + 1) + ")");
        if (h < 2 || w < 2)
            throw config_error("arch: spatial extent collapses below 1x1 at stage " + std::to_string(s + 1) +
                               " (input too small for four pooling stages)");
        h /= 2;
        w /= 2;
    }
}

// Post-pool spatial size of each stage.
inline std::array<std::pair<int, int>, 4> stage_spatial(const ArchConfig& cfg) {
    std::array<std::pair<int, int>, 4> out;
    int h = cfg.input_h, w = cfg.input_w;
    for (int s = 0; s < kNumStages; ++s) {
        h /= 2;
        w /= 2;
        out[s] = {h, w};
    }
    return out;
}

inline std::size_t flat_dim(const ArchConfig& cfg, int stage) {
    const auto hw = stage_spatial(cfg)[stage];
    return static_cast<std::size_t>(cfg.conv_channels[stage]) * hw.first * hw.second;
}

struct ModelParams {
    std::array<Tensor, 4> conv_w, conv_b;  // [K,C,k,k], [K]
    std::array<Tensor, 4> fc_w, fc_b;      // [flat,fc_dim], [fc_dim]
    std::array<Tensor, 4> cls_w, cls_b;    // [fc_dim,num_identities], [num_identities]

    // Fixed serialization / update order: conv stages first, then one
    // (fc_w, fc_b, cls_w, cls_b) block per branch.
    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (int s = 0; s < kNumStages; ++s) {
            out.push_back(&conv_w[s]);
            out.push_back(&conv_b[s]);
        }
        for (int s = 0; s < kNumStages; ++s) {
            out.push_back(&fc_w[s]);
            out.push_back(&fc_b[s]);
            out.push_back(&cls_w[s]);
            out.push_back(&cls_b[s]);
        }
        return out;
    }
    std::vector<const Tensor*> tensors() const {
        std::vector<const Tensor*> out;
        for (int s = 0; s < kNumStages; ++s) {
            out.push_back(&conv_w[s]);
            out.push_back(&conv_b[s]);
        }
        for (int s = 0; s < kNumStages; ++s) {
            out.push_back(&fc_w[s]);
            out.push_back(&fc_b[s]);
            out.push_back(&cls_w[s]);
            out.push_back(&cls_b[s]);
        }
        return out;
    }
};

inline std::vector<std::string> param_tensor_names() {
    std::vector<std::string> names;
    for (int s = 1; s <= kNumStages; ++s) {
        names.push_back("conv" + std::to_string(s) + "_weights");
        names.push_back("conv" + std::to_string(s) + "_bias");
    }
    for (int s = 1; s <= kNumStages; ++s) {
        names.push_back("fc" + std::to_string(s) + "_weights");
        names.push_back("fc" + std::to_string(s) + "_bias");
        names.push_back("fc" + std::to_string(s) + "_cls_weights");
        names.push_back("fc" + std::to_string(s) + "_cls_bias");
    }
    return names;
}

// All-zero parameter set with the shapes the config dictates; used for
// velocity buffers and gradient accumulators.
inline ModelParams zero_params(const ArchConfig& cfg) {
    validate(cfg);
    ModelParams p;
    int in_ch = cfg.input_channels;
    for (int s = 0; s < kNumStages; ++s) {
        const std::size_t k = static_cast<std::size_t>(cfg.conv_channels[s]);
        const std::size_t kk = static_cast<std::size_t>(cfg.kernels[s]);
        p.conv_w[s] = Tensor({k, static_cast<std::size_t>(in_ch), kk, kk});
        p.conv_b[s] = Tensor({k});
        p.fc_w[s] = Tensor({flat_dim(cfg, s), static_cast<std::size_t>(cfg.fc_dim)});
        p.fc_b[s] = Tensor({static_cast<std::size_t>(cfg.fc_dim)});
        p.cls_w[s] = Tensor({static_cast<std::size_t>(cfg.fc_dim), static_cast<std::size_t>(cfg.num_identities)});
        p.cls_b[s] = Tensor({static_cast<std::size_t>(cfg.num_identities)});
        in_ch = cfg.conv_channels[s];
    }
    return p;
}

// Weights ~ N(0, 2/fan_in); biases 0. Deterministic given the rng.
inline ModelParams init_params(const ArchConfig& cfg, RngState& rng) {
    ModelParams p = zero_params(cfg);
    auto fill = [&](Tensor& t, std::size_t fan_in) {
        const double stdev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal() * stdev);
    };
    int in_ch = cfg.input_channels;
    for (int s = 0; s < kNumStages; ++s) {
        fill(p.conv_w[s], static_cast<std::size_t>(in_ch) * cfg.kernels[s] * cfg.kernels[s]);
        in_ch = cfg.conv_channels[s];
    }
    for (int s = 0; s < kNumStages; ++s) {
        fill(p.fc_w[s], flat_dim(cfg, s));
        fill(p.cls_w[s], static_cast<std::size_t>(cfg.fc_dim));
    }
    return p;
}

inline ModelParams init_params(const ArchConfig& cfg) {
    RngState rng(cfg.seed);
    return init_params(cfg, rng);
}

struct BranchOutputs {
    std::array<Tensor, 4> fc;      // [N,fc_dim], post-ReLU
    std::array<Tensor, 4> logits;  // [N,num_identities]
    std::array<Tensor, 4> pooled;  // pooled conv maps, kept for analysis
};

struct ForwardTape {
    std::array<Conv2dCtx, 4> conv;
    std::array<ReluCtx, 4> conv_relu;
    std::array<Maxpool2Ctx, 4> pool;
    std::array<AffineCtx, 4> fc_aff;
    std::array<ReluCtx, 4> fc_relu;
    std::array<AffineCtx, 4> cls_aff;
    std::array<Shape, 4> pooled_shape;
};

// One pass over the shared conv trunk; all four branches are evaluated.
inline std::pair<BranchOutputs, ForwardTape> forward(const ModelParams& params, const ArchConfig& cfg,
                                                     const Tensor& batch) {
    validate(cfg);
    const Shape expect{batch.rank() ? batch.dim(0) : 0, static_cast<std::size_t>(cfg.input_channels),
                       static_cast<std::size_t>(cfg.input_h), static_cast<std::size_t>(cfg.input_w)};
    if (batch.rank() != 4 || batch.shape() != expect)
        throw shape_error("forward: batch shape " + shape_str(batch.shape()) + " does not match config " +
                          shape_str(expect));
    const std::size_t n = batch.dim(0);

    BranchOutputs outs;
    ForwardTape tape;
    Tensor x = batch;
    for (int s = 0; s < kNumStages; ++s) {
        auto cv = conv2d(x, params.conv_w[s], params.conv_b[s], 1, cfg.kernels[s] / 2);
        auto rl = relu(cv.out);
        auto pl = maxpool2(rl.out);
        tape.conv[s] = std::move(cv.ctx);
        tape.conv_relu[s] = std::move(rl.ctx);
        tape.pool[s] = std::move(pl.ctx);
        tape.pooled_shape[s] = pl.out.shape();
        outs.pooled[s] = pl.out;

        Tensor flat = pl.out.reshaped({n, flat_dim(cfg, s)});
        auto aff = affine(flat, params.fc_w[s], params.fc_b[s]);
        auto frl = relu(aff.out);
        auto cls = affine(frl.out, params.cls_w[s], params.cls_b[s]);
        tape.fc_aff[s] = std::move(aff.ctx);
        tape.fc_relu[s] = std::move(frl.ctx);
        tape.cls_aff[s] = std::move(cls.ctx);
        outs.fc[s] = std::move(frl.out);
        outs.logits[s] = std::move(cls.out);

        x = std::move(pl.out);
    }
    return {std::move(outs), std::move(tape)};
}

// Gradients of all parameters given upstream gradients on every branch's
// feature layer and logits. Branch gradients accumulate into the shared trunk.
inline ModelParams model_backward(const ArchConfig& cfg, const ForwardTape& tape,
                                  const std::array<Tensor, 4>& grad_fc, const std::array<Tensor, 4>& grad_logits) {
    ModelParams g = zero_params(cfg);
    std::array<Tensor, 4> grad_pooled;
    for (int s = 0; s < kNumStages; ++s) {
        auto cg = affine_backward(tape.cls_aff[s], grad_logits[s]);
        g.cls_w[s] = std::move(cg.weights);
        g.cls_b[s] = std::move(cg.bias);
        Tensor gfc = add(cg.input, grad_fc[s]);
        Tensor gpre = relu_backward(tape.fc_relu[s], gfc);
        auto ag = affine_backward(tape.fc_aff[s], gpre);
        g.fc_w[s] = std::move(ag.weights);
        g.fc_b[s] = std::move(ag.bias);
        grad_pooled[s] = ag.input.reshaped(tape.pooled_shape[s]);
    }
    Tensor run = std::move(grad_pooled[kNumStages - 1]);
    for (int s = kNumStages - 1; s >= 0; --s) {
        Tensor gr = maxpool2_backward(tape.pool[s], run);
        Tensor gc = relu_backward(tape.conv_relu[s], gr);
        auto cg = conv2d_backward(tape.conv[s], gc);
        g.conv_w[s] = std::move(cg.weights);
        g.conv_b[s] = std::move(cg.bias);
        if (s > 0) run = add(cg.input, grad_pooled[s - 1]);
    }
    return g;
}

// Feature vector of one image from branch `layer` (1-based). With flip, the
// features of the mirrored image are appended, giving length 2*fc_dim.
inline Tensor extract_features(const ModelParams& params, const ArchConfig& cfg, const Tensor& image, int layer,
                               bool with_flip) {
    if (layer < 1 || layer > kNumStages)
        throw argument_error("extract_features: layer must be in 1..4, got " + std::to_string(layer));
    if (image.rank() != 3)
        throw shape_error("extract_features: image must be [C,H,W], got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const std::size_t rows = with_flip ? 2 : 1;
    Tensor batch({rows, c, h, w});
    std::copy(image.data(), image.data() + image.size(), batch.data());
    if (with_flip) {
        Tensor flipped = hflip_chw(image);
        std::copy(flipped.data(), flipped.data() + flipped.size(), batch.data() + image.size());
    }
    auto [outs, tape] = forward(params, cfg, batch);
    (void)tape;
    const Tensor& fc = outs.fc[layer - 1];
    const std::size_t d = fc.dim(1);
    Tensor out({rows * d});
    std::copy(fc.data(), fc.data() + fc.size(), out.data());
    return out;
}

// Features for a list of images, chunked through forward(); row i matches
// extract_features(images[i], ...) bit for bit because every op is
// row-independent.
inline Tensor extract_batch_features(const ModelParams& params, const ArchConfig& cfg,
                                     const std::vector<Tensor>& images, int layer, bool with_flip,
                                     std::size_t chunk = 64) {
    if (layer < 1 || layer > kNumStages)
        throw argument_error("extract_batch_features: layer must be in 1..4, got " + std::to_string(layer));
    const std::size_t n = images.size();
    const std::size_t d = static_cast<std::size_t>(cfg.fc_dim);
    Tensor out({n, with_flip ? 2 * d : d});
    if (n == 0) return out;
    const std::size_t c = images[0].dim(0), h = images[0].dim(1), w = images[0].dim(2);
    for (int pass = 0; pass < (with_flip ? 2 : 1); ++pass) {
        for (std::size_t lo = 0; lo < n; lo += chunk) {
            const std::size_t hi = std::min(n, lo + chunk);
            Tensor batch({hi - lo, c, h, w});
            for (std::size_t i = lo; i < hi; ++i) {
                const Tensor img = pass == 0 ? images[i] : hflip_chw(images[i]);
                if (img.shape() != images[0].shape())
                    throw shape_error("extract_batch_features: image " + std::to_string(i) +
                                      " has shape " + shape_str(images[i].shape()) + ", expected " +
                                      shape_str(images[0].shape()));
                std::copy(img.data(), img.data() + img.size(), batch.data() + (i - lo) * img.size());
            }
            auto [outs, tape] = forward(params, cfg, batch);
            (void)tape;
            const Tensor& fc = outs.fc[layer - 1];
            for (std::size_t i = lo; i < hi; ++i)
                std::copy(fc.data() + (i - lo) * d, fc.data() + (i - lo + 1) * d,
                          out.data() + i * out.dim(1) + static_cast<std::size_t>(pass) * d);
        }
    }
    return out;
}

} // namespace deepid
