#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "parallel.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace deepid {

// Dense layer kernels with explicit forward contexts and backward passes.
// Inner reductions accumulate in double and round once on store, which keeps
// central-difference gradient checks inside their tolerance at 32-bit width.

// -------------------------------------------------------------------- conv2d

struct Conv2dCtx {
    Tensor input;    // [N,C,H,W]
    Tensor weights;  // [K,C,kh,kw]
    int stride = 1;
    int pad = 0;
};

struct Conv2dResult {
    Tensor out;  // [N,K,H',W']
    Conv2dCtx ctx;
};

struct Conv2dGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

// Cross-correlation (no kernel flip), zero padding outside the input.
inline Conv2dResult conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int pad) {
    if (input.rank() != 4)
        throw shape_error("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    if (weights.rank() != 4)
        throw shape_error("conv2d: weights must be [K,C,kh,kw], got " + shape_str(weights.shape()));
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
        throw shape_error("conv2d: bias must be [K]=[" + std::to_string(weights.dim(0)) + "], got " +
                          shape_str(bias.shape()));
    if (weights.dim(1) != input.dim(1))
        throw shape_error("conv2d: input has " + std::to_string(input.dim(1)) + " channels but weights expect " +
                          std::to_string(weights.dim(1)));
    if (stride < 1) throw argument_error("conv2d: stride must be >= 1");
    if (pad < 0) throw argument_error("conv2d: pad must be >= 0");

    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t k = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const std::size_t hp = h + 2 * static_cast<std::size_t>(pad);
    const std::size_t wp = w + 2 * static_cast<std::size_t>(pad);
    if (kh == 0 || kw == 0 || kh > hp || kw > wp)
        throw shape_error("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                          " does not fit padded input " + std::to_string(hp) + "x" + std::to_string(wp));
    const std::size_t ho = (hp - kh) / static_cast<std::size_t>(stride) + 1;
    const std::size_t wo = (wp - kw) / static_cast<std::size_t>(stride) + 1;

    Tensor out({n, k, ho, wo});
    const float* in = input.data();
    const float* wt = weights.data();
    const float* bs = bias.data();
    float* o = out.data();

    parallel_for(n * k, [&](std::size_t nk) {
        const std::size_t ni = nk / k, ki = nk % k;
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
                double acc = static_cast<double>(bs[ki]);
                for (std::size_t ci = 0; ci < c; ++ci) {
                    for (std::size_t i = 0; i < kh; ++i) {
                        const long long yy = static_cast<long long>(y * stride + i) - pad;
                        if (yy < 0 || yy >= static_cast<long long>(h)) continue;
                        for (std::size_t j = 0; j < kw; ++j) {
                            const long long xx = static_cast<long long>(x * stride + j) - pad;
                            if (xx < 0 || xx >= static_cast<long long>(w)) continue;
                            acc += static_cast<double>(in[((ni * c + ci) * h + yy) * w + xx]) *
                                   static_cast<double>(wt[((ki * c + ci) * kh + i) * kw + j]);
                        }
                    }
                }
                o[((ni * k + ki) * ho + y) * wo + x] = static_cast<float>(acc);
            }
        }
    });
    return {std::move(out), Conv2dCtx{input, weights, stride, pad}};
}

inline Conv2dGrads conv2d_backward(const Conv2dCtx& ctx, const Tensor& grad_out) {
    const Tensor& input = ctx.input;
    const Tensor& weights = ctx.weights;
    const int stride = ctx.stride, pad = ctx.pad;
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t k = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    if (grad_out.shape() != Shape{n, k, ho, wo})
        throw shape_error("conv2d_backward: grad shape " + shape_str(grad_out.shape()) + " does not match output " +
                          shape_str({n, k, ho, wo}));

    Conv2dGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({k})};
    const float* in = input.data();
    const float* wt = weights.data();
    const float* g = grad_out.data();

    parallel_for(k, [&](std::size_t ki) {
        double bacc = 0.0;
        for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) bacc += static_cast<double>(g[((ni * k + ki) * ho + y) * wo + x]);
        grads.bias[ki] = static_cast<float>(bacc);

        for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t i = 0; i < kh; ++i) {
                for (std::size_t j = 0; j < kw; ++j) {
                    double acc = 0.0;
                    for (std::size_t ni = 0; ni < n; ++ni) {
                        for (std::size_t y = 0; y < ho; ++y) {
                            const long long yy = static_cast<long long>(y * stride + i) - pad;
                            if (yy < 0 || yy >= static_cast<long long>(h)) continue;
                            for (std::size_t x = 0; x < wo; ++x) {
                                const long long xx = static_cast<long long>(x * stride + j) - pad;
                                if (xx < 0 || xx >= static_cast<long long>(w)) continue;
                                acc += static_cast<double>(in[((ni * c + ci) * h + yy) * w + xx]) *
                                       static_cast<double>(g[((ni * k + ki) * ho + y) * wo + x]);
                            }
                        }
                    }
                    grads.weights[((ki * c + ci) * kh + i) * kw + j] = static_cast<float>(acc);
                }
            }
        }
    });

    float* gi = grads.input.data();
    parallel_for(n, [&](std::size_t ni) {
        std::vector<double> acc(c * h * w, 0.0);
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t y = 0; y < ho; ++y) {
                for (std::size_t x = 0; x < wo; ++x) {
                    const double g0 = static_cast<double>(g[((ni * k + ki) * ho + y) * wo + x]);
                    if (g0 == 0.0) continue;
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        for (std::size_t i = 0; i < kh; ++i) {
                            const long long yy = static_cast<long long>(y * stride + i) - pad;
                            if (yy < 0 || yy >= static_cast<long long>(h)) continue;
                            for (std::size_t j = 0; j < kw; ++j) {
                                const long long xx = static_cast<long long>(x * stride + j) - pad;
                                if (xx < 0 || xx >= static_cast<long long>(w)) continue;
                                acc[(ci * h + yy) * w + xx] +=
                                    static_cast<double>(wt[((ki * c + ci) * kh + i) * kw + j]) * g0;
                            }
                        }
                    }
                }
            }
        }
        for (std::size_t t = 0; t < acc.size(); ++t) gi[ni * c * h * w + t] = static_cast<float>(acc[t]);
    });
    return grads;
}

// ------------------------------------------------------------------ maxpool2

struct Maxpool2Ctx {
    Shape in_shape;
    std::vector<std::uint32_t> argmax;  // flat input index per output cell
};

struct Maxpool2Result {
    Tensor out;  // [N,C,floor(H/2),floor(W/2)]
    Maxpool2Ctx ctx;
};

// 2x2 window, stride 2; an odd trailing row/column is dropped. Ties inside a
// window go to the first element in scan order.
inline Maxpool2Result maxpool2(const Tensor& input) {
    if (input.rank() != 4)
        throw shape_error("maxpool2: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h < 2 || w < 2)
        throw shape_error("maxpool2: spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                          " is smaller than the 2x2 window");
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor out({n, c, ho, wo});
    Maxpool2Ctx ctx{input.shape(), std::vector<std::uint32_t>(n * c * ho * wo)};
    const float* in = input.data();
    float* o = out.data();
    parallel_for(n * c, [&](std::size_t plane) {
        const float* p = in + plane * h * w;
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
                std::size_t best = (2 * y) * w + 2 * x;
                float bv = p[best];
                const std::size_t cands[3] = {(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                                              (2 * y + 1) * w + 2 * x + 1};
                for (std::size_t t : cands) {
                    if (p[t] > bv) {
                        bv = p[t];
                        best = t;
                    }
                }
                const std::size_t oi = (plane * ho + y) * wo + x;
                o[oi] = bv;
                ctx.argmax[oi] = static_cast<std::uint32_t>(plane * h * w + best);
            }
        }
    });
    return {std::move(out), std::move(ctx)};
}

inline Tensor maxpool2_backward(const Maxpool2Ctx& ctx, const Tensor& grad_out) {
    const std::size_t n = ctx.in_shape[0], c = ctx.in_shape[1], h = ctx.in_shape[2], w = ctx.in_shape[3];
    if (grad_out.shape() != Shape{n, c, h / 2, w / 2})
        throw shape_error("maxpool2_backward: grad shape " + shape_str(grad_out.shape()) +
                          " does not match pooled output");
    Tensor gin(ctx.in_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) gin[ctx.argmax[i]] += grad_out[i];
    return gin;
}

// ---------------------------------------------------------------------- relu

struct ReluCtx {
    Tensor input;
};

struct ReluResult {
    Tensor out;
    ReluCtx ctx;
};

inline ReluResult relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
    return {std::move(out), ReluCtx{input}};
}

// Subgradient at exactly 0 is 0.
inline Tensor relu_backward(const ReluCtx& ctx, const Tensor& grad_out) {
    if (!ctx.input.same_shape(grad_out))
        throw shape_error("relu_backward: grad shape " + shape_str(grad_out.shape()) + " does not match input " +
                          shape_str(ctx.input.shape()));
    Tensor gin(ctx.input.shape());
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = ctx.input[i] > 0.0f ? grad_out[i] : 0.0f;
    return gin;
}

// -------------------------------------------------------------------- affine

struct AffineCtx {
    Tensor input;    // [N,D]
    Tensor weights;  // [D,M]
};

struct AffineResult {
    Tensor out;  // [N,M]
    AffineCtx ctx;
};

struct AffineGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline AffineResult affine(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.rank() != 2) throw shape_error("affine: input must be [N,D], got " + shape_str(input.shape()));
    if (weights.rank() != 2) throw shape_error("affine: weights must be [D,M], got " + shape_str(weights.shape()));
    if (input.dim(1) != weights.dim(0))
        throw shape_error("affine: inner dimensions disagree, " + shape_str(input.shape()) + " vs " +
                          shape_str(weights.shape()));
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(1))
        throw shape_error("affine: bias must be [M]=[" + std::to_string(weights.dim(1)) + "], got " +
                          shape_str(bias.shape()));
    const std::size_t n = input.dim(0), d = input.dim(1), m = weights.dim(1);
    Tensor out({n, m});
    const float* in = input.data();
    const float* wt = weights.data();
    const float* bs = bias.data();
    float* o = out.data();
    parallel_for(n, [&](std::size_t ni) {
        for (std::size_t mi = 0; mi < m; ++mi) {
            double acc = static_cast<double>(bs[mi]);
            for (std::size_t di = 0; di < d; ++di)
                acc += static_cast<double>(in[ni * d + di]) * static_cast<double>(wt[di * m + mi]);
            o[ni * m + mi] = static_cast<float>(acc);
        }
    });
    return {std::move(out), AffineCtx{input, weights}};
}

inline AffineGrads affine_backward(const AffineCtx& ctx, const Tensor& grad_out) {
    const std::size_t n = ctx.input.dim(0), d = ctx.input.dim(1), m = ctx.weights.dim(1);
    if (grad_out.shape() != Shape{n, m})
        throw shape_error("affine_backward: grad shape " + shape_str(grad_out.shape()) + " does not match output [" +
                          std::to_string(n) + "," + std::to_string(m) + "]");
    AffineGrads grads{Tensor({n, d}), Tensor({d, m}), Tensor({m})};
    const float* in = ctx.input.data();
    const float* wt = ctx.weights.data();
    const float* g = grad_out.data();
    parallel_for(n, [&](std::size_t ni) {
        for (std::size_t di = 0; di < d; ++di) {
            double acc = 0.0;
            for (std::size_t mi = 0; mi < m; ++mi)
                acc += static_cast<double>(g[ni * m + mi]) * static_cast<double>(wt[di * m + mi]);
            grads.input[ni * d + di] = static_cast<float>(acc);
        }
    });
    parallel_for(d, [&](std::size_t di) {
        for (std::size_t mi = 0; mi < m; ++mi) {
            double acc = 0.0;
            for (std::size_t ni = 0; ni < n; ++ni)
                acc += static_cast<double>(in[ni * d + di]) * static_cast<double>(g[ni * m + mi]);
            grads.weights[di * m + mi] = static_cast<float>(acc);
        }
    });
    for (std::size_t mi = 0; mi < m; ++mi) {
        double acc = 0.0;
        for (std::size_t ni = 0; ni < n; ++ni) acc += static_cast<double>(g[ni * m + mi]);
        grads.bias[mi] = static_cast<float>(acc);
    }
    return grads;
}

// -------------------------------------------------------------- softmax_xent

struct SoftmaxXent {
    double loss = 0.0;            // mean over rows
    Tensor grad_logits;           // (softmax - onehot)/N
};

inline SoftmaxXent softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw shape_error("softmax_xent: logits must be [N,K], got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n)
        throw shape_error("softmax_xent: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                          " rows");
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw argument_error("softmax_xent: label " + std::to_string(labels[i]) + " out of range [0," +
                                 std::to_string(k) + ") at row " + std::to_string(i));

    SoftmaxXent r;
    r.grad_logits = Tensor({n, k});
    const float* l = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = static_cast<double>(l[i * k]);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(l[i * k + j]));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(l[i * k + j]) - mx);
        const double lse = mx + std::log(sum);
        total += lse - static_cast<double>(l[i * k + labels[i]]);
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(l[i * k + j]) - mx) / sum;
            const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
            r.grad_logits[i * k + j] = static_cast<float>((p - onehot) / static_cast<double>(n));
        }
    }
    r.loss = total / static_cast<double>(n);
    return r;
}

// ------------------------------------------------------------------ sgd_step

// In place: v <- momentum*v - lr*(grad + weight_decay*param); param <- param + v.
inline void sgd_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                     const std::vector<Tensor*>& velocity, float lr, float momentum, float weight_decay) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw shape_error("sgd_step: parameter, gradient, and velocity lists differ in length");
    if (!(lr > 0.0f)) throw argument_error("sgd_step: lr must be positive");
    if (!(momentum >= 0.0f && momentum < 1.0f)) throw argument_error("sgd_step: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0f)) throw argument_error("sgd_step: weight_decay must be >= 0");
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!params[t]->same_shape(*grads[t]) || !params[t]->same_shape(*velocity[t]))
            throw shape_error("sgd_step: shape mismatch at tensor " + std::to_string(t));
        Tensor& p = *params[t];
        const Tensor& g = *grads[t];
        Tensor& v = *velocity[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum * v[i] - lr * (g[i] + weight_decay * p[i]);
            p[i] += v[i];
        }
    }
}

// --------------------------------------------------------- finite_diff_check

// Central-difference gradient check over randomly sampled coordinates.
// Returns the max of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// The difference quotient divides by the step actually realized in 32-bit
// storage, so linear objectives check out to rounding error.
inline double finite_diff_check(const std::function<double()>& objective, const std::vector<Tensor*>& params,
                                const std::vector<const Tensor*>& analytic_grads, double eps, int samples,
                                RngState& rng) {
    if (!(eps > 0.0)) throw argument_error("finite_diff_check: eps must be positive");
    if (samples < 1) throw argument_error("finite_diff_check: samples must be >= 1");
    if (params.size() != analytic_grads.size())
        throw shape_error("finite_diff_check: parameter and gradient lists differ in length");
    std::size_t total = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!params[t]->same_shape(*analytic_grads[t]))
            throw shape_error("finite_diff_check: shape mismatch at tensor " + std::to_string(t));
        total += params[t]->size();
    }
    if (total == 0) throw argument_error("finite_diff_check: no parameters to check");

    double max_rel = 0.0;
    for (int s = 0; s < samples; ++s) {
        std::size_t flat = rng.index(total);
        std::size_t ti = 0;
        while (flat >= params[ti]->size()) {
            flat -= params[ti]->size();
            ++ti;
        }
        float& p = (*params[ti])[flat];
        const float orig = p;
        p = static_cast<float>(static_cast<double>(orig) + eps);
        const float hi = p;
        const double f_plus = objective();
        p = static_cast<float>(static_cast<double>(orig) - eps);
        const float lo = p;
        const double f_minus = objective();
        p = orig;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw numeric_error("finite_diff_check: objective is not finite near the evaluation point");
        const double step = static_cast<double>(hi) - static_cast<double>(lo);
        const double numeric = (f_plus - f_minus) / step;
        const double analytic = static_cast<double>((*analytic_grads[ti])[flat]);
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ------------------------------------------------------------- small helpers

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw shape_error("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

// Mirror a [C,H,W] image left-right.
inline Tensor hflip_chw(const Tensor& img) {
    if (img.rank() != 3) throw shape_error("hflip_chw: expected [C,H,W], got " + shape_str(img.shape()));
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out(img.shape());
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out(ci, y, x) = img(ci, y, w - 1 - x);
    return out;
}

} // namespace deepid
