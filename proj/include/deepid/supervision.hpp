#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "model.hpp"

namespace deepid {

// Identification-verification objective weights. The margin is the
// contrastive-loss margin on different-identity feature pairs; lambda_ve
// scales the verification term against identification; branch_weights weight
// the four supervised branches.
struct VerifConfig {
    float margin = 2.0f;
    float lambda_ve = 0.05f;
    std::array<float, 4> branch_weights{1.0f, 1.0f, 1.0f, 1.0f};
};

inline void validate(const VerifConfig& vc) {
    if (!(vc.margin > 0.0f)) throw argument_error("verif: margin must be positive");
    if (!(vc.lambda_ve >= 0.0f)) throw argument_error("verif: lambda_ve must be >= 0");
    float total = 0.0f;
    for (float w : vc.branch_weights) {
        if (!(w >= 0.0f)) throw argument_error("verif: branch weights must be >= 0");
        total += w;
    }
    if (!(total > 0.0f)) throw argument_error("verif: at least one branch weight must be positive");
}

struct Pair {
    int a = 0;
    int b = 0;
    bool same = false;
};

struct PairBatch {
    std::vector<Pair> pairs;
};

struct IdentLoss {
    double loss = 0.0;
    Tensor grad;
};

inline IdentLoss ident_loss(const Tensor& logits, const std::vector<int>& labels) {
    auto r = softmax_xent(logits, labels);
    return {r.loss, std::move(r.grad_logits)};
}

struct VerifLoss {
    double loss = 0.0;
    std::vector<float> grad_a, grad_b;
    bool degenerate = false;  // coincident features on a different-identity pair
};

// Same identity: loss = ||fa-fb||^2/2. Different identity: hinge at margin m,
// loss = max(0, m - ||fa-fb||)^2/2. A coincident different-identity pair has
// no gradient direction; it reports loss m^2/2, zero gradients, and the
// degenerate flag.
inline VerifLoss verif_loss(std::span<const float> fa, std::span<const float> fb, bool same, float margin) {
    if (fa.size() != fb.size())
        throw shape_error("verif_loss: feature lengths differ, " + std::to_string(fa.size()) + " vs " +
                          std::to_string(fb.size()));
    if (!(margin > 0.0f)) throw argument_error("verif_loss: margin must be positive");
    const std::size_t d = fa.size();
    std::vector<double> diff(d);
    double d2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        diff[i] = static_cast<double>(fa[i]) - static_cast<double>(fb[i]);
        d2 += diff[i] * diff[i];
    }
    VerifLoss r;
    r.grad_a.assign(d, 0.0f);
    r.grad_b.assign(d, 0.0f);
    if (same) {
        r.loss = 0.5 * d2;
        for (std::size_t i = 0; i < d; ++i) {
            r.grad_a[i] = static_cast<float>(diff[i]);
            r.grad_b[i] = static_cast<float>(-diff[i]);
        }
        return r;
    }
    const double dist = std::sqrt(d2);
    const double m = static_cast<double>(margin);
    if (dist == 0.0) {
        r.loss = 0.5 * m * m;
        r.degenerate = true;
        return r;
    }
    if (dist >= m) return r;
    const double gap = m - dist;
    r.loss = 0.5 * gap * gap;
    const double coef = -gap / dist;
    for (std::size_t i = 0; i < d; ++i) {
        r.grad_a[i] = static_cast<float>(coef * diff[i]);
        r.grad_b[i] = static_cast<float>(-coef * diff[i]);
    }
    return r;
}

struct CombinedObjective {
    double loss = 0.0;
    std::array<Tensor, 4> grad_fc;      // d loss / d fc[n]
    std::array<Tensor, 4> grad_logits;  // d loss / d logits[n]
    int degenerate_pairs = 0;           // coincident negative pairs seen, summed over branches
};

// loss = sum_n w_n * (ident_n + lambda * mean over pairs of verif_n).
// Pair gradients are accumulated in the given pair order.
inline CombinedObjective combined_objective(const BranchOutputs& outs, const std::vector<int>& labels,
                                            const PairBatch& pairs, const VerifConfig& vc) {
    validate(vc);
    const std::size_t n = outs.fc[0].dim(0);
    const std::size_t d = outs.fc[0].dim(1);
    if (vc.lambda_ve > 0.0f && pairs.pairs.empty())
        throw argument_error("combined_objective: verification weight is positive but the pair set is empty");
    for (const Pair& p : pairs.pairs) {
        if (p.a < 0 || p.b < 0 || static_cast<std::size_t>(p.a) >= n || static_cast<std::size_t>(p.b) >= n)
            throw argument_error("combined_objective: pair index out of range");
        if (p.a == p.b) throw argument_error("combined_objective: pair members must differ");
    }

    CombinedObjective r;
    const std::size_t num_pairs = pairs.pairs.size();
    for (int s = 0; s < kNumStages; ++s) {
        const float w = vc.branch_weights[s];
        auto id = ident_loss(outs.logits[s], labels);
        double branch_loss = id.loss;

        r.grad_logits[s] = Tensor(outs.logits[s].shape());
        for (std::size_t i = 0; i < id.grad.size(); ++i) r.grad_logits[s][i] = w * id.grad[i];

        r.grad_fc[s] = Tensor(outs.fc[s].shape());
        if (vc.lambda_ve > 0.0f && num_pairs > 0) {
            const float* fc = outs.fc[s].data();
            std::vector<double> acc(n * d, 0.0);
            double verif_sum = 0.0;
            for (const Pair& p : pairs.pairs) {
                auto vr = verif_loss(std::span<const float>(fc + p.a * d, d),
                                     std::span<const float>(fc + p.b * d, d), p.same, vc.margin);
                verif_sum += vr.loss;
                if (vr.degenerate) ++r.degenerate_pairs;
                for (std::size_t i = 0; i < d; ++i) {
                    acc[p.a * d + i] += vr.grad_a[i];
                    acc[p.b * d + i] += vr.grad_b[i];
                }
            }
            const double scale = static_cast<double>(w) * vc.lambda_ve / static_cast<double>(num_pairs);
            for (std::size_t i = 0; i < acc.size(); ++i) r.grad_fc[s][i] = static_cast<float>(scale * acc[i]);
            branch_loss += static_cast<double>(vc.lambda_ve) * verif_sum / static_cast<double>(num_pairs);
        }
        r.loss += static_cast<double>(w) * branch_loss;
    }
    return r;
}

// Uniform positive pairs among the batch's same-identity pairs and uniform
// negative pairs among its different-identity pairs, with replacement.
inline PairBatch sample_pairs(const std::vector<int>& labels, int positives, int negatives, RngState& rng) {
    const std::size_t n = labels.size();
    if (n < 2) throw argument_error("sample_pairs: batch must contain at least two images");
    if (positives < 0 || negatives < 0) throw argument_error("sample_pairs: pair counts must be >= 0");
    std::vector<std::pair<int, int>> same, diff;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            (labels[i] == labels[j] ? same : diff).emplace_back(static_cast<int>(i), static_cast<int>(j));
    if (positives > 0 && same.empty())
        throw sampling_error("sample_pairs: no same-identity pair available in this batch");
    if (negatives > 0 && diff.empty())
        throw sampling_error("sample_pairs: no different-identity pair available in this batch");
    PairBatch out;
    out.pairs.reserve(static_cast<std::size_t>(positives) + negatives);
    for (int i = 0; i < positives; ++i) {
        const auto& p = same[rng.index(same.size())];
        out.pairs.push_back({p.first, p.second, true});
    }
    for (int i = 0; i < negatives; ++i) {
        const auto& p = diff[rng.index(diff.size())];
        out.pairs.push_back({p.first, p.second, false});
    }
    return out;
}

// Distinct pairs, sampled without replacement; used by evaluation protocols.
inline PairBatch sample_distinct_pairs(const std::vector<int>& labels, int positives, int negatives, RngState& rng) {
    const std::size_t n = labels.size();
    if (n < 2) throw argument_error("sample_distinct_pairs: need at least two images");
    std::vector<std::pair<int, int>> same, diff;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            (labels[i] == labels[j] ? same : diff).emplace_back(static_cast<int>(i), static_cast<int>(j));
    if (static_cast<std::size_t>(positives) > same.size())
        throw argument_error("sample_distinct_pairs: requested " + std::to_string(positives) +
                             " positive pairs but only " + std::to_string(same.size()) + " exist");
    if (static_cast<std::size_t>(negatives) > diff.size())
        throw argument_error("sample_distinct_pairs: requested " + std::to_string(negatives) +
                             " negative pairs but only " + std::to_string(diff.size()) + " exist");
    rng.shuffle(same.begin(), same.end());
    rng.shuffle(diff.begin(), diff.end());
    PairBatch out;
    for (int i = 0; i < positives; ++i) out.pairs.push_back({same[i].first, same[i].second, true});
    for (int i = 0; i < negatives; ++i) out.pairs.push_back({diff[i].first, diff[i].second, false});
    return out;
}

} // namespace deepid
