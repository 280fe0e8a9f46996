#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "facegen.hpp"
#include "model.hpp"
#include "verify.hpp"

namespace deepid {

// "Activated" always means strictly positive, the same notion binarize() uses
// at threshold 0.

// ------------------------------------------------------------------- sparsity

struct Histogram {
    double lo = 0.0;
    double width = 1.0;
    std::vector<std::size_t> counts;
};

struct SparsityReport {
    std::vector<int> per_image;   // activated neurons per image
    std::vector<int> per_neuron;  // images on which each neuron is activated
    Histogram image_hist;         // bin width ceil(D/64)
    Histogram neuron_hist;        // bin width ceil(N/64)
    double image_mean = 0.0, image_std = 0.0;
    double neuron_mean = 0.0, neuron_std = 0.0;
    double image_rate = 0.0;   // image_mean / D
    double neuron_rate = 0.0;  // neuron_mean / N
};

namespace detail {

inline void mean_std(const std::vector<int>& v, double& mean, double& stdev) {
    double sum = 0.0;
    for (int x : v) sum += x;
    mean = sum / static_cast<double>(v.size());
    double var = 0.0;
    for (int x : v) var += (x - mean) * (x - mean);
    stdev = std::sqrt(var / static_cast<double>(v.size()));
}

inline Histogram count_histogram(const std::vector<int>& counts, std::size_t max_count) {
    Histogram h;
    h.width = static_cast<double>((max_count + 63) / 64);
    if (h.width < 1.0) h.width = 1.0;
    h.counts.assign(static_cast<std::size_t>(max_count / static_cast<std::size_t>(h.width)) + 1, 0);
    for (int c : counts) h.counts[static_cast<std::size_t>(c / static_cast<std::size_t>(h.width))] += 1;
    return h;
}

} // namespace detail

inline SparsityReport sparsity_report(const Tensor& features) {
    if (features.rank() != 2 || features.dim(0) < 1 || features.dim(1) < 1)
        throw argument_error("sparsity_report: features must be a non-empty [N,D] matrix, got " +
                             shape_str(features.shape()));
    const std::size_t n = features.dim(0), d = features.dim(1);
    SparsityReport r;
    r.per_image.assign(n, 0);
    r.per_neuron.assign(d, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (features(i, j) > 0.0f) {
                r.per_image[i] += 1;
                r.per_neuron[j] += 1;
            }
    r.image_hist = detail::count_histogram(r.per_image, d);
    r.neuron_hist = detail::count_histogram(r.per_neuron, n);
    detail::mean_std(r.per_image, r.image_mean, r.image_std);
    detail::mean_std(r.per_neuron, r.neuron_mean, r.neuron_std);
    r.image_rate = r.image_mean / static_cast<double>(d);
    r.neuron_rate = r.neuron_mean / static_cast<double>(n);
    return r;
}

// ------------------------------------------------------- binarization table

struct PairIdx {
    int a = 0;
    int b = 0;
    bool same = false;
};

struct BinarizationTable {
    VerifAccuracy real_jb, real_l2, binary_jb, binary_hamming;
};

namespace detail {

inline Tensor codes_as_features(const std::vector<BinaryCode>& codes) {
    const std::size_t n = codes.size(), d = n ? codes[0].bits.size() : 0;
    Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) t(i, j) = static_cast<float>(codes[i].bits[j]);
    return t;
}

inline void check_pairs(const std::vector<PairIdx>& pairs, std::size_t n, const char* who) {
    for (const PairIdx& p : pairs)
        if (p.a < 0 || p.b < 0 || static_cast<std::size_t>(p.a) >= n || static_cast<std::size_t>(p.b) >= n)
            throw argument_error(std::string(who) + ": pair index out of range");
}

} // namespace detail

// Real-valued vs binarized FC features under Joint Bayesian / L2 / Hamming,
// one k-fold verification accuracy per cell with the folds shared across
// cells. The Joint Bayesian fit set must be identity-disjoint from the
// evaluation set.
inline BinarizationTable binarization_experiment(const Tensor& eval_features, const std::vector<int>& eval_ids,
                                                 const std::vector<PairIdx>& pairs, int folds,
                                                 const Tensor& fit_features, const std::vector<int>& fit_ids,
                                                 double shrinkage = 0.01, int em_iters = 2) {
    detail::check_pairs(pairs, eval_features.dim(0), "binarization_experiment");
    {
        const std::set<int> eval_set(eval_ids.begin(), eval_ids.end());
        for (int id : fit_ids)
            if (eval_set.count(id))
                throw protocol_error("binarization_experiment: identity " + std::to_string(id) +
                                     " is in both the Joint Bayesian fit set and the evaluation set");
    }
    BinarizationTable out;
    const JointBayesModel jb_real = fit_joint_bayes(fit_features, fit_ids, shrinkage, em_iters);
    const std::vector<BinaryCode> eval_bits = binarize(eval_features);
    const std::vector<BinaryCode> fit_bits = binarize(fit_features);
    const Tensor eval_bin = detail::codes_as_features(eval_bits);
    const Tensor fit_bin = detail::codes_as_features(fit_bits);
    const JointBayesModel jb_bin = fit_joint_bayes(fit_bin, fit_ids, shrinkage, em_iters);

    std::vector<ScoredPair> s_rjb, s_rl2, s_bjb, s_bham;
    for (const PairIdx& p : pairs) {
        const auto a = row_of(eval_features, p.a), b = row_of(eval_features, p.b);
        const auto ba = row_of(eval_bin, p.a), bb = row_of(eval_bin, p.b);
        s_rjb.push_back({jb_log_ratio(jb_real, a, b), p.same});
        s_rl2.push_back({l2_score(a, b), p.same});
        s_bjb.push_back({jb_log_ratio(jb_bin, ba, bb), p.same});
        s_bham.push_back({hamming_score(eval_bits[p.a], eval_bits[p.b]), p.same});
    }
    out.real_jb = verification_accuracy(s_rjb, folds);
    out.real_l2 = verification_accuracy(s_rl2, folds);
    out.binary_jb = verification_accuracy(s_bjb, folds);
    out.binary_hamming = verification_accuracy(s_bham, folds);
    return out;
}

// ---------------------------------------------------------------- selectivity

struct NeuronStat {
    std::size_t neuron = 0;
    double target_mean = 0.0, target_std = 0.0;
    double comp_mean = 0.0, comp_std = 0.0;
    double best_threshold = 0.0;      // from the first fold
    bool excitatory = true;           // target mean above complement mean
    double train_acc = 0.0;           // balanced, mean over the two folds' training halves
    double heldout_acc = 0.0;         // balanced, two-fold cross-validated
};

struct SelectivityReport {
    std::vector<NeuronStat> neurons;
    std::size_t best_neuron = 0;
    double best_heldout_acc = 0.0;
};

namespace detail {

// Balanced accuracy of the threshold rule: excitatory predicts target when
// value > tau, inhibitory when value < tau.
inline double balanced_accuracy(const std::vector<float>& values, const std::vector<std::uint8_t>& is_target,
                                const std::vector<std::size_t>& idx, double tau, bool excitatory) {
    std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i : idx) {
        const bool predict = excitatory ? values[i] > tau : values[i] < tau;
        if (is_target[i]) {
            ++pos;
            tp += predict;
        } else {
            ++neg;
            tn += !predict;
        }
    }
    const double tpr = pos ? static_cast<double>(tp) / pos : 0.0;
    const double tnr = neg ? static_cast<double>(tn) / neg : 0.0;
    return 0.5 * (tpr + tnr);
}

struct FoldFit {
    double tau = 0.0;
    bool excitatory = true;
    double train_acc = 0.5;
};

// Exhaustive midpoint search on the training half; direction fixed by the
// training-half class means.
inline FoldFit fit_neuron_threshold(const std::vector<float>& values, const std::vector<std::uint8_t>& is_target,
                                    const std::vector<std::size_t>& train_idx) {
    double tsum = 0.0, csum = 0.0;
    std::size_t tcount = 0, ccount = 0;
    for (std::size_t i : train_idx) {
        if (is_target[i]) {
            tsum += values[i];
            ++tcount;
        } else {
            csum += values[i];
            ++ccount;
        }
    }
    FoldFit fit;
    fit.excitatory = tsum / std::max<std::size_t>(tcount, 1) > csum / std::max<std::size_t>(ccount, 1);
    std::vector<double> sorted;
    sorted.reserve(train_idx.size());
    for (std::size_t i : train_idx) sorted.push_back(values[i]);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double> candidates;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    candidates.push_back(sorted.front() - 1.0);
    candidates.push_back(sorted.back() + 1.0);
    fit.tau = candidates.front();
    fit.train_acc = -1.0;
    for (double tau : candidates) {
        const double acc = balanced_accuracy(values, is_target, train_idx, tau, fit.excitatory);
        if (acc > fit.train_acc) {
            fit.train_acc = acc;
            fit.tau = tau;
        }
    }
    return fit;
}

} // namespace detail

// Per-neuron single-feature classification of a target subset against its
// complement: images split 50/50 by split_seed, the balanced-accuracy-
// maximizing threshold is chosen on one half and evaluated on the other, in
// both directions (two-fold cross-validation). Held-out accuracy is reported
// as measured, never clipped.
inline SelectivityReport per_neuron_accuracy(const Tensor& features, const std::vector<std::uint8_t>& target_mask,
                                             std::uint64_t split_seed) {
    if (features.rank() != 2)
        throw argument_error("per_neuron_accuracy: features must be [N,D], got " + shape_str(features.shape()));
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (target_mask.size() != n)
        throw argument_error("per_neuron_accuracy: mask length " + std::to_string(target_mask.size()) +
                             " does not match " + std::to_string(n) + " rows");

    std::vector<std::size_t> half_a, half_b;
    for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        RngState rng(split_seed + attempt);
        rng.shuffle(order.begin(), order.end());
        half_a.assign(order.begin(), order.begin() + (n + 1) / 2);
        half_b.assign(order.begin() + (n + 1) / 2, order.end());
        auto both_classes = [&](const std::vector<std::size_t>& idx) {
            bool pos = false, neg = false;
            for (std::size_t i : idx) (target_mask[i] ? pos : neg) = true;
            return pos && neg;
        };
        if (both_classes(half_a) && both_classes(half_b)) break;
        if (attempt == 1)
            throw argument_error("per_neuron_accuracy: a class is empty in one split half even after reseeding");
    }

    SelectivityReport report;
    report.neurons.resize(d);
    std::vector<float> values(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) values[i] = features(i, j);
        NeuronStat& st = report.neurons[j];
        st.neuron = j;

        double tsum = 0.0, csum = 0.0, t2 = 0.0, c2 = 0.0;
        std::size_t tcount = 0, ccount = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (target_mask[i]) {
                tsum += values[i];
                t2 += static_cast<double>(values[i]) * values[i];
                ++tcount;
            } else {
                csum += values[i];
                c2 += static_cast<double>(values[i]) * values[i];
                ++ccount;
            }
        }
        st.target_mean = tcount ? tsum / tcount : 0.0;
        st.comp_mean = ccount ? csum / ccount : 0.0;
        st.target_std = tcount ? std::sqrt(std::max(0.0, t2 / tcount - st.target_mean * st.target_mean)) : 0.0;
        st.comp_std = ccount ? std::sqrt(std::max(0.0, c2 / ccount - st.comp_mean * st.comp_mean)) : 0.0;
        st.excitatory = st.target_mean > st.comp_mean;

        const auto fit_ab = detail::fit_neuron_threshold(values, target_mask, half_a);
        const auto fit_ba = detail::fit_neuron_threshold(values, target_mask, half_b);
        const double acc_b = detail::balanced_accuracy(values, target_mask, half_b, fit_ab.tau, fit_ab.excitatory);
        const double acc_a = detail::balanced_accuracy(values, target_mask, half_a, fit_ba.tau, fit_ba.excitatory);
        st.best_threshold = fit_ab.tau;
        st.train_acc = 0.5 * (fit_ab.train_acc + fit_ba.train_acc);
        st.heldout_acc = 0.5 * (acc_a + acc_b);

        if (st.heldout_acc > report.best_heldout_acc) {
            report.best_heldout_acc = st.heldout_acc;
            report.best_neuron = j;
        }
    }
    return report;
}

// Neurons sorted by descending mean activation on the target subset, with the
// per-neuron stats and accuracies carried along (the data behind the sorted
// mean/std/accuracy panels).
struct ExcitationProfile {
    std::vector<NeuronStat> by_rank;  // descending target mean
};

inline ExcitationProfile excitation_profile(const Tensor& features, const std::vector<std::uint8_t>& target_mask,
                                            std::uint64_t split_seed = 0) {
    bool any = false;
    for (std::uint8_t b : target_mask) any = any || b;
    if (!any) throw argument_error("excitation_profile: target subset is empty");
    SelectivityReport rep = per_neuron_accuracy(features, target_mask, split_seed);
    ExcitationProfile prof;
    prof.by_rank = std::move(rep.neurons);
    std::stable_sort(prof.by_rank.begin(), prof.by_rank.end(), [](const NeuronStat& a, const NeuronStat& b) {
        return a.target_mean > b.target_mean;
    });
    return prof;
}

// -------------------------------------------------------- activation spectra

struct NeuronHistograms {
    std::size_t neuron = 0;
    double lo = 0.0, hi = 0.0;  // shared bin edges across subsets
    std::vector<std::pair<std::string, std::vector<std::size_t>>> per_subset;
};

struct ActivationHistograms {
    std::vector<NeuronHistograms> neurons;
    std::vector<std::string> skipped;  // empty subsets
};

// Per (neuron, subset) histogram with bin edges fixed per neuron over all
// images, so overlays line up across subsets.
inline ActivationHistograms activation_histograms(const Tensor& features,
                                                  const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& subsets,
                                                  const std::vector<std::size_t>& neuron_ids, int bins) {
    if (features.rank() != 2)
        throw argument_error("activation_histograms: features must be [N,D], got " + shape_str(features.shape()));
    if (bins < 1) throw argument_error("activation_histograms: bins must be >= 1");
    const std::size_t n = features.dim(0), d = features.dim(1);
    for (std::size_t id : neuron_ids)
        if (id >= d) throw argument_error("activation_histograms: neuron id " + std::to_string(id) + " out of range");
    for (const auto& [name, mask] : subsets)
        if (mask.size() != n)
            throw argument_error("activation_histograms: subset '" + name + "' mask length mismatch");

    ActivationHistograms out;
    std::set<std::string> skipped;
    for (std::size_t id : neuron_ids) {
        NeuronHistograms nh;
        nh.neuron = id;
        float lo = features(0, id), hi = lo;
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, features(i, id));
            hi = std::max(hi, features(i, id));
        }
        nh.lo = lo;
        nh.hi = hi > lo ? hi : lo + 1.0;  // degenerate range still lands in bin 0
        const double width = (nh.hi - nh.lo) / bins;
        for (const auto& [name, mask] : subsets) {
            bool empty = true;
            for (std::uint8_t b : mask) empty = empty && !b;
            if (empty) {
                skipped.insert(name);
                continue;
            }
            std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
            for (std::size_t i = 0; i < n; ++i) {
                if (!mask[i]) continue;
                auto bin = static_cast<std::size_t>((features(i, id) - nh.lo) / width);
                if (bin >= counts.size()) bin = counts.size() - 1;
                counts[bin] += 1;
            }
            nh.per_subset.emplace_back(name, std::move(counts));
        }
        out.neurons.push_back(std::move(nh));
    }
    out.skipped.assign(skipped.begin(), skipped.end());
    return out;
}

// ------------------------------------------------------------------ LBP codes

namespace detail {

// 8-neighbor offsets, clockwise from the top-left; bit i has weight 2^i.
constexpr int kLbpOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};

// Uniform patterns (at most two 0/1 transitions around the circle) get
// indices 0..57 in ascending code order; everything else shares bin 58.
inline const std::array<std::uint8_t, 256>& lbp_uniform_map() {
    static const std::array<std::uint8_t, 256> map = [] {
        std::array<std::uint8_t, 256> m{};
        std::uint8_t next = 0;
        for (int code = 0; code < 256; ++code) {
            int transitions = 0;
            for (int b = 0; b < 8; ++b) {
                const int cur = (code >> b) & 1;
                const int nxt = (code >> ((b + 1) % 8)) & 1;
                transitions += cur != nxt;
            }
            m[code] = transitions <= 2 ? next++ : 58;
        }
        return m;
    }();
    return map;
}

} // namespace detail

constexpr std::size_t kLbpBins = 59;
constexpr std::size_t kLbpGrid = 4;
constexpr std::size_t kLbpDim = kLbpGrid * kLbpGrid * kLbpBins;  // 944

// Raw LBP code per interior pixel, row-major. Ties (neighbor equal to the
// center) count as 1, so a constant image maps to code 255 everywhere.
inline std::vector<std::uint8_t> lbp_codes(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw argument_error("lbp_codes: expected a grayscale [1,H,W] image, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h < 3 || w < 3) throw argument_error("lbp_codes: image must be at least 3x3");
    std::vector<std::uint8_t> codes((h - 2) * (w - 2));
    for (std::size_t y = 1; y + 1 < h; ++y) {
        for (std::size_t x = 1; x + 1 < w; ++x) {
            const float center = image(0, y, x);
            int code = 0;
            for (int b = 0; b < 8; ++b) {
                const float v = image(0, y + detail::kLbpOffsets[b][0], x + detail::kLbpOffsets[b][1]);
                if (v >= center) code |= 1 << b;
            }
            codes[(y - 1) * (w - 2) + (x - 1)] = static_cast<std::uint8_t>(code);
        }
    }
    return codes;
}

// Handcrafted baseline: uniform-pattern LBP histograms over a 4x4 tiling of
// the interior region, concatenated to 944 dimensions.
inline Tensor lbp_baseline(const std::vector<Tensor>& images) {
    Tensor out({images.size(), kLbpDim});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Tensor& img = images[n];
        if (img.rank() != 3 || img.dim(0) != 1)
            throw argument_error("lbp_baseline: expected grayscale [1,H,W] images");
        const std::size_t h = img.dim(1), w = img.dim(2);
        if (h < 16 || w < 16)
            throw argument_error("lbp_baseline: image " + std::to_string(h) + "x" + std::to_string(w) +
                                 " is too small (need at least 16x16)");
        const std::vector<std::uint8_t> codes = lbp_codes(img);
        const std::size_t ih = h - 2, iw = w - 2;
        const auto& map = detail::lbp_uniform_map();
        for (std::size_t y = 0; y < ih; ++y) {
            const std::size_t by = y * kLbpGrid / ih;
            for (std::size_t x = 0; x < iw; ++x) {
                const std::size_t bx = x * kLbpGrid / iw;
                const std::size_t block = by * kLbpGrid + bx;
                out(n, block * kLbpBins + map[codes[y * iw + x]]) += 1.0f;
            }
        }
    }
    return out;
}

// --------------------------------------------------------------- robustness

struct FeatureSource {
    std::string name;
    std::function<Tensor(const std::vector<Tensor>&)> extract;  // [C,H,W] images -> [N,D]
};

enum class OcclusionKind { partial, block };

enum class MetricKind { l2, cosine, jb };

struct RobustnessCurve {
    std::vector<double> levels;
    std::vector<std::string> sources;
    std::vector<std::vector<VerifAccuracy>> accuracy;  // [source][level]
};

namespace detail {

inline std::vector<Tensor> occlude_all(const std::vector<Tensor>& images, OcclusionKind kind, double level,
                                       float fill, RngState level_rng) {
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (kind == OcclusionKind::partial) {
            out.push_back(occlude_partial(images[i], level, fill));
        } else {
            const std::size_t side = std::min(images[i].dim(1), images[i].dim(2));
            const int n = static_cast<int>(std::llround(level * static_cast<double>(side)));
            RngState img_rng = level_rng.fork(i);  // positions independent per image
            out.push_back(occlude_block(images[i], n, fill, img_rng));
        }
    }
    return out;
}

} // namespace detail

// Verification accuracy per occlusion level per feature source, with both
// pair members occluded (block positions drawn independently per image).
// Models and Joint Bayesian fits only ever see unoccluded data: any jb fit
// set passed here is used as-is, and occluders run on the evaluation pool
// alone.
inline RobustnessCurve robustness_sweep(const std::vector<FeatureSource>& sources,
                                        const std::vector<Tensor>& images, const std::vector<PairIdx>& pairs,
                                        OcclusionKind kind, const std::vector<double>& levels, float fill,
                                        MetricKind metric, int folds, RngState& rng,
                                        const std::vector<Tensor>* jb_fit_images = nullptr,
                                        const std::vector<int>* jb_fit_ids = nullptr, double jb_shrinkage = 0.01,
                                        int jb_em_iters = 2) {
    if (sources.empty()) throw argument_error("robustness_sweep: no feature sources");
    if (images.empty()) throw argument_error("robustness_sweep: no images");
    if (levels.empty()) throw argument_error("robustness_sweep: no occlusion levels");
    for (double l : levels)
        if (!(l >= 0.0 && l <= 1.0)) throw argument_error("robustness_sweep: levels must be in [0,1]");
    detail::check_pairs(pairs, images.size(), "robustness_sweep");
    if (metric == MetricKind::jb && (jb_fit_images == nullptr || jb_fit_ids == nullptr))
        throw argument_error("robustness_sweep: the jb metric needs a fit image set");

    RobustnessCurve curve;
    curve.levels = levels;
    std::vector<std::shared_ptr<const JointBayesModel>> jb_models(sources.size());
    for (std::size_t s = 0; s < sources.size(); ++s) {
        curve.sources.push_back(sources[s].name);
        if (metric == MetricKind::jb) {
            const Tensor fit_feats = sources[s].extract(*jb_fit_images);
            jb_models[s] = std::make_shared<const JointBayesModel>(
                fit_joint_bayes(fit_feats, *jb_fit_ids, jb_shrinkage, jb_em_iters));
        }
    }

    std::vector<std::vector<Tensor>> occluded;
    occluded.reserve(levels.size());
    for (std::size_t li = 0; li < levels.size(); ++li)
        occluded.push_back(detail::occlude_all(images, kind, levels[li], fill, rng.fork(0xB10C + li)));

    curve.accuracy.assign(sources.size(), std::vector<VerifAccuracy>(levels.size()));
    for (std::size_t s = 0; s < sources.size(); ++s) {
        for (std::size_t li = 0; li < levels.size(); ++li) {
            const Tensor feats = sources[s].extract(occluded[li]);
            std::vector<ScoredPair> scored;
            scored.reserve(pairs.size());
            for (const PairIdx& p : pairs) {
                const auto a = row_of(feats, p.a), b = row_of(feats, p.b);
                double sc = 0.0;
                switch (metric) {
                    case MetricKind::l2: sc = l2_score(a, b); break;
                    case MetricKind::cosine: sc = cosine_score(a, b); break;
                    case MetricKind::jb: sc = jb_log_ratio(*jb_models[s], a, b); break;
                }
                scored.push_back({sc, p.same});
            }
            curve.accuracy[s][li] = verification_accuracy(scored, folds);
        }
    }
    return curve;
}

// ------------------------------------------------------- mean activation map

struct ActivationMap {
    std::vector<double> levels;
    std::vector<std::size_t> column_order;         // neuron ids, descending unoccluded mean
    std::vector<std::vector<double>> values;       // [level][neuron], columns already reordered
};

// Mean FC-4 activation over one identity's images at each occlusion level,
// columns ordered by the neurons' unoccluded means (or a caller-supplied
// reference order).
inline ActivationMap mean_activation_map(const ModelParams& params, const ArchConfig& cfg,
                                         const std::vector<Tensor>& identity_images, OcclusionKind kind,
                                         const std::vector<double>& levels, float fill, RngState& rng,
                                         const std::vector<std::size_t>& reference_order = {}) {
    if (identity_images.empty()) throw argument_error("mean_activation_map: no images for the identity");
    const std::size_t d = static_cast<std::size_t>(cfg.fc_dim);

    auto mean_row = [&](const std::vector<Tensor>& imgs) {
        const Tensor feats = extract_batch_features(params, cfg, imgs, 4, false);
        std::vector<double> mean(d, 0.0);
        for (std::size_t i = 0; i < feats.dim(0); ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += feats(i, j);
        for (double& v : mean) v /= static_cast<double>(feats.dim(0));
        return mean;
    };

    const std::vector<double> base = mean_row(identity_images);
    ActivationMap out;
    out.levels = levels;
    if (!reference_order.empty()) {
        if (reference_order.size() != d)
            throw argument_error("mean_activation_map: reference order must list every neuron once");
        out.column_order = reference_order;
    } else {
        out.column_order.resize(d);
        std::iota(out.column_order.begin(), out.column_order.end(), 0);
        std::stable_sort(out.column_order.begin(), out.column_order.end(),
                         [&](std::size_t a, std::size_t b) { return base[a] > base[b]; });
    }

    for (std::size_t li = 0; li < levels.size(); ++li) {
        const std::vector<Tensor> occluded =
            detail::occlude_all(identity_images, kind, levels[li], fill, rng.fork(0xACC + li));
        const std::vector<double> row = mean_row(occluded);
        std::vector<double> ordered(d);
        for (std::size_t j = 0; j < d; ++j) ordered[j] = row[out.column_order[j]];
        out.values.push_back(std::move(ordered));
    }
    return out;
}

// Spearman rank correlation between two rows; used to quantify how stable the
// activation pattern stays under occlusion.
inline double rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw argument_error("rank_correlation: length mismatch");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

} // namespace deepid
