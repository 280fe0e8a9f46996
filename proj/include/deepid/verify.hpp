#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace deepid {

// Every metric in this module is oriented so that a higher score means "more
// likely the same identity"; distances are negated at the boundary.

// -------------------------------------------------------------- binary codes

struct BinaryCode {
    std::vector<std::uint8_t> bits;
};

inline std::vector<BinaryCode> binarize(const Tensor& features, float threshold = 0.0f) {
    if (features.rank() != 2)
        throw shape_error("binarize: features must be [N,D], got " + shape_str(features.shape()));
    const std::size_t n = features.dim(0), d = features.dim(1);
    std::vector<BinaryCode> codes(n);
    for (std::size_t i = 0; i < n; ++i) {
        codes[i].bits.resize(d);
        for (std::size_t j = 0; j < d; ++j) codes[i].bits[j] = features(i, j) > threshold ? 1 : 0;
    }
    return codes;
}

inline double hamming_score(const BinaryCode& a, const BinaryCode& b) {
    if (a.bits.size() != b.bits.size())
        throw shape_error("hamming_score: code lengths differ, " + std::to_string(a.bits.size()) + " vs " +
                          std::to_string(b.bits.size()));
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) mismatches += a.bits[i] != b.bits[i];
    return -static_cast<double>(mismatches);
}

inline double l2_score(std::span<const float> x, std::span<const float> y) {
    if (x.size() != y.size())
        throw shape_error("l2_score: vector lengths differ, " + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()));
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        d2 += d * d;
    }
    return -std::sqrt(d2);
}

// Zero vectors score 0 by convention.
inline double cosine_score(std::span<const float> x, std::span<const float> y) {
    if (x.size() != y.size())
        throw shape_error("cosine_score: vector lengths differ, " + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()));
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += static_cast<double>(x[i]) * static_cast<double>(y[i]);
        nx += static_cast<double>(x[i]) * static_cast<double>(x[i]);
        ny += static_cast<double>(y[i]) * static_cast<double>(y[i]);
    }
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return dot / (std::sqrt(nx) * std::sqrt(ny));
}

// ------------------------------------------------- small dense linear algebra

// Row-major double matrix, just big enough for the covariance work here.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols) : r_(rows), c_(cols), a_(rows * cols, 0.0) {}

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return r_; }
    std::size_t cols() const { return c_; }

    double& operator()(std::size_t i, std::size_t j) { return a_[i * c_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * c_ + j]; }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < std::min(r_, c_); ++i) t += (*this)(i, i);
        return t;
    }

    Mat transposed() const {
        Mat m(c_, r_);
        for (std::size_t i = 0; i < r_; ++i)
            for (std::size_t j = 0; j < c_; ++j) m(j, i) = (*this)(i, j);
        return m;
    }

private:
    std::size_t r_ = 0, c_ = 0;
    std::vector<double> a_;
};

inline Mat operator+(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("Mat: addition shape mismatch");
    Mat m(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a(i, j) + b(i, j);
    return m;
}

inline Mat operator-(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("Mat: subtraction shape mismatch");
    Mat m(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a(i, j) - b(i, j);
    return m;
}

inline Mat operator*(double s, const Mat& a) {
    Mat m(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = s * a(i, j);
    return m;
}

inline Mat operator*(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw shape_error("Mat: product shape mismatch");
    Mat m(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double av = a(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) m(i, j) += av * b(k, j);
        }
    return m;
}

struct Cholesky {
    Mat lower;
    double logdet = 0.0;

    // y = L^-1 b
    std::vector<double> solve_lower(std::vector<double> b) const {
        const std::size_t n = lower.rows();
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i];
            for (std::size_t j = 0; j < i; ++j) s -= lower(i, j) * b[j];
            b[i] = s / lower(i, i);
        }
        return b;
    }

    // v^T A^-1 v
    double quad(const std::vector<double>& v) const {
        const std::vector<double> y = solve_lower(v);
        double q = 0.0;
        for (double t : y) q += t * t;
        return q;
    }

    // x = A^-1 b
    std::vector<double> solve(std::vector<double> b) const {
        b = solve_lower(std::move(b));
        const std::size_t n = lower.rows();
        for (std::size_t ii = n; ii > 0; --ii) {
            const std::size_t i = ii - 1;
            double s = b[i];
            for (std::size_t j = i + 1; j < n; ++j) s -= lower(j, i) * b[j];
            b[i] = s / lower(i, i);
        }
        return b;
    }

    Mat inverse() const {
        const std::size_t n = lower.rows();
        Mat inv(n, n);
        for (std::size_t col = 0; col < n; ++col) {
            std::vector<double> e(n, 0.0);
            e[col] = 1.0;
            const std::vector<double> x = solve(std::move(e));
            for (std::size_t i = 0; i < n; ++i) inv(i, col) = x[i];
        }
        return inv;
    }
};

inline Cholesky cholesky(const Mat& a, const std::string& what = "matrix") {
    if (a.rows() != a.cols()) throw shape_error("cholesky: matrix must be square");
    const std::size_t n = a.rows();
    Cholesky c;
    c.lower = Mat(n, n);
    double logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= c.lower(i, k) * c.lower(j, k);
            if (i == j) {
                if (!(s > 0.0) || !std::isfinite(s))
                    throw numeric_error(what + " is not positive definite; a larger shrinkage may be needed");
                c.lower(i, i) = std::sqrt(s);
                logdet += std::log(s);
            } else {
                c.lower(i, j) = s / c.lower(j, j);
            }
        }
    }
    c.logdet = logdet;
    return c;
}

// ------------------------------------------------------------- Joint Bayesian

// Generative similarity model x = mu + eps with mu ~ N(0, S_mu) between
// identities and eps ~ N(0, S_eps) within an identity. Scoring compares the
// joint density of a pair under the shared-mu hypothesis against the
// independent-mu hypothesis.
struct JointBayesModel {
    Mat s_mu, s_eps;
    std::vector<double> mean;          // training mean, subtracted before scoring
    std::vector<double> loglik_trace;  // training log-likelihood per EM iteration (index 0 = initialization)
    Cholesky total;                    // S_mu + S_eps
    Cholesky joint_same;               // [[A, B], [B, A]] with A = S_mu + S_eps, B = S_mu

    std::size_t dim() const { return s_mu.rows(); }

    static JointBayesModel from_covariances(Mat s_mu, Mat s_eps) {
        if (s_mu.rows() != s_mu.cols() || s_eps.rows() != s_eps.cols() || s_mu.rows() != s_eps.rows())
            throw shape_error("JointBayesModel: covariances must be square and equally sized");
        JointBayesModel m;
        const std::size_t d = s_mu.rows();
        m.s_mu = std::move(s_mu);
        m.s_eps = std::move(s_eps);
        m.mean.assign(d, 0.0);
        const Mat a = m.s_mu + m.s_eps;
        m.total = cholesky(a, "S_mu + S_eps");
        Mat joint(2 * d, 2 * d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                joint(i, j) = a(i, j);
                joint(d + i, d + j) = a(i, j);
                joint(i, d + j) = m.s_mu(i, j);
                joint(d + i, j) = m.s_mu(i, j);
            }
        m.joint_same = cholesky(joint, "same-identity joint covariance");
        return m;
    }
};

// log P([x1;x2] | same identity) - log P([x1;x2] | different identities).
inline double jb_log_ratio(const JointBayesModel& m, std::span<const float> x1, std::span<const float> x2) {
    const std::size_t d = m.dim();
    if (x1.size() != d || x2.size() != d)
        throw shape_error("jb_log_ratio: feature length " + std::to_string(x1.size()) + " does not match model dim " +
                          std::to_string(d));
    std::vector<double> v1(d), v2(d), vj(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
        v1[i] = static_cast<double>(x1[i]) - m.mean[i];
        v2[i] = static_cast<double>(x2[i]) - m.mean[i];
        vj[i] = v1[i];
        vj[d + i] = v2[i];
    }
    const double q_diff = m.total.quad(v1) + m.total.quad(v2);
    const double q_same = m.joint_same.quad(vj);
    return -0.5 * (q_same - q_diff) - 0.5 * (m.joint_same.logdet - 2.0 * m.total.logdet);
}

namespace detail {

// log-likelihood of centered data under (S_mu, S_eps). For an identity with n
// samples the marginal covariance is I_n (x) S_eps + 1_n 1_n^T (x) S_mu, whose
// determinant and quadratic form split over the group mean and deviations.
inline double jb_loglik(const std::vector<std::vector<const float*>>& groups, const std::vector<double>& mean,
                        std::size_t d, const Mat& s_mu, const Mat& s_eps) {
    const Cholesky eps_chol = cholesky(s_eps, "S_eps");
    std::map<std::size_t, Cholesky> mix_chol;  // S_eps + n*S_mu per group size
    double ll = 0.0;
    const double log2pi = std::log(2.0 * 3.14159265358979323846);
    for (const auto& rows : groups) {
        const std::size_t n = rows.size();
        auto it = mix_chol.find(n);
        if (it == mix_chol.end()) {
            Mat mix = s_eps + (static_cast<double>(n) * s_mu);
            it = mix_chol.emplace(n, cholesky(mix, "S_eps + n*S_mu")).first;
        }
        std::vector<double> xbar(d, 0.0);
        for (const float* row : rows)
            for (std::size_t j = 0; j < d; ++j) xbar[j] += static_cast<double>(row[j]) - mean[j];
        for (std::size_t j = 0; j < d; ++j) xbar[j] /= static_cast<double>(n);

        double quad = 0.0;
        std::vector<double> dev(d);
        for (const float* row : rows) {
            for (std::size_t j = 0; j < d; ++j) dev[j] = static_cast<double>(row[j]) - mean[j] - xbar[j];
            quad += eps_chol.quad(dev);
        }
        std::vector<double> sm(d);
        for (std::size_t j = 0; j < d; ++j) sm[j] = xbar[j];
        quad += static_cast<double>(n) * it->second.quad(sm);

        const double logdet =
            static_cast<double>(n - 1) * eps_chol.logdet + it->second.logdet;
        ll += -0.5 * (quad + logdet + static_cast<double>(n) * static_cast<double>(d) * log2pi);
    }
    return ll;
}

} // namespace detail

// Method-of-moments initialization (between-identity scatter of identity
// means, pooled within-identity scatter), shrinkage toward a scaled identity,
// then em_iters EM refinements. The per-iteration training log-likelihood is
// recorded in loglik_trace.
inline JointBayesModel fit_joint_bayes(const Tensor& features, const std::vector<int>& identity_labels,
                                       double shrinkage = 0.01, int em_iters = 0) {
    if (features.rank() != 2)
        throw shape_error("fit_joint_bayes: features must be [N,d], got " + shape_str(features.shape()));
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (identity_labels.size() != n)
        throw shape_error("fit_joint_bayes: " + std::to_string(identity_labels.size()) + " labels for " +
                          std::to_string(n) + " rows");
    if (!(shrinkage >= 0.0 && shrinkage <= 1.0))
        throw argument_error("fit_joint_bayes: shrinkage must be in [0,1]");
    if (em_iters < 0) throw argument_error("fit_joint_bayes: em_iters must be >= 0");

    std::map<int, std::vector<const float*>> by_id;
    for (std::size_t i = 0; i < n; ++i) by_id[identity_labels[i]].push_back(features.data() + i * d);
    if (by_id.size() < 2) throw argument_error("fit_joint_bayes: need at least two identities");
    bool any_multi = false;
    for (const auto& [id, rows] : by_id) any_multi = any_multi || rows.size() >= 2;
    if (!any_multi) throw argument_error("fit_joint_bayes: need at least one identity with two or more samples");

    std::vector<std::vector<const float*>> groups;
    groups.reserve(by_id.size());
    for (auto& [id, rows] : by_id) groups.push_back(std::move(rows));
    const std::size_t m_ids = groups.size();

    std::vector<double> mean(d, 0.0);
    for (const auto& rows : groups)
        for (const float* row : rows)
            for (std::size_t j = 0; j < d; ++j) mean[j] += static_cast<double>(row[j]);
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);

    // identity means (centered)
    std::vector<std::vector<double>> mu(m_ids, std::vector<double>(d, 0.0));
    for (std::size_t g = 0; g < m_ids; ++g) {
        for (const float* row : groups[g])
            for (std::size_t j = 0; j < d; ++j) mu[g][j] += static_cast<double>(row[j]) - mean[j];
        for (std::size_t j = 0; j < d; ++j) mu[g][j] /= static_cast<double>(groups[g].size());
    }
    std::vector<double> mu_bar(d, 0.0);
    for (const auto& g : mu)
        for (std::size_t j = 0; j < d; ++j) mu_bar[j] += g[j];
    for (std::size_t j = 0; j < d; ++j) mu_bar[j] /= static_cast<double>(m_ids);

    Mat s_mu(d, d), s_eps(d, d);
    for (std::size_t g = 0; g < m_ids; ++g) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                s_mu(i, j) += (mu[g][i] - mu_bar[i]) * (mu[g][j] - mu_bar[j]) / static_cast<double>(m_ids);
        std::vector<double> dev(d);
        for (const float* row : groups[g]) {
            for (std::size_t j = 0; j < d; ++j) dev[j] = static_cast<double>(row[j]) - mean[j] - mu[g][j];
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) s_eps(i, j) += dev[i] * dev[j] / static_cast<double>(n);
        }
    }

    auto shrink = [&](Mat& s) {
        const double target = s.trace() / static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) s(i, j) *= 1.0 - shrinkage;
            s(i, i) += shrinkage * target;
        }
    };
    shrink(s_mu);
    shrink(s_eps);

    std::vector<double> trace;
    trace.push_back(detail::jb_loglik(groups, mean, d, s_mu, s_eps));

    for (int it = 0; it < em_iters; ++it) {
        const Cholesky mu_chol = cholesky(s_mu, "S_mu");
        const Cholesky eps_chol = cholesky(s_eps, "S_eps");
        const Mat mu_inv = mu_chol.inverse();
        const Mat eps_inv = eps_chol.inverse();

        std::map<std::size_t, Mat> post_cov;  // (S_mu^-1 + n S_eps^-1)^-1 per group size
        Mat new_mu(d, d), new_eps(d, d);
        for (const auto& rows : groups) {
            const std::size_t cnt = rows.size();
            auto it2 = post_cov.find(cnt);
            if (it2 == post_cov.end()) {
                Mat prec = mu_inv + (static_cast<double>(cnt) * eps_inv);
                it2 = post_cov.emplace(cnt, cholesky(prec, "posterior precision").inverse()).first;
            }
            const Mat& cov = it2->second;

            std::vector<double> sum(d, 0.0);
            for (const float* row : rows)
                for (std::size_t j = 0; j < d; ++j) sum[j] += static_cast<double>(row[j]) - mean[j];
            std::vector<double> rhs(d, 0.0);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) rhs[i] += eps_inv(i, j) * sum[j];
            std::vector<double> m_post(d, 0.0);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) m_post[i] += cov(i, j) * rhs[j];

            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) new_mu(i, j) += m_post[i] * m_post[j] + cov(i, j);

            std::vector<double> dev(d);
            for (const float* row : rows) {
                for (std::size_t j = 0; j < d; ++j) dev[j] = static_cast<double>(row[j]) - mean[j] - m_post[j];
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < d; ++j) new_eps(i, j) += dev[i] * dev[j];
            }
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) new_eps(i, j) += static_cast<double>(cnt) * cov(i, j);
        }
        s_mu = (1.0 / static_cast<double>(m_ids)) * new_mu;
        s_eps = (1.0 / static_cast<double>(n)) * new_eps;
        trace.push_back(detail::jb_loglik(groups, mean, d, s_mu, s_eps));
    }

    JointBayesModel model = JointBayesModel::from_covariances(std::move(s_mu), std::move(s_eps));
    model.mean = std::move(mean);
    model.loglik_trace = std::move(trace);
    return model;
}

// ---------------------------------------------------------------- protocols

struct ScoredPair {
    double score = 0.0;
    bool same = false;
};

struct VerifAccuracy {
    double mean = 0.0;
    double stdev = 0.0;  // population std over folds
    std::vector<double> fold_accuracy;
};

// Deterministic pre-folding shuffle (fixed internal seed) followed by
// round-robin fold assignment; shared with the brute-force test oracles.
inline std::vector<int> fold_assignment(std::size_t n, int folds) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    RngState rng(0x5EEDF01D);
    rng.shuffle(order.begin(), order.end());
    std::vector<int> fold(n);
    for (std::size_t pos = 0; pos < n; ++pos) fold[order[pos]] = static_cast<int>(pos % folds);
    return fold;
}

inline double threshold_accuracy(const std::vector<ScoredPair>& pairs, double tau) {
    if (pairs.empty()) return 0.0;
    std::size_t correct = 0;
    for (const ScoredPair& p : pairs) correct += (p.score >= tau) == p.same;
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

// Accuracy-maximizing threshold. Candidates are the midpoints between
// adjacent distinct scores; sentinels below and above every score are
// considered last, so ties resolve toward a midpoint.
inline double choose_threshold(const std::vector<ScoredPair>& pairs) {
    if (pairs.empty()) throw argument_error("choose_threshold: empty pair set");
    std::vector<double> scores;
    scores.reserve(pairs.size());
    for (const ScoredPair& p : pairs) scores.push_back(p.score);
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<double> candidates;
    for (std::size_t i = 0; i + 1 < scores.size(); ++i) candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
    candidates.push_back(scores.front() - 1.0);
    candidates.push_back(scores.back() + 1.0);
    double best_tau = candidates.front();
    double best_acc = -1.0;
    for (double tau : candidates) {
        const double acc = threshold_accuracy(pairs, tau);
        if (acc > best_acc) {
            best_acc = acc;
            best_tau = tau;
        }
    }
    return best_tau;
}

// k-fold pair verification: per fold, the threshold is chosen on the other
// folds and applied to the held-out fold.
inline VerifAccuracy verification_accuracy(const std::vector<ScoredPair>& pairs, int folds) {
    if (folds < 2) throw argument_error("verification_accuracy: folds must be >= 2");
    if (pairs.size() < static_cast<std::size_t>(folds))
        throw argument_error("verification_accuracy: fewer pairs (" + std::to_string(pairs.size()) +
                             ") than folds (" + std::to_string(folds) + ")");
    for (const ScoredPair& p : pairs)
        if (!std::isfinite(p.score)) throw numeric_error("verification_accuracy: non-finite score");
    const std::vector<int> fold = fold_assignment(pairs.size(), folds);
    VerifAccuracy out;
    for (int f = 0; f < folds; ++f) {
        std::vector<ScoredPair> train, test;
        for (std::size_t i = 0; i < pairs.size(); ++i) (fold[i] == f ? test : train).push_back(pairs[i]);
        const double tau = choose_threshold(train);
        out.fold_accuracy.push_back(threshold_accuracy(test, tau));
    }
    double sum = 0.0;
    for (double a : out.fold_accuracy) sum += a;
    out.mean = sum / static_cast<double>(folds);
    double var = 0.0;
    for (double a : out.fold_accuracy) var += (a - out.mean) * (a - out.mean);
    out.stdev = std::sqrt(var / static_cast<double>(folds));
    return out;
}

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// One point per distinct threshold, swept from +inf down; starts at (0,0) and
// ends at (1,1).
inline std::vector<RocPoint> roc(const std::vector<ScoredPair>& pairs) {
    std::size_t pos = 0, neg = 0;
    for (const ScoredPair& p : pairs) (p.same ? pos : neg) += 1;
    if (pos == 0 || neg == 0)
        throw argument_error("roc: need at least one positive and one negative pair");
    std::vector<ScoredPair> sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) { return a.score > b.score; });
    std::vector<RocPoint> points{{0.0, 0.0}};
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < sorted.size()) {
        const double s = sorted[i].score;
        while (i < sorted.size() && sorted[i].score == s) {
            (sorted[i].same ? tp : fp) += 1;
            ++i;
        }
        points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
    }
    return points;
}

inline double roc_auc(const std::vector<RocPoint>& points) {
    double auc = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        auc += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
    return auc;
}

// ------------------------------------------------------------ identification

using Metric = std::function<double(std::span<const float>, std::span<const float>)>;

inline Metric l2_metric() {
    return [](std::span<const float> a, std::span<const float> b) { return l2_score(a, b); };
}

inline Metric cosine_metric() {
    return [](std::span<const float> a, std::span<const float> b) { return cosine_score(a, b); };
}

inline Metric jb_metric(std::shared_ptr<const JointBayesModel> model) {
    return [model](std::span<const float> a, std::span<const float> b) { return jb_log_ratio(*model, a, b); };
}

struct IdentSet {
    Tensor features;          // [N,d]
    std::vector<int> ids;     // identity per row
};

inline std::span<const float> row_of(const Tensor& t, std::size_t i) {
    return std::span<const float>(t.data() + i * t.dim(1), t.dim(1));
}

namespace detail {

struct TopMatch {
    double score;
    int id;
};

inline TopMatch top_gallery_match(const IdentSet& gallery, std::span<const float> probe, const Metric& metric) {
    TopMatch best{-std::numeric_limits<double>::infinity(), -1};
    for (std::size_t g = 0; g < gallery.ids.size(); ++g) {
        const double s = metric(row_of(gallery.features, g), probe);
        if (s > best.score) best = {s, gallery.ids[g]};  // ties keep the lowest gallery index
    }
    return best;
}

} // namespace detail

// Closed-set Rank-1: a probe is correct iff its highest-scoring gallery item
// carries the probe's identity; ties break toward the lowest gallery index.
inline double rank1_closed(const IdentSet& gallery, const IdentSet& probes, const Metric& metric) {
    if (gallery.ids.empty()) throw argument_error("rank1_closed: gallery is empty");
    if (probes.ids.empty()) throw argument_error("rank1_closed: probe set is empty");
    const std::set<int> gallery_ids(gallery.ids.begin(), gallery.ids.end());
    for (int id : probes.ids)
        if (!gallery_ids.count(id))
            throw protocol_error("rank1_closed: probe identity " + std::to_string(id) +
                                 " is absent from the gallery (protocol is closed-set)");
    std::size_t correct = 0;
    for (std::size_t p = 0; p < probes.ids.size(); ++p) {
        const auto best = detail::top_gallery_match(gallery, row_of(probes.features, p), metric);
        correct += best.id == probes.ids[p];
    }
    return static_cast<double>(correct) / static_cast<double>(probes.ids.size());
}

// Open-set DIR at a FAR: the acceptance threshold is the smallest value such
// that the fraction of unknown probes whose top score clears it stays within
// far_target; DIR counts known probes that clear it with a correct top match.
inline double dir_at_far(const IdentSet& gallery, const IdentSet& known_probes, const IdentSet& unknown_probes,
                         double far_target, const Metric& metric) {
    if (gallery.ids.empty()) throw argument_error("dir_at_far: gallery is empty");
    if (known_probes.ids.empty()) throw argument_error("dir_at_far: known probe set is empty");
    if (unknown_probes.ids.empty())
        throw protocol_error("dir_at_far: unknown probe set is empty, FAR is undefined");
    if (!(far_target > 0.0 && far_target < 1.0))
        throw argument_error("dir_at_far: far_target must be in (0,1)");
    const std::set<int> gallery_ids(gallery.ids.begin(), gallery.ids.end());
    for (int id : unknown_probes.ids)
        if (gallery_ids.count(id))
            throw protocol_error("dir_at_far: unknown probe identity " + std::to_string(id) +
                                 " appears in the gallery");
    for (int id : known_probes.ids)
        if (!gallery_ids.count(id))
            throw protocol_error("dir_at_far: known probe identity " + std::to_string(id) +
                                 " is absent from the gallery");

    std::vector<double> unknown_tops;
    unknown_tops.reserve(unknown_probes.ids.size());
    for (std::size_t p = 0; p < unknown_probes.ids.size(); ++p)
        unknown_tops.push_back(detail::top_gallery_match(gallery, row_of(unknown_probes.features, p), metric).score);

    const std::size_t m = unknown_tops.size();
    const std::size_t allowed = static_cast<std::size_t>(std::floor(far_target * static_cast<double>(m)));
    // Detection means scoring strictly above the (allowed+1)-th largest
    // unknown top score, which realizes the smallest admissible threshold.
    double cutoff = -std::numeric_limits<double>::infinity();
    bool has_cutoff = false;
    if (allowed < m) {
        std::sort(unknown_tops.begin(), unknown_tops.end(), std::greater<double>());
        cutoff = unknown_tops[allowed];
        has_cutoff = true;
    }
    std::size_t hits = 0;
    for (std::size_t p = 0; p < known_probes.ids.size(); ++p) {
        const auto best = detail::top_gallery_match(gallery, row_of(known_probes.features, p), metric);
        const bool detected = !has_cutoff || best.score > cutoff;
        hits += detected && best.id == known_probes.ids[p];
    }
    return static_cast<double>(hits) / static_cast<double>(known_probes.ids.size());
}

} // namespace deepid
