#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddvi/linalg.hpp"
#include "ddvi/priors.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

// ---------------------------------------------------------------------------
// Maximum mean discrepancy with a mixture-of-Gaussians kernel,
// k(a,b) = sum_sigma exp(-|a-b|^2 / (2 sigma^2)), sigma in {2,5,10,20,40,80}.
// Biased V-statistic, so identical multisets give exactly zero.
// ---------------------------------------------------------------------------

inline const std::vector<double>& mmd_kernel_sigmas() {
    static const std::vector<double> s = {2, 5, 10, 20, 40, 80};
    return s;
}

inline double mmd_kernel(std::span<const double> a, std::span<const double> b) {
    const double d2 = la::sq_dist(a, b);
    double k = 0.0;
    for (double s : mmd_kernel_sigmas()) k += std::exp(-d2 / (2.0 * s * s));
    return k;
}

inline double mmd_squared(const Tensor& x, const Tensor& y) {
    detail::check(x.rows() > 0 && y.rows() > 0, "mmd: empty sample set");
    detail::check(x.cols() == y.cols(), "mmd: dimension mismatch");
    const std::size_t n = x.rows(), m = y.rows();
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) kxx += mmd_kernel(x.row_span(i), x.row_span(j));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) kyy += mmd_kernel(y.row_span(i), y.row_span(j));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) kxy += mmd_kernel(x.row_span(i), y.row_span(j));
    return kxx / static_cast<double>(n * n) + kyy / static_cast<double>(m * m) -
           2.0 * kxy / static_cast<double>(n * m);
}

inline double mmd(const Tensor& x, const Tensor& y) {
    return std::sqrt(std::max(0.0, mmd_squared(x, y)));
}

// ---------------------------------------------------------------------------
// Latent negative log-likelihood: KDE fitted on the model's latents,
// evaluated on prior samples.
// ---------------------------------------------------------------------------

inline double latent_nll(const Tensor& model_latents, const Tensor& prior_samples) {
    detail::check(model_latents.rows() > 0 && prior_samples.rows() > 0,
                  "latent_nll: empty sample set");
    const KdeDensity kde(model_latents);
    double acc = 0.0;
    for (std::size_t i = 0; i < prior_samples.rows(); ++i)
        acc += kde.log_density(prior_samples.row_span(i));
    return -acc / static_cast<double>(prior_samples.rows());
}

// ---------------------------------------------------------------------------
// Leave-one-out K-nearest-neighbor accuracy. Distance ties resolve by index
// order; vote ties resolve to the smallest label id.
// ---------------------------------------------------------------------------

struct KnnResult {
    double accuracy = 0.0;
    std::size_t used_k = 0;
    bool clamped = false;
};

inline KnnResult knn_accuracy(const Tensor& latents, const std::vector<int>& labels,
                              std::size_t k = 20) {
    const std::size_t n = latents.rows();
    detail::check(n > 1, "knn_accuracy: need more than one point");
    detail::check(labels.size() == n, "knn_accuracy: labels misaligned");
    KnnResult res;
    res.used_k = k;
    if (k >= n) {
        res.used_k = n - 1;
        res.clamped = true;
    }

    std::size_t correct = 0;
    std::vector<std::pair<double, std::size_t>> dist(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dist[w++] = {la::sq_dist(latents.row_span(i), latents.row_span(j)), j};
        }
        std::sort(dist.begin(), dist.end());
        std::map<int, std::size_t> votes;
        for (std::size_t r = 0; r < res.used_k; ++r) votes[labels[dist[r].second]]++;
        int best = -1;
        std::size_t best_count = 0;
        for (const auto& [lab, count] : votes) {
            if (count > best_count) {  // std::map iterates labels ascending
                best = lab;
                best_count = count;
            }
        }
        if (best == labels[i]) ++correct;
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return res;
}

// ---------------------------------------------------------------------------
// Clustering agreement. completeness = 1 - H(C|K)/H(C) with 0/0 -> 1;
// NMI = I(C;K)/sqrt(H(C) H(K)) with 0/0 -> 0. Natural logarithms.
// ---------------------------------------------------------------------------

struct ClusterScores {
    double purity = 0.0;
    double completeness = 0.0;
    double nmi = 0.0;
};

inline ClusterScores cluster_scores(const std::vector<int>& assignments,
                                    const std::vector<int>& true_labels) {
    detail::check(assignments.size() == true_labels.size(), "cluster_scores: length mismatch");
    detail::check(!assignments.empty(), "cluster_scores: empty input");
    const double n = static_cast<double>(assignments.size());

    std::map<std::pair<int, int>, std::size_t> joint;
    std::map<int, std::size_t> by_cluster, by_class;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        joint[{assignments[i], true_labels[i]}]++;
        by_cluster[assignments[i]]++;
        by_class[true_labels[i]]++;
    }

    double purity = 0.0;
    for (const auto& [k, nk] : by_cluster) {
        std::size_t best = 0;
        for (const auto& [kc, cnt] : joint)
            if (kc.first == k) best = std::max(best, cnt);
        purity += static_cast<double>(best);
    }
    purity /= n;

    auto entropy = [n](const std::map<int, std::size_t>& counts) {
        double h = 0.0;
        for (const auto& [key, c] : counts) {
            const double p = static_cast<double>(c) / n;
            if (p > 0.0) h -= p * std::log(p);
        }
        return h;
    };
    const double h_class = entropy(by_class);
    const double h_cluster = entropy(by_cluster);

    double h_class_given_cluster = 0.0;
    for (const auto& [kc, cnt] : joint) {
        const double p_joint = static_cast<double>(cnt) / n;
        const double p_cluster = static_cast<double>(by_cluster.at(kc.first)) / n;
        h_class_given_cluster -= p_joint * std::log(p_joint / p_cluster);
    }

    ClusterScores s;
    s.purity = purity;
    s.completeness = h_class == 0.0 ? 1.0 : 1.0 - h_class_given_cluster / h_class;
    const double mi = h_class - h_class_given_cluster;
    s.nmi = (h_class == 0.0 || h_cluster == 0.0)
                ? 0.0
                : std::max(0.0, mi) / std::sqrt(h_class * h_cluster);
    return s;
}

// ---------------------------------------------------------------------------
// Evaluation report: flat key=value block, one metric per line, 'na' for
// metrics that do not apply to the run mode.
// ---------------------------------------------------------------------------

struct EvalReport {
    double elbo = 0.0;
    std::optional<double> mmd;
    double latent_nll = 0.0;
    std::optional<double> knn_acc;
    std::optional<double> purity;
    std::optional<double> completeness;
    std::optional<double> nmi;
    std::size_t n_eval = 0;

    std::string to_text() const {
        auto fmt = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.12g", v);
            return std::string(buf);
        };
        auto opt = [&fmt](const std::optional<double>& v) { return v ? fmt(*v) : std::string("na"); };
        std::string out;
        out += "elbo=" + fmt(elbo) + "\n";
        out += "mmd=" + opt(mmd) + "\n";
        out += "latent_nll=" + fmt(latent_nll) + "\n";
        out += "knn_acc=" + opt(knn_acc) + "\n";
        out += "purity=" + opt(purity) + "\n";
        out += "completeness=" + opt(completeness) + "\n";
        out += "nmi=" + opt(nmi) + "\n";
        out += "n_eval=" + std::to_string(n_eval) + "\n";
        return out;
    }
};

}  // namespace ddvi
