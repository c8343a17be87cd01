#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ddvi/linalg.hpp"
#include "ddvi/rng.hpp"
#include "ddvi/tape.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

enum class PriorKind { pinwheel, swiss_roll, square, gaussian, mixture };

inline PriorKind prior_kind_from(const std::string& s) {
    if (s == "pinwheel") return PriorKind::pinwheel;
    if (s == "swiss_roll") return PriorKind::swiss_roll;
    if (s == "square") return PriorKind::square;
    if (s == "gaussian") return PriorKind::gaussian;
    if (s == "mixture") return PriorKind::mixture;
    throw std::invalid_argument("unknown prior kind '" + s + "'");
}

inline std::string to_string(PriorKind k) {
    switch (k) {
        case PriorKind::pinwheel: return "pinwheel";
        case PriorKind::swiss_roll: return "swiss_roll";
        case PriorKind::square: return "square";
        case PriorKind::gaussian: return "gaussian";
        case PriorKind::mixture: return "mixture";
    }
    return "?";
}

struct PriorSpec {
    PriorKind kind = PriorKind::pinwheel;
    std::size_t dim = 2;  // used by the gaussian kind; structured priors are 2-D

    // pinwheel
    std::size_t arms = 10;

    // structured noise levels
    double square_sigma = 0.06;
    double swiss_sigma = 0.02;

    // mixture of isotropic Gaussians; means default to an even circle unless
    // given explicitly
    std::size_t mixture_k = 20;
    double mixture_sigma = 0.1;
    double mixture_radius = 1.0;
    std::vector<std::array<double, 2>> explicit_means;

    std::size_t partitions() const {
        switch (kind) {
            case PriorKind::pinwheel:
            case PriorKind::swiss_roll:
            case PriorKind::square: return 10;
            case PriorKind::mixture: return mixture_k;
            case PriorKind::gaussian: return 1;
        }
        return 1;
    }

    std::size_t sample_dim() const { return kind == PriorKind::gaussian ? dim : 2; }

    std::vector<std::array<double, 2>> mixture_means() const {
        if (!explicit_means.empty()) {
            detail::check(explicit_means.size() == mixture_k,
                          "PriorSpec: explicit means count differs from mixture_k");
            return explicit_means;
        }
        std::vector<std::array<double, 2>> m(mixture_k);
        for (std::size_t i = 0; i < mixture_k; ++i) {
            const double a = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(mixture_k);
            m[i] = {mixture_radius * std::cos(a), mixture_radius * std::sin(a)};
        }
        return m;
    }
};

struct PriorSample {
    Tensor points;            // n x dim
    std::vector<int> labels;  // n partition ids
};

// Partition rule for the 1-D structured priors: 10 equal-length intervals of
// the generator position u in [0,1).
inline int interval_label(double u) {
    int l = static_cast<int>(u * 10.0);
    if (l < 0) l = 0;
    if (l > 9) l = 9;
    return l;
}

namespace detail {

inline void sample_pinwheel_point(const PriorSpec& spec, Rng& rng, int arm, double* out) {
    // 10 spiral arms: radial distance |N(0.3, 0.05^2)| + 0.3, tangential
    // jitter N(0, 0.05^2), arm angle rotated by 0.25 * radius.
    const double r = std::fabs(rng.normal(0.3, 0.05)) + 0.3;
    const double s = rng.normal(0.0, 0.05);
    const double theta =
        2.0 * kPi * static_cast<double>(arm) / static_cast<double>(spec.arms) + 0.25 * r;
    out[0] = r * std::cos(theta) - s * std::sin(theta);
    out[1] = r * std::sin(theta) + s * std::cos(theta);
}

inline void sample_swiss_point(const PriorSpec& spec, Rng& rng, double u, double* out) {
    const double angle = 3.0 * kPi * (0.5 + u);
    const double scale = 3.0 * kPi * 1.5;
    out[0] = angle * std::cos(angle) / scale + rng.normal(0.0, spec.swiss_sigma);
    out[1] = angle * std::sin(angle) / scale + rng.normal(0.0, spec.swiss_sigma);
}

// Walks the square perimeter clockwise from the top-left corner (-1, 1);
// u in [0,1) covers the full length of 8.
inline void square_perimeter_point(double u, double* out) {
    const double t = u * 8.0;
    if (t < 2.0) {
        out[0] = -1.0 + t;
        out[1] = 1.0;
    } else if (t < 4.0) {
        out[0] = 1.0;
        out[1] = 1.0 - (t - 2.0);
    } else if (t < 6.0) {
        out[0] = 1.0 - (t - 4.0);
        out[1] = -1.0;
    } else {
        out[0] = -1.0;
        out[1] = -1.0 + (t - 6.0);
    }
}

}  // namespace detail

inline void sample_prior_point(const PriorSpec& spec, Rng& rng, double* out, int& label) {
    switch (spec.kind) {
        case PriorKind::pinwheel: {
            const int arm = static_cast<int>(rng.below(spec.arms));
            detail::sample_pinwheel_point(spec, rng, arm, out);
            label = arm;
            return;
        }
        case PriorKind::swiss_roll: {
            const double u = rng.uniform();
            detail::sample_swiss_point(spec, rng, u, out);
            label = interval_label(u);
            return;
        }
        case PriorKind::square: {
            const double u = rng.uniform();
            detail::square_perimeter_point(u, out);
            out[0] += rng.normal(0.0, spec.square_sigma);
            out[1] += rng.normal(0.0, spec.square_sigma);
            label = interval_label(u);
            return;
        }
        case PriorKind::gaussian: {
            for (std::size_t j = 0; j < spec.dim; ++j) out[j] = rng.normal();
            label = 0;
            return;
        }
        case PriorKind::mixture: {
            const auto means = spec.mixture_means();
            const int c = static_cast<int>(rng.below(spec.mixture_k));
            out[0] = means[c][0] + rng.normal(0.0, spec.mixture_sigma);
            out[1] = means[c][1] + rng.normal(0.0, spec.mixture_sigma);
            label = c;
            return;
        }
    }
    throw std::invalid_argument("sample_prior_point: unknown prior kind");
}

inline PriorSample sample_prior(const PriorSpec& spec, std::size_t n, Rng& rng) {
    PriorSample s;
    s.points = Tensor({n, spec.sample_dim()});
    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        sample_prior_point(spec, rng, s.points.data.data() + i * spec.sample_dim(), s.labels[i]);
    return s;
}

// Rejection-samples points from one partition. Mixture components are drawn
// directly; structured priors retry until the generator label matches.
inline PriorSample sample_prior_class(const PriorSpec& spec, int label, std::size_t n, Rng& rng) {
    detail::check(label >= 0 && static_cast<std::size_t>(label) < spec.partitions(),
                  "sample_prior_class: label out of range");
    PriorSample s;
    s.points = Tensor({n, spec.sample_dim()});
    s.labels.assign(n, label);
    if (spec.kind == PriorKind::mixture) {
        const auto means = spec.mixture_means();
        for (std::size_t i = 0; i < n; ++i) {
            s.points(i, 0) = means[label][0] + rng.normal(0.0, spec.mixture_sigma);
            s.points(i, 1) = means[label][1] + rng.normal(0.0, spec.mixture_sigma);
        }
        return s;
    }
    if (spec.kind == PriorKind::gaussian) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < spec.dim; ++j) s.points(i, j) = rng.normal();
        return s;
    }
    for (std::size_t i = 0; i < n; ++i) {
        int got = -1;
        double buf[2];
        do {
            sample_prior_point(spec, rng, buf, got);
        } while (got != label);
        s.points(i, 0) = buf[0];
        s.points(i, 1) = buf[1];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Kernel density estimate: uniform mixture over fit points and a fixed set
// of Gaussian bandwidths. Densities are proper (each component normalized).
// ---------------------------------------------------------------------------

inline const std::vector<double>& default_kde_bandwidths() {
    static const std::vector<double> bw = {0.005, 0.008, 0.01, 0.03, 0.05};
    return bw;
}

class KdeDensity {
public:
    KdeDensity() = default;

    explicit KdeDensity(Tensor fit_points, std::vector<double> bandwidths = default_kde_bandwidths())
        : points_(std::move(fit_points)), bandwidths_(std::move(bandwidths)) {
        detail::check(points_.is_matrix() && points_.rows() > 0, "KdeDensity: empty fit set");
        detail::check(!bandwidths_.empty(), "KdeDensity: no bandwidths");
    }

    std::size_t dim() const { return points_.cols(); }
    std::size_t fit_count() const { return points_.rows(); }
    const Tensor& fit_points() const { return points_; }

    double log_density(std::span<const double> q) const {
        detail::check(q.size() == points_.cols(), "KdeDensity: query dimension mismatch");
        const std::size_t p = points_.rows();
        const double d = static_cast<double>(points_.cols());
        std::vector<double> comps;
        comps.reserve(p * bandwidths_.size());
        for (std::size_t i = 0; i < p; ++i) {
            const double dist2 = la::sq_dist(q, points_.row_span(i));
            for (double b : bandwidths_)
                comps.push_back(-dist2 / (2.0 * b * b) - 0.5 * d * std::log(2.0 * kPi * b * b));
        }
        return la::logsumexp(comps) -
               std::log(static_cast<double>(p) * static_cast<double>(bandwidths_.size()));
    }

    // Differentiable version: z is (n, d) on a tape, result is (n, 1).
    ad::Var log_density(ad::Tape& tape, ad::Var z) const {
        const Tensor& Z = tape.value(z);
        detail::check(Z.cols() == points_.cols(), "KdeDensity: query dimension mismatch");
        const std::size_t p = points_.rows();
        const double d = static_cast<double>(points_.cols());

        Tensor pt = la::transpose(points_);  // d x p
        Tensor psq({1, p});
        for (std::size_t i = 0; i < p; ++i) {
            double s = 0.0;
            for (double v : points_.row_span(i)) s += v * v;
            psq.data[i] = s;
        }
        // squared distances via |z|^2 - 2 z.p + |p|^2
        ad::Var cross = ad::matmul(z, tape.constant(std::move(pt)));
        ad::Var zsq = ad::row_sum(ad::square(z));
        ad::Var dist2 = ad::add_col(ad::add_row(ad::scale(cross, -2.0), tape.constant(std::move(psq))), zsq);

        ad::Var comps{};
        bool first = true;
        for (double b : bandwidths_) {
            ad::Var term = ad::add_scalar(ad::scale(dist2, -1.0 / (2.0 * b * b)),
                                          -0.5 * d * std::log(2.0 * kPi * b * b));
            comps = first ? term : ad::concat_cols(comps, term);
            first = false;
        }
        return ad::add_scalar(
            ad::logsumexp_rows(comps),
            -std::log(static_cast<double>(p) * static_cast<double>(bandwidths_.size())));
    }

private:
    Tensor points_;
    std::vector<double> bandwidths_;
};

// ---------------------------------------------------------------------------
// Unified prior log-density: analytic for gaussian and mixture kinds, KDE fit
// to prior samples for the structured kinds.
// ---------------------------------------------------------------------------

class PriorDensity {
public:
    PriorDensity() = default;

    static PriorDensity analytic_gaussian(std::size_t dim) {
        PriorDensity p;
        p.mode_ = Mode::gaussian;
        p.dim_ = dim;
        return p;
    }

    static PriorDensity analytic_mixture(const PriorSpec& spec) {
        PriorDensity p;
        p.mode_ = Mode::kde;  // a mixture of equal isotropic Gaussians is a KDE
        Tensor means({spec.mixture_k, 2});
        const auto ms = spec.mixture_means();
        for (std::size_t i = 0; i < spec.mixture_k; ++i) {
            means(i, 0) = ms[i][0];
            means(i, 1) = ms[i][1];
        }
        p.kde_ = KdeDensity(std::move(means), {spec.mixture_sigma});
        return p;
    }

    static PriorDensity fit_kde(const PriorSpec& spec, std::size_t fit_points, Rng& rng) {
        return from_points(sample_prior(spec, fit_points, rng).points);
    }

    // KDE over an explicit fit set with the default bandwidth mixture.
    static PriorDensity from_points(Tensor fit_points) {
        PriorDensity p;
        p.mode_ = Mode::kde;
        p.kde_ = KdeDensity(std::move(fit_points));
        return p;
    }

    // Chooses the analytic path when one exists, otherwise fits the KDE.
    static PriorDensity for_spec(const PriorSpec& spec, std::size_t kde_fit_points, Rng& rng) {
        switch (spec.kind) {
            case PriorKind::gaussian: return analytic_gaussian(spec.dim);
            case PriorKind::mixture: return analytic_mixture(spec);
            default: return fit_kde(spec, kde_fit_points, rng);
        }
    }

    double log_density(std::span<const double> q) const {
        switch (mode_) {
            case Mode::gaussian: {
                double s = 0.0;
                for (double v : q) s += v * v;
                return -0.5 * s - 0.5 * static_cast<double>(dim_) * kLog2Pi + log_shift_;
            }
            case Mode::kde: return kde_.log_density(q) + log_shift_;
            case Mode::unset: break;
        }
        throw std::invalid_argument("PriorDensity: no density available");
    }

    ad::Var log_density(ad::Tape& tape, ad::Var z) const {
        switch (mode_) {
            case Mode::gaussian: {
                ad::Var q = ad::scale(ad::row_sum(ad::square(z)), -0.5);
                return ad::add_scalar(q, -0.5 * static_cast<double>(dim_) * kLog2Pi + log_shift_);
            }
            case Mode::kde: return ad::add_scalar(kde_.log_density(tape, z), log_shift_);
            case Mode::unset: break;
        }
        throw std::invalid_argument("PriorDensity: no density available");
    }

    // Constant offset on the log scale (used by tests and density-weight knobs).
    void shift_log_density(double delta) { log_shift_ += delta; }

    bool available() const { return mode_ != Mode::unset; }

private:
    enum class Mode { unset, gaussian, kde };
    Mode mode_ = Mode::unset;
    std::size_t dim_ = 2;
    double log_shift_ = 0.0;
    KdeDensity kde_;
};

}  // namespace ddvi
