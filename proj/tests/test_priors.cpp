#include <catch_amalgamated.hpp>
#include <set>

#include "ddvi/priors.hpp"

using namespace ddvi;

TEST_CASE("sample_prior: n=0 gives empty arrays") {
    Rng rng(1);
    const auto s = sample_prior({.kind = PriorKind::pinwheel}, 0, rng);
    CHECK(s.points.numel() == 0);
    CHECK(s.labels.empty());
}

TEST_CASE("sample_prior: pinwheel produces exactly 10 labels") {
    Rng rng(2);
    const auto s = sample_prior({.kind = PriorKind::pinwheel}, 10000, rng);
    std::set<int> seen(s.labels.begin(), s.labels.end());
    CHECK(seen.size() == 10);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 9);
}

TEST_CASE("sample_prior: square stays within the noisy perimeter band") {
    Rng rng(3);
    PriorSpec spec{.kind = PriorKind::square};
    const auto s = sample_prior(spec, 10000, rng);
    const double limit = 1.0 + 4.0 * spec.square_sigma;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < 10000; ++i) {
        if (std::fabs(s.points(i, 0)) <= limit && std::fabs(s.points(i, 1)) <= limit) ++inside;
    }
    CHECK(static_cast<double>(inside) / 10000.0 >= 0.9999);
}

TEST_CASE("sample_prior: deterministic for fixed seed") {
    auto draw = [] {
        Rng rng(77);
        return sample_prior({.kind = PriorKind::swiss_roll}, 256, rng);
    };
    const auto a = draw();
    const auto b = draw();
    CHECK(a.points.data == b.points.data);
    CHECK(a.labels == b.labels);
}

TEST_CASE("sample_prior: unknown kind string is rejected") {
    CHECK_THROWS_AS(prior_kind_from("pinwheell"), std::invalid_argument);
}

TEST_CASE("partition labels follow the 1-D position") {
    // 10 equal intervals of the generator position
    CHECK(interval_label(0.05) == 0);
    CHECK(interval_label(0.95) == 9);
    CHECK(interval_label(0.1) == 1);

    // histogram over swiss roll samples is uniform within 3 sigma per bin
    Rng rng(4);
    const auto s = sample_prior({.kind = PriorKind::swiss_roll}, 100000, rng);
    std::array<std::size_t, 10> counts{};
    for (int l : s.labels) counts[static_cast<std::size_t>(l)]++;
    const double sigma = std::sqrt(0.1 * 0.9 / 100000.0);
    for (auto c : counts)
        CHECK(std::fabs(static_cast<double>(c) / 100000.0 - 0.1) < 3.0 * sigma);
}

TEST_CASE("sample_prior_class: rejection sampling matches the partition") {
    Rng rng(5);
    PriorSpec spec{.kind = PriorKind::square};
    const auto s = sample_prior_class(spec, 7, 200, rng);
    for (int l : s.labels) CHECK(l == 7);
    // interval 7 of the clockwise walk lies on the bottom/left edges; every
    // point must sit close to the perimeter
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
        const double x = s.points(i, 0), y = s.points(i, 1);
        const double m = std::max(std::fabs(x), std::fabs(y));
        CHECK(std::fabs(m - 1.0) < 5.0 * spec.square_sigma);
    }
}

TEST_CASE("gaussian prior: first two moments over 1e5 samples") {
    Rng rng(6);
    const std::size_t n = 100000;
    const auto s = sample_prior({.kind = PriorKind::gaussian, .dim = 2}, n, rng);
    double m0 = 0, m1 = 0, c00 = 0, c01 = 0, c11 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        m0 += s.points(i, 0);
        m1 += s.points(i, 1);
    }
    m0 /= n;
    m1 /= n;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = s.points(i, 0) - m0, b = s.points(i, 1) - m1;
        c00 += a * a;
        c01 += a * b;
        c11 += b * b;
    }
    c00 /= n;
    c01 /= n;
    c11 /= n;
    const double se_mean = 1.0 / std::sqrt(static_cast<double>(n));
    const double se_var = std::sqrt(2.0 / static_cast<double>(n));
    CHECK(std::fabs(m0) < 3 * se_mean);
    CHECK(std::fabs(m1) < 3 * se_mean);
    CHECK(std::fabs(c00 - 1.0) < 3 * se_var);
    CHECK(std::fabs(c11 - 1.0) < 3 * se_var);
    CHECK(std::fabs(c01) < 3 * se_mean);
}

TEST_CASE("mixture prior: labels are component ids near their means") {
    Rng rng(7);
    PriorSpec spec{.kind = PriorKind::mixture, .mixture_k = 6, .mixture_sigma = 0.05,
                   .mixture_radius = 1.0};
    const auto means = spec.mixture_means();
    const auto s = sample_prior(spec, 3000, rng);
    std::set<int> seen(s.labels.begin(), s.labels.end());
    CHECK(seen.size() == 6);
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
        const auto& m = means[static_cast<std::size_t>(s.labels[i])];
        const double dx = s.points(i, 0) - m[0], dy = s.points(i, 1) - m[1];
        CHECK(std::sqrt(dx * dx + dy * dy) < 6.0 * spec.mixture_sigma);
    }
}

TEST_CASE("kde: single fit point at the origin has the closed-form density") {
    KdeDensity kde(Tensor::matrix(1, 2, {0.0, 0.0}));
    double acc = 0.0;
    for (double b : default_kde_bandwidths()) acc += 1.0 / (2.0 * kPi * b * b);
    const double expected = std::log(acc / 5.0);
    const std::array<double, 2> q{0.0, 0.0};
    CHECK(kde.log_density(q) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kde: faraway query has very small but finite log-density") {
    Rng rng(8);
    Tensor pts({20, 2});
    rng.fill_normal(pts);
    KdeDensity kde(pts);
    const std::array<double, 2> q{100.0, 100.0};
    const double ld = kde.log_density(q);
    CHECK(std::isfinite(ld));
    CHECK(ld < -1000.0);
}

TEST_CASE("kde: translation invariance") {
    Rng rng(9);
    Tensor pts({15, 2});
    rng.fill_normal(pts);
    KdeDensity a(pts);
    Tensor shifted = pts;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
        shifted(i, 0) += 3.7;
        shifted(i, 1) -= 1.2;
    }
    KdeDensity b(shifted);
    const std::array<double, 2> q{0.4, -0.9};
    const std::array<double, 2> qs{0.4 + 3.7, -0.9 - 1.2};
    CHECK(std::fabs(a.log_density(q) - b.log_density(qs)) < 1e-12);
}

TEST_CASE("kde: empty fit set is a contract violation") {
    CHECK_THROWS_AS(KdeDensity(Tensor({0, 2})), std::invalid_argument);
}

TEST_CASE("kde: density integrates to one (quadrature oracle)") {
    // Wide bandwidths so a coarse grid resolves the mixture.
    Tensor pts = Tensor::matrix(3, 2, {0.0, 0.0, 0.8, -0.4, -0.5, 0.6});
    KdeDensity kde(pts, {0.3, 0.5});
    const double h = 0.02;
    double integral = 0.0;
    for (double x = -4.0; x < 4.0; x += h) {
        for (double y = -4.0; y < 4.0; y += h) {
            const std::array<double, 2> q{x + h / 2, y + h / 2};
            integral += std::exp(kde.log_density(q)) * h * h;
        }
    }
    CHECK(integral == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("kde: tape and plain log-densities agree") {
    Rng rng(10);
    Tensor pts({12, 2});
    rng.fill_normal(pts);
    KdeDensity kde(pts);
    Tensor q({5, 2});
    rng.fill_uniform(q, -2.0, 2.0);

    ad::Tape tape;
    ad::Var lv = kde.log_density(tape, tape.constant(q));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(tape.value(lv).data[i] == Catch::Approx(kde.log_density(q.row_span(i))).epsilon(1e-12));
    }
}

TEST_CASE("prior density: constant shift moves log-density by that constant") {
    Rng rng(11);
    PriorDensity pd = PriorDensity::for_spec({.kind = PriorKind::gaussian, .dim = 2}, 0, rng);
    const std::array<double, 2> q{0.3, -0.8};
    const double before = pd.log_density(q);
    pd.shift_log_density(std::log(5.0));
    CHECK(pd.log_density(q) == Catch::Approx(before + std::log(5.0)).epsilon(1e-12));
}
