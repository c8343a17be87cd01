#pragma once

#include <functional>
#include <vector>

#include "ddvi/nets.hpp"
#include "ddvi/priors.hpp"
#include "ddvi/rng.hpp"
#include "ddvi/tape.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

// ---------------------------------------------------------------------------
// Forward noising process r: y_t = sqrt(1-beta_t) * y_{t-1} + sqrt(beta_t) * eps,
// with signal retention bar_alpha_t = prod_{s<=t} (1 - beta_s).
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    std::size_t T = 20;
    std::vector<double> beta;       // index 1..T, [0] unused
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> bar_alpha;  // index 0..T, [0] = 1

    static NoiseSchedule linear(std::size_t T, double beta_start, double beta_end) {
        detail::check(T >= 1, "NoiseSchedule: T must be >= 1");
        NoiseSchedule s;
        s.T = T;
        s.beta.assign(T + 1, 0.0);
        s.alpha.assign(T + 1, 1.0);
        s.bar_alpha.assign(T + 1, 1.0);
        for (std::size_t t = 1; t <= T; ++t) {
            const double frac = T == 1 ? 0.0
                                       : static_cast<double>(t - 1) / static_cast<double>(T - 1);
            s.beta[t] = beta_start + frac * (beta_end - beta_start);
            detail::check(s.beta[t] > 0.0 && s.beta[t] < 1.0, "NoiseSchedule: beta out of (0,1)");
            s.alpha[t] = 1.0 - s.beta[t];
            s.bar_alpha[t] = s.bar_alpha[t - 1] * s.alpha[t];
            detail::check(s.bar_alpha[t] < s.bar_alpha[t - 1],
                          "NoiseSchedule: bar_alpha must strictly decrease");
        }
        return s;
    }

    // Fixed reverse-step deviations sigma_t = sqrt(beta_t).
    std::vector<double> default_sigma() const {
        std::vector<double> s(T + 1, 0.0);
        for (std::size_t t = 1; t <= T; ++t) s[t] = std::sqrt(beta[t]);
        return s;
    }
};

// Closed-form marginal y_t = sqrt(bar_alpha_t) z + sqrt(1 - bar_alpha_t) noise.
// t = 0 is the no-noise boundary and returns z itself.
inline Tensor forward_marginal(const NoiseSchedule& sched, const Tensor& z, std::size_t t,
                               const Tensor& noise) {
    detail::check(t <= sched.T, "forward_marginal: t out of range");
    detail::check(z.same_shape(noise), "forward_marginal: z/noise shape mismatch");
    const double a = std::sqrt(sched.bar_alpha[t]);
    const double b = std::sqrt(1.0 - sched.bar_alpha[t]);
    Tensor y(z.shape);
    for (std::size_t i = 0; i < z.numel(); ++i) y.data[i] = a * z.data[i] + b * noise.data[i];
    return y;
}

// Per-row variant: row i of the batch is noised to its own step t_i.
inline Tensor forward_marginal_rows(const NoiseSchedule& sched, const Tensor& z,
                                    const std::vector<std::size_t>& t, const Tensor& noise) {
    detail::check(z.rows() == t.size(), "forward_marginal_rows: batch size mismatch");
    Tensor y(z.shape);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        detail::check(t[i] >= 1 && t[i] <= sched.T, "forward_marginal_rows: t out of range");
        const double a = std::sqrt(sched.bar_alpha[t[i]]);
        const double b = std::sqrt(1.0 - sched.bar_alpha[t[i]]);
        for (std::size_t j = 0; j < z.cols(); ++j) y(i, j) = a * z(i, j) + b * noise(i, j);
    }
    return y;
}

using GaussSource = std::function<double()>;
using NoisePredictor = std::function<Tensor(const Tensor& y, std::size_t t)>;

inline GaussSource gauss_from(Rng& rng) {
    return [&rng] { return rng.normal(); };
}

inline GaussSource zero_noise() {
    return [] { return 0.0; };
}

// ---------------------------------------------------------------------------
// Reverse chain q: y_T ~ N(mu_enc, diag exp(logvar_enc)), then for t = T..1
//   y_{t-1} = (y_t - beta_t / sqrt(1 - bar_alpha_t) * eps_hat(y_t, t)) / sqrt(alpha_t)
//             + sigma_t * eta.
// The chain is fully reparameterized: noise enters as constants.
// ---------------------------------------------------------------------------

struct Trajectory {
    Tensor mu, logvar;        // encoder heads for y_T (may be empty for raw chains)
    std::vector<Tensor> ys;   // ys[t] for t = 0..T; ys[0] is z
    std::vector<double> sigma;  // sigma[t] for t = 1..T
    std::size_t T = 0;
    std::size_t latent = 0;

    const Tensor& z() const { return ys[0]; }
};

inline Tensor reverse_step_mean(const NoiseSchedule& sched, const Tensor& y, const Tensor& eps_hat,
                                std::size_t t) {
    const double coef = sched.beta[t] / std::sqrt(1.0 - sched.bar_alpha[t]);
    const double inv = 1.0 / std::sqrt(sched.alpha[t]);
    Tensor m(y.shape);
    for (std::size_t i = 0; i < y.numel(); ++i)
        m.data[i] = (y.data[i] - coef * eps_hat.data[i]) * inv;
    return m;
}

inline Trajectory reverse_chain_plain(const NoiseSchedule& sched, const std::vector<double>& sigma,
                                      Tensor y_T, const NoisePredictor& pred,
                                      const GaussSource& gauss) {
    detail::check(sigma.size() == sched.T + 1, "reverse_chain: sigma size mismatch");
    Trajectory traj;
    traj.T = sched.T;
    traj.latent = y_T.cols();
    traj.sigma = sigma;
    traj.ys.assign(sched.T + 1, Tensor{});
    traj.ys[sched.T] = std::move(y_T);
    for (std::size_t t = sched.T; t >= 1; --t) {
        const Tensor eps_hat = pred(traj.ys[t], t);
        Tensor m = reverse_step_mean(sched, traj.ys[t], eps_hat, t);
        if (sigma[t] != 0.0)
            for (double& v : m.data) v += sigma[t] * gauss();
        traj.ys[t - 1] = std::move(m);
    }
    return traj;
}

inline Trajectory reverse_sample_plain(const MlpEncoder& enc, const TimeMlp& eps_net,
                                       const NoiseSchedule& sched, const std::vector<double>& sigma,
                                       const Tensor& x, const Tensor& xfeat,
                                       const GaussSource& gauss) {
    const auto heads = enc.forward_plain(x);
    Tensor y_T(heads.mu.shape);
    for (std::size_t i = 0; i < y_T.numel(); ++i)
        y_T.data[i] = heads.mu.data[i] + std::exp(0.5 * heads.logvar.data[i]) * gauss();
    const std::size_t n = x.rows();
    auto pred = [&](const Tensor& y, std::size_t t) {
        return eps_net.forward_plain(y, xfeat, std::vector<std::size_t>(n, t));
    };
    Trajectory traj = reverse_chain_plain(sched, sigma, std::move(y_T), pred, gauss);
    traj.mu = heads.mu;
    traj.logvar = heads.logvar;
    return traj;
}

struct TrajectoryVars {
    ad::Var mu, logvar;
    std::vector<ad::Var> ys;  // ys[t] for t = 0..T
    std::vector<double> sigma;
    std::size_t T = 0;
    std::size_t latent = 0;
    std::size_t batch = 0;

    ad::Var z() const { return ys[0]; }
};

inline TrajectoryVars reverse_sample(ad::Tape& tape, const Binding& bind, const MlpEncoder& enc,
                                     const TimeMlp& eps_net, const NoiseSchedule& sched,
                                     const std::vector<double>& sigma, const Tensor& x,
                                     const Tensor& xfeat, const GaussSource& gauss) {
    detail::check(sigma.size() == sched.T + 1, "reverse_sample: sigma size mismatch");
    TrajectoryVars traj;
    traj.T = sched.T;
    traj.latent = enc.config().latent;
    traj.batch = x.rows();
    traj.sigma = sigma;
    traj.ys.assign(sched.T + 1, ad::Var{});

    const auto heads = enc.forward(bind, tape.constant(x));
    traj.mu = heads.mu;
    traj.logvar = heads.logvar;
    Tensor eta({traj.batch, traj.latent});
    for (double& v : eta.data) v = gauss();
    traj.ys[sched.T] = ad::reparam_sample(heads.mu, heads.logvar, tape.constant(eta));

    ad::Var xfeat_c = tape.constant(xfeat);
    for (std::size_t t = sched.T; t >= 1; --t) {
        ad::Var eps_hat =
            eps_net.forward(bind, traj.ys[t], xfeat_c, std::vector<std::size_t>(traj.batch, t));
        const double coef = sched.beta[t] / std::sqrt(1.0 - sched.bar_alpha[t]);
        const double inv = 1.0 / std::sqrt(sched.alpha[t]);
        ad::Var m = ad::scale(ad::sub(traj.ys[t], ad::scale(eps_hat, coef)), inv);
        if (sigma[t] != 0.0) {
            Tensor step_noise({traj.batch, traj.latent});
            for (double& v : step_noise.data) v = sigma[t] * gauss();
            m = ad::add(m, tape.constant(step_noise));
        }
        traj.ys[t - 1] = m;
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Entropy of the reverse chain: T+1 Gaussian transitions (the T reverse steps
// with fixed sigma_t plus the encoder's diagonal Gaussian over y_T). It
// depends only on the variances, never on the sampled path.
// ---------------------------------------------------------------------------

inline double entropy_fixed_part(std::size_t d, const std::vector<double>& sigma, std::size_t T) {
    const double dd = static_cast<double>(d);
    double h = (static_cast<double>(T) + 1.0) * 0.5 * dd * (1.0 + kLog2Pi);
    for (std::size_t t = 1; t <= T; ++t) {
        detail::check(sigma[t] > 0.0, "entropy: sigma must be positive");
        h += dd * std::log(sigma[t]);
    }
    return h;
}

// Mean entropy over the batch items of a trajectory.
inline double entropy_term(const Trajectory& traj) {
    double h = entropy_fixed_part(traj.latent, traj.sigma, traj.T);
    double lv = 0.0;
    for (double v : traj.logvar.data) lv += v;
    return h + 0.5 * lv / static_cast<double>(traj.logvar.rows());
}

inline ad::Var entropy_term(ad::Tape& tape, const TrajectoryVars& traj) {
    const double h = entropy_fixed_part(traj.latent, traj.sigma, traj.T);
    ad::Var lv = ad::scale(ad::sum(traj.logvar), 0.5 / static_cast<double>(traj.batch));
    (void)tape;
    return ad::add_scalar(lv, h);
}

// ---------------------------------------------------------------------------
// Noise-prediction (sleep) surrogate:
//   E_{t, eps} || eps - eps_phi(sqrt(bar_a_t) z + sqrt(1-bar_a_t) eps, x, t) ||^2
// averaged over the batch. z, x and the draws are constants; only the
// prediction network receives gradients.
// ---------------------------------------------------------------------------

inline void sample_surrogate_draws(const NoiseSchedule& sched, std::size_t n, std::size_t d,
                                   Rng& rng, std::vector<std::size_t>& ts, Tensor& eps) {
    ts.resize(n);
    eps = Tensor({n, d});
    for (std::size_t i = 0; i < n; ++i) ts[i] = 1 + static_cast<std::size_t>(rng.below(sched.T));
    for (double& v : eps.data) v = rng.normal();
}

inline ad::Var diffusion_loss(ad::Tape& tape, const Binding& bind, const TimeMlp& eps_net,
                              const NoiseSchedule& sched, const Tensor& z, const Tensor& xfeat,
                              const std::vector<std::size_t>& ts, const Tensor& eps) {
    detail::check(z.rows() > 0, "diffusion_loss: empty batch");
    const Tensor y = forward_marginal_rows(sched, z, ts, eps);
    ad::Var eps_hat = eps_net.forward(bind, tape.constant(y), tape.constant(xfeat), ts);
    ad::Var err = ad::sub(eps_hat, tape.constant(eps));
    return ad::scale(ad::sum(ad::square(err)), 1.0 / static_cast<double>(z.rows()));
}

inline ad::Var diffusion_loss(ad::Tape& tape, const Binding& bind, const TimeMlp& eps_net,
                              const NoiseSchedule& sched, const Tensor& z, const Tensor& xfeat,
                              Rng& rng) {
    std::vector<std::size_t> ts;
    Tensor eps;
    sample_surrogate_draws(sched, z.rows(), z.cols(), rng, ts, eps);
    return diffusion_loss(tape, bind, eps_net, sched, z, xfeat, ts, eps);
}

// Oracle-friendly flavor: the predictor is any callable.
inline double diffusion_loss_plain(
    const std::function<Tensor(const Tensor& y, const Tensor& xfeat,
                               const std::vector<std::size_t>& ts)>& predictor,
    const NoiseSchedule& sched, const Tensor& z, const Tensor& xfeat,
    const std::vector<std::size_t>& ts, const Tensor& eps) {
    detail::check(z.rows() > 0, "diffusion_loss: empty batch");
    const Tensor y = forward_marginal_rows(sched, z, ts, eps);
    const Tensor eps_hat = predictor(y, xfeat, ts);
    double s = 0.0;
    for (std::size_t i = 0; i < eps.numel(); ++i) {
        const double d = eps_hat.data[i] - eps.data[i];
        s += d * d;
    }
    return s / static_cast<double>(z.rows());
}

// ---------------------------------------------------------------------------
// Prior regularization term, the negative KL between the reverse chain and
// the forward process times the prior:
//   reg = E_q[ sum_t log r(y_t | y_{t-1}) + log p(z) ] + H(q)
// estimated with the given trajectory (one Monte Carlo path per batch item).
// ---------------------------------------------------------------------------

inline double log_r_step(const NoiseSchedule& sched, std::span<const double> y_t,
                         std::span<const double> y_prev, std::size_t t) {
    const double b = sched.beta[t];
    const double sa = std::sqrt(sched.alpha[t]);
    double q = 0.0;
    for (std::size_t j = 0; j < y_t.size(); ++j) {
        const double d = y_t[j] - sa * y_prev[j];
        q += d * d;
    }
    return -0.5 * static_cast<double>(y_t.size()) * std::log(2.0 * kPi * b) - q / (2.0 * b);
}

inline ad::Var prior_reg_from_traj(ad::Tape& tape, const TrajectoryVars& traj,
                                   const NoiseSchedule& sched, const PriorDensity& prior) {
    detail::check(prior.available(), "prior_reg: prior has no density");
    ad::Var acc = prior.log_density(tape, traj.ys[0]);  // n x 1
    for (std::size_t t = 1; t <= sched.T; ++t) {
        const double b = sched.beta[t];
        const double sa = std::sqrt(sched.alpha[t]);
        ad::Var diff = ad::sub(traj.ys[t], ad::scale(traj.ys[t - 1], sa));
        ad::Var quad = ad::scale(ad::row_sum(ad::square(diff)), -1.0 / (2.0 * b));
        ad::Var term = ad::add_scalar(
            quad, -0.5 * static_cast<double>(traj.latent) * std::log(2.0 * kPi * b));
        acc = ad::add(acc, term);
    }
    return ad::add(ad::mean(acc), entropy_term(tape, traj));
}

inline double prior_reg_from_traj_plain(
    const Trajectory& traj, const NoiseSchedule& sched,
    const std::function<double(std::span<const double>)>& log_prior) {
    const std::size_t n = traj.ys[0].rows();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double item = log_prior(traj.ys[0].row_span(i));
        for (std::size_t t = 1; t <= sched.T; ++t)
            item += log_r_step(sched, traj.ys[t].row_span(i), traj.ys[t - 1].row_span(i), t);
        acc += item;
    }
    return acc / static_cast<double>(n) + entropy_term(traj);
}

// Standalone Monte Carlo estimate over n_mc reverse trajectories of one input.
inline double prior_reg_term(const MlpEncoder& enc, const TimeMlp& eps_net,
                             const NoiseSchedule& sched, const std::vector<double>& sigma,
                             const Tensor& x, const Tensor& xfeat, const PriorDensity& prior,
                             std::size_t n_mc, Rng& rng) {
    detail::check(prior.available(), "prior_reg_term: prior has no density");
    detail::check(n_mc >= 1, "prior_reg_term: n_mc must be >= 1");
    auto gauss = gauss_from(rng);
    auto lp = [&prior](std::span<const double> q) { return prior.log_density(q); };
    double acc = 0.0;
    for (std::size_t k = 0; k < n_mc; ++k) {
        const Trajectory traj = reverse_sample_plain(enc, eps_net, sched, sigma, x, xfeat, gauss);
        acc += prior_reg_from_traj_plain(traj, sched, lp);
    }
    return acc / static_cast<double>(n_mc);
}

// ---------------------------------------------------------------------------
// Bound-evaluation mode of the sleep objective. For one latent z with
// conditioning features, the diffusion ELBO of z under the reverse chain:
//   E_r[ log q(z | y_1, x) - sum_{t=2..T} KL(r_t || q_t) ] - KL(r(y_T|z) || q(y_T|x))
// with r_t the forward-process posterior r(y_{t-1} | y_t, z). The expected
// conditional entropy of the model posterior (a constant in phi) may be added
// by the caller when it is known.
// ---------------------------------------------------------------------------

inline double kl_iso_gaussian(std::span<const double> m1, double v1, std::span<const double> m2,
                              double v2) {
    double kl = 0.0;
    for (std::size_t j = 0; j < m1.size(); ++j) {
        const double dm = m2[j] - m1[j];
        kl += 0.5 * (v1 / v2 + dm * dm / v2 - 1.0 + std::log(v2 / v1));
    }
    return kl;
}

inline double log_gaussian_iso(std::span<const double> x, std::span<const double> mean, double var) {
    double q = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double d = x[j] - mean[j];
        q += d * d;
    }
    return -0.5 * static_cast<double>(x.size()) * std::log(2.0 * kPi * var) - q / (2.0 * var);
}

// One batch of latents z; the predictor captures its own conditioning and the
// encoder heads are supplied as tensors. Returns the mean bound value and,
// when requested, the per-row values.
inline double diffusion_bound_core(const NoiseSchedule& sched, const std::vector<double>& sigma,
                                   const Tensor& z, const NoisePredictor& pred,
                                   const Tensor& enc_mu, const Tensor& enc_logvar, Rng& rng,
                                   std::vector<double>* per_row_out = nullptr) {
    const std::size_t n = z.rows(), d = z.cols();
    detail::check(n > 0, "diffusion_bound: empty batch");

    // simulate the forward chain y_1..y_T jointly for all rows
    std::vector<Tensor> ys(sched.T + 1);
    ys[0] = z;
    for (std::size_t t = 1; t <= sched.T; ++t) {
        ys[t] = Tensor({n, d});
        const double sa = std::sqrt(sched.alpha[t]);
        const double sb = std::sqrt(sched.beta[t]);
        for (std::size_t i = 0; i < n * d; ++i)
            ys[t].data[i] = sa * ys[t - 1].data[i] + sb * rng.normal();
    }

    std::vector<double> per_row(n, 0.0);

    // t = 1: log q(z | y_1, x)
    {
        const Tensor eps_hat = pred(ys[1], 1);
        const Tensor m = reverse_step_mean(sched, ys[1], eps_hat, 1);
        for (std::size_t i = 0; i < n; ++i)
            per_row[i] += log_gaussian_iso(z.row_span(i), m.row_span(i), sigma[1] * sigma[1]);
    }

    // t = 2..T: KL(r(y_{t-1} | y_t, z) || q(y_{t-1} | y_t, x))
    for (std::size_t t = 2; t <= sched.T; ++t) {
        const Tensor eps_hat = pred(ys[t], t);
        const Tensor qm = reverse_step_mean(sched, ys[t], eps_hat, t);
        const double ab_prev = sched.bar_alpha[t - 1];
        const double ab = sched.bar_alpha[t];
        const double bt = sched.beta[t];
        const double post_var = bt * (1.0 - ab_prev) / (1.0 - ab);
        const double c0 = std::sqrt(ab_prev) * bt / (1.0 - ab);
        const double c1 = std::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
        std::vector<double> rm(d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) rm[j] = c0 * z(i, j) + c1 * ys[t](i, j);
            per_row[i] -= kl_iso_gaussian(rm, post_var, qm.row_span(i), sigma[t] * sigma[t]);
        }
    }

    // boundary: KL(r(y_T | z) || q(y_T | x)) between diagonal Gaussians
    {
        const double ab = sched.bar_alpha[sched.T];
        const double v1 = 1.0 - ab;
        const double sa = std::sqrt(ab);
        for (std::size_t i = 0; i < n; ++i) {
            double kl = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double m1 = sa * z(i, j);
                const double m2 = enc_mu(i, j);
                const double v2 = std::exp(enc_logvar(i, j));
                const double dm = m2 - m1;
                kl += 0.5 * (v1 / v2 + dm * dm / v2 - 1.0 + std::log(v2 / v1));
            }
            per_row[i] -= kl;
        }
    }

    double acc = 0.0;
    for (double v : per_row) acc += v;
    if (per_row_out) *per_row_out = std::move(per_row);
    return acc / static_cast<double>(n);
}

// Convenience wiring for the real networks: x rows feed the encoder, xfeat
// rows condition the noise net.
inline double diffusion_bound(const MlpEncoder& enc, const TimeMlp& eps_net,
                              const NoiseSchedule& sched, const std::vector<double>& sigma,
                              const Tensor& z, const Tensor& x, const Tensor& xfeat, Rng& rng) {
    const auto heads = enc.forward_plain(x);
    const std::size_t n = z.rows();
    auto pred = [&](const Tensor& y, std::size_t t) {
        return eps_net.forward_plain(y, xfeat, std::vector<std::size_t>(n, t));
    };
    return diffusion_bound_core(sched, sigma, z, pred, heads.mu, heads.logvar, rng);
}

}  // namespace ddvi
