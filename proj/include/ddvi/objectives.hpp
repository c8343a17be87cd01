#pragma once

#include <span>
#include <vector>

#include "ddvi/adam.hpp"
#include "ddvi/config.hpp"
#include "ddvi/data.hpp"
#include "ddvi/diffusion.hpp"
#include "ddvi/nets.hpp"
#include "ddvi/priors.hpp"

namespace ddvi {

struct LossBreakdown {
    double rec = 0.0;
    double reg = 0.0;
    double diff = 0.0;   // sleep bound value (<= 0 up to its entropy constant)
    double total = 0.0;  // rec + beta_reg*reg + beta_diff*diff, exactly
    double beta_reg = 1.0;
    double beta_diff = 1.0;
    double diff_surrogate = 0.0;  // trainable noise-prediction loss

    static LossBreakdown make(double rec, double reg, double diff, double beta_reg,
                              double beta_diff, double surrogate) {
        LossBreakdown b;
        b.rec = rec;
        b.reg = reg;
        b.diff = diff;
        b.beta_reg = beta_reg;
        b.beta_diff = beta_diff;
        b.total = rec + beta_reg * reg + beta_diff * diff;
        b.diff_surrogate = surrogate;
        return b;
    }
};

// ---------------------------------------------------------------------------
// All networks of one run plus the noise schedule.
// ---------------------------------------------------------------------------

struct Models {
    MlpEncoder enc;
    MlpDecoder dec;
    TimeMlp eps_net;
    NoiseSchedule sched;
    std::vector<double> sigma;
    std::string xfeat_mode = "raw";
    std::size_t data_dim = 0;
    std::size_t label_classes = 0;  // > 0 appends a one-hot block to the features

    static Models build(const RunConfig& cfg, std::size_t data_dim, Rng& rng) {
        Models m;
        m.data_dim = data_dim;
        m.xfeat_mode = cfg.xfeat;
        m.label_classes =
            cfg.mode == Mode::semisup ? static_cast<std::size_t>(cfg.prior.partitions()) : 0;
        m.enc = MlpEncoder({.in_dim = data_dim,
                            .hidden = cfg.enc_hidden,
                            .hidden_layers = cfg.enc_layers,
                            .latent = cfg.latent,
                            .classes = cfg.prior.partitions()},
                           rng);
        m.dec = MlpDecoder({.latent = cfg.latent,
                            .hidden = cfg.dec_hidden,
                            .hidden_layers = cfg.dec_layers,
                            .out_dim = data_dim,
                            .head = cfg.head == "bce" ? DecoderHead::sigmoid
                                                      : DecoderHead::identity},
                           rng);
        const std::size_t base_feat = cfg.xfeat == "raw" ? data_dim : m.enc.trunk_dim();
        m.eps_net = TimeMlp({.latent = cfg.latent,
                             .feat_dim = base_feat + m.label_classes,
                             .hidden = cfg.time_hidden,
                             .layers = cfg.time_layers,
                             .steps = cfg.T},
                            rng);
        m.sched = NoiseSchedule::linear(cfg.T, cfg.beta_start, cfg.beta_end);
        m.sigma = m.sched.default_sigma();
        return m;
    }

    std::vector<NamedParam> theta() {
        std::vector<NamedParam> ps;
        dec.collect("dec", ps);
        return ps;
    }

    std::vector<NamedParam> phi() {
        std::vector<NamedParam> ps;
        enc.collect("enc", ps);
        eps_net.collect("eps", ps);
        return ps;
    }

    std::vector<NamedParam> all_params() {
        std::vector<NamedParam> ps;
        enc.collect("enc", ps);
        dec.collect("dec", ps);
        eps_net.collect("eps", ps);
        return ps;
    }

    std::vector<NamedParam> eps_params() {
        std::vector<NamedParam> ps;
        eps_net.collect("eps", ps);
        return ps;
    }

    // Conditioning features for the noise net (without any one-hot block).
    // The encoder-hidden variant is detached: it conditions, it is not a
    // gradient path.
    Tensor base_features(const Tensor& x) const {
        if (xfeat_mode == "raw") return x;
        return enc.forward_plain(x).trunk;
    }

    Tensor features(const Tensor& x, bool unconditional = false) const {
        Tensor f = base_features(x);
        if (unconditional) f.fill(0.0);
        if (label_classes == 0) return f;
        Tensor out({f.rows(), f.cols() + label_classes});
        for (std::size_t i = 0; i < f.rows(); ++i)
            for (std::size_t j = 0; j < f.cols(); ++j) out(i, j) = f(i, j);
        return out;  // one-hot block left zero; fill_onehot() sets it
    }

    static void fill_onehot(Tensor& feat, std::size_t base_cols,
                            const std::vector<int>& labels) {
        for (std::size_t i = 0; i < feat.rows(); ++i) {
            for (std::size_t j = base_cols; j < feat.cols(); ++j) feat(i, j) = 0.0;
            feat(i, base_cols + static_cast<std::size_t>(labels[i])) = 1.0;
        }
    }
};

// ---------------------------------------------------------------------------
// Reconstruction term: mean over batch and pixels of log p(x | z).
// Bernoulli mode works on decoder logits for stability and requires targets
// in [0,1]; Gaussian mode is unit-variance.
// ---------------------------------------------------------------------------

inline ad::Var reconstruction_rows(ad::Tape& tape, const Binding& bind, const MlpDecoder& dec,
                                   ad::Var z, const Tensor& x) {
    detail::check(x.rows() == ad::detail::val(z).rows(), "reconstruction: batch size mismatch");
    ad::Var raw = dec.forward_raw(bind, z);
    const double inv_pixels = 1.0 / static_cast<double>(x.cols());
    if (dec.config().head == DecoderHead::sigmoid) {
        for (double v : x.data)
            detail::check(v >= 0.0 && v <= 1.0, "reconstruction: BCE target outside [0,1]");
        Tensor ones_minus(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) ones_minus.data[i] = 1.0 - x.data[i];
        // log p = x * -softplus(-l) + (1-x) * -softplus(l)
        ad::Var lp = ad::add(ad::mul(tape.constant(x), ad::neg(ad::softplus(ad::neg(raw)))),
                             ad::mul(tape.constant(ones_minus), ad::neg(ad::softplus(raw))));
        return ad::scale(ad::row_sum(lp), inv_pixels);
    }
    ad::Var err = ad::sub(raw, tape.constant(x));
    ad::Var q = ad::scale(ad::row_sum(ad::square(err)), -0.5);
    return ad::scale(ad::add_scalar(q, -0.5 * static_cast<double>(x.cols()) * kLog2Pi),
                     inv_pixels);
}

inline ad::Var reconstruction_loglik(ad::Tape& tape, const Binding& bind, const MlpDecoder& dec,
                                     ad::Var z, const Tensor& x) {
    return ad::mean(reconstruction_rows(tape, bind, dec, z, x));
}

inline double reconstruction_loglik_plain(const MlpDecoder& dec, const Tensor& z, const Tensor& x) {
    const Tensor raw = dec.forward_raw_plain(z);
    double acc = 0.0;
    if (dec.config().head == DecoderHead::sigmoid) {
        for (double v : x.data)
            detail::check(v >= 0.0 && v <= 1.0, "reconstruction: BCE target outside [0,1]");
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double l = raw.data[i];
            acc += x.data[i] * -ad::softplus_value(-l) + (1.0 - x.data[i]) * -ad::softplus_value(l);
        }
    } else {
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double d = raw.data[i] - x.data[i];
            acc += -0.5 * d * d - 0.5 * kLog2Pi;
        }
    }
    return acc / static_cast<double>(x.numel());
}

// Per-row prior regularization including the per-item entropy.
inline ad::Var prior_reg_rows(ad::Tape& tape, const TrajectoryVars& traj,
                              const NoiseSchedule& sched, const PriorDensity& prior) {
    ad::Var acc = prior.log_density(tape, traj.ys[0]);
    for (std::size_t t = 1; t <= sched.T; ++t) {
        const double b = sched.beta[t];
        const double sa = std::sqrt(sched.alpha[t]);
        ad::Var diff = ad::sub(traj.ys[t], ad::scale(traj.ys[t - 1], sa));
        ad::Var quad = ad::scale(ad::row_sum(ad::square(diff)), -1.0 / (2.0 * b));
        acc = ad::add(acc, ad::add_scalar(quad, -0.5 * static_cast<double>(traj.latent) *
                                                    std::log(2.0 * kPi * b)));
    }
    ad::Var ent = ad::scale(ad::row_sum(traj.logvar), 0.5);
    return ad::add(acc, ad::add_scalar(ent, entropy_fixed_part(traj.latent, traj.sigma, traj.T)));
}

// ---------------------------------------------------------------------------
// Fantasy data: x_hat ~ p_theta(x | z) (Bernoulli or unit-variance Gaussian),
// or the decoder mean when sampling is disabled.
// ---------------------------------------------------------------------------

inline Tensor fantasy_inputs(const MlpDecoder& dec, const Tensor& z, bool sample, Rng& rng) {
    Tensor mean = dec.decode_mean(z);
    if (!sample) return mean;
    if (dec.config().head == DecoderHead::sigmoid) {
        for (double& v : mean.data) v = rng.uniform() < v ? 1.0 : 0.0;
    } else {
        for (double& v : mean.data) v += rng.normal();
    }
    return mean;
}

// ---------------------------------------------------------------------------
// Sleep phase (wake-sleep): m iterations of
//   z ~ p(z); x_hat ~ p_theta(x|z); one Adam step on the noise-prediction
//   loss over the prediction network only. theta is never touched.
// ---------------------------------------------------------------------------

struct SleepOptions {
    std::size_t iterations = 1;
    std::size_t batch = 128;
    bool sample_fantasy = true;
    bool unconditional = false;
};

inline double sleep_phase(Models& models, const PriorSpec& prior, const SleepOptions& opt,
                          Adam& sleep_opt, Rng& rng) {
    detail::check(opt.batch >= 1, "sleep_phase: batch must be >= 1");
    double last = 0.0;
    auto params = models.eps_params();
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        Rng iter_rng = rng.fork(0x51ee9000 + it);
        const PriorSample zs = sample_prior(prior, opt.batch, iter_rng);
        const Tensor x_hat = fantasy_inputs(models.dec, zs.points, opt.sample_fantasy, iter_rng);
        Tensor feat = models.features(x_hat, opt.unconditional);
        if (models.label_classes > 0)
            Models::fill_onehot(feat, feat.cols() - models.label_classes, zs.labels);

        ad::Tape tape;
        Binding bind = Binding::bind(tape, params);
        ad::Var loss =
            diffusion_loss(tape, bind, models.eps_net, models.sched, zs.points, feat, iter_rng);
        last = tape.value(loss).data[0];
        tape.backward(loss);
        const auto grads = bind.grads(tape, params);
        std::vector<Tensor*> ptrs;
        for (auto& p : params) ptrs.push_back(p.tensor);
        sleep_opt.step(ptrs, grads);
    }
    return last;
}

// Latent-space sleep term: the same noise-prediction loss, but conditioned on
// the real batch inputs so the whole objective trains end-to-end.
inline ad::Var simplified_sleep_loss(ad::Tape& tape, const Binding& bind, const Models& models,
                                     const PriorSpec& prior, const Tensor& xfeat, Rng& rng) {
    const PriorSample zs = sample_prior(prior, xfeat.rows(), rng);
    Tensor feat = xfeat;
    if (models.label_classes > 0)
        Models::fill_onehot(feat, feat.cols() - models.label_classes, zs.labels);
    return diffusion_loss(tape, bind, models.eps_net, models.sched, zs.points, feat, rng);
}

// ---------------------------------------------------------------------------
// Bound-mode sleep value for reporting: Monte Carlo latents from the prior,
// fantasy conditioning, closed-form per-step KL terms. The expected
// conditional entropy of the model posterior is a phi-independent constant
// that is only available for analytic fixtures; pass 0 when unknown.
// ---------------------------------------------------------------------------

inline double diffusion_bound_fantasy(Models& models, const PriorSpec& prior, std::size_t n_mc,
                                      bool sample_fantasy, bool unconditional, Rng& rng,
                                      double entropy_constant = 0.0) {
    const PriorSample zs = sample_prior(prior, n_mc, rng);
    const Tensor x_hat = fantasy_inputs(models.dec, zs.points, sample_fantasy, rng);
    Tensor feat = models.features(x_hat, unconditional);
    if (models.label_classes > 0)
        Models::fill_onehot(feat, feat.cols() - models.label_classes, zs.labels);
    return diffusion_bound(models.enc, models.eps_net, models.sched, models.sigma, zs.points,
                           x_hat, feat, rng) +
           entropy_constant;
}

// ---------------------------------------------------------------------------
// One DDVI training step (unsupervised / clustering):
//   1. evaluate the breakdown at the current parameters,
//   2. one Adam step on -(rec + w_reg * reg) over theta and phi (plus the
//      simplified sleep surrogate when configured),
//   3. m sleep iterations on the prediction network only.
// ---------------------------------------------------------------------------

struct DdviStepConfig {
    double w_reg = 1.0;       // beta_reg * kl schedule value
    double beta_diff = 1.0;
    std::size_t sleep_m = 1;
    bool simplified = false;
    bool sample_fantasy = true;
    bool unconditional = false;
    std::size_t bound_mc = 16;
};

inline LossBreakdown ddvi_step(Models& models, const PriorSpec& prior,
                               const PriorDensity& prior_density, const Tensor& x,
                               const DdviStepConfig& sc, Adam& wake_opt, Adam& sleep_opt,
                               Rng& rng) {
    detail::check(x.rows() >= 1, "ddvi_step: empty batch");
    auto params = models.all_params();

    const Tensor xfeat = models.features(x, sc.unconditional);

    ad::Tape tape;
    Binding bind = Binding::bind(tape, params);
    Rng traj_rng = rng.fork(1);
    auto gauss = gauss_from(traj_rng);
    TrajectoryVars traj = reverse_sample(tape, bind, models.enc, models.eps_net, models.sched,
                                         models.sigma, x, xfeat, gauss);
    ad::Var rec = reconstruction_loglik(tape, bind, models.dec, traj.z(), x);
    ad::Var reg = ad::mean(prior_reg_rows(tape, traj, models.sched, prior_density));
    ad::Var objective = ad::add(rec, ad::scale(reg, sc.w_reg));

    double surrogate_value = 0.0;
    if (sc.simplified) {
        Rng sleep_rng = rng.fork(2);
        ad::Var surr = simplified_sleep_loss(tape, bind, models, prior, xfeat, sleep_rng);
        surrogate_value = tape.value(surr).data[0];
        objective = ad::sub(objective, ad::scale(surr, sc.beta_diff));
    }

    const double rec_value = tape.value(rec).data[0];
    const double reg_value = tape.value(reg).data[0];

    // bound-mode sleep value, evaluated before any update
    Rng bound_rng = rng.fork(3);
    const double diff_value = diffusion_bound_fantasy(models, prior, sc.bound_mc,
                                                      sc.sample_fantasy, sc.unconditional,
                                                      bound_rng);

    ad::Var loss = ad::neg(objective);
    tape.backward(loss);
    const auto grads = bind.grads(tape, params);
    std::vector<Tensor*> ptrs;
    for (auto& p : params) ptrs.push_back(p.tensor);
    wake_opt.step(ptrs, grads);

    if (!sc.simplified && sc.sleep_m > 0) {
        SleepOptions so;
        so.iterations = sc.sleep_m;
        so.batch = x.rows();
        so.sample_fantasy = sc.sample_fantasy;
        so.unconditional = sc.unconditional;
        Rng sleep_rng = rng.fork(4);
        surrogate_value = sleep_phase(models, prior, so, sleep_opt, sleep_rng);
    }

    return LossBreakdown::make(rec_value, reg_value, diff_value, sc.w_reg,
                               sc.beta_diff, surrogate_value);
}

// ---------------------------------------------------------------------------
// AEVB baseline step: diagonal Gaussian posterior with either the analytic
// standard-normal KL or the KDE prior density (weighted by 5) plus the
// Gaussian entropy.
// ---------------------------------------------------------------------------

struct AevbStepConfig {
    double w_reg = 1.0;
    double prior_density_weight = 5.0;
    bool analytic_standard_normal = false;
};

inline LossBreakdown aevb_step(Models& models, const PriorDensity& prior_density, const Tensor& x,
                               const AevbStepConfig& sc, Adam& wake_opt, Rng& rng) {
    detail::check(x.rows() >= 1, "aevb_step: empty batch");
    std::vector<NamedParam> params;
    models.enc.collect("enc", params);
    models.dec.collect("dec", params);

    ad::Tape tape;
    Binding bind = Binding::bind(tape, params);
    const auto heads = models.enc.forward(bind, tape.constant(x));
    Tensor noise({x.rows(), models.enc.config().latent});
    Rng noise_rng = rng.fork(1);
    noise_rng.fill_normal(noise);
    ad::Var z = ad::reparam_sample(heads.mu, heads.logvar, tape.constant(noise));
    ad::Var rec = reconstruction_loglik(tape, bind, models.dec, z, x);

    ad::Var reg{};
    if (sc.analytic_standard_normal) {
        // -KL(N(mu, diag e^lv) || N(0, I)) in closed form
        ad::Var kl_rows = ad::scale(
            ad::row_sum(ad::sub(ad::add(ad::exp(heads.logvar), ad::square(heads.mu)),
                                ad::add_scalar(heads.logvar, 1.0))),
            0.5);
        reg = ad::neg(ad::mean(kl_rows));
    } else {
        ad::Var lp = ad::scale(ad::mean(prior_density.log_density(tape, z)),
                               sc.prior_density_weight);
        ad::Var h_rows = ad::scale(ad::row_sum(ad::add_scalar(heads.logvar, 1.0 + kLog2Pi)), 0.5);
        reg = ad::add(lp, ad::mean(h_rows));
    }

    ad::Var objective = ad::add(rec, ad::scale(reg, sc.w_reg));
    const double rec_value = tape.value(rec).data[0];
    const double reg_value = tape.value(reg).data[0];

    tape.backward(ad::neg(objective));
    const auto grads = bind.grads(tape, params);
    std::vector<Tensor*> ptrs;
    for (auto& p : params) ptrs.push_back(p.tensor);
    wake_opt.step(ptrs, grads);

    return LossBreakdown::make(rec_value, reg_value, 0.0, sc.w_reg, 0.0, 0.0);
}

// ---------------------------------------------------------------------------
// Clustering by mixture prior: latents are assigned to the nearest component
// mean, ties to the lowest index.
// ---------------------------------------------------------------------------

inline int cluster_assign(std::span<const double> z, const PriorSpec& mixture) {
    detail::check(mixture.kind == PriorKind::mixture, "cluster_assign: prior is not a mixture");
    detail::check(z.size() == 2, "cluster_assign: latent must be 2-D");
    const auto means = mixture.mixture_means();
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < means.size(); ++c) {
        const double dx = z[0] - means[c][0], dy = z[1] - means[c][1];
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Semi-supervised objective. Labeled items contribute their class-conditioned
// bound plus an alpha-weighted classifier cross-entropy; unlabeled items
// contribute the q(l|x)-weighted sum over classes plus KL(q(l|x) || uniform).
// The sleep term is the simplified (latent-space) one, conditioned on the
// real inputs and a uniformly drawn class.
// ---------------------------------------------------------------------------

struct SemisupStepConfig {
    double w_reg = 1.0;
    double beta_diff = 1.0;
    double alpha = 1.0;
    std::size_t bound_mc = 16;
};

struct SemisupTerms {
    ad::Var loss;           // scalar to minimize
    double rec_mean = 0.0;  // diagnostic means over evaluated rows
    double reg_mean = 0.0;
    double surrogate = 0.0;
};

// Builds the full semi-supervised loss on the given tape. labels[i] == -1
// marks an unlabeled item.
inline SemisupTerms semisup_loss(ad::Tape& tape, const Binding& bind, Models& models,
                                 const PriorSpec& prior,
                                 const std::vector<PriorDensity>& class_densities,
                                 const Tensor& x, const std::vector<int>& labels,
                                 const SemisupStepConfig& sc, Rng& rng) {
    const std::size_t n = x.rows();
    const std::size_t classes = prior.partitions();
    detail::check(labels.size() == n, "semisup: labels misaligned");
    detail::check(class_densities.size() == classes, "semisup: class densities missing");
    for (int l : labels)
        detail::check(l < static_cast<int>(classes), "semisup: label id out of range");

    std::vector<std::size_t> labeled_idx, unlabeled_idx;
    for (std::size_t i = 0; i < n; ++i)
        (labels[i] >= 0 ? labeled_idx : unlabeled_idx).push_back(i);

    const Tensor base_feat = models.base_features(x);
    const std::size_t base_cols = base_feat.cols();

    // classifier log-probabilities for all items
    const auto heads = models.enc.forward(bind, tape.constant(x));
    ad::Var log_q = ad::add_col(heads.logits, ad::neg(ad::logsumexp_rows(heads.logits)));

    ad::Var total{};  // accumulated negative bound contributions
    bool have_total = false;
    double rec_acc = 0.0, reg_acc = 0.0;
    std::size_t rows_seen = 0;

    ad::Var unlab_weighted{};  // sum_c q_ic * bound_ic, per unlabeled item
    bool have_unlab = false;

    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<std::size_t> rows;
        for (std::size_t i : labeled_idx)
            if (labels[i] == static_cast<int>(c)) rows.push_back(i);
        const std::size_t n_lab_c = rows.size();
        for (std::size_t i : unlabeled_idx) rows.push_back(i);
        if (rows.empty()) continue;

        Tensor xc({rows.size(), x.cols()});
        Tensor featc({rows.size(), base_cols + classes});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t j = 0; j < x.cols(); ++j) xc(r, j) = x(rows[r], j);
            for (std::size_t j = 0; j < base_cols; ++j) featc(r, j) = base_feat(rows[r], j);
            featc(r, base_cols + c) = 1.0;
        }

        Rng class_rng = rng.fork(100 + c);
        auto gauss = gauss_from(class_rng);
        TrajectoryVars traj = reverse_sample(tape, bind, models.enc, models.eps_net, models.sched,
                                             models.sigma, xc, featc, gauss);
        ad::Var rec_rows = reconstruction_rows(tape, bind, models.dec, traj.z(), xc);
        ad::Var reg_rows = prior_reg_rows(tape, traj, models.sched, class_densities[c]);
        ad::Var bound_rows = ad::add(rec_rows, ad::scale(reg_rows, sc.w_reg));

        {
            const auto& rv = tape.value(rec_rows).data;
            const auto& gv = tape.value(reg_rows).data;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                rec_acc += rv[r];
                reg_acc += gv[r];
            }
            rows_seen += rows.size();
        }

        if (n_lab_c > 0) {
            std::vector<std::size_t> lab_rows(n_lab_c);
            for (std::size_t r = 0; r < n_lab_c; ++r) lab_rows[r] = r;
            ad::Var lab_part = ad::gather_rows(bound_rows, lab_rows);
            ad::Var contrib = ad::neg(ad::sum(lab_part));
            total = have_total ? ad::add(total, contrib) : contrib;
            have_total = true;
        }
        if (!unlabeled_idx.empty()) {
            std::vector<std::size_t> unlab_rows(unlabeled_idx.size());
            for (std::size_t r = 0; r < unlabeled_idx.size(); ++r) unlab_rows[r] = n_lab_c + r;
            ad::Var unlab_part = ad::gather_rows(bound_rows, unlab_rows);
            // column c of q for the unlabeled items
            Tensor sel({classes, 1});
            sel(c, 0) = 1.0;
            ad::Var q_col = ad::exp(ad::matmul(ad::gather_rows(log_q, unlabeled_idx),
                                               tape.constant(sel)));
            ad::Var weighted = ad::mul(unlab_part, q_col);
            unlab_weighted = have_unlab ? ad::add(unlab_weighted, weighted) : weighted;
            have_unlab = true;
        }
    }

    if (have_unlab) {
        // KL(q(l|x) || uniform) = sum_c q log q + log(classes)
        ad::Var lq_u = ad::gather_rows(log_q, unlabeled_idx);
        ad::Var kl_rows = ad::add_scalar(ad::row_sum(ad::mul(ad::exp(lq_u), lq_u)),
                                         std::log(static_cast<double>(classes)));
        ad::Var contrib = ad::add(ad::neg(ad::sum(unlab_weighted)), ad::sum(kl_rows));
        total = have_total ? ad::add(total, contrib) : contrib;
        have_total = true;
    }

    ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(n));

    if (!labeled_idx.empty() && sc.alpha > 0.0) {
        // cross-entropy on the labeled items
        Tensor onehot({labeled_idx.size(), classes});
        for (std::size_t r = 0; r < labeled_idx.size(); ++r)
            onehot(r, static_cast<std::size_t>(labels[labeled_idx[r]])) = 1.0;
        ad::Var lq_l = ad::gather_rows(log_q, labeled_idx);
        ad::Var ce = ad::neg(ad::mean(ad::row_sum(ad::mul(lq_l, tape.constant(onehot)))));
        loss = ad::add(loss, ad::scale(ce, sc.alpha));
    }

    SemisupTerms terms;
    // simplified sleep on real inputs with uniformly drawn class conditioning
    {
        Rng sleep_rng = rng.fork(7);
        std::vector<int> ls(n);
        Tensor zc({n, models.enc.config().latent});
        for (std::size_t i = 0; i < n; ++i) {
            ls[i] = static_cast<int>(sleep_rng.below(classes));
            const PriorSample s = sample_prior_class(prior, ls[i], 1, sleep_rng);
            for (std::size_t j = 0; j < zc.cols(); ++j) zc(i, j) = s.points(0, j);
        }
        Tensor feats({n, base_cols + classes});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < base_cols; ++j) feats(i, j) = base_feat(i, j);
            feats(i, base_cols + static_cast<std::size_t>(ls[i])) = 1.0;
        }
        ad::Var surr =
            diffusion_loss(tape, bind, models.eps_net, models.sched, zc, feats, sleep_rng);
        terms.surrogate = tape.value(surr).data[0];
        loss = ad::add(loss, ad::scale(surr, sc.beta_diff));
    }

    terms.loss = loss;
    terms.rec_mean = rows_seen ? rec_acc / static_cast<double>(rows_seen) : 0.0;
    terms.reg_mean = rows_seen ? reg_acc / static_cast<double>(rows_seen) : 0.0;
    return terms;
}

inline LossBreakdown semisup_step(Models& models, const PriorSpec& prior,
                                  const std::vector<PriorDensity>& class_densities,
                                  const Tensor& x, const std::vector<int>& labels,
                                  const SemisupStepConfig& sc, Adam& wake_opt, Rng& rng) {
    auto params = models.all_params();
    ad::Tape tape;
    Binding bind = Binding::bind(tape, params);
    Rng loss_rng = rng.fork(1);
    SemisupTerms terms =
        semisup_loss(tape, bind, models, prior, class_densities, x, labels, sc, loss_rng);

    Rng bound_rng = rng.fork(3);
    const double diff_value =
        diffusion_bound_fantasy(models, prior, sc.bound_mc, true, false, bound_rng);

    tape.backward(terms.loss);
    const auto grads = bind.grads(tape, params);
    std::vector<Tensor*> ptrs;
    for (auto& p : params) ptrs.push_back(p.tensor);
    wake_opt.step(ptrs, grads);

    return LossBreakdown::make(terms.rec_mean, terms.reg_mean, diff_value, sc.w_reg,
                               sc.beta_diff, terms.surrogate);
}

}  // namespace ddvi
