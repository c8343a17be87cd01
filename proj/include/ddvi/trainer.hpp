#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ddvi/checkpoint.hpp"
#include "ddvi/config.hpp"
#include "ddvi/data.hpp"
#include "ddvi/metrics.hpp"
#include "ddvi/objectives.hpp"

namespace ddvi {

// Deterministic sub-stream tags for one run.
namespace seeds {
inline constexpr std::uint64_t init = 0x01;
inline constexpr std::uint64_t train_data = 0x02;
inline constexpr std::uint64_t test_data = 0x03;
inline constexpr std::uint64_t kde = 0x04;
inline constexpr std::uint64_t label_mask = 0x05;
inline constexpr std::uint64_t epoch_base = 0x100;
inline constexpr std::uint64_t eval = 0x06;
inline constexpr std::uint64_t map = 0x07;
}  // namespace seeds

inline PriorSpec synthetic_prior_spec(const RunConfig& cfg) {
    if (cfg.synth_prior.empty()) return cfg.prior;
    PriorSpec spec = cfg.prior;
    spec.kind = prior_kind_from(cfg.synth_prior);
    spec.mixture_k = cfg.synth_k;
    spec.mixture_sigma = cfg.synth_sigma;
    spec.mixture_radius = cfg.synth_radius;
    return spec;
}

struct DataBundle {
    Dataset train;
    Dataset test;
};

inline DataBundle load_data(const RunConfig& cfg) {
    Rng root(cfg.seed);
    DataBundle db;
    if (cfg.data_kind == "synthetic") {
        const PriorSpec spec = synthetic_prior_spec(cfg);
        const std::uint64_t map_seed = cfg.map_seed >= 0
                                           ? static_cast<std::uint64_t>(cfg.map_seed)
                                           : root.fork(seeds::map).raw();
        const SyntheticMap map(spec.sample_dim(), cfg.lift_dim, map_seed, cfg.head == "bce");
        db.train = make_synthetic(spec, map, cfg.n_train, root.fork(seeds::train_data).raw());
        db.test = make_synthetic(spec, map, cfg.n_test, root.fork(seeds::test_data).raw());
        return db;
    }
    if (cfg.data_kind == "idx") {
        db.train = load_idx(cfg.train_images, cfg.train_labels);
        db.test = load_idx(cfg.test_images, cfg.test_labels);
        return db;
    }
    if (cfg.data_kind == "csv") {
        Dataset all = load_matrix_csv(cfg.csv_path, cfg.csv_delim[0], cfg.csv_labels_last);
        if (cfg.genotype_preset) {
            const PcaResult pca = pca_genotype_preset(all.items);
            all.items = pca.projected;
            all.kind = DataKind::continuous;
        } else if (cfg.pca_k > 0) {
            all.items = pca_project(all.items, cfg.pca_k).projected;
            all.kind = DataKind::continuous;
        }
        const std::size_t n = all.size();
        const std::size_t n_test = static_cast<std::size_t>(cfg.test_fraction * n);
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < n; ++i)
            (i + n_test >= n ? test_idx : train_idx).push_back(i);
        db.train = dataset_rows(all, train_idx);
        db.test = dataset_rows(all, test_idx);
        return db;
    }
    throw std::invalid_argument("load_data: unknown data kind " + cfg.data_kind);
}

// ---------------------------------------------------------------------------
// Training driver. Owns the models, optimizer states, prior densities and
// the semi-supervised label mask; everything derives deterministically from
// the config seed.
// ---------------------------------------------------------------------------

class Trainer {
public:
    explicit Trainer(const RunConfig& cfg) : cfg_(cfg), root_(cfg.seed) {
        DataBundle db = load_data(cfg_);
        train_ = std::move(db.train);
        test_ = std::move(db.test);
        detail::check(train_.size() >= 1, "trainer: empty training set");
        if (cfg_.head == "bce")
            for (double v : train_.items.data)
                detail::check(v >= 0.0 && v <= 1.0, "trainer: BCE data outside [0,1]");

        Rng init_rng = root_.fork(seeds::init);
        models_ = Models::build(cfg_, train_.dim(), init_rng);

        Rng kde_rng = root_.fork(seeds::kde);
        density_ = PriorDensity::for_spec(cfg_.prior, cfg_.kde_fit, kde_rng);
        if (cfg_.mode == Mode::semisup) {
            const std::size_t classes = cfg_.prior.partitions();
            class_densities_.reserve(classes);
            for (std::size_t c = 0; c < classes; ++c) {
                Rng crng = kde_rng.fork(c);
                if (cfg_.prior.kind == PriorKind::gaussian ||
                    cfg_.prior.kind == PriorKind::mixture) {
                    class_densities_.push_back(PriorDensity::for_spec(cfg_.prior, 0, crng));
                } else {
                    const PriorSample s = sample_prior_class(cfg_.prior, static_cast<int>(c),
                                                             cfg_.kde_fit_per_class, crng);
                    class_densities_.push_back(PriorDensity::from_points(s.points));
                }
            }
            build_label_mask();
        }

        wake_ = Adam(cfg_.lr);
        sleep_ = Adam(cfg_.lr);
    }

    const RunConfig& config() const { return cfg_; }
    Models& models() { return models_; }
    const Dataset& train_set() const { return train_; }
    const Dataset& test_set() const { return test_; }

    // Runs pretraining + training, writing metrics, checkpoints, and the
    // final report under out_dir. Returns the final report.
    EvalReport run(const std::string& out_dir) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        std::ofstream log(fs::path(out_dir) / "metrics.tsv");
        if (!log) throw std::runtime_error("trainer: cannot write metrics log in " + out_dir);

        const auto t0 = std::chrono::steady_clock::now();
        std::size_t step = 0;

        const std::size_t pre = cfg_.mode == Mode::aevb ? 0 : cfg_.effective_pretrain_epochs();
        for (std::size_t e = 0; e < pre; ++e)
            run_epoch(e, /*pretrain=*/true, step, log, t0);
        for (std::size_t e = 0; e < cfg_.epochs; ++e) {
            run_epoch(e, /*pretrain=*/false, step, log, t0);
            if ((e + 1) % cfg_.checkpoint_interval == 0 && e + 1 < cfg_.epochs)
                save_checkpoint((fs::path(out_dir) / ("checkpoint_epoch" + std::to_string(e + 1) +
                                                      ".ckpt")).string(),
                                models_.all_params());
        }

        save_checkpoint((fs::path(out_dir) / "checkpoint.ckpt").string(), models_.all_params());
        const EvalReport report = evaluate();
        std::ofstream rep(fs::path(out_dir) / "report.txt");
        rep << report.to_text();
        return report;
    }

    // One latent sample per item through the posterior (or the Gaussian
    // encoder in baseline mode).
    Tensor model_latents(const Dataset& ds, Rng& rng) {
        if (cfg_.mode == Mode::aevb) {
            const auto heads = models_.enc.forward_plain(ds.items);
            Tensor z(heads.mu.shape);
            for (std::size_t i = 0; i < z.numel(); ++i)
                z.data[i] = heads.mu.data[i] + std::exp(0.5 * heads.logvar.data[i]) * rng.normal();
            return z;
        }
        Tensor feat = models_.features(ds.items);
        if (models_.label_classes > 0) {
            // inference-time conditioning uses the classifier's argmax
            const auto heads = models_.enc.forward_plain(ds.items);
            std::vector<int> pred(ds.size());
            for (std::size_t i = 0; i < ds.size(); ++i) {
                int best = 0;
                for (std::size_t c = 1; c < heads.logits.cols(); ++c)
                    if (heads.logits(i, c) > heads.logits(i, best)) best = static_cast<int>(c);
                pred[i] = best;
            }
            Models::fill_onehot(feat, feat.cols() - models_.label_classes, pred);
        }
        auto gauss = gauss_from(rng);
        return reverse_sample_plain(models_.enc, models_.eps_net, models_.sched, models_.sigma,
                                    ds.items, feat, gauss)
            .z();
    }

    // ELBO estimate on a dataset: mean breakdown total with n_mc Monte Carlo
    // draws per term and the final-epoch regularization weight.
    double elbo_eval(const Dataset& ds, std::size_t n_mc, Rng& rng) {
        const double w_reg = final_w_reg();
        auto lp = [this](std::span<const double> q) { return density_.log_density(q); };
        double acc = 0.0;
        if (cfg_.mode == Mode::aevb) {
            const auto heads = models_.enc.forward_plain(ds.items);
            for (std::size_t k = 0; k < n_mc; ++k) {
                Tensor z(heads.mu.shape);
                for (std::size_t i = 0; i < z.numel(); ++i)
                    z.data[i] =
                        heads.mu.data[i] + std::exp(0.5 * heads.logvar.data[i]) * rng.normal();
                const double rec = reconstruction_loglik_plain(models_.dec, z, ds.items);
                double reg = 0.0;
                const bool analytic = cfg_.prior.kind == PriorKind::gaussian;
                for (std::size_t i = 0; i < ds.size(); ++i) {
                    if (analytic) {
                        double kl = 0.0;
                        for (std::size_t j = 0; j < z.cols(); ++j) {
                            const double lv = heads.logvar(i, j);
                            const double mu = heads.mu(i, j);
                            kl += 0.5 * (std::exp(lv) + mu * mu - 1.0 - lv);
                        }
                        reg -= kl;
                    } else {
                        double h = 0.0;
                        for (std::size_t j = 0; j < z.cols(); ++j)
                            h += 0.5 * (1.0 + kLog2Pi + heads.logvar(i, j));
                        reg += 5.0 * density_.log_density(z.row_span(i)) + h;
                    }
                }
                acc += rec + w_reg * reg / static_cast<double>(ds.size());
            }
            return acc / static_cast<double>(n_mc);
        }

        Tensor feat = models_.features(ds.items);
        if (models_.label_classes > 0) {
            const auto heads = models_.enc.forward_plain(ds.items);
            std::vector<int> pred(ds.size());
            for (std::size_t i = 0; i < ds.size(); ++i) {
                int best = 0;
                for (std::size_t c = 1; c < heads.logits.cols(); ++c)
                    if (heads.logits(i, c) > heads.logits(i, best)) best = static_cast<int>(c);
                pred[i] = best;
            }
            Models::fill_onehot(feat, feat.cols() - models_.label_classes, pred);
        }
        for (std::size_t k = 0; k < n_mc; ++k) {
            auto gauss = gauss_from(rng);
            const Trajectory traj = reverse_sample_plain(models_.enc, models_.eps_net,
                                                         models_.sched, models_.sigma, ds.items,
                                                         feat, gauss);
            acc += reconstruction_loglik_plain(models_.dec, traj.z(), ds.items) +
                   w_reg * prior_reg_from_traj_plain(traj, models_.sched, lp);
        }
        acc /= static_cast<double>(n_mc);
        Rng bound_rng = rng.fork(42);
        acc += cfg_.beta_diff * diffusion_bound_fantasy(models_, cfg_.prior,
                                                        std::max<std::size_t>(cfg_.diff_bound_mc,
                                                                              n_mc * 8),
                                                        cfg_.sample_fantasy, false, bound_rng);
        return acc;
    }

    EvalReport evaluate() {
        Rng eval_rng = root_.fork(seeds::eval);
        EvalReport rep;
        rep.n_eval = test_.size();

        Rng elbo_rng = eval_rng.fork(1);
        rep.elbo = elbo_eval(test_, cfg_.eval_mc, elbo_rng);

        Rng lat_rng = eval_rng.fork(2);
        const Tensor latents = model_latents(test_, lat_rng);

        Rng prior_rng = eval_rng.fork(3);
        const PriorSample ps = sample_prior(cfg_.prior, cfg_.latent_prior_samples, prior_rng);
        rep.latent_nll = latent_nll(latents, ps.points);

        // sample quality: decoder means of prior draws against held-out items
        {
            Rng mmd_rng = eval_rng.fork(4);
            const std::size_t n = std::min<std::size_t>(cfg_.mmd_samples, test_.size());
            const PriorSample gz = sample_prior(cfg_.prior, n, mmd_rng);
            const Tensor gen = models_.dec.decode_mean(gz.points);
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            rep.mmd = mmd(gen, dataset_rows(test_, idx).items);
        }

        if (test_.has_labels()) {
            rep.knn_acc = knn_accuracy(latents, test_.labels, cfg_.knn_k).accuracy;
            if (cfg_.mode == Mode::cluster && cfg_.prior.kind == PriorKind::mixture) {
                std::vector<int> assign(test_.size());
                for (std::size_t i = 0; i < test_.size(); ++i)
                    assign[i] = cluster_assign(latents.row_span(i), cfg_.prior);
                const ClusterScores cs = cluster_scores(assign, test_.labels);
                rep.purity = cs.purity;
                rep.completeness = cs.completeness;
                rep.nmi = cs.nmi;
            }
        }
        return rep;
    }

    double final_w_reg() const {
        return cfg_.beta_reg * cfg_.kl_weight_at(cfg_.epochs == 0 ? 0 : cfg_.epochs - 1,
                                                 cfg_.epochs);
    }

private:
    void build_label_mask() {
        semi_labels_.assign(train_.size(), -1);
        detail::check(train_.has_labels(), "semisup: training data has no labels");
        std::vector<std::size_t> idx(train_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng mask_rng = root_.fork(seeds::label_mask);
        mask_rng.shuffle(idx);
        const std::size_t keep =
            static_cast<std::size_t>(cfg_.labeled_fraction * static_cast<double>(train_.size()));
        for (std::size_t i = 0; i < keep; ++i) semi_labels_[idx[i]] = train_.labels[idx[i]];
    }

    void run_epoch(std::size_t epoch, bool pretrain, std::size_t& step, std::ofstream& log,
                   const std::chrono::steady_clock::time_point& t0) {
        const std::size_t n = train_.size();
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng epoch_rng = root_.fork(seeds::epoch_base + (pretrain ? 1000000 : 0) + epoch);
        epoch_rng.shuffle(order);

        const double w_reg =
            pretrain ? cfg_.beta_reg * cfg_.kl_weight
                     : cfg_.beta_reg * cfg_.kl_weight_at(epoch, cfg_.epochs);

        for (std::size_t start = 0, batch_index = 0; start < n;
             start += cfg_.batch, ++batch_index) {
            const std::size_t stop = std::min(n, start + cfg_.batch);
            std::vector<std::size_t> rows(order.begin() + start, order.begin() + stop);
            const Dataset batch = dataset_rows(train_, rows);
            Rng step_rng = epoch_rng.fork(batch_index);

            LossBreakdown bd;
            if (cfg_.mode == Mode::aevb) {
                AevbStepConfig sc;
                sc.w_reg = w_reg;
                sc.analytic_standard_normal = cfg_.prior.kind == PriorKind::gaussian;
                bd = aevb_step(models_, density_, batch.items, sc, wake_, step_rng);
            } else if (cfg_.mode == Mode::semisup && !pretrain) {
                SemisupStepConfig sc;
                sc.w_reg = w_reg;
                sc.beta_diff = cfg_.beta_diff;
                sc.alpha = cfg_.alpha_classifier;
                sc.bound_mc = cfg_.diff_bound_mc;
                std::vector<int> labels(rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = semi_labels_[rows[i]];
                bd = semisup_step(models_, cfg_.prior, class_densities_, batch.items, labels, sc,
                                  wake_, step_rng);
            } else {
                DdviStepConfig sc;
                sc.w_reg = w_reg;
                sc.beta_diff = cfg_.beta_diff;
                sc.sleep_m = cfg_.sleep_m;
                sc.simplified = cfg_.simplified_sleep;
                sc.sample_fantasy = cfg_.sample_fantasy;
                sc.unconditional = pretrain;
                sc.bound_mc = cfg_.diff_bound_mc;
                bd = ddvi_step(models_, cfg_.prior, density_, batch.items, sc, wake_, sleep_,
                               step_rng);
            }
            ++step;

            if (!std::isfinite(bd.total) || !std::isfinite(bd.diff_surrogate))
                throw std::runtime_error("trainer: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step) +
                                         " batch " + std::to_string(batch_index));

            if (step % cfg_.log_interval == 0) {
                const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
                char line[256];
                std::snprintf(line, sizeof(line), "%zu\t%.12g\t%.12g\t%.12g\t%.12g\t%lld\n", step,
                              bd.rec, bd.reg, bd.diff, bd.total,
                              static_cast<long long>(ms));
                log << line;
                log.flush();
            }
        }
    }

    RunConfig cfg_;
    Rng root_;
    Models models_;
    Dataset train_, test_;
    PriorDensity density_;
    std::vector<PriorDensity> class_densities_;
    std::vector<int> semi_labels_;
    Adam wake_, sleep_;
};

}  // namespace ddvi
