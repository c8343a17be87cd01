#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "ddvi/priors.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

enum class Mode { unsup, semisup, cluster, aevb };

inline Mode mode_from(const std::string& s) {
    if (s == "unsup") return Mode::unsup;
    if (s == "semisup") return Mode::semisup;
    if (s == "cluster") return Mode::cluster;
    if (s == "aevb-baseline" || s == "aevb") return Mode::aevb;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::unsup: return "unsup";
        case Mode::semisup: return "semisup";
        case Mode::cluster: return "cluster";
        case Mode::aevb: return "aevb-baseline";
    }
    return "?";
}

// Every training/eval knob in one flat struct. Config files override the
// defaults below; command-line flags override the file.
struct RunConfig {
    Mode mode = Mode::unsup;
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    // model
    std::size_t latent = 2;
    std::size_t enc_hidden = 1000, enc_layers = 2;
    std::size_t dec_hidden = 1000, dec_layers = 2;
    std::size_t time_hidden = 128, time_layers = 5;
    std::string head = "bce";   // bce | mse
    std::string xfeat = "raw";  // raw | encoder-hidden

    // diffusion
    std::size_t T = 20;
    double beta_start = 1e-4;
    double beta_end = 0.4;

    // prior
    PriorSpec prior;
    std::size_t kde_fit = 2000;
    std::size_t kde_fit_per_class = 200;

    // training
    double lr = 1e-4;
    std::size_t batch = 128;
    std::size_t epochs = 200;
    std::size_t sleep_m = 1;
    double beta_reg = 1.0;
    double beta_diff = 1.0;
    double kl_weight = 0.003;
    std::string kl_schedule = "constant";  // constant | linear
    double alpha_classifier = 1.0;
    bool simplified_sleep = false;
    long pretrain_epochs = -1;  // -1: 5 for structured priors, 0 otherwise
    std::size_t checkpoint_interval = 50;
    std::size_t log_interval = 50;
    bool sample_fantasy = true;
    double labeled_fraction = 0.1;
    std::size_t diff_bound_mc = 16;

    // data
    std::string data_kind = "synthetic";  // synthetic | idx | csv
    std::size_t n_train = 4000;
    std::size_t n_test = 1000;
    std::size_t lift_dim = 32;
    long map_seed = -1;  // -1: derived from seed
    std::string synth_prior = "";  // empty: model prior kind
    std::size_t synth_k = 3;
    double synth_sigma = 0.15;
    double synth_radius = 1.0;
    std::string train_images, train_labels, test_images, test_labels;
    std::string csv_path;
    std::string csv_delim = ",";
    bool csv_labels_last = false;
    double test_fraction = 0.2;
    bool genotype_preset = false;
    std::size_t pca_k = 0;  // 0: off

    // eval
    std::size_t eval_mc = 4;
    std::size_t mmd_samples = 500;
    std::size_t latent_prior_samples = 2000;
    std::size_t knn_k = 20;

    std::size_t effective_pretrain_epochs() const {
        if (pretrain_epochs >= 0) return static_cast<std::size_t>(pretrain_epochs);
        switch (prior.kind) {
            case PriorKind::pinwheel:
            case PriorKind::swiss_roll:
            case PriorKind::square: return 5;
            default: return 0;
        }
    }

    // Weight applied to the prior-regularization term at a given epoch.
    double kl_weight_at(std::size_t epoch, std::size_t total_epochs) const {
        if (kl_schedule == "constant" || total_epochs <= 1) return kl_weight;
        const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
        return kl_weight * frac;
    }
};

struct ResolvedConfig {
    RunConfig cfg;
    std::map<std::string, std::string> provenance;  // key -> default|profile|file|flag

    void note(const std::string& key, const std::string& source) { provenance[key] = source; }
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v) {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
    return d;
}

inline std::uint64_t parse_u64(const std::string& v) {
    const double d = parse_double(v);
    if (d < 0 || d != std::floor(d)) throw std::invalid_argument("not a non-negative integer: '" + v + "'");
    return static_cast<std::uint64_t>(d);
}

inline long parse_long(const std::string& v) {
    std::size_t pos = 0;
    const long l = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
    return l;
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& key_table() {
    auto u64 = [](std::size_t RunConfig::* f, std::size_t lo) {
        return [f, lo](RunConfig& c, const std::string& v) {
            const auto x = parse_u64(v);
            if (x < lo) throw std::invalid_argument("value below minimum " + std::to_string(lo));
            c.*f = static_cast<std::size_t>(x);
        };
    };
    auto dbl = [](double RunConfig::* f, double lo, double hi) {
        return [f, lo, hi](RunConfig& c, const std::string& v) {
            const double x = parse_double(v);
            if (x < lo || x > hi) throw std::invalid_argument("value out of range");
            c.*f = x;
        };
    };
    auto str = [](std::string RunConfig::* f) {
        return [f](RunConfig& c, const std::string& v) { c.*f = v; };
    };
    auto bol = [](bool RunConfig::* f) {
        return [f](RunConfig& c, const std::string& v) { c.*f = parse_bool(v); };
    };

    static const std::map<std::string, Setter> table = {
        {"mode", [](RunConfig& c, const std::string& v) { c.mode = mode_from(v); }},
        {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
        {"out.dir", str(&RunConfig::out_dir)},

        {"model.d", u64(&RunConfig::latent, 1)},
        {"model.enc_hidden", u64(&RunConfig::enc_hidden, 1)},
        {"model.enc_layers", u64(&RunConfig::enc_layers, 0)},
        {"model.dec_hidden", u64(&RunConfig::dec_hidden, 1)},
        {"model.dec_layers", u64(&RunConfig::dec_layers, 0)},
        {"model.time_hidden", u64(&RunConfig::time_hidden, 1)},
        {"model.time_layers", u64(&RunConfig::time_layers, 2)},
        {"model.head",
         [](RunConfig& c, const std::string& v) {
             if (v != "bce" && v != "mse") throw std::invalid_argument("head must be bce or mse");
             c.head = v;
         }},
        {"model.xfeat",
         [](RunConfig& c, const std::string& v) {
             if (v != "raw" && v != "encoder-hidden")
                 throw std::invalid_argument("xfeat must be raw or encoder-hidden");
             c.xfeat = v;
         }},

        {"diffusion.T", u64(&RunConfig::T, 1)},
        {"diffusion.beta_start", dbl(&RunConfig::beta_start, 1e-12, 0.999)},
        {"diffusion.beta_end", dbl(&RunConfig::beta_end, 1e-12, 0.999)},

        {"prior.kind",
         [](RunConfig& c, const std::string& v) { c.prior.kind = prior_kind_from(v); }},
        {"prior.dim",
         [](RunConfig& c, const std::string& v) {
             const auto x = parse_u64(v);
             if (x < 1) throw std::invalid_argument("prior.dim must be >= 1");
             c.prior.dim = static_cast<std::size_t>(x);
         }},
        {"prior.square_sigma",
         [](RunConfig& c, const std::string& v) {
             const double x = parse_double(v);
             if (x <= 0) throw std::invalid_argument("sigma must be positive");
             c.prior.square_sigma = x;
         }},
        {"prior.swiss_sigma",
         [](RunConfig& c, const std::string& v) {
             const double x = parse_double(v);
             if (x <= 0) throw std::invalid_argument("sigma must be positive");
             c.prior.swiss_sigma = x;
         }},
        {"prior.mixture_k",
         [](RunConfig& c, const std::string& v) {
             const auto x = parse_u64(v);
             if (x < 1) throw std::invalid_argument("mixture_k must be >= 1");
             c.prior.mixture_k = static_cast<std::size_t>(x);
         }},
        {"prior.mixture_sigma",
         [](RunConfig& c, const std::string& v) {
             const double x = parse_double(v);
             if (x <= 0) throw std::invalid_argument("sigma must be positive");
             c.prior.mixture_sigma = x;
         }},
        {"prior.mixture_radius",
         [](RunConfig& c, const std::string& v) {
             const double x = parse_double(v);
             if (x <= 0) throw std::invalid_argument("radius must be positive");
             c.prior.mixture_radius = x;
         }},
        {"prior.kde_fit", u64(&RunConfig::kde_fit, 1)},
        {"prior.kde_fit_per_class", u64(&RunConfig::kde_fit_per_class, 1)},

        {"train.lr", dbl(&RunConfig::lr, 0.0, 1.0)},
        {"train.batch", u64(&RunConfig::batch, 1)},
        {"train.epochs", u64(&RunConfig::epochs, 0)},
        {"train.sleep_m", u64(&RunConfig::sleep_m, 0)},
        {"train.beta_reg", dbl(&RunConfig::beta_reg, 0.0, 1e6)},
        {"train.beta_diff", dbl(&RunConfig::beta_diff, 0.0, 1e6)},
        {"train.kl_weight", dbl(&RunConfig::kl_weight, 0.0, 1e6)},
        {"train.kl_schedule",
         [](RunConfig& c, const std::string& v) {
             if (v != "constant" && v != "linear")
                 throw std::invalid_argument("kl_schedule must be constant or linear");
             c.kl_schedule = v;
         }},
        {"train.alpha_classifier", dbl(&RunConfig::alpha_classifier, 0.0, 1e6)},
        {"train.simplified_sleep", bol(&RunConfig::simplified_sleep)},
        {"train.pretrain_epochs",
         [](RunConfig& c, const std::string& v) {
             const long x = parse_long(v);
             if (x < -1) throw std::invalid_argument("pretrain_epochs must be >= -1");
             c.pretrain_epochs = x;
         }},
        {"train.checkpoint_interval", u64(&RunConfig::checkpoint_interval, 1)},
        {"train.log_interval", u64(&RunConfig::log_interval, 1)},
        {"train.sample_fantasy", bol(&RunConfig::sample_fantasy)},
        {"train.labeled_fraction", dbl(&RunConfig::labeled_fraction, 0.0, 1.0)},
        {"train.diff_bound_mc", u64(&RunConfig::diff_bound_mc, 1)},

        {"data.kind",
         [](RunConfig& c, const std::string& v) {
             if (v != "synthetic" && v != "idx" && v != "csv")
                 throw std::invalid_argument("data.kind must be synthetic, idx, or csv");
             c.data_kind = v;
         }},
        {"data.n_train", u64(&RunConfig::n_train, 1)},
        {"data.n_test", u64(&RunConfig::n_test, 1)},
        {"data.lift_dim", u64(&RunConfig::lift_dim, 1)},
        {"data.map_seed",
         [](RunConfig& c, const std::string& v) {
             const long x = parse_long(v);
             if (x < -1) throw std::invalid_argument("map_seed must be >= -1");
             c.map_seed = x;
         }},
        {"data.synth_prior",
         [](RunConfig& c, const std::string& v) {
             if (!v.empty()) prior_kind_from(v);  // validate
             c.synth_prior = v;
         }},
        {"data.synth_k", u64(&RunConfig::synth_k, 1)},
        {"data.synth_sigma",
         [](RunConfig& c, const std::string& v) {
             const double x = parse_double(v);
             if (x <= 0) throw std::invalid_argument("sigma must be positive");
             c.synth_sigma = x;
         }},
        {"data.synth_radius",
         [](RunConfig& c, const std::string& v) {
             const double x = parse_double(v);
             if (x <= 0) throw std::invalid_argument("radius must be positive");
             c.synth_radius = x;
         }},
        {"data.train_images", str(&RunConfig::train_images)},
        {"data.train_labels", str(&RunConfig::train_labels)},
        {"data.test_images", str(&RunConfig::test_images)},
        {"data.test_labels", str(&RunConfig::test_labels)},
        {"data.csv_path", str(&RunConfig::csv_path)},
        {"data.csv_delim",
         [](RunConfig& c, const std::string& v) {
             if (v.size() != 1) throw std::invalid_argument("csv_delim must be one character");
             c.csv_delim = v;
         }},
        {"data.csv_labels_last", bol(&RunConfig::csv_labels_last)},
        {"data.test_fraction", dbl(&RunConfig::test_fraction, 0.0, 0.9)},
        {"data.genotype_preset", bol(&RunConfig::genotype_preset)},
        {"data.pca_k", u64(&RunConfig::pca_k, 0)},

        {"eval.n_mc", u64(&RunConfig::eval_mc, 1)},
        {"eval.mmd_samples", u64(&RunConfig::mmd_samples, 2)},
        {"eval.latent_prior_samples", u64(&RunConfig::latent_prior_samples, 2)},
        {"eval.knn_k", u64(&RunConfig::knn_k, 1)},
    };
    return table;
}

}  // namespace cfgdetail

// Named presets for the three experiment groups.
inline void apply_profile(ResolvedConfig& rc, const std::string& name) {
    auto set = [&rc](const std::string& key, const std::string& value) {
        cfgdetail::key_table().at(key)(rc.cfg, value);
        rc.note(key, "profile");
    };
    if (name == "unsup") {
        set("mode", "unsup");
        set("train.epochs", "200");
        set("diffusion.T", "20");
        set("train.kl_weight", "0.003");
        set("train.kl_schedule", "constant");
        set("train.batch", "128");
        set("train.lr", "0.0001");
    } else if (name == "semisup") {
        set("mode", "semisup");
        set("train.epochs", "30");
        set("diffusion.T", "100");
        set("train.kl_weight", "0.1");
        set("train.batch", "1024");
        set("train.lr", "0.0001");
    } else if (name == "cluster") {
        set("mode", "cluster");
        set("prior.kind", "mixture");
        set("train.epochs", "200");
        set("diffusion.T", "20");
        set("train.kl_weight", "0.005");
        set("train.batch", "128");
        set("train.lr", "0.0001");
    } else {
        throw std::invalid_argument("unknown profile '" + name + "' (unsup, semisup, cluster)");
    }
}

// Parses key=value lines on top of an existing resolved config. Unknown keys
// and malformed values are hard errors that name the key and line.
inline void parse_config_text(ResolvedConfig& rc, const std::string& text,
                              const std::string& source = "file") {
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfgdetail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key=value, got '" + line + "'");
        const std::string key = cfgdetail::trim(line.substr(0, eq));
        const std::string value = cfgdetail::trim(line.substr(eq + 1));
        const auto& table = cfgdetail::key_table();
        const auto it = table.find(key);
        if (it == table.end())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" +
                                     key + "'");
        try {
            it->second(rc.cfg, value);
        } catch (const std::exception& e) {
            throw std::runtime_error("config line " + std::to_string(lineno) + ": key '" + key +
                                     "': " + e.what());
        }
        rc.note(key, source);
    }
}

inline ResolvedConfig parse_config(const std::string& text) {
    ResolvedConfig rc;
    parse_config_text(rc, text);
    return rc;
}

inline std::string provenance_of(const ResolvedConfig& rc, const std::string& key) {
    const auto it = rc.provenance.find(key);
    return it == rc.provenance.end() ? "default" : it->second;
}

}  // namespace ddvi
