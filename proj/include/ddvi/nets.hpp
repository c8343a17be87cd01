#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ddvi/linalg.hpp"
#include "ddvi/rng.hpp"
#include "ddvi/tape.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

// Maps parameter tensors to tape leaves for one forward/backward pass. All
// networks of a training step share one binding so gradients from repeated
// forward calls accumulate on the same leaves.
class Binding {
public:
    static Binding bind(ad::Tape& tape, const std::vector<NamedParam>& params) {
        Binding b;
        for (const auto& p : params) b.vars_.emplace(p.tensor, tape.leaf(*p.tensor));
        return b;
    }

    ad::Var operator()(const Tensor& t) const {
        auto it = vars_.find(&t);
        detail::check(it != vars_.end(), "Binding: tensor was not bound");
        return it->second;
    }

    // Adjoints in the same order as the params list used at bind().
    std::vector<Tensor> grads(const ad::Tape& tape, const std::vector<NamedParam>& params) const {
        std::vector<Tensor> out;
        out.reserve(params.size());
        for (const auto& p : params) out.push_back(tape.grad(vars_.at(p.tensor)));
        return out;
    }

private:
    std::unordered_map<const Tensor*, ad::Var> vars_;
};

struct Linear {
    Tensor w;  // in x out
    Tensor b;  // 1 x out

    Linear() = default;

    Linear(std::size_t in, std::size_t out, Rng& rng) : w({in, out}), b({1, out}) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in > 0 ? in : 1));
        rng.fill_uniform(w, -bound, bound);
        w.requires_grad = true;
        b.requires_grad = true;
    }

    ad::Var apply(const Binding& bind, ad::Var x) const {
        return ad::add_row(ad::matmul(x, bind(w)), bind(b));
    }

    Tensor apply_plain(const Tensor& x) const {
        Tensor h = la::matmul(x, w);
        la::add_row_inplace(h, b);
        return h;
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) {
        out.push_back({prefix + ".w", &w});
        out.push_back({prefix + ".b", &b});
    }
};

// ---------------------------------------------------------------------------
// Encoder: MLP trunk with relu hidden layers and three linear heads
// (mu, logvar, class logits). The trunk output doubles as the conditioning
// feature when "encoder-hidden" conditioning is selected.
// ---------------------------------------------------------------------------

struct EncoderConfig {
    std::size_t in_dim = 784;
    std::size_t hidden = 1000;
    std::size_t hidden_layers = 2;
    std::size_t latent = 2;
    std::size_t classes = 10;
};

class MlpEncoder {
public:
    MlpEncoder() = default;

    MlpEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        std::size_t in = cfg.in_dim;
        for (std::size_t i = 0; i < cfg.hidden_layers; ++i) {
            layers_.emplace_back(in, cfg.hidden, rng);
            in = cfg.hidden;
        }
        mu_ = Linear(in, cfg.latent, rng);
        logvar_ = Linear(in, cfg.latent, rng);
        cls_ = Linear(in, cfg.classes, rng);
    }

    struct Out {
        ad::Var mu, logvar, trunk, logits;
    };

    Out forward(const Binding& bind, ad::Var x) const {
        check_in(ad::detail::val(x).cols());
        ad::Var h = x;
        for (const auto& l : layers_) h = ad::relu(l.apply(bind, h));
        return {mu_.apply(bind, h), logvar_.apply(bind, h), h, cls_.apply(bind, h)};
    }

    struct PlainOut {
        Tensor mu, logvar, trunk, logits;
    };

    PlainOut forward_plain(const Tensor& x) const {
        check_in(x.cols());
        Tensor h = x;
        for (const auto& l : layers_) {
            h = l.apply_plain(h);
            la::relu_inplace(h);
        }
        return {mu_.apply_plain(h), logvar_.apply_plain(h), h, cls_.apply_plain(h)};
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect(prefix + ".h" + std::to_string(i), out);
        mu_.collect(prefix + ".mu", out);
        logvar_.collect(prefix + ".logvar", out);
        cls_.collect(prefix + ".cls", out);
    }

    const EncoderConfig& config() const { return cfg_; }
    std::size_t trunk_dim() const { return layers_.empty() ? cfg_.in_dim : cfg_.hidden; }

private:
    void check_in(std::size_t c) const {
        detail::check(c == cfg_.in_dim, "encoder: input dimension mismatch");
    }

    EncoderConfig cfg_;
    std::vector<Linear> layers_;
    Linear mu_, logvar_, cls_;
};

// ---------------------------------------------------------------------------
// Decoder: MLP with relu hidden layers; sigmoid head for Bernoulli data,
// identity head for Gaussian data. hidden_layers = 0 gives a plain linear map.
// ---------------------------------------------------------------------------

enum class DecoderHead { sigmoid, identity };

struct DecoderConfig {
    std::size_t latent = 2;
    std::size_t hidden = 1000;
    std::size_t hidden_layers = 2;
    std::size_t out_dim = 784;
    DecoderHead head = DecoderHead::sigmoid;
};

class MlpDecoder {
public:
    MlpDecoder() = default;

    MlpDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        std::size_t in = cfg.latent;
        for (std::size_t i = 0; i < cfg.hidden_layers; ++i) {
            layers_.emplace_back(in, cfg.hidden, rng);
            in = cfg.hidden;
        }
        head_ = Linear(in, cfg.out_dim, rng);
    }

    // Pre-head output: logits in sigmoid mode, means in identity mode.
    ad::Var forward_raw(const Binding& bind, ad::Var z) const {
        check_in(ad::detail::val(z).cols());
        ad::Var h = z;
        for (const auto& l : layers_) h = ad::relu(l.apply(bind, h));
        return head_.apply(bind, h);
    }

    Tensor forward_raw_plain(const Tensor& z) const {
        check_in(z.cols());
        Tensor h = z;
        for (const auto& l : layers_) {
            h = l.apply_plain(h);
            la::relu_inplace(h);
        }
        return head_.apply_plain(h);
    }

    // Data-space parameter vector (Bernoulli means or Gaussian means).
    Tensor decode_mean(const Tensor& z) const {
        Tensor raw = forward_raw_plain(z);
        if (cfg_.head == DecoderHead::sigmoid) la::sigmoid_inplace(raw);
        return raw;
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect(prefix + ".h" + std::to_string(i), out);
        head_.collect(prefix + ".head", out);
    }

    const DecoderConfig& config() const { return cfg_; }

private:
    void check_in(std::size_t c) const {
        detail::check(c == cfg_.latent, "decoder: latent dimension mismatch");
    }

    DecoderConfig cfg_;
    std::vector<Linear> layers_;
    Linear head_;
};

// ---------------------------------------------------------------------------
// Time-conditioned noise prediction network. Each layer adds a learned
// per-timestep embedding row to the linear output before the nonlinearity;
// the last layer is linear + embedding only. Row 0 of every table is unused
// (steps are 1-based), so tables have T+1 rows.
// ---------------------------------------------------------------------------

struct TimeMlpConfig {
    std::size_t latent = 2;
    std::size_t feat_dim = 784;
    std::size_t hidden = 128;
    std::size_t layers = 5;
    std::size_t steps = 20;  // T
};

class TimeMlp {
public:
    TimeMlp() = default;

    TimeMlp(const TimeMlpConfig& cfg, Rng& rng) : cfg_(cfg) {
        detail::check(cfg.layers >= 2, "TimeMlp: need at least 2 layers");
        std::size_t in = cfg.latent + cfg.feat_dim;
        for (std::size_t i = 0; i < cfg.layers; ++i) {
            const std::size_t out = (i + 1 == cfg.layers) ? cfg.latent : cfg.hidden;
            layers_.emplace_back(in, out, rng);
            Tensor e({cfg.steps + 1, out});
            rng.fill_uniform(e, -1.0 / std::sqrt(static_cast<double>(cfg.hidden)),
                             1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
            e.requires_grad = true;
            embeds_.push_back(std::move(e));
            in = out;
        }
    }

    ad::Var forward(const Binding& bind, ad::Var y, ad::Var x_feat,
                    const std::vector<std::size_t>& t) const {
        check_inputs(ad::detail::val(y), ad::detail::val(x_feat), t);
        ad::Var h = ad::concat_cols(y, x_feat);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = ad::add(layers_[i].apply(bind, h), ad::gather_rows(bind(embeds_[i]), t));
            if (i + 1 < layers_.size()) h = ad::relu(h);
        }
        return h;
    }

    Tensor forward_plain(const Tensor& y, const Tensor& x_feat,
                         const std::vector<std::size_t>& t) const {
        check_inputs(y, x_feat, t);
        Tensor h({y.rows(), y.cols() + x_feat.cols()});
        for (std::size_t i = 0; i < y.rows(); ++i) {
            for (std::size_t j = 0; j < y.cols(); ++j) h(i, j) = y(i, j);
            for (std::size_t j = 0; j < x_feat.cols(); ++j) h(i, y.cols() + j) = x_feat(i, j);
        }
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            h = layers_[li].apply_plain(h);
            const Tensor& e = embeds_[li];
            for (std::size_t i = 0; i < h.rows(); ++i)
                for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += e(t[i], j);
            if (li + 1 < layers_.size()) la::relu_inplace(h);
        }
        return h;
    }

    void collect(const std::string& prefix, std::vector<NamedParam>& out) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].collect(prefix + ".l" + std::to_string(i), out);
            out.push_back({prefix + ".emb" + std::to_string(i), &embeds_[i]});
        }
    }

    const TimeMlpConfig& config() const { return cfg_; }

private:
    void check_inputs(const Tensor& y, const Tensor& x_feat,
                      const std::vector<std::size_t>& t) const {
        detail::check(y.cols() == cfg_.latent, "TimeMlp: latent dimension mismatch");
        detail::check(x_feat.cols() == cfg_.feat_dim, "TimeMlp: feature dimension mismatch");
        detail::check(y.rows() == x_feat.rows() && y.rows() == t.size(),
                      "TimeMlp: batch size mismatch");
        for (auto ti : t)
            detail::check(ti >= 1 && ti <= cfg_.steps, "TimeMlp: step index out of range");
    }

    TimeMlpConfig cfg_;
    std::vector<Linear> layers_;
    std::vector<Tensor> embeds_;
};

}  // namespace ddvi
