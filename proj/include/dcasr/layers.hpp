#pragma once

// Recurrent cells, the subsampling bidirectional encoder, and
// location-aware attention.

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcasr/autodiff.hpp"
#include "dcasr/tensor.hpp"

namespace dcasr {

using ad::Var;

// Ordered, named collection of trainable tensors. Registration order is the
// checkpoint order.
class ParamSet {
 public:
  Var add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    Var v = ad::parameter(std::move(init));
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return items_[it->second].second;
  }

  std::vector<Var> vars() const {
    std::vector<Var> out;
    for (const auto& [name, v] : items_) out.push_back(v);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : items_) v.zero_grad();
  }

  // Sets every parameter to zero; used by reduction tests.
  void fill(double value) {
    for (auto& [name, v] : items_) v.mutable_value().fill(value);
  }

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::map<std::string, std::size_t> index_;
};

struct Initializer {
  std::mt19937_64& rng;
  double range = 0.1;

  Tensor operator()(Shape shape) const { return uniform_tensor(std::move(shape), range, rng); }
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamSet& params, const std::string& name, std::size_t vocab,
            std::size_t dim, const Initializer& init)
      : table_(params.add(name + ".table", init({vocab, dim}))) {}

  Var lookup(std::size_t id) const { return ad::row(table_, id); }
  const Var& table() const { return table_; }

 private:
  Var table_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
         const Initializer& init, bool bias = true)
      : w_(params.add(name + ".W", init({out, in}))) {
    if (bias) b_ = params.add(name + ".b", init({out}));
  }

  Var operator()(const Var& x) const { return ad::linear(x, w_, b_); }
  const Var& weight() const { return w_; }
  const Var& bias() const { return b_; }

 private:
  Var w_;
  Var b_;
};

struct LstmState {
  Var h;
  Var c;
};

// LSTM cell with gates stacked as [input, forget, output, candidate] in a
// single [4H, D+H] weight plus [4H] bias.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamSet& params, const std::string& name, std::size_t input_size,
           std::size_t hidden_size, const Initializer& init)
      : input_size_(input_size),
        hidden_size_(hidden_size),
        w_(params.add(name + ".W", init({4 * hidden_size, input_size + hidden_size}))),
        b_(params.add(name + ".b", init({4 * hidden_size}))) {}

  std::size_t input_size() const { return input_size_; }
  std::size_t hidden_size() const { return hidden_size_; }
  std::size_t parameter_count() const { return w_.numel() + b_.numel(); }

  // Zero state for a single sequence ([H]) or a batch ([rows, H]).
  LstmState zero_state(std::size_t rows = 0) const {
    Shape s = rows ? Shape{rows, hidden_size_} : Shape{hidden_size_};
    return {ad::constant(Tensor(s)), ad::constant(Tensor(s))};
  }

  LstmState step(const Var& x, const LstmState& state) const {
    const std::size_t H = hidden_size_;
    if (x.shape().back() != input_size_) {
      throw std::invalid_argument("LstmCell: input " + shape_string(x.shape()) +
                                  " but cell expects width " + std::to_string(input_size_));
    }
    Var z = ad::linear(ad::concat({x, state.h}), w_, b_);
    Var i = ad::sigmoid(ad::slice_last(z, 0, H));
    Var f = ad::sigmoid(ad::slice_last(z, H, 2 * H));
    Var o = ad::sigmoid(ad::slice_last(z, 2 * H, 3 * H));
    Var g = ad::tanh(ad::slice_last(z, 3 * H, 4 * H));
    Var c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
    Var h = ad::mul(o, ad::tanh(c));
    return {h, c};
  }

 private:
  std::size_t input_size_ = 0;
  std::size_t hidden_size_ = 0;
  Var w_;
  Var b_;
};

struct EncoderConfig {
  std::size_t input_dim = 83;
  std::size_t layers = 4;
  std::size_t hidden = 320;
  std::size_t subsample = 4;
};

struct EncoderOutput {
  Var h;  // [T', 2*hidden]
  std::size_t frames = 0;
  std::string utt_id;
};

// Per-layer strides whose product is the total factor: prime factors are
// assigned to the lowest layers first, leftovers fold into the last layer.
inline std::vector<std::size_t> layer_strides(std::size_t factor, std::size_t layers) {
  if (factor == 0 || layers == 0) throw std::invalid_argument("layer_strides: zero factor or layers");
  std::vector<std::size_t> primes;
  for (std::size_t n = factor, p = 2; n > 1;) {
    if (n % p == 0) {
      primes.push_back(p);
      n /= p;
    } else {
      ++p;
    }
  }
  std::vector<std::size_t> strides(layers, 1);
  for (std::size_t i = 0; i < primes.size(); ++i) strides[std::min(i, layers - 1)] *= primes[i];
  return strides;
}

// Stacked bidirectional LSTM with frame subsampling between layers.
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamSet& params, const EncoderConfig& cfg, const Initializer& init)
      : cfg_(cfg), strides_(layer_strides(cfg.subsample, cfg.layers)) {
    std::size_t in = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l);
      fwd_.emplace_back(params, p + ".fw", in, cfg.hidden, init);
      bwd_.emplace_back(params, p + ".bw", in, cfg.hidden, init);
      in = 2 * cfg.hidden;
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t output_dim() const { return 2 * cfg_.hidden; }

  static std::size_t output_length(std::size_t frames, std::size_t factor) {
    return (frames + factor - 1) / factor;
  }

  EncoderOutput encode(const Tensor& x, const std::string& utt_id = {}) const {
    return encode_batch({x}, {utt_id}).front();
  }

  // Encodes a padded batch; rows beyond each sequence's length never touch
  // that sequence's state, so results match per-utterance encoding.
  std::vector<EncoderOutput> encode_batch(const std::vector<Tensor>& xs,
                                          const std::vector<std::string>& ids = {}) const {
    const std::size_t B = xs.size();
    if (B == 0) return {};
    std::vector<std::size_t> len(B);
    std::size_t t_max = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const Tensor& x = xs[b];
      if (x.rank() != 2 || x.dim(1) != cfg_.input_dim) {
        throw std::invalid_argument("encode: features " + shape_string(x.shape()) +
                                    " but encoder expects [T," +
                                    std::to_string(cfg_.input_dim) + "]");
      }
      if (x.dim(0) < cfg_.subsample) {
        throw std::invalid_argument("encode: utterance too short (" + std::to_string(x.dim(0)) +
                                    " frames < subsample factor " +
                                    std::to_string(cfg_.subsample) + ")");
      }
      len[b] = x.dim(0);
      t_max = std::max(t_max, len[b]);
    }
    std::vector<Var> frames(t_max);
    for (std::size_t t = 0; t < t_max; ++t) {
      Tensor f(Shape{B, cfg_.input_dim});
      for (std::size_t b = 0; b < B; ++b) {
        if (t < len[b]) std::copy_n(xs[b].data() + t * cfg_.input_dim, cfg_.input_dim, f.data() + b * cfg_.input_dim);
      }
      frames[t] = ad::constant(std::move(f));
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      std::vector<Var> fw = run(fwd_[l], frames, len, false);
      std::vector<Var> bw = run(bwd_[l], frames, len, true);
      const std::size_t s = strides_[l];
      std::vector<Var> next;
      for (std::size_t t = 0; t < frames.size(); t += s) next.push_back(ad::concat({fw[t], bw[t]}));
      for (auto& n : len) n = output_length(n, s);
      frames = std::move(next);
    }
    std::vector<EncoderOutput> out(B);
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<Var> rows;
      for (std::size_t t = 0; t < len[b]; ++t) rows.push_back(ad::row(frames[t], b));
      out[b].h = ad::stack_rows(rows);
      out[b].frames = len[b];
      out[b].utt_id = b < ids.size() ? ids[b] : std::string();
    }
    return out;
  }

 private:
  static std::vector<Var> run(const LstmCell& cell, const std::vector<Var>& xs,
                              const std::vector<std::size_t>& len, bool reverse) {
    const std::size_t T = xs.size();
    const std::size_t B = len.size();
    const std::size_t H = cell.hidden_size();
    LstmState state = cell.zero_state(B);
    std::vector<Var> out(T);
    for (std::size_t k = 0; k < T; ++k) {
      const std::size_t t = reverse ? T - 1 - k : k;
      LstmState next = cell.step(xs[t], state);
      bool all_valid = true;
      Tensor keep(Shape{B, H}), hold(Shape{B, H});
      for (std::size_t b = 0; b < B; ++b) {
        const bool valid = t < len[b];
        all_valid = all_valid && valid;
        for (std::size_t i = 0; i < H; ++i) {
          keep(b, i) = valid ? 1.0 : 0.0;
          hold(b, i) = valid ? 0.0 : 1.0;
        }
      }
      if (!all_valid) {
        Var mk = ad::constant(keep);
        Var mh = ad::constant(hold);
        next.h = ad::add(ad::mul(next.h, mk), ad::mul(state.h, mh));
        next.c = ad::add(ad::mul(next.c, mk), ad::mul(state.c, mh));
      }
      state = next;
      out[t] = state.h;
    }
    return out;
  }

  EncoderConfig cfg_;
  std::vector<std::size_t> strides_;
  std::vector<LstmCell> fwd_;
  std::vector<LstmCell> bwd_;
};

struct AttentionConfig {
  std::size_t dim = 320;      // scoring space
  std::size_t filters = 10;   // location filters F
  std::size_t width = 100;    // filter width K
};

struct AttentionResult {
  Var glimpse;  // [E]
  Var weights;  // [T']
};

// Content + location attention: scores are w^T tanh(K h_t + Q s + L conv(a_prev)_t + b).
class LocationAttention {
 public:
  LocationAttention() = default;
  LocationAttention(ParamSet& params, const std::string& name, std::size_t enc_dim,
                    std::size_t query_dim, const AttentionConfig& cfg, const Initializer& init)
      : cfg_(cfg),
        key_(params, name + ".key", enc_dim, cfg.dim, init),
        query_(params, name + ".query", query_dim, cfg.dim, init, false),
        filters_(params.add(name + ".filters", init({cfg.filters, cfg.width}))),
        loc_(params, name + ".loc", cfg.filters, cfg.dim, init, false),
        score_(params.add(name + ".score", init({cfg.dim}))) {}

  // Keys depend only on the encoder output; computed once per utterance.
  Var keys(const Var& h) const { return key_(h); }

  static Var initial_weights(std::size_t frames) {
    return ad::constant(Tensor(Shape{frames}, 1.0 / static_cast<double>(frames)));
  }

  Var scores(const Var& prev_weights, const Var& keys, const Var& query) const {
    if (prev_weights.shape() != Shape{keys.shape()[0]}) {
      ad::detail::shape_error("attend: previous weights vs encoder frames",
                              prev_weights.shape(), keys.shape());
    }
    Var loc = loc_(ad::conv1d_centered(prev_weights, filters_));
    Var pre = ad::add_row(ad::add(keys, loc), query_(query));
    return ad::matmul(ad::tanh(pre), score_);
  }

  AttentionResult attend(const Var& prev_weights, const Var& keys, const Var& h,
                         const Var& query) const {
    if (h.shape()[0] != keys.shape()[0]) {
      ad::detail::shape_error("attend: encoder frames vs keys", h.shape(), keys.shape());
    }
    Var a = ad::softmax(scores(prev_weights, keys, query));
    return {ad::matmul(a, h), a};
  }

 private:
  AttentionConfig cfg_;
  Linear key_;
  Linear query_;
  Var filters_;
  Linear loc_;
  Var score_;
};

}  // namespace dcasr
