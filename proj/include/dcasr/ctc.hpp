#pragma once

// CTC loss by forward-backward over the 2U+1 blank-augmented lattice,
// an exhaustive reference, and the label-synchronous prefix scorer used by
// joint decoding. Blank is label 0 everywhere.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/autodiff.hpp"

namespace dcasr {

using LabelSequence = std::vector<std::size_t>;

namespace ctc {

inline constexpr std::size_t kBlank = 0;
// Log-space stand-in for log(0).
inline constexpr double kLogZero = -1e30;

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return std::max(a, kLogZero);
  return a + std::log1p(std::exp(b - a));
}

inline double log_mul(double a, double b) {
  if (a <= kLogZero || b <= kLogZero) return kLogZero;
  return a + b;
}

inline void validate_labels(const LabelSequence& y, std::size_t vocab) {
  for (std::size_t id : y) {
    if (id == kBlank) throw std::invalid_argument("ctc: label sequence contains blank");
    if (id >= vocab) {
      throw std::invalid_argument("ctc: label " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

// Fewest frames that admit an alignment: one per label plus a separating
// blank between equal neighbours.
inline std::size_t min_frames(const LabelSequence& y) {
  std::size_t n = y.size();
  for (std::size_t i = 1; i < y.size(); ++i) n += y[i] == y[i - 1];
  return n;
}

inline void check_feasible(std::size_t frames, const LabelSequence& y) {
  const std::size_t need = min_frames(y);
  if (frames < need) {
    throw std::domain_error("ctc: no valid alignment, " + std::to_string(y.size()) +
                            " labels need " + std::to_string(need) + " frames but only " +
                            std::to_string(frames) + " available");
  }
}

struct Lattice {
  std::vector<std::size_t> states;  // blank-augmented labels
  std::vector<double> alpha;        // [T, S], emission at t included
  std::vector<double> beta;         // [T, S], emission at t excluded
  double log_likelihood = kLogZero;
};

inline Lattice forward_backward(const Tensor& log_probs, const LabelSequence& y) {
  if (log_probs.rank() != 2) {
    throw std::invalid_argument("ctc: log_probs must be [T, V], got " +
                                shape_string(log_probs.shape()));
  }
  const std::size_t T = log_probs.dim(0);
  const std::size_t V = log_probs.dim(1);
  if (T == 0) throw std::domain_error("ctc: zero frames");
  validate_labels(y, V);
  check_feasible(T, y);

  Lattice lat;
  lat.states.push_back(kBlank);
  for (std::size_t id : y) {
    lat.states.push_back(id);
    lat.states.push_back(kBlank);
  }
  const auto& l = lat.states;
  const std::size_t S = l.size();
  auto skip_ok = [&](std::size_t s) { return s >= 2 && l[s] != kBlank && l[s] != l[s - 2]; };
  auto lp = [&](std::size_t t, std::size_t s) { return log_probs(t, l[s]); };

  lat.alpha.assign(T * S, kLogZero);
  lat.beta.assign(T * S, kLogZero);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return lat.alpha[t * S + s]; };
  auto Bt = [&](std::size_t t, std::size_t s) -> double& { return lat.beta[t * S + s]; };

  A(0, 0) = lp(0, 0);
  if (S > 1) A(0, 1) = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (skip_ok(s)) acc = log_add(acc, A(t - 1, s - 2));
      A(t, s) = log_mul(acc, lp(t, s));
    }
  }
  Bt(T - 1, S - 1) = 0.0;
  if (S > 1) Bt(T - 1, S - 2) = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = log_mul(Bt(t + 1, s), lp(t + 1, s));
      if (s + 1 < S) acc = log_add(acc, log_mul(Bt(t + 1, s + 1), lp(t + 1, s + 1)));
      if (s + 2 < S && skip_ok(s + 2)) {
        acc = log_add(acc, log_mul(Bt(t + 1, s + 2), lp(t + 1, s + 2)));
      }
      Bt(t, s) = acc;
    }
  }
  lat.log_likelihood = A(T - 1, S - 1);
  if (S > 1) lat.log_likelihood = log_add(lat.log_likelihood, A(T - 1, S - 2));
  return lat;
}

inline double loss_value(const Tensor& log_probs, const LabelSequence& y) {
  return -forward_backward(log_probs, y).log_likelihood;
}

// -log sum over alignments collapsing to y. The gradient with respect to
// log_probs[t, k] is minus the posterior occupancy of label k at frame t.
inline ad::Var loss(const ad::Var& log_probs, const LabelSequence& y) {
  Lattice lat = forward_backward(log_probs.value(), y);
  const double value = -lat.log_likelihood;
  return ad::detail::make_node(
      Tensor::scalar(value), {log_probs}, [lat = std::move(lat)](ad::Node& self) {
        Tensor* g = ad::detail::sink(self, 0);
        if (!g) return;
        const std::size_t S = lat.states.size();
        const std::size_t T = lat.alpha.size() / S;
        const double scale = self.grad[0];
        const std::size_t V = g->dim(1);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t s = 0; s < S; ++s) {
            const double occ = lat.alpha[t * S + s] + lat.beta[t * S + s] - lat.log_likelihood;
            if (occ <= kLogZero / 2) continue;
            (*g)[t * V + lat.states[s]] -= scale * std::exp(occ);
          }
        }
      });
}

// Removes repeats, then blanks.
inline LabelSequence collapse(const std::vector<std::size_t>& path) {
  LabelSequence out;
  std::size_t prev = kBlank;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const std::size_t k = path[i];
    if (k != kBlank && (i == 0 || k != prev)) out.push_back(k);
    prev = k;
  }
  return out;
}

namespace detail {

template <typename Visit>
void enumerate_paths(const Tensor& log_probs, Visit visit) {
  const std::size_t T = log_probs.dim(0);
  const std::size_t V = log_probs.dim(1);
  double total = 1.0;
  for (std::size_t t = 0; t < T; ++t) total *= static_cast<double>(V);
  if (total > 1e6) {
    throw std::invalid_argument("ctc brute force: V^T = " + std::to_string(total) +
                                " exceeds 10^6");
  }
  std::vector<std::size_t> path(T, 0);
  while (true) {
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) lp += log_probs(t, path[t]);
    visit(path, lp);
    std::size_t t = T;
    while (t > 0) {
      --t;
      if (++path[t] < V) break;
      path[t] = 0;
      if (t == 0) return;
    }
    if (T == 0) return;
  }
}

}  // namespace detail

// Exhaustive -log p(y | x) for small instances.
inline double brute_force(const Tensor& log_probs, const LabelSequence& y) {
  validate_labels(y, log_probs.dim(1));
  double acc = kLogZero;
  std::size_t matches = 0;
  detail::enumerate_paths(log_probs, [&](const std::vector<std::size_t>& path, double lp) {
    if (collapse(path) == y) {
      acc = log_add(acc, lp);
      ++matches;
    }
  });
  if (matches == 0) {
    throw std::domain_error("ctc brute force: no valid alignment for " +
                            std::to_string(y.size()) + " labels in " +
                            std::to_string(log_probs.dim(0)) + " frames");
  }
  return -acc;
}

// Exhaustive log p(output begins with prefix).
inline double brute_force_prefix(const Tensor& log_probs, const LabelSequence& prefix) {
  validate_labels(prefix, log_probs.dim(1));
  double acc = kLogZero;
  detail::enumerate_paths(log_probs, [&](const std::vector<std::size_t>& path, double lp) {
    LabelSequence out = collapse(path);
    if (out.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), out.begin())) {
      acc = log_add(acc, lp);
    }
  });
  return acc;
}

// Incremental CTC prefix probabilities. Each state carries, per frame, the
// log probability of having emitted exactly the prefix ending in a label
// (r_n) or in blank (r_b).
class PrefixScorer {
 public:
  struct State {
    LabelSequence prefix;
    std::vector<double> r_n;
    std::vector<double> r_b;
    double prefix_log_prob = 0.0;  // log p(output begins with prefix)
  };

  struct Extension {
    State state;
    double log_prob = kLogZero;  // log p(output begins with prefix + label)
    double increment = kLogZero;  // log_prob minus the parent's prefix score
  };

  explicit PrefixScorer(Tensor log_probs) : lp_(std::move(log_probs)) {
    if (lp_.rank() != 2 || lp_.dim(0) == 0) {
      throw std::invalid_argument("ctc prefix scorer: log_probs must be non-empty [T, V]");
    }
  }

  std::size_t frames() const { return lp_.dim(0); }
  std::size_t vocab() const { return lp_.dim(1); }

  State initial() const {
    const std::size_t T = frames();
    State s;
    s.r_n.assign(T, kLogZero);
    s.r_b.assign(T, kLogZero);
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      acc = log_mul(acc, lp_(t, kBlank));
      s.r_b[t] = acc;
    }
    s.prefix_log_prob = 0.0;
    return s;
  }

  Extension extend(const State& g, std::size_t label) const {
    if (label == kBlank) throw std::invalid_argument("ctc prefix scorer: cannot extend by blank");
    if (label >= vocab()) {
      throw std::invalid_argument("ctc prefix scorer: label " + std::to_string(label) +
                                  " outside vocabulary");
    }
    const std::size_t T = frames();
    Extension ext;
    State& h = ext.state;
    h.prefix = g.prefix;
    h.prefix.push_back(label);
    h.r_n.assign(T, kLogZero);
    h.r_b.assign(T, kLogZero);
    const bool repeat = !g.prefix.empty() && g.prefix.back() == label;
    h.r_n[0] = g.prefix.empty() ? lp_(0, label) : kLogZero;
    double psi = h.r_n[0];
    for (std::size_t t = 1; t < T; ++t) {
      const double phi = repeat ? g.r_b[t - 1] : log_add(g.r_b[t - 1], g.r_n[t - 1]);
      h.r_n[t] = log_mul(log_add(h.r_n[t - 1], phi), lp_(t, label));
      h.r_b[t] = log_mul(log_add(h.r_b[t - 1], h.r_n[t - 1]), lp_(t, kBlank));
      psi = log_add(psi, log_mul(phi, lp_(t, label)));
    }
    h.prefix_log_prob = psi;
    ext.log_prob = psi;
    ext.increment = psi <= kLogZero ? kLogZero : psi - g.prefix_log_prob;
    return ext;
  }

  // log p(output == prefix).
  double final_log_prob(const State& g) const {
    return log_add(g.r_n.back(), g.r_b.back());
  }

 private:
  Tensor lp_;
};

}  // namespace ctc
}  // namespace dcasr
