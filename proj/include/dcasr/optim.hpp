#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/layers.hpp"

namespace dcasr {

struct AdaDeltaConfig {
  double rho = 0.95;
  double eps = 1e-8;
  double clip = 5.0;  // global gradient norm
};

struct AdaDeltaSlot {
  Tensor mean_sq_grad;
  Tensor mean_sq_delta;
};

// Clips the gradients to global norm `clip`, then applies one AdaDelta
// update in place. Returns the pre-clip global norm.
inline double adadelta_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                            std::vector<AdaDeltaSlot>& slots, const AdaDeltaConfig& cfg,
                            const std::vector<std::string>& names = {}) {
  if (params.size() != grads.size() || params.size() != slots.size()) {
    throw std::invalid_argument("adadelta_step: mismatched parameter/gradient/accumulator counts");
  }
  if (!(cfg.clip > 0.0)) throw std::invalid_argument("adadelta_step: clip must be > 0");
  double sq = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k].all_finite()) {
      throw std::domain_error("adadelta_step: non-finite gradient for parameter " +
                              (k < names.size() ? names[k] : std::to_string(k)));
    }
    for (double g : grads[k].values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double factor = norm > cfg.clip ? cfg.clip / norm : 1.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    AdaDeltaSlot& s = slots[k];
    if (s.mean_sq_grad.shape() != p.shape()) s.mean_sq_grad = Tensor(p.shape());
    if (s.mean_sq_delta.shape() != p.shape()) s.mean_sq_delta = Tensor(p.shape());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = grads[k][i] * factor;
      double& eg = s.mean_sq_grad[i];
      double& ed = s.mean_sq_delta[i];
      eg = cfg.rho * eg + (1.0 - cfg.rho) * g * g;
      const double delta = -std::sqrt(ed + cfg.eps) / std::sqrt(eg + cfg.eps) * g;
      ed = cfg.rho * ed + (1.0 - cfg.rho) * delta * delta;
      p[i] += delta;
    }
  }
  return norm;
}

// AdaDelta over every tensor of a ParamSet.
class AdaDelta {
 public:
  AdaDelta(ParamSet& params, AdaDeltaConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& [name, v] : params.items()) {
      slots_.push_back({Tensor(v.shape()), Tensor(v.shape())});
    }
  }

  double step() {
    std::vector<Tensor*> values;
    std::vector<Tensor> grads;
    std::vector<std::string> names;
    for (auto& [name, v] : params_->items()) {
      Var var = v;
      values.push_back(&var.mutable_value());
      grads.push_back(var.grad());
      names.push_back(name);
    }
    return adadelta_step(values, grads, slots_, cfg_, names);
  }

  const AdaDeltaConfig& config() const { return cfg_; }
  std::vector<AdaDeltaSlot>& slots() { return slots_; }
  const std::vector<AdaDeltaSlot>& slots() const { return slots_; }

 private:
  ParamSet* params_;
  AdaDeltaConfig cfg_;
  std::vector<AdaDeltaSlot> slots_;
};

}  // namespace dcasr
