#pragma once

// Adam updates over parameter sets. Parameters whose gradient buffer is
// empty (never touched by a backward pass) are skipped, so one optimizer
// call can serve graphs that only reach a subset of the parameters.

#include <cstdint>
#include <vector>

#include "udit/common.hpp"
#include "udit/kernels.hpp"
#include "udit/layers.hpp"

namespace udit::ag {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require<ConfigError>(lr > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 &&
                             beta2 < 1 && eps > 0,
                         "invalid Adam configuration");
  }
};

// One bias-corrected Adam step; `step` is 1-based.
template <typename T>
void adam_update(const std::vector<Param<T>*>& params, const AdamConfig& c,
                 int64_t step) {
  require<StateError>(step >= 1, "Adam step counter must be 1-based");
  for (Param<T>* p : params) {
    if (p->grad.empty()) continue;
    p->ensure_adam();
    kern::adam_step(p->value.data(), p->grad.data(), p->adam_m.data(),
                    p->adam_v.data(), p->value.numel(), T(c.lr), T(c.beta1),
                    T(c.beta2), T(c.eps), step);
  }
}

template <typename T>
void zero_grads(const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
}

}  // namespace udit::ag
