#pragma once

#include <string>
#include <vector>

#include "udit/array.hpp"
#include "udit/rng.hpp"

namespace udit::ag {

// A named trainable tensor. Gradient and Adam moment buffers live alongside
// the value so that optimizer state serializes with the parameters and
// training can resume bit-exactly.
template <typename T>
struct Param {
  std::string name;
  Array<T> value;
  Array<T> grad;
  Array<T> adam_m;
  Array<T> adam_v;

  Param() = default;
  Param(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(std::move(shape)) {}

  void ensure_grad() {
    if (grad.empty()) grad = Array<T>(value.shape);
  }
  void ensure_adam() {
    if (adam_m.empty()) {
      adam_m = Array<T>(value.shape);
      adam_v = Array<T>(value.shape);
    }
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(T(0));
  }
};

// 2-d convolution layer state: weight [OC, IC, K, K], bias [OC].
template <typename T>
struct Conv2d {
  Param<T> w;
  Param<T> b;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int ic, int oc, int k, int stride_, int pad_)
      : w(name + ".w", {oc, ic, k, k}), b(name + ".b", {oc}), stride(stride_),
        pad(pad_) {}

  int out_channels() const { return w.value.dim(0); }
  int in_channels() const { return w.value.dim(1); }
  int kernel() const { return w.value.dim(2); }

  // Truncated-normal weights (std 0.02), zero bias.
  void init(Philox& rng, double stddev = 0.02) {
    for (auto& x : w.value.v)
      x = static_cast<T>(rng.truncated_normal(0.0, stddev));
    b.value.fill(T(0));
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Fully connected layer state: weight [O, F], bias [O].
template <typename T>
struct Dense {
  Param<T> w;
  Param<T> b;

  Dense() = default;
  Dense(const std::string& name, int in, int out)
      : w(name + ".w", {out, in}), b(name + ".b", {out}) {}

  int out_features() const { return w.value.dim(0); }
  int in_features() const { return w.value.dim(1); }

  void init(Philox& rng, double stddev = 0.02) {
    for (auto& x : w.value.v)
      x = static_cast<T>(rng.truncated_normal(0.0, stddev));
    b.value.fill(T(0));
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

}  // namespace udit::ag
