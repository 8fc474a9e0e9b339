#pragma once

// Reverse-mode autodiff on a linear tape.
//
// Each op appends a node holding the forward value and a backward closure
// that scatters the node's gradient into its parents (and into layer
// parameters). backward(loss) walks the tape once in reverse. The tape is
// rebuilt every training step; parameters live outside it.
//
// Conventions:
//  * node handles are ints; feature maps are NCHW, matrices [rows, cols],
//    scalars [1];
//  * gradients accumulate (+=), so diamond-shaped graphs work;
//  * reductions accumulate in double independent of T, keeping float results
//    reproducible and double results accurate enough for finite-difference
//    gradient checks.

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "udit/kernels.hpp"
#include "udit/layers.hpp"

namespace udit::ag {

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- node access -------------------------------------------------------

  int leaf(Array<T> v, bool needs_grad = false) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Array<T>& val(int id) const { return nodes_[size_t(id)].val; }
  Array<T>& grad(int id) { return grad_buf(id); }
  bool needs_grad(int id) const { return nodes_[size_t(id)].needs_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Drops all nodes (frees their storage) but keeps workspaces allocated.
  void reset() { nodes_.clear(); }

  // Clears node gradients only. Call between two backward passes over one
  // tape (e.g. discriminator update, then generator update) so the second
  // pass does not revisit the first pass's subgraph.
  void clear_node_grads() {
    for (auto& n : nodes_) n.grad = Array<T>();
  }

  // When disabled, ops propagate no gradient requirements and build no
  // backward closures: pure inference.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  void backward(int loss_id) {
    Node& ln = nodes_[size_t(loss_id)];
    require<ShapeError>(ln.val.numel() == 1, "backward expects a scalar node");
    require<StateError>(ln.needs_grad,
                        "backward on a node that does not require grad");
    grad_buf(loss_id).fill(T(1));
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (!n.grad.empty() && n.back) n.back();
    }
  }

  // --- ops ----------------------------------------------------------------

  int conv2d(int x, Conv2d<T>& layer, bool train_params = true) {
    const Array<T>& xv = val(x);
    check_4d(xv, "conv2d");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int OC = layer.out_channels(), K = layer.kernel();
    require<ShapeError>(C == layer.in_channels(), "conv2d ", layer.w.name,
                        ": input has ", C, " channels, layer expects ",
                        layer.in_channels());
    int OH = kern::conv_out_dim(H, K, layer.stride, layer.pad);
    int OW = kern::conv_out_dim(W, K, layer.stride, layer.pad);
    require<ShapeError>(OH > 0 && OW > 0, "conv2d ", layer.w.name,
                        ": input ", shape_str(xv.shape), " too small");
    Array<T> y({N, OC, OH, OW});
    int64_t kdim = static_cast<int64_t>(C) * K * K;
    int64_t ohw = static_cast<int64_t>(OH) * OW;
    ws_.resize(static_cast<size_t>(kdim * ohw));
    for (int n = 0; n < N; ++n) {
      const T* xn = xv.data() + static_cast<int64_t>(n) * C * H * W;
      T* yn = y.data() + static_cast<int64_t>(n) * OC * ohw;
      kern::im2col(xn, C, H, W, K, layer.stride, layer.pad, ws_.data());
      kern::gemm_nn(OC, static_cast<int>(ohw), static_cast<int>(kdim), T(1),
                    layer.w.value.data(), ws_.data(), T(0), yn);
      for (int oc = 0; oc < OC; ++oc) {
        T bias = layer.b.value[oc];
        T* row = yn + oc * ohw;
        for (int64_t i = 0; i < ohw; ++i) row[i] += bias;
      }
    }
    bool train = train_params && grad_enabled_;
    int out = make_node(std::move(y), needs_grad(x) || train);
    if (!nodes_[size_t(out)].needs_grad) return out;
    bool need_dx = needs_grad(x);
    nodes_[size_t(out)].back = [this, x, out, &layer, train, need_dx, N, C, H,
                                W, K, OC, kdim, ohw] {
      const Array<T>& dy = nodes_[size_t(out)].grad;
      const Array<T>& xv2 = val(x);
      if (train) {
        layer.w.ensure_grad();
        layer.b.ensure_grad();
      }
      Array<T>* dx = need_dx ? &grad_buf(x) : nullptr;
      ws_.resize(static_cast<size_t>(kdim * ohw));
      ws2_.resize(static_cast<size_t>(kdim * ohw));
      for (int n = 0; n < N; ++n) {
        const T* dyn = dy.data() + static_cast<int64_t>(n) * OC * ohw;
        if (train) {
          const T* xn = xv2.data() + static_cast<int64_t>(n) * C * H * W;
          kern::im2col(xn, C, H, W, K, layer.stride, layer.pad, ws_.data());
          // dW[OC, kdim] += dY[OC, ohw] * col[kdim, ohw]^T
          kern::gemm_nt(OC, static_cast<int>(kdim), static_cast<int>(ohw),
                        T(1), dyn, ws_.data(), T(1),
                        layer.w.grad.data());
          for (int oc = 0; oc < OC; ++oc) {
            double s = 0.0;
            const T* row = dyn + oc * ohw;
            for (int64_t i = 0; i < ohw; ++i) s += double(row[i]);
            layer.b.grad[oc] += static_cast<T>(s);
          }
        }
        if (need_dx) {
          // dcol[kdim, ohw] = W[OC, kdim]^T * dY[OC, ohw]
          kern::gemm_tn(static_cast<int>(kdim), static_cast<int>(ohw), OC,
                        T(1), layer.w.value.data(), dyn, T(0), ws2_.data());
          kern::col2im_acc(ws2_.data(), C, H, W, K, layer.stride, layer.pad,
                           dx->data() + static_cast<int64_t>(n) * C * H * W);
        }
      }
    };
    return out;
  }

  int linear(int x, Dense<T>& layer, bool train_params = true) {
    const Array<T>& xv = val(x);
    require<ShapeError>(xv.ndim() == 2, "linear expects [N,F], got ",
                        shape_str(xv.shape));
    int N = xv.dim(0), F = xv.dim(1), O = layer.out_features();
    require<ShapeError>(F == layer.in_features(), "linear ", layer.w.name,
                        ": input features ", F, ", layer expects ",
                        layer.in_features());
    Array<T> y({N, O});
    kern::gemm_nt(N, O, F, T(1), xv.data(), layer.w.value.data(), T(0),
                  y.data());
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) y[n * O + o] += layer.b.value[o];
    bool train = train_params && grad_enabled_;
    int out = make_node(std::move(y), needs_grad(x) || train);
    if (!nodes_[size_t(out)].needs_grad) return out;
    bool need_dx = needs_grad(x);
    nodes_[size_t(out)].back = [this, x, out, &layer, train, need_dx, N, F,
                                O] {
      const Array<T>& dy = nodes_[size_t(out)].grad;
      if (train) {
        layer.w.ensure_grad();
        layer.b.ensure_grad();
        // dW[O,F] += dY[N,O]^T X[N,F]
        kern::gemm_tn(O, F, N, T(1), dy.data(), val(x).data(), T(1),
                      layer.w.grad.data());
        for (int o = 0; o < O; ++o) {
          double s = 0.0;
          for (int n = 0; n < N; ++n) s += double(dy[n * O + o]);
          layer.b.grad[o] += static_cast<T>(s);
        }
      }
      if (need_dx) {
        // dX[N,F] += dY[N,O] W[O,F]
        kern::gemm_nn(N, F, O, T(1), dy.data(), layer.w.value.data(), T(1),
                      grad_buf(x).data());
      }
    };
    return out;
  }

  // Instance normalization without learned affine: per-(n, c) standardization.
  int instance_norm(int x, T eps = T(1e-5)) {
    const Array<T>& xv = val(x);
    check_4d(xv, "instance_norm");
    int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    auto stats = std::make_shared<Array<T>>(std::vector<int>{2, N * C});
    T* mean = stats->data();
    T* invstd = stats->data() + N * C;
    kern::instnorm_stats(xv.data(), N, C, HW, eps, mean, invstd);
    Array<T> y(xv.shape);
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
      const T* p = xv.data() + nc * HW;
      T* q = y.data() + nc * HW;
      T mu = mean[nc], is = invstd[nc];
      for (int i = 0; i < HW; ++i) q[i] = (p[i] - mu) * is;
    }
    int out = make_node(std::move(y), needs_grad(x));
    if (!nodes_[size_t(out)].needs_grad) return out;
    nodes_[size_t(out)].back = [this, x, out, stats, N, C, HW] {
      const Array<T>& dy = nodes_[size_t(out)].grad;
      const Array<T>& yv = val(out);
      Array<T>& dx = grad_buf(x);
      const T* invstd = stats->data() + N * C;
      for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        const T* g = dy.data() + nc * HW;
        const T* yh = yv.data() + nc * HW;
        T* d = dx.data() + nc * HW;
        double sg = 0.0, sgy = 0.0;
        for (int i = 0; i < HW; ++i) {
          sg += double(g[i]);
          sgy += double(g[i]) * double(yh[i]);
        }
        T mg = static_cast<T>(sg / HW), mgy = static_cast<T>(sgy / HW);
        T is = invstd[nc];
        for (int i = 0; i < HW; ++i)
          d[i] += is * (g[i] - mg - yh[i] * mgy);
      }
    };
    return out;
  }

  // Adaptive instance normalization: standardize x per (n, c), then apply
  // scale sigma[n, c] and shift mu[n, c] coming from other nodes.
  int adain(int x, int mu, int sigma, T eps = T(1e-5)) {
    const Array<T>& xv = val(x);
    check_4d(xv, "adain");
    int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    const Array<T>& mv = val(mu);
    const Array<T>& sv = val(sigma);
    require<ShapeError>(mv.ndim() == 2 && mv.dim(0) == N && mv.dim(1) == C,
                        "adain mu must be [N,C]=[", N, ",", C, "], got ",
                        shape_str(mv.shape));
    require<ShapeError>(sv.shape == mv.shape, "adain sigma shape ",
                        shape_str(sv.shape), " != mu shape ",
                        shape_str(mv.shape));
    auto stats = std::make_shared<Array<T>>(std::vector<int>{2, N * C});
    T* mean = stats->data();
    T* invstd = stats->data() + N * C;
    kern::instnorm_stats(xv.data(), N, C, HW, eps, mean, invstd);
    Array<T> y(xv.shape);
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
      const T* p = xv.data() + nc * HW;
      T* q = y.data() + nc * HW;
      T m = mean[nc], is = invstd[nc], s = sv[nc], b = mv[nc];
      for (int i = 0; i < HW; ++i) q[i] = s * ((p[i] - m) * is) + b;
    }
    bool ng = needs_grad(x) || needs_grad(mu) || needs_grad(sigma);
    int out = make_node(std::move(y), ng);
    if (!nodes_[size_t(out)].needs_grad) return out;
    nodes_[size_t(out)].back = [this, x, mu, sigma, out, stats, N, C, HW] {
      const Array<T>& dy = nodes_[size_t(out)].grad;
      const Array<T>& xv2 = val(x);
      const T* mean = stats->data();
      const T* invstd = stats->data() + N * C;
      const Array<T>& sv = val(sigma);
      bool need_dx = needs_grad(x);
      Array<T>* dmu = needs_grad(mu) ? &grad_buf(mu) : nullptr;
      Array<T>* dsg = needs_grad(sigma) ? &grad_buf(sigma) : nullptr;
      Array<T>* dx = need_dx ? &grad_buf(x) : nullptr;
      for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        const T* g = dy.data() + nc * HW;
        const T* p = xv2.data() + nc * HW;
        T m = mean[nc], is = invstd[nc], s = sv[nc];
        double sg = 0.0, sgx = 0.0;
        for (int i = 0; i < HW; ++i) {
          double xh = double(p[i] - m) * double(is);
          sg += double(g[i]);
          sgx += double(g[i]) * xh;
        }
        if (dmu) (*dmu)[nc] += static_cast<T>(sg);
        if (dsg) (*dsg)[nc] += static_cast<T>(sgx);
        if (need_dx) {
          // d xhat = s * dy; then standard instance-norm input gradient.
          T mdg = static_cast<T>(s * sg / HW);
          T mdgx = static_cast<T>(s * sgx / HW);
          T* d = dx->data() + nc * HW;
          for (int i = 0; i < HW; ++i) {
            T xh = (p[i] - m) * is;
            d[i] += is * (s * g[i] - mdg - xh * mdgx);
          }
        }
      }
    };
    return out;
  }

  int relu(int x) {
    return unary_eltwise(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T y, T) { return y > T(0) ? T(1) : T(0); });
  }

  int leaky_relu(int x, T slope) {
    return unary_eltwise(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T y, T) { return y > T(0) ? T(1) : slope; });
  }

  int tanh_(int x) {
    return unary_eltwise(
        x, [](T v) { return std::tanh(v); },
        [](T y, T) { return T(1) - y * y; });
  }

  // 2x2/2 max pooling; returns the output node and the argmax index map
  // (shape of the output, offsets into each input plane) used later for
  // index-guided unpooling.
  std::pair<int, std::shared_ptr<const Array<int32_t>>> maxpool(int x) {
    const Array<T>& xv = val(x);
    check_4d(xv, "maxpool");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    require<ShapeError>(H % 2 == 0 && W % 2 == 0,
                        "maxpool needs even spatial dims, got ",
                        shape_str(xv.shape));
    Array<T> y({N, C, H / 2, W / 2});
    auto idx = std::make_shared<Array<int32_t>>(y.shape);
    kern::maxpool2x2(xv.data(), N, C, H, W, y.data(), idx->data());
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      std::shared_ptr<const Array<int32_t>> ci = idx;
      nodes_[size_t(out)].back = [this, x, out, ci, N, C, H, W] {
        kern::maxpool2x2_bwd(nodes_[size_t(out)].grad.data(), ci->data(), N, C,
                             H / 2, W / 2, H, W, grad_buf(x).data());
      };
    }
    return {out, idx};
  }

  // Index-guided 2x unpooling (inverse of maxpool at the recorded argmax
  // positions). idx must have the shape of x.
  int unpool(int x, std::shared_ptr<const Array<int32_t>> idx) {
    require<StateError>(idx != nullptr,
                        "unpool requires recorded pooling indices");
    const Array<T>& xv = val(x);
    check_4d(xv, "unpool");
    require<ShapeError>(idx->shape == xv.shape, "unpool indices shape ",
                        shape_str(idx->shape), " != input shape ",
                        shape_str(xv.shape));
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Array<T> y({N, C, 2 * H, 2 * W});
    kern::unpool2x2(xv.data(), idx->data(), N, C, H, W, y.data());
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, x, out, idx, N, C, H, W] {
        kern::unpool2x2_bwd(nodes_[size_t(out)].grad.data(), idx->data(), N, C,
                            H, W, grad_buf(x).data());
      };
    }
    return out;
  }

  int upsample2(int x) {
    const Array<T>& xv = val(x);
    check_4d(xv, "upsample2");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Array<T> y({N, C, 2 * H, 2 * W});
    kern::upsample2_nearest(xv.data(), N, C, H, W, y.data());
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, x, out, N, C, H, W] {
        kern::upsample2_nearest_bwd(nodes_[size_t(out)].grad.data(), N, C, H,
                                    W, grad_buf(x).data());
      };
    }
    return out;
  }

  int avgpool2(int x) {
    const Array<T>& xv = val(x);
    check_4d(xv, "avgpool2");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    require<ShapeError>(H % 2 == 0 && W % 2 == 0,
                        "avgpool2 needs even spatial dims, got ",
                        shape_str(xv.shape));
    Array<T> y({N, C, H / 2, W / 2});
    kern::avgpool2x2(xv.data(), N, C, H, W, y.data());
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, x, out, N, C, H, W] {
        kern::avgpool2x2_bwd(nodes_[size_t(out)].grad.data(), N, C, H / 2,
                             W / 2, grad_buf(x).data());
      };
    }
    return out;
  }

  // Global average pooling [N,C,H,W] -> [N,C].
  int gap(int x) {
    const Array<T>& xv = val(x);
    check_4d(xv, "gap");
    int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Array<T> y({N, C});
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
      const T* p = xv.data() + nc * HW;
      double s = 0.0;
      for (int i = 0; i < HW; ++i) s += double(p[i]);
      y[nc] = static_cast<T>(s / HW);
    }
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, x, out, N, C, HW] {
        const Array<T>& dy = nodes_[size_t(out)].grad;
        Array<T>& dx = grad_buf(x);
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
          T g = dy[nc] / T(HW);
          T* d = dx.data() + nc * HW;
          for (int i = 0; i < HW; ++i) d[i] += g;
        }
      };
    }
    return out;
  }

  int add(int a, int b) {
    const Array<T>& av = val(a);
    const Array<T>& bv = val(b);
    require<ShapeError>(av.shape == bv.shape, "add shape mismatch: ",
                        shape_str(av.shape), " vs ", shape_str(bv.shape));
    Array<T> y(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
    int out = make_node(std::move(y), needs_grad(a) || needs_grad(b));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, a, b, out] {
        const Array<T>& dy = nodes_[size_t(out)].grad;
        if (needs_grad(a)) {
          Array<T>& da = grad_buf(a);
          for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
        }
        if (needs_grad(b)) {
          Array<T>& db = grad_buf(b);
          for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i];
        }
      };
    }
    return out;
  }

  int scale(int a, T k) {
    const Array<T>& av = val(a);
    Array<T> y(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) y[i] = k * av[i];
    int out = make_node(std::move(y), needs_grad(a));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, a, out, k] {
        const Array<T>& dy = nodes_[size_t(out)].grad;
        Array<T>& da = grad_buf(a);
        for (int64_t i = 0; i < dy.numel(); ++i) da[i] += k * dy[i];
      };
    }
    return out;
  }

  // Weighted sum of same-shaped nodes: sum_i w_i * x_i.
  int weighted_sum(std::span<const int> ids, std::span<const T> ws) {
    require<ShapeError>(!ids.empty() && ids.size() == ws.size(),
                        "weighted_sum needs matching non-empty ids/weights");
    const Array<T>& first = val(ids[0]);
    Array<T> y(first.shape);
    bool ng = false;
    for (size_t j = 0; j < ids.size(); ++j) {
      const Array<T>& xv = val(ids[j]);
      require<ShapeError>(xv.shape == first.shape,
                          "weighted_sum shape mismatch");
      for (int64_t i = 0; i < xv.numel(); ++i) y[i] += ws[j] * xv[i];
      ng = ng || needs_grad(ids[j]);
    }
    int out = make_node(std::move(y), ng);
    if (nodes_[size_t(out)].needs_grad) {
      std::vector<int> ids_c(ids.begin(), ids.end());
      std::vector<T> ws_c(ws.begin(), ws.end());
      nodes_[size_t(out)].back = [this, ids_c, ws_c, out] {
        const Array<T>& dy = nodes_[size_t(out)].grad;
        for (size_t j = 0; j < ids_c.size(); ++j) {
          if (!needs_grad(ids_c[j])) continue;
          Array<T>& d = grad_buf(ids_c[j]);
          for (int64_t i = 0; i < dy.numel(); ++i) d[i] += ws_c[j] * dy[i];
        }
      };
    }
    return out;
  }

  // Mean absolute difference over all elements -> scalar.
  int l1_loss(int a, int b) {
    const Array<T>& av = val(a);
    const Array<T>& bv = val(b);
    require<ShapeError>(av.shape == bv.shape, "l1_loss shape mismatch: ",
                        shape_str(av.shape), " vs ", shape_str(bv.shape));
    int64_t n = av.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(double(av[i]) - double(bv[i]));
    Array<T> y({1});
    y[0] = static_cast<T>(s / double(n));
    int out = make_node(std::move(y), needs_grad(a) || needs_grad(b));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, a, b, out, n] {
        T g = nodes_[size_t(out)].grad[0] / T(n);
        const Array<T>& av2 = val(a);
        const Array<T>& bv2 = val(b);
        Array<T>* da = needs_grad(a) ? &grad_buf(a) : nullptr;
        Array<T>* db = needs_grad(b) ? &grad_buf(b) : nullptr;
        for (int64_t i = 0; i < n; ++i) {
          T d = av2[i] - bv2[i];
          T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          if (da) (*da)[i] += g * s;
          if (db) (*db)[i] -= g * s;
        }
      };
    }
    return out;
  }

  // Mean squared deviation from a constant target -> scalar. The least
  // squares building block of the adversarial objective.
  int mse_to(int a, T target) {
    const Array<T>& av = val(a);
    int64_t n = av.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = double(av[i]) - double(target);
      s += d * d;
    }
    Array<T> y({1});
    y[0] = static_cast<T>(s / double(n));
    int out = make_node(std::move(y), needs_grad(a));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, a, out, target, n] {
        T g = nodes_[size_t(out)].grad[0] * T(2) / T(n);
        const Array<T>& av2 = val(a);
        Array<T>& da = grad_buf(a);
        for (int64_t i = 0; i < n; ++i) da[i] += g * (av2[i] - target);
      };
    }
    return out;
  }

  // Mean softmax cross-entropy of logits [N,K] against integer labels.
  int softmax_xent(int logits, std::vector<int> labels) {
    const Array<T>& lv = val(logits);
    require<ShapeError>(lv.ndim() == 2, "softmax_xent expects [N,K], got ",
                        shape_str(lv.shape));
    int N = lv.dim(0), K = lv.dim(1);
    require<ShapeError>(static_cast<int>(labels.size()) == N,
                        "softmax_xent: ", labels.size(), " labels for ", N,
                        " rows");
    auto probs = std::make_shared<Array<T>>(lv.shape);
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* row = lv.data() + int64_t(n) * K;
      T* prow = probs->data() + int64_t(n) * K;
      double mx = double(row[0]);
      for (int k2 = 1; k2 < K; ++k2) mx = std::max(mx, double(row[k2]));
      double z = 0.0;
      for (int k2 = 0; k2 < K; ++k2) z += std::exp(double(row[k2]) - mx);
      int lab = labels[size_t(n)];
      require<ShapeError>(lab >= 0 && lab < K, "label ", lab,
                          " out of range for ", K, " classes");
      for (int k2 = 0; k2 < K; ++k2)
        prow[k2] = static_cast<T>(std::exp(double(row[k2]) - mx) / z);
      loss -= std::log(std::max(double(prow[lab]), 1e-300));
    }
    Array<T> y({1});
    y[0] = static_cast<T>(loss / N);
    int out = make_node(std::move(y), needs_grad(logits));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, logits, out, probs,
                                  labels = std::move(labels), N, K] {
        T g = nodes_[size_t(out)].grad[0] / T(N);
        Array<T>& dl = grad_buf(logits);
        for (int n = 0; n < N; ++n) {
          const T* prow = probs->data() + int64_t(n) * K;
          T* drow = dl.data() + int64_t(n) * K;
          for (int k2 = 0; k2 < K; ++k2) {
            T delta = (k2 == labels[size_t(n)]) ? T(1) : T(0);
            drow[k2] += g * (prow[k2] - delta);
          }
        }
      };
    }
    return out;
  }

  // Reinterprets a node's elements under a new shape (same element count).
  int reshape(int x, std::vector<int> shape) {
    const Array<T>& xv = val(x);
    require<ShapeError>(Array<T>::count(shape) == xv.numel(), "reshape to ",
                        shape_str(shape), " from ", shape_str(xv.shape));
    Array<T> y = xv;
    y.shape = std::move(shape);
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, x, out] {
        const Array<T>& dy = nodes_[size_t(out)].grad;
        Array<T>& dx = grad_buf(x);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
      };
    }
    return out;
  }

  // Inner product with a constant projection vector -> scalar.
  int inner(int a, Array<T> w) {
    const Array<T>& av = val(a);
    require<ShapeError>(av.shape == w.shape, "inner shape mismatch: ",
                        shape_str(av.shape), " vs ", shape_str(w.shape));
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += double(av[i]) * double(w[i]);
    Array<T> y({1});
    y[0] = static_cast<T>(s);
    int out = make_node(std::move(y), needs_grad(a));
    if (nodes_[size_t(out)].needs_grad) {
      auto wp = std::make_shared<Array<T>>(std::move(w));
      nodes_[size_t(out)].back = [this, a, out, wp] {
        T g = nodes_[size_t(out)].grad[0];
        Array<T>& da = grad_buf(a);
        for (int64_t i = 0; i < da.numel(); ++i) da[i] += g * (*wp)[i];
      };
    }
    return out;
  }

  // Copies a node's value into a fresh constant leaf: gradient flow stops.
  int detach(int x) { return leaf(val(x), false); }

 private:
  struct Node {
    Array<T> val;
    Array<T> grad;
    std::function<void()> back;
    bool needs_grad = false;
  };

  int make_node(Array<T> v, bool needs_grad) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Array<T>& grad_buf(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.empty()) n.grad = Array<T>(n.val.shape);
    return n.grad;
  }

  template <typename F, typename G>
  int unary_eltwise(int x, F fwd, G dydx_from_out_and_in) {
    const Array<T>& xv = val(x);
    Array<T> y(xv.shape);
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = fwd(xv[i]);
    int out = make_node(std::move(y), needs_grad(x));
    if (nodes_[size_t(out)].needs_grad) {
      nodes_[size_t(out)].back = [this, x, out, dydx_from_out_and_in] {
        const Array<T>& dy = nodes_[size_t(out)].grad;
        const Array<T>& yv = val(out);
        const Array<T>& xv2 = val(x);
        Array<T>& dx = grad_buf(x);
        for (int64_t i = 0; i < dy.numel(); ++i)
          dx[i] += dy[i] * dydx_from_out_and_in(yv[i], xv2[i]);
      };
    }
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<T> ws_;   // im2col workspace
  std::vector<T> ws2_;  // dcol workspace
  bool grad_enabled_ = true;
};

}  // namespace udit::ag
