#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "udit/rng.hpp"
#include "udit/tape.hpp"

using gradcheck::projection_like;
using gradcheck::random_array;
using udit::Array;
using udit::Philox;
using udit::ag::Conv2d;
using udit::ag::Dense;
using udit::ag::Param;
using udit::ag::Tape;

namespace {

// Keeps every element at least `margin` away from the breakpoints of
// piecewise ops (relu/lrelu kinks, l1 sign flips) so finite differences
// never step across one.
void push_off_kinks(Array<double>& a, double margin = 1e-2) {
  for (auto& v : a.v) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
}

// Naive direct convolution used as the forward oracle for the GEMM path.
Array<double> conv_oracle(const Array<double>& x, const Array<double>& w,
                          const Array<double>& b, int stride, int pad) {
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int OC = w.dim(0), K = w.dim(2);
  int OH = (H + 2 * pad - K) / stride + 1;
  int OW = (W + 2 * pad - K) / stride + 1;
  Array<double> y({N, OC, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = b[oc];
          for (int c = 0; c < C; ++c)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                int ih = oh * stride - pad + kh;
                int iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((int64_t(n) * C + c) * H + ih) * W + iw] *
                       w[((int64_t(oc) * C + c) * K + kh) * K + kw];
              }
          y[((int64_t(n) * OC + oc) * OH + oh) * OW + ow] = acc;
        }
  return y;
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("conv2d forward matches the direct-sum oracle") {
  Philox rng(11, 0);
  struct Case {
    int C, OC, H, W, K, stride, pad;
  };
  for (Case cs : {Case{3, 4, 8, 8, 3, 1, 1}, Case{2, 5, 9, 7, 4, 2, 1},
                  Case{1, 2, 8, 8, 7, 1, 3}, Case{4, 3, 6, 6, 1, 1, 0}}) {
    Conv2d<double> conv("c", cs.C, cs.OC, cs.K, cs.stride, cs.pad);
    conv.init(rng, 0.5);
    for (auto& v : conv.b.value.v) v = rng.normal();
    Array<double> x = random_array({2, cs.C, cs.H, cs.W}, rng);
    Tape<double> tape;
    int xid = tape.leaf(x);
    int y = tape.conv2d(xid, conv, false);
    Array<double> want = conv_oracle(x, conv.w.value, conv.b.value, cs.stride,
                                     cs.pad);
    REQUIRE(tape.val(y).shape == want.shape);
    for (int64_t i = 0; i < want.numel(); ++i)
      CHECK(tape.val(y)[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d gradients (stride 1 and 2, several kernels)") {
  Philox rng(12, 0);
  struct Case {
    int K, stride, pad;
  };
  for (Case cs : {Case{3, 1, 1}, Case{4, 2, 1}, Case{7, 1, 3}, Case{1, 1, 0}}) {
    Conv2d<double> conv("c", 2, 3, cs.K, cs.stride, cs.pad);
    conv.init(rng, 0.3);
    Array<double> x = random_array({2, 2, 8, 8}, rng);
    auto rep = gradcheck::check(
        {x}, {true}, {&conv.w, &conv.b},
        [&](Tape<double>& t, const std::vector<int>& in) {
          int y = t.conv2d(in[0], conv, true);
          return t.inner(y, projection_like(t.val(y), 77));
        });
    CHECK(rep.checked > 0);
  }
}

TEST_CASE("conv2d with frozen parameters leaves their grads untouched") {
  Philox rng(13, 0);
  Conv2d<double> conv("c", 2, 2, 3, 1, 1);
  conv.init(rng, 0.3);
  Array<double> x = random_array({1, 2, 6, 6}, rng);
  Tape<double> tape;
  int xid = tape.leaf(x, true);
  int y = tape.conv2d(xid, conv, /*train_params=*/false);
  int loss = tape.inner(y, projection_like(tape.val(y), 3));
  tape.backward(loss);
  CHECK(conv.w.grad.empty());
  CHECK(conv.b.grad.empty());
  // Input gradient still flows.
  double asum = 0.0;
  for (double v : tape.grad(xid).v) asum += std::abs(v);
  CHECK(asum > 0.0);
}

TEST_CASE("linear gradients") {
  Philox rng(14, 0);
  Dense<double> fc("fc", 6, 4);
  fc.init(rng, 0.4);
  Array<double> x = random_array({3, 6}, rng);
  gradcheck::check({x}, {true}, {&fc.w, &fc.b},
                   [&](Tape<double>& t, const std::vector<int>& in) {
                     int y = t.linear(in[0], fc, true);
                     return t.inner(y, projection_like(t.val(y), 5));
                   });
}

TEST_CASE("instance norm standardizes per channel and sample") {
  Philox rng(15, 0);
  Array<double> x = random_array({2, 3, 4, 5}, rng, 2.0);
  for (auto& v : x.v) v += 1.5;
  Tape<double> tape;
  int y = tape.instance_norm(tape.leaf(x));
  int HW = 20;
  for (int nc = 0; nc < 6; ++nc) {
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < HW; ++i) {
      double v = tape.val(y)[nc * HW + i];
      s += v;
      s2 += v * v;
    }
    CHECK(std::abs(s / HW) < 1e-10);
    CHECK(s2 / HW == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks var
  }
}

TEST_CASE("instance norm gradients") {
  Philox rng(16, 0);
  Array<double> x = random_array({2, 2, 3, 4}, rng);
  gradcheck::check({x}, {true}, {},
                   [&](Tape<double>& t, const std::vector<int>& in) {
                     int y = t.instance_norm(in[0]);
                     return t.inner(y, projection_like(t.val(y), 9));
                   });
}

TEST_CASE("adain applies style statistics exactly") {
  Philox rng(17, 0);
  Array<double> x = random_array({2, 3, 4, 4}, rng, 3.0);
  Array<double> mu = random_array({2, 3}, rng);
  Array<double> sg = random_array({2, 3}, rng);
  for (auto& v : sg.v) v = 1.0 + std::abs(v);
  Tape<double> tape;
  int y = tape.adain(tape.leaf(x), tape.leaf(mu), tape.leaf(sg));
  int HW = 16;
  for (int nc = 0; nc < 6; ++nc) {
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < HW; ++i) {
      double v = tape.val(y)[nc * HW + i];
      s += v;
      s2 += v * v;
    }
    double mean = s / HW;
    double sd = std::sqrt(s2 / HW - mean * mean);
    CHECK(mean == doctest::Approx(mu[nc]).epsilon(1e-9));
    CHECK(sd == doctest::Approx(std::abs(sg[nc])).epsilon(1e-3));
  }
}

TEST_CASE("adain gradients flow to input, mean, and scale") {
  Philox rng(18, 0);
  Array<double> x = random_array({2, 2, 3, 3}, rng);
  Array<double> mu = random_array({2, 2}, rng);
  Array<double> sg = random_array({2, 2}, rng);
  gradcheck::check({x, mu, sg}, {true, true, true}, {},
                   [&](Tape<double>& t, const std::vector<int>& in) {
                     int y = t.adain(in[0], in[1], in[2]);
                     return t.inner(y, projection_like(t.val(y), 21));
                   });
}

TEST_CASE("activation gradients") {
  Philox rng(19, 0);
  Array<double> x = random_array({2, 3, 4, 4}, rng);
  push_off_kinks(x);
  for (int which = 0; which < 3; ++which) {
    gradcheck::check({x}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       int y = which == 0   ? t.relu(in[0])
                               : which == 1 ? t.leaky_relu(in[0], 0.2)
                                            : t.tanh_(in[0]);
                       return t.inner(y, projection_like(t.val(y), 31));
                     });
  }
}

TEST_CASE("maxpool forward picks plane-local argmax offsets") {
  Array<double> x({1, 1, 4, 4});
  // Plane laid out so each 2x2 window has a unique max in a known corner.
  double vals[16] = {1, 2, 0, 0, 3, 1, 9, 0, 5, 0, 1, 1, 0, 4, 1, 7};
  for (int i = 0; i < 16; ++i) x[i] = vals[i];
  Tape<double> tape;
  auto [y, idx] = tape.maxpool(tape.leaf(x));
  CHECK(tape.val(y)[0] == 3.0);
  CHECK(tape.val(y)[1] == 9.0);
  CHECK(tape.val(y)[2] == 5.0);
  CHECK(tape.val(y)[3] == 7.0);
  CHECK((*idx)[0] == 4);   // row 1, col 0
  CHECK((*idx)[1] == 6);   // row 1, col 2
  CHECK((*idx)[2] == 8);   // row 2, col 0
  CHECK((*idx)[3] == 15);  // row 3, col 3
}

TEST_CASE("pool / unpool / resample gradients") {
  Philox rng(20, 0);
  Array<double> x = random_array({2, 2, 4, 4}, rng);
  SUBCASE("maxpool") {
    gradcheck::check({x}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       auto [y, idx] = t.maxpool(in[0]);
                       return t.inner(y, projection_like(t.val(y), 41));
                     });
  }
  SUBCASE("unpool after pool") {
    gradcheck::check({x}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       auto [y, idx] = t.maxpool(in[0]);
                       int up = t.unpool(y, idx);
                       return t.inner(up, projection_like(t.val(up), 43));
                     });
  }
  SUBCASE("nearest upsample") {
    gradcheck::check({x}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       int y = t.upsample2(in[0]);
                       return t.inner(y, projection_like(t.val(y), 47));
                     });
  }
  SUBCASE("average pool") {
    gradcheck::check({x}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       int y = t.avgpool2(in[0]);
                       return t.inner(y, projection_like(t.val(y), 53));
                     });
  }
  SUBCASE("global average pool") {
    gradcheck::check({x}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       int y = t.gap(in[0]);
                       return t.inner(y, projection_like(t.val(y), 59));
                     });
  }
}

TEST_CASE("unpool scatters into recorded argmax slots, zeros elsewhere") {
  Philox rng(21, 0);
  Array<double> x = random_array({2, 3, 6, 6}, rng);
  Tape<double> tape;
  int xid = tape.leaf(x);
  auto [pooled, idx] = tape.maxpool(xid);
  int up = tape.unpool(pooled, idx);
  const auto& upv = tape.val(up);
  REQUIRE(upv.shape == x.shape);
  // Scalar scatter oracle.
  Array<double> want(x.shape);
  int OH = 3, OW = 3, H = 6, W = 6;
  for (int nc = 0; nc < 6; ++nc)
    for (int o = 0; o < OH * OW; ++o)
      want[nc * H * W + (*idx)[nc * OH * OW + o]] =
          tape.val(pooled)[nc * OH * OW + o];
  for (int64_t i = 0; i < want.numel(); ++i) CHECK(upv[i] == want[i]);
}

TEST_CASE("unpool validates index shape and presence") {
  Philox rng(22, 0);
  Array<double> x = random_array({1, 1, 4, 4}, rng);
  Tape<double> tape;
  int xid = tape.leaf(x);
  CHECK_THROWS_AS(tape.unpool(xid, nullptr), udit::StateError);
  auto bad = std::make_shared<udit::Array<int32_t>>(std::vector<int>{1, 1, 2, 2});
  CHECK_THROWS_AS(tape.unpool(xid, bad), udit::ShapeError);
}

TEST_CASE("arithmetic and reduction gradients") {
  Philox rng(23, 0);
  Array<double> a = random_array({3, 4}, rng);
  Array<double> b = random_array({3, 4}, rng);
  push_off_kinks(a);  // keep |a - b| bounded away from 0 for the l1 case
  for (auto& v : b.v) v *= 0.3;
  SUBCASE("add & scale & weighted_sum") {
    gradcheck::check({a, b}, {true, true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       int s = t.add(in[0], t.scale(in[1], -2.5));
                       std::vector<int> ids = {s, in[0]};
                       std::vector<double> ws = {0.7, 1.3};
                       int w = t.weighted_sum(ids, ws);
                       return t.inner(w, projection_like(t.val(w), 61));
                     });
  }
  SUBCASE("l1") {
    gradcheck::check({a, b}, {true, true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       return t.l1_loss(in[0], in[1]);
                     });
  }
  SUBCASE("mse to constant") {
    gradcheck::check({a}, {true}, {},
                     [&](Tape<double>& t, const std::vector<int>& in) {
                       return t.mse_to(in[0], 1.0);
                     });
  }
}

TEST_CASE("l1 loss forward is the mean absolute difference") {
  Array<double> a({2, 2}, {1.0, -2.0, 0.5, 3.0});
  Array<double> b({2, 2}, {0.0, 1.0, 0.5, -1.0});
  Tape<double> t;
  int loss = t.l1_loss(t.leaf(a), t.leaf(b));
  CHECK(t.val(loss)[0] == doctest::Approx((1.0 + 3.0 + 0.0 + 4.0) / 4.0));
}

TEST_CASE("softmax cross-entropy gradients and forward value") {
  Philox rng(24, 0);
  Array<double> logits = random_array({5, 3}, rng);
  std::vector<int> labels = {0, 2, 1, 1, 0};
  Tape<double> t0;
  int loss0 = t0.softmax_xent(t0.leaf(logits), labels);
  double want = 0.0;
  for (int n = 0; n < 5; ++n) {
    double mx = std::max({logits[n * 3], logits[n * 3 + 1], logits[n * 3 + 2]});
    double z = 0.0;
    for (int k = 0; k < 3; ++k) z += std::exp(logits[n * 3 + k] - mx);
    want -= logits[n * 3 + labels[size_t(n)]] - mx - std::log(z);
  }
  CHECK(t0.val(loss0)[0] == doctest::Approx(want / 5).epsilon(1e-12));
  gradcheck::check({logits}, {true}, {},
                   [&](Tape<double>& t, const std::vector<int>& in) {
                     return t.softmax_xent(in[0], labels);
                   });
}

TEST_CASE("detach blocks gradient flow") {
  Philox rng(25, 0);
  Array<double> x = random_array({2, 3}, rng);
  Tape<double> t;
  int xid = t.leaf(x, true);
  int d = t.detach(t.scale(xid, 2.0));
  CHECK_FALSE(t.needs_grad(d));
  int loss = t.mse_to(d, 0.0);
  CHECK_FALSE(t.needs_grad(loss));
  CHECK_THROWS_AS(t.backward(loss), udit::StateError);
}

TEST_CASE("second backward after grad clearing matches a fresh tape") {
  // Mirrors the adversarial update pattern: one backward pass for the critic
  // loss, gradients cleared, then another pass through partly shared nodes.
  Philox rng(26, 0);
  Conv2d<double> conv("c", 1, 2, 3, 1, 1);
  conv.init(rng, 0.5);
  Array<double> x = random_array({1, 1, 4, 4}, rng);

  Tape<double> tape;
  int xid = tape.leaf(x, true);
  int y1 = tape.conv2d(xid, conv, true);
  conv.w.ensure_grad();
  conv.b.ensure_grad();
  int loss1 = tape.inner(y1, projection_like(tape.val(y1), 81));
  tape.backward(loss1);
  conv.w.zero_grad();
  conv.b.zero_grad();
  tape.clear_node_grads();
  // Second phase reuses y1.
  int y2 = tape.tanh_(y1);
  int loss2 = tape.inner(y2, projection_like(tape.val(y2), 82));
  tape.backward(loss2);
  Array<double> got_w = conv.w.grad, got_b = conv.b.grad;

  // Reference: loss2 alone on a fresh tape with fresh grads.
  conv.w.zero_grad();
  conv.b.zero_grad();
  Tape<double> ref;
  int rx = ref.leaf(x, true);
  int ry2 = ref.tanh_(ref.conv2d(rx, conv, true));
  int rloss = ref.inner(ry2, projection_like(ref.val(ry2), 82));
  ref.backward(rloss);
  for (int64_t i = 0; i < got_w.numel(); ++i)
    CHECK(got_w[i] == doctest::Approx(conv.w.grad[i]).epsilon(1e-12));
  for (int64_t i = 0; i < got_b.numel(); ++i)
    CHECK(got_b[i] == doctest::Approx(conv.b.grad[i]).epsilon(1e-12));
}

TEST_CASE("reshape round-trips values and gradients") {
  Philox rng(28, 0);
  Array<double> x = random_array({2, 3, 2, 2}, rng);
  gradcheck::check({x}, {true}, {},
                   [&](Tape<double>& t, const std::vector<int>& in) {
                     int r = t.reshape(in[0], {2, 12});
                     return t.inner(r, projection_like(t.val(r), 91));
                   });
  Tape<double> t;
  int r = t.reshape(t.leaf(x), {2, 12});
  CHECK(t.val(r).shape == std::vector<int>{2, 12});
  CHECK_THROWS_AS(t.reshape(t.leaf(x), {5, 5}), udit::ShapeError);
}

TEST_CASE("inference mode builds no gradient graph") {
  Philox rng(29, 0);
  Conv2d<double> conv("c", 1, 2, 3, 1, 1);
  conv.init(rng, 0.5);
  Array<double> x = random_array({1, 1, 4, 4}, rng);
  Tape<double> t;
  t.set_grad_enabled(false);
  int y = t.conv2d(t.leaf(x, true), conv, true);
  CHECK_FALSE(t.needs_grad(y));
}

TEST_CASE("composite chain gradient check (conv-in-relu-pool-fc)") {
  Philox rng(27, 0);
  Conv2d<double> conv("c", 2, 3, 3, 1, 1);
  conv.init(rng, 0.4);
  Dense<double> fc("fc", 3 * 2 * 2, 4);
  fc.init(rng, 0.4);
  Array<double> x = random_array({2, 2, 4, 4}, rng);
  gradcheck::check(
      {x}, {true}, {&conv.w, &conv.b, &fc.w, &fc.b},
      [&](Tape<double>& t, const std::vector<int>& in) {
        int h = t.relu(t.instance_norm(t.conv2d(in[0], conv, true)));
        auto [p, idx] = t.maxpool(h);
        const auto& pv = t.val(p);
        int y = t.linear(
            t.reshape(p, {pv.dim(0), pv.dim(1) * pv.dim(2) * pv.dim(3)}), fc,
            true);
        return t.inner(y, projection_like(t.val(y), 71));
      });
}

}  // TEST_SUITE
