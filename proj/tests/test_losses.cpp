#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "udit/losses.hpp"
#include "udit/nets.hpp"

using gradcheck::random_array;
using udit::Array;
using udit::Philox;
using udit::ag::Tape;
using namespace udit::losses;
using udit::nets::ContentVar;
using udit::nets::NetHyper;
using udit::nets::TranslationModel;

namespace {

// Smallest well-conditioned translator that still exercises every op: 16x16
// inputs (so content maps keep 2x2 spatial extent after three poolings and
// instance norm never degenerates to a single element), 1x1 stem and residual
// kernels, two discriminator scales. Each loss-term gradient check below
// touches well under 500 parameters.
NetHyper toy_hyper() {
  NetHyper h;
  h.image_size = 16;
  h.base_channels = 1;
  h.style_dim = 1;
  h.n_res = 1;
  h.stem_kernel = 1;
  h.res_kernel = 1;
  h.style_down_kernel = 3;
  h.n_scales = 2;
  h.d_base_channels = 1;
  h.d_layers = 2;
  return h;
}

template <typename Net>
std::vector<udit::ag::Param<double>*> params_of(Net& net) {
  std::vector<udit::ag::Param<double>*> out;
  net.collect(out);
  return out;
}

// Scalar-loop oracle for one least-squares score term.
double mse_oracle(const Array<double>& a, double target) {
  double s = 0;
  for (double v : a.v) s += (v - target) * (v - target);
  return s / double(a.numel());
}

double l1_oracle(const Array<double>& a, const Array<double>& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / double(a.numel());
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("discriminator loss forced values") {
  Tape<double> t;
  // Three scales of different map sizes, as in the real pyramid.
  std::vector<int> fake, real;
  for (int s : {4, 2, 1}) {
    Array<double> f({2, 1, s, s}), r({2, 1, s, s});
    SUBCASE("fake 0 / real 1 scores to zero") {
      // handled below by fills
    }
    fake.push_back(t.leaf(f));
    real.push_back(t.leaf(r));
  }
  // fake = 0, real = 1 -> both terms vanish.
  {
    Tape<double> t0;
    std::vector<int> f0, r0;
    for (int s : {4, 2, 1}) {
      Array<double> f({2, 1, s, s}), r({2, 1, s, s});
      r.fill(1.0);
      f0.push_back(t0.leaf(f));
      r0.push_back(t0.leaf(r));
    }
    CHECK(t0.val(adversarial_loss_d(t0, f0, r0))[0] == doctest::Approx(0.0));
  }
  // fake = 1, real = 0 -> 0.5 + 1 per scale.
  {
    Tape<double> t1;
    std::vector<int> f1, r1;
    for (int s : {4, 2, 1}) {
      Array<double> f({2, 1, s, s}), r({2, 1, s, s});
      f.fill(1.0);
      f1.push_back(t1.leaf(f));
      r1.push_back(t1.leaf(r));
    }
    CHECK(t1.val(adversarial_loss_d(t1, f1, r1))[0] ==
          doctest::Approx(1.5).epsilon(1e-12));
  }
}

TEST_CASE("generator adversarial loss forced values") {
  for (double fill : {1.0, 0.0}) {
    Tape<double> t;
    std::vector<int> fake;
    for (int s : {4, 2}) {
      Array<double> f({3, 1, s, s});
      f.fill(fill);
      fake.push_back(t.leaf(f));
    }
    double want = fill == 1.0 ? 0.0 : 1.0;
    CHECK(t.val(adversarial_loss_g(t, fake))[0] ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("adversarial losses match scalar-loop oracles on random scores") {
  Philox rng(404, 0);
  Tape<double> t;
  std::vector<int> fake, real;
  std::vector<Array<double>> fa, ra;
  for (int s : {4, 2, 1}) {
    fa.push_back(random_array({2, 1, s, s}, rng));
    ra.push_back(random_array({2, 1, s, s}, rng));
    fake.push_back(t.leaf(fa.back()));
    real.push_back(t.leaf(ra.back()));
  }
  double d_want = 0, g_want = 0;
  for (size_t s = 0; s < 3; ++s) {
    d_want += 0.5 * mse_oracle(fa[s], 0.0) + mse_oracle(ra[s], 1.0);
    g_want += mse_oracle(fa[s], 1.0);
  }
  d_want /= 3.0;
  g_want /= 3.0;
  CHECK(std::abs(t.val(adversarial_loss_d(t, fake, real))[0] - d_want) <
        1e-6 * std::max(1.0, std::abs(d_want)));
  CHECK(std::abs(t.val(adversarial_loss_g(t, fake))[0] - g_want) <
        1e-6 * std::max(1.0, std::abs(g_want)));
}

TEST_CASE("empty score lists are rejected") {
  Tape<double> t;
  std::vector<int> none;
  CHECK_THROWS_AS(adversarial_loss_d(t, none, none), udit::ShapeError);
  CHECK_THROWS_AS(adversarial_loss_g(t, none), udit::ShapeError);
}

TEST_CASE("reconstruction losses: exact cases and random oracle") {
  Philox rng(405, 0);
  Tape<double> t;
  Array<double> x = random_array({2, 3, 4, 4}, rng);
  int xid = t.leaf(x);
  CHECK(t.val(image_recon_loss(t, xid, t.leaf(x)))[0] == 0.0);

  Array<double> zeros({2, 3, 4, 4}), halves({2, 3, 4, 4});
  halves.fill(0.5);
  CHECK(t.val(image_recon_loss(t, t.leaf(zeros), t.leaf(halves)))[0] ==
        doctest::Approx(0.5).epsilon(1e-12));

  Array<double> ones({5}), twos({5});
  ones.fill(1.0);
  twos.fill(2.0);
  CHECK(t.val(content_recon_loss(t, t.leaf(ones), t.leaf(twos)))[0] ==
        doctest::Approx(1.0).epsilon(1e-12));

  Array<double> a = random_array({3, 5}, rng), b = random_array({3, 5}, rng);
  CHECK(std::abs(t.val(style_recon_loss(t, t.leaf(a), t.leaf(b)))[0] -
                 l1_oracle(a, b)) < 1e-12);
}

TEST_CASE("semantic constraint loss: cases, oracle, and shape error") {
  Philox rng(406, 0);
  Tape<double> t;
  Array<double> u = random_array({1, 4, 2, 2}, rng);
  CHECK(t.val(semantic_constraint_loss(t, t.leaf(u), t.leaf(u)))[0] == 0.0);

  Array<double> z({1, 1, 2, 2}), o({1, 1, 2, 2});
  o.fill(1.0);
  CHECK(t.val(semantic_constraint_loss(t, t.leaf(z), t.leaf(o)))[0] ==
        doctest::Approx(1.0).epsilon(1e-12));

  Array<double> u2 = random_array({1, 4, 2, 2}, rng);
  CHECK(std::abs(t.val(semantic_constraint_loss(t, t.leaf(u), t.leaf(u2)))[0] -
                 l1_oracle(u, u2)) < 1e-6);

  Array<double> wrong({1, 4, 2, 1});
  CHECK_THROWS_AS(semantic_constraint_loss(t, t.leaf(u), t.leaf(wrong)),
                  udit::ShapeError);
}

TEST_CASE("weighted total arithmetic") {
  LossBreakdown b;
  b.gan_A = b.gan_B = 1;
  b.recon_x_A = b.recon_x_B = 1;
  b.recon_c_A = b.recon_c_B = 1;
  b.recon_s_A = b.recon_s_B = 1;
  b.sem_A = b.sem_B = 1;

  SUBCASE("default weights give 28 for unit components") {
    LossWeights w;  // (10, 1, 1, 1)
    CHECK(finalize(b, w).total == doctest::Approx(28.0).epsilon(1e-15));
  }
  SUBCASE("all lambda zero collapses to the adversarial sum") {
    LossWeights w{0, 0, 0, 0};
    CHECK(finalize(b, w).total == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("lambda_u = 0 removes the semantic terms") {
    LossWeights w;
    w.lambda_u = 0;
    LossWeights wu;
    wu.lambda_u = 3.5;
    double base = finalize(b, w).total;
    CHECK(base == doctest::Approx(26.0).epsilon(1e-15));
    // Linearity: d total / d lambda_u == sem_A + sem_B.
    double diff = finalize(b, wu).total - base;
    CHECK(diff ==
          doctest::Approx(3.5 * (b.sem_A + b.sem_B)).epsilon(1e-12));
  }
  SUBCASE("negative weights are rejected") {
    LossWeights w;
    w.lambda_c = -0.1;
    CHECK_THROWS_AS(finalize(b, w), udit::ConfigError);
  }
}

TEST_CASE("lambda_u linearity on randomized breakdowns") {
  Philox rng(407, 0);
  for (int trial = 0; trial < 20; ++trial) {
    LossBreakdown b;
    b.gan_A = rng.uniform(0, 2);
    b.gan_B = rng.uniform(0, 2);
    b.recon_x_A = rng.uniform(0, 1);
    b.recon_x_B = rng.uniform(0, 1);
    b.recon_c_A = rng.uniform(0, 1);
    b.recon_c_B = rng.uniform(0, 1);
    b.recon_s_A = rng.uniform(0, 1);
    b.recon_s_B = rng.uniform(0, 1);
    b.sem_A = rng.uniform(0, 1);
    b.sem_B = rng.uniform(0, 1);
    LossWeights w0;
    w0.lambda_u = 0;
    LossWeights w1;
    w1.lambda_u = rng.uniform(0.5, 4.0);
    double diff = finalize(b, w1).total - finalize(b, w0).total;
    double want = w1.lambda_u * (b.sem_A + b.sem_B);
    CHECK(std::abs(diff - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

// ---------------------------------------------------------------------------
// End-to-end gradient checks of each objective term through a tiny
// translator (16x16 inputs, double precision, central finite differences).
// ---------------------------------------------------------------------------

TEST_CASE("image reconstruction term: gradients through encoder and decoder") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 501);
  Philox rng(501, 1);
  Array<double> x = random_array({1, 3, 16, 16}, rng, 0.5);
  auto params = params_of(m.enc_c[0]);
  for (auto* p : params_of(m.enc_s[0])) params.push_back(p);
  for (auto* p : params_of(m.dec[0])) params.push_back(p);
  gradcheck::check(
      {x}, {true}, params, [&](Tape<double>& t, const std::vector<int>& in) {
        ContentVar c = m.enc_c[0].forward(t, in[0], true);
        int s = m.enc_s[0].forward(t, in[0], true);
        int rec = m.dec[0].forward(t, c, s, true);
        return image_recon_loss(t, in[0], rec);
      });
}

TEST_CASE("content reconstruction term: gradients through the re-encoder") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 502);
  Philox rng(502, 1);
  Array<double> x = random_array({1, 3, 16, 16}, rng, 0.5);
  Array<double> style = random_array({1, 1}, rng);
  auto params = params_of(m.enc_c[0]);
  for (auto* p : params_of(m.dec[1])) params.push_back(p);
  for (auto* p : params_of(m.enc_c[1])) params.push_back(p);
  gradcheck::check(
      {x, style}, {true, false}, params,
      [&](Tape<double>& t, const std::vector<int>& in) {
        ContentVar c = m.enc_c[0].forward(t, in[0], true);
        int fake = m.dec[1].forward(t, c, in[1], true);
        ContentVar c_rec = m.enc_c[1].forward(t, fake, true);
        return content_recon_loss(t, c.features, c_rec.features);
      });
}

TEST_CASE("style reconstruction term: gradients through the re-encoder") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 503);
  Philox rng(503, 1);
  Array<double> x = random_array({1, 3, 16, 16}, rng, 0.5);
  Array<double> style = random_array({1, 1}, rng);
  auto params = params_of(m.enc_c[0]);
  for (auto* p : params_of(m.dec[1])) params.push_back(p);
  for (auto* p : params_of(m.enc_s[1])) params.push_back(p);
  gradcheck::check(
      {x, style}, {true, true}, params,
      [&](Tape<double>& t, const std::vector<int>& in) {
        ContentVar c = m.enc_c[0].forward(t, in[0], true);
        int fake = m.dec[1].forward(t, c, in[1], true);
        int s_rec = m.enc_s[1].forward(t, fake, true);
        return style_recon_loss(t, in[1], s_rec);
      });
}

TEST_CASE("generator adversarial term: gradients reach the generator only") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 504);
  Philox rng(504, 1);
  Array<double> x = random_array({1, 3, 16, 16}, rng, 0.5);
  Array<double> style = random_array({1, 1}, rng);
  auto params = params_of(m.enc_c[0]);
  for (auto* p : params_of(m.dec[1])) params.push_back(p);
  gradcheck::check(
      {x, style}, {true, true}, params,
      [&](Tape<double>& t, const std::vector<int>& in) {
        ContentVar c = m.enc_c[0].forward(t, in[0], true);
        int fake = m.dec[1].forward(t, c, in[1], true);
        auto scores = m.dis[1].forward(t, fake, /*train=*/false);
        return adversarial_loss_g(t, scores);
      });
  // The frozen critic accumulated nothing.
  for (auto* p : params_of(m.dis[1])) CHECK(p->grad.empty());
}

TEST_CASE("discriminator adversarial term: gradients reach the critic only") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 505);
  Philox rng(505, 1);
  Array<double> x_real = random_array({1, 3, 16, 16}, rng, 0.5);
  Array<double> x_fake = random_array({1, 3, 16, 16}, rng, 0.5);
  auto params = params_of(m.dis[1]);
  gradcheck::check({x_fake, x_real}, {false, false}, params,
                   [&](Tape<double>& t, const std::vector<int>& in) {
                     auto fs = m.dis[1].forward(t, in[0], true);
                     auto rs = m.dis[1].forward(t, in[1], true);
                     return adversarial_loss_d(t, fs, rs);
                   });
}

TEST_CASE("semantic constraint term: gradients flow through translation path") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 506);
  Philox rng(506, 1);
  // Frozen random feature extractor standing in for the semantic network.
  udit::ag::Conv2d<double> h1("h.conv1", 3, 2, 3, 1, 1);
  udit::ag::Conv2d<double> h2("h.conv2", 2, 2, 3, 2, 1);
  h1.init(rng, 0.5);
  h2.init(rng, 0.5);
  Array<double> x = random_array({1, 3, 16, 16}, rng, 0.5);
  Array<double> style = random_array({1, 1}, rng);
  auto extract = [&](Tape<double>& t, int img) {
    return t.relu(t.conv2d(t.relu(t.conv2d(img, h1, false)), h2, false));
  };
  // Source features are data during training: fixed regardless of what the
  // optimizer perturbs. Precompute them so the probes only see the
  // translation path.
  Array<double> u_src_val;
  {
    Tape<double> t0;
    t0.set_grad_enabled(false);
    u_src_val = t0.val(extract(t0, t0.leaf(x)));
  }
  auto params = params_of(m.enc_c[0]);
  for (auto* p : params_of(m.dec[1])) params.push_back(p);
  gradcheck::check(
      {x, style}, {true, true}, params,
      [&](Tape<double>& t, const std::vector<int>& in) {
        ContentVar c = m.enc_c[0].forward(t, in[0], true);
        int fake = m.dec[1].forward(t, c, in[1], true);
        int u_trans = extract(t, fake);
        return semantic_constraint_loss(t, t.leaf(u_src_val), u_trans);
      });
  CHECK(h1.w.grad.empty());
  CHECK(h2.w.grad.empty());
}

TEST_CASE("every term of a full toy objective is non-negative") {
  auto m = TranslationModel<double>::create(toy_hyper(), {}, 507);
  Philox rng(507, 1);
  Tape<double> t;
  int xa = t.leaf(random_array({2, 3, 16, 16}, rng, 0.5));
  int xb = t.leaf(random_array({2, 3, 16, 16}, rng, 0.5));
  int sa = t.leaf(random_array({2, 1}, rng));
  int sb = t.leaf(random_array({2, 1}, rng));
  ContentVar ca = m.enc_c[0].forward(t, xa, false);
  ContentVar cb = m.enc_c[1].forward(t, xb, false);
  int xab = m.dec[1].forward(t, ca, sb, false);
  int xba = m.dec[0].forward(t, cb, sa, false);
  LossBreakdown b;
  b.gan_A = t.val(adversarial_loss_g(t, m.dis[0].forward(t, xba, false)))[0];
  b.gan_B = t.val(adversarial_loss_g(t, m.dis[1].forward(t, xab, false)))[0];
  b.recon_x_A = t.val(image_recon_loss(
      t, xa, m.dec[0].forward(t, ca, m.enc_s[0].forward(t, xa, false),
                              false)))[0];
  b.recon_c_A =
      t.val(content_recon_loss(t, ca.features,
                               m.enc_c[1].forward(t, xab, false).features))[0];
  b.recon_s_A =
      t.val(style_recon_loss(t, sb, m.enc_s[1].forward(t, xab, false)))[0];
  b.sem_A = t.val(semantic_constraint_loss(t, t.detach(xa), xab))[0];
  LossBreakdown fin = finalize(b, {});
  for (double v : {fin.gan_A, fin.gan_B, fin.recon_x_A, fin.recon_c_A,
                   fin.recon_s_A, fin.sem_A, fin.total}) {
    CHECK(v >= 0.0);
    CHECK(std::isfinite(v));
  }
  // Breakdown total invariant: recomputation agrees to 1e-6 relative.
  CHECK(std::abs(weighted_total(fin, {}) - fin.total) <=
        1e-6 * std::abs(fin.total));
}

TEST_CASE("loss breakdown serializes every field as JSON") {
  LossBreakdown b;
  b.gan_A = 0.25;
  b.total = 1.5;
  std::string j = b.to_json();
  CHECK(j.find("\"gan_A\":0.25") != std::string::npos);
  CHECK(j.find("\"total\":1.5") != std::string::npos);
  CHECK(j.find("\"sem_B\":0.0") != std::string::npos);
}

}  // TEST_SUITE
