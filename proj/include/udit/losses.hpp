#pragma once

// Training objective. The generator objective is
//
//   total = gan_A + gan_B
//         + lambda_x * (recon_x_A + recon_x_B)
//         + lambda_c * (recon_c_A + recon_c_B)
//         + lambda_s * (recon_s_A + recon_s_B)
//         + lambda_u * (sem_A + sem_B)
//
// where _A / _B name the domain of the term's superscript: gan_A is the
// adversarial term for images translated INTO domain A, while recon/sem _A
// terms concern images originating FROM domain A. All reconstruction and
// semantic terms are mean absolute errors; adversarial terms are least
// squares. With lambda_u = 0 the objective reduces to the baseline translator
// without the semantic constraint.

#include <span>
#include <string>

#include "udit/common.hpp"
#include "udit/tape.hpp"

namespace udit::losses {

struct LossWeights {
  double lambda_x = 10.0;
  double lambda_c = 1.0;
  double lambda_s = 1.0;
  double lambda_u = 1.0;

  void validate() const {
    for (double v : {lambda_x, lambda_c, lambda_s, lambda_u}) {
      require<ConfigError>(std::isfinite(v) && v >= 0.0,
                           "loss weights must be finite and non-negative");
    }
  }
};

// Scalar value of every objective term for one step, plus the weighted total.
struct LossBreakdown {
  double gan_A = 0, gan_B = 0;
  double recon_x_A = 0, recon_x_B = 0;
  double recon_c_A = 0, recon_c_B = 0;
  double recon_s_A = 0, recon_s_B = 0;
  double sem_A = 0, sem_B = 0;
  double total = 0;

  bool finite() const;
  std::string to_json() const;
};

// Recomputes the weighted total from the component fields.
double weighted_total(const LossBreakdown& b, const LossWeights& w);

// Fills b.total from the component fields; validates weights.
LossBreakdown finalize(LossBreakdown b, const LossWeights& w);

// --- tape builders --------------------------------------------------------
// Each builder returns a scalar node. Multi-scale score lists are averaged
// across scales; expectations are means over every map element and batch row.

// Discriminator objective: (1/S) * sum_s [ 0.5*mean(fake_s^2)
//                                          + mean((real_s - 1)^2) ].
// The 0.5 applies to the fake term only, matching the printed objective.
template <typename T>
int adversarial_loss_d(ag::Tape<T>& t, std::span<const int> fake_scores,
                       std::span<const int> real_scores) {
  require<ShapeError>(!fake_scores.empty() &&
                          fake_scores.size() == real_scores.size(),
                      "adversarial_loss_d needs matching non-empty score "
                      "lists, got ",
                      fake_scores.size(), " fake / ", real_scores.size(),
                      " real");
  std::vector<int> terms;
  std::vector<T> ws;
  T inv = T(1) / T(fake_scores.size());
  for (size_t s = 0; s < fake_scores.size(); ++s) {
    terms.push_back(t.mse_to(fake_scores[s], T(0)));
    ws.push_back(T(0.5) * inv);
    terms.push_back(t.mse_to(real_scores[s], T(1)));
    ws.push_back(inv);
  }
  return t.weighted_sum(terms, ws);
}

// Generator-side adversarial term: (1/S) * sum_s mean((fake_s - 1)^2).
template <typename T>
int adversarial_loss_g(ag::Tape<T>& t, std::span<const int> fake_scores) {
  require<ShapeError>(!fake_scores.empty(),
                      "adversarial_loss_g needs a non-empty score list");
  std::vector<int> terms;
  std::vector<T> ws;
  T inv = T(1) / T(fake_scores.size());
  for (int id : fake_scores) {
    terms.push_back(t.mse_to(id, T(1)));
    ws.push_back(inv);
  }
  return t.weighted_sum(terms, ws);
}

// Mean-L1 reconstruction penalties. All four are the same reduction; the
// separate names document which pair of tensors they compare.
template <typename T>
int image_recon_loss(ag::Tape<T>& t, int x, int x_rec) {
  return t.l1_loss(x_rec, x);
}

template <typename T>
int content_recon_loss(ag::Tape<T>& t, int c, int c_rec) {
  return t.l1_loss(c_rec, c);
}

template <typename T>
int style_recon_loss(ag::Tape<T>& t, int s_sampled, int s_rec) {
  return t.l1_loss(s_rec, s_sampled);
}

// Semantic constraint: mean-L1 between frozen-extractor features of the
// source image (a constant) and of the translated image. The caller must
// pass u_src as a non-grad node (leaf or detached) and build u_trans with the
// extractor's parameters frozen, so gradient reaches only the translated
// image path.
template <typename T>
int semantic_constraint_loss(ag::Tape<T>& t, int u_src, int u_trans) {
  return t.l1_loss(u_trans, u_src);
}

}  // namespace udit::losses
