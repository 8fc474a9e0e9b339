#include "udit/losses.hpp"

#include <cmath>

#include "json.hpp"

namespace udit::losses {

bool LossBreakdown::finite() const {
  for (double v : {gan_A, gan_B, recon_x_A, recon_x_B, recon_c_A, recon_c_B,
                   recon_s_A, recon_s_B, sem_A, sem_B, total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string LossBreakdown::to_json() const {
  nlohmann::ordered_json j;
  j["gan_A"] = gan_A;
  j["gan_B"] = gan_B;
  j["recon_x_A"] = recon_x_A;
  j["recon_x_B"] = recon_x_B;
  j["recon_c_A"] = recon_c_A;
  j["recon_c_B"] = recon_c_B;
  j["recon_s_A"] = recon_s_A;
  j["recon_s_B"] = recon_s_B;
  j["sem_A"] = sem_A;
  j["sem_B"] = sem_B;
  j["total"] = total;
  return j.dump();
}

double weighted_total(const LossBreakdown& b, const LossWeights& w) {
  double t = b.gan_A + b.gan_B;
  t += w.lambda_x * (b.recon_x_A + b.recon_x_B);
  t += w.lambda_c * (b.recon_c_A + b.recon_c_B);
  t += w.lambda_s * (b.recon_s_A + b.recon_s_B);
  t += w.lambda_u * (b.sem_A + b.sem_B);
  return t;
}

LossBreakdown finalize(LossBreakdown b, const LossWeights& w) {
  w.validate();
  b.total = weighted_total(b, w);
  return b;
}

}  // namespace udit::losses
