#pragma once

// Optimization loop for the translator: alternating discriminator and
// generator/encoder updates over both translation directions, with
// checkpointing, JSON-lines loss logging, and deterministic resume.
//
// Determinism contract: every random draw of step k comes from a Philox
// stream derived from (model seed, k), so a run is a pure function of
// (config, dataset) and resuming from a checkpoint at iteration k replays
// exactly the trace an uninterrupted run would have produced.

#include <cstdint>
#include <string>
#include <vector>

#include "udit/array.hpp"
#include "udit/losses.hpp"
#include "udit/nets.hpp"
#include "udit/semext.hpp"
#include "udit/serde.hpp"

namespace udit::train {

struct TrainConfig {
  std::string dataset_root;
  std::string out_dir;
  nets::NetHyper network;
  losses::LossWeights weights;
  std::string extractor_path;  // required iff weights.lambda_u > 0
  int64_t iterations = 5000;
  int batch_size = 4;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  uint64_t seed = 0;
  int64_t checkpoint_every = 1000;
  int64_t log_every = 1;

  void validate() const;
  Json to_json() const;
  // Lenient: absent keys keep their defaults (strict unknown-key rejection
  // is the config-merging caller's job).
  static TrainConfig from_json(const Json& j);
};

// Everything train_step mutates. Optimizer moments live inside the model's
// parameters; the iteration counter lives on the model so checkpoints carry
// it; RNG streams are re-derived from (seed, iteration) and need no state.
struct TrainState {
  nets::TranslationModel<float> model;
  semext::SemanticExtractor extractor;  // meaningful iff use_extractor
  bool use_extractor = false;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
};

// One log line: the generator objective's breakdown plus the two
// discriminator losses of the same step.
struct StepLog {
  int64_t iteration = 0;  // 1-based, value after the step
  losses::LossBreakdown g;
  double d_A = 0.0;
  double d_B = 0.0;

  std::string to_json_line() const;
};

// Fresh state from a config: builds the model and loads the extractor when
// the semantic weight is positive. Does not touch the dataset.
TrainState make_state(const TrainConfig& cfg);

// One alternating update: discriminators first (least-squares objective on
// detached translations, both domains), then generators/encoders (the full
// weighted objective). Throws TrainError with the breakdown attached if any
// term goes non-finite. Increments model.iteration.
StepLog train_step(TrainState& st, const Array<float>& batch_A,
                   const Array<float>& batch_B);

// Full run: validates config and dataset, resumes from the newest
// compatible checkpoint in out_dir if one exists, trains to
// cfg.iterations with checkpoints at the configured cadence plus a final
// one, and appends one StepLog JSON line per logged step to
// out_dir/train_log.jsonl. Returns the final checkpoint path.
std::string train(const TrainConfig& cfg);

// k stochastic translations of one (C,H,W) image from the given source
// domain (0 = A, 1 = B), deterministic under seed. The semantic extractor
// plays no role at inference time.
std::vector<Array<float>> translate(nets::TranslationModel<float>& model,
                                    const Array<float>& image,
                                    int from_domain, int k, uint64_t seed);

}  // namespace udit::train
