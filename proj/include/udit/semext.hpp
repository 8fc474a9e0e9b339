#pragma once

// Semantic extractor pipeline: train an attribute classifier on labeled
// images, attach a 1x1xD reduction layer at the classifier's tap point
// (the convolutional features feeding its pooled linear head), sweep D over
// a grid while fine-tuning only the reduction layer and head, select the
// smallest D whose accuracy stays within a tolerance of the best, and
// freeze the resulting backbone + reduction as the extractor used by the
// semantic constraint during translator training.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "udit/array.hpp"
#include "udit/datasets.hpp"
#include "udit/layers.hpp"
#include "udit/serde.hpp"
#include "udit/tape.hpp"

namespace udit::semext {

struct LabeledImage {
  Array<float> image;  // (3,H,W) in [-1,1]
  int label = 0;       // index into the attribute's value list
};

struct ClassifierHyper {
  int image_size = 64;
  int in_channels = 3;
  std::vector<int> channels = {16, 32, 64, 128};  // one stride-2 stage each
  int kernel = 5;  // wide enough to tell corners from curves at stride 2
  int n_classes = 2;
  int tap_stage = 4;  // 1-based stage whose output is the tap point
  double lr = 1e-3;
  int batch_size = 16;
  double val_fraction = 0.2;

  int tap_channels() const { return channels[size_t(tap_stage - 1)]; }
  int tap_size() const { return image_size >> tap_stage; }
  void validate() const;
};

// Convolutional trunk (stride-2 relu stages) + global average pooling +
// linear head. The tap point is the named stage output feeding the head.
struct Classifier {
  ClassifierHyper hyper;
  data::AttributeSpec attribute;
  uint64_t seed = 0;
  std::string tap_point;      // "conv<tap_stage>"
  double val_accuracy = 0.0;  // percent in [0,100]
  std::vector<ag::Conv2d<float>> convs;
  ag::Dense<float> head;

  static Classifier create(const ClassifierHyper& h,
                           const data::AttributeSpec& attribute,
                           uint64_t seed);

  // Full forward to logits [N, n_classes].
  int forward_logits(ag::Tape<float>& t, int x, bool train);
  // Stages up to and including the tap point.
  int forward_tap(ag::Tape<float>& t, int x, bool train);

  std::vector<ag::Param<float>*> params();
};

struct SweepResult {
  std::vector<int> grid;                // strictly increasing
  std::map<int, double> accuracy;      // D -> percent in [0,100]
};

// Reduction adapter fine-tuned on top of a frozen backbone.
struct ReducedHead {
  ag::Conv2d<float> reduction;  // tap channels -> D, 1x1
  ag::Dense<float> head;        // D -> n_classes
  double accuracy = 0.0;
};

// Deterministic train/validation split shared by training, sweeping, and
// evaluation: a seeded permutation with the tail `val_fraction` held out.
std::pair<std::vector<int>, std::vector<int>> split_indices(
    int n, double val_fraction, uint64_t seed);

// Loads every record of both domains as a labeled image for `attribute`.
// Returns the samples (A rows first, labels-file order) and the attribute's
// spec. Unknown attribute name raises DataError.
std::pair<std::vector<LabeledImage>, data::AttributeSpec> load_labeled(
    const std::string& root, const std::string& attribute);

// Trains a fresh classifier. The hyper's n_classes is overridden by the
// attribute's value count. Training data holding fewer than two distinct
// labels raises DataError.
Classifier train_attribute_classifier(const std::vector<LabeledImage>& data,
                                      const data::AttributeSpec& attribute,
                                      int epochs, uint64_t seed,
                                      ClassifierHyper hyper = {});

// Fine-tunes a fresh 1x1xD reduction + head over the frozen backbone (tap
// features are computed once and cached — the backbone never updates).
// Seeded per entry from (classifier seed, d).
ReducedHead finetune_reduction(Classifier& classifier,
                               const std::vector<LabeledImage>& data, int d,
                               int epochs);

// Runs finetune_reduction for every grid entry. Grid must be non-empty and
// strictly increasing (ConfigError otherwise).
SweepResult sweep_reduction_dim(Classifier& classifier,
                                const std::vector<LabeledImage>& data,
                                const std::vector<int>& grid, int epochs = 1);

// Smallest grid D whose accuracy is within tau of the sweep's best.
int select_reduction_dim(const SweepResult& sweep, double tau);

// Frozen feature extractor: backbone stages up to the tap point plus the
// linear 1x1xD reduction. Forward never registers parameter gradients.
struct SemanticExtractor {
  ClassifierHyper hyper;
  data::AttributeSpec attribute;
  std::string tap_point;
  int d = 0;
  double accuracy = 0.0;  // reduced-classifier validation accuracy
  std::vector<ag::Conv2d<float>> backbone;  // stages 1..tap_stage
  ag::Conv2d<float> reduction;

  // Graph forward for training-time use; parameters stay frozen.
  int forward(ag::Tape<float>& t, int x);
  // Convenience no-grad forward: (N,3,H,W) -> (N,D,h',w').
  Array<float> extract(const Array<float>& images);
};

// Re-runs the fine-tune at the chosen D and freezes the result.
SemanticExtractor build_extractor(Classifier& classifier,
                                  const std::vector<LabeledImage>& data,
                                  int d, int epochs = 1);

// Archive (kind "extractor") plus sidecar "<path>.json" holding
// {attribute, D, tau, sweep table, accuracy}.
void save_extractor(const std::string& path, const SemanticExtractor& e,
                    double tau, const SweepResult& sweep);
SemanticExtractor load_extractor(const std::string& path);

}  // namespace udit::semext
