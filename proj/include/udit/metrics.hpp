#pragma once
// Robustness and diversity measurement for trained translators: how often a
// translation flips an attribute classifier's verdict, how much the
// classifier's confidence in the true value drops, how far identity features
// move, and how varied repeated stochastic translations of one input are.
//
// All measures are pure functions of their inputs (deterministic under the
// given seed) and are checked against scalar loop oracles in the tests.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "udit/array.hpp"
#include "udit/common.hpp"
#include "udit/datasets.hpp"
#include "udit/nets.hpp"
#include "udit/semext.hpp"
#include "udit/serde.hpp"

namespace udit::metrics {

// Attribute classifier used for measurement only. Train it on data disjoint
// from the translator's training images so the measurement stays independent
// of what the translator saw.
struct MetricClassifier {
  semext::Classifier net;
  double calibration = 0.0;  // validation accuracy (percent) when trained
};

MetricClassifier train_metric_classifier(
    const std::vector<semext::LabeledImage>& data,
    const data::AttributeSpec& attribute, int epochs, uint64_t seed,
    semext::ClassifierHyper hyper = {});

// One measured triple: a source image, one translation of it, and the source
// image's ground-truth value index for the classifier's attribute.
struct EvalPair {
  Array<float> x;        // source (C,H,W)
  Array<float> x_trans;  // translation (C,H,W)
  int true_label = 0;
};

// Fraction of pairs whose translation the classifier assigns to a value
// other than the source's ground truth. Each pair is scored independently
// (batch of one), so the result matches a per-pair loop bit for bit.
double misclassification_rate(MetricClassifier& f,
                              const std::vector<EvalPair>& pairs);

// Mean over pairs of p_true(x) - p_true(x_trans), with probabilities taken
// from the softmax of the classifier's logits. In [-1, 1].
double drop_in_confidence(MetricClassifier& f,
                          const std::vector<EvalPair>& pairs);

// Fixed-length feature embedding of one (C,H,W) image.
using FeatureFn = std::function<std::vector<double>(const Array<float>&)>;

// Euclidean distance between the L2-normalized embeddings of the two
// images; in [0, 2]. Embeddings must agree in (nonzero) length.
double feature_distance(const FeatureFn& embed, const Array<float>& x,
                        const Array<float>& x_trans);

// Identity embedding: globally pooled features of a frozen extractor.
FeatureFn pooled_extractor_features(const semext::SemanticExtractor& e);

// Perceptual stand-in for diversity: a fixed random-weight conv trunk
// (stride-2 relu stages) whose per-stage globally pooled activations are
// concatenated into one vector. Never trained; deterministic under seed.
FeatureFn random_trunk_features(int in_channels, uint64_t seed);

// k stochastic translations of one (C,H,W) image, deterministic under seed.
using Translator = std::function<std::vector<Array<float>>(
    const Array<float>& x, int k, uint64_t seed)>;

// Wraps a trained model for one source domain (0 = A, 1 = B).
Translator model_translator(nets::TranslationModel<float>& model,
                            int from_domain);
// Returns k copies of the input; the reference point for zero effect.
Translator identity_translator();

struct DiversityResult {
  double mean = 0.0;        // grand mean pair distance
  int64_t n_pairs = 0;      // total pair distances averaged
  int pairs_per_input = 0;  // drawn per input: min(pair_count, k*(k-1)/2)
};

// Feature-space spread of repeated translations. For every input's k
// samples, draw `pair_count` unordered sample pairs uniformly without
// replacement (all pairs when fewer exist), and average the plain Euclidean
// feature distance over every drawn pair of every input. Pair choice for
// input i uses stream (2i + 1) of the seed.
DiversityResult diversity_from_samples(
    const std::vector<std::vector<Array<float>>>& samples,
    const FeatureFn& features, int pair_count, uint64_t seed);

// Draws the k translations itself (style stream 2i for input i), then
// scores them with diversity_from_samples.
DiversityResult diversity_protocol(const Translator& translate,
                                   const FeatureFn& features,
                                   const std::vector<Array<float>>& inputs,
                                   int k, int pair_count, uint64_t seed);

struct EvaluateConfig {
  std::string direction = "A->B";  // "A->B" or "B->A"
  int k = 2;                       // translations drawn per input (>= 2)
  int pair_count = 19;             // diversity pair budget per input
  uint64_t seed = 0;
  std::string filter_attribute;  // with filter_value: names the kept subset
  std::string filter_value;
  std::string model_checksum;  // echoed into the report
};

struct BiasReport {
  std::string direction;
  std::string filter_attribute;  // empty when unfiltered
  std::string filter_value;
  double misclassification_rate = 0.0;
  double drop_in_confidence = 0.0;
  double feature_distance = 0.0;  // mean over all (input, sample) pairs
  double diversity = 0.0;
  int64_t n_inputs = 0;
  int n_samples_per_input = 0;
  uint64_t seed = 0;
  std::string model_checksum;

  Json to_json() const;
  static BiasReport from_json(const Json& j);
};

// Full protocol: translate every kept test image k times, score the same
// samples with all four measures, and aggregate one report. When
// filter_labels is given (parallel to test_set), only images whose filter
// label equals filter_label are kept; an empty kept set is a data error
// naming the filter. Deterministic under cfg.seed.
BiasReport evaluate(const Translator& translate, MetricClassifier& f,
                    const FeatureFn& id_embed, const FeatureFn& div_features,
                    const std::vector<semext::LabeledImage>& test_set,
                    const std::vector<int>* filter_labels, int filter_label,
                    const EvaluateConfig& cfg);

}  // namespace udit::metrics
