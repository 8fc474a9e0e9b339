#include "udit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <utility>

#include "udit/image.hpp"
#include "udit/rng.hpp"
#include "udit/tape.hpp"
#include "udit/trainer.hpp"

namespace udit::metrics {
namespace {

// Scores one (C,H,W) image as a batch of one so results are independent of
// how many other pairs are in flight.
std::vector<double> single_logits(MetricClassifier& f, const Array<float>& x) {
  const auto& h = f.net.hyper;
  if (x.ndim() != 3 || x.dim(0) != h.in_channels || x.dim(1) != h.image_size ||
      x.dim(2) != h.image_size)
    throw ShapeError(cat("classifier expects (", h.in_channels, ",",
                         h.image_size, ",", h.image_size, "), got ",
                         shape_str(x.shape)));
  ag::Tape<float> t;
  t.set_grad_enabled(false);
  const int batch = t.leaf(Array<float>({1, x.dim(0), x.dim(1), x.dim(2)}, x.v));
  const int logits = f.net.forward_logits(t, batch, /*train=*/false);
  const Array<float>& lv = t.val(logits);
  return std::vector<double>(lv.v.begin(), lv.v.end());
}

int argmax_row(const std::vector<double>& z) {
  int best = 0;
  for (int i = 1; i < int(z.size()); ++i)
    if (z[size_t(i)] > z[size_t(best)]) best = i;
  return best;
}

std::vector<double> softmax_row(const std::vector<double>& z) {
  double m = z[0];
  for (double x : z) m = std::max(m, x);
  std::vector<double> p(z.size());
  double denom = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    denom += p[i];
  }
  for (double& x : p) x /= denom;
  return p;
}

void check_pairs(const MetricClassifier& f, const std::vector<EvalPair>& pairs) {
  if (pairs.empty())
    throw ConfigError("no (source, translation) pairs to score");
  const int n = int(f.net.attribute.values.size());
  for (const auto& p : pairs)
    if (p.true_label < 0 || p.true_label >= n)
      throw DataError(cat("label ", p.true_label, " outside attribute '",
                          f.net.attribute.name, "' with ", n, " values"));
}

void l2_normalize(std::vector<double>& v) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  const double norm = std::sqrt(norm2);
  if (norm > 0.0)
    for (double& x : v) x /= norm;
  // An all-zero embedding stays the zero vector.
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::sqrt(d2);
}

// Mean over the spatial grid of every channel of a (1,C,h,w) activation,
// appended to `out`.
void append_pooled(const Array<float>& a, std::vector<double>& out) {
  const int channels = a.dim(1);
  const int64_t hw = int64_t(a.dim(2)) * a.dim(3);
  const float* p = a.data();
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    for (int64_t i = 0; i < hw; ++i) s += double(p[int64_t(c) * hw + i]);
    out.push_back(s / double(hw));
  }
}

}  // namespace

MetricClassifier train_metric_classifier(
    const std::vector<semext::LabeledImage>& data,
    const data::AttributeSpec& attribute, int epochs, uint64_t seed,
    semext::ClassifierHyper hyper) {
  MetricClassifier f;
  f.net = semext::train_attribute_classifier(data, attribute, epochs, seed,
                                             std::move(hyper));
  f.calibration = f.net.val_accuracy;
  return f;
}

double misclassification_rate(MetricClassifier& f,
                              const std::vector<EvalPair>& pairs) {
  check_pairs(f, pairs);
  int64_t flipped = 0;
  for (const auto& p : pairs)
    if (argmax_row(single_logits(f, p.x_trans)) != p.true_label) ++flipped;
  return double(flipped) / double(pairs.size());
}

double drop_in_confidence(MetricClassifier& f,
                          const std::vector<EvalPair>& pairs) {
  check_pairs(f, pairs);
  double sum = 0.0;
  for (const auto& p : pairs) {
    const std::vector<double> p_src = softmax_row(single_logits(f, p.x));
    const std::vector<double> p_tr = softmax_row(single_logits(f, p.x_trans));
    sum += p_src[size_t(p.true_label)] - p_tr[size_t(p.true_label)];
  }
  return sum / double(pairs.size());
}

double feature_distance(const FeatureFn& embed, const Array<float>& x,
                        const Array<float>& x_trans) {
  if (!embed) throw ConfigError("feature_distance needs an embedder");
  std::vector<double> a = embed(x);
  std::vector<double> b = embed(x_trans);
  if (a.empty() || a.size() != b.size())
    throw ShapeError(cat("embeddings disagree in length: ", a.size(), " vs ",
                         b.size()));
  l2_normalize(a);
  l2_normalize(b);
  return euclidean(a, b);
}

FeatureFn pooled_extractor_features(const semext::SemanticExtractor& e) {
  auto ext = std::make_shared<semext::SemanticExtractor>(e);
  return [ext](const Array<float>& x) {
    if (x.ndim() != 3)
      throw ShapeError(cat("expected one (C,H,W) image, got ",
                           shape_str(x.shape)));
    const Array<float> f =
        ext->extract(Array<float>({1, x.dim(0), x.dim(1), x.dim(2)}, x.v));
    std::vector<double> out;
    out.reserve(size_t(f.dim(1)));
    append_pooled(f, out);
    return out;
  };
}

FeatureFn random_trunk_features(int in_channels, uint64_t seed) {
  if (in_channels < 1)
    throw ConfigError(cat("in_channels must be >= 1, got ", in_channels));
  auto convs = std::make_shared<std::vector<ag::Conv2d<float>>>();
  Philox rng(seed, 0);
  const std::vector<int> stages = {8, 16, 32};
  int ic = in_channels;
  for (size_t i = 0; i < stages.size(); ++i) {
    auto& conv = convs->emplace_back(cat("div.conv", i + 1), ic,
                                     stages[i], 3, /*stride=*/2, /*pad=*/1);
    const double stddev = std::sqrt(2.0 / (double(ic) * 3.0 * 3.0));
    for (float& w : conv.w.value.v) w = float(rng.normal() * stddev);
    ic = stages[i];
  }
  return [convs](const Array<float>& x) {
    if (x.ndim() != 3)
      throw ShapeError(cat("expected one (C,H,W) image, got ",
                           shape_str(x.shape)));
    ag::Tape<float> t;
    t.set_grad_enabled(false);
    int h = t.leaf(Array<float>({1, x.dim(0), x.dim(1), x.dim(2)}, x.v));
    std::vector<double> out;
    for (auto& conv : *convs) {
      h = t.relu(t.conv2d(h, conv, /*train_params=*/false));
      append_pooled(t.val(h), out);
    }
    return out;
  };
}

Translator model_translator(nets::TranslationModel<float>& model,
                            int from_domain) {
  if (from_domain != 0 && from_domain != 1)
    throw ConfigError(cat("from_domain must be 0 or 1, got ", from_domain));
  nets::TranslationModel<float>* m = &model;
  return [m, from_domain](const Array<float>& x, int k, uint64_t seed) {
    return train::translate(*m, x, from_domain, k, seed);
  };
}

Translator identity_translator() {
  return [](const Array<float>& x, int k, uint64_t) {
    if (k < 1) throw ConfigError(cat("k must be >= 1, got ", k));
    if (x.ndim() != 3)
      throw ShapeError(cat("expected one (C,H,W) image, got ",
                           shape_str(x.shape)));
    return std::vector<Array<float>>(size_t(k), x);
  };
}

DiversityResult diversity_from_samples(
    const std::vector<std::vector<Array<float>>>& samples,
    const FeatureFn& features, int pair_count, uint64_t seed) {
  if (!features) throw ConfigError("diversity needs a feature function");
  if (samples.empty())
    throw ConfigError("diversity needs at least one input's samples");
  if (pair_count < 1)
    throw ConfigError(cat("pair_count must be >= 1, got ", pair_count));
  const int k = int(samples.front().size());
  if (k < 2)
    throw ConfigError(cat("diversity needs >= 2 samples per input, got ", k));
  for (const auto& s : samples)
    if (int(s.size()) != k)
      throw ShapeError(cat("inputs disagree in sample count: ", s.size(),
                           " vs ", k));

  const int64_t total = int64_t(k) * (k - 1) / 2;
  const int take = int(std::min<int64_t>(pair_count, total));

  double sum = 0.0;
  int64_t n_pairs = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    std::vector<std::vector<double>> feats;
    feats.reserve(size_t(k));
    for (const Array<float>& y : samples[i]) feats.push_back(features(y));
    if (feats.front().empty()) throw ShapeError("empty feature vector");
    for (const auto& fv : feats)
      if (fv.size() != feats.front().size())
        throw ShapeError(cat("features disagree in length: ", fv.size(),
                             " vs ", feats.front().size()));

    // All unordered pairs in lexicographic order; a partial shuffle keeps
    // the first `take` as a uniform draw without replacement.
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(size_t(total));
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b) pairs.emplace_back(a, b);
    Philox rng(seed, (uint64_t(i) << 1) | 1);
    for (int p = 0; p < take; ++p) {
      const int64_t j = p + int64_t(rng.uniform_u64(uint64_t(total - p)));
      std::swap(pairs[size_t(p)], pairs[size_t(j)]);
    }
    for (int p = 0; p < take; ++p) {
      sum += euclidean(feats[size_t(pairs[size_t(p)].first)],
                       feats[size_t(pairs[size_t(p)].second)]);
      ++n_pairs;
    }
  }

  DiversityResult r;
  r.mean = sum / double(n_pairs);
  r.n_pairs = n_pairs;
  r.pairs_per_input = take;
  return r;
}

DiversityResult diversity_protocol(const Translator& translate,
                                   const FeatureFn& features,
                                   const std::vector<Array<float>>& inputs,
                                   int k, int pair_count, uint64_t seed) {
  if (!translate) throw ConfigError("diversity needs a translator");
  if (inputs.empty())
    throw ConfigError("diversity needs at least one input image");
  if (k < 2)
    throw ConfigError(cat("diversity needs >= 2 samples per input, got ", k));
  std::vector<std::vector<Array<float>>> samples;
  samples.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    const uint64_t style_seed = Philox(seed, uint64_t(i) << 1).next_u64();
    samples.push_back(translate(inputs[i], k, style_seed));
  }
  return diversity_from_samples(samples, features, pair_count, seed);
}

Json BiasReport::to_json() const {
  Json j;
  j["direction"] = direction;
  if (filter_attribute.empty()) {
    j["filter"] = nullptr;
  } else {
    Json f;
    f["attribute"] = filter_attribute;
    f["value"] = filter_value;
    j["filter"] = f;
  }
  j["misclassification_rate"] = misclassification_rate;
  j["drop_in_confidence"] = drop_in_confidence;
  j["feature_distance"] = feature_distance;
  j["diversity"] = diversity;
  j["n_inputs"] = n_inputs;
  j["n_samples_per_input"] = n_samples_per_input;
  j["seed"] = seed;
  j["model_checksum"] = model_checksum;
  return j;
}

BiasReport BiasReport::from_json(const Json& j) {
  BiasReport r;
  r.direction = json_get<std::string>(j, "direction");
  if (j.contains("filter") && !j.at("filter").is_null()) {
    r.filter_attribute = json_get<std::string>(j.at("filter"), "attribute");
    r.filter_value = json_get<std::string>(j.at("filter"), "value");
  }
  r.misclassification_rate = json_get<double>(j, "misclassification_rate");
  r.drop_in_confidence = json_get<double>(j, "drop_in_confidence");
  r.feature_distance = json_get<double>(j, "feature_distance");
  r.diversity = json_get<double>(j, "diversity");
  r.n_inputs = json_get<int64_t>(j, "n_inputs");
  r.n_samples_per_input = int(json_get<int64_t>(j, "n_samples_per_input"));
  r.seed = json_get<uint64_t>(j, "seed");
  r.model_checksum = json_get_or<std::string>(j, "model_checksum", "");
  return r;
}

BiasReport evaluate(const Translator& translate, MetricClassifier& f,
                    const FeatureFn& id_embed, const FeatureFn& div_features,
                    const std::vector<semext::LabeledImage>& test_set,
                    const std::vector<int>* filter_labels, int filter_label,
                    const EvaluateConfig& cfg) {
  if (!translate) throw ConfigError("evaluate needs a translator");
  if (!id_embed || !div_features)
    throw ConfigError("evaluate needs identity and diversity features");
  if (cfg.direction != "A->B" && cfg.direction != "B->A")
    throw ConfigError(cat("direction must be \"A->B\" or \"B->A\", got \"",
                          cfg.direction, "\""));
  if (cfg.k < 2)
    throw ConfigError(cat("evaluate draws k >= 2 samples per input, got ",
                          cfg.k));
  if (cfg.pair_count < 1)
    throw ConfigError(cat("pair_count must be >= 1, got ", cfg.pair_count));
  if (test_set.empty()) throw ConfigError("empty test set");

  std::vector<int> kept;
  if (filter_labels != nullptr) {
    if (filter_labels->size() != test_set.size())
      throw ShapeError(cat("filter labels (", filter_labels->size(),
                           ") do not match the test set (", test_set.size(),
                           ")"));
    for (size_t i = 0; i < test_set.size(); ++i)
      if ((*filter_labels)[i] == filter_label) kept.push_back(int(i));
    if (kept.empty())
      throw DataError(cat("filter ", cfg.filter_attribute, "=",
                          cfg.filter_value, " matched no test images"));
  } else {
    kept.resize(test_set.size());
    std::iota(kept.begin(), kept.end(), 0);
  }

  const int n_values = int(f.net.attribute.values.size());
  for (int i : kept) {
    const int lab = test_set[size_t(i)].label;
    if (lab < 0 || lab >= n_values)
      throw DataError(cat("label ", lab, " outside attribute '",
                          f.net.attribute.name, "' with ", n_values,
                          " values"));
  }

  // Draw each kept input's samples once; every measure scores the same
  // translations. Style seeds come from stream 2j, matching
  // diversity_protocol, so the diversity term equals a standalone run.
  std::vector<std::vector<Array<float>>> samples;
  std::vector<EvalPair> pairs;
  samples.reserve(kept.size());
  pairs.reserve(kept.size() * size_t(cfg.k));
  double dist_sum = 0.0;
  for (size_t j = 0; j < kept.size(); ++j) {
    const semext::LabeledImage& rec = test_set[size_t(kept[j])];
    const uint64_t style_seed = Philox(cfg.seed, uint64_t(j) << 1).next_u64();
    samples.push_back(translate(rec.image, cfg.k, style_seed));
    if (int(samples.back().size()) != cfg.k)
      throw ShapeError(cat("translator returned ", samples.back().size(),
                           " samples, expected ", cfg.k));
    for (const Array<float>& y : samples.back()) {
      pairs.push_back({rec.image, y, rec.label});
      dist_sum += feature_distance(id_embed, rec.image, y);
    }
  }

  BiasReport r;
  r.direction = cfg.direction;
  if (filter_labels != nullptr) {
    r.filter_attribute = cfg.filter_attribute;
    r.filter_value = cfg.filter_value;
  }
  r.misclassification_rate = metrics::misclassification_rate(f, pairs);
  r.drop_in_confidence = metrics::drop_in_confidence(f, pairs);
  r.feature_distance = dist_sum / double(pairs.size());
  r.diversity =
      diversity_from_samples(samples, div_features, cfg.pair_count, cfg.seed)
          .mean;
  r.n_inputs = int64_t(kept.size());
  r.n_samples_per_input = cfg.k;
  r.seed = cfg.seed;
  r.model_checksum = cfg.model_checksum;
  return r;
}

}  // namespace udit::metrics
