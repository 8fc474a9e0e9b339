#include "udit/semext.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <utility>

#include "udit/checkpoint.hpp"
#include "udit/common.hpp"
#include "udit/image.hpp"
#include "udit/optim.hpp"
#include "udit/rng.hpp"

namespace udit::semext {

namespace {

// Stream tags keep the independent Philox draws of one seed apart.
constexpr uint64_t kSplitStream = 0x5EED'0001;
constexpr uint64_t kInitStream = 0;

std::string kind_to_string(data::AttributeSpec::Kind k) {
  return k == data::AttributeSpec::Kind::kWanted ? "wanted" : "unwanted";
}

data::AttributeSpec::Kind kind_from_string(const std::string& s) {
  if (s == "wanted") return data::AttributeSpec::Kind::kWanted;
  if (s == "unwanted") return data::AttributeSpec::Kind::kUnwanted;
  throw ConfigError(cat("unknown attribute kind \"", s, "\""));
}

Json attribute_to_json(const data::AttributeSpec& a) {
  Json j;
  j["name"] = a.name;
  j["kind"] = kind_to_string(a.kind);
  j["values"] = a.values;
  return j;
}

data::AttributeSpec attribute_from_json(const Json& j) {
  data::AttributeSpec a;
  a.name = json_get<std::string>(j, "name");
  a.kind = kind_from_string(json_get<std::string>(j, "kind"));
  a.values = json_get<std::vector<std::string>>(j, "values");
  if (a.values.size() < 2)
    throw ConfigError(cat("attribute \"", a.name, "\" needs >= 2 values"));
  return a;
}

std::vector<int> shuffled(const std::vector<int>& v, Philox rng) {
  std::vector<int> out = v;
  for (size_t i = out.size(); i > 1; --i)
    std::swap(out[i - 1], out[size_t(rng.uniform_u64(i))]);
  return out;
}

void check_samples(const std::vector<LabeledImage>& data,
                   const ClassifierHyper& h) {
  if (data.empty()) throw DataError("no labeled images to train on");
  const std::vector<int> want = {h.in_channels, h.image_size, h.image_size};
  for (size_t i = 0; i < data.size(); ++i) {
    if (data[i].image.shape != want)
      throw ShapeError(cat("labeled image ", i, " has shape ",
                           shape_str(data[i].image.shape), ", expected ",
                           shape_str(want)));
    if (data[i].label < 0 || data[i].label >= h.n_classes)
      throw DataError(cat("labeled image ", i, " has label ", data[i].label,
                          " outside [0, ", h.n_classes, ")"));
  }
}

// Mini-batch accuracy of an arbitrary image->logits forward, in percent.
template <typename Forward>
double eval_accuracy(Forward&& forward, const std::vector<LabeledImage>& data,
                     const std::vector<int>& idx, int batch_size) {
  if (idx.empty()) throw DataError("accuracy over an empty index set");
  int64_t correct = 0;
  for (size_t at = 0; at < idx.size(); at += size_t(batch_size)) {
    const size_t stop = std::min(idx.size(), at + size_t(batch_size));
    std::vector<Array<float>> images;
    images.reserve(stop - at);
    for (size_t i = at; i < stop; ++i)
      images.push_back(data[size_t(idx[i])].image);
    ag::Tape<float> t;
    t.set_grad_enabled(false);
    const int logits = forward(t, t.leaf(img::stack(images)));
    const Array<float>& lv = t.val(logits);
    const int k = lv.dim(1);
    for (size_t i = at; i < stop; ++i) {
      const float* row = lv.v.data() + int64_t(i - at) * k;
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (row[c] > row[best]) best = c;
      if (best == data[size_t(idx[i])].label) ++correct;
    }
  }
  return 100.0 * double(correct) / double(idx.size());
}

}  // namespace

void ClassifierHyper::validate() const {
  if (in_channels < 1)
    throw ConfigError(cat("in_channels must be >= 1, got ", in_channels));
  if (channels.empty()) throw ConfigError("channels must be non-empty");
  for (size_t i = 0; i < channels.size(); ++i)
    if (channels[i] < 1)
      throw ConfigError(cat("channels[", i, "] must be >= 1, got ",
                            channels[i]));
  if (kernel < 1 || kernel % 2 == 0)
    throw ConfigError(cat("kernel must be odd and >= 1, got ", kernel));
  const int div = 1 << int(channels.size());
  if (image_size < div || image_size % div != 0)
    throw ConfigError(cat("image_size ", image_size, " must be a multiple of ",
                          div, " (one halving per stage)"));
  if (n_classes < 2)
    throw ConfigError(cat("n_classes must be >= 2, got ", n_classes));
  if (tap_stage < 1 || size_t(tap_stage) > channels.size())
    throw ConfigError(cat("tap_stage must be in [1, ", channels.size(),
                          "], got ", tap_stage));
  if (!(lr > 0.0)) throw ConfigError(cat("lr must be > 0, got ", lr));
  if (batch_size < 1)
    throw ConfigError(cat("batch_size must be >= 1, got ", batch_size));
  if (!(val_fraction >= 0.0) || val_fraction >= 1.0)
    throw ConfigError(cat("val_fraction must be in [0, 1), got ",
                          val_fraction));
}

Classifier Classifier::create(const ClassifierHyper& h,
                              const data::AttributeSpec& attribute,
                              uint64_t seed) {
  h.validate();
  Classifier c;
  c.hyper = h;
  c.attribute = attribute;
  c.seed = seed;
  c.tap_point = cat("conv", h.tap_stage);
  Philox rng(seed, kInitStream);
  int in = h.in_channels;
  for (size_t i = 0; i < h.channels.size(); ++i) {
    c.convs.emplace_back(cat("cls.conv", i + 1), in, h.channels[i], h.kernel,
                         /*stride=*/2, /*pad=*/h.kernel / 2);
    // He-style scale: the relu trunk would otherwise shrink activations by
    // an order of magnitude per stage.
    c.convs.back().init(rng, std::sqrt(2.0 / (double(in) * h.kernel *
                                              h.kernel)));
    in = h.channels[i];
  }
  c.head = ag::Dense<float>("cls.head", h.channels.back(), h.n_classes);
  c.head.init(rng, std::sqrt(2.0 / double(h.channels.back())));
  return c;
}

int Classifier::forward_logits(ag::Tape<float>& t, int x, bool train) {
  int h = x;
  for (auto& conv : convs) h = t.relu(t.conv2d(h, conv, train));
  return t.linear(t.gap(h), head, train);
}

int Classifier::forward_tap(ag::Tape<float>& t, int x, bool train) {
  int h = x;
  for (int i = 0; i < hyper.tap_stage; ++i)
    h = t.relu(t.conv2d(h, convs[size_t(i)], train));
  return h;
}

std::vector<ag::Param<float>*> Classifier::params() {
  std::vector<ag::Param<float>*> out;
  for (auto& conv : convs) conv.collect(out);
  head.collect(out);
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(
    int n, double val_fraction, uint64_t seed) {
  if (n < 1) throw DataError(cat("cannot split ", n, " samples"));
  if (!(val_fraction >= 0.0) || val_fraction >= 1.0)
    throw ConfigError(cat("val_fraction must be in [0, 1), got ",
                          val_fraction));
  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[size_t(i)] = i;
  perm = shuffled(perm, Philox(seed, kSplitStream));
  int n_val = 0;
  if (val_fraction > 0.0) {
    n_val = int(std::llround(val_fraction * double(n)));
    n_val = std::min(n - 1, std::max(1, n_val));  // keep >= 1 train sample
  }
  std::vector<int> train(perm.begin(), perm.end() - n_val);
  std::vector<int> val(perm.end() - n_val, perm.end());
  return {std::move(train), std::move(val)};
}

std::pair<std::vector<LabeledImage>, data::AttributeSpec> load_labeled(
    const std::string& root, const std::string& attribute) {
  const data::DomainManifest mani = data::load_manifest(root, 'A');
  const data::AttributeSpec* spec = nullptr;
  std::string known;
  for (const auto& a : mani.attributes) {
    if (!known.empty()) known += ", ";
    known += a.name;
    if (a.name == attribute) spec = &a;
  }
  if (spec == nullptr)
    throw DataError(cat("attribute \"", attribute, "\" not in dataset ", root,
                        " (has: ", known, ")"));
  std::vector<LabeledImage> out;
  for (char domain : {'A', 'B'}) {
    for (const auto& rec : data::load_domain(root, domain)) {
      const std::string& value = rec.labels.at(attribute);
      const auto it =
          std::find(spec->values.begin(), spec->values.end(), value);
      if (it == spec->values.end())
        throw DataError(cat(rec.image_path, ": value \"", value,
                            "\" not in attribute \"", attribute, "\""));
      LabeledImage li;
      li.image = data::load_record_image(root, rec);
      li.label = int(it - spec->values.begin());
      out.push_back(std::move(li));
    }
  }
  return {std::move(out), *spec};
}

Classifier train_attribute_classifier(const std::vector<LabeledImage>& data,
                                      const data::AttributeSpec& attribute,
                                      int epochs, uint64_t seed,
                                      ClassifierHyper hyper) {
  if (epochs < 1) throw ConfigError(cat("epochs must be >= 1, got ", epochs));
  hyper.n_classes = int(attribute.values.size());
  hyper.validate();
  check_samples(data, hyper);

  const int n = int(data.size());
  auto [train_idx, val_idx] = split_indices(n, hyper.val_fraction, seed);
  std::set<int> train_labels;
  for (int i : train_idx) train_labels.insert(data[size_t(i)].label);
  if (train_labels.size() < 2)
    throw DataError(cat("training split holds ", train_labels.size(),
                        " distinct class(es); need >= 2"));

  Classifier cls = Classifier::create(hyper, attribute, seed);
  const std::vector<ag::Param<float>*> ps = cls.params();
  const ag::AdamConfig adam{hyper.lr, 0.9, 0.999, 1e-8};
  int64_t step = 0;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const std::vector<int> order =
        shuffled(train_idx, Philox(seed, uint64_t(epoch)));
    for (size_t at = 0; at < order.size(); at += size_t(hyper.batch_size)) {
      const size_t stop =
          std::min(order.size(), at + size_t(hyper.batch_size));
      std::vector<Array<float>> images;
      std::vector<int> labels;
      for (size_t i = at; i < stop; ++i) {
        images.push_back(data[size_t(order[i])].image);
        labels.push_back(data[size_t(order[i])].label);
      }
      ag::Tape<float> t;
      const int logits = cls.forward_logits(t, t.leaf(img::stack(images)),
                                            /*train=*/true);
      const int loss = t.softmax_xent(logits, labels);
      ag::zero_grads(ps);
      t.backward(loss);
      ++step;
      ag::adam_update(ps, adam, step);
    }
  }

  const std::vector<int>& eval_idx = val_idx.empty() ? train_idx : val_idx;
  cls.val_accuracy = eval_accuracy(
      [&cls](ag::Tape<float>& t, int x) {
        return cls.forward_logits(t, x, /*train=*/false);
      },
      data, eval_idx, hyper.batch_size);
  return cls;
}

ReducedHead finetune_reduction(Classifier& classifier,
                               const std::vector<LabeledImage>& data, int d,
                               int epochs) {
  if (d < 1) throw ConfigError(cat("reduction dim must be >= 1, got ", d));
  if (epochs < 1) throw ConfigError(cat("epochs must be >= 1, got ", epochs));
  const ClassifierHyper& h = classifier.hyper;
  check_samples(data, h);

  // The backbone is frozen, so its tap features are constants: compute them
  // once and train the reduction + head on the cache.
  const int n = int(data.size());
  std::vector<Array<float>> taps(static_cast<size_t>(n));
  for (int at = 0; at < n; at += h.batch_size) {
    const int stop = std::min(n, at + h.batch_size);
    std::vector<Array<float>> images;
    for (int i = at; i < stop; ++i) images.push_back(data[size_t(i)].image);
    ag::Tape<float> t;
    t.set_grad_enabled(false);
    const int tap = classifier.forward_tap(t, t.leaf(img::stack(images)),
                                           /*train=*/false);
    const Array<float>& tv = t.val(tap);
    for (int i = at; i < stop; ++i) taps[size_t(i)] = img::slice(tv, i - at);
  }

  auto [train_idx, val_idx] = split_indices(n, h.val_fraction, classifier.seed);

  ReducedHead rh;
  rh.reduction = ag::Conv2d<float>("ext.reduce", h.tap_channels(), d,
                                   /*k=*/1, /*stride=*/1, /*pad=*/0);
  rh.head = ag::Dense<float>("ext.head", d, h.n_classes);
  Philox init_rng(classifier.seed, (uint64_t(d) << 32) | 0xFFFFFFFFull);
  rh.reduction.init(init_rng, std::sqrt(2.0 / double(h.tap_channels())));
  rh.head.init(init_rng, std::sqrt(2.0 / double(d)));
  std::vector<ag::Param<float>*> ps;
  rh.reduction.collect(ps);
  rh.head.collect(ps);

  auto forward = [&rh](ag::Tape<float>& t, int f, bool train) {
    return t.linear(t.gap(t.conv2d(f, rh.reduction, train)), rh.head, train);
  };

  const ag::AdamConfig adam{h.lr, 0.9, 0.999, 1e-8};
  int64_t step = 0;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const std::vector<int> order = shuffled(
        train_idx,
        Philox(classifier.seed, (uint64_t(d) << 32) | uint64_t(epoch)));
    for (size_t at = 0; at < order.size(); at += size_t(h.batch_size)) {
      const size_t stop = std::min(order.size(), at + size_t(h.batch_size));
      std::vector<Array<float>> feats;
      std::vector<int> labels;
      for (size_t i = at; i < stop; ++i) {
        feats.push_back(taps[size_t(order[i])]);
        labels.push_back(data[size_t(order[i])].label);
      }
      ag::Tape<float> t;
      const int logits = forward(t, t.leaf(img::stack(feats)), true);
      const int loss = t.softmax_xent(logits, labels);
      ag::zero_grads(ps);
      t.backward(loss);
      ++step;
      ag::adam_update(ps, adam, step);
    }
  }

  const std::vector<int>& eval_idx = val_idx.empty() ? train_idx : val_idx;
  int64_t correct = 0;
  for (size_t at = 0; at < eval_idx.size(); at += size_t(h.batch_size)) {
    const size_t stop = std::min(eval_idx.size(), at + size_t(h.batch_size));
    std::vector<Array<float>> feats;
    for (size_t i = at; i < stop; ++i)
      feats.push_back(taps[size_t(eval_idx[i])]);
    ag::Tape<float> t;
    t.set_grad_enabled(false);
    const int logits = forward(t, t.leaf(img::stack(feats)), false);
    const Array<float>& lv = t.val(logits);
    for (size_t i = at; i < stop; ++i) {
      const float* row = lv.v.data() + int64_t(i - at) * lv.dim(1);
      int best = 0;
      for (int c = 1; c < lv.dim(1); ++c)
        if (row[c] > row[best]) best = c;
      if (best == data[size_t(eval_idx[i])].label) ++correct;
    }
  }
  rh.accuracy = 100.0 * double(correct) / double(eval_idx.size());
  return rh;
}

SweepResult sweep_reduction_dim(Classifier& classifier,
                                const std::vector<LabeledImage>& data,
                                const std::vector<int>& grid, int epochs) {
  if (grid.empty()) throw ConfigError("reduction sweep grid is empty");
  for (size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 1)
      throw ConfigError(cat("grid[", i, "] must be >= 1, got ", grid[i]));
    if (i > 0 && grid[i] <= grid[i - 1])
      throw ConfigError(cat("grid must be strictly increasing; grid[", i - 1,
                            "]=", grid[i - 1], " >= grid[", i, "]=", grid[i]));
  }
  SweepResult s;
  s.grid = grid;
  for (int d : grid)
    s.accuracy[d] = finetune_reduction(classifier, data, d, epochs).accuracy;
  return s;
}

int select_reduction_dim(const SweepResult& sweep, double tau) {
  if (sweep.grid.empty()) throw ConfigError("sweep grid is empty");
  if (!(tau >= 0.0)) throw ConfigError(cat("tau must be >= 0, got ", tau));
  double best = 0.0;
  bool first = true;
  for (int d : sweep.grid) {
    const auto it = sweep.accuracy.find(d);
    if (it == sweep.accuracy.end())
      throw ConfigError(cat("sweep has no accuracy for D=", d));
    if (first || it->second > best) best = it->second;
    first = false;
  }
  for (int d : sweep.grid)
    if (sweep.accuracy.at(d) >= best - tau) return d;
  return sweep.grid.back();  // unreachable: the best entry always qualifies
}

int SemanticExtractor::forward(ag::Tape<float>& t, int x) {
  int h = x;
  for (auto& conv : backbone)
    h = t.relu(t.conv2d(h, conv, /*train_params=*/false));
  // The reduction is linear on purpose: its output feeds a distance, not a
  // classifier, and clipping negatives there would discard feature contrast.
  return t.conv2d(h, reduction, /*train_params=*/false);
}

Array<float> SemanticExtractor::extract(const Array<float>& images) {
  if (images.ndim() != 4)
    throw ShapeError(cat("extract expects a (N,C,H,W) batch, got ",
                         shape_str(images.shape)));
  ag::Tape<float> t;
  t.set_grad_enabled(false);
  return t.val(forward(t, t.leaf(images)));
}

SemanticExtractor build_extractor(Classifier& classifier,
                                  const std::vector<LabeledImage>& data,
                                  int d, int epochs) {
  ReducedHead rh = finetune_reduction(classifier, data, d, epochs);
  SemanticExtractor e;
  e.hyper = classifier.hyper;
  e.attribute = classifier.attribute;
  e.tap_point = classifier.tap_point;
  e.d = d;
  e.accuracy = rh.accuracy;
  e.backbone.assign(classifier.convs.begin(),
                    classifier.convs.begin() + classifier.hyper.tap_stage);
  e.reduction = rh.reduction;
  // Frozen: drop every trace of optimization state.
  std::vector<ag::Param<float>*> ps;
  for (auto& conv : e.backbone) conv.collect(ps);
  e.reduction.collect(ps);
  for (auto* p : ps) {
    p->grad = Array<float>();
    p->adam_m = Array<float>();
    p->adam_v = Array<float>();
  }
  return e;
}

namespace {

Json sweep_to_json(const SweepResult& sweep) {
  Json j;
  j["grid"] = sweep.grid;
  Json acc = Json::object();
  for (int d : sweep.grid) {
    const auto it = sweep.accuracy.find(d);
    if (it != sweep.accuracy.end()) acc[std::to_string(d)] = it->second;
  }
  j["accuracy"] = acc;
  return j;
}

Json hyper_to_json(const ClassifierHyper& h) {
  Json j;
  j["image_size"] = h.image_size;
  j["in_channels"] = h.in_channels;
  j["channels"] = h.channels;
  j["kernel"] = h.kernel;
  j["n_classes"] = h.n_classes;
  j["tap_stage"] = h.tap_stage;
  j["lr"] = h.lr;
  j["batch_size"] = h.batch_size;
  j["val_fraction"] = h.val_fraction;
  return j;
}

ClassifierHyper hyper_from_json(const Json& j) {
  ClassifierHyper h;
  h.image_size = json_get<int>(j, "image_size");
  h.in_channels = json_get<int>(j, "in_channels");
  h.channels = json_get<std::vector<int>>(j, "channels");
  h.kernel = json_get<int>(j, "kernel");
  h.n_classes = json_get<int>(j, "n_classes");
  h.tap_stage = json_get<int>(j, "tap_stage");
  h.lr = json_get<double>(j, "lr");
  h.batch_size = json_get<int>(j, "batch_size");
  h.val_fraction = json_get<double>(j, "val_fraction");
  h.validate();
  return h;
}

}  // namespace

void save_extractor(const std::string& path, const SemanticExtractor& e,
                    double tau, const SweepResult& sweep) {
  if (e.d < 1) throw StateError("extractor has no reduction dimension");
  ckpt::Archive a;
  a.kind = "extractor";
  a.meta["hyperparameters"] = hyper_to_json(e.hyper);
  a.meta["attribute"] = attribute_to_json(e.attribute);
  a.meta["tap_point"] = e.tap_point;
  a.meta["d"] = e.d;
  a.meta["accuracy"] = e.accuracy;

  SemanticExtractor copy = e;  // pack_params wants mutable params
  std::vector<ag::Param<float>*> ps;
  for (auto& conv : copy.backbone) conv.collect(ps);
  copy.reduction.collect(ps);
  ckpt::pack_params(a, ps);
  ckpt::write_archive(path, a);

  Json side;
  side["attribute"] = attribute_to_json(e.attribute);
  side["d"] = e.d;
  side["tau"] = tau;
  side["sweep"] = sweep_to_json(sweep);
  side["accuracy"] = e.accuracy;
  const std::string side_path = path + ".json";
  std::ofstream out(side_path, std::ios::binary);
  if (!out) throw IoError(cat("cannot open ", side_path, " for writing"));
  out << side.dump(2) << '\n';
  out.flush();
  if (!out) throw IoError(cat("short write to ", side_path));
}

SemanticExtractor load_extractor(const std::string& path) {
  const ckpt::Archive a = ckpt::read_archive(path);
  if (a.kind != "extractor")
    throw CheckpointError(cat(path, ": kind \"", a.kind,
                              "\" is not an extractor archive"));
  SemanticExtractor e;
  try {
    e.hyper = hyper_from_json(json_get<Json>(a.meta, "hyperparameters"));
    e.attribute = attribute_from_json(json_get<Json>(a.meta, "attribute"));
    e.tap_point = json_get<std::string>(a.meta, "tap_point");
    e.d = json_get<int>(a.meta, "d");
    e.accuracy = json_get<double>(a.meta, "accuracy");
    if (e.d < 1)
      throw ConfigError(cat("reduction dim must be >= 1, got ", e.d));
  } catch (const std::exception& ex) {
    throw CheckpointError(cat(path, ": bad extractor metadata: ", ex.what()));
  }
  int in = e.hyper.in_channels;
  for (int i = 0; i < e.hyper.tap_stage; ++i) {
    e.backbone.emplace_back(cat("cls.conv", i + 1), in,
                            e.hyper.channels[size_t(i)], e.hyper.kernel,
                            /*stride=*/2, /*pad=*/e.hyper.kernel / 2);
    in = e.hyper.channels[size_t(i)];
  }
  e.reduction = ag::Conv2d<float>("ext.reduce", e.hyper.tap_channels(), e.d,
                                  /*k=*/1, /*stride=*/1, /*pad=*/0);
  std::vector<ag::Param<float>*> ps;
  for (auto& conv : e.backbone) conv.collect(ps);
  e.reduction.collect(ps);
  ckpt::unpack_params(a, ps);
  return e;
}

}  // namespace udit::semext
