#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "udit/checkpoint.hpp"
#include "udit/common.hpp"
#include "udit/datasets.hpp"
#include "udit/image.hpp"
#include "udit/rng.hpp"
#include "udit/sha256.hpp"
#include "udit/trainer.hpp"

using namespace udit;
using namespace udit::train;

namespace {

namespace fs = std::filesystem;

std::string temp_root(const std::string& tag) {
  return cat("/tmp/udit_trainer_", ::getpid(), "_", tag);
}

nets::NetHyper tiny_hyper(bool pooling_indices) {
  nets::NetHyper h;
  h.image_size = 64;
  h.base_channels = 4;
  h.style_dim = 3;
  h.n_res = 1;
  h.stem_kernel = 3;
  h.res_kernel = 3;
  h.style_down_kernel = 4;
  h.n_scales = 2;
  h.d_base_channels = 4;
  h.d_layers = 2;
  h.use_pooling_indices = pooling_indices;
  return h;
}

Array<float> random_batch(int n, const nets::NetHyper& h, uint64_t seed) {
  Array<float> x({n, h.in_channels, h.image_size, h.image_size});
  Philox rng(seed, 77);
  for (auto& v : x.v) v = float(rng.uniform(-0.9, 0.9));
  return x;
}

// Untrained but well-formed extractor compatible with 3x64x64 inputs.
semext::SemanticExtractor tiny_extractor(uint64_t seed) {
  semext::ClassifierHyper ch;
  ch.image_size = 64;
  ch.channels = {4, 8};
  ch.kernel = 3;
  ch.tap_stage = 2;
  data::AttributeSpec attr;
  attr.name = "shape";
  attr.values = {"circle", "square"};
  semext::Classifier cls = semext::Classifier::create(ch, attr, seed);
  semext::SemanticExtractor e;
  e.hyper = ch;
  e.attribute = attr;
  e.tap_point = cls.tap_point;
  e.d = 4;
  e.accuracy = 0.0;
  e.backbone = cls.convs;
  e.reduction = ag::Conv2d<float>("ext.reduce", 8, 4, 1, 1, 0);
  Philox rng(seed, 5);
  e.reduction.init(rng, 0.5);
  return e;
}

TrainState tiny_state(bool pooling_indices, double lambda_u, uint64_t seed) {
  TrainState st;
  losses::LossWeights w;
  w.lambda_u = lambda_u;
  st.model = nets::TranslationModel<float>::create(tiny_hyper(pooling_indices),
                                                   w, seed);
  st.lr_g = 1e-4;
  st.lr_d = 1e-4;
  if (lambda_u > 0.0) {
    st.extractor = tiny_extractor(seed + 1);
    st.use_extractor = true;
  }
  return st;
}

bool params_bit_equal(std::vector<ag::Param<float>*> a,
                      std::vector<ag::Param<float>*> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i]->value.shape != b[i]->value.shape) return false;
    if (std::memcmp(a[i]->value.v.data(), b[i]->value.v.data(),
                    a[i]->value.v.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& tag) : path(temp_root(tag)) {
    fs::remove_all(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Shared tiny dataset for the end-to-end train() cases.
const std::string& shared_dataset() {
  static const std::string root = [] {
    std::string r = temp_root("ds");
    fs::remove_all(r);
    data::generate_biased_shapes(
        data::BiasedDatasetConfig::default_biased(99, 64, 6, 2), r);
    return r;
  }();
  return root;
}

TrainConfig base_config(const std::string& out_dir, double lambda_u,
                        const std::string& extractor_path) {
  TrainConfig cfg;
  cfg.dataset_root = shared_dataset();
  cfg.out_dir = out_dir;
  cfg.network = tiny_hyper(lambda_u > 0.0);
  cfg.weights.lambda_u = lambda_u;
  cfg.extractor_path = extractor_path;
  cfg.iterations = 4;
  cfg.batch_size = 2;
  cfg.seed = 31;
  cfg.checkpoint_every = 2;
  cfg.log_every = 1;
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config validation and JSON round-trip") {
  TrainConfig cfg;
  cfg.dataset_root = "/tmp/x";
  cfg.out_dir = "/tmp/y";
  cfg.weights.lambda_u = 0.0;
  CHECK_NOTHROW(cfg.validate());

  SUBCASE("round-trip preserves every field") {
    cfg.network = tiny_hyper(false);
    cfg.extractor_path = "somewhere.udit";
    cfg.weights.lambda_u = 2.5;
    cfg.iterations = 123;
    cfg.batch_size = 7;
    cfg.lr_g = 2e-4;
    cfg.lr_d = 3e-4;
    cfg.seed = 0xDEADBEEFull;
    cfg.checkpoint_every = 11;
    cfg.log_every = 3;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
  }
  SUBCASE("partial JSON keeps defaults") {
    const TrainConfig c = TrainConfig::from_json(
        json_parse(R"({"dataset_root":"d","out_dir":"o"})", "cfg"));
    CHECK(c.dataset_root == "d");
    CHECK(c.iterations == 5000);
    CHECK(c.batch_size == 4);
    CHECK(c.network.base_channels == 64);
  }
  SUBCASE("semantic weight demands an extractor path") {
    cfg.weights.lambda_u = 1.0;
    cfg.extractor_path.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.extractor_path = "e.udit";
    CHECK_NOTHROW(cfg.validate());
  }
  SUBCASE("bad scalars") {
    TrainConfig bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.lr_g = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.checkpoint_every = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.dataset_root.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("one step updates the translator and logs a finite breakdown") {
  TrainState st = tiny_state(true, 0.0, 7);
  const Array<float> xa = random_batch(2, st.model.hyper, 1);
  const Array<float> xb = random_batch(2, st.model.hyper, 2);

  TrainState before = tiny_state(true, 0.0, 7);
  const StepLog log = train_step(st, xa, xb);

  CHECK(log.iteration == 1);
  CHECK(st.model.iteration == 1);
  CHECK(log.g.finite());
  CHECK(std::isfinite(log.d_A));
  CHECK(std::isfinite(log.d_B));
  for (double v : {log.g.gan_A, log.g.gan_B, log.g.recon_x_A, log.g.recon_x_B,
                   log.g.recon_c_A, log.g.recon_c_B, log.g.recon_s_A,
                   log.g.recon_s_B, log.d_A, log.d_B})
    CHECK(v >= 0.0);

  SUBCASE("lambda_u = 0 leaves the semantic terms at zero") {
    CHECK(log.g.sem_A == 0.0);
    CHECK(log.g.sem_B == 0.0);
  }
  SUBCASE("total equals the weighted recombination") {
    const double recomputed = losses::weighted_total(log.g, st.model.weights);
    CHECK(std::abs(log.g.total - recomputed) <=
          1e-5 * std::max(1.0, std::abs(recomputed)));
  }
  SUBCASE("generator and discriminator parameters both moved") {
    CHECK_FALSE(params_bit_equal(st.model.generator_params(),
                                 before.model.generator_params()));
    CHECK_FALSE(params_bit_equal(st.model.discriminator_params(),
                                 before.model.discriminator_params()));
  }
  SUBCASE("the log line is one JSON object with every field") {
    const Json j = json_parse(log.to_json_line(), "log line");
    CHECK(j.at("iteration") == 1);
    CHECK(j.contains("d_A"));
    CHECK(j.contains("gan_A"));
    CHECK(j.contains("recon_s_B"));
    CHECK(j.contains("sem_B"));
    CHECK(j.contains("total"));
  }
}

TEST_CASE("steps are deterministic given seed and state") {
  const Array<float> xa = random_batch(2, tiny_hyper(true), 11);
  const Array<float> xb = random_batch(2, tiny_hyper(true), 12);

  TrainState s1 = tiny_state(true, 0.0, 21);
  TrainState s2 = tiny_state(true, 0.0, 21);
  for (int k = 0; k < 2; ++k) {
    const StepLog l1 = train_step(s1, xa, xb);
    const StepLog l2 = train_step(s2, xa, xb);
    CHECK(l1.to_json_line() == l2.to_json_line());
  }
  CHECK(params_bit_equal(s1.model.all_params(), s2.model.all_params()));

  SUBCASE("different seeds diverge") {
    TrainState s3 = tiny_state(true, 0.0, 22);
    const StepLog l3 = train_step(s3, xa, xb);
    const StepLog l1 = train_step(s1, xa, xb);
    CHECK(l3.to_json_line() != l1.to_json_line());
  }
}

TEST_CASE("semantic constraint trains against a frozen extractor") {
  TrainState st = tiny_state(true, 1.0, 33);
  const Array<float> xa = random_batch(2, st.model.hyper, 3);
  const Array<float> xb = random_batch(2, st.model.hyper, 4);

  std::vector<ag::Param<float>*> eps;
  for (auto& conv : st.extractor.backbone) conv.collect(eps);
  st.extractor.reduction.collect(eps);
  std::vector<Array<float>> snapshot;
  for (auto* p : eps) snapshot.push_back(p->value);

  const StepLog log = train_step(st, xa, xb);
  CHECK(log.g.sem_A > 0.0);
  CHECK(log.g.sem_B > 0.0);

  for (size_t i = 0; i < eps.size(); ++i) {
    CHECK(eps[i]->value.shape == snapshot[i].shape);
    CHECK(std::memcmp(eps[i]->value.v.data(), snapshot[i].v.data(),
                      snapshot[i].v.size() * sizeof(float)) == 0);
    CHECK(eps[i]->grad.empty());
  }

  SUBCASE("missing extractor with positive weight is a state error") {
    TrainState bad = tiny_state(true, 1.0, 33);
    bad.use_extractor = false;
    CHECK_THROWS_AS(train_step(bad, xa, xb), StateError);
  }
}

TEST_CASE("non-finite losses abort with the breakdown attached") {
  TrainState st = tiny_state(false, 0.0, 41);
  const Array<float> xa = random_batch(2, st.model.hyper, 5);
  const Array<float> xb = random_batch(2, st.model.hyper, 6);
  st.model.generator_params()[0]->value.v[0] =
      std::numeric_limits<float>::quiet_NaN();
  try {
    train_step(st, xa, xb);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    const Json j = json_parse(e.breakdown_json(), "breakdown");
    CHECK(j.contains("total"));
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
}

TEST_CASE("mismatched batches are rejected") {
  TrainState st = tiny_state(true, 0.0, 51);
  const Array<float> xa = random_batch(2, st.model.hyper, 7);
  const Array<float> xb = random_batch(3, st.model.hyper, 8);
  CHECK_THROWS_AS(train_step(st, xa, xb), ShapeError);
  Array<float> wrong({2, 3, 32, 32});
  CHECK_THROWS_AS(train_step(st, wrong, wrong), ShapeError);
}

TEST_CASE("translate draws k deterministic stylizations") {
  TrainState st = tiny_state(true, 0.0, 61);
  const Array<float> image =
      img::slice(random_batch(1, st.model.hyper, 9), 0);

  const std::vector<Array<float>> one = translate(st.model, image, 0, 1, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0].shape == image.shape);
  for (float v : one[0].v) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }

  const std::vector<Array<float>> k1 = translate(st.model, image, 0, 3, 5);
  const std::vector<Array<float>> k2 = translate(st.model, image, 0, 3, 5);
  REQUIRE(k1.size() == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(std::memcmp(k1[size_t(i)].v.data(), k2[size_t(i)].v.data(),
                      k1[size_t(i)].v.size() * sizeof(float)) == 0);

  SUBCASE("different seeds give different styles") {
    const std::vector<Array<float>> other = translate(st.model, image, 0, 3, 6);
    double diff = 0.0;
    for (size_t i = 0; i < other[0].v.size(); ++i)
      diff += std::abs(double(other[0].v[i]) - double(k1[0].v[i]));
    CHECK(diff > 0.0);
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(translate(st.model, image, 2, 1, 5), ConfigError);
    CHECK_THROWS_AS(translate(st.model, image, 0, 0, 5), ConfigError);
    Array<float> flat({3, 32, 32});
    CHECK_THROWS_AS(translate(st.model, flat, 0, 1, 5), ShapeError);
  }
}

TEST_CASE("train() writes cadence checkpoints, a final one, and a log") {
  TempDir out("run_counting");
  TrainConfig cfg = base_config(out.path, 0.0, "");
  cfg.iterations = 2;
  cfg.checkpoint_every = 1;

  const std::string final_path = train::train(cfg);
  CHECK(final_path == (fs::path(out.path) / "ckpt_final.udit").string());
  CHECK(fs::exists(fs::path(out.path) / "ckpt_000001.udit"));
  CHECK(fs::exists(fs::path(out.path) / "ckpt_000002.udit"));
  CHECK(fs::exists(final_path));

  const std::string log_text = slurp((fs::path(out.path) / "train_log.jsonl")
                                         .string());
  int lines = 0;
  for (char c : log_text) lines += c == '\n';
  CHECK(lines == 2);
  const Json first =
      json_parse(log_text.substr(0, log_text.find('\n')), "line");
  CHECK(first.at("iteration") == 1);

  SUBCASE("rerunning a finished run is an idempotent no-op") {
    const std::string again = train::train(cfg);
    CHECK(again == final_path);
    CHECK(slurp((fs::path(out.path) / "train_log.jsonl").string()) ==
          log_text);
  }
  SUBCASE("asking for fewer iterations than already trained fails") {
    TrainConfig shorter = cfg;
    shorter.iterations = 1;
    CHECK_THROWS_AS(train::train(shorter), ConfigError);
  }
  SUBCASE("a changed configuration cannot resume the directory") {
    TrainConfig changed = cfg;
    changed.iterations = 3;
    changed.seed = 32;
    CHECK_THROWS_AS(train::train(changed), ConfigError);
  }
}

TEST_CASE("resumed training reproduces the uninterrupted trace") {
  TempDir straight("run_straight");
  TempDir resumed("run_resumed");

  TrainConfig cfg_a = base_config(straight.path, 0.0, "");
  cfg_a.iterations = 6;
  cfg_a.checkpoint_every = 3;
  const std::string final_a = train::train(cfg_a);

  TrainConfig cfg_b = base_config(resumed.path, 0.0, "");
  cfg_b.iterations = 3;
  cfg_b.checkpoint_every = 3;
  train::train(cfg_b);
  cfg_b.iterations = 6;
  const std::string final_b = train::train(cfg_b);

  CHECK(slurp((fs::path(straight.path) / "train_log.jsonl").string()) ==
        slurp((fs::path(resumed.path) / "train_log.jsonl").string()));
  CHECK(sha256_file_hex(final_a) == sha256_file_hex(final_b));
}

TEST_CASE("train() with the semantic constraint end to end") {
  TempDir out("run_semantic");
  const std::string ext_path =
      (fs::path(out.path) / "extractor.udit").string();
  fs::create_directories(out.path);
  semext::SweepResult sweep;
  sweep.grid = {4};
  sweep.accuracy[4] = 99.0;
  semext::save_extractor(ext_path, tiny_extractor(77), 1.0, sweep);

  TrainConfig cfg = base_config((fs::path(out.path) / "run").string(), 1.0,
                                ext_path);
  cfg.iterations = 2;
  cfg.checkpoint_every = 2;
  const std::string final_path = train::train(cfg);

  const std::string log_text =
      slurp((fs::path(cfg.out_dir) / "train_log.jsonl").string());
  const Json first =
      json_parse(log_text.substr(0, log_text.find('\n')), "line");
  CHECK(double(first.at("sem_A")) > 0.0);
  CHECK(double(first.at("sem_B")) > 0.0);

  const nets::TranslationModel<float> m = ckpt::load_model(final_path);
  CHECK(m.iteration == 2);
  CHECK(m.weights.lambda_u == 1.0);

  SUBCASE("an extractor of the wrong geometry is refused") {
    semext::ClassifierHyper ch;
    ch.image_size = 128;
    ch.channels = {4, 8};
    ch.kernel = 3;
    ch.tap_stage = 2;
    semext::SemanticExtractor wrong = tiny_extractor(78);
    wrong.hyper = ch;
    const std::string wrong_path =
        (fs::path(out.path) / "wrong.udit").string();
    semext::save_extractor(wrong_path, wrong, 1.0, sweep);
    TrainConfig bad = cfg;
    bad.out_dir = (fs::path(out.path) / "run2").string();
    bad.extractor_path = wrong_path;
    CHECK_THROWS_AS(train::train(bad), ConfigError);
  }
}

TEST_CASE("train() refuses a broken dataset before any work") {
  TempDir out("run_badds");
  TrainConfig cfg = base_config(out.path, 0.0, "");
  cfg.dataset_root = temp_root("no_such_dataset");
  CHECK_THROWS_AS(train::train(cfg), DataError);
  CHECK_FALSE(fs::exists(fs::path(out.path) / "train_log.jsonl"));
}

}  // TEST_SUITE
