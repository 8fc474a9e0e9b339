#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "udit/checkpoint.hpp"
#include "udit/common.hpp"
#include "udit/nets.hpp"
#include "udit/rng.hpp"
#include "udit/sha256.hpp"

using udit::Array;
using udit::Philox;
using udit::ckpt::Archive;
using udit::nets::NetHyper;
using udit::nets::TranslationModel;

namespace {

namespace fs = std::filesystem;

// Unique scratch directory per test case, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("udit_ckpt_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

NetHyper tiny_hyper() {
  NetHyper h;
  h.image_size = 16;
  h.base_channels = 2;
  h.style_dim = 2;
  h.n_res = 1;
  h.stem_kernel = 3;
  h.res_kernel = 1;
  h.style_down_kernel = 4;
  h.n_scales = 2;
  h.d_base_channels = 2;
  h.d_layers = 2;
  return h;
}

bool bit_equal(const Array<float>& a, const Array<float>& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data(), b.data(), size_t(a.numel()) * sizeof(float)) ==
             0;
}

// Flips one byte at `pos` (from file start if pos >= 0, else from the end).
void corrupt_byte(const std::string& path, int64_t pos) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  REQUIRE(bool(f));
  f.seekg(0, std::ios::end);
  int64_t size = f.tellg();
  int64_t at = pos >= 0 ? pos : size + pos;
  f.seekg(at);
  char c = 0;
  f.read(&c, 1);
  c = char(c ^ 0xFF);
  f.seekp(at);
  f.write(&c, 1);
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("generic archive round-trips names, meta, and exact bytes") {
  TempDir dir("generic");
  Philox rng(901, 0);
  Archive a;
  a.kind = "extractor";
  a.meta["note"] = "anything";
  a.meta["depth"] = 7;
  Array<float> w1({3, 2, 5, 5});
  Array<float> w2({4});
  for (auto& v : w1.v) v = float(rng.normal());
  for (auto& v : w2.v) v = float(rng.normal());
  a.arrays.emplace_back("w1", w1);
  a.arrays.emplace_back("w2", w2);

  std::string path = dir.file("a.udit");
  udit::ckpt::write_archive(path, a);
  Archive b = udit::ckpt::read_archive(path);

  CHECK(b.kind == "extractor");
  CHECK(b.meta["note"] == "anything");
  CHECK(b.meta["depth"] == 7);
  REQUIRE(b.arrays.size() == 2);
  CHECK(b.arrays[0].first == "w1");
  CHECK(bit_equal(b.arrays[0].second, w1));
  CHECK(bit_equal(b.arrays[1].second, w2));
  CHECK(b.find("w2") != nullptr);
  CHECK(b.find("missing") == nullptr);
}

TEST_CASE("same archive saves to byte-identical files") {
  TempDir dir("determinism");
  Archive a;
  a.kind = "translator";
  a.meta["seed"] = 11;
  Array<float> w({2, 3});
  w.fill(0.25f);
  a.arrays.emplace_back("w", w);
  udit::ckpt::write_archive(dir.file("one.udit"), a);
  udit::ckpt::write_archive(dir.file("two.udit"), a);
  CHECK(udit::sha256_file_hex(dir.file("one.udit")) ==
        udit::sha256_file_hex(dir.file("two.udit")));
}

TEST_CASE("duplicate and empty arrays are rejected before writing") {
  TempDir dir("badwrite");
  Archive dup;
  dup.kind = "x";
  Array<float> w({1});
  w.fill(1.f);
  dup.arrays.emplace_back("w", w);
  dup.arrays.emplace_back("w", w);
  CHECK_THROWS_AS(udit::ckpt::write_archive(dir.file("d.udit"), dup),
                  udit::CheckpointError);
  CHECK(!fs::exists(dir.file("d.udit")));
}

TEST_CASE("model checkpoint round-trips bit-exactly") {
  TempDir dir("model");
  auto m = TranslationModel<float>::create(tiny_hyper(), {}, 42);
  m.iteration = 17;
  m.weights.lambda_u = 2.5;

  // Give some parameters optimizer state so it participates too.
  auto params = m.all_params();
  Philox rng(902, 0);
  for (size_t i = 0; i < params.size(); i += 3) {
    params[i]->ensure_adam();
    for (auto& v : params[i]->adam_m.v) v = float(rng.normal());
    for (auto& v : params[i]->adam_v.v) v = float(rng.uniform());
  }

  std::string path = dir.file("ckpt.udit");
  udit::ckpt::save_model(path, m);
  auto r = udit::ckpt::load_model(path);

  CHECK(r.hyper.image_size == 16);
  CHECK(r.hyper.base_channels == 2);
  CHECK(r.hyper.use_pooling_indices == true);
  CHECK(r.weights.lambda_u == 2.5);
  CHECK(r.weights.lambda_x == 10.0);
  CHECK(r.seed == 42);
  CHECK(r.iteration == 17);

  auto rp = r.all_params();
  REQUIRE(rp.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(rp[i]->name == params[i]->name);
    CHECK(bit_equal(rp[i]->value, params[i]->value));
    CHECK(rp[i]->adam_m.empty() == params[i]->adam_m.empty());
    if (!rp[i]->adam_m.empty()) {
      CHECK(bit_equal(rp[i]->adam_m, params[i]->adam_m));
      CHECK(bit_equal(rp[i]->adam_v, params[i]->adam_v));
    }
  }
}

TEST_CASE("missing file raises an I/O error") {
  CHECK_THROWS_AS(udit::ckpt::read_archive("/nonexistent/nope.udit"),
                  udit::IoError);
  CHECK_THROWS_AS(udit::ckpt::load_model("/nonexistent/nope.udit"),
                  udit::IoError);
}

TEST_CASE("corrupt files are rejected") {
  TempDir dir("corrupt");
  auto m = TranslationModel<float>::create(tiny_hyper(), {}, 7);
  std::string path = dir.file("c.udit");

  SUBCASE("bad magic") {
    udit::ckpt::save_model(path, m);
    corrupt_byte(path, 0);
    CHECK_THROWS_AS(udit::ckpt::read_archive(path), udit::CheckpointError);
  }
  SUBCASE("corrupt manifest JSON") {
    udit::ckpt::save_model(path, m);
    corrupt_byte(path, 17);  // inside the manifest text
    CHECK_THROWS_AS(udit::ckpt::read_archive(path), udit::CheckpointError);
  }
  SUBCASE("truncated payload") {
    udit::ckpt::save_model(path, m);
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 64);
    CHECK_THROWS_AS(udit::ckpt::read_archive(path), udit::CheckpointError);
  }
  SUBCASE("trailing garbage") {
    udit::ckpt::save_model(path, m);
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.write("xx", 2);
    f.close();
    CHECK_THROWS_AS(udit::ckpt::read_archive(path), udit::CheckpointError);
  }
  SUBCASE("not even a header") {
    std::ofstream f(path, std::ios::binary);
    f.write("UD", 2);
    f.close();
    CHECK_THROWS_AS(udit::ckpt::read_archive(path), udit::CheckpointError);
  }
}

TEST_CASE("loading verifies kind, shapes, and completeness") {
  TempDir dir("verify");
  auto m = TranslationModel<float>::create(tiny_hyper(), {}, 7);
  std::string path = dir.file("v.udit");

  SUBCASE("wrong kind") {
    Archive a;
    a.kind = "extractor";
    a.meta["hyperparameters"] = udit::hyper_to_json(m.hyper);
    a.meta["loss_weights"] = udit::weights_to_json(m.weights);
    a.meta["seed"] = 7;
    a.meta["iteration"] = 0;
    udit::ckpt::pack_params(a, m.all_params());
    udit::ckpt::write_archive(path, a);
    CHECK_THROWS_AS(udit::ckpt::load_model(path), udit::CheckpointError);
  }
  SUBCASE("shape mismatch against the manifest's own hyperparameters") {
    udit::ckpt::save_model(path, m);
    Archive a = udit::ckpt::read_archive(path);
    // Claim a wider model than the stored arrays.
    a.meta["hyperparameters"]["base_channels"] = 4;
    udit::ckpt::write_archive(path, a);
    CHECK_THROWS_AS(udit::ckpt::load_model(path), udit::CheckpointError);
  }
  SUBCASE("missing parameter") {
    udit::ckpt::save_model(path, m);
    Archive a = udit::ckpt::read_archive(path);
    a.arrays.erase(a.arrays.begin() + 2);
    udit::ckpt::write_archive(path, a);
    CHECK_THROWS_AS(udit::ckpt::load_model(path), udit::CheckpointError);
  }
  SUBCASE("unexpected extra array") {
    udit::ckpt::save_model(path, m);
    Archive a = udit::ckpt::read_archive(path);
    Array<float> junk({3});
    junk.fill(1.f);
    a.arrays.emplace_back("stowaway", junk);
    udit::ckpt::write_archive(path, a);
    CHECK_THROWS_AS(udit::ckpt::load_model(path), udit::CheckpointError);
  }
  SUBCASE("partial optimizer state") {
    udit::ckpt::save_model(path, m);
    Archive a = udit::ckpt::read_archive(path);
    Array<float> mom(m.all_params()[0]->value.shape);
    mom.fill(0.5f);
    a.arrays.emplace_back(m.all_params()[0]->name + "#m", mom);
    udit::ckpt::write_archive(path, a);
    CHECK_THROWS_AS(udit::ckpt::load_model(path), udit::CheckpointError);
  }
  SUBCASE("malformed metadata") {
    udit::ckpt::save_model(path, m);
    Archive a = udit::ckpt::read_archive(path);
    a.meta.erase("loss_weights");
    udit::ckpt::write_archive(path, a);
    CHECK_THROWS_AS(udit::ckpt::load_model(path), udit::CheckpointError);
  }
}

TEST_CASE("baseline configuration (no pooling indices) survives the trip") {
  TempDir dir("baseline");
  NetHyper h = tiny_hyper();
  h.use_pooling_indices = false;
  udit::losses::LossWeights w;
  w.lambda_u = 0.0;
  auto m = TranslationModel<float>::create(h, w, 3);
  std::string path = dir.file("b.udit");
  udit::ckpt::save_model(path, m);
  auto r = udit::ckpt::load_model(path);
  CHECK(r.hyper.use_pooling_indices == false);
  CHECK(r.weights.lambda_u == 0.0);
}

}  // TEST_SUITE
