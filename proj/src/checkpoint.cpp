#include "udit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "udit/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive I/O writes raw little-endian words");

namespace udit::ckpt {
namespace {

constexpr char kMagic[8] = {'U', 'D', 'I', 'T', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::vector<int> shape_from_json(const Json& j) {
  require<CheckpointError>(j.is_array(), "array shape must be a JSON list");
  std::vector<int> shape;
  for (const auto& d : j) {
    require<CheckpointError>(d.is_number_integer() && d.get<int64_t>() > 0,
                             "array shape entries must be positive integers");
    shape.push_back(d.get<int>());
  }
  return shape;
}

}  // namespace

void write_archive(const std::string& path, const Archive& a) {
  std::set<std::string> seen;
  for (const auto& [name, arr] : a.arrays) {
    require<CheckpointError>(seen.insert(name).second,
                             "duplicate array name \"", name, "\"");
    require<CheckpointError>(!arr.empty(), "array \"", name, "\" is empty");
  }

  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["kind"] = a.kind;
  manifest["meta"] = a.meta;
  Json list = Json::array();
  uint64_t offset = 0;
  for (const auto& [name, arr] : a.arrays) {
    Json e;
    e["name"] = name;
    e["dtype"] = "f32";
    e["shape"] = arr.shape;
    e["offset"] = offset;
    list.push_back(std::move(e));
    offset += uint64_t(arr.numel()) * sizeof(float);
  }
  manifest["arrays"] = std::move(list);
  const std::string text = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require<IoError>(bool(os), "cannot open \"", tmp, "\" for writing");
    os.write(kMagic, sizeof kMagic);
    write_u64(os, text.size());
    os.write(text.data(), std::streamsize(text.size()));
    for (const auto& [name, arr] : a.arrays)
      os.write(reinterpret_cast<const char*>(arr.data()),
               std::streamsize(size_t(arr.numel()) * sizeof(float)));
    require<IoError>(bool(os), "write to \"", tmp, "\" failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require<IoError>(!ec, "cannot move \"", tmp, "\" to \"", path,
                   "\": ", ec.message());
}

Archive read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require<IoError>(bool(is), "cannot open \"", path, "\"");
  is.seekg(0, std::ios::end);
  const uint64_t file_size = uint64_t(is.tellg());
  is.seekg(0);

  char magic[sizeof kMagic];
  require<CheckpointError>(
      file_size >= sizeof kMagic + sizeof(uint64_t) &&
          bool(is.read(magic, sizeof magic)) &&
          std::memcmp(magic, kMagic, sizeof kMagic) == 0,
      "\"", path, "\" is not a checkpoint archive (bad magic)");

  uint64_t manifest_len = 0;
  is.read(reinterpret_cast<char*>(&manifest_len), sizeof manifest_len);
  const uint64_t header = sizeof kMagic + sizeof(uint64_t);
  require<CheckpointError>(bool(is) && manifest_len <= file_size - header,
                           "\"", path, "\" manifest length is corrupt");

  std::string text(manifest_len, '\0');
  is.read(text.data(), std::streamsize(manifest_len));
  require<CheckpointError>(bool(is), "\"", path, "\" manifest is truncated");

  Json manifest;
  try {
    manifest = Json::parse(text);
  } catch (const Json::exception& e) {
    fail<CheckpointError>("\"", path, "\" manifest is not valid JSON: ",
                          e.what());
  }
  require<CheckpointError>(
      manifest.is_object() && manifest.contains("format_version") &&
          manifest["format_version"].is_number_integer(),
      "\"", path, "\" manifest lacks format_version");
  const int version = manifest["format_version"].get<int>();
  require<CheckpointError>(version == kFormatVersion, "\"", path,
                           "\" has format_version ", version, ", expected ",
                           kFormatVersion);
  require<CheckpointError>(
      manifest.contains("kind") && manifest["kind"].is_string() &&
          manifest.contains("meta") && manifest.contains("arrays") &&
          manifest["arrays"].is_array(),
      "\"", path, "\" manifest lacks kind/meta/arrays");

  Archive a;
  a.kind = manifest["kind"].get<std::string>();
  a.meta = manifest["meta"];

  const uint64_t payload_start = header + manifest_len;
  uint64_t expect_offset = 0;
  for (const auto& e : manifest["arrays"]) {
    require<CheckpointError>(
        e.is_object() && e.contains("name") && e["name"].is_string() &&
            e.contains("dtype") && e.contains("shape") && e.contains("offset"),
        "\"", path, "\" has a malformed array entry");
    const std::string name = e["name"].get<std::string>();
    require<CheckpointError>(e["dtype"] == "f32", "array \"", name,
                             "\" has unsupported dtype");
    std::vector<int> shape = shape_from_json(e["shape"]);
    const uint64_t offset = e["offset"].get<uint64_t>();
    require<CheckpointError>(offset == expect_offset, "array \"", name,
                             "\" offset ", offset, " breaks payload layout");
    Array<float> arr(shape);
    const uint64_t bytes = uint64_t(arr.numel()) * sizeof(float);
    require<CheckpointError>(payload_start + offset + bytes <= file_size,
                             "array \"", name, "\" extends past end of file");
    is.seekg(std::streamoff(payload_start + offset));
    is.read(reinterpret_cast<char*>(arr.data()), std::streamsize(bytes));
    require<CheckpointError>(bool(is), "array \"", name, "\" is truncated");
    expect_offset = offset + bytes;
    a.arrays.emplace_back(name, std::move(arr));
  }
  require<CheckpointError>(payload_start + expect_offset == file_size, "\"",
                           path, "\" has trailing bytes after the payload");
  return a;
}

void pack_params(Archive& a, const std::vector<ag::Param<float>*>& params) {
  for (auto* p : params) {
    a.arrays.emplace_back(p->name, p->value);
    if (!p->adam_m.empty()) {
      a.arrays.emplace_back(p->name + "#m", p->adam_m);
      a.arrays.emplace_back(p->name + "#v", p->adam_v);
    }
  }
}

void unpack_params(const Archive& a,
                   const std::vector<ag::Param<float>*>& params) {
  std::set<std::string> expected;
  for (auto* p : params) {
    const Array<float>* v = a.find(p->name);
    require<CheckpointError>(v != nullptr, "archive lacks parameter \"",
                             p->name, "\"");
    require<CheckpointError>(
        v->shape == p->value.shape, "parameter \"", p->name,
        "\" shape mismatch: archive ", shape_str(v->shape), ", model ",
        shape_str(p->value.shape));
    p->value = *v;
    expected.insert(p->name);

    const Array<float>* m = a.find(p->name + "#m");
    const Array<float>* s = a.find(p->name + "#v");
    require<CheckpointError>((m == nullptr) == (s == nullptr),
                             "parameter \"", p->name,
                             "\" has partial optimizer state");
    if (m != nullptr) {
      require<CheckpointError>(
          m->shape == p->value.shape && s->shape == p->value.shape,
          "optimizer state for \"", p->name, "\" has wrong shape");
      p->adam_m = *m;
      p->adam_v = *s;
      expected.insert(p->name + "#m");
      expected.insert(p->name + "#v");
    }
  }
  for (const auto& [name, arr] : a.arrays)
    require<CheckpointError>(expected.count(name) != 0,
                             "archive has unexpected array \"", name, "\"");
}

void save_model(const std::string& path, nets::TranslationModel<float>& m) {
  Archive a;
  a.kind = "translator";
  a.meta["hyperparameters"] = hyper_to_json(m.hyper);
  a.meta["loss_weights"] = weights_to_json(m.weights);
  a.meta["seed"] = m.seed;
  a.meta["iteration"] = m.iteration;
  pack_params(a, m.all_params());
  write_archive(path, a);
}

nets::TranslationModel<float> load_model(const std::string& path) {
  Archive a = read_archive(path);
  require<CheckpointError>(a.kind == "translator", "\"", path, "\" holds a ",
                           a.kind.empty() ? "(unnamed)" : a.kind,
                           " archive, expected a translator");
  nets::NetHyper h;
  losses::LossWeights w;
  uint64_t seed = 0;
  int64_t iteration = 0;
  try {
    h = hyper_from_json(a.meta.at("hyperparameters"));
    w = weights_from_json(a.meta.at("loss_weights"));
    seed = json_get<uint64_t>(a.meta, "seed");
    iteration = json_get<int64_t>(a.meta, "iteration");
  } catch (const std::exception& e) {
    fail<CheckpointError>("\"", path, "\" has malformed metadata: ", e.what());
  }
  auto m = nets::TranslationModel<float>::create(h, w, seed);
  m.iteration = iteration;
  unpack_params(a, m.all_params());
  return m;
}

}  // namespace udit::ckpt
