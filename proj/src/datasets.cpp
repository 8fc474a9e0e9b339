#include "udit/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "udit/common.hpp"
#include "udit/rng.hpp"

namespace udit::data {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string kind_name(AttributeSpec::Kind k) {
  return k == AttributeSpec::Kind::kWanted ? "wanted" : "unwanted";
}

AttributeSpec::Kind kind_from(const std::string& s) {
  if (s == "wanted") return AttributeSpec::Kind::kWanted;
  if (s == "unwanted") return AttributeSpec::Kind::kUnwanted;
  fail<ConfigError>("attribute kind must be wanted or unwanted, got \"", s,
                    "\"");
}

bool clean_token(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') return false;
  return true;
}

// Splits a cell key ("circle,flat-blue") against the schema, returning
// attribute-name -> value. Throws E on arity or vocabulary violations.
template <typename E>
std::map<std::string, std::string> parse_cell(
    const std::string& key, const std::vector<AttributeSpec>& attrs) {
  auto parts = split(key, ',');
  require<E>(parts.size() == attrs.size(), "cell \"", key, "\" has ",
             parts.size(), " values for ", attrs.size(), " attributes");
  std::map<std::string, std::string> labels;
  for (size_t i = 0; i < attrs.size(); ++i) {
    const auto& vals = attrs[i].values;
    require<E>(std::find(vals.begin(), vals.end(), parts[i]) != vals.end(),
               "cell \"", key, "\": \"", parts[i],
               "\" is not a value of attribute \"", attrs[i].name, "\"");
    labels[attrs[i].name] = parts[i];
  }
  return labels;
}

// Per-wanted/unwanted marginal comparison: true when the two domains place
// identical proportions on every value of the attribute at `index`.
bool marginals_match(const DomainManifest& a, const DomainManifest& b,
                     size_t index) {
  auto tally = [index](const DomainManifest& m,
                       std::map<std::string, int64_t>& t) {
    for (const auto& [key, n] : m.counts) t[split(key, ',')[index]] += n;
  };
  std::map<std::string, int64_t> ta, tb;
  tally(a, ta);
  tally(b, tb);
  const int64_t na = a.total(), nb = b.total();
  std::set<std::string> values;
  for (const auto& [v, n] : ta) values.insert(v);
  for (const auto& [v, n] : tb) values.insert(v);
  for (const auto& v : values) {
    int64_t ca = ta.count(v) ? ta[v] : 0;
    int64_t cb = tb.count(v) ? tb[v] : 0;
    if (ca * nb != cb * na) return false;
  }
  return true;
}

struct Rgb {
  double r, g, b;
};

Rgb base_color(const std::string& color) {
  if (color == "blue") return {0.16, 0.35, 0.82};
  if (color == "red") return {0.82, 0.24, 0.14};
  fail<ConfigError>("renderer has no palette entry for color \"", color,
                    "\"");
}

// Renders one sample. Jitter draws happen in a fixed order so the output is
// a pure function of the RNG stream.
img::ImageU8 render_sample(int size, const std::string& shape,
                           const std::string& texture,
                           const std::string& color, const JitterRanges& jit,
                           Philox& rng) {
  const double cx = 0.5 + rng.uniform(-jit.center_frac, jit.center_frac);
  const double cy = 0.5 + rng.uniform(-jit.center_frac, jit.center_frac);
  const double rot =
      rng.uniform(-jit.rotation_deg, jit.rotation_deg) * (M_PI / 180.0);
  const double half = rng.uniform(jit.scale_lo, jit.scale_hi);
  const double hue[3] = {rng.uniform(-jit.hue_noise, jit.hue_noise),
                         rng.uniform(-jit.hue_noise, jit.hue_noise),
                         rng.uniform(-jit.hue_noise, jit.hue_noise)};
  const double bg =
      0.78 + rng.uniform(-jit.background_noise, jit.background_noise);
  const double phase = rng.uniform();

  Rgb base = base_color(color);
  auto clamp01 = [](double v) { return v < 0 ? 0.0 : (v > 1 ? 1.0 : v); };
  base.r = clamp01(base.r + hue[0]);
  base.g = clamp01(base.g + hue[1]);
  base.b = clamp01(base.b + hue[2]);

  const bool striped = texture == "striped";
  const bool is_circle = shape == "circle";
  require<ConfigError>(is_circle || shape == "square",
                       "renderer has no shape \"", shape, "\"");
  require<ConfigError>(striped || texture == "flat",
                       "renderer has no texture \"", texture, "\"");

  const double period = 0.125;  // stripe period as a fraction of the image
  const double cosr = std::cos(rot), sinr = std::sin(rot);
  const double sub[4][2] = {
      {0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};

  img::ImageU8 out;
  out.width = size;
  out.height = size;
  out.rgb.resize(size_t(out.bytes()));
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc[3] = {0, 0, 0};
      for (const auto& s : sub) {
        const double u = (x + s[0]) / size - cx;
        const double v = (y + s[1]) / size - cy;
        const double ur = cosr * u + sinr * v;
        const double vr = -sinr * u + cosr * v;
        const bool inside = is_circle
                                ? (u * u + v * v <= half * half)
                                : (std::max(std::abs(ur), std::abs(vr)) <=
                                   half);
        if (inside) {
          double f = 1.0;
          if (striped) {
            const auto k = int64_t(std::floor(ur / period + phase));
            f = ((k % 2) + 2) % 2 == 0 ? 1.0 : 0.45;
          }
          acc[0] += base.r * f;
          acc[1] += base.g * f;
          acc[2] += base.b * f;
        } else {
          acc[0] += bg;
          acc[1] += bg;
          acc[2] += bg;
        }
      }
      const size_t px = (size_t(y) * size_t(size) + size_t(x)) * 3;
      for (int c = 0; c < 3; ++c)
        out.rgb[px + size_t(c)] =
            uint8_t(std::lround(clamp01(acc[c] / 4.0) * 255.0));
    }
  }
  return out;
}

Json manifest_to_json(const DomainManifest& m) {
  Json j;
  j["domain"] = std::string(1, m.domain);
  j["seed"] = m.seed;
  j["image_size"] = m.image_size;
  j["total"] = m.total();
  Json counts = Json::object();
  for (const auto& [key, n] : m.counts) counts[key] = n;
  j["counts"] = std::move(counts);
  Json attrs = Json::array();
  for (const auto& a : m.attributes) {
    Json e;
    e["name"] = a.name;
    e["kind"] = kind_name(a.kind);
    e["values"] = a.values;
    attrs.push_back(std::move(e));
  }
  j["attributes"] = std::move(attrs);
  return j;
}

template <typename E>
DomainManifest manifest_from_json(const Json& j) {
  DomainManifest m;
  try {
    const std::string d = j.at("domain").get<std::string>();
    require<E>(d == "A" || d == "B", "manifest domain must be A or B");
    m.domain = d[0];
    m.seed = j.at("seed").get<uint64_t>();
    m.image_size = j.at("image_size").get<int>();
    for (const auto& [key, n] : j.at("counts").items())
      m.counts.emplace_back(key, n.template get<int64_t>());
    for (const auto& e : j.at("attributes")) {
      AttributeSpec a;
      a.name = e.at("name").get<std::string>();
      a.kind = kind_from(e.at("kind").get<std::string>());
      a.values = e.at("values").get<std::vector<std::string>>();
      m.attributes.push_back(std::move(a));
    }
    const int64_t declared = j.at("total").get<int64_t>();
    require<E>(declared == m.total(), "manifest total ", declared,
               " does not equal the sum of counts ", m.total());
  } catch (const Json::exception& e) {
    fail<E>("malformed manifest: ", e.what());
  } catch (const ConfigError& e) {
    fail<E>("malformed manifest: ", e.what());
  }
  return m;
}

std::string read_text(const std::string& path, const char* what) {
  std::ifstream is(path, std::ios::binary);
  require<DataError>(bool(is), "missing ", what, ": \"", path, "\"");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// CSV rows of <root>/labels.csv, header checked against the schema.
std::vector<std::vector<std::string>> read_labels_csv(
    const std::string& root, const std::vector<AttributeSpec>& attrs) {
  const std::string path = (fs::path(root) / "labels.csv").string();
  std::string text = read_text(path, "labels file");
  std::vector<std::string> lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  require<DataError>(!lines.empty(), "labels file \"", path, "\" is empty");

  std::vector<std::string> header = split(lines.front(), ',');
  require<DataError>(header.size() == 2 + attrs.size() &&
                         header[0] == "path" && header[1] == "domain",
                     "labels header \"", lines.front(),
                     "\" does not match the attribute schema");
  for (size_t i = 0; i < attrs.size(); ++i)
    require<DataError>(header[2 + i] == attrs[i].name, "labels column \"",
                       header[2 + i], "\" does not match attribute \"",
                       attrs[i].name, "\"");

  std::vector<std::vector<std::string>> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> cols = split(lines[i], ',');
    require<DataError>(cols.size() == header.size(), "labels row ", i + 1,
                       " has ", cols.size(), " columns, expected ",
                       header.size());
    rows.push_back(std::move(cols));
  }
  return rows;
}

}  // namespace

int64_t DomainManifest::total() const {
  int64_t t = 0;
  for (const auto& [key, n] : counts) t += n;
  return t;
}

void BiasedDatasetConfig::validate() const {
  require<ConfigError>(!attributes.empty(), "no attributes configured");
  int wanted = 0, unwanted = 0;
  std::set<std::string> names;
  for (const auto& a : attributes) {
    require<ConfigError>(clean_token(a.name), "attribute name \"", a.name,
                         "\" is empty or contains reserved characters");
    require<ConfigError>(names.insert(a.name).second,
                         "duplicate attribute \"", a.name, "\"");
    require<ConfigError>(a.values.size() >= 2, "attribute \"", a.name,
                         "\" needs at least two values");
    std::set<std::string> vals;
    for (const auto& v : a.values) {
      require<ConfigError>(clean_token(v), "attribute \"", a.name,
                           "\" has an empty or reserved-character value");
      require<ConfigError>(vals.insert(v).second, "attribute \"", a.name,
                           "\" repeats value \"", v, "\"");
    }
    (a.kind == AttributeSpec::Kind::kWanted ? wanted : unwanted)++;
  }
  require<ConfigError>(wanted == 1, "exactly one wanted attribute required, got ",
                       wanted);
  require<ConfigError>(unwanted >= 1, "at least one unwanted attribute required");
  // The shape renderer drives geometry from a single unwanted attribute.
  require<ConfigError>(unwanted == 1,
                       "the shape renderer supports exactly one unwanted "
                       "attribute, got ",
                       unwanted);

  size_t wanted_idx = 0, unwanted_idx = 0;
  for (size_t i = 0; i < attributes.size(); ++i)
    (attributes[i].kind == AttributeSpec::Kind::kWanted ? wanted_idx
                                                        : unwanted_idx) = i;

  // Renderer vocabularies.
  for (const auto& v : attributes[unwanted_idx].values)
    require<ConfigError>(std::find(render.shapes.begin(), render.shapes.end(),
                                   v) != render.shapes.end(),
                         "unwanted value \"", v, "\" is not a renderable shape");
  for (const auto& v : attributes[wanted_idx].values) {
    auto dash = v.find('-');
    require<ConfigError>(dash != std::string::npos, "wanted value \"", v,
                         "\" must look like texture-color");
    const std::string tex = v.substr(0, dash), col = v.substr(dash + 1);
    require<ConfigError>(
        std::find(render.textures.begin(), render.textures.end(), tex) !=
            render.textures.end(),
        "wanted value \"", v, "\" uses unknown texture \"", tex, "\"");
    require<ConfigError>(std::find(render.colors.begin(), render.colors.end(),
                                   col) != render.colors.end(),
                         "wanted value \"", v, "\" uses unknown color \"", col,
                         "\"");
  }

  const auto& jit = render.jitter;
  require<ConfigError>(jit.center_frac >= 0 && jit.center_frac < 0.5 &&
                           jit.rotation_deg >= 0 && jit.hue_noise >= 0 &&
                           jit.background_noise >= 0 && jit.scale_lo > 0 &&
                           jit.scale_lo <= jit.scale_hi && jit.scale_hi < 0.5,
                       "jitter ranges out of bounds");

  for (const DomainManifest* m : {&manifest_A, &manifest_B}) {
    require<ConfigError>(m->image_size == 64 || m->image_size == 128,
                         "image_size must be 64 or 128, got ", m->image_size);
    require<ConfigError>(!m->counts.empty(), "domain ", std::string(1, m->domain),
                         " has no count cells");
    std::set<std::string> keys;
    for (const auto& [key, n] : m->counts) {
      require<ConfigError>(n >= 0, "cell \"", key, "\" has negative count");
      require<ConfigError>(keys.insert(key).second, "duplicate cell \"", key,
                           "\"");
      parse_cell<ConfigError>(key, attributes);
    }
    require<ConfigError>(m->total() >= 2, "domain ",
                         std::string(1, m->domain),
                         " must hold at least two samples, has ", m->total());
  }
  require<ConfigError>(manifest_A.domain == 'A' && manifest_B.domain == 'B',
                       "manifests must be labeled A and B");
  require<ConfigError>(manifest_A.image_size == manifest_B.image_size,
                       "domains must share one image size");
  require<ConfigError>(!marginals_match(manifest_A, manifest_B, wanted_idx),
                       "wanted-attribute marginals must differ across domains");
  if (biased)
    require<ConfigError>(
        !marginals_match(manifest_A, manifest_B, unwanted_idx),
        "biased config requires misaligned unwanted-attribute marginals");
}

Json BiasedDatasetConfig::to_json() const {
  Json j;
  Json attrs = Json::array();
  for (const auto& a : attributes) {
    Json e;
    e["name"] = a.name;
    e["kind"] = kind_name(a.kind);
    e["values"] = a.values;
    attrs.push_back(std::move(e));
  }
  j["attributes"] = std::move(attrs);
  for (const auto* m : {&manifest_A, &manifest_B}) {
    Json d;
    d["seed"] = m->seed;
    d["image_size"] = m->image_size;
    Json counts = Json::object();
    for (const auto& [key, n] : m->counts) counts[key] = n;
    d["counts"] = std::move(counts);
    j[m->domain == 'A' ? "domain_A" : "domain_B"] = std::move(d);
  }
  Json r;
  r["shapes"] = render.shapes;
  r["textures"] = render.textures;
  r["colors"] = render.colors;
  Json jit;
  jit["center_frac"] = render.jitter.center_frac;
  jit["rotation_deg"] = render.jitter.rotation_deg;
  jit["scale_lo"] = render.jitter.scale_lo;
  jit["scale_hi"] = render.jitter.scale_hi;
  jit["hue_noise"] = render.jitter.hue_noise;
  jit["background_noise"] = render.jitter.background_noise;
  r["jitter"] = std::move(jit);
  j["render"] = std::move(r);
  j["biased"] = biased;
  return j;
}

BiasedDatasetConfig BiasedDatasetConfig::from_json(const Json& j) {
  BiasedDatasetConfig c;
  try {
    c.attributes.clear();
    for (const auto& e : j.at("attributes")) {
      AttributeSpec a;
      a.name = e.at("name").get<std::string>();
      a.kind = kind_from(e.at("kind").get<std::string>());
      a.values = e.at("values").get<std::vector<std::string>>();
      c.attributes.push_back(std::move(a));
    }
    auto domain = [&](const char* key, char letter) {
      DomainManifest m;
      m.domain = letter;
      const Json& d = j.at(key);
      m.seed = d.at("seed").get<uint64_t>();
      m.image_size = d.at("image_size").get<int>();
      for (const auto& [cell, n] : d.at("counts").items())
        m.counts.emplace_back(cell, n.get<int64_t>());
      m.attributes = c.attributes;
      return m;
    };
    c.manifest_A = domain("domain_A", 'A');
    c.manifest_B = domain("domain_B", 'B');
    if (j.contains("render")) {
      const Json& r = j.at("render");
      c.render.shapes = json_get_or(r, "shapes", c.render.shapes);
      c.render.textures = json_get_or(r, "textures", c.render.textures);
      c.render.colors = json_get_or(r, "colors", c.render.colors);
      if (r.contains("jitter")) {
        const Json& jit = r.at("jitter");
        auto& out = c.render.jitter;
        out.center_frac = json_get_or(jit, "center_frac", out.center_frac);
        out.rotation_deg = json_get_or(jit, "rotation_deg", out.rotation_deg);
        out.scale_lo = json_get_or(jit, "scale_lo", out.scale_lo);
        out.scale_hi = json_get_or(jit, "scale_hi", out.scale_hi);
        out.hue_noise = json_get_or(jit, "hue_noise", out.hue_noise);
        out.background_noise =
            json_get_or(jit, "background_noise", out.background_noise);
      }
    }
    c.biased = json_get_or(j, "biased", true);
  } catch (const Json::exception& e) {
    fail<ConfigError>("malformed dataset config: ", e.what());
  }
  c.validate();
  return c;
}

BiasedDatasetConfig BiasedDatasetConfig::default_biased(uint64_t seed,
                                                        int image_size,
                                                        int64_t majority,
                                                        int64_t minority) {
  BiasedDatasetConfig c;
  c.attributes = {
      {"shape", AttributeSpec::Kind::kUnwanted, {"circle", "square"}},
      {"fill", AttributeSpec::Kind::kWanted, {"flat-blue", "striped-red"}}};
  c.manifest_A.domain = 'A';
  c.manifest_A.seed = 2 * seed;
  c.manifest_A.image_size = image_size;
  c.manifest_A.counts = {{"circle,flat-blue", majority},
                         {"square,flat-blue", minority}};
  c.manifest_A.attributes = c.attributes;
  c.manifest_B.domain = 'B';
  c.manifest_B.seed = 2 * seed + 1;
  c.manifest_B.image_size = image_size;
  c.manifest_B.counts = {{"square,striped-red", majority},
                         {"circle,striped-red", minority}};
  c.manifest_B.attributes = c.attributes;
  return c;
}

std::pair<DomainManifest, DomainManifest> generate_biased_shapes(
    const BiasedDatasetConfig& config, const std::string& out_dir) {
  config.validate();

  size_t wanted_idx = 0, unwanted_idx = 0;
  for (size_t i = 0; i < config.attributes.size(); ++i)
    (config.attributes[i].kind == AttributeSpec::Kind::kWanted
         ? wanted_idx
         : unwanted_idx) = i;

  std::ostringstream csv;
  csv << "path,domain";
  for (const auto& a : config.attributes) csv << ',' << a.name;
  csv << '\n';

  std::pair<DomainManifest, DomainManifest> result{config.manifest_A,
                                                   config.manifest_B};
  for (DomainManifest* m : {&result.first, &result.second}) {
    m->attributes = config.attributes;
    const std::string letter(1, m->domain);
    const fs::path images = fs::path(out_dir) / letter / "images";
    std::error_code ec;
    fs::create_directories(images, ec);
    require<IoError>(!ec && fs::is_directory(images),
                     "cannot create output directory \"", images.string(),
                     "\": ", ec.message());

    int64_t index = 0;
    for (const auto& [cell, n] : m->counts) {
      auto parts = split(cell, ',');
      const std::string& shape = parts[unwanted_idx];
      const std::string& fill = parts[wanted_idx];
      const auto dash = fill.find('-');
      const std::string texture = fill.substr(0, dash);
      const std::string color = fill.substr(dash + 1);
      std::string label_cols;
      for (const auto& part : parts) label_cols += ',' + part;
      for (int64_t i = 0; i < n; ++i, ++index) {
        Philox rng(m->seed, uint64_t(index));
        img::ImageU8 im = render_sample(m->image_size, shape, texture, color,
                                        config.render.jitter, rng);
        char name[32];
        std::snprintf(name, sizeof name, "%s_%06lld.png", letter.c_str(),
                      static_cast<long long>(index));
        img::write_png((images / name).string(), im);
        csv << letter << "/images/" << name << ',' << letter << label_cols
            << '\n';
      }
    }
    std::ofstream mf(fs::path(out_dir) / letter / "manifest.json",
                     std::ios::binary | std::ios::trunc);
    require<IoError>(bool(mf), "cannot write manifest for domain ", letter);
    mf << manifest_to_json(*m).dump(2) << '\n';
  }

  std::ofstream lf(fs::path(out_dir) / "labels.csv",
                   std::ios::binary | std::ios::trunc);
  require<IoError>(bool(lf), "cannot write labels file");
  lf << csv.str();
  require<IoError>(bool(lf), "writing labels file failed");
  return result;
}

DomainManifest load_manifest(const std::string& root, char domain) {
  require<DataError>(domain == 'A' || domain == 'B',
                     "domain must be A or B");
  const std::string path =
      (fs::path(root) / std::string(1, domain) / "manifest.json").string();
  std::string text = read_text(path, "manifest");
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail<DataError>("manifest \"", path, "\" is not valid JSON: ", e.what());
  }
  DomainManifest m = manifest_from_json<DataError>(j);
  require<DataError>(m.domain == domain, "manifest \"", path,
                     "\" is labeled domain ", std::string(1, m.domain));
  return m;
}

std::vector<SampleRecord> load_domain(const std::string& root, char domain) {
  DomainManifest m = load_manifest(root, domain);
  auto rows = read_labels_csv(root, m.attributes);

  std::vector<SampleRecord> records;
  for (const auto& cols : rows) {
    if (cols[1] != std::string(1, domain)) {
      require<DataError>(cols[1] == "A" || cols[1] == "B",
                         "labels row for \"", cols[0],
                         "\" has invalid domain \"", cols[1], "\"");
      continue;
    }
    SampleRecord r;
    r.image_path = cols[0];
    r.domain = domain;
    for (size_t i = 0; i < m.attributes.size(); ++i) {
      const auto& a = m.attributes[i];
      const std::string& v = cols[2 + i];
      require<DataError>(
          std::find(a.values.begin(), a.values.end(), v) != a.values.end(),
          "labels row for \"", cols[0], "\": \"", v,
          "\" is not a value of attribute \"", a.name, "\"");
      r.labels[a.name] = v;
    }
    require<DataError>(fs::exists(fs::path(root) / r.image_path),
                       "missing image \"", r.image_path, "\"");
    records.push_back(std::move(r));
  }
  require<DataError>(int64_t(records.size()) == m.total(), "domain ",
                     std::string(1, domain), " has ", records.size(),
                     " labels rows but the manifest declares ", m.total());
  return records;
}

std::vector<std::string> validate_manifest(const std::string& root) {
  std::vector<std::string> violations;
  auto flag = [&](std::string v) { violations.push_back(std::move(v)); };
  if (!fs::is_directory(root)) {
    flag(cat("dataset root \"", root, "\" does not exist"));
    return violations;
  }

  DomainManifest manifests[2];
  bool have[2] = {false, false};
  for (int d = 0; d < 2; ++d) {
    const char letter = d == 0 ? 'A' : 'B';
    try {
      manifests[d] = load_manifest(root, letter);
      have[d] = true;
    } catch (const DataError& e) {
      flag(e.what());
      continue;
    }
    if (manifests[d].image_size != 64 && manifests[d].image_size != 128)
      flag(cat("domain ", std::string(1, letter), ": image_size ",
               manifests[d].image_size, " is not 64 or 128"));
    if (manifests[d].total() < 2)
      flag(cat("domain ", std::string(1, letter),
               ": fewer than two samples declared"));
    for (const auto& [key, n] : manifests[d].counts) {
      if (n < 0)
        flag(cat("domain ", std::string(1, letter), ": cell \"", key,
                 "\" has negative count"));
      try {
        parse_cell<DataError>(key, manifests[d].attributes);
      } catch (const DataError& e) {
        flag(cat("domain ", std::string(1, letter), ": ", e.what()));
      }
    }
  }
  if (!(have[0] && have[1])) return violations;

  auto schema_eq = [](const std::vector<AttributeSpec>& x,
                      const std::vector<AttributeSpec>& y) {
    if (x.size() != y.size()) return false;
    for (size_t i = 0; i < x.size(); ++i)
      if (x[i].name != y[i].name || x[i].kind != y[i].kind ||
          x[i].values != y[i].values)
        return false;
    return true;
  };
  if (!schema_eq(manifests[0].attributes, manifests[1].attributes))
    flag("domains A and B declare different attribute schemas");
  if (manifests[0].image_size != manifests[1].image_size)
    flag("domains A and B declare different image sizes");

  std::vector<std::vector<std::string>> rows;
  try {
    rows = read_labels_csv(root, manifests[0].attributes);
  } catch (const DataError& e) {
    flag(e.what());
    return violations;
  }

  // Tally rows per domain and cell while checking each referenced image.
  std::map<std::string, int64_t> cell_tally[2];
  int64_t row_tally[2] = {0, 0};
  for (const auto& cols : rows) {
    const std::string& path = cols[0];
    int d;
    if (cols[1] == "A") {
      d = 0;
    } else if (cols[1] == "B") {
      d = 1;
    } else {
      flag(cat("labels row for \"", path, "\" has invalid domain \"", cols[1],
               "\""));
      continue;
    }
    ++row_tally[d];
    std::string cell;
    bool cell_ok = true;
    for (size_t i = 0; i < manifests[d].attributes.size(); ++i) {
      const auto& a = manifests[d].attributes[i];
      const std::string& v = cols[2 + i];
      if (std::find(a.values.begin(), a.values.end(), v) == a.values.end()) {
        flag(cat("labels row for \"", path, "\": \"", v,
                 "\" is not a value of attribute \"", a.name, "\""));
        cell_ok = false;
      }
      if (i > 0) cell += ',';
      cell += v;
    }
    if (cell_ok) ++cell_tally[d][cell];

    const fs::path file = fs::path(root) / path;
    if (!fs::exists(file)) {
      flag(cat("missing image \"", path, "\""));
      continue;
    }
    try {
      img::ImageU8 im = img::read_png(file.string());
      if (im.width != manifests[d].image_size ||
          im.height != manifests[d].image_size)
        flag(cat("image \"", path, "\" is ", im.width, "x", im.height,
                 ", expected ", manifests[d].image_size, "x",
                 manifests[d].image_size));
    } catch (const DataError&) {
      flag(cat("undecodable image \"", path, "\""));
    }
  }

  for (int d = 0; d < 2; ++d) {
    const std::string letter(1, d == 0 ? 'A' : 'B');
    if (row_tally[d] != manifests[d].total())
      flag(cat("count mismatch for domain ", letter, ": manifest declares ",
               manifests[d].total(), ", labels file holds ", row_tally[d]));
    for (const auto& [cell, n] : manifests[d].counts) {
      const int64_t disk =
          cell_tally[d].count(cell) ? cell_tally[d][cell] : 0;
      if (disk != n)
        flag(cat("count mismatch for domain ", letter, " cell \"", cell,
                 "\": manifest declares ", n, ", labels file holds ", disk));
    }
    for (const auto& [cell, n] : cell_tally[d]) {
      bool known = false;
      for (const auto& [k, c] : manifests[d].counts) known |= (k == cell);
      if (!known)
        flag(cat("domain ", letter, " labels hold undeclared cell \"", cell,
                 "\" with ", n, " rows"));
    }
    // Orphan files: images on disk that no labels row references.
    const fs::path images = fs::path(root) / letter / "images";
    int64_t on_disk = 0;
    if (fs::is_directory(images))
      for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file()) ++on_disk;
    if (on_disk != row_tally[d])
      flag(cat("domain ", letter, " has ", on_disk, " image files but ",
               row_tally[d], " labels rows"));
  }
  return violations;
}

Array<float> load_record_image(const std::string& root,
                               const SampleRecord& r) {
  return img::to_float(img::read_png((fs::path(root) / r.image_path).string()));
}

}  // namespace udit::data
