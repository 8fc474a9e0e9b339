#include "udit/cli.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "udit/checkpoint.hpp"
#include "udit/common.hpp"
#include "udit/datasets.hpp"
#include "udit/image.hpp"
#include "udit/metrics.hpp"
#include "udit/nets.hpp"
#include "udit/report.hpp"
#include "udit/semext.hpp"
#include "udit/serde.hpp"
#include "udit/sha256.hpp"
#include "udit/trainer.hpp"

namespace udit::cli {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Typed key schema: every subcommand declares its keys once; the same table
// drives flag registration, config-file merging, and the effective echo.

enum class KeyType { kInt, kUInt, kDouble, kBool, kString };

struct KeyDef {
  std::string key;      // dotted path into the effective config JSON
  std::string aliases;  // extra option names, e.g. ",--data"
  KeyType type = KeyType::kString;
  std::string help;
};

struct SubSchema {
  CLI::App* app = nullptr;
  std::vector<KeyDef> defs;
  std::unique_ptr<std::vector<std::string>> raw;  // stable flag storage
  std::string config_path;

  void add(CLI::App* a, std::vector<KeyDef> d) {
    app = a;
    defs = std::move(d);
    raw = std::make_unique<std::vector<std::string>>(defs.size());
    app->add_option("--config", config_path,
                    "JSON config file; flags override its values");
    for (size_t i = 0; i < defs.size(); ++i)
      app->add_option(cat("--", defs[i].key, defs[i].aliases), (*raw)[i],
                      defs[i].help);
  }
};

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::kInt: return "an integer";
    case KeyType::kUInt: return "a non-negative integer";
    case KeyType::kDouble: return "a number";
    case KeyType::kBool: return "a boolean";
    case KeyType::kString: return "a string";
  }
  return "a value";
}

// A flag string -> typed JSON value per the key's declared type.
Json parse_typed(const std::string& raw, KeyType type,
                 const std::string& key) {
  const auto bad = [&]() -> ConfigError {
    return ConfigError(cat("--", key, " expects ", type_name(type),
                           ", got \"", raw, "\""));
  };
  switch (type) {
    case KeyType::kString:
      return Json(raw);
    case KeyType::kBool: {
      if (raw == "true" || raw == "1") return Json(true);
      if (raw == "false" || raw == "0") return Json(false);
      throw bad();
    }
    case KeyType::kInt: {
      int64_t v = 0;
      const auto [p, e] =
          std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (e != std::errc{} || p != raw.data() + raw.size()) throw bad();
      return Json(v);
    }
    case KeyType::kUInt: {
      uint64_t v = 0;
      const auto [p, e] =
          std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (e != std::errc{} || p != raw.data() + raw.size()) throw bad();
      return Json(v);
    }
    case KeyType::kDouble: {
      try {
        size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) throw bad();
        return Json(v);
      } catch (const std::exception&) {
        throw bad();
      }
    }
  }
  throw bad();
}

// A config-file value must already carry the key's declared type.
void check_file_type(const Json& v, KeyType type, const std::string& key) {
  bool ok = false;
  switch (type) {
    case KeyType::kString: ok = v.is_string(); break;
    case KeyType::kBool: ok = v.is_boolean(); break;
    case KeyType::kDouble: ok = v.is_number(); break;
    case KeyType::kInt: ok = v.is_number_integer(); break;
    case KeyType::kUInt:
      ok = v.is_number_unsigned() ||
           (v.is_number_integer() && v.get<int64_t>() >= 0);
      break;
  }
  if (!ok)
    throw ConfigError(cat("config key \"", key, "\" must be ",
                          type_name(type)));
}

void set_path(Json& j, const std::string& dotted, Json v) {
  Json* cur = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted.find('.', start);
    if (dot == std::string::npos) {
      (*cur)[dotted.substr(start)] = std::move(v);
      return;
    }
    cur = &(*cur)[dotted.substr(start, dot - start)];
    start = dot + 1;
  }
}

void flatten(const Json& j, const std::string& prefix,
             std::vector<std::pair<std::string, Json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : cat(prefix, ".", it.key()),
              out);
  } else {
    out.emplace_back(prefix, j);
  }
}

std::string slurp(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw IoError(cat("cannot open ", what, " \"", path, "\""));
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// defaults -> config file -> flags -> UDIT_SEED fallback, in that order.
Json collect(const SubSchema& s, Json effective) {
  bool seed_set = false;
  if (!s.config_path.empty()) {
    const Json file = json_parse(slurp(s.config_path, "config file"),
                                 cat("config file \"", s.config_path, "\""));
    if (!file.is_object())
      throw ConfigError(cat("config file \"", s.config_path,
                            "\" must hold a JSON object"));
    std::vector<std::pair<std::string, Json>> leaves;
    flatten(file, "", leaves);
    for (const auto& [key, value] : leaves) {
      const KeyDef* def = nullptr;
      for (const auto& d : s.defs)
        if (d.key == key) def = &d;
      if (def == nullptr)
        throw ConfigError(cat("unknown key \"", key, "\" in config file \"",
                              s.config_path, "\""));
      check_file_type(value, def->type, key);
      set_path(effective, key, value);
      if (key == "seed") seed_set = true;
    }
  }
  for (size_t i = 0; i < s.defs.size(); ++i) {
    if (s.app->count(cat("--", s.defs[i].key)) == 0) continue;
    set_path(effective, s.defs[i].key,
             parse_typed((*s.raw)[i], s.defs[i].type, s.defs[i].key));
    if (s.defs[i].key == "seed") seed_set = true;
  }
  if (!seed_set) {
    if (const char* env = std::getenv("UDIT_SEED")) {
      const std::string raw(env);
      uint64_t v = 0;
      const auto [p, e] =
          std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (e != std::errc{} || p != raw.data() + raw.size())
        throw ConfigError(cat("UDIT_SEED must be a non-negative integer, ",
                              "got \"", raw, "\""));
      if (effective.contains("seed")) effective["seed"] = v;
    }
  }
  return effective;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw IoError(cat("cannot write \"", path, "\""));
  out << text;
  out.flush();
  if (!out.good()) throw IoError(cat("failed writing \"", path, "\""));
}

// The effective-config echo: always written before the subcommand's work.
void echo_config(const std::string& out_dir, const std::string& sub,
                 const Json& effective) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw IoError(cat("cannot create \"", out_dir, "\": ", ec.message()));
  Json echo;
  echo["subcommand"] = sub;
  for (auto it = effective.begin(); it != effective.end(); ++it)
    echo[it.key()] = it.value();
  write_text((fs::path(out_dir) / "effective_config.json").string(),
             echo.dump(2) + "\n");
}

void require_key_nonempty(const Json& eff, const std::string& key,
                          const std::string& flag) {
  if (json_get<std::string>(eff, key).empty())
    throw ConfigError(cat("--", flag, " is required"));
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::vector<int> parse_grid(const std::string& text) {
  if (text.empty()) throw ConfigError("empty sweep grid");
  std::vector<int> out;
  size_t start = 0;
  while (start <= text.size()) {
    const size_t comma = text.find(',', start);
    const std::string tok =
        text.substr(start, comma == std::string::npos ? std::string::npos
                                                      : comma - start);
    int v = 0;
    const auto [p, e] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || e != std::errc{} || p != tok.data() + tok.size())
      throw ConfigError(cat("bad sweep grid entry \"", tok, "\" in \"", text,
                            "\""));
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 1)
      throw ConfigError(cat("--grid entries must be >= 1, got ", out[i]));
    if (i > 0 && out[i] <= out[i - 1])
      throw ConfigError(cat("--grid must be strictly increasing, got \"",
                            text, "\""));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand handlers. Each validates cheap invariants, echoes the effective
// config, then does the work.

int cmd_datagen(const Json& eff) {
  require_key_nonempty(eff, "out", "out");
  const auto cfg = data::BiasedDatasetConfig::default_biased(
      json_get<uint64_t>(eff, "seed"), int(json_get<int64_t>(eff, "image_size")),
      json_get<int64_t>(eff, "majority"), json_get<int64_t>(eff, "minority"));
  cfg.validate();
  const std::string out = json_get<std::string>(eff, "out");
  echo_config(out, "datagen", eff);
  const auto [ma, mb] = data::generate_biased_shapes(cfg, out);
  std::cout << "dataset: " << out << "\n";
  std::cout << "images per domain: A=" << ma.total() << " B=" << mb.total()
            << "\n";
  return 0;
}

int cmd_train_extractor(const Json& eff) {
  require_key_nonempty(eff, "data", "data");
  require_key_nonempty(eff, "out", "out");
  require_key_nonempty(eff, "attribute", "attribute");
  const std::vector<int> grid =
      parse_grid(json_get<std::string>(eff, "grid"));
  const double tau = json_get<double>(eff, "tau");
  if (!(tau >= 0.0)) throw ConfigError(cat("--tau must be >= 0, got ", tau));
  const int epochs = int(json_get<int64_t>(eff, "epochs"));
  const int sweep_epochs = int(json_get<int64_t>(eff, "sweep_epochs"));
  const uint64_t seed = json_get<uint64_t>(eff, "seed");
  const std::string root = json_get<std::string>(eff, "data");
  const std::string out = json_get<std::string>(eff, "out");
  echo_config(out, "train-extractor", eff);

  semext::ClassifierHyper hyper;
  hyper.image_size = data::load_manifest(root, 'A').image_size;
  hyper.kernel = int(json_get<int64_t>(eff, "kernel"));
  hyper.batch_size = int(json_get<int64_t>(eff, "batch_size"));
  hyper.lr = json_get<double>(eff, "lr");
  hyper.val_fraction = json_get<double>(eff, "val_fraction");

  const auto [labeled, attr] =
      semext::load_labeled(root, json_get<std::string>(eff, "attribute"));
  semext::Classifier cls =
      semext::train_attribute_classifier(labeled, attr, epochs, seed, hyper);
  std::cout << "classifier validation accuracy: "
            << fmt("%.2f", cls.val_accuracy) << "%\n";

  const semext::SweepResult sweep =
      semext::sweep_reduction_dim(cls, labeled, grid, sweep_epochs);
  const int d = semext::select_reduction_dim(sweep, tau);
  semext::SemanticExtractor ext =
      semext::build_extractor(cls, labeled, d, sweep_epochs);

  const std::string ext_path = (fs::path(out) / "extractor.udit").string();
  semext::save_extractor(ext_path, ext, tau, sweep);

  Json sj;
  sj["attribute"] = attr.name;
  sj["grid"] = sweep.grid;
  Json acc;
  for (const int g : sweep.grid) acc[cat(g)] = sweep.accuracy.at(g);
  sj["accuracy"] = acc;
  sj["tau"] = tau;
  sj["selected_d"] = d;
  sj["classifier_val_accuracy"] = cls.val_accuracy;
  sj["extractor_accuracy"] = ext.accuracy;
  const std::string sweep_path = (fs::path(out) / "sweep.json").string();
  write_text(sweep_path, sj.dump(2) + "\n");

  std::cout << "selected D = " << d << "\n";
  std::cout << "extractor: " << ext_path << "\n";
  std::cout << "sweep: " << sweep_path << "\n";
  return 0;
}

int cmd_train(const Json& eff) {
  train::TrainConfig cfg = train::TrainConfig::from_json(eff);
  cfg.validate();
  echo_config(cfg.out_dir, "train", eff);
  const std::string final_path = train::train(cfg);
  std::cout << "final checkpoint: " << final_path << "\n";
  return 0;
}

int cmd_translate(const Json& eff) {
  require_key_nonempty(eff, "checkpoint", "checkpoint");
  require_key_nonempty(eff, "input", "input");
  require_key_nonempty(eff, "out", "out");
  const std::string from = json_get<std::string>(eff, "from");
  if (from != "A" && from != "B")
    throw ConfigError(cat("--from must be A or B, got \"", from, "\""));
  const int k = int(json_get<int64_t>(eff, "k"));
  if (k < 1) throw ConfigError(cat("--k must be >= 1, got ", k));
  const std::string out = json_get<std::string>(eff, "out");
  echo_config(out, "translate", eff);

  nets::TranslationModel<float> model =
      ckpt::load_model(json_get<std::string>(eff, "checkpoint"));
  const Array<float> x =
      img::to_float(img::read_png(json_get<std::string>(eff, "input")));
  const std::vector<Array<float>> outs =
      train::translate(model, x, from == "A" ? 0 : 1, k,
                       json_get<uint64_t>(eff, "seed"));
  for (size_t i = 0; i < outs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "translation_%02d.png", int(i) + 1);
    img::write_png((fs::path(out) / name).string(), img::to_u8(outs[i]));
  }
  std::cout << "wrote " << outs.size() << " translations to " << out << "\n";
  return 0;
}

int cmd_evaluate(const Json& eff) {
  require_key_nonempty(eff, "data", "data");
  require_key_nonempty(eff, "metric_data", "metric_data");
  require_key_nonempty(eff, "extractor", "extractor");
  require_key_nonempty(eff, "out", "out");
  const bool identity = json_get<bool>(eff, "identity");
  const std::string checkpoint = json_get<std::string>(eff, "checkpoint");
  const std::string baseline = json_get<std::string>(eff, "baseline");
  const std::string udit_path = json_get<std::string>(eff, "udit");
  if (baseline.empty() != udit_path.empty())
    throw ConfigError("--baseline and --udit go together");
  const int sources =
      int(identity) + int(!checkpoint.empty()) + int(!baseline.empty());
  if (sources != 1)
    throw ConfigError(
        "give exactly one translator: --identity, --checkpoint, or "
        "--baseline with --udit");

  metrics::EvaluateConfig mc;
  mc.direction = json_get<std::string>(eff, "direction");
  if (mc.direction != "A->B" && mc.direction != "B->A")
    throw ConfigError(cat("--direction must be \"A->B\" or \"B->A\", got \"",
                          mc.direction, "\""));
  mc.k = int(json_get<int64_t>(eff, "k"));
  if (mc.k < 2) throw ConfigError(cat("--k must be >= 2, got ", mc.k));
  mc.pair_count = int(json_get<int64_t>(eff, "pair_count"));
  mc.seed = json_get<uint64_t>(eff, "seed");
  mc.filter_attribute = json_get<std::string>(eff, "filter_attribute");
  mc.filter_value = json_get<std::string>(eff, "filter_value");
  if (mc.filter_attribute.empty() != mc.filter_value.empty())
    throw ConfigError("--filter_attribute and --filter_value go together");

  const std::string out = json_get<std::string>(eff, "out");
  echo_config(out, "evaluate", eff);

  const std::string data_root = json_get<std::string>(eff, "data");
  const std::string metric_root = json_get<std::string>(eff, "metric_data");
  semext::SemanticExtractor ext =
      semext::load_extractor(json_get<std::string>(eff, "extractor"));
  std::string attribute = json_get<std::string>(eff, "attribute");
  if (attribute.empty()) attribute = ext.attribute.name;

  const int image_size = data::load_manifest(data_root, 'A').image_size;
  if (data::load_manifest(metric_root, 'A').image_size != image_size)
    throw ConfigError(cat("--metric_data images are ",
                          data::load_manifest(metric_root, 'A').image_size,
                          "px but --data images are ", image_size, "px"));
  if (ext.hyper.image_size != image_size)
    throw ConfigError(cat("extractor expects ", ext.hyper.image_size,
                          "px images but --data holds ", image_size, "px"));

  // Test inputs: the source domain's rows of the labeled set.
  const int from = mc.direction == "A->B" ? 0 : 1;
  const auto [all, attr] = semext::load_labeled(data_root, attribute);
  const size_t n_a = data::load_domain(data_root, 'A').size();
  const size_t lo = from == 0 ? 0 : n_a;
  const size_t hi = from == 0 ? n_a : all.size();
  const std::vector<semext::LabeledImage> test_set(
      all.begin() + int64_t(lo), all.begin() + int64_t(hi));

  std::vector<int> filter_labels;
  const std::vector<int>* filter_ptr = nullptr;
  int filter_label = 0;
  if (!mc.filter_attribute.empty()) {
    const auto [fall, fattr] =
        semext::load_labeled(data_root, mc.filter_attribute);
    int idx = -1;
    for (size_t i = 0; i < fattr.values.size(); ++i)
      if (fattr.values[i] == mc.filter_value) idx = int(i);
    if (idx < 0)
      throw ConfigError(cat("\"", mc.filter_value,
                            "\" is not a value of attribute \"",
                            mc.filter_attribute, "\""));
    filter_label = idx;
    for (size_t i = lo; i < hi; ++i) filter_labels.push_back(fall[i].label);
    filter_ptr = &filter_labels;
  }

  // The measurement classifier trains on its own (disjoint) dataset.
  const auto [metric_set, metric_attr] =
      semext::load_labeled(metric_root, attribute);
  if (metric_attr.values != attr.values)
    throw ConfigError(cat("attribute \"", attribute,
                          "\" disagrees between --data and --metric_data"));
  semext::ClassifierHyper mh;
  mh.image_size = image_size;
  metrics::MetricClassifier f = metrics::train_metric_classifier(
      metric_set, metric_attr, int(json_get<int64_t>(eff, "metric_epochs")),
      mc.seed, mh);
  std::cout << "metric classifier calibration: " << fmt("%.2f", f.calibration)
            << "%\n";
  Json mcj;
  mcj["attribute"] = attribute;
  mcj["calibration"] = f.calibration;
  mcj["epochs"] = json_get<int64_t>(eff, "metric_epochs");
  mcj["seed"] = mc.seed;
  write_text((fs::path(out) / "metric_classifier.json").string(),
             mcj.dump(2) + "\n");

  const metrics::FeatureFn id_embed = metrics::pooled_extractor_features(ext);
  const metrics::FeatureFn div_features =
      metrics::random_trunk_features(3, mc.seed);

  const std::string report_path = (fs::path(out) / "bias_report.json").string();
  if (!baseline.empty()) {
    nets::TranslationModel<float> base_model = ckpt::load_model(baseline);
    nets::TranslationModel<float> udit_model = ckpt::load_model(udit_path);
    metrics::EvaluateConfig base_cfg = mc;
    base_cfg.model_checksum = sha256_file_hex(baseline);
    metrics::EvaluateConfig udit_cfg = mc;
    udit_cfg.model_checksum = sha256_file_hex(udit_path);
    const metrics::BiasReport rb = metrics::evaluate(
        metrics::model_translator(base_model, from), f, id_embed, div_features,
        test_set, filter_ptr, filter_label, base_cfg);
    const metrics::BiasReport ru = metrics::evaluate(
        metrics::model_translator(udit_model, from), f, id_embed, div_features,
        test_set, filter_ptr, filter_label, udit_cfg);
    Json j;
    j["baseline"] = rb.to_json();
    j["udit"] = ru.to_json();
    Json cmp;
    cmp["misclassification_ratio"] =
        rb.misclassification_rate > 0.0
            ? Json(ru.misclassification_rate / rb.misclassification_rate)
            : Json(nullptr);
    cmp["diversity_ratio"] =
        rb.diversity > 0.0 ? Json(ru.diversity / rb.diversity) : Json(nullptr);
    j["comparison"] = cmp;
    write_text(report_path, j.dump(2) + "\n");
    std::cout << "baseline misclassification rate: "
              << fmt("%.4f", rb.misclassification_rate) << "\n";
    std::cout << "udit misclassification rate: "
              << fmt("%.4f", ru.misclassification_rate) << "\n";
  } else {
    metrics::Translator tr;
    nets::TranslationModel<float> model;
    if (identity) {
      tr = metrics::identity_translator();
      mc.model_checksum = "identity";
    } else {
      model = ckpt::load_model(checkpoint);
      tr = metrics::model_translator(model, from);
      mc.model_checksum = sha256_file_hex(checkpoint);
    }
    const metrics::BiasReport r = metrics::evaluate(
        tr, f, id_embed, div_features, test_set, filter_ptr, filter_label, mc);
    write_text(report_path, r.to_json().dump(2) + "\n");
    std::cout << "misclassification rate: "
              << fmt("%.4f", r.misclassification_rate) << "\n";
  }
  std::cout << "report: " << report_path << "\n";
  return 0;
}

int cmd_report(const Json& eff, const std::vector<std::string>& ins,
               const std::vector<std::string>& paired) {
  require_key_nonempty(eff, "out", "out");
  if (ins.empty() && paired.empty())
    throw ConfigError(
        "no reports given: pass --in label=report.json or --paired "
        "report.json at least once");
  const std::string out = json_get<std::string>(eff, "out");
  {
    Json echo = eff;
    echo["in"] = ins;
    echo["paired"] = paired;
    echo_config(out, "report", echo);
  }

  std::vector<report::LabeledReport> reports;
  const auto parse_report = [](const Json& j, const std::string& path) {
    try {
      return metrics::BiasReport::from_json(j);
    } catch (const ConfigError& e) {
      throw ConfigError(cat("\"", path, "\": ", e.what()));
    }
  };
  for (const std::string& entry : ins) {
    const size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size())
      throw ConfigError(cat("--in expects label=path, got \"", entry, "\""));
    const std::string label = entry.substr(0, eq);
    const std::string path = entry.substr(eq + 1);
    const Json j = json_parse(slurp(path, "report"), cat("\"", path, "\""));
    reports.push_back({label, parse_report(j, path)});
  }
  for (const std::string& path : paired) {
    const Json j = json_parse(slurp(path, "report"), cat("\"", path, "\""));
    if (!j.contains("baseline") || !j.contains("udit"))
      throw ConfigError(cat("\"", path,
                            "\" is not a paired report (needs \"baseline\" "
                            "and \"udit\")"));
    reports.push_back({"baseline", parse_report(j.at("baseline"), path)});
    reports.push_back({"udit", parse_report(j.at("udit"), path)});
  }

  const std::vector<std::string> files = report::render_report(reports, out);
  for (const std::string& fpath : files) std::cout << "chart: " << fpath << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int dispatch(int argc, const char* const* argv) {
  CLI::App app{
      "udit: unbiased diverse image-to-image translation at desk scale"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  SubSchema datagen;
  datagen.add(app.add_subcommand(
                  "datagen", "Generate the biased two-domain shapes dataset"),
              {{"out", "", KeyType::kString, "dataset root to create"},
               {"seed", "", KeyType::kUInt, "generator seed"},
               {"image_size", "", KeyType::kInt, "square image size"},
               {"majority", "", KeyType::kInt,
                "majority-shape count per domain"},
               {"minority", "", KeyType::kInt,
                "minority-shape count per domain"}});

  SubSchema trainx;
  trainx.add(
      app.add_subcommand("train-extractor",
                         "Train the attribute classifier, sweep the reduction "
                         "width, and save the frozen extractor"),
      {{"data", "", KeyType::kString, "dataset root"},
       {"out", "", KeyType::kString, "output directory"},
       {"attribute", "", KeyType::kString, "attribute to classify"},
       {"epochs", "", KeyType::kInt, "classifier training epochs"},
       {"sweep_epochs", "", KeyType::kInt, "reduction fine-tune epochs"},
       {"grid", "", KeyType::kString, "comma-separated reduction widths"},
       {"tau", "", KeyType::kDouble, "accuracy tolerance for selection"},
       {"kernel", "", KeyType::kInt, "classifier conv kernel"},
       {"batch_size", "", KeyType::kInt, "classifier batch size"},
       {"lr", "", KeyType::kDouble, "classifier learning rate"},
       {"val_fraction", "", KeyType::kDouble, "held-out validation fraction"},
       {"seed", "", KeyType::kUInt, "training seed"}});

  SubSchema traincmd;
  traincmd.add(
      app.add_subcommand("train", "Train a translation model"),
      {{"dataset_root", ",--data", KeyType::kString, "dataset root"},
       {"out_dir", ",--out", KeyType::kString, "run directory"},
       {"extractor_path", ",--extractor", KeyType::kString,
        "semantic extractor archive (required when lambda_u > 0)"},
       {"iterations", "", KeyType::kInt, "total training iterations"},
       {"batch_size", "", KeyType::kInt, "images per domain per step"},
       {"lr_g", "", KeyType::kDouble, "generator learning rate"},
       {"lr_d", "", KeyType::kDouble, "discriminator learning rate"},
       {"checkpoint_every", "", KeyType::kInt, "checkpoint cadence"},
       {"log_every", "", KeyType::kInt, "log cadence"},
       {"seed", "", KeyType::kUInt, "training seed"},
       {"network.image_size", "", KeyType::kInt, "network input size"},
       {"network.in_channels", "", KeyType::kInt, "image channels"},
       {"network.base_channels", "", KeyType::kInt, "encoder stem width"},
       {"network.style_dim", "", KeyType::kInt, "style code length"},
       {"network.n_res", "", KeyType::kInt, "residual blocks"},
       {"network.stem_kernel", "", KeyType::kInt, "stem kernel"},
       {"network.res_kernel", "", KeyType::kInt, "residual kernel"},
       {"network.style_down_kernel", "", KeyType::kInt,
        "style encoder kernel"},
       {"network.n_scales", "", KeyType::kInt, "discriminator scales"},
       {"network.d_base_channels", "", KeyType::kInt,
        "discriminator stem width"},
       {"network.d_layers", "", KeyType::kInt, "discriminator depth"},
       {"network.use_pooling_indices", "", KeyType::kBool,
        "decoder unpooling uses recorded indices"},
       {"loss_weights.lambda_x", "", KeyType::kDouble,
        "image reconstruction weight"},
       {"loss_weights.lambda_c", "", KeyType::kDouble,
        "content reconstruction weight"},
       {"loss_weights.lambda_s", "", KeyType::kDouble,
        "style reconstruction weight"},
       {"loss_weights.lambda_u", "", KeyType::kDouble,
        "semantic constraint weight"}});

  SubSchema translatecmd;
  translatecmd.add(
      app.add_subcommand("translate",
                         "Translate one image with a trained model"),
      {{"checkpoint", "", KeyType::kString, "model checkpoint"},
       {"input", "", KeyType::kString, "input PNG"},
       {"from", "", KeyType::kString, "source domain, A or B"},
       {"k", "", KeyType::kInt, "number of stochastic translations"},
       {"seed", "", KeyType::kUInt, "style seed"},
       {"out", "", KeyType::kString, "output directory"}});

  SubSchema evaluate;
  evaluate.add(
      app.add_subcommand("evaluate",
                         "Measure robustness and diversity of a trained "
                         "model on a held-out dataset"),
      {{"data", "", KeyType::kString, "held-out dataset root"},
       {"metric_data", "", KeyType::kString,
        "disjoint dataset root for the measurement classifier"},
       {"extractor", "", KeyType::kString, "semantic extractor archive"},
       {"checkpoint", "", KeyType::kString, "model checkpoint"},
       {"baseline", "", KeyType::kString,
        "baseline checkpoint (paired comparison)"},
       {"udit", "", KeyType::kString, "udit checkpoint (paired comparison)"},
       {"identity", "", KeyType::kBool,
        "evaluate the identity translator instead of a checkpoint"},
       {"attribute", "", KeyType::kString,
        "attribute to measure (defaults to the extractor's)"},
       {"direction", "", KeyType::kString, "A->B or B->A"},
       {"k", "", KeyType::kInt, "translations per input"},
       {"pair_count", "", KeyType::kInt, "diversity pairs per input"},
       {"metric_epochs", "", KeyType::kInt, "classifier training epochs"},
       {"filter_attribute", "", KeyType::kString,
        "keep only inputs with this attribute..."},
       {"filter_value", "", KeyType::kString, "...equal to this value"},
       {"seed", "", KeyType::kUInt, "evaluation seed"},
       {"out", "", KeyType::kString, "output directory"}});

  SubSchema reportcmd;
  std::vector<std::string> report_ins;
  std::vector<std::string> report_paired;
  reportcmd.add(app.add_subcommand(
                    "report", "Render bar charts and the diversity table "
                              "from saved bias reports"),
                {{"out", "", KeyType::kString, "output directory"}});
  reportcmd.app->add_option("--in", report_ins,
                            "labeled report: label=bias_report.json");
  reportcmd.app->add_option("--paired", report_paired,
                            "paired report produced by evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (datagen.app->parsed()) {
    Json d;
    d["out"] = "";
    d["seed"] = uint64_t{0};
    d["image_size"] = 64;
    d["majority"] = 1330;
    d["minority"] = 70;
    return cmd_datagen(collect(datagen, d));
  }
  if (trainx.app->parsed()) {
    Json d;
    d["data"] = "";
    d["out"] = "";
    d["attribute"] = "shape";
    d["epochs"] = 12;
    d["sweep_epochs"] = 2;
    d["grid"] = "4,8,16,32,64,128,256";
    d["tau"] = 4.0;
    d["kernel"] = 5;
    d["batch_size"] = 16;
    d["lr"] = 1e-3;
    d["val_fraction"] = 0.2;
    d["seed"] = uint64_t{0};
    return cmd_train_extractor(collect(trainx, d));
  }
  if (traincmd.app->parsed())
    return cmd_train(collect(traincmd, train::TrainConfig{}.to_json()));
  if (translatecmd.app->parsed()) {
    Json d;
    d["checkpoint"] = "";
    d["input"] = "";
    d["from"] = "A";
    d["k"] = 1;
    d["seed"] = uint64_t{0};
    d["out"] = "";
    return cmd_translate(collect(translatecmd, d));
  }
  if (evaluate.app->parsed()) {
    Json d;
    d["data"] = "";
    d["metric_data"] = "";
    d["extractor"] = "";
    d["checkpoint"] = "";
    d["baseline"] = "";
    d["udit"] = "";
    d["identity"] = false;
    d["attribute"] = "";
    d["direction"] = "A->B";
    d["k"] = 4;
    d["pair_count"] = 19;
    d["metric_epochs"] = 12;
    d["filter_attribute"] = "";
    d["filter_value"] = "";
    d["seed"] = uint64_t{0};
    d["out"] = "";
    return cmd_evaluate(collect(evaluate, d));
  }
  if (reportcmd.app->parsed()) {
    Json d;
    d["out"] = "";
    return cmd_report(collect(reportcmd, d), report_ins, report_paired);
  }
  return 2;  // unreachable: require_subcommand already failed the parse
}

}  // namespace

int run(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {  // includes IoError
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace udit::cli
