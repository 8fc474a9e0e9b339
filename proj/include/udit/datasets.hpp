#pragma once

// Synthetic biased two-domain shape dataset: generation, ingestion, and
// validation.
//
// The built-in generator renders colored shapes on a gray background. The
// attribute users want translation to change ("wanted") is the fill
// appearance — a texture-color pair such as flat-blue or striped-red. The
// attribute translation must preserve ("unwanted") is the shape class —
// circle or square. Domain datasets are deliberately constructable with
// misaligned shape marginals (e.g. domain A 95% circles, domain B 95%
// squares) so that shape becomes spuriously correlated with fill.
//
// On-disk layout under a dataset root:
//   <root>/A/images/*.png      8-bit RGB, square
//   <root>/A/manifest.json     domain, seed, image_size, counts, attributes
//   <root>/B/images/*.png
//   <root>/B/manifest.json
//   <root>/labels.csv          header: path,domain,<attr1>,<attr2>,...
//
// Generation is a pure function of (config, seed) at the byte level: the
// labels file and every pixel reproduce exactly on re-run. Per-sample jitter
// comes from a counter-based RNG keyed on (domain seed, sample index), so
// the contract holds regardless of generation order or parallelism.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "udit/array.hpp"
#include "udit/image.hpp"
#include "udit/serde.hpp"

namespace udit::data {

struct AttributeSpec {
  enum class Kind { kWanted, kUnwanted };
  std::string name;
  Kind kind = Kind::kUnwanted;
  std::vector<std::string> values;  // ordered, >= 2, duplicate-free
};

struct SampleRecord {
  std::string image_path;  // relative to the dataset root, forward slashes
  char domain = 'A';
  std::map<std::string, std::string> labels;  // attribute name -> value
};

struct DomainManifest {
  char domain = 'A';
  uint64_t seed = 0;
  int image_size = 64;  // square; 64 or 128
  // Cell key = attribute values joined with ',' in schema order,
  // e.g. "circle,flat-blue". Order preserved for deterministic output.
  std::vector<std::pair<std::string, int64_t>> counts;
  std::vector<AttributeSpec> attributes;  // schema echo

  int64_t total() const;
};

struct JitterRanges {
  double center_frac = 0.12;     // shape center offset, fraction of image
  double rotation_deg = 30.0;    // uniform in +/- this
  double scale_lo = 0.22;        // shape half-size, fraction of image
  double scale_hi = 0.34;
  double hue_noise = 0.06;       // per-channel color offset, uniform +/-
  double background_noise = 0.05;
};

struct RenderStyle {
  std::vector<std::string> shapes = {"circle", "square"};
  std::vector<std::string> textures = {"flat", "striped"};
  std::vector<std::string> colors = {"blue", "red"};
  JitterRanges jitter;
};

struct BiasedDatasetConfig {
  std::vector<AttributeSpec> attributes;  // exactly one wanted, >= 1 unwanted
  DomainManifest manifest_A;
  DomainManifest manifest_B;
  RenderStyle render;
  bool biased = true;  // if set, unwanted marginals must differ across domains

  // Raises ConfigError on any violated invariant.
  void validate() const;

  Json to_json() const;
  static BiasedDatasetConfig from_json(const Json& j);

  // The stock construction: shape (unwanted: circle/square) x fill (wanted:
  // flat-blue/striped-red). Domain A is flat-blue with `majority` circles and
  // `minority` squares; domain B is striped-red with the shape ratio
  // mirrored. Domain seeds derive from `seed` (A: 2*seed, B: 2*seed+1).
  static BiasedDatasetConfig default_biased(uint64_t seed, int image_size = 64,
                                            int64_t majority = 1330,
                                            int64_t minority = 70);
};

// Renders every configured sample under out_dir and writes the two manifests
// plus the shared labels file. Returns the (A, B) manifests. Unwritable
// output raises IoError; invalid configuration raises ConfigError.
std::pair<DomainManifest, DomainManifest> generate_biased_shapes(
    const BiasedDatasetConfig& config, const std::string& out_dir);

// Reads one domain back: records in labels-file order, restricted to the
// domain. Missing files, schema mismatches, or count mismatches raise
// DataError naming the offender.
std::vector<SampleRecord> load_domain(const std::string& root, char domain);

// Reads the domain manifest alone (DataError on parse problems).
DomainManifest load_manifest(const std::string& root, char domain);

// Full audit of a dataset root. Returns human-readable violations; empty
// means every stored invariant holds (counts match disk, images decode at
// the declared size, labels fit the schema, schemas agree across domains).
std::vector<std::string> validate_manifest(const std::string& root);

// Decodes one record's image to float CHW in [-1, 1].
Array<float> load_record_image(const std::string& root, const SampleRecord& r);

}  // namespace udit::data
