#pragma once

// Binary archive for named float32 parameter arrays, used for translator
// checkpoints and for the frozen semantic extractor.
//
// File layout (all integers little-endian):
//   bytes 0..7    magic "UDITCKP1"
//   bytes 8..15   uint64 manifest byte length
//   next          manifest: UTF-8 JSON
//   rest          payload: the arrays' float32 data, concatenated in
//                 manifest order
//
// Manifest object, keys in order:
//   format_version  int, currently 1
//   kind            string, e.g. "translator" or "extractor"
//   meta            kind-specific object; for translators it holds
//                   hyperparameters, loss weights, seed, and iteration
//   arrays          list of {name, dtype ("f32"), shape, offset}; offset is
//                   relative to the payload start
//
// Readers verify the magic, the version, every dtype, every shape, offset
// contiguity, and the exact file size; any mismatch raises CheckpointError.
// A file that cannot be opened raises IoError. Writes go through a temporary
// file and a rename, so an interrupted save never leaves a truncated archive
// at the target path.

#include <string>
#include <utility>
#include <vector>

#include "udit/array.hpp"
#include "udit/layers.hpp"
#include "udit/nets.hpp"
#include "udit/serde.hpp"

namespace udit::ckpt {

inline constexpr int kFormatVersion = 1;

struct Archive {
  std::string kind;
  Json meta = Json::object();
  std::vector<std::pair<std::string, Array<float>>> arrays;

  const Array<float>* find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
      if (n == name) return &a;
    return nullptr;
  }
};

// Writes the archive. Duplicate array names raise CheckpointError before
// anything touches the filesystem.
void write_archive(const std::string& path, const Archive& a);

Archive read_archive(const std::string& path);

// Copies parameter values (and, when present, Adam moment state under
// "<name>#m" / "<name>#v") into an archive's array list.
void pack_params(Archive& a, const std::vector<ag::Param<float>*>& params);

// Restores parameters from an archive: every parameter must be present with
// an identical shape, Adam state must be present for either all or none of
// the parameters that carry it, and the archive must contain nothing besides
// the requested parameters. Violations raise CheckpointError.
void unpack_params(const Archive& a,
                   const std::vector<ag::Param<float>*>& params);

// Translator checkpoints: kind "translator", meta {hyperparameters,
// loss_weights, seed, iteration}.
void save_model(const std::string& path, nets::TranslationModel<float>& m);
nets::TranslationModel<float> load_model(const std::string& path);

}  // namespace udit::ckpt
