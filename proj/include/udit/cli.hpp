#pragma once
// Command-line entry point: dataset generation, extractor training, model
// training, translation, evaluation, and chart rendering behind one binary.
//
// Grammar: udit <subcommand> [--config file.json] [--key value]...
// Flag values override config-file values; a missing seed falls back to the
// UDIT_SEED environment variable. Every subcommand validates its effective
// configuration, echoes it to <out>/effective_config.json before doing any
// work, and exits 0 on success, 2 on configuration errors, 3 on data or I/O
// errors, 4 on checkpoint/shape/state mismatches, and 1 on anything else.

namespace udit::cli {

int run(int argc, const char* const* argv);

}  // namespace udit::cli
