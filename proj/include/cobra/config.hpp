#pragma once

// Experiment configuration: an INI file with the sections below. Every key has
// a default; unknown sections or keys are rejected. Command-line overrides use
// `--section.key=value`. Transform parameters live in [transforms] as
// `<transform id>.<param> = value`.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cobra/crafter.hpp"
#include "cobra/data.hpp"
#include "cobra/evalkit.hpp"
#include "cobra/nets.hpp"
#include "cobra/trainer.hpp"

namespace cobra::config {

/// section -> key -> raw value
using RawConfig = std::map<std::string, std::map<std::string, std::string>>;

RawConfig defaults();

/// Parses an INI file (Boost.PropertyTree). Throws NotFoundError / ValidationError.
RawConfig read_ini(const std::filesystem::path& path);
RawConfig parse_ini(const std::string& text);

/// Applies `section.key=value` on top of `base`; rejects unknown keys.
void apply_override(RawConfig& base, const std::string& dotted, const std::string& value);

/// defaults() <- file <- overrides, validated key by key.
RawConfig resolve(const RawConfig& file, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Canonical INI text (sorted sections and keys).
std::string to_ini(const RawConfig& cfg);

struct RunConfig {
  std::string run_id = "default";
  std::filesystem::path output_dir = "runs";
  Seed seed = 0;
  int workers = 1;
  bool verbose = false;
};

struct EvalConfig {
  std::vector<evalkit::Condition> conditions;
  std::vector<evalkit::ScoreVariant> variants;
  std::int64_t chunk = 256;
  bool transcripts = true;
};

struct ExperimentConfig {
  RunConfig run;
  data::ProtocolSpec data;
  nets::ModelConfig model;
  crafter::CrafterConfig crafter;
  trainer::TrainConfig train;
  EvalConfig eval;
  RawConfig raw;  // resolved key-values, persisted verbatim

  std::filesystem::path run_dir() const { return run.output_dir / run.run_id; }
  std::string fingerprint() const;
};

/// Typed view of a resolved config; throws ValidationError on bad values.
ExperimentConfig build(const RawConfig& resolved);

/// Accepts plain numbers and fractions such as "4/255".
double parse_number(const std::string& key, const std::string& value);

}  // namespace cobra::config
