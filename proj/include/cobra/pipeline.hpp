#pragma once

// End-to-end commands behind the CLI. Every command reads a resolved
// ExperimentConfig and writes into output_dir/run_id/.

#include <filesystem>
#include <json.hpp>

#include "cobra/config.hpp"

namespace cobra::pipeline {

struct RunFiles {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.resolved"; }
  std::filesystem::path model() const { return dir / "model.ckpt"; }
  std::filesystem::path threshold() const { return dir / "threshold.ckpt"; }
  std::filesystem::path report_csv() const { return dir / "report.csv"; }
  std::filesystem::path report_txt() const { return dir / "report.txt"; }
  std::filesystem::path log() const { return dir / "log.jsonl"; }
  std::filesystem::path craft_log() const { return dir / "craft_log.jsonl"; }
  std::filesystem::path craft_summary() const { return dir / "craft_summary.json"; }
  std::filesystem::path craft_grid() const { return dir / "crafted_grid.pgm"; }
  std::filesystem::path transcripts() const { return dir / "attack_transcripts.csv"; }
};

RunFiles files_for(const config::ExperimentConfig& cfg);

/// Writes config.resolved and creates the run directory.
RunFiles prepare_run(const config::ExperimentConfig& cfg);

/// Fits the threshold model, crafts one pseudo-anomaly per training image (up to
/// 256), writes threshold.ckpt, craft_log.jsonl, craft_summary.json and a PGM
/// grid of (normal, crafted) pairs. Returns the summary.
nlohmann::json cmd_craft(const config::ExperimentConfig& cfg);

/// Loads threshold.ckpt (crafting it first if absent) and trains; writes
/// model.ckpt and log.jsonl. `resume` continues from model.ckpt.
nlohmann::json cmd_train(const config::ExperimentConfig& cfg, bool resume = false);

/// Evaluates model.ckpt under eval.conditions; writes report.txt / report.csv.
evalkit::EvalReport cmd_eval(const config::ExperimentConfig& cfg);

/// Like eval but requires at least one attacked condition and always writes
/// per-sample attack transcripts.
evalkit::EvalReport cmd_attack(const config::ExperimentConfig& cfg);

/// Renders report.txt as a table.
std::string cmd_report(const config::ExperimentConfig& cfg);

/// Writes images (N, 1 or 3, H, W) as a grayscale PGM mosaic with `cols` columns.
void write_pgm_grid(const std::filesystem::path& path, const torch::Tensor& images, std::int64_t cols);

}  // namespace cobra::pipeline
