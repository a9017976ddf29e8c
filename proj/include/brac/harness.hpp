#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "brac/trainer.hpp"

namespace brac {

struct GridSpec {
  std::vector<double> policy_lrs{3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3};
  /// Empty for algorithms without a strength knob (bc, sac).
  std::vector<double> strengths;
  std::size_t seeds = 5;

  void validate() const;
  std::size_t strength_count() const { return strengths.empty() ? 1 : strengths.size(); }
};

/// Full search grid for an algorithm (strength list keyed by its knob).
GridSpec default_grid(const TrainerConfig& cfg);
/// The five strength values searched for an algorithm; empty for bc and sac.
std::vector<double> strength_values(const TrainerConfig& cfg);

struct GridCell {
  std::size_t lr = 0, strength = 0, dataset = 0, seed = 0;

  std::string file_name() const;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

std::uint64_t cell_seed(std::uint64_t base_seed, const GridCell& cell);

struct GridDataset {
  std::string name;
  const OfflineDataset* data = nullptr;
  /// Cloned behavior for this dataset (mmd, kl_primal, bcq need it).
  const TanhGaussianPolicy* behavior = nullptr;
};

struct GridRecord {
  GridCell cell;
  double policy_lr = 0.0;
  double strength = 0.0;
  std::string dataset;
  RunRecord run;

  nlohmann::json to_json() const;
  static GridRecord from_json(const nlohmann::json& j);
};

/// Config for one cell: base config with lr, strength and the derived seed.
TrainerConfig cell_config(const GridSpec& grid, const TrainerConfig& base, const GridCell& cell);

struct GridOptions {
  std::size_t parallelism = 1;
  /// Stop after this many new runs (0 = no limit); used to exercise resume.
  std::size_t max_new_runs = 0;
  std::function<void(const GridRecord&)> on_record;
};

struct GridResult {
  std::vector<GridRecord> records;  // cell order
  std::size_t executed = 0;         // runs done by this call
  std::size_t resumed = 0;          // records read back from out_dir
};

/// One run per (lr, strength, dataset, seed). Each finished run is written
/// atomically to out_dir/<cell>.json; existing files are loaded and skipped.
GridResult run_grid(const GridSpec& grid, const TrainerConfig& base, const std::vector<GridDataset>& datasets,
                    const Environment& env, const EvalProtocol& protocol, const std::filesystem::path& out_dir,
                    const GridOptions& options = {});

/// Reads every cell file from a directory.
std::vector<GridRecord> load_grid_records(const std::filesystem::path& dir);

struct BestCell {
  double policy_lr = 0.0;
  double strength = 0.0;
  double mean_score = 0.0;
  std::size_t runs = 0;
};

/// Hyperparameter pair with the highest mean raw final score over all
/// datasets and seeds. Cells with a failed run rank below cells without.
/// Ties go to the smaller strength, then the smaller lr. Throws ConfigError
/// listing the missing (lr, strength, dataset, seed) cells when incomplete.
BestCell select_best(const std::vector<GridRecord>& records);

struct CorrelationGroup {
  std::string env, variant, dataset;
  std::vector<std::pair<double, double>> points;  // (mean Q over last window, final score)
  std::optional<double> spearman;                 // empty when undefined
};

/// Spearman rank correlation with average ranks; empty when either side has
/// no rank variance (or fewer than two points).
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);
std::vector<CorrelationGroup> correlation_report(const std::vector<GridRecord>& records);

struct AggregateRow {
  std::string env, variant;
  double policy_lr = 0.0, strength = 0.0;
  double mean = 0.0, std = 0.0;  // population std over all datasets and seeds
  std::size_t runs = 0, failed = 0;
  bool best = false;
};

std::vector<AggregateRow> aggregate(const std::vector<GridRecord>& records);

struct ReportFiles {
  std::filesystem::path grid_csv, summary_json;
};

/// Writes grid.csv (one row per env, variant, lr, strength) and summary.json
/// (best cells, per-dataset mean and std at the best cell, learning curves,
/// Q/score correlation). Throws FormatError when a file cannot be written.
ReportFiles emit_report(const std::vector<GridRecord>& records, const std::filesystem::path& out_dir);

}  // namespace brac
