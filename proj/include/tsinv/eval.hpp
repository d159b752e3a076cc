#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsinv/attacks.hpp"
#include "tsinv/data.hpp"
#include "tsinv/federation.hpp"
#include "tsinv/models.hpp"
#include "tsinv/tensor.hpp"

namespace tsinv::eval {

// Mean of 2|s - r| / (|s| + |r|); a term is zero when both magnitudes are
// below 1e-12.
double Smape(std::span<const double> truth, std::span<const double> recon);
double Smape(const Tensor& truth, const Tensor& recon);
double Mae(const Tensor& truth, const Tensor& recon);
double Mse(const Tensor& truth, const Tensor& recon);

struct SampleMetrics {
  double smape_obs = 0, smape_tar = 0, mae_obs = 0, mae_tar = 0, mse_obs = 0, mse_tar = 0;
};

struct MetricReport {
  SampleMetrics mean;             // under the matched assignment
  std::vector<SampleMetrics> per_sample;  // indexed by true sample
  std::vector<int> permutation;   // true sample b was reconstructed as recon[permutation[b]]
  SampleMetrics identity;         // recon[b] scored against truth[b]
  bool greedy = false;            // B > 8: assignment is greedy, not exhaustive
};

nlohmann::json ReportToJson(const MetricReport& r);

// Batches are (B, T, 1). Exhaustive search over assignments for B <= 8,
// minimizing mean sMAPE over the concatenated obs and tar of each sample.
MetricReport MatchBatch(const Tensor& recon_obs, const Tensor& recon_tar, const Tensor& true_obs,
                        const Tensor& true_tar);

// Experiment grid mirrored by the JSON config of `grid run`.
struct DatasetSpec {
  std::string name;
  std::string prepared_dir;  // empty: build synthetic data from the fields below
  uint64_t synth_seed = 7;
  int synth_length = 0;      // 0: 20 * (obs_len + horizon)
  double synth_slope = 0.0002;
  double synth_noise = 0.03;
  int period = 0;            // 0: obs_len; also the periodicity lag of attacks
  int step_aux = 2;
};

struct AttackSpec {
  std::string label;
  std::string method;
  nlohmann::json overrides = nlohmann::json::object();  // AttackConfig fields
  // Trained components: "finv" supplies quantile bounds, "lti" replaces the
  // optimization. Keys follow InvNetSpec (hidden, epochs, train_captures, ...).
  nlohmann::json learned = nlohmann::json::object();
};

struct ExperimentGrid {
  std::vector<DatasetSpec> datasets;
  std::vector<std::string> models;  // architecture names
  std::vector<AttackSpec> attacks;
  std::vector<std::string> defenses{"none"};
  std::vector<int> batch_sizes{1};
  std::vector<uint64_t> seeds{10, 43, 28, 80, 71};
  int obs_len = 24;
  int horizon = 24;
  int hidden = 16;
  int steps = 5000;
  double noise_std = 0.1;
  double prune_ratio = 0.9;
  int workers = 1;
  std::string out_dir;
};

ExperimentGrid GridFromJson(const nlohmann::json& j);
nlohmann::json GridToJson(const ExperimentGrid& g);

struct GridCell {
  std::string dataset, model, attack, defense;
  int batch_size = 1;
  std::string Key() const;
};

// Deterministic expansion: datasets, models, attacks, defenses, batch sizes.
std::vector<GridCell> ExpandGrid(const ExperimentGrid& g);

struct RunRecord {
  GridCell cell;
  uint64_t seed = 0;
  bool ok = true;
  std::string error;
  MetricReport report;
  std::optional<attack::AttackResult> result;  // unmatched reconstructions; absent on failure or reload
  double wall_time = 0.0;
};

struct GridRow {
  GridCell cell;
  int runs = 0, failures = 0;
  double smape_obs_mean = 0, smape_obs_std = 0, smape_tar_mean = 0, smape_tar_std = 0;
  double mae_obs_mean = 0, mae_tar_mean = 0;
  double identity_smape_obs_mean = 0, identity_smape_tar_mean = 0;
};

struct GridSummary {
  std::vector<GridRow> rows;
  int executed = 0;  // runs computed in this call; the rest came from the manifest
};

// One directory per (cell, seed) under out_dir/runs holding run.json and the
// attack result (result.json, recon.bin), manifest.json of finished runs,
// results.csv with mean and population std over seeds.
GridSummary RunGrid(const ExperimentGrid& grid);

// Everything a cell's attack sees, before the attack runs: data, model at
// init_seed = seed, the sampled batch's capture with the defense applied.
struct CellSetup {
  data::PreparedData prepared;
  ModelSpec spec;
  std::unique_ptr<ForecastModel> model;
  ParamVector params;
  fed::GradientCapture capture;
  fed::DefenseSpec defense;
  int period = 0;  // periodicity lag for synthetic data, 0 for prepared data
};

CellSetup SetupCell(const ExperimentGrid& grid, const GridCell& cell, uint64_t seed);

// Runs a single (cell, seed) without touching disk.
RunRecord RunCell(const ExperimentGrid& grid, const GridCell& cell, uint64_t seed);

// One SVG per sample: truth obs/tar, reconstructed obs/tar, optional bands
// between paired quantiles. Returns the written paths.
std::vector<std::string> EmitPlots(const std::string& out_dir, const std::string& stem, const Tensor& recon_obs,
                                   const Tensor& recon_tar, const Tensor& true_obs, const Tensor& true_tar,
                                   const std::optional<attack::QuantileBounds>& bounds = std::nullopt);

}  // namespace tsinv::eval
