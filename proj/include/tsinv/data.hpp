#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsinv/tensor.hpp"

namespace tsinv::data {

struct RawSeries {
  std::vector<double> values;
  std::string sampling_period;  // label only
  std::string name;
};

struct NormStats {
  double min = 0.0;
  double max = 1.0;
};

struct SeriesWindow {
  Tensor obs;  // (H, 1)
  Tensor tar;  // (F, 1)
  int64_t origin_index = 0;
};

struct WindowingSpec {
  int obs_len = 96;
  int horizon = 96;
  int step_attack = 96;
  int step_aux = 1;

  int window() const { return obs_len + horizon; }
  void Validate() const;
};

struct Splits {
  std::vector<SeriesWindow> train, val, test;
};

struct CsvOptions {
  // Empty selects the last column.
  std::string value_column;
  // Timestamp column used to detect missing rows; empty disables gap detection.
  std::string time_column;
};

// Reads one series from a headered CSV. Blank or non-numeric cells and
// skipped timestamps are filled by linear interpolation.
RawSeries ReadCsv(const std::string& path, const CsvOptions& options = {});

// Linear interpolation over NaN entries; leading/trailing gaps copy the nearest value.
void FillGaps(std::vector<double>& values);

RawSeries MinmaxNormalize(const RawSeries& series, NormStats* stats);
std::vector<double> Denormalize(const std::vector<double>& values, const NormStats& stats);

std::vector<SeriesWindow> RollingWindows(const RawSeries& series, int obs_len, int horizon, int step);

// Chronological: test = round(0.2 n), val = round(0.2 (n - test)), half rounded up.
Splits SplitDataset(const std::vector<SeriesWindow>& windows);

RawSeries SynthSeries(uint64_t seed, int length, int period_steps, double trend_slope, double noise_std);

// Stacks windows into (B, H, 1) observations and (B, F, 1) targets.
Tensor StackObs(const std::vector<SeriesWindow>& windows);
Tensor StackTar(const std::vector<SeriesWindow>& windows);

// `batch` distinct windows from a seeded shuffle of the pool.
std::vector<SeriesWindow> SampleBatch(const std::vector<SeriesWindow>& pool, int batch, uint64_t seed);

// Output of `data prepare`: the attack pool and the auxiliary set.
struct PreparedData {
  WindowingSpec windowing;
  NormStats norm;
  std::string name;
  std::vector<SeriesWindow> attack_pool;  // train split of step_attack windows
  std::vector<SeriesWindow> aux;          // val split of step_aux windows
};

PreparedData Prepare(const RawSeries& raw, const WindowingSpec& windowing);

// Pack: int64 H, F, count, then count rows of H+F f64 values.
void WritePack(const std::string& path, const std::vector<SeriesWindow>& windows);
std::vector<SeriesWindow> ReadPack(const std::string& path);

// Directory with manifest.json, attack.bin and aux.bin.
void SavePrepared(const std::string& dir, const PreparedData& data);
PreparedData LoadPrepared(const std::string& dir);

}  // namespace tsinv::data
