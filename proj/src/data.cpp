#include "tsinv/data.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tsinv/io.hpp"

namespace tsinv::data {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string Trim(std::string s) {
  auto keep = [](unsigned char c) { return !std::isspace(c) && c != '"'; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), keep));
  s.erase(std::find_if(s.rbegin(), s.rend(), keep).base(), s.end());
  return s;
}

std::vector<std::string> SplitRow(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(Trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double ParseNumber(const std::string& s) {
  if (s.empty()) return kNan;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return kNan;
  return v;
}

// Seconds since epoch for ISO-like stamps, or the raw number for numeric stamps.
double ParseTime(const std::string& s) {
  const double numeric = ParseNumber(s);
  if (!std::isnan(numeric)) return numeric;
  for (const char* fmt : {"%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M", "%Y-%m-%d"}) {
    std::tm tm{};
    std::istringstream in(s);
    in >> std::get_time(&tm, fmt);
    if (!in.fail()) return static_cast<double>(timegm(&tm));
  }
  throw std::runtime_error("unparseable timestamp '" + s + "'");
}

size_t ColumnIndex(const std::vector<std::string>& header, const std::string& name, const std::string& path) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error(path + ": no column named '" + name + "'");
  return static_cast<size_t>(it - header.begin());
}

int64_t RoundHalfUp(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

nlohmann::json OriginList(const std::vector<SeriesWindow>& windows) {
  auto j = nlohmann::json::array();
  for (const auto& w : windows) j.push_back(w.origin_index);
  return j;
}

}  // namespace

void WindowingSpec::Validate() const {
  if (obs_len < 1 || horizon < 1) throw std::invalid_argument("window lengths must be positive");
  if (step_attack < 1 || step_aux < 1) throw std::invalid_argument("window steps must be >= 1");
}

void FillGaps(std::vector<double>& values) {
  std::vector<size_t> known;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!std::isnan(values[i])) known.push_back(i);
  }
  if (known.empty()) throw std::runtime_error("series has no numeric values");
  for (size_t i = 0; i < known.front(); ++i) values[i] = values[known.front()];
  for (size_t i = known.back() + 1; i < values.size(); ++i) values[i] = values[known.back()];
  for (size_t k = 0; k + 1 < known.size(); ++k) {
    const size_t a = known[k], b = known[k + 1];
    for (size_t i = a + 1; i < b; ++i) {
      const double t = double(i - a) / double(b - a);
      values[i] = values[a] + t * (values[b] - values[a]);
    }
  }
}

RawSeries ReadCsv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  const auto header = SplitRow(line);
  if (header.empty()) throw std::runtime_error(path + ": empty header");
  const size_t value_col =
      options.value_column.empty() ? header.size() - 1 : ColumnIndex(header, options.value_column, path);
  const bool timed = !options.time_column.empty();
  const size_t time_col = timed ? ColumnIndex(header, options.time_column, path) : 0;

  std::vector<double> values, times;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    const auto cells = SplitRow(line);
    values.push_back(value_col < cells.size() ? ParseNumber(cells[value_col]) : kNan);
    if (timed) {
      if (time_col >= cells.size()) throw std::runtime_error(path + ": row without timestamp");
      times.push_back(ParseTime(cells[time_col]));
    }
  }

  if (timed && times.size() > 1) {
    // The most common positive spacing is the sampling period; longer steps are missing rows.
    std::map<double, int> spacing;
    for (size_t i = 1; i < times.size(); ++i) {
      if (times[i] <= times[i - 1]) throw std::runtime_error(path + ": timestamps not increasing");
      ++spacing[times[i] - times[i - 1]];
    }
    const double period =
        std::max_element(spacing.begin(), spacing.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
    std::vector<double> filled{values.front()};
    for (size_t i = 1; i < values.size(); ++i) {
      const auto missing = RoundHalfUp((times[i] - times[i - 1]) / period) - 1;
      for (int64_t k = 0; k < missing; ++k) filled.push_back(kNan);
      filled.push_back(values[i]);
    }
    values = std::move(filled);
  }
  FillGaps(values);

  RawSeries series;
  series.values = std::move(values);
  series.name = header[value_col];
  return series;
}

RawSeries MinmaxNormalize(const RawSeries& series, NormStats* stats) {
  if (series.values.empty()) throw std::invalid_argument("cannot normalize an empty series");
  const auto [lo, hi] = std::minmax_element(series.values.begin(), series.values.end());
  if (!(*hi > *lo)) throw std::invalid_argument("cannot normalize a constant series");
  NormStats s{*lo, *hi};
  RawSeries out = series;
  for (double& v : out.values) v = (v - s.min) / (s.max - s.min);
  if (stats) *stats = s;
  return out;
}

std::vector<double> Denormalize(const std::vector<double>& values, const NormStats& stats) {
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] * (stats.max - stats.min) + stats.min;
  return out;
}

std::vector<SeriesWindow> RollingWindows(const RawSeries& series, int obs_len, int horizon, int step) {
  if (obs_len < 1 || horizon < 1 || step < 1) throw std::invalid_argument("window lengths and step must be positive");
  const int64_t width = obs_len + horizon;
  const auto n = static_cast<int64_t>(series.values.size());
  if (n < width) {
    throw std::invalid_argument("series of length " + std::to_string(n) + " is shorter than window " +
                                std::to_string(width));
  }
  std::vector<SeriesWindow> windows;
  for (int64_t start = 0; start + width <= n; start += step) {
    const double* base = series.values.data() + start;
    SeriesWindow w;
    w.obs = Tensor({obs_len, 1}, std::vector<double>(base, base + obs_len));
    w.tar = Tensor({horizon, 1}, std::vector<double>(base + obs_len, base + width));
    w.origin_index = start;
    windows.push_back(std::move(w));
  }
  return windows;
}

Splits SplitDataset(const std::vector<SeriesWindow>& windows) {
  const auto n = static_cast<int64_t>(windows.size());
  if (n < 5) throw std::invalid_argument("need at least 5 windows to split, got " + std::to_string(n));
  const int64_t test = RoundHalfUp(0.2 * double(n));
  const int64_t val = RoundHalfUp(0.2 * double(n - test));
  const int64_t train = n - test - val;
  Splits s;
  s.train.assign(windows.begin(), windows.begin() + train);
  s.val.assign(windows.begin() + train, windows.begin() + train + val);
  s.test.assign(windows.begin() + train + val, windows.end());
  return s;
}

RawSeries SynthSeries(uint64_t seed, int length, int period_steps, double trend_slope, double noise_std) {
  if (period_steps < 1 || length < 2 * period_steps) throw std::invalid_argument("synth series needs length >= 2 p");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.2, 0.4), amp2(0.05, 0.15), phase(0.0, 2 * std::numbers::pi);
  const double a1 = amp(rng), a2 = amp2(rng), phi = phase(rng);
  std::normal_distribution<double> noise(0.0, noise_std > 0 ? noise_std : 1.0);
  RawSeries raw;
  raw.name = "synth";
  raw.sampling_period = "1 step";
  raw.values.resize(static_cast<size_t>(length));
  const double w = 2 * std::numbers::pi / period_steps;
  for (int t = 0; t < length; ++t) {
    double x = 0.5 + a1 * std::sin(w * t) + a2 * std::sin(2 * w * t + phi) + trend_slope * t;
    if (noise_std > 0) x += noise(rng);
    raw.values[static_cast<size_t>(t)] = x;
  }
  return MinmaxNormalize(raw, nullptr);
}

Tensor StackObs(const std::vector<SeriesWindow>& windows) {
  if (windows.empty()) throw std::invalid_argument("no windows to stack");
  const int64_t h = windows.front().obs.dim(0);
  Tensor out({static_cast<int64_t>(windows.size()), h, 1});
  for (size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].obs.dim(0) != h) throw ShapeError("windows have different observation lengths");
    std::copy_n(windows[b].obs.data().begin(), h, out.data().begin() + static_cast<int64_t>(b) * h);
  }
  return out;
}

Tensor StackTar(const std::vector<SeriesWindow>& windows) {
  if (windows.empty()) throw std::invalid_argument("no windows to stack");
  const int64_t f = windows.front().tar.dim(0);
  Tensor out({static_cast<int64_t>(windows.size()), f, 1});
  for (size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].tar.dim(0) != f) throw ShapeError("windows have different horizons");
    std::copy_n(windows[b].tar.data().begin(), f, out.data().begin() + static_cast<int64_t>(b) * f);
  }
  return out;
}

std::vector<SeriesWindow> SampleBatch(const std::vector<SeriesWindow>& pool, int batch, uint64_t seed) {
  if (batch < 1 || size_t(batch) > pool.size()) throw std::invalid_argument("batch size must lie in [1, pool size]");
  std::vector<size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<SeriesWindow> out;
  for (int b = 0; b < batch; ++b) out.push_back(pool[order[size_t(b)]]);
  return out;
}

PreparedData Prepare(const RawSeries& raw, const WindowingSpec& windowing) {
  windowing.Validate();
  PreparedData out;
  out.windowing = windowing;
  out.name = raw.name;
  const RawSeries norm = MinmaxNormalize(raw, &out.norm);
  out.attack_pool = SplitDataset(RollingWindows(norm, windowing.obs_len, windowing.horizon, windowing.step_attack)).train;
  out.aux = SplitDataset(RollingWindows(norm, windowing.obs_len, windowing.horizon, windowing.step_aux)).val;
  return out;
}

void WritePack(const std::string& path, const std::vector<SeriesWindow>& windows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const int64_t h = windows.empty() ? 0 : windows.front().obs.dim(0);
  const int64_t f = windows.empty() ? 0 : windows.front().tar.dim(0);
  const int64_t header[3] = {h, f, static_cast<int64_t>(windows.size())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (const auto& w : windows) {
    if (w.obs.dim(0) != h || w.tar.dim(0) != f) throw ShapeError("pack windows must share H and F");
    out.write(reinterpret_cast<const char*>(w.obs.data().data()), static_cast<std::streamsize>(h * 8));
    out.write(reinterpret_cast<const char*>(w.tar.data().data()), static_cast<std::streamsize>(f * 8));
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

std::vector<SeriesWindow> ReadPack(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  int64_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] < 0 || header[1] < 0 || header[2] < 0) throw std::runtime_error(path + ": bad pack header");
  std::vector<SeriesWindow> windows(static_cast<size_t>(header[2]));
  for (auto& w : windows) {
    w.obs = Tensor({header[0], 1});
    w.tar = Tensor({header[1], 1});
    in.read(reinterpret_cast<char*>(w.obs.data().data()), static_cast<std::streamsize>(header[0] * 8));
    in.read(reinterpret_cast<char*>(w.tar.data().data()), static_cast<std::streamsize>(header[1] * 8));
  }
  if (!in) throw std::runtime_error(path + ": truncated pack");
  return windows;
}

void SavePrepared(const std::string& dir, const PreparedData& data) {
  io::EnsureDir(dir);
  WritePack(io::Join(dir, "attack.bin"), data.attack_pool);
  WritePack(io::Join(dir, "aux.bin"), data.aux);
  nlohmann::json m;
  m["name"] = data.name;
  m["H"] = data.windowing.obs_len;
  m["F"] = data.windowing.horizon;
  m["step_attack"] = data.windowing.step_attack;
  m["step_aux"] = data.windowing.step_aux;
  m["norm"] = {{"min", data.norm.min}, {"max", data.norm.max}};
  m["attack_origins"] = OriginList(data.attack_pool);
  m["aux_origins"] = OriginList(data.aux);
  io::WriteJson(io::Join(dir, "manifest.json"), m);
}

PreparedData LoadPrepared(const std::string& dir) {
  const auto m = io::ReadJson(io::Join(dir, "manifest.json"));
  PreparedData data;
  data.name = m.at("name").get<std::string>();
  data.windowing.obs_len = m.at("H").get<int>();
  data.windowing.horizon = m.at("F").get<int>();
  data.windowing.step_attack = m.at("step_attack").get<int>();
  data.windowing.step_aux = m.at("step_aux").get<int>();
  data.norm.min = m.at("norm").at("min").get<double>();
  data.norm.max = m.at("norm").at("max").get<double>();
  data.attack_pool = ReadPack(io::Join(dir, "attack.bin"));
  data.aux = ReadPack(io::Join(dir, "aux.bin"));
  const auto attack_origins = m.at("attack_origins").get<std::vector<int64_t>>();
  const auto aux_origins = m.at("aux_origins").get<std::vector<int64_t>>();
  if (attack_origins.size() != data.attack_pool.size() || aux_origins.size() != data.aux.size()) {
    throw std::runtime_error(dir + ": manifest does not match packs");
  }
  for (size_t i = 0; i < attack_origins.size(); ++i) data.attack_pool[i].origin_index = attack_origins[i];
  for (size_t i = 0; i < aux_origins.size(); ++i) data.aux[i].origin_index = aux_origins[i];
  return data;
}

}  // namespace tsinv::data
