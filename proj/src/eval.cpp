#include "tsinv/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tsinv/data.hpp"
#include "tsinv/federation.hpp"
#include "tsinv/inversion.hpp"
#include "tsinv/io.hpp"
#include "tsinv/models.hpp"

namespace tsinv::eval {
namespace {

constexpr double kZeroMagnitude = 1e-12;
constexpr int kExhaustiveLimit = 8;

void SameSize(size_t a, size_t b) {
  if (a != b) throw ShapeError("metric inputs differ in size");
}

// Row b of a (B, T, ...) tensor.
std::span<const double> Sample(const Tensor& t, int64_t b) {
  const auto per = t.size() / size_t(t.dim(0));
  return t.data().subspan(size_t(b) * per, per);
}

double SpanMae(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return a.empty() ? 0.0 : s / double(a.size());
}

double SpanMse(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return a.empty() ? 0.0 : s / double(a.size());
}

SampleMetrics Score(const Tensor& ro, const Tensor& rt, const Tensor& to, const Tensor& tt, int64_t truth, int64_t recon) {
  SampleMetrics m;
  m.smape_obs = Smape(Sample(to, truth), Sample(ro, recon));
  m.smape_tar = Smape(Sample(tt, truth), Sample(rt, recon));
  m.mae_obs = SpanMae(Sample(to, truth), Sample(ro, recon));
  m.mae_tar = SpanMae(Sample(tt, truth), Sample(rt, recon));
  m.mse_obs = SpanMse(Sample(to, truth), Sample(ro, recon));
  m.mse_tar = SpanMse(Sample(tt, truth), Sample(rt, recon));
  return m;
}

SampleMetrics Average(const std::vector<SampleMetrics>& all) {
  SampleMetrics m;
  for (const auto& s : all) {
    m.smape_obs += s.smape_obs;
    m.smape_tar += s.smape_tar;
    m.mae_obs += s.mae_obs;
    m.mae_tar += s.mae_tar;
    m.mse_obs += s.mse_obs;
    m.mse_tar += s.mse_tar;
  }
  const double n = double(all.size());
  for (double* v : {&m.smape_obs, &m.smape_tar, &m.mae_obs, &m.mae_tar, &m.mse_obs, &m.mse_tar}) *v /= n;
  return m;
}

nlohmann::json MetricsJson(const SampleMetrics& m) {
  return {{"smape_obs", m.smape_obs}, {"smape_tar", m.smape_tar}, {"mae_obs", m.mae_obs},
          {"mae_tar", m.mae_tar},     {"mse_obs", m.mse_obs},     {"mse_tar", m.mse_tar}};
}

SampleMetrics MetricsFromJson(const nlohmann::json& j) {
  return {j.at("smape_obs"), j.at("smape_tar"), j.at("mae_obs"), j.at("mae_tar"), j.at("mse_obs"), j.at("mse_tar")};
}

std::string DirName(const std::string& key) {
  std::string out = key;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return out;
}

inv::InvNetSpec LearnedSpec(const nlohmann::json& j, const ForecastModel& model, const ParamVector& params, int batch) {
  inv::InvNetSpec s;
  s.input_dim = params.total_size();
  s.obs_len = model.spec().obs_len;
  s.horizon = model.spec().horizon;
  s.target_batch = batch;
  s.levels = j.value("levels", s.levels);
  s.hidden = j.value("hidden", s.hidden);
  s.dropout = j.value("dropout", s.dropout);
  s.epochs = j.value("epochs", s.epochs);
  s.minibatch = j.value("minibatch", s.minibatch);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.train_captures = j.value("train_captures", s.train_captures);
  return s;
}

data::PreparedData LoadDataset(const ExperimentGrid& g, const DatasetSpec& d) {
  if (!d.prepared_dir.empty()) {
    auto prepared = data::LoadPrepared(d.prepared_dir);
    if (prepared.windowing.obs_len != g.obs_len || prepared.windowing.horizon != g.horizon) {
      throw std::invalid_argument(d.prepared_dir + ": window lengths differ from the grid");
    }
    return prepared;
  }
  data::WindowingSpec w;
  w.obs_len = g.obs_len;
  w.horizon = g.horizon;
  w.step_attack = g.obs_len;
  w.step_aux = d.step_aux;
  const int length = d.synth_length > 0 ? d.synth_length : 20 * (g.obs_len + g.horizon);
  auto raw = data::SynthSeries(d.synth_seed, length, d.period > 0 ? d.period : g.obs_len, d.synth_slope, d.synth_noise);
  raw.name = d.name;
  return data::Prepare(raw, w);
}

nlohmann::json RecordJson(const RunRecord& r) {
  nlohmann::json j{{"key", r.cell.Key()}, {"seed", r.seed}, {"ok", r.ok}, {"error", r.error}, {"wall_time", r.wall_time}};
  if (r.ok) j["report"] = ReportToJson(r.report);
  return j;
}

RunRecord RecordFromJson(const GridCell& cell, const nlohmann::json& j) {
  RunRecord r;
  r.cell = cell;
  r.seed = j.at("seed").get<uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.wall_time = j.at("wall_time").get<double>();
  if (r.ok) {
    const auto& rep = j.at("report");
    r.report.mean = MetricsFromJson(rep.at("mean"));
    r.report.identity = MetricsFromJson(rep.at("identity"));
    r.report.permutation = rep.at("permutation").get<std::vector<int>>();
    r.report.greedy = rep.at("greedy").get<bool>();
    for (const auto& s : rep.at("per_sample")) r.report.per_sample.push_back(MetricsFromJson(s));
  }
  return r;
}

std::pair<double, double> MeanStd(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / double(v.size()))};
}

void WriteCsv(const std::string& path, const std::vector<GridRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "dataset,model,attack,defense,batch_size,runs,failures,smape_obs_mean,smape_obs_std,smape_tar_mean,"
         "smape_tar_std,mae_obs_mean,mae_tar_mean,identity_smape_obs_mean,identity_smape_tar_mean\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.cell.dataset << ',' << r.cell.model << ',' << r.cell.attack << ',' << r.cell.defense << ','
        << r.cell.batch_size << ',' << r.runs << ',' << r.failures << ',' << r.smape_obs_mean << ',' << r.smape_obs_std
        << ',' << r.smape_tar_mean << ',' << r.smape_tar_std << ',' << r.mae_obs_mean << ',' << r.mae_tar_mean << ','
        << r.identity_smape_obs_mean << ',' << r.identity_smape_tar_mean << '\n';
  }
}

}  // namespace

double Smape(std::span<const double> truth, std::span<const double> recon) {
  SameSize(truth.size(), recon.size());
  if (truth.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double a = std::fabs(truth[i]), b = std::fabs(recon[i]);
    if (a < kZeroMagnitude && b < kZeroMagnitude) continue;
    s += 2.0 * std::fabs(truth[i] - recon[i]) / (a + b);
  }
  return s / double(truth.size());
}

double Smape(const Tensor& truth, const Tensor& recon) {
  if (truth.shape() != recon.shape()) throw ShapeError("sMAPE inputs differ in shape");
  return Smape(truth.data(), recon.data());
}

double Mae(const Tensor& truth, const Tensor& recon) {
  if (truth.shape() != recon.shape()) throw ShapeError("MAE inputs differ in shape");
  return SpanMae(truth.data(), recon.data());
}

double Mse(const Tensor& truth, const Tensor& recon) {
  if (truth.shape() != recon.shape()) throw ShapeError("MSE inputs differ in shape");
  return SpanMse(truth.data(), recon.data());
}

nlohmann::json ReportToJson(const MetricReport& r) {
  auto per = nlohmann::json::array();
  for (const auto& s : r.per_sample) per.push_back(MetricsJson(s));
  return {{"mean", MetricsJson(r.mean)},
          {"identity", MetricsJson(r.identity)},
          {"permutation", r.permutation},
          {"greedy", r.greedy},
          {"per_sample", per}};
}

MetricReport MatchBatch(const Tensor& recon_obs, const Tensor& recon_tar, const Tensor& true_obs,
                        const Tensor& true_tar) {
  if (recon_obs.shape() != true_obs.shape() || recon_tar.shape() != true_tar.shape()) {
    throw ShapeError("reconstruction and truth batches differ in shape");
  }
  const int64_t batch = true_obs.dim(0);
  if (true_tar.dim(0) != batch) throw ShapeError("obs and tar batches differ");
  const double wo = double(true_obs.size()), wt = double(true_tar.size());
  std::vector<std::vector<double>> cost(static_cast<size_t>(batch), std::vector<double>(static_cast<size_t>(batch)));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t r = 0; r < batch; ++r) {
      const double so = Smape(Sample(true_obs, b), Sample(recon_obs, r));
      const double st = Smape(Sample(true_tar, b), Sample(recon_tar, r));
      cost[size_t(b)][size_t(r)] = (so * wo + st * wt) / (wo + wt);
    }
  }

  MetricReport report;
  std::vector<int> perm(static_cast<size_t>(batch));
  std::iota(perm.begin(), perm.end(), 0);
  auto total = [&](const std::vector<int>& p) {
    double s = 0.0;
    for (size_t b = 0; b < p.size(); ++b) s += cost[b][size_t(p[b])];
    return s;
  };
  if (batch <= kExhaustiveLimit) {
    std::vector<int> best = perm;
    double best_cost = total(perm);
    while (std::next_permutation(perm.begin(), perm.end())) {
      const double c = total(perm);
      if (c < best_cost) {
        best_cost = c;
        best = perm;
      }
    }
    report.permutation = best;
  } else {
    report.greedy = true;
    std::vector<bool> used_b(static_cast<size_t>(batch)), used_r(static_cast<size_t>(batch));
    report.permutation.assign(size_t(batch), -1);
    for (int64_t k = 0; k < batch; ++k) {
      double best = std::numeric_limits<double>::infinity();
      size_t bb = 0, br = 0;
      for (size_t b = 0; b < size_t(batch); ++b) {
        for (size_t r = 0; r < size_t(batch); ++r) {
          if (!used_b[b] && !used_r[r] && cost[b][r] < best) {
            best = cost[b][r];
            bb = b;
            br = r;
          }
        }
      }
      used_b[bb] = used_r[br] = true;
      report.permutation[bb] = int(br);
    }
  }
  std::vector<SampleMetrics> identity;
  for (int64_t b = 0; b < batch; ++b) {
    report.per_sample.push_back(
        Score(recon_obs, recon_tar, true_obs, true_tar, b, report.permutation[size_t(b)]));
    identity.push_back(Score(recon_obs, recon_tar, true_obs, true_tar, b, b));
  }
  report.mean = Average(report.per_sample);
  report.identity = Average(identity);
  return report;
}

std::string GridCell::Key() const {
  return dataset + "|" + model + "|" + attack + "|" + defense + "|B" + std::to_string(batch_size);
}

ExperimentGrid GridFromJson(const nlohmann::json& j) {
  ExperimentGrid g;
  for (const auto& d : j.at("datasets")) {
    DatasetSpec s;
    if (d.is_string()) {
      s.name = d.get<std::string>();
    } else {
      s.name = d.at("name").get<std::string>();
      s.prepared_dir = d.value("prepared_dir", s.prepared_dir);
      s.synth_seed = d.value("synth_seed", s.synth_seed);
      s.synth_length = d.value("synth_length", s.synth_length);
      s.synth_slope = d.value("synth_slope", s.synth_slope);
      s.synth_noise = d.value("synth_noise", s.synth_noise);
      s.period = d.value("period", s.period);
      s.step_aux = d.value("step_aux", s.step_aux);
    }
    g.datasets.push_back(s);
  }
  g.models = j.at("models").get<std::vector<std::string>>();
  for (const auto& a : j.at("attacks")) {
    AttackSpec s;
    if (a.is_string()) {
      s.method = s.label = a.get<std::string>();
    } else {
      s.method = a.at("method").get<std::string>();
      s.label = a.value("label", s.method);
      s.overrides = a.value("overrides", nlohmann::json::object());
      s.learned = a.value("learned", nlohmann::json::object());
    }
    g.attacks.push_back(s);
  }
  g.defenses = j.value("defenses", g.defenses);
  g.batch_sizes = j.value("batch_sizes", g.batch_sizes);
  g.seeds = j.value("seeds", g.seeds);
  g.obs_len = j.value("obs_len", g.obs_len);
  g.horizon = j.value("horizon", g.horizon);
  g.hidden = j.value("hidden", g.hidden);
  g.steps = j.value("steps", g.steps);
  g.noise_std = j.value("noise_std", g.noise_std);
  g.prune_ratio = j.value("prune_ratio", g.prune_ratio);
  g.workers = j.value("workers", g.workers);
  g.out_dir = j.value("out_dir", g.out_dir);
  if (g.datasets.empty() || g.models.empty() || g.attacks.empty() || g.defenses.empty() || g.batch_sizes.empty() ||
      g.seeds.empty()) {
    throw std::invalid_argument("grid has an empty axis");
  }
  std::map<std::string, int> labels;
  for (const auto& a : g.attacks) {
    if (++labels[a.label] > 1) throw std::invalid_argument("duplicate attack label '" + a.label + "'");
  }
  return g;
}

nlohmann::json GridToJson(const ExperimentGrid& g) {
  auto datasets = nlohmann::json::array();
  for (const auto& d : g.datasets) {
    datasets.push_back({{"name", d.name},
                        {"prepared_dir", d.prepared_dir},
                        {"synth_seed", d.synth_seed},
                        {"synth_length", d.synth_length},
                        {"synth_slope", d.synth_slope},
                        {"synth_noise", d.synth_noise},
                        {"period", d.period},
                        {"step_aux", d.step_aux}});
  }
  auto attacks = nlohmann::json::array();
  for (const auto& a : g.attacks) {
    attacks.push_back({{"label", a.label}, {"method", a.method}, {"overrides", a.overrides}, {"learned", a.learned}});
  }
  return {{"datasets", datasets},   {"models", g.models},
          {"attacks", attacks},     {"defenses", g.defenses},
          {"batch_sizes", g.batch_sizes}, {"seeds", g.seeds},
          {"obs_len", g.obs_len},   {"horizon", g.horizon},
          {"hidden", g.hidden},     {"steps", g.steps},
          {"noise_std", g.noise_std}, {"prune_ratio", g.prune_ratio},
          {"workers", g.workers},   {"out_dir", g.out_dir}};
}

std::vector<GridCell> ExpandGrid(const ExperimentGrid& g) {
  std::vector<GridCell> cells;
  for (const auto& d : g.datasets) {
    for (const auto& m : g.models) {
      for (const auto& a : g.attacks) {
        for (const auto& def : g.defenses) {
          for (int b : g.batch_sizes) cells.push_back({d.name, m, a.label, def, b});
        }
      }
    }
  }
  return cells;
}

namespace {

const DatasetSpec& FindDataset(const ExperimentGrid& grid, const std::string& name) {
  const auto ds = std::find_if(grid.datasets.begin(), grid.datasets.end(),
                               [&](const DatasetSpec& d) { return d.name == name; });
  if (ds == grid.datasets.end()) throw std::invalid_argument("dataset outside the grid: " + name);
  return *ds;
}

}  // namespace

CellSetup SetupCell(const ExperimentGrid& grid, const GridCell& cell, uint64_t seed) {
  const DatasetSpec& ds = FindDataset(grid, cell.dataset);
  CellSetup s;
  s.prepared = LoadDataset(grid, ds);
  s.spec.architecture = ParseArchitecture(cell.model);
  s.spec.obs_len = grid.obs_len;
  s.spec.horizon = grid.horizon;
  s.spec.hidden = grid.hidden;
  s.spec.init_seed = seed;
  s.model = BuildModel(s.spec);
  s.params = InitParams(*s.model, seed);

  const auto batch = data::SampleBatch(s.prepared.attack_pool, cell.batch_size, seed);
  s.capture = fed::ClientGradient(*s.model, s.params, data::StackObs(batch), data::StackTar(batch), seed);
  s.defense.kind = fed::ParseDefense(cell.defense);
  s.defense.noise_std = grid.noise_std;
  s.defense.prune_ratio = grid.prune_ratio;
  s.defense.seed = seed;
  if (s.defense.kind != fed::DefenseKind::kNone) s.capture.observed = fed::ApplyDefense(s.capture.observed, s.defense);
  if (ds.prepared_dir.empty()) s.period = ds.period > 0 ? ds.period : grid.obs_len;
  return s;
}

RunRecord RunCell(const ExperimentGrid& grid, const GridCell& cell, uint64_t seed) {
  RunRecord record;
  record.cell = cell;
  record.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto at = std::find_if(grid.attacks.begin(), grid.attacks.end(),
                                 [&](const AttackSpec& a) { return a.label == cell.attack; });
    if (at == grid.attacks.end()) throw std::invalid_argument("attack outside the grid: " + cell.attack);
    const CellSetup s = SetupCell(grid, cell, seed);
    const auto& observed = s.capture.observed;

    attack::AttackResult result;
    if (at->method == "lti") {
      auto net = inv::TrainLti(s.prepared.aux, *s.model, s.params,
                               LearnedSpec(at->learned, *s.model, s.params, cell.batch_size), s.defense, seed);
      result = inv::LtiReconstruct(net, observed);
    } else {
      auto config = attack::MethodConfig(at->method, s.spec.architecture);
      config.steps = grid.steps;
      config.seed = seed;
      if (s.period > 0) config.period = s.period;
      auto j = attack::ConfigToJson(config);
      j.merge_patch(at->overrides);
      if (!at->learned.empty()) {
        auto net = inv::TrainFinv(s.prepared.aux, *s.model, s.params,
                                  LearnedSpec(at->learned, *s.model, s.params, cell.batch_size), s.defense, seed);
        j["bounds"] = attack::BoundsToJson(inv::PredictBounds(net, observed));
      }
      result = attack::RunAttack(observed, *s.model, s.params, attack::ConfigFromJson(j));
    }
    if (result.status.rfind("aborted", 0) == 0) throw NumericError(result.status);
    record.report = MatchBatch(result.recon_obs, result.recon_tar, s.capture.truth->obs, s.capture.truth->tar);
    record.result = std::move(result);
  } catch (const std::exception& e) {
    record.ok = false;
    record.error = e.what();
  }
  record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

GridSummary RunGrid(const ExperimentGrid& grid) {
  if (grid.out_dir.empty()) throw std::invalid_argument("grid needs an output directory");
  io::EnsureDir(grid.out_dir);
  io::WriteJson(io::Join(grid.out_dir, "grid.json"), GridToJson(grid));
  const std::string manifest_path = io::Join(grid.out_dir, "manifest.json");
  nlohmann::json manifest = std::filesystem::exists(manifest_path) ? io::ReadJson(manifest_path)
                                                                   : nlohmann::json{{"completed", nlohmann::json::object()}};

  const auto cells = ExpandGrid(grid);
  struct Task {
    size_t cell;
    uint64_t seed;
    std::string id;
  };
  std::vector<Task> todo;
  std::map<std::string, RunRecord> records;
  for (size_t c = 0; c < cells.size(); ++c) {
    for (uint64_t seed : grid.seeds) {
      const std::string id = cells[c].Key() + "|seed" + std::to_string(seed);
      const std::string dir = io::Join(io::Join(grid.out_dir, "runs"), DirName(id));
      if (manifest["completed"].contains(id) && std::filesystem::exists(io::Join(dir, "run.json"))) {
        records[id] = RecordFromJson(cells[c], io::ReadJson(io::Join(dir, "run.json")));
      } else {
        todo.push_back({c, seed, id});
      }
    }
  }

  std::mutex lock;
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next++; i < todo.size(); i = next++) {
      const Task& t = todo[i];
      RunRecord r = RunCell(grid, cells[t.cell], t.seed);
      const std::string dir = io::Join(io::Join(grid.out_dir, "runs"), DirName(t.id));
      io::EnsureDir(dir);
      io::WriteJson(io::Join(dir, "run.json"), RecordJson(r));
      if (r.result) attack::SaveResult(dir, *r.result);
      std::lock_guard<std::mutex> guard(lock);
      manifest["completed"][t.id] = true;
      io::WriteJson(manifest_path, manifest);
      records[t.id] = std::move(r);
    }
  };
  const int workers = std::max(1, std::min<int>(grid.workers, int(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  GridSummary summary;
  summary.executed = int(todo.size());
  for (const auto& cell : cells) {
    GridRow row;
    row.cell = cell;
    std::vector<double> so, st, mo, mt, io_, it;
    for (uint64_t seed : grid.seeds) {
      const auto& r = records.at(cell.Key() + "|seed" + std::to_string(seed));
      ++row.runs;
      if (!r.ok) {
        ++row.failures;
        continue;
      }
      so.push_back(r.report.mean.smape_obs);
      st.push_back(r.report.mean.smape_tar);
      mo.push_back(r.report.mean.mae_obs);
      mt.push_back(r.report.mean.mae_tar);
      io_.push_back(r.report.identity.smape_obs);
      it.push_back(r.report.identity.smape_tar);
    }
    std::tie(row.smape_obs_mean, row.smape_obs_std) = MeanStd(so);
    std::tie(row.smape_tar_mean, row.smape_tar_std) = MeanStd(st);
    row.mae_obs_mean = MeanStd(mo).first;
    row.mae_tar_mean = MeanStd(mt).first;
    row.identity_smape_obs_mean = MeanStd(io_).first;
    row.identity_smape_tar_mean = MeanStd(it).first;
    summary.rows.push_back(row);
  }
  WriteCsv(io::Join(grid.out_dir, "results.csv"), summary.rows);
  return summary;
}

std::vector<std::string> EmitPlots(const std::string& out_dir, const std::string& stem, const Tensor& recon_obs,
                                   const Tensor& recon_tar, const Tensor& true_obs, const Tensor& true_tar,
                                   const std::optional<attack::QuantileBounds>& bounds) {
  std::vector<std::string> written;
  if (true_obs.size() == 0 || true_obs.rank() == 0) return written;
  if (recon_obs.shape() != true_obs.shape() || recon_tar.shape() != true_tar.shape()) {
    throw ShapeError("plot inputs differ in shape");
  }
  const int64_t batch = true_obs.dim(0), h = true_obs.dim(1), f = true_tar.dim(1);
  constexpr double kWidth = 720, kHeight = 320, kPad = 30;
  io::EnsureDir(out_dir);
  for (int64_t b = 0; b < batch; ++b) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Tensor* t : {&recon_obs, &recon_tar, &true_obs, &true_tar}) {
      for (double v : Sample(*t, b)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (bounds) {
      for (const Tensor* t : {&bounds->obs, &bounds->tar}) {
        for (double v : t->data()) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double steps = double(h + f - 1 > 0 ? h + f - 1 : 1);
    auto x = [&](int64_t t) { return kPad + (kWidth - 2 * kPad) * double(t) / steps; };
    auto y = [&](double v) { return kHeight - kPad - (kHeight - 2 * kPad) * (v - lo) / (hi - lo); };
    auto line = [&](std::span<const double> v, int64_t offset, const char* color, const char* dash) {
      std::ostringstream s;
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"" << dash << " points=\"";
      for (size_t i = 0; i < v.size(); ++i) s << x(offset + int64_t(i)) << ',' << y(v[i]) << ' ';
      s << "\"/>\n";
      return s.str();
    };
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (bounds) {
      const size_t q = bounds->levels.size();
      for (size_t k = 0; k < q / 2; ++k) {
        std::ostringstream poly;
        poly << "<polygon fill=\"#7f7f7f\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
        std::vector<std::pair<int64_t, double>> upper, lower;
        auto collect = [&](const Tensor& t, int64_t offset) {
          for (int64_t s = 0; s < t.dim(0); ++s) {
            lower.emplace_back(offset + s, t[size_t(s) * q + k]);
            upper.emplace_back(offset + s, t[size_t(s) * q + (q - 1 - k)]);
          }
        };
        collect(bounds->obs, 0);
        collect(bounds->tar, h);
        for (const auto& [t, v] : upper) poly << x(t) << ',' << y(v) << ' ';
        for (auto it = lower.rbegin(); it != lower.rend(); ++it) poly << x(it->first) << ',' << y(it->second) << ' ';
        poly << "\"/>\n";
        svg << poly.str();
      }
    }
    svg << line(Sample(true_obs, b), 0, "#1f77b4", "") << line(Sample(true_tar, b), h, "#2ca02c", "")
        << line(Sample(recon_obs, b), 0, "#ff7f0e", " stroke-dasharray=\"4 2\"")
        << line(Sample(recon_tar, b), h, "#d62728", " stroke-dasharray=\"4 2\"") << "</svg>\n";
    const std::string path = io::Join(out_dir, stem + "_sample" + std::to_string(b) + ".svg");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << svg.str();
    written.push_back(path);
  }
  return written;
}

}  // namespace tsinv::eval
