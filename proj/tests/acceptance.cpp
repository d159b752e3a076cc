// Acceptance run: one PASS/FAIL line per criterion, desk-scale synthetic data.
// Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "tsinv/attacks.hpp"
#include "tsinv/eval.hpp"
#include "tsinv/inversion.hpp"

using namespace tsinv;
using ad::Var;
using testing::CentralDifference;
using testing::GradientRelativeError;
using testing::RandomTensor;
using testing::RandomVector;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

const Architecture kAll[] = {Architecture::kFcn, Architecture::kCnn, Architecture::kTcn, Architecture::kGru2Fcn,
                             Architecture::kGru2Gru};
const std::vector<uint64_t> kSeeds3{10, 43, 28};

ModelSpec Tiny(Architecture arch) {
  ModelSpec s;
  s.architecture = arch;
  s.obs_len = 8;
  s.horizon = 8;
  s.hidden = 4;
  return s;
}

// Desk-scale grid: H = F = 24, hidden 16, one synthetic daily-periodic series.
eval::ExperimentGrid Desk(int steps) {
  eval::ExperimentGrid g;
  eval::DatasetSpec d;
  d.name = "synth";
  g.datasets = {d};
  g.steps = steps;
  return g;
}

eval::AttackSpec Spec(const std::string& label, const std::string& method, nlohmann::json overrides = {},
                      nlohmann::json learned = {}) {
  eval::AttackSpec a;
  a.label = label;
  a.method = method;
  if (!overrides.is_null()) a.overrides = std::move(overrides);
  if (!learned.is_null()) a.learned = std::move(learned);
  return a;
}

// Memoized desk runs, shared between criteria that use the same scenario.
std::map<std::string, eval::RunRecord> g_runs;

eval::RunRecord Run(int steps, const std::string& model, const eval::AttackSpec& attack, int batch, uint64_t seed,
                    const std::string& defense = "none") {
  const std::string key = std::to_string(steps) + "|" + model + "|" + attack.method + "|" + attack.overrides.dump() +
                          "|" + attack.learned.dump() + "|" + defense + "|" + std::to_string(batch) + "|" +
                          std::to_string(seed);
  if (auto it = g_runs.find(key); it != g_runs.end()) return it->second;
  auto grid = Desk(steps);
  grid.attacks = {attack};
  auto r = eval::RunCell(grid, {"synth", model, attack.label, defense, batch}, seed);
  if (!r.ok) std::fprintf(stderr, "  run %s failed: %s\n", key.c_str(), r.error.c_str());
  return g_runs[key] = r;
}

struct SeedStats {
  std::vector<double> obs, tar, mae_obs;
  double MeanObs() const { return Mean(obs); }
  double MeanTar() const { return Mean(tar); }
  static double Mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? NAN : s / double(v.size());
  }
};

SeedStats RunSeeds(int steps, const std::string& model, const eval::AttackSpec& attack, int batch,
                   const std::vector<uint64_t>& seeds, const std::string& defense = "none") {
  SeedStats s;
  for (uint64_t seed : seeds) {
    auto r = Run(steps, model, attack, batch, seed, defense);
    s.obs.push_back(r.ok ? r.report.mean.smape_obs : NAN);
    s.tar.push_back(r.ok ? r.report.mean.smape_tar : NAN);
    s.mae_obs.push_back(r.ok ? r.report.mean.mae_obs : NAN);
  }
  return s;
}

std::string List(const std::vector<double>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + Fmt("%.3g", v[i]);
  return out + "]";
}

// Independent sMAPE for checks that should not lean on the metric under test.
double SmapeOracle(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double den = std::fabs(a[i]) + std::fabs(b[i]);
    s += den < 1e-12 ? 0.0 : 2.0 * std::fabs(a[i] - b[i]) / den;
  }
  return s / double(a.size());
}

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Verdict AutodiffSoundness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_param = 0.0, worst_input = 0.0;
  for (auto arch : kAll) {
    auto model = BuildModel(Tiny(arch));
    ParamVector p = InitParams(*model, 17);
    p = ParamVector::Unflatten(p, RandomVector(size_t(p.total_size()), 18, -0.6, 0.6));
    const Tensor obs = RandomTensor({2, 8, 1}, 19, 0, 1), tar = RandomTensor({2, 8, 1}, 20, 0, 1);
    MaskSet masks = model->HasDropout() ? SampleDropoutMasks(*model, 2, 21) : MaskSet{};

    auto leaves = p.AsLeaves();
    auto grads = ad::Grad(MseLoss(model->Forward(leaves, Var::Constant(obs), &masks), Var::Constant(tar)), leaves);
    std::vector<double> ad_flat;
    for (const auto& g : grads) ad_flat.insert(ad_flat.end(), g.value().data().begin(), g.value().data().end());
    auto loss = [&](const std::vector<double>& flat) {
      ad::NoGradGuard off;
      auto q = ParamVector::Unflatten(p, flat).AsConstants();
      return MseLoss(model->Forward(q, Var::Constant(obs), &masks), Var::Constant(tar)).value().item();
    };
    // At 1e-4 the stencil spans a ReLU/max-pool switch of the CNN at this point.
    worst_param = std::max(worst_param, GradientRelativeError(ad_flat, CentralDifference(loss, p.Flatten(), 1e-5)));

    // Second-order path: d/d(dummy) of the L1 distance between gradients.
    auto capture = fed::ClientGradient(*model, p, RandomTensor({1, 8, 1}, 22, 0, 1), RandomTensor({1, 8, 1}, 23, 0, 1), 24);
    attack::AttackConfig c;
    c.distance = attack::Distance::kL1;
    const auto& fixed = capture.truth->masks;
    const Tensor d_obs = RandomTensor({1, 8, 1}, 25, 0, 1), d_tar = RandomTensor({1, 8, 1}, 26, 0, 1);
    auto obj = attack::EvaluateObjective(capture.observed, *model, p, c, d_obs, d_tar, fixed);
    std::vector<double> ad_in = obj.grad_obs;
    ad_in.insert(ad_in.end(), obj.grad_tar.begin(), obj.grad_tar.end());
    std::vector<double> x = d_obs.vec();
    x.insert(x.end(), d_tar.data().begin(), d_tar.data().end());
    auto dist = [&](const std::vector<double>& v) {
      Tensor o({1, 8, 1}, std::vector<double>(v.begin(), v.begin() + 8));
      Tensor t({1, 8, 1}, std::vector<double>(v.begin() + 8, v.end()));
      return attack::EvaluateObjective(capture.observed, *model, p, c, o, t, fixed).total;
    };
    worst_input = std::max(worst_input, GradientRelativeError(ad_in, CentralDifference(dist, x, 1e-6)));
  }
  const double secs = Seconds(t0);
  return {worst_param < 1e-5 && worst_input < 1e-4 && secs < 60,
          "param grad rel err " + Fmt("%.2e", worst_param) + " (< 1e-5), input grad of L1 distance " +
              Fmt("%.2e", worst_input) + " (< 1e-4), " + Fmt("%.1fs", secs)};
}

Verdict OneShotExactness() {
  const auto t0 = std::chrono::steady_clock::now();
  const Architecture heads[] = {Architecture::kFcn, Architecture::kCnn, Architecture::kTcn, Architecture::kGru2Fcn};
  int tested = 0;
  double worst = 0.0;
  for (int trial = 0; tested < 100 && trial < 1000; ++trial) {
    ModelSpec spec = Tiny(heads[trial % 4]);
    spec.obs_len = 6 + trial % 7;
    spec.horizon = 2 + trial % 9;
    auto model = BuildModel(spec);
    ParamVector p = InitParams(*model, uint64_t(trial));
    p = ParamVector::Unflatten(p, RandomVector(size_t(p.total_size()), 5000 + uint64_t(trial), -0.8, 0.8));
    const Tensor obs = RandomTensor({1, spec.obs_len, 1}, 6000 + uint64_t(trial), 0, 1);
    const Tensor tar = RandomTensor({1, spec.horizon, 1}, 7000 + uint64_t(trial), 0, 1);
    auto capture = fed::ClientGradient(*model, p, obs, tar, uint64_t(trial));
    double peak = 0.0;
    for (double g : capture.observed.grads[model->FcHead()->bias_index].data()) peak = std::max(peak, std::fabs(g));
    if (!(peak > 1e-12)) continue;
    auto r = attack::OneShotTargets(capture.observed, *model, p);
    worst = std::max(worst, SmapeOracle(r.targets.vec(), tar.vec()));
    ++tested;
  }

  const auto oneshot = Spec("ts-inverse-oneshot", "ts-inverse-oneshot");
  auto tcn = RunSeeds(100, "tcn", oneshot, 1, kSeeds3);
  const double worst_tcn = *std::max_element(tcn.tar.begin(), tcn.tar.end());
  const double secs = Seconds(t0);
  return {tested == 100 && worst <= 1e-9 && worst_tcn <= 1e-5 && secs < 60,
          std::to_string(tested) + " constructions, worst target sMAPE " + Fmt("%.2e", worst) +
              " (<= 1e-9); TCN pipeline target sMAPE " + List(tcn.tar) + " (<= 1e-5), " + Fmt("%.1fs", secs)};
}

Verdict NearPerfectFcnCnn() {
  const auto ts = Spec("ts-inverse", "ts-inverse");
  auto fcn = RunSeeds(5000, "fcn", ts, 1, kSeeds3);
  auto cnn = RunSeeds(5000, "cnn", ts, 1, kSeeds3);
  const bool pass = fcn.MeanObs() <= 1e-2 && fcn.MeanTar() <= 1e-2 && cnn.MeanObs() <= 5e-2 && cnn.MeanTar() <= 5e-2;
  return {pass, "FCN obs " + Fmt("%.2e", fcn.MeanObs()) + " tar " + Fmt("%.2e", fcn.MeanTar()) + " (<= 1e-2); CNN obs " +
                    Fmt("%.2e", cnn.MeanObs()) + " tar " + Fmt("%.2e", cnn.MeanTar()) + " (<= 5e-2)"};
}

// TCN distance ablation without regularization.
constexpr int kTcnSteps = 3000;
const char* kDistances[] = {"l1", "cosine", "cosine-l1", "cosine-l2", "l2"};

Verdict DistanceOrdering() {
  std::string detail;
  bool pass = true;
  for (int batch : {1, 2}) {
    std::vector<std::pair<double, std::string>> ranked;
    for (const char* d : kDistances) {
      auto a = Spec(std::string("dist-") + d, "ts-inverse-oneshot", {{"distance", d}});
      ranked.emplace_back(RunSeeds(kTcnSteps, "tcn", a, batch, kSeeds3).MeanObs(), d);
    }
    std::map<std::string, double> by_name;
    for (auto& [v, n] : ranked) by_name[n] = v;
    std::sort(ranked.begin(), ranked.end());
    const std::set<std::string> top{ranked[0].second, ranked[1].second};
    const bool top2 = top == std::set<std::string>{"l1", "cosine-l1"};
    const bool l1_beats_cos = by_name["l1"] < by_name["cosine"];
    pass = pass && top2 && (batch != 1 || l1_beats_cos);
    detail += "B=" + std::to_string(batch) + ":";
    for (const char* d : kDistances) detail += std::string(" ") + d + " " + Fmt("%.3f", by_name[d]);
    detail += "; ";
  }
  return {pass, detail + "need l1 < cosine at B=1 and {l1, cosine-l1} top-2 at B=1 and B=2"};
}

Verdict TvHarms() {
  std::string detail;
  bool pass = true;
  const auto base = RunSeeds(5000, "cnn", Spec("ts-inverse", "ts-inverse"), 1, kSeeds3);
  detail = "TV 0 " + List(base.obs);
  for (double tv : {0.001, 0.01}) {
    auto s = RunSeeds(5000, "cnn", Spec("tv", "ts-inverse", {{"tv_obs", tv}}), 1, kSeeds3);
    for (size_t i = 0; i < kSeeds3.size(); ++i) pass = pass && s.obs[i] >= base.obs[i];
    detail += ", TV " + Fmt("%g", tv) + " " + List(s.obs);
  }
  return {pass, detail + " (obs sMAPE per seed, TV must not improve any)"};
}

Verdict RegularizerFixedPoints() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst_p = 0.0, worst_t = 0.0, worst_q = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t period = 2 + trial % 9, reps = 2 + trial % 4, batch = 1 + trial % 3;
    std::vector<double> periodic, linear;
    for (int64_t b = 0; b < batch; ++b) {
      std::vector<double> cycle(static_cast<size_t>(period));
      for (double& c : cycle) c = u(rng);
      for (int64_t k = 0; k < period * reps; ++k) periodic.push_back(cycle[size_t(k % period)]);
      const double a = u(rng), s = u(rng);
      for (int64_t k = 0; k < period * reps; ++k) linear.push_back(a + s * double(k));
    }
    const int64_t len = period * reps;
    worst_p = std::max(worst_p, attack::Periodicity(Var::Constant(Tensor({batch, len}, periodic)), int(period)).value().item());
    worst_t = std::max(worst_t, attack::Trend(Var::Constant(Tensor({batch, len}, linear))).value().item());

    const std::vector<double> levels{0.1, 0.3, 0.7, 0.9};
    Tensor bounds({len, 4});
    std::vector<double> inside(size_t(batch * len));
    for (int64_t t = 0; t < len; ++t) {
      const double lo = u(rng), width = 0.5 + u(rng) * 0.25;
      for (int q = 0; q < 4; ++q) bounds[size_t(t * 4 + q)] = lo + width * (q == 0 ? 0.0 : q == 1 ? 0.3 : q == 2 ? 0.7 : 1.0);
      for (int64_t b = 0; b < batch; ++b) {
        const double lo_in = bounds[size_t(t * 4 + 1)], hi_in = bounds[size_t(t * 4 + 2)];
        inside[size_t(b * len + t)] = lo_in + (hi_in - lo_in) * (0.5 + 0.5 * u(rng));
      }
    }
    worst_q = std::max(worst_q,
                       attack::BoundsViolation(Var::Constant(Tensor({batch, len}, inside)), bounds, levels).value().item());
  }
  const double secs = Seconds(t0);
  return {worst_p < 1e-10 && worst_t < 1e-10 && worst_q == 0.0 && secs < 1,
          "periodicity " + Fmt("%.1e", worst_p) + ", trend " + Fmt("%.1e", worst_t) + " (< 1e-10), in-band bounds " +
              Fmt("%g", worst_q) + " (== 0), " + Fmt("%.2fs", secs)};
}

Verdict RegularizationHelpsTcn() {
  const std::vector<uint64_t> seeds{10, 43};
  const int batch = 4;
  const auto base = RunSeeds(kTcnSteps, "tcn", Spec("plain", "ts-inverse"), batch, seeds);
  double best = INFINITY;
  double best_p = 0, best_t = 0;
  std::string detail = "(0,0) " + Fmt("%.3f", base.MeanObs());
  for (double lp : {0.0, 0.01, 0.1, 1.0}) {
    for (double lt : {0.0, 0.05}) {
      if (lp == 0 && lt == 0) continue;
      auto s = RunSeeds(kTcnSteps, "tcn", Spec("reg", "ts-inverse", {{"periodicity", lp}, {"trend", lt}}), batch, seeds);
      detail += ", (" + Fmt("%g", lp) + "," + Fmt("%g", lt) + ") " + Fmt("%.3f", s.MeanObs());
      if (s.MeanObs() < best) best = s.MeanObs(), best_p = lp, best_t = lt;
    }
  }
  const bool helps = best < base.MeanObs();

  // Bounds on the best configuration: f_inv trained once per seed, weights
  // chosen by grid search over the nonzero pairs of {0, 0.1, 0.5, 1}.
  auto grid = Desk(kTcnSteps);
  std::map<std::pair<double, double>, std::vector<double>> with_bounds;
  for (uint64_t seed : seeds) {
    const auto setup = eval::SetupCell(grid, {"synth", "tcn", "", "none", batch}, seed);
    inv::InvNetSpec spec;
    spec.input_dim = setup.params.total_size();
    spec.obs_len = setup.spec.obs_len;
    spec.horizon = setup.spec.horizon;
    spec.target_batch = batch;
    spec.hidden = {128, 64};
    spec.epochs = 40;
    spec.train_captures = 512;
    const auto net = inv::TrainFinv(setup.prepared.aux, *setup.model, setup.params, spec, setup.defense, seed);
    auto config = attack::MethodConfig("ts-inverse", Architecture::kTcn);
    config.steps = kTcnSteps;
    config.seed = seed;
    config.period = setup.period;
    config.periodicity = best_p;
    config.trend = best_t;
    config.bounds = inv::PredictBounds(net, setup.capture.observed);
    for (double qo : {0.0, 0.1, 0.5, 1.0}) {
      for (double qt : {0.0, 0.1, 0.5, 1.0}) {
        if (qo == 0 && qt == 0) continue;
        config.bounds_obs = qo;
        config.bounds_tar = qt;
        auto r = attack::RunAttack(setup.capture.observed, *setup.model, setup.params, config);
        auto m = eval::MatchBatch(r.recon_obs, r.recon_tar, setup.capture.truth->obs, setup.capture.truth->tar);
        with_bounds[{qo, qt}].push_back(m.mean.smape_obs);
      }
    }
  }
  double best_q = INFINITY;
  std::pair<double, double> arg{0, 0};
  for (auto& [w, v] : with_bounds) {
    const double mean = SeedStats::Mean(v);
    if (mean < best_q) best_q = mean, arg = w;
  }
  const bool bounded = best_q <= 1.1 * best;
  return {helps && bounded, detail + "; best " + Fmt("%.3f", best) + " vs (0,0) " + Fmt("%.3f", base.MeanObs()) +
                                "; with bounds (obs " + Fmt("%g", arg.first) + ", tar " + Fmt("%g", arg.second) +
                                ") " + Fmt("%.3f", best_q) + " (<= 1.1 x best " + Fmt("%.3f", 1.1 * best) + ")"};
}

Verdict PinballCorrectness() {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> size(2, 12);
  std::uniform_real_distribution<double> u(-3, 3), level(0.05, 0.95);
  int failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(size_t(size(rng)));
    for (double& v : x) v = u(rng);
    const double tau = level(rng);
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    const double quantile = sorted[size_t(std::ceil(tau * double(x.size())) - 1)];
    const auto n = int64_t(x.size());
    const Var truth = Var::Constant(Tensor({1, n}, x));
    auto loss = [&](double c) {
      return inv::PinballLoss(truth, Var::Constant(Tensor({1, n}, std::vector<double>(x.size(), c))), tau).value().item();
    };
    // Brute force: the loss is piecewise linear with kinks at the samples.
    double brute = INFINITY;
    for (double c : x) brute = std::min(brute, loss(c));
    for (int g = 0; g <= 600; ++g) brute = std::min(brute, loss(-3.5 + 7.0 * g / 600.0));
    if (!(loss(quantile) <= brute + 1e-12)) ++failures;
  }
  return {failures == 0, std::to_string(50 - failures) + "/50 samples minimized at the sort-based quantile"};
}

std::vector<eval::AttackSpec> OptimizationAttacks() {
  return {Spec("dlg-lbfgs", "dlg-lbfgs"), Spec("dlg-adam", "dlg-adam"), Spec("invg", "invg"), Spec("dia", "dia"),
          Spec("ts-inverse", "ts-inverse")};
}

constexpr int kDefenseSteps = 2000;
const nlohmann::json kLtiLearned = {{"hidden", {128, 64}}, {"epochs", 50}, {"train_captures", 512}};

Verdict DefenseOrdering() {
  std::string detail;
  bool pass = true;
  int seed_majority = 0;
  for (const char* defense : {"sign", "gauss"}) {
    double best_opt = INFINITY, min_opt = INFINITY;
    std::vector<double> best_per_seed(kSeeds3.size(), INFINITY);
    detail += std::string(defense) + ":";
    for (const auto& a : OptimizationAttacks()) {
      auto s = RunSeeds(kDefenseSteps, "fcn", a, 1, kSeeds3, defense);
      detail += " " + a.label + " " + Fmt("%.3f", s.MeanObs());
      best_opt = std::min(best_opt, s.MeanObs());
      for (size_t i = 0; i < s.obs.size(); ++i) {
        min_opt = std::min(min_opt, s.obs[i]);
        best_per_seed[i] = std::min(best_per_seed[i], s.obs[i]);
      }
    }
    auto lti = RunSeeds(kDefenseSteps, "fcn", Spec("lti", "lti", {}, kLtiLearned), 1, kSeeds3, defense);
    int wins = 0;
    for (size_t i = 0; i < kSeeds3.size(); ++i) wins += lti.obs[i] < best_per_seed[i];
    seed_majority += wins >= 2;
    detail += " lti " + Fmt("%.3f", lti.MeanObs()) + " (per-seed wins " + std::to_string(wins) + "/3); ";
    pass = pass && min_opt > 0.5 && lti.MeanObs() < best_opt;
  }
  return {pass, detail + "need every optimization run > 0.5 and lti mean < best optimization mean"};
}

Verdict GruRobustness() {
  const auto ts = Spec("ts-inverse", "ts-inverse");
  auto fcn = RunSeeds(5000, "fcn", ts, 1, kSeeds3);
  auto gru = RunSeeds(5000, "gru2gru", ts, 1, kSeeds3);
  const double ratio = gru.MeanObs() / fcn.MeanObs();
  return {ratio >= 10.0, "GRU2GRU obs " + Fmt("%.3g", gru.MeanObs()) + " vs FCN " + Fmt("%.3g", fcn.MeanObs()) +
                             " (ratio " + Fmt("%.0f", ratio) + ", need >= 10)"};
}

Verdict MetricContracts() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-2, 2);
  bool ok = true;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(9), b(9);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = u(rng);
      b[i] = trial % 5 == 0 ? a[i] : u(rng);
    }
    const double s = eval::Smape(a, b);
    ok = ok && s >= 0.0 && s <= 2.0 && s == eval::Smape(b, a) && ((s == 0.0) == (a == b));
    ok = ok && std::fabs(s - SmapeOracle(a, b)) < 1e-12;
  }
  ok = ok && eval::Smape(std::vector<double>{0, 0}, std::vector<double>{0, 1e-13}) == 0.0;
  ok = ok && eval::Smape(std::vector<double>{1, 1}, std::vector<double>{-1, -1}) == 2.0;

  const Tensor obs = RandomTensor({6, 5, 1}, 1, 0, 1), tar = RandomTensor({6, 3, 1}, 2, 0, 1);
  auto reversed = [](const Tensor& t) {
    const int64_t n = t.dim(0);
    const size_t per = t.size() / size_t(n);
    Tensor out(t.shape());
    for (int64_t i = 0; i < n; ++i) {
      std::copy_n(t.data().begin() + long(size_t(i) * per), per, out.data().begin() + long(size_t(n - 1 - i) * per));
    }
    return out;
  };
  auto m = eval::MatchBatch(reversed(obs), reversed(tar), obs, tar);
  const bool matched = m.permutation == std::vector<int>{5, 4, 3, 2, 1, 0} && m.mean.smape_obs == 0.0 &&
                       m.mean.smape_tar == 0.0 && !m.greedy;
  const double secs = Seconds(t0);
  return {ok && matched && secs < 1, std::string("range, symmetry, zero iff equal, both-zero convention: ") +
                                         (ok ? "ok" : "violated") + "; reversed batch matched " +
                                         (matched ? "exactly" : "incorrectly") + ", " + Fmt("%.2fs", secs)};
}

// Not a numbered criterion: sMAPE and MAE order the attacks of a scenario the same way.
Verdict RankingStability() {
  std::string detail;
  bool pass = true;
  for (const char* defense : {"sign", "gauss"}) {
    std::vector<std::pair<double, double>> rows;
    auto attacks = OptimizationAttacks();
    attacks.push_back(Spec("lti", "lti", {}, kLtiLearned));
    for (const auto& a : attacks) {
      auto s = RunSeeds(kDefenseSteps, "fcn", a, 1, kSeeds3, defense);
      rows.emplace_back(s.MeanObs(), SeedStats::Mean(s.mae_obs));
    }
    std::vector<size_t> by_smape(rows.size()), by_mae(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) by_smape[i] = by_mae[i] = i;
    std::sort(by_smape.begin(), by_smape.end(), [&](size_t a, size_t b) { return rows[a].first < rows[b].first; });
    std::sort(by_mae.begin(), by_mae.end(), [&](size_t a, size_t b) { return rows[a].second < rows[b].second; });
    const bool same = by_smape == by_mae;
    pass = pass && same;
    detail += std::string(defense) + (same ? " same order; " : " order differs; ");
  }
  return {pass, detail + "FCN defended-capture attacks, mean over 3 seeds"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "autodiff soundness", AutodiffSoundness},
      {2, "one-shot exactness", OneShotExactness},
      {3, "FCN/CNN near-perfect inversion", NearPerfectFcnCnn},
      {4, "distance ablation ordering", DistanceOrdering},
      {5, "TV harms reconstruction", TvHarms},
      {6, "regularizer fixed points", RegularizerFixedPoints},
      {7, "regularization helps TCN batches", RegularizationHelpsTcn},
      {8, "pinball quantile correctness", PinballCorrectness},
      {9, "defense ordering", DefenseOrdering},
      {10, "GRU robustness", GruRobustness},
      {11, "metric contracts", MetricContracts},
      {12, "metric ranking stability (property)", RankingStability},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s [%.0fs]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), Seconds(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
