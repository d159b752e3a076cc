#include "tsinv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "tsinv/data.hpp"

using namespace tsinv;
using namespace tsinv::attack;
using ad::Var;
using tsinv::testing::RandomTensor;
using tsinv::testing::RandomVector;

namespace {

double Value(const Var& v) { return v.value().item(); }

Var Vec(std::vector<double> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Var::Constant(Tensor({n}, std::move(v)));
}

Var Seq(int64_t batch, std::vector<double> v) {
  const auto t = static_cast<int64_t>(v.size()) / batch;
  return Var::Constant(Tensor({batch, t}, std::move(v)));
}

// Independent sMAPE oracle for this file.
double Smape(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double den = std::fabs(a[i]) + std::fabs(b[i]);
    s += den == 0.0 ? 0.0 : 2.0 * std::fabs(a[i] - b[i]) / den;
  }
  return s / double(a.size());
}

ModelSpec Tiny(Architecture arch, int h = 8, int f = 8) {
  ModelSpec s;
  s.architecture = arch;
  s.obs_len = h;
  s.horizon = f;
  s.hidden = 4;
  return s;
}

QuantileBounds Band(int h, int f, double lo, double hi) {
  QuantileBounds b;
  b.levels = {0.1, 0.3, 0.7, 0.9};
  const double mid_lo = lo + 0.25 * (hi - lo), mid_hi = hi - 0.25 * (hi - lo);
  b.obs = Tensor({h, 4});
  b.tar = Tensor({f, 4});
  for (Tensor* t : {&b.obs, &b.tar}) {
    for (int64_t r = 0; r < t->dim(0); ++r) {
      (*t)[size_t(r * 4 + 0)] = lo;
      (*t)[size_t(r * 4 + 1)] = mid_lo;
      (*t)[size_t(r * 4 + 2)] = mid_hi;
      (*t)[size_t(r * 4 + 3)] = hi;
    }
  }
  return b;
}

}  // namespace

TEST_CASE("gradient distances") {
  CHECK(Value(DistanceL2(Vec({1, 2}), Vec({1, 2}))) == 0.0);
  CHECK(Value(DistanceL2(Vec({4, 6}), Vec({1, 2}))) == doctest::Approx(5.0));
  auto a = RandomVector(30, 1), b = RandomVector(30, 2);
  double l2 = 0.0, l1 = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < 30; ++i) {
    l2 += (a[i] - b[i]) * (a[i] - b[i]);
    l1 += std::fabs(a[i] - b[i]);
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double cos = 1.0 - dot / std::sqrt(na * nb);
  CHECK(Value(DistanceL2(Vec(a), Vec(b))) == doctest::Approx(std::sqrt(l2)));
  CHECK(Value(DistanceL1(Vec(a), Vec(b))) == doctest::Approx(l1));
  CHECK(Value(DistanceCosine(Vec(a), Vec(b))) == doctest::Approx(cos));
  CHECK(Value(GradientDistance(Distance::kCosineL1, Vec(a), Vec(b))) == doctest::Approx(cos + l1));
  CHECK(Value(GradientDistance(Distance::kCosineL2, Vec(a), Vec(b))) == doctest::Approx(cos + std::sqrt(l2)));

  CHECK(Value(DistanceCosine(Vec({2, -4, 6}), Vec({1, -2, 3}))) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(Value(DistanceCosine(Vec({-1, 2, -3}), Vec({1, -2, 3}))) == doctest::Approx(2.0));
  CHECK(Value(DistanceL1(Vec({1, -2, 3}), Vec({0, 0, 0}))) == 6.0);
  CHECK(Value(DistanceL1(Vec(a), Vec(a))) == 0.0);
  CHECK_THROWS_AS(DistanceL1(Vec({1, 2}), Vec({1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(DistanceCosine(Vec({1, 2}), Vec({0, 0})), std::invalid_argument);
}

TEST_CASE("total variation") {
  CHECK(Value(TotalVariation(Seq(1, {0.3, 0.3, 0.3}))) == 0.0);
  CHECK(Value(TotalVariation(Seq(1, {0, 1, 0.5}))) == doctest::Approx(1.5));
  CHECK(Value(TotalVariation(Seq(2, {0, 1, 0.5, 0, 0, 0}))) == doctest::Approx(0.75));
}

TEST_CASE("periodicity") {
  CHECK(Value(Periodicity(Seq(1, {1, 2, 1, 2}), 2)) == 0.0);
  CHECK(Value(Periodicity(Seq(1, {0, 0, 1, 0}), 2)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(Periodicity(Seq(1, {0, 0, 1, 0}), 4), std::invalid_argument);

  auto clean = data::SynthSeries(3, 240, 24, 0.0, 0.0);
  for (const auto& w : data::RollingWindows(clean, 24, 24, 30)) {
    std::vector<double> s = w.obs.vec();
    s.insert(s.end(), w.tar.data().begin(), w.tar.data().end());
    CHECK(Value(Periodicity(Seq(1, s), 24)) < 1e-10);
  }
}

TEST_CASE("trend") {
  CHECK(Value(Trend(Seq(1, {0, 1, 0}))) == doctest::Approx(4.0 / 3.0));
  auto v = RandomVector(20, 5);
  std::vector<double> line(20);
  for (size_t i = 0; i < 20; ++i) line[i] = 0.3 - 0.02 * double(i);
  CHECK(Value(Trend(Seq(1, line))) < 1e-10);
  auto shifted = v;
  for (double& x : shifted) x += 2.5;
  CHECK(Value(Trend(Seq(1, shifted))) == doctest::Approx(Value(Trend(Seq(1, v)))).epsilon(1e-12));
}

TEST_CASE("quantile bound violations") {
  const std::vector<double> levels{0.1, 0.3, 0.7, 0.9};
  Tensor bounds({3, 4});
  for (int64_t t = 0; t < 3; ++t) {
    for (int64_t q = 0; q < 4; ++q) bounds[size_t(t * 4 + q)] = 0.2 + 0.1 * double(q);  // 0.2 0.3 0.4 0.5
  }
  CHECK(Value(BoundsViolation(Seq(1, {0.35, 0.35, 0.35}), bounds, levels)) == 0.0);

  // One pair only: levels {0.1, 0.9} with band [0.2, 0.5].
  Tensor pair({3, 2}, std::vector<double>{0.2, 0.5, 0.2, 0.5, 0.2, 0.5});
  const std::vector<double> two{0.1, 0.9};
  CHECK(Value(BoundsViolation(Seq(1, {0.3, 1.0, 0.3}), pair, two)) == doctest::Approx(0.5));
  double prev = 0.0;
  for (double off = 0.0; off < 2.0; off += 0.1) {
    const double v = Value(BoundsViolation(Seq(1, {0.3, 0.5 + off, 0.2 - off}), pair, two));
    CHECK(v >= prev);
    prev = v;
  }
  const std::vector<double> unsorted{0.9, 0.1};
  CHECK_THROWS_AS(BoundsViolation(Seq(1, {0.3, 0.3, 0.3}), pair, unsorted), std::invalid_argument);
  const std::vector<double> skew{0.1, 0.8};
  CHECK_THROWS_AS(BoundsViolation(Seq(1, {0.3, 0.3, 0.3}), pair, skew), std::invalid_argument);
}

TEST_CASE("regularizers ignore batch order") {
  auto v = RandomVector(24, 8, 0, 1);
  std::vector<double> swapped(v.begin() + 12, v.end());
  swapped.insert(swapped.end(), v.begin(), v.begin() + 12);
  auto b = Band(12, 1, 0.2, 0.8).obs;
  const std::vector<double> levels{0.1, 0.3, 0.7, 0.9};
  CHECK(Value(Periodicity(Seq(2, v), 5)) == doctest::Approx(Value(Periodicity(Seq(2, swapped), 5))));
  CHECK(Value(Trend(Seq(2, v))) == doctest::Approx(Value(Trend(Seq(2, swapped)))));
  CHECK(Value(TotalVariation(Seq(2, v))) == doctest::Approx(Value(TotalVariation(Seq(2, swapped)))));
  CHECK(Value(BoundsViolation(Seq(2, v), b, levels)) == doctest::Approx(Value(BoundsViolation(Seq(2, swapped), b, levels))));
}

TEST_CASE("one-shot target recovery over random constructions") {
  const Architecture archs[] = {Architecture::kFcn, Architecture::kCnn, Architecture::kTcn, Architecture::kGru2Fcn};
  int tested = 0;
  double worst = 0.0, worst_rank1 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Architecture arch = archs[trial % 4];
    ModelSpec spec = Tiny(arch, 8 + trial % 5, 3 + trial % 7);
    auto model = BuildModel(spec);
    ParamVector p = InitParams(*model, uint64_t(trial));
    p = ParamVector::Unflatten(p, RandomVector(size_t(p.total_size()), 1000 + uint64_t(trial), -0.7, 0.7));
    const Tensor obs = RandomTensor({1, spec.obs_len, 1}, 2000 + uint64_t(trial), 0, 1);
    const Tensor tar = RandomTensor({1, spec.horizon, 1}, 3000 + uint64_t(trial), 0, 1);
    auto capture = fed::ClientGradient(*model, p, obs, tar, uint64_t(trial));
    const auto& gb = capture.observed.grads[model->FcHead()->bias_index];
    double peak = 0.0;
    for (double g : gb.data()) peak = std::max(peak, std::fabs(g));
    if (!(peak > 1e-12)) continue;
    auto r = OneShotTargets(capture.observed, *model, p);
    worst = std::max(worst, Smape(r.targets, tar));
    worst_rank1 = std::max(worst_rank1, r.rank1_residual);
    ++tested;
  }
  CHECK(tested == 100);
  CHECK(worst <= 1e-9);
  CHECK(worst_rank1 <= 1e-9);
}

TEST_CASE("one-shot recovers the FCN head input") {
  ModelSpec spec = Tiny(Architecture::kFcn);
  auto model = BuildModel(spec);
  ParamVector p = InitParams(*model, 3);
  const Tensor obs = RandomTensor({1, 8, 1}, 4, 0, 1), tar = RandomTensor({1, 8, 1}, 5, 0, 1);
  auto capture = fed::ClientGradient(*model, p, obs, tar, 0);
  auto r = OneShotTargets(capture.observed, *model, p);
  // Head input is sigmoid(fc2(sigmoid(fc1(x)))).
  auto dense = [&](size_t w, size_t b, const std::vector<double>& in) {
    const size_t rows = size_t(p[w].dim(0)), cols = size_t(p[w].dim(1));
    std::vector<double> out(rows);
    for (size_t i = 0; i < rows; ++i) {
      double acc = p[b][i];
      for (size_t j = 0; j < cols; ++j) acc += p[w][i * cols + j] * in[j];
      out[i] = 1.0 / (1.0 + std::exp(-acc));
    }
    return out;
  };
  auto expect = dense(2, 3, dense(0, 1, obs.vec()));
  for (size_t j = 0; j < expect.size(); ++j) CHECK(r.head_input[j] == doctest::Approx(expect[j]).epsilon(1e-9));
}

TEST_CASE("one-shot error paths") {
  ModelSpec spec = Tiny(Architecture::kFcn);
  auto model = BuildModel(spec);
  ParamVector p = InitParams(*model, 3);
  const Tensor obs = RandomTensor({1, 8, 1}, 4, 0, 1);
  Tensor pred = model->Forward(p.AsConstants(), Var::Constant(obs)).value();
  for (double& v : pred.data()) v = std::clamp(v, 0.0, 1.0);
  // Shift the bias so the prediction itself lies in [0, 1] and equals the target.
  ParamVector q = p;
  Tensor raw = model->Forward(p.AsConstants(), Var::Constant(obs)).value();
  for (size_t i = 0; i < 8; ++i) q[model->FcHead()->bias_index][i] += pred[i] - raw[i];
  auto exact = fed::ClientGradient(*model, q, obs, pred, 0);
  CHECK_THROWS_AS(OneShotTargets(exact.observed, *model, q), std::domain_error);

  auto two = fed::ClientGradient(*model, p, RandomTensor({2, 8, 1}, 6, 0, 1), RandomTensor({2, 8, 1}, 7, 0, 1), 0);
  CHECK_THROWS_AS(OneShotTargets(two.observed, *model, p), std::domain_error);

  auto seq = BuildModel(Tiny(Architecture::kGru2Gru));
  ParamVector ps = InitParams(*seq, 1);
  auto c = fed::ClientGradient(*seq, ps, obs, RandomTensor({1, 8, 1}, 7, 0, 1), 0);
  CHECK_THROWS_AS(OneShotTargets(c.observed, *seq, ps), std::invalid_argument);
}

TEST_CASE("total objective gradient matches finite differences") {
  for (auto arch : {Architecture::kFcn, Architecture::kCnn}) {
    CAPTURE(ArchitectureName(arch));
    auto model = BuildModel(Tiny(arch));
    ParamVector p = InitParams(*model, 2);
    p = ParamVector::Unflatten(p, RandomVector(size_t(p.total_size()), 3, -0.6, 0.6));
    auto capture = fed::ClientGradient(*model, p, RandomTensor({1, 8, 1}, 4, 0, 1), RandomTensor({1, 8, 1}, 5, 0, 1), 0);
    AttackConfig c;
    c.distance = Distance::kL1;
    c.periodicity = 1.0;
    c.period = 5;
    c.trend = 0.5;
    c.tv_obs = 0.01;
    c.bounds = Band(8, 8, 0.3, 0.7);
    c.bounds_obs = 1.0;
    c.bounds_tar = 0.1;
    const Tensor obs = RandomTensor({1, 8, 1}, 6, 0, 1), tar = RandomTensor({1, 8, 1}, 7, 0, 1);
    auto obj = EvaluateObjective(capture.observed, *model, p, c, obs, tar);
    std::vector<double> ad = obj.grad_obs;
    ad.insert(ad.end(), obj.grad_tar.begin(), obj.grad_tar.end());
    std::vector<double> x = obs.vec();
    x.insert(x.end(), tar.data().begin(), tar.data().end());
    auto f = [&](const std::vector<double>& v) {
      Tensor o({1, 8, 1}, std::vector<double>(v.begin(), v.begin() + 8));
      Tensor t({1, 8, 1}, std::vector<double>(v.begin() + 8, v.end()));
      return EvaluateObjective(capture.observed, *model, p, c, o, t).total;
    };
    // The objective is piecewise smooth (L1, hinges); a small step stays inside one piece.
    CHECK(testing::GradientRelativeError(ad, testing::CentralDifference(f, x, 1e-6)) < 1e-4);
  }
}

TEST_CASE("zero regularization leaves the bare distance") {
  auto model = BuildModel(Tiny(Architecture::kCnn));
  ParamVector p = InitParams(*model, 1);
  auto capture = fed::ClientGradient(*model, p, RandomTensor({1, 8, 1}, 2, 0, 1), RandomTensor({1, 8, 1}, 3, 0, 1), 0);
  for (auto d : {Distance::kL2, Distance::kCosine, Distance::kL1, Distance::kCosineL1, Distance::kCosineL2}) {
    AttackConfig c;
    c.distance = d;
    auto obj = EvaluateObjective(capture.observed, *model, p, c, RandomTensor({1, 8, 1}, 4, 0, 1),
                                 RandomTensor({1, 8, 1}, 5, 0, 1));
    CHECK(obj.total == obj.distance);
  }
}

TEST_CASE("attack started at the true batch stays there") {
  auto model = BuildModel(Tiny(Architecture::kFcn));
  ParamVector p = InitParams(*model, 1);
  const Tensor obs = RandomTensor({1, 8, 1}, 2, 0, 1), tar = RandomTensor({1, 8, 1}, 3, 0, 1);
  auto capture = fed::ClientGradient(*model, p, obs, tar, 0);
  AttackConfig c;
  c.steps = 15;
  AttackStart start{obs, tar, std::nullopt};
  auto r = RunAttack(capture.observed, *model, p, c, start);
  CHECK(r.loss_trace.size() == 15);
  CHECK(r.distance_trace.front() == 0.0);
  CHECK(r.best_loss == 0.0);
  CHECK(r.recon_obs.vec() == obs.vec());
  CHECK(r.recon_tar.vec() == tar.vec());
}

TEST_CASE("attack result contract") {
  auto model = BuildModel(Tiny(Architecture::kFcn));
  ParamVector p = InitParams(*model, 1);
  auto capture = fed::ClientGradient(*model, p, RandomTensor({2, 8, 1}, 2, 0, 1), RandomTensor({2, 8, 1}, 3, 0, 1), 0);
  for (auto opt : {Optimizer::kAdam, Optimizer::kLbfgs}) {
    AttackConfig c;
    c.steps = 30;
    c.optimizer = opt;
    c.learning_rate = opt == Optimizer::kLbfgs ? 1.0 : 0.01;
    c.seed = 4;
    auto r = RunAttack(capture.observed, *model, p, c);
    CHECK(r.recon_obs.shape() == Shape{2, 8, 1});
    CHECK(r.recon_tar.shape() == Shape{2, 8, 1});
    CHECK(r.loss_trace.size() == 30);
    CHECK(r.distance_trace.size() == 30);
    CHECK(r.best_loss <= *std::min_element(r.loss_trace.begin(), r.loss_trace.end()));
    CHECK(r.best_loss < r.loss_trace.front());
    auto again = RunAttack(capture.observed, *model, p, c);
    CHECK(again.recon_obs.vec() == r.recon_obs.vec());
  }

  AttackConfig bad;
  bad.dia_masks = true;
  CHECK_THROWS_AS(RunAttack(capture.observed, *model, p, bad), std::invalid_argument);
  bad = AttackConfig{};
  bad.bounds_obs = 1.0;
  CHECK_THROWS_AS(RunAttack(capture.observed, *model, p, bad), std::invalid_argument);
}

TEST_CASE("mask co-optimization") {
  ModelSpec spec = Tiny(Architecture::kTcn);
  auto model = BuildModel(spec);
  ParamVector p = InitParams(*model, 1);
  p = ParamVector::Unflatten(p, RandomVector(size_t(p.total_size()), 9, -0.5, 0.5));
  const Tensor obs = RandomTensor({1, 8, 1}, 2, 0, 1), tar = RandomTensor({1, 8, 1}, 3, 0, 1);
  auto capture = fed::ClientGradient(*model, p, obs, tar, 5);

  // Oracle masks frozen: the true batch is a zero of the objective.
  auto exact = EvaluateObjective(capture.observed, *model, p, AttackConfig{}, obs, tar, capture.truth->masks);
  CHECK(exact.distance == 0.0);

  // Mask variables start at 1, i.e. every unit kept at train-time scale.
  AttackConfig c;
  c.dia_masks = true;
  c.steps = 1;
  AttackStart start{obs, tar, std::nullopt};
  auto one = RunAttack(capture.observed, *model, p, c, start);
  std::vector<Tensor> kept;
  for (const auto& s : model->MaskShapes(1)) kept.emplace_back(s, 1.0 / (1.0 - spec.dropout_rate));
  auto keep_all = EvaluateObjective(capture.observed, *model, p, AttackConfig{}, obs, tar, kept);
  CHECK(one.loss_trace.front() == doctest::Approx(keep_all.total).epsilon(1e-12));
  REQUIRE(one.masks.size() == kept.size());
}

TEST_CASE("result persistence") {
  auto model = BuildModel(Tiny(Architecture::kFcn));
  ParamVector p = InitParams(*model, 1);
  auto capture = fed::ClientGradient(*model, p, RandomTensor({1, 8, 1}, 2, 0, 1), RandomTensor({1, 8, 1}, 3, 0, 1), 0);
  AttackConfig c = MethodConfig("ts-inverse-oneshot", Architecture::kFcn);
  c.period = 4;
  c.periodicity = 1.0;
  c.steps = 5;
  auto r = RunAttack(capture.observed, *model, p, c);
  const auto dir = (std::filesystem::temp_directory_path() / "tsinv_result_test").string();
  SaveResult(dir, r);
  auto back = LoadResult(dir);
  CHECK(back.recon_obs.vec() == r.recon_obs.vec());
  CHECK(back.recon_tar.vec() == r.recon_tar.vec());
  CHECK(back.loss_trace == r.loss_trace);
  CHECK(back.config.one_shot_targets);
  CHECK(back.config.periodicity == 1.0);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(MethodConfig("magic", Architecture::kFcn), std::invalid_argument);
}
