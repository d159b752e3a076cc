#include "tsinv/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tsinv/io.hpp"

namespace tsinv::attack {

using ad::Var;

namespace {

constexpr double kPivotFloor = 1e-12;

template <typename E, size_t N>
E ParseEnum(std::string_view name, const E (&all)[N], std::string (*namer)(E), const char* what) {
  for (E e : all) {
    if (namer(e) == name) return e;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

Var Row(const Tensor& column_major, int64_t rows, int64_t cols, int64_t col) {
  Tensor out({1, rows});
  for (int64_t r = 0; r < rows; ++r) out[size_t(r)] = column_major[size_t(r * cols + col)];
  return Var::Constant(std::move(out));
}

void CheckSeq(const Var& seq, const char* what) {
  if (seq.value().rank() != 2) throw ShapeError(std::string(what) + " expects a (B, T) sequence");
}

}  // namespace

std::string DistanceName(Distance d) {
  switch (d) {
    case Distance::kL2: return "l2";
    case Distance::kCosine: return "cosine";
    case Distance::kCosineTV: return "cosine-tv";
    case Distance::kL1: return "l1";
    case Distance::kCosineL1: return "cosine-l1";
    case Distance::kCosineL2: return "cosine-l2";
  }
  return "?";
}

Distance ParseDistance(std::string_view name) {
  static const Distance all[] = {Distance::kL2,     Distance::kCosine,   Distance::kCosineTV,
                                 Distance::kL1,     Distance::kCosineL1, Distance::kCosineL2};
  return ParseEnum(name, all, &DistanceName, "distance");
}

std::string OptimizerName(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "lbfgs"; }

Optimizer ParseOptimizer(std::string_view name) {
  static const Optimizer all[] = {Optimizer::kAdam, Optimizer::kLbfgs};
  return ParseEnum(name, all, &OptimizerName, "optimizer");
}

std::string InitName(Init i) { return i == Init::kUniform01 ? "uniform01" : "half_constant"; }

Init ParseInit(std::string_view name) {
  static const Init all[] = {Init::kUniform01, Init::kHalfConstant};
  return ParseEnum(name, all, &InitName, "init");
}

void QuantileBounds::Validate() const {
  const size_t q = levels.size();
  if (q == 0 || q % 2 != 0) throw std::invalid_argument("quantile levels must be a non-empty even count");
  for (size_t i = 0; i < q; ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw std::invalid_argument("quantile levels must lie in (0, 1)");
    if (i > 0 && !(levels[i] > levels[i - 1])) throw std::invalid_argument("quantile levels must be sorted ascending");
    if (std::fabs(levels[i] + levels[q - 1 - i] - 1.0) > 1e-9) {
      throw std::invalid_argument("quantile levels must be symmetric around 0.5");
    }
  }
  for (const Tensor* t : {&obs, &tar}) {
    if (t->rank() != 2 || t->dim(1) != static_cast<int64_t>(q)) throw ShapeError("bounds must be (T, Q)");
  }
}

nlohmann::json BoundsToJson(const QuantileBounds& b) {
  return {{"levels", b.levels},
          {"obs_shape", b.obs.shape()},
          {"obs", b.obs.vec()},
          {"tar_shape", b.tar.shape()},
          {"tar", b.tar.vec()}};
}

QuantileBounds BoundsFromJson(const nlohmann::json& j) {
  QuantileBounds b;
  b.levels = j.at("levels").get<std::vector<double>>();
  b.obs = Tensor(j.at("obs_shape").get<Shape>(), j.at("obs").get<std::vector<double>>());
  b.tar = Tensor(j.at("tar_shape").get<Shape>(), j.at("tar").get<std::vector<double>>());
  b.Validate();
  return b;
}

void AttackConfig::Validate() const {
  for (double l : {tv_obs, tv_tar, periodicity, trend, bounds_obs, bounds_tar}) {
    if (!(l >= 0.0)) throw std::invalid_argument("regularization weights must be >= 0");
  }
  if (period < 1) throw std::invalid_argument("period must be >= 1");
  if ((bounds_obs > 0 || bounds_tar > 0) != bounds.has_value()) {
    throw std::invalid_argument("quantile bounds are required exactly when a bounds weight is positive");
  }
  if (bounds) bounds->Validate();
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(learning_rate > 0) || !(final_learning_rate > 0)) throw std::invalid_argument("learning rates must be > 0");
}

nlohmann::json ConfigToJson(const AttackConfig& c) {
  nlohmann::json j{{"distance", DistanceName(c.distance)},
                   {"tv_obs", c.tv_obs},
                   {"tv_tar", c.tv_tar},
                   {"periodicity", c.periodicity},
                   {"period", c.period},
                   {"trend", c.trend},
                   {"bounds_obs", c.bounds_obs},
                   {"bounds_tar", c.bounds_tar},
                   {"steps", c.steps},
                   {"optimizer", OptimizerName(c.optimizer)},
                   {"learning_rate", c.learning_rate},
                   {"final_learning_rate", c.final_learning_rate},
                   {"init", InitName(c.init)},
                   {"clamp01", c.clamp01},
                   {"seed", c.seed},
                   {"one_shot_targets", c.one_shot_targets},
                   {"dia_masks", c.dia_masks}};
  if (c.bounds) j["bounds"] = BoundsToJson(*c.bounds);
  return j;
}

AttackConfig ConfigFromJson(const nlohmann::json& j) {
  AttackConfig c;
  c.distance = ParseDistance(j.value("distance", DistanceName(c.distance)));
  c.tv_obs = j.value("tv_obs", c.tv_obs);
  c.tv_tar = j.value("tv_tar", c.tv_tar);
  c.periodicity = j.value("periodicity", c.periodicity);
  c.period = j.value("period", c.period);
  c.trend = j.value("trend", c.trend);
  c.bounds_obs = j.value("bounds_obs", c.bounds_obs);
  c.bounds_tar = j.value("bounds_tar", c.bounds_tar);
  if (j.contains("bounds")) c.bounds = BoundsFromJson(j.at("bounds"));
  c.steps = j.value("steps", c.steps);
  c.optimizer = ParseOptimizer(j.value("optimizer", OptimizerName(c.optimizer)));
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
  c.init = ParseInit(j.value("init", InitName(c.init)));
  c.clamp01 = j.value("clamp01", c.clamp01);
  c.seed = j.value("seed", c.seed);
  c.one_shot_targets = j.value("one_shot_targets", c.one_shot_targets);
  c.dia_masks = j.value("dia_masks", c.dia_masks);
  c.Validate();
  return c;
}

std::vector<std::string> MethodNames() {
  return {"dlg-lbfgs", "dlg-adam", "invg", "dia", "ts-inverse", "ts-inverse-oneshot"};
}

AttackConfig MethodConfig(std::string_view method, Architecture arch) {
  const bool has_dropout = arch == Architecture::kTcn;
  AttackConfig c;
  c.clamp01 = false;
  if (method == "dlg-lbfgs") {
    c.distance = Distance::kL2;
    c.optimizer = Optimizer::kLbfgs;
    c.learning_rate = 1.0;
  } else if (method == "dlg-adam") {
    c.distance = Distance::kL2;
  } else if (method == "invg" || method == "dia") {
    c.distance = Distance::kCosineTV;
    c.tv_obs = c.tv_tar = 1e-4;
    c.dia_masks = method == "dia" && has_dropout;
  } else if (method == "ts-inverse" || method == "ts-inverse-oneshot") {
    // Regularizer weights are per-dataset tuning knobs and stay off by default.
    c.distance = Distance::kL1;
    c.clamp01 = true;
    c.dia_masks = has_dropout;
    c.one_shot_targets = method == "ts-inverse-oneshot";
  } else {
    throw std::invalid_argument("unknown attack method '" + std::string(method) + "'");
  }
  return c;
}

Var DistanceL2(const Var& dummy, const Var& target) {
  if (dummy.shape() != target.shape()) throw ShapeError("gradient lengths differ");
  return ad::Sqrt(ad::Sum(ad::Square(dummy - target)));
}

Var DistanceCosine(const Var& dummy, const Var& target) {
  if (dummy.shape() != target.shape()) throw ShapeError("gradient lengths differ");
  const double target_norm = std::sqrt(ad::Sum(ad::Square(target)).value().item());
  if (!(target_norm > 0.0)) throw std::invalid_argument("cosine distance needs a nonzero captured gradient");
  Var dot = ad::Sum(dummy * target);
  Var norm = ad::Sqrt(ad::Sum(ad::Square(dummy)) + 1e-30);
  return 1.0 - dot / (norm * target_norm);
}

Var DistanceL1(const Var& dummy, const Var& target) {
  if (dummy.shape() != target.shape()) throw ShapeError("gradient lengths differ");
  return ad::Sum(ad::Abs(dummy - target));
}

Var GradientDistance(Distance d, const Var& dummy, const Var& target) {
  switch (d) {
    case Distance::kL2: return DistanceL2(dummy, target);
    case Distance::kCosine:
    case Distance::kCosineTV: return DistanceCosine(dummy, target);
    case Distance::kL1: return DistanceL1(dummy, target);
    case Distance::kCosineL1: return DistanceCosine(dummy, target) + DistanceL1(dummy, target);
    case Distance::kCosineL2: return DistanceCosine(dummy, target) + DistanceL2(dummy, target);
  }
  throw std::logic_error("unhandled distance");
}

Var TotalVariation(const Var& seq) {
  CheckSeq(seq, "total variation");
  const int64_t batch = seq.shape()[0], steps = seq.shape()[1];
  if (steps < 2) return Var::Constant(Tensor::Scalar(0.0));
  Var diff = ad::Slice(seq, 1, 1, steps - 1) - ad::Slice(seq, 1, 0, steps - 1);
  return ad::Sum(ad::Abs(diff)) * (1.0 / double(batch));
}

Var Periodicity(const Var& seq, int period) {
  CheckSeq(seq, "periodicity");
  const int64_t batch = seq.shape()[0], steps = seq.shape()[1];
  if (period < 1 || period >= steps) {
    throw std::invalid_argument("period " + std::to_string(period) + " must be in [1, " + std::to_string(steps) + ")");
  }
  const int64_t n = steps - period;
  Var diff = ad::Slice(seq, 1, 0, n) - ad::Slice(seq, 1, period, n);
  return ad::Sum(ad::Abs(diff)) * (1.0 / double(n * batch));
}

Var Trend(const Var& seq) {
  CheckSeq(seq, "trend");
  const int64_t batch = seq.shape()[0], steps = seq.shape()[1];
  if (steps < 2) throw std::invalid_argument("trend needs at least 2 timesteps");
  Tensor centered({steps, 1});
  const double mid = double(steps - 1) / 2.0;
  double ss = 0.0;
  for (int64_t s = 0; s < steps; ++s) {
    centered[size_t(s)] = double(s) - mid;
    ss += centered[size_t(s)] * centered[size_t(s)];
  }
  Var c = Var::Constant(centered);
  Var mean = ad::MatMul(seq, Var::Constant(Tensor({steps, 1}, 1.0 / double(steps))));  // (B, 1)
  Var slope = ad::MatMul(seq, c) * (1.0 / ss);                                          // (B, 1)
  Var fitted = mean + ad::MatMul(slope, c, false, true);                                // (B, T)
  return ad::Sum(ad::Abs(seq - fitted)) * (1.0 / double(batch));
}

Var BoundsViolation(const Var& seq, const Tensor& bounds, std::span<const double> levels) {
  CheckSeq(seq, "bounds");
  const int64_t batch = seq.shape()[0], steps = seq.shape()[1];
  const auto q = static_cast<int64_t>(levels.size());
  if (bounds.rank() != 2 || bounds.dim(0) != steps || bounds.dim(1) != q) {
    throw ShapeError("bounds " + ShapeString(bounds.shape()) + " do not match sequence length " + std::to_string(steps));
  }
  QuantileBounds check{std::vector<double>(levels.begin(), levels.end()), bounds, bounds};
  check.Validate();
  Var total = Var::Constant(Tensor::Scalar(0.0));
  for (int64_t k = 0; k < q / 2; ++k) {
    Var lower = Row(bounds, steps, q, k);
    Var upper = Row(bounds, steps, q, q - 1 - k);
    total = total + ad::Sum(ad::Relu(seq - upper) + ad::Relu(lower - seq));
  }
  return total * (1.0 / double(batch));
}

OneShotRecovery OneShotTargets(const fed::ObservedGradient& capture, const ForecastModel& model,
                               const ParamVector& params) {
  const auto head = model.FcHead();
  if (!head) throw std::invalid_argument(ArchitectureName(model.spec().architecture) + " has no fully connected head");
  if (capture.batch_size != 1) throw std::domain_error("one-shot recovery needs a batch of one");
  const Tensor& w = params[head->weight_index];
  const Tensor& b = params[head->bias_index];
  const Tensor& gw = capture.grads[head->weight_index];
  const Tensor& gb = capture.grads[head->bias_index];
  if (gw.shape() != w.shape() || gb.shape() != b.shape()) throw ShapeError("capture does not match the model head");
  const int64_t out = w.dim(0), in = w.dim(1);

  size_t pivot = 0;
  for (size_t i = 1; i < size_t(out); ++i) {
    if (std::fabs(gb[i]) > std::fabs(gb[pivot])) pivot = i;
  }
  if (!(std::fabs(gb[pivot]) > kPivotFloor)) throw std::domain_error("bias gradient is zero; one-shot recovery undefined");

  OneShotRecovery r;
  r.pivot = pivot;
  r.head_input.resize(size_t(in));
  for (int64_t j = 0; j < in; ++j) r.head_input[size_t(j)] = gw[pivot * size_t(in) + size_t(j)] / gb[pivot];
  for (int64_t i = 0; i < out; ++i) {
    for (int64_t j = 0; j < in; ++j) {
      const double resid = gw[size_t(i * in + j)] - gb[size_t(i)] * r.head_input[size_t(j)];
      r.rank1_residual = std::max(r.rank1_residual, std::fabs(resid));
    }
  }
  const double n = double(out);
  r.targets = Tensor({1, out, 1});
  for (int64_t i = 0; i < out; ++i) {
    double y = b[size_t(i)];
    for (int64_t j = 0; j < in; ++j) y += w[size_t(i * in + j)] * r.head_input[size_t(j)];
    r.targets[size_t(i)] = y - gb[size_t(i)] * n / 2.0;
  }
  return r;
}

namespace {

// Flat variable vector: obs | tar (unless fixed) | mask logits (DIA only).
class Problem {
 public:
  Problem(const fed::ObservedGradient& capture, const ForecastModel& model, const ParamVector& params,
          const AttackConfig& config)
      : model_(model), config_(config), leaves_(params.AsLeaves()) {
    const auto& spec = model.spec();
    batch_ = capture.batch_size;
    if (batch_ < 1) throw std::invalid_argument("capture has no batch size");
    if (capture.grads.total_size() != params.total_size()) {
      throw ShapeError("capture gradient has " + std::to_string(capture.grads.total_size()) + " entries, model has " +
                       std::to_string(params.total_size()));
    }
    target_ = Var::Constant(Tensor({params.total_size()}, capture.grads.Flatten()));
    obs_size_ = batch_ * spec.obs_len;
    tar_size_ = batch_ * spec.horizon;
    if (config.dia_masks && !model.HasDropout()) {
      throw std::invalid_argument("mask optimization requested on an architecture without dropout");
    }
    mask_shapes_ = model.MaskShapes(batch_);
    if (config.periodicity > 0 && config.period >= spec.obs_len + spec.horizon) {
      throw std::invalid_argument("period must be shorter than the combined sequence");
    }
    if (config.bounds) {
      if (config.bounds->obs.dim(0) != spec.obs_len || config.bounds->tar.dim(0) != spec.horizon) {
        throw ShapeError("quantile bounds do not match the model's sequence lengths");
      }
    }
  }

  void FixTargets(Tensor tar) { fixed_tar_ = std::move(tar); }
  void FixMasks(std::vector<Tensor> masks) { fixed_masks_ = std::move(masks); }

  bool optimizes_tar() const { return !fixed_tar_.has_value(); }
  bool optimizes_masks() const { return config_.dia_masks && !fixed_masks_.has_value(); }
  int64_t obs_size() const { return obs_size_; }
  int64_t tar_size() const { return optimizes_tar() ? tar_size_ : 0; }
  int64_t size() const {
    int64_t n = obs_size_ + tar_size();
    if (optimizes_masks()) {
      for (const auto& s : mask_shapes_) n += NumElements(s);
    }
    return n;
  }

  // Returns the total loss; fills grad (size()) when non-null.
  double Evaluate(const std::vector<double>& x, std::vector<double>* grad, double* distance) const {
    const auto& spec = model_.spec();
    size_t offset = 0;
    auto take = [&](Shape shape, bool trainable) {
      const auto n = static_cast<size_t>(NumElements(shape));
      Tensor t(std::move(shape), std::vector<double>(x.begin() + long(offset), x.begin() + long(offset + n)));
      offset += n;
      return trainable ? Var::Leaf(std::move(t)) : Var::Constant(std::move(t));
    };
    std::vector<Var> vars;
    Var obs = take({batch_, spec.obs_len, 1}, true);
    vars.push_back(obs);
    Var tar;
    if (optimizes_tar()) {
      tar = take({batch_, spec.horizon, 1}, true);
      vars.push_back(tar);
    } else {
      tar = Var::Constant(*fixed_tar_);
    }
    MaskSet masks;
    if (optimizes_masks()) {
      const double scale = 1.0 / (1.0 - spec.dropout_rate);
      for (const auto& s : mask_shapes_) {
        Var m = take(s, true);
        vars.push_back(m);
        masks.push_back(ad::Clamp(m, 0.0, 1.0) * scale);
      }
    } else if (fixed_masks_) {
      for (const auto& m : *fixed_masks_) masks.push_back(Var::Constant(m));
    } else {
      masks = OnesMasks(model_, batch_);
    }

    Var mse = MseLoss(model_.Forward(leaves_, obs, &masks), tar);
    auto dummy_grads = ad::Grad(mse, leaves_, /*create_graph=*/true);
    std::vector<Var> flat;
    flat.reserve(dummy_grads.size());
    for (const auto& g : dummy_grads) flat.push_back(ad::Reshape(g, {static_cast<int64_t>(g.size())}));
    Var dist = GradientDistance(config_.distance, ad::Concat(flat, 0), target_);

    Var total = dist;
    Var obs_seq = ad::Reshape(obs, {batch_, spec.obs_len});
    Var tar_seq = ad::Reshape(tar, {batch_, spec.horizon});
    if (config_.tv_obs > 0) total = total + config_.tv_obs * TotalVariation(obs_seq);
    if (config_.tv_tar > 0) total = total + config_.tv_tar * TotalVariation(tar_seq);
    if (config_.periodicity > 0 || config_.trend > 0) {
      Var seq = ad::Concat({obs_seq, tar_seq}, 1);
      if (config_.periodicity > 0) total = total + config_.periodicity * Periodicity(seq, config_.period);
      if (config_.trend > 0) total = total + config_.trend * Trend(seq);
    }
    if (config_.bounds) {
      const auto& b = *config_.bounds;
      if (config_.bounds_obs > 0) total = total + config_.bounds_obs * BoundsViolation(obs_seq, b.obs, b.levels);
      if (config_.bounds_tar > 0) total = total + config_.bounds_tar * BoundsViolation(tar_seq, b.tar, b.levels);
    }

    const double value = total.value().item();
    if (!std::isfinite(value)) throw NumericError("attack objective is not finite");
    if (distance) *distance = dist.value().item();
    if (grad) {
      auto g = ad::Grad(total, vars);
      grad->clear();
      for (const auto& gi : g) grad->insert(grad->end(), gi.value().data().begin(), gi.value().data().end());
    }
    return value;
  }

  // Keeps obs/tar in [0, 1] when clamping and masks in [0, 1] always.
  void Project(std::vector<double>& x) const {
    const auto data_end = static_cast<size_t>(obs_size_ + tar_size());
    if (config_.clamp01) {
      for (size_t i = 0; i < data_end; ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
    }
    for (size_t i = data_end; i < x.size(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
  }

  const std::vector<Shape>& mask_shapes() const { return mask_shapes_; }

 private:
  const ForecastModel& model_;
  const AttackConfig& config_;
  std::vector<Var> leaves_;
  Var target_;
  int64_t batch_ = 0;
  int64_t obs_size_ = 0;
  int64_t tar_size_ = 0;
  std::vector<Shape> mask_shapes_;
  std::optional<Tensor> fixed_tar_;
  std::optional<std::vector<Tensor>> fixed_masks_;
};

struct Tracker {
  std::vector<double> best_x;
  double best = std::numeric_limits<double>::infinity();
  int best_step = -1;

  void Offer(const std::vector<double>& x, double loss, int step) {
    if (loss < best) {
      best = loss;
      best_x = x;
      best_step = step;
    }
  }
};

double CosineRate(const AttackConfig& c, int step) {
  const double progress = double(step) / double(std::max(1, c.steps));
  return c.final_learning_rate + 0.5 * (c.learning_rate - c.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

void RunAdam(const Problem& problem, const AttackConfig& c, std::vector<double>& x, int first_step, Tracker& tracker,
             AttackResult& result) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0), g;
  for (int step = first_step; step < c.steps; ++step) {
    double dist = 0.0;
    const double loss = problem.Evaluate(x, &g, &dist);
    result.loss_trace.push_back(loss);
    result.distance_trace.push_back(dist);
    tracker.Offer(x, loss, step);
    const int t = step - first_step + 1;
    const double lr = CosineRate(c, step);
    const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1 - kBeta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
    problem.Project(x);
  }
}

double Dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Returns the step at which it stopped early (line search failure), or c.steps.
int RunLbfgs(const Problem& problem, const AttackConfig& c, std::vector<double>& x, Tracker& tracker,
             AttackResult& result) {
  constexpr size_t kHistory = 100;
  constexpr int kMaxHalvings = 30;
  constexpr double kArmijo = 1e-4;
  std::deque<std::vector<double>> s_hist, y_hist;
  std::vector<double> g, g_new, d(x.size()), x_new;
  double dist = 0.0;
  double loss = problem.Evaluate(x, &g, &dist);
  for (int step = 0; step < c.steps; ++step) {
    result.loss_trace.push_back(loss);
    result.distance_trace.push_back(dist);
    tracker.Offer(x, loss, step);

    // Two-loop recursion.
    std::vector<double> q = g, alpha(s_hist.size());
    for (size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = Dot(s_hist[k], q) / Dot(y_hist[k], s_hist[k]);
      for (size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * y_hist[k][i];
    }
    const double gamma = s_hist.empty() ? 1.0 : Dot(s_hist.back(), y_hist.back()) / Dot(y_hist.back(), y_hist.back());
    for (double& qi : q) qi *= gamma;
    for (size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = Dot(y_hist[k], q) / Dot(y_hist[k], s_hist[k]);
      for (size_t i = 0; i < q.size(); ++i) q[i] += s_hist[k][i] * (alpha[k] - beta);
    }
    for (size_t i = 0; i < d.size(); ++i) d[i] = -q[i];
    double slope = Dot(g, d);
    if (!(slope < 0)) {
      s_hist.clear();
      y_hist.clear();
      for (size_t i = 0; i < d.size(); ++i) d[i] = -g[i];
      slope = -Dot(g, g);
    }
    if (slope == 0.0) return c.steps;  // stationary point

    double t = c.learning_rate;
    if (s_hist.empty()) {
      double l1 = 0.0;
      for (double gi : g) l1 += std::fabs(gi);
      t = c.learning_rate * std::min(1.0, 1.0 / l1);
    }
    bool accepted = false;
    double new_loss = 0.0, new_dist = 0.0;
    for (int h = 0; h < kMaxHalvings && !accepted; ++h, t *= 0.5) {
      x_new = x;
      for (size_t i = 0; i < x.size(); ++i) x_new[i] += t * d[i];
      problem.Project(x_new);
      try {
        new_loss = problem.Evaluate(x_new, &g_new, &new_dist);
      } catch (const NumericError&) {
        continue;
      }
      accepted = new_loss <= loss + kArmijo * t * slope;
    }
    if (!accepted) return step + 1;

    std::vector<double> s(x.size()), y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    if (Dot(s, y) > 1e-10) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      if (s_hist.size() > kHistory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    x.swap(x_new);
    g.swap(g_new);
    loss = new_loss;
    dist = new_dist;
  }
  tracker.Offer(x, loss, c.steps);
  return c.steps;
}

}  // namespace

Objective EvaluateObjective(const fed::ObservedGradient& capture, const ForecastModel& model, const ParamVector& params,
                            const AttackConfig& config, const Tensor& obs, const Tensor& tar,
                            const std::vector<Tensor>& masks) {
  config.Validate();
  AttackConfig plain = config;
  plain.dia_masks = false;
  Problem problem(capture, model, params, plain);
  if (!masks.empty()) problem.FixMasks(masks);
  std::vector<double> x = obs.vec();
  x.insert(x.end(), tar.data().begin(), tar.data().end());
  if (static_cast<int64_t>(x.size()) != problem.size()) throw ShapeError("dummy data does not match the capture");
  Objective out;
  std::vector<double> grad;
  out.total = problem.Evaluate(x, &grad, &out.distance);
  out.grad_obs.assign(grad.begin(), grad.begin() + problem.obs_size());
  out.grad_tar.assign(grad.begin() + problem.obs_size(), grad.end());
  return out;
}

AttackResult RunAttack(const fed::ObservedGradient& capture, const ForecastModel& model, const ParamVector& params,
                       const AttackConfig& config, const AttackStart& start) {
  config.Validate();
  const auto started = std::chrono::steady_clock::now();
  const auto& spec = model.spec();
  AttackResult result;
  result.config = config;
  Problem problem(capture, model, params, config);

  if (config.one_shot_targets) {
    try {
      problem.FixTargets(OneShotTargets(capture, model, params).targets);
    } catch (const std::domain_error& e) {
      result.notes.push_back(std::string("one-shot targets unavailable (") + e.what() + "); optimizing targets");
    }
  }
  if (start.fixed_masks) problem.FixMasks(*start.fixed_masks);

  // Initial point.
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(static_cast<size_t>(problem.size()), 1.0);
  auto fill = [&](size_t begin, size_t n, const std::optional<Tensor>& given) {
    if (given) {
      if (given->size() != n) throw ShapeError("start tensor does not match the capture");
      std::copy(given->data().begin(), given->data().end(), x.begin() + long(begin));
      return;
    }
    for (size_t i = 0; i < n; ++i) x[begin + i] = config.init == Init::kUniform01 ? unit(rng) : 0.5;
  };
  fill(0, size_t(problem.obs_size()), start.obs);
  if (problem.optimizes_tar()) fill(size_t(problem.obs_size()), size_t(problem.tar_size()), start.tar);

  Tracker tracker;
  try {
    if (config.optimizer == Optimizer::kLbfgs) {
      const int stopped = RunLbfgs(problem, config, x, tracker, result);
      if (stopped < config.steps) {
        result.notes.push_back("lbfgs line search failed at step " + std::to_string(stopped) + "; continued with adam");
        x = tracker.best_x;
        RunAdam(problem, config, x, stopped, tracker, result);
      }
    } else {
      RunAdam(problem, config, x, 0, tracker, result);
    }
    double dist = 0.0;
    tracker.Offer(x, problem.Evaluate(x, nullptr, &dist), config.steps);
  } catch (const NumericError& e) {
    result.status = std::string("aborted: ") + e.what() + " at step " + std::to_string(result.loss_trace.size());
  }
  if (tracker.best_x.empty()) throw NumericError("attack objective was never finite");

  const auto& best = tracker.best_x;
  const int64_t batch = capture.batch_size;
  result.recon_obs = Tensor({batch, spec.obs_len, 1}, std::vector<double>(best.begin(), best.begin() + problem.obs_size()));
  size_t offset = size_t(problem.obs_size());
  if (problem.optimizes_tar()) {
    result.recon_tar = Tensor({batch, spec.horizon, 1},
                              std::vector<double>(best.begin() + long(offset), best.begin() + long(offset) + problem.tar_size()));
    offset += size_t(problem.tar_size());
  } else {
    result.recon_tar = OneShotTargets(capture, model, params).targets;
  }
  if (problem.optimizes_masks()) {
    const double scale = 1.0 / (1.0 - spec.dropout_rate);
    for (const auto& s : problem.mask_shapes()) {
      Tensor m(s);
      for (double& v : m.data()) v = std::clamp(best[offset++], 0.0, 1.0) * scale;
      result.masks.push_back(std::move(m));
    }
  }
  result.best_step = tracker.best_step;
  result.best_loss = tracker.best;
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void SaveResult(const std::string& dir, const AttackResult& r) {
  io::EnsureDir(dir);
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& m : r.masks) masks.push_back(m.shape());
  nlohmann::json j{{"config", ConfigToJson(r.config)},
                   {"obs_shape", r.recon_obs.shape()},
                   {"tar_shape", r.recon_tar.shape()},
                   {"mask_shapes", masks},
                   {"loss_trace", r.loss_trace},
                   {"distance_trace", r.distance_trace},
                   {"wall_time", r.wall_time},
                   {"best_step", r.best_step},
                   {"best_loss", r.best_loss},
                   {"status", r.status},
                   {"notes", r.notes}};
  io::WriteJson(io::Join(dir, "result.json"), j);
  std::vector<double> blob = r.recon_obs.vec();
  blob.insert(blob.end(), r.recon_tar.data().begin(), r.recon_tar.data().end());
  for (const auto& m : r.masks) blob.insert(blob.end(), m.data().begin(), m.data().end());
  io::WriteF64(io::Join(dir, "recon.bin"), blob);
}

AttackResult LoadResult(const std::string& dir) {
  const auto j = io::ReadJson(io::Join(dir, "result.json"));
  const auto blob = io::ReadF64(io::Join(dir, "recon.bin"));
  AttackResult r;
  r.config = ConfigFromJson(j.at("config"));
  size_t offset = 0;
  auto take = [&](Shape shape) {
    const auto n = static_cast<size_t>(NumElements(shape));
    if (offset + n > blob.size()) throw std::runtime_error(dir + ": reconstruction blob too short");
    Tensor t(std::move(shape), std::vector<double>(blob.begin() + long(offset), blob.begin() + long(offset + n)));
    offset += n;
    return t;
  };
  r.recon_obs = take(j.at("obs_shape").get<Shape>());
  r.recon_tar = take(j.at("tar_shape").get<Shape>());
  for (const auto& s : j.at("mask_shapes")) r.masks.push_back(take(s.get<Shape>()));
  r.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  r.distance_trace = j.at("distance_trace").get<std::vector<double>>();
  r.wall_time = j.at("wall_time").get<double>();
  r.best_step = j.at("best_step").get<int>();
  r.best_loss = j.at("best_loss").get<double>();
  r.status = j.at("status").get<std::string>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
  return r;
}

}  // namespace tsinv::attack
