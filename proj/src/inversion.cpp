#include "tsinv/inversion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tsinv/io.hpp"

namespace tsinv::inv {

using ad::Var;

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

class Adam {
 public:
  Adam(size_t n, double lr) : m_(n, 0.0), v_(n, 0.0), lr_(lr) {}

  void Step(std::vector<double>& x, const std::vector<double>& g) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (size_t i = 0; i < x.size(); ++i) {
      m_[i] = b1 * m_[i] + (1 - b1) * g[i];
      v_[i] = b2 * v_[i] + (1 - b2) * g[i] * g[i];
      x[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
  double lr_;
  int t_ = 0;
};

std::vector<double> Flat(const std::vector<Var>& grads) {
  std::vector<double> out;
  for (const auto& g : grads) out.insert(out.end(), g.value().data().begin(), g.value().data().end());
  return out;
}

// Stacks per-capture (B, T) tensors into (n, B, T) for the selected rows.
Tensor StackRows(const std::vector<Tensor>& items, std::span<const size_t> rows) {
  const Shape& s = items.at(rows[0]).shape();
  Tensor out({int64_t(rows.size()), s[0], s[1]});
  size_t k = 0;
  for (size_t r : rows) {
    for (double v : items[r].data()) out[k++] = v;
  }
  return out;
}

Tensor InputRows(const ResidualNet& net, const CaptureSet& cs, std::span<const size_t> rows) {
  std::vector<std::vector<double>> picked;
  picked.reserve(rows.size());
  for (size_t r : rows) picked.push_back(cs.grads[r]);
  return net.Standardize(picked);
}

// pred: (n, T*Q) laid out time-major; truth: (n, B, T).
Var StackedQuantileLoss(const Var& pred, const Tensor& truth, std::span<const double> levels) {
  const int64_t n = truth.dim(0), steps = truth.dim(2), q = int64_t(levels.size());
  Var p = ad::Reshape(pred, {n, steps, q});
  Var s = Var::Constant(truth);
  Var total;
  for (int64_t k = 0; k < q; ++k) {
    Var level = ad::Reshape(ad::Slice(p, 2, k, 1), {n, 1, steps});
    Var term = PinballLoss(s, level, levels[size_t(k)]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

using LossFn = std::function<Var(const std::vector<Var>& outputs, std::span<const size_t> rows)>;

std::vector<double> Fit(ResidualNet& net, const CaptureSet& cs, const InvNetSpec& spec, uint64_t seed,
                        const LossFn& loss_fn) {
  if (cs.grads.empty()) throw std::invalid_argument("no training captures");
  for (const auto& g : cs.grads) {
    if (int64_t(g.size()) != spec.input_dim) throw ShapeError("capture gradient length does not match the net input");
  }
  net.FitStandardization(cs.grads);
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  Adam adam(size_t(net.params().total_size()), spec.learning_rate);
  std::vector<size_t> order(cs.grads.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += size_t(spec.minibatch)) {
      const size_t len = std::min(size_t(spec.minibatch), order.size() - start);
      if (len < 2) continue;  // batch statistics need two rows
      std::span<const size_t> rows(order.data() + start, len);
      auto leaves = net.params().AsLeaves();
      std::vector<Tensor> stats;
      auto outputs = net.Forward(leaves, InputRows(net, cs, rows), true, rng(), &stats);
      net.UpdateRunningStats(stats);
      Var loss = loss_fn(outputs, rows);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw NumericError("inversion net training loss is not finite");
      auto flat = net.params().Flatten();
      adam.Step(flat, Flat(ad::Grad(loss, leaves)));
      net.params() = ParamVector::Unflatten(net.params(), flat);
      sum += value;
      ++batches;
    }
    history.push_back(batches ? sum / batches : 0.0);
  }
  return history;
}

nlohmann::json LogToJson(const TrainingLog& log) {
  return {{"epoch_loss", log.epoch_loss}, {"model_ref", log.model_ref}, {"defense", log.defense}, {"seed", log.seed}};
}

TrainingLog LogFromJson(const nlohmann::json& j) {
  TrainingLog log;
  log.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  log.model_ref = j.at("model_ref").get<std::string>();
  log.defense = j.at("defense");
  log.seed = j.at("seed").get<uint64_t>();
  return log;
}

void SaveNet(const std::string& dir, const char* kind, const InvNetSpec& spec, const ResidualNet& net,
             const TrainingLog& log) {
  io::EnsureDir(dir);
  io::WriteJson(io::Join(dir, "net.json"),
                {{"kind", kind}, {"spec", InvNetSpecToJson(spec)}, {"net", net.ToJson()}, {"training", LogToJson(log)}});
  io::WriteF64(io::Join(dir, "net.bin"), net.StateBlob());
}

nlohmann::json LoadNetJson(const std::string& dir, const char* kind) {
  auto j = io::ReadJson(io::Join(dir, "net.json"));
  if (j.at("kind").get<std::string>() != kind) throw std::invalid_argument(dir + " does not hold a " + kind + " net");
  return j;
}

void CheckInput(const InvNetSpec& spec, const fed::ObservedGradient& capture) {
  if (capture.grads.total_size() != spec.input_dim) throw ShapeError("capture gradient length does not match the net input");
}

}  // namespace

Var PinballLoss(const Var& truth, const Var& pred, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
  Var e = truth - pred;
  return ad::Mean(tau * e + ad::Relu(-e));
}

Var QuantileBatchLoss(const Var& batch, const Var& quantiles, std::span<const double> levels) {
  if (batch.value().rank() != 2 || quantiles.value().rank() != 2) throw ShapeError("expected (B, T) and (T, Q)");
  const int64_t steps = batch.shape()[1];
  if (quantiles.shape()[0] != steps || quantiles.shape()[1] != int64_t(levels.size())) {
    throw ShapeError("quantile sequences do not match the batch");
  }
  Var total;
  for (size_t k = 0; k < levels.size(); ++k) {
    Var level = ad::Reshape(ad::Slice(quantiles, 1, int64_t(k), 1), {1, steps});
    Var term = PinballLoss(batch, level, levels[k]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

void InvNetSpec::Validate() const {
  if (input_dim <= 0 || obs_len <= 0 || horizon <= 0) throw std::invalid_argument("net dimensions must be positive");
  if (target_batch < 1) throw std::invalid_argument("target batch must be >= 1");
  if (hidden.empty()) throw std::invalid_argument("need at least one residual block");
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (epochs < 0 || minibatch < 2 || train_captures < 2) throw std::invalid_argument("bad training schedule");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  attack::QuantileBounds probe{levels, Tensor({1, int64_t(levels.size())}), Tensor({1, int64_t(levels.size())})};
  probe.Validate();
}

nlohmann::json InvNetSpecToJson(const InvNetSpec& s) {
  return {{"input_dim", s.input_dim}, {"obs_len", s.obs_len},     {"horizon", s.horizon},
          {"target_batch", s.target_batch}, {"levels", s.levels},     {"hidden", s.hidden},
          {"dropout", s.dropout},     {"epochs", s.epochs},       {"minibatch", s.minibatch},
          {"learning_rate", s.learning_rate}, {"train_captures", s.train_captures}};
}

InvNetSpec InvNetSpecFromJson(const nlohmann::json& j) {
  InvNetSpec s;
  s.input_dim = j.at("input_dim").get<int64_t>();
  s.obs_len = j.at("obs_len").get<int>();
  s.horizon = j.at("horizon").get<int>();
  s.target_batch = j.at("target_batch").get<int>();
  s.levels = j.at("levels").get<std::vector<double>>();
  s.hidden = j.at("hidden").get<std::vector<int>>();
  s.dropout = j.at("dropout").get<double>();
  s.epochs = j.at("epochs").get<int>();
  s.minibatch = j.at("minibatch").get<int>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.train_captures = j.at("train_captures").get<int>();
  s.Validate();
  return s;
}

CaptureSet GenerateCaptures(std::span<const data::SeriesWindow> aux, const ForecastModel& model,
                            const ParamVector& params, int batch, int count, const fed::DefenseSpec& defense,
                            uint64_t seed) {
  if (aux.empty()) throw std::invalid_argument("auxiliary set is empty");
  if (batch < 1 || size_t(batch) > aux.size()) throw std::invalid_argument("batch size exceeds the auxiliary set");
  std::mt19937_64 rng(seed);
  std::vector<size_t> pool(aux.size());
  std::iota(pool.begin(), pool.end(), 0);
  CaptureSet cs;
  for (int c = 0; c < count; ++c) {
    for (int k = 0; k < batch; ++k) {
      std::uniform_int_distribution<size_t> pick(size_t(k), pool.size() - 1);
      std::swap(pool[size_t(k)], pool[pick(rng)]);
    }
    std::vector<data::SeriesWindow> windows;
    for (int k = 0; k < batch; ++k) windows.push_back(aux[pool[size_t(k)]]);
    Tensor obs = data::StackObs(windows), tar = data::StackTar(windows);
    auto capture = fed::ClientGradient(model, params, obs, tar, rng());
    if (defense.kind != fed::DefenseKind::kNone) {
      fed::DefenseSpec d = defense;
      d.seed = rng();
      capture.observed = fed::ApplyDefense(capture.observed, d);
    }
    cs.grads.push_back(capture.observed.grads.Flatten());
    cs.obs.push_back(obs.Reshaped({obs.dim(0), obs.dim(1)}));
    cs.tar.push_back(tar.Reshaped({tar.dim(0), tar.dim(1)}));
  }
  return cs;
}

ResidualNet::ResidualNet(int64_t input_dim, std::vector<int64_t> output_dims, std::vector<int> hidden, double dropout,
                         uint64_t seed)
    : input_dim_(input_dim), output_dims_(std::move(output_dims)), hidden_(std::move(hidden)), dropout_(dropout) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  auto linear = [&](const std::string& name, int64_t in, int64_t out, bool zero = false) {
    const double bound = zero ? 0.0 : 1.0 / std::sqrt(double(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({in, out});
    if (!zero) {
      for (double& v : w.data()) v = u(rng);
    }
    names.push_back(name + ".w");
    tensors.push_back(std::move(w));
    names.push_back(name + ".b");
    tensors.emplace_back(Shape{1, out});
  };
  auto norm = [&](const std::string& name, int64_t width) {
    names.push_back(name + ".g");
    tensors.emplace_back(Shape{1, width}, 1.0);
    names.push_back(name + ".b");
    tensors.emplace_back(Shape{1, width});
    running_mean_.emplace_back(Shape{1, width});
    running_var_.emplace_back(Shape{1, width}, 1.0);
  };
  for (size_t m = 0; m < output_dims_.size(); ++m) {
    int64_t in = input_dim_;
    for (size_t b = 0; b < hidden_.size(); ++b) {
      const std::string p = "m" + std::to_string(m) + ".block" + std::to_string(b);
      const int64_t h = hidden_[b];
      linear(p + ".fc1", in, h);
      norm(p + ".bn1", h);
      linear(p + ".fc2", h, h);
      norm(p + ".bn2", h);
      if (in != h) linear(p + ".skip", in, h);
      in = h;
    }
    // Zero head: an untrained net predicts a constant.
    linear("m" + std::to_string(m) + ".out", in, output_dims_[m], true);
  }
  params_ = ParamVector(std::move(names), std::move(tensors));
  center_.assign(size_t(input_dim_), 0.0);
  scale_.assign(size_t(input_dim_), 1.0);
}

void ResidualNet::FitStandardization(std::span<const std::vector<double>> inputs) {
  const double n = double(inputs.size());
  for (int64_t i = 0; i < input_dim_; ++i) {
    double mean = 0.0, sq = 0.0;
    for (const auto& x : inputs) mean += x[size_t(i)];
    mean /= n;
    for (const auto& x : inputs) sq += (x[size_t(i)] - mean) * (x[size_t(i)] - mean);
    const double sd = std::sqrt(sq / n);
    center_[size_t(i)] = mean;
    scale_[size_t(i)] = sd > 1e-12 ? sd : 1.0;
  }
}

Tensor ResidualNet::Standardize(std::span<const std::vector<double>> inputs) const {
  Tensor out({int64_t(inputs.size()), input_dim_});
  size_t k = 0;
  for (const auto& x : inputs) {
    if (int64_t(x.size()) != input_dim_) throw ShapeError("input length does not match the net");
    for (size_t i = 0; i < x.size(); ++i) out[k++] = (x[i] - center_[i]) / scale_[i];
  }
  return out;
}

std::vector<Var> ResidualNet::Forward(std::span<const Var> params, const Tensor& x, bool training,
                                      uint64_t dropout_seed, std::vector<Tensor>* stats) const {
  std::mt19937_64 rng(dropout_seed);
  size_t pi = 0, site = 0;
  auto next = [&]() -> const Var& { return params[pi++]; };
  auto linear = [&](const Var& in) {
    const Var& w = next();
    const Var& b = next();
    return ad::MatMul(in, w) + b;
  };
  auto norm = [&](const Var& in) {
    const Var& gamma = next();
    const Var& beta = next();
    const Tensor& rm = running_mean_[site];
    const Tensor& rv = running_var_[site];
    ++site;
    if (!training) {
      Tensor inv_sd(rv.shape());
      for (size_t i = 0; i < rv.size(); ++i) inv_sd[i] = 1.0 / std::sqrt(rv[i] + kBnEps);
      return (in - Var::Constant(rm)) * Var::Constant(inv_sd) * gamma + beta;
    }
    const int64_t rows = in.shape()[0], width = in.shape()[1];
    Var mean = ad::SumTo(in, {1, width}) * (1.0 / double(rows));
    Var centered = in - mean;
    Var var = ad::SumTo(ad::Square(centered), {1, width}) * (1.0 / double(rows));
    if (stats) {
      Tensor unbiased = var.value();
      for (double& v : unbiased.data()) v *= double(rows) / double(rows - 1);
      stats->push_back(mean.value());
      stats->push_back(std::move(unbiased));
    }
    return centered / ad::Sqrt(var + kBnEps) * gamma + beta;
  };
  auto drop = [&](const Var& in) {
    if (!training || dropout_ == 0.0) return in;
    std::bernoulli_distribution keep(1.0 - dropout_);
    Tensor mask(in.shape());
    for (double& v : mask.data()) v = keep(rng) ? 1.0 / (1.0 - dropout_) : 0.0;
    return in * Var::Constant(std::move(mask));
  };

  const Var input = Var::Constant(x);
  std::vector<Var> outputs;
  for (size_t m = 0; m < output_dims_.size(); ++m) {
    Var h = input;
    int64_t in = input_dim_;
    for (int width : hidden_) {
      Var y = norm(linear(drop(ad::Relu(norm(linear(h))))));
      Var skip = in != width ? linear(h) : h;
      h = ad::Relu(y + skip);
      in = width;
    }
    outputs.push_back(linear(h));
  }
  return outputs;
}

std::vector<Tensor> ResidualNet::Infer(std::span<const double> input) const {
  ad::NoGradGuard off;
  std::vector<std::vector<double>> one{std::vector<double>(input.begin(), input.end())};
  auto outs = Forward(params_.AsConstants(), Standardize(one), false, 0);
  std::vector<Tensor> result;
  for (const auto& o : outs) result.push_back(o.value());
  return result;
}

void ResidualNet::UpdateRunningStats(const std::vector<Tensor>& stats) {
  if (stats.size() != 2 * running_mean_.size()) throw std::invalid_argument("batch statistics do not match the net");
  for (size_t s = 0; s < running_mean_.size(); ++s) {
    for (size_t i = 0; i < running_mean_[s].size(); ++i) {
      running_mean_[s][i] = (1 - kBnMomentum) * running_mean_[s][i] + kBnMomentum * stats[2 * s][i];
      running_var_[s][i] = (1 - kBnMomentum) * running_var_[s][i] + kBnMomentum * stats[2 * s + 1][i];
    }
  }
}

nlohmann::json ResidualNet::ToJson() const {
  nlohmann::json layout = nlohmann::json::array();
  for (size_t i = 0; i < params_.count(); ++i) layout.push_back({{"name", params_.name(i)}, {"shape", params_[i].shape()}});
  return {{"input_dim", input_dim_}, {"output_dims", output_dims_}, {"hidden", hidden_},
          {"dropout", dropout_},     {"layout", layout}};
}

std::vector<double> ResidualNet::StateBlob() const {
  std::vector<double> blob = params_.Flatten();
  for (const auto* group : {&running_mean_, &running_var_}) {
    for (const auto& t : *group) blob.insert(blob.end(), t.data().begin(), t.data().end());
  }
  blob.insert(blob.end(), center_.begin(), center_.end());
  blob.insert(blob.end(), scale_.begin(), scale_.end());
  return blob;
}

ResidualNet ResidualNet::FromJson(const nlohmann::json& j, std::span<const double> blob) {
  ResidualNet net(j.at("input_dim").get<int64_t>(), j.at("output_dims").get<std::vector<int64_t>>(),
                  j.at("hidden").get<std::vector<int>>(), j.at("dropout").get<double>(), 0);
  const auto& layout = j.at("layout");
  if (layout.size() != net.params_.count()) throw std::runtime_error("net layout does not match its dimensions");
  size_t offset = 0;
  auto fill = [&](std::span<double> dst) {
    if (offset + dst.size() > blob.size()) throw std::runtime_error("net blob too short");
    std::copy(blob.begin() + long(offset), blob.begin() + long(offset + dst.size()), dst.begin());
    offset += dst.size();
  };
  for (size_t i = 0; i < net.params_.count(); ++i) {
    if (layout[i].at("shape").get<Shape>() != net.params_[i].shape()) throw std::runtime_error("net layout mismatch");
    fill(net.params_[i].data());
  }
  for (auto* group : {&net.running_mean_, &net.running_var_}) {
    for (auto& t : *group) fill(t.data());
  }
  fill(net.center_);
  fill(net.scale_);
  if (offset != blob.size()) throw std::runtime_error("net blob too long");
  return net;
}

InvNet TrainFinvOn(const CaptureSet& captures, const InvNetSpec& spec, uint64_t seed) {
  spec.Validate();
  const auto q = int64_t(spec.levels.size());
  InvNet out{spec, ResidualNet(spec.input_dim, {spec.obs_len * q, spec.horizon * q}, spec.hidden, spec.dropout, seed),
             {}};
  out.log.seed = seed;
  out.log.epoch_loss = Fit(out.net, captures, spec, seed, [&](const std::vector<Var>& o, std::span<const size_t> rows) {
    return 0.5 * (StackedQuantileLoss(o[0], StackRows(captures.obs, rows), spec.levels) +
                  StackedQuantileLoss(o[1], StackRows(captures.tar, rows), spec.levels));
  });
  return out;
}

InvNet TrainFinv(std::span<const data::SeriesWindow> aux, const ForecastModel& model, const ParamVector& params,
                 const InvNetSpec& spec, const fed::DefenseSpec& defense, uint64_t seed) {
  spec.Validate();
  if (spec.input_dim != params.total_size()) throw ShapeError("net input size does not match the model gradient");
  auto captures = GenerateCaptures(aux, model, params, spec.target_batch, spec.train_captures, defense, seed);
  InvNet net = TrainFinvOn(captures, spec, seed);
  net.log.model_ref = ModelRef(model.spec(), params);
  net.log.defense = fed::DefenseToJson(defense);
  return net;
}

std::pair<Tensor, Tensor> PredictRawQuantiles(const InvNet& net, std::span<const double> grads) {
  const auto q = int64_t(net.spec.levels.size());
  auto outs = net.net.Infer(grads);
  return {outs[0].Reshaped({net.spec.obs_len, q}), outs[1].Reshaped({net.spec.horizon, q})};
}

attack::QuantileBounds PredictBounds(const InvNet& net, const fed::ObservedGradient& capture) {
  CheckInput(net.spec, capture);
  auto [obs, tar] = PredictRawQuantiles(net, capture.grads.Flatten());
  const auto q = size_t(net.spec.levels.size());
  for (Tensor* t : {&obs, &tar}) {
    auto d = t->data();
    for (size_t row = 0; row < size_t(t->dim(0)); ++row) std::sort(d.begin() + long(row * q), d.begin() + long((row + 1) * q));
  }
  attack::QuantileBounds b{net.spec.levels, std::move(obs), std::move(tar)};
  b.Validate();
  return b;
}

LtiNet TrainLtiOn(const CaptureSet& captures, const InvNetSpec& spec, uint64_t seed) {
  spec.Validate();
  const int64_t b = spec.target_batch;
  LtiNet out{spec, ResidualNet(spec.input_dim, {b * spec.obs_len, b * spec.horizon}, spec.hidden, spec.dropout, seed),
             {}};
  out.log.seed = seed;
  out.log.epoch_loss = Fit(out.net, captures, spec, seed, [&](const std::vector<Var>& o, std::span<const size_t> rows) {
    auto mse = [&](const Var& pred, const std::vector<Tensor>& truth) {
      Tensor t = StackRows(truth, rows);
      return ad::Mean(ad::Square(pred - Var::Constant(t.Reshaped(pred.shape()))));
    };
    return 0.5 * (mse(o[0], captures.obs) + mse(o[1], captures.tar));
  });
  return out;
}

LtiNet TrainLti(std::span<const data::SeriesWindow> aux, const ForecastModel& model, const ParamVector& params,
                const InvNetSpec& spec, const fed::DefenseSpec& defense, uint64_t seed) {
  spec.Validate();
  if (spec.input_dim != params.total_size()) throw ShapeError("net input size does not match the model gradient");
  auto captures = GenerateCaptures(aux, model, params, spec.target_batch, spec.train_captures, defense, seed);
  LtiNet net = TrainLtiOn(captures, spec, seed);
  net.log.model_ref = ModelRef(model.spec(), params);
  net.log.defense = fed::DefenseToJson(defense);
  return net;
}

attack::AttackResult LtiReconstruct(const LtiNet& net, const fed::ObservedGradient& capture) {
  CheckInput(net.spec, capture);
  if (capture.batch_size != net.spec.target_batch) throw std::invalid_argument("capture batch differs from the net's");
  const auto t0 = std::chrono::steady_clock::now();
  auto outs = net.net.Infer(capture.grads.Flatten());
  for (auto& o : outs) {
    for (double& v : o.data()) v = std::clamp(v, 0.0, 1.0);
  }
  attack::AttackResult r;
  const int64_t b = net.spec.target_batch;
  r.recon_obs = outs[0].Reshaped({b, net.spec.obs_len, 1});
  r.recon_tar = outs[1].Reshaped({b, net.spec.horizon, 1});
  r.config.steps = 0;
  r.notes.push_back("learned inversion, no optimization");
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

void SaveInvNet(const std::string& dir, const InvNet& net) { SaveNet(dir, "finv", net.spec, net.net, net.log); }

InvNet LoadInvNet(const std::string& dir) {
  auto j = LoadNetJson(dir, "finv");
  return {InvNetSpecFromJson(j.at("spec")), ResidualNet::FromJson(j.at("net"), io::ReadF64(io::Join(dir, "net.bin"))),
          LogFromJson(j.at("training"))};
}

void SaveLtiNet(const std::string& dir, const LtiNet& net) { SaveNet(dir, "lti", net.spec, net.net, net.log); }

LtiNet LoadLtiNet(const std::string& dir) {
  auto j = LoadNetJson(dir, "lti");
  return {InvNetSpecFromJson(j.at("spec")), ResidualNet::FromJson(j.at("net"), io::ReadF64(io::Join(dir, "net.bin"))),
          LogFromJson(j.at("training"))};
}

}  // namespace tsinv::inv
