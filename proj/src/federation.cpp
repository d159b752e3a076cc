#include "tsinv/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tsinv/io.hpp"

namespace tsinv::fed {
namespace {

nlohmann::json LayoutJson(const ParamVector& p) {
  auto j = nlohmann::json::array();
  for (size_t i = 0; i < p.count(); ++i) j.push_back({{"name", p.name(i)}, {"shape", p[i].shape()}});
  return j;
}

ParamVector ParamsFromBlob(const nlohmann::json& layout, const std::vector<double>& blob) {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  size_t offset = 0;
  for (const auto& entry : layout) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto n = static_cast<size_t>(NumElements(shape));
    if (offset + n > blob.size()) throw std::runtime_error("gradient blob shorter than its layout");
    names.push_back(entry.at("name").get<std::string>());
    tensors.emplace_back(std::move(shape), std::vector<double>(blob.begin() + long(offset), blob.begin() + long(offset + n)));
    offset += n;
  }
  if (offset != blob.size()) throw std::runtime_error("gradient blob longer than its layout");
  return ParamVector(std::move(names), std::move(tensors));
}

std::vector<double> Concat(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

}  // namespace

std::string DefenseName(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kGauss: return "gauss";
    case DefenseKind::kPrune: return "prune";
    case DefenseKind::kSign: return "sign";
  }
  return "?";
}

DefenseKind ParseDefense(std::string_view name) {
  for (auto k : {DefenseKind::kNone, DefenseKind::kGauss, DefenseKind::kPrune, DefenseKind::kSign}) {
    if (DefenseName(k) == name) return k;
  }
  throw std::invalid_argument("unknown defense '" + std::string(name) + "'");
}

void DefenseSpec::Validate() const {
  if (kind == DefenseKind::kGauss && !(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
  if (kind == DefenseKind::kPrune && !(prune_ratio >= 0.0 && prune_ratio < 1.0)) {
    throw std::invalid_argument("prune_ratio must lie in [0, 1)");
  }
}

nlohmann::json DefenseToJson(const DefenseSpec& spec) {
  nlohmann::json j{{"kind", DefenseName(spec.kind)}};
  if (spec.kind == DefenseKind::kGauss) {
    j["noise_std"] = spec.noise_std;
    j["seed"] = spec.seed;
  }
  if (spec.kind == DefenseKind::kPrune) j["prune_ratio"] = spec.prune_ratio;
  return j;
}

DefenseSpec DefenseFromJson(const nlohmann::json& j) {
  DefenseSpec spec;
  spec.kind = ParseDefense(j.at("kind").get<std::string>());
  if (spec.kind == DefenseKind::kGauss) {
    spec.noise_std = j.at("noise_std").get<double>();
    spec.seed = j.value("seed", uint64_t{0});
  }
  if (spec.kind == DefenseKind::kPrune) spec.prune_ratio = j.at("prune_ratio").get<double>();
  spec.Validate();
  return spec;
}

GradientCapture ClientGradient(const ForecastModel& model, const ParamVector& params, const Tensor& obs,
                               const Tensor& tar, uint64_t dropout_seed) {
  for (const Tensor* t : {&obs, &tar}) {
    for (double v : t->data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("client batch values must lie in [0, 1]");
    }
  }
  const int64_t batch = obs.dim(0);
  MaskSet masks = model.HasDropout() ? SampleDropoutMasks(model, batch, dropout_seed) : MaskSet{};

  auto leaves = params.AsLeaves();
  ad::Var loss = MseLoss(model.Forward(leaves, ad::Var::Constant(obs), &masks), ad::Var::Constant(tar));
  if (!std::isfinite(loss.value().item())) throw NumericError("client loss is not finite");
  auto grads = ad::Grad(loss, leaves);

  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  for (size_t i = 0; i < params.count(); ++i) {
    names.push_back(params.name(i));
    tensors.push_back(grads[i].value());
  }

  GradientCapture capture;
  capture.observed.grads = ParamVector(std::move(names), std::move(tensors));
  capture.observed.model_ref = ModelRef(model.spec(), params);
  capture.observed.batch_size = static_cast<int>(batch);
  capture.observed.seed = dropout_seed;
  CaptureTruth truth{obs, tar, {}};
  for (const auto& m : masks) truth.masks.push_back(m.value());
  capture.truth = std::move(truth);
  return capture;
}

std::vector<double> PruneSmallest(std::span<const double> values, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("prune ratio must lie in [0, 1)");
  std::vector<double> out(values.begin(), values.end());
  const auto drop = static_cast<size_t>(std::floor(ratio * double(values.size()) + 1e-9));
  std::vector<size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return std::fabs(values[a]) < std::fabs(values[b]); });
  for (size_t i = 0; i < drop; ++i) out[order[i]] = 0.0;
  return out;
}

std::vector<double> SignCompress(std::span<const double> values) {
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = double((values[i] > 0) - (values[i] < 0));
  return out;
}

ObservedGradient ApplyDefense(const ObservedGradient& observed, const DefenseSpec& spec) {
  spec.Validate();
  if (observed.defense.kind != DefenseKind::kNone) throw std::invalid_argument("capture already carries a defense");
  ObservedGradient out = observed;
  out.defense = spec;
  std::vector<double> flat = observed.grads.Flatten();
  switch (spec.kind) {
    case DefenseKind::kNone: break;
    case DefenseKind::kGauss: {
      if (spec.noise_std == 0.0) break;
      std::mt19937_64 rng(spec.seed);
      std::normal_distribution<double> noise(0.0, spec.noise_std);
      for (double& v : flat) v += noise(rng);
      break;
    }
    case DefenseKind::kPrune: flat = PruneSmallest(flat, spec.prune_ratio); break;
    case DefenseKind::kSign: flat = SignCompress(flat); break;
  }
  out.grads = ParamVector::Unflatten(observed.grads, flat);
  return out;
}

ParamVector AggregateRound(const ParamVector& params, std::span<const ObservedGradient> captures, double alpha,
                           const std::string& model_ref) {
  if (captures.empty()) throw std::invalid_argument("no captures to aggregate");
  std::vector<double> mean(static_cast<size_t>(params.total_size()), 0.0);
  for (const auto& c : captures) {
    if (c.model_ref != model_ref) throw std::invalid_argument("capture from model " + c.model_ref + ", expected " + model_ref);
    const auto g = c.grads.Flatten();
    if (g.size() != mean.size()) throw ShapeError("capture gradient size does not match parameters");
    for (size_t i = 0; i < g.size(); ++i) mean[i] += g[i];
  }
  auto flat = params.Flatten();
  const double k = static_cast<double>(captures.size());
  for (size_t i = 0; i < flat.size(); ++i) flat[i] -= alpha * (mean[i] / k);
  return ParamVector::Unflatten(params, flat);
}

void SaveCapture(const std::string& dir, const GradientCapture& capture) {
  io::EnsureDir(dir);
  const auto& o = capture.observed;
  nlohmann::json j{{"model_ref", o.model_ref},
                   {"batch_size", o.batch_size},
                   {"defense", DefenseToJson(o.defense)},
                   {"seed", o.seed},
                   {"layout", LayoutJson(o.grads)}};
  io::WriteJson(io::Join(dir, "capture.json"), j);
  io::WriteF64(io::Join(dir, "grads.bin"), o.grads.Flatten());
  if (capture.truth) {
    const std::string truth_dir = io::Join(dir, "truth");
    io::EnsureDir(truth_dir);
    const auto& t = *capture.truth;
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& m : t.masks) masks.push_back(m.shape());
    io::WriteJson(io::Join(truth_dir, "truth.json"),
                  {{"obs_shape", t.obs.shape()}, {"tar_shape", t.tar.shape()}, {"mask_shapes", masks}});
    std::vector<double> blob = t.obs.vec();
    blob.insert(blob.end(), t.tar.data().begin(), t.tar.data().end());
    const auto mask_blob = Concat(t.masks);
    blob.insert(blob.end(), mask_blob.begin(), mask_blob.end());
    io::WriteF64(io::Join(truth_dir, "truth.bin"), blob);
  }
}

ObservedGradient LoadObserved(const std::string& dir) {
  const auto j = io::ReadJson(io::Join(dir, "capture.json"));
  ObservedGradient o;
  o.model_ref = j.at("model_ref").get<std::string>();
  o.batch_size = j.at("batch_size").get<int>();
  o.defense = DefenseFromJson(j.at("defense"));
  o.seed = j.at("seed").get<uint64_t>();
  o.grads = ParamsFromBlob(j.at("layout"), io::ReadF64(io::Join(dir, "grads.bin")));
  return o;
}

CaptureTruth LoadTruth(const std::string& dir) {
  const std::string truth_dir = io::Join(dir, "truth");
  const auto j = io::ReadJson(io::Join(truth_dir, "truth.json"));
  const auto blob = io::ReadF64(io::Join(truth_dir, "truth.bin"));
  size_t offset = 0;
  auto take = [&](Shape shape) {
    const auto n = static_cast<size_t>(NumElements(shape));
    if (offset + n > blob.size()) throw std::runtime_error(truth_dir + ": truth blob too short");
    Tensor t(std::move(shape), std::vector<double>(blob.begin() + long(offset), blob.begin() + long(offset + n)));
    offset += n;
    return t;
  };
  CaptureTruth t;
  t.obs = take(j.at("obs_shape").get<Shape>());
  t.tar = take(j.at("tar_shape").get<Shape>());
  for (const auto& s : j.at("mask_shapes")) t.masks.push_back(take(s.get<Shape>()));
  if (offset != blob.size()) throw std::runtime_error(truth_dir + ": truth blob too long");
  return t;
}

}  // namespace tsinv::fed
