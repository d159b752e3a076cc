#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tsinv/autodiff.hpp"
#include "tsinv/tensor.hpp"

namespace tsinv {

enum class Architecture { kFcn, kCnn, kTcn, kGru2Fcn, kGru2Gru };

std::string ArchitectureName(Architecture arch);
Architecture ParseArchitecture(std::string_view name);

struct ModelSpec {
  Architecture architecture = Architecture::kFcn;
  int obs_len = 96;   // H
  int horizon = 96;   // F
  int features = 1;   // d, univariate only
  int hidden = 64;
  int tcn_kernel = 6;
  int tcn_dilation_base = 2;
  double dropout_rate = 0.2;
  uint64_t init_seed = 10;

  void Validate() const;
};

bool operator==(const ModelSpec& a, const ModelSpec& b);

// Smallest level count whose receptive field 1 + (k-1) * sum_i base^i covers
// obs_len. Throws std::invalid_argument past 12 levels.
int TcnLevels(int obs_len, int kernel, int dilation_base);
int64_t TcnReceptiveField(int levels, int kernel, int dilation_base);

enum class InitKind { kConvNormal, kUniformFanIn, kZero };

struct ParamInfo {
  std::string name;
  Shape shape;
  InitKind init = InitKind::kZero;
  double bound = 0.0;  // uniform bound or normal stddev
};

// Per-layer tensors in the model's canonical order.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<std::string> names, std::vector<Tensor> tensors);

  size_t count() const { return tensors_.size(); }
  int64_t total_size() const;
  const std::string& name(size_t i) const { return names_.at(i); }
  const Tensor& operator[](size_t i) const { return tensors_.at(i); }
  Tensor& operator[](size_t i) { return tensors_.at(i); }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::optional<size_t> IndexOf(std::string_view name) const;

  std::vector<double> Flatten() const;
  // Same layout as `like`, values taken from `flat`.
  static ParamVector Unflatten(const ParamVector& like, std::span<const double> flat);

  std::vector<ad::Var> AsLeaves() const;
  std::vector<ad::Var> AsConstants() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// One mask per dropout site, each shaped (B, hidden, H).
using MaskSet = std::vector<ad::Var>;

// Location of a fully connected output layer with bias inside the ParamVector.
struct HeadInfo {
  size_t weight_index;
  size_t bias_index;
};

class ForecastModel {
 public:
  explicit ForecastModel(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~ForecastModel() = default;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<ParamInfo>& layout() const { return layout_; }
  int64_t ParameterCount() const;

  // obs: (B, H, 1) -> prediction (B, F, 1). Masks are required iff the
  // architecture has dropout.
  ad::Var Forward(std::span<const ad::Var> params, const ad::Var& obs, const MaskSet* masks = nullptr) const;

  virtual std::vector<Shape> MaskShapes(int64_t /*batch*/) const { return {}; }
  bool HasDropout() const { return !MaskShapes(1).empty(); }
  virtual std::optional<HeadInfo> FcHead() const { return std::nullopt; }

 protected:
  virtual ad::Var ForwardImpl(std::span<const ad::Var> params, const ad::Var& obs, const MaskSet* masks) const = 0;
  void AddParam(std::string name, Shape shape, InitKind init, double bound = 0.0);

  ModelSpec spec_;
  std::vector<ParamInfo> layout_;
};

std::unique_ptr<ForecastModel> BuildModel(const ModelSpec& spec);

// normal(0, 0.02^2) conv weights, uniform(+-1/sqrt(fan_in)) FC/GRU weights, zero biases.
ParamVector InitParams(const ForecastModel& model, uint64_t seed);

// Mean over all B*F*d elements.
ad::Var MseLoss(const ad::Var& pred, const ad::Var& target);

// Inverted-dropout masks: Bernoulli(1 - rate) / (1 - rate).
MaskSet SampleDropoutMasks(const ForecastModel& model, int64_t batch, uint64_t seed);
MaskSet OnesMasks(const ForecastModel& model, int64_t batch);

// Pre-head feature map (B, hidden, H) of a TCN; exposed for causality checks.
ad::Var TcnFeatures(const ForecastModel& model, std::span<const ad::Var> params, const ad::Var& obs,
                    const MaskSet& masks);

// Checkpoint directory: model.json (spec, model_ref, count) + params.bin (raw f64).
struct Checkpoint {
  ModelSpec spec;
  ParamVector params;
  std::string model_ref;
};

nlohmann::json ModelSpecToJson(const ModelSpec& spec);
ModelSpec ModelSpecFromJson(const nlohmann::json& j);

std::string ModelRef(const ModelSpec& spec, const ParamVector& params);
void SaveCheckpoint(const std::string& dir, const ModelSpec& spec, const ParamVector& params);
Checkpoint LoadCheckpoint(const std::string& dir);

}  // namespace tsinv
