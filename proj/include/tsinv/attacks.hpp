#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsinv/autodiff.hpp"
#include "tsinv/federation.hpp"
#include "tsinv/models.hpp"

namespace tsinv::attack {

enum class Distance { kL2, kCosine, kCosineTV, kL1, kCosineL1, kCosineL2 };
enum class Optimizer { kAdam, kLbfgs };
enum class Init { kUniform01, kHalfConstant };

std::string DistanceName(Distance d);
Distance ParseDistance(std::string_view name);
std::string OptimizerName(Optimizer o);
Optimizer ParseOptimizer(std::string_view name);
std::string InitName(Init i);
Init ParseInit(std::string_view name);

// Per-timestep sequences at sorted levels, shared by every batch element.
struct QuantileBounds {
  std::vector<double> levels;  // ascending, symmetric around 0.5, even count
  Tensor obs;                  // (H, Q)
  Tensor tar;                  // (F, Q)

  void Validate() const;
};

nlohmann::json BoundsToJson(const QuantileBounds& b);
QuantileBounds BoundsFromJson(const nlohmann::json& j);

struct AttackConfig {
  Distance distance = Distance::kL1;
  double tv_obs = 0.0;
  double tv_tar = 0.0;
  double periodicity = 0.0;
  int period = 96;
  double trend = 0.0;
  double bounds_obs = 0.0;
  double bounds_tar = 0.0;
  std::optional<QuantileBounds> bounds;
  int steps = 5000;
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 0.01;
  double final_learning_rate = 0.001;  // cosine decay target for Adam
  Init init = Init::kUniform01;
  bool clamp01 = true;
  uint64_t seed = 0;
  bool one_shot_targets = false;
  bool dia_masks = false;

  void Validate() const;
};

nlohmann::json ConfigToJson(const AttackConfig& c);
AttackConfig ConfigFromJson(const nlohmann::json& j);

// Named attack presets; `arch` decides whether mask co-optimization applies.
AttackConfig MethodConfig(std::string_view method, Architecture arch);
std::vector<std::string> MethodNames();

struct AttackResult {
  Tensor recon_obs;  // (B, H, 1)
  Tensor recon_tar;  // (B, F, 1)
  std::vector<double> loss_trace;
  std::vector<double> distance_trace;
  double wall_time = 0.0;
  AttackConfig config;
  int best_step = 0;
  double best_loss = 0.0;
  // "ok", "aborted: ..." (non-finite loss), or notes about fallbacks taken.
  std::string status = "ok";
  std::vector<std::string> notes;
  std::vector<Tensor> masks;  // recovered DIA masks, if optimized
};

// Gradient distances over the concatenation of all parameter gradients.
ad::Var DistanceL2(const ad::Var& dummy, const ad::Var& target);
ad::Var DistanceCosine(const ad::Var& dummy, const ad::Var& target);
ad::Var DistanceL1(const ad::Var& dummy, const ad::Var& target);
ad::Var GradientDistance(Distance d, const ad::Var& dummy, const ad::Var& target);

// Sequence regularizers on (B, T) inputs, averaged over the batch.
ad::Var TotalVariation(const ad::Var& seq);
ad::Var Periodicity(const ad::Var& seq, int period);
ad::Var Trend(const ad::Var& seq);
// bounds: (T, Q) at `levels`; pairs level q with level Q-1-q for q < Q/2.
ad::Var BoundsViolation(const ad::Var& seq, const Tensor& bounds, std::span<const double> levels);

struct OneShotRecovery {
  Tensor targets;                 // (1, F, 1)
  std::vector<double> head_input;  // recovered last-layer input
  double rank1_residual = 0.0;     // max |grad W - grad b x^T|
  size_t pivot = 0;
};

// Closed-form targets from the FC head gradients of a B=1 capture. Throws
// std::domain_error when max |grad b| <= 1e-12 or the batch is larger than 1.
OneShotRecovery OneShotTargets(const fed::ObservedGradient& capture, const ForecastModel& model,
                               const ParamVector& params);

// Test hooks: starting point and frozen masks. Never filled by attack drivers.
struct AttackStart {
  std::optional<Tensor> obs;
  std::optional<Tensor> tar;
  std::optional<std::vector<Tensor>> fixed_masks;
};

AttackResult RunAttack(const fed::ObservedGradient& capture, const ForecastModel& model, const ParamVector& params,
                       const AttackConfig& config, const AttackStart& start = {});

// Total objective at a point, for checks against finite differences.
struct Objective {
  double total = 0.0;
  double distance = 0.0;
  std::vector<double> grad_obs;
  std::vector<double> grad_tar;
};
Objective EvaluateObjective(const fed::ObservedGradient& capture, const ForecastModel& model, const ParamVector& params,
                            const AttackConfig& config, const Tensor& obs, const Tensor& tar,
                            const std::vector<Tensor>& masks = {});

// Directory with result.json and recon.bin.
void SaveResult(const std::string& dir, const AttackResult& r);
AttackResult LoadResult(const std::string& dir);

}  // namespace tsinv::attack
