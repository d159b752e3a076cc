#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsinv/models.hpp"
#include "tsinv/tensor.hpp"

namespace tsinv::fed {

enum class DefenseKind { kNone, kGauss, kPrune, kSign };

std::string DefenseName(DefenseKind kind);
DefenseKind ParseDefense(std::string_view name);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::kNone;
  double noise_std = 0.1;    // gauss
  double prune_ratio = 0.9;  // prune
  uint64_t seed = 0;         // gauss noise stream

  void Validate() const;
};

nlohmann::json DefenseToJson(const DefenseSpec& spec);
DefenseSpec DefenseFromJson(const nlohmann::json& j);

// Everything the attacker is allowed to read.
struct ObservedGradient {
  ParamVector grads;
  std::string model_ref;
  int batch_size = 0;
  DefenseSpec defense;
  uint64_t seed = 0;
};

// The client's private batch and dropout masks; only evaluation reads this.
struct CaptureTruth {
  Tensor obs;                // (B, H, 1)
  Tensor tar;                // (B, F, 1)
  std::vector<Tensor> masks;  // empty without dropout
};

struct GradientCapture {
  ObservedGradient observed;
  std::optional<CaptureTruth> truth;
};

// Gradient of MSE(f(obs), tar) with respect to every parameter. Dropout
// masks are drawn from dropout_seed when the architecture has dropout.
GradientCapture ClientGradient(const ForecastModel& model, const ParamVector& params, const Tensor& obs,
                               const Tensor& tar, uint64_t dropout_seed);

ObservedGradient ApplyDefense(const ObservedGradient& observed, const DefenseSpec& spec);

// Entry-wise defenses over one flat vector.
std::vector<double> PruneSmallest(std::span<const double> values, double ratio);
std::vector<double> SignCompress(std::span<const double> values);

// params - alpha * mean(grads); all captures must carry model_ref.
ParamVector AggregateRound(const ParamVector& params, std::span<const ObservedGradient> captures, double alpha,
                           const std::string& model_ref);

// capture.json + grads.bin, with the truth under truth/ when present.
void SaveCapture(const std::string& dir, const GradientCapture& capture);
ObservedGradient LoadObserved(const std::string& dir);
CaptureTruth LoadTruth(const std::string& dir);

}  // namespace tsinv::fed
