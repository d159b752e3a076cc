#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsinv/attacks.hpp"
#include "tsinv/data.hpp"
#include "tsinv/federation.hpp"
#include "tsinv/models.hpp"

namespace tsinv::inv {

// Mean over elements of max((tau - 1)(S - S_hat), tau (S - S_hat)).
ad::Var PinballLoss(const ad::Var& truth, const ad::Var& pred, double tau);

// Quantile sequences (T, Q) scored against every row of a (B, T) batch.
ad::Var QuantileBatchLoss(const ad::Var& batch, const ad::Var& quantiles, std::span<const double> levels);

struct InvNetSpec {
  int64_t input_dim = 0;
  int obs_len = 0;
  int horizon = 0;
  int target_batch = 1;
  std::vector<double> levels{0.1, 0.3, 0.7, 0.9};
  std::vector<int> hidden{768, 512};
  double dropout = 0.1;
  int epochs = 75;
  int minibatch = 32;
  double learning_rate = 1e-3;
  int train_captures = 512;

  void Validate() const;
};

nlohmann::json InvNetSpecToJson(const InvNetSpec& s);
InvNetSpec InvNetSpecFromJson(const nlohmann::json& j);

// Training inputs: one flattened (possibly defended) gradient per capture with
// the batch that produced it.
struct CaptureSet {
  std::vector<std::vector<double>> grads;
  std::vector<Tensor> obs;  // (B, H)
  std::vector<Tensor> tar;  // (B, F)
};

// Samples `count` batches of `batch` aux windows and captures their gradients.
CaptureSet GenerateCaptures(std::span<const data::SeriesWindow> aux, const ForecastModel& model,
                            const ParamVector& params, int batch, int count, const fed::DefenseSpec& defense,
                            uint64_t seed);

// Residual MLP with one trunk per output module. Inputs are standardized per
// coordinate with constants recorded at training time.
class ResidualNet {
 public:
  ResidualNet() = default;
  ResidualNet(int64_t input_dim, std::vector<int64_t> output_dims, std::vector<int> hidden, double dropout,
              uint64_t seed);

  int64_t input_dim() const { return input_dim_; }
  const std::vector<int64_t>& output_dims() const { return output_dims_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  void FitStandardization(std::span<const std::vector<double>> inputs);
  Tensor Standardize(std::span<const std::vector<double>> inputs) const;  // (N, m)

  // One output per module, each (N, dim). Training mode uses batch statistics
  // and dropout, appending (mean, unbiased variance) per norm site to `stats`.
  std::vector<ad::Var> Forward(std::span<const ad::Var> params, const Tensor& x, bool training, uint64_t dropout_seed,
                               std::vector<Tensor>* stats = nullptr) const;
  void UpdateRunningStats(const std::vector<Tensor>& stats);
  std::vector<Tensor> Infer(std::span<const double> input) const;

  nlohmann::json ToJson() const;
  std::vector<double> StateBlob() const;  // params, running stats, standardization
  static ResidualNet FromJson(const nlohmann::json& j, std::span<const double> blob);

 private:
  int64_t input_dim_ = 0;
  std::vector<int64_t> output_dims_;
  std::vector<int> hidden_;
  double dropout_ = 0.0;
  ParamVector params_;
  std::vector<Tensor> running_mean_, running_var_;  // one pair per batch-norm site
  std::vector<double> center_, scale_;
};

struct TrainingLog {
  std::vector<double> epoch_loss;
  std::string model_ref;
  nlohmann::json defense;
  uint64_t seed = 0;
};

struct InvNet {
  InvNetSpec spec;
  ResidualNet net;
  TrainingLog log;
};

InvNet TrainFinv(std::span<const data::SeriesWindow> aux, const ForecastModel& model, const ParamVector& params,
                 const InvNetSpec& spec, const fed::DefenseSpec& defense, uint64_t seed);
// Same loop on a prepared capture set; spec.train_captures is ignored.
InvNet TrainFinvOn(const CaptureSet& captures, const InvNetSpec& spec, uint64_t seed);

// Raw quantile outputs (T, Q), not rearranged.
std::pair<Tensor, Tensor> PredictRawQuantiles(const InvNet& net, std::span<const double> grads);
// Bounds sorted per timestep, shared across the batch.
attack::QuantileBounds PredictBounds(const InvNet& net, const fed::ObservedGradient& capture);

struct LtiNet {
  InvNetSpec spec;  // levels unused
  ResidualNet net;
  TrainingLog log;
};

LtiNet TrainLti(std::span<const data::SeriesWindow> aux, const ForecastModel& model, const ParamVector& params,
                const InvNetSpec& spec, const fed::DefenseSpec& defense, uint64_t seed);
LtiNet TrainLtiOn(const CaptureSet& captures, const InvNetSpec& spec, uint64_t seed);

// Direct reconstruction (B, H, 1), (B, F, 1), clamped to [0, 1].
attack::AttackResult LtiReconstruct(const LtiNet& net, const fed::ObservedGradient& capture);

void SaveInvNet(const std::string& dir, const InvNet& net);
InvNet LoadInvNet(const std::string& dir);
void SaveLtiNet(const std::string& dir, const LtiNet& net);
LtiNet LoadLtiNet(const std::string& dir);

}  // namespace tsinv::inv
