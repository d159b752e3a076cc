#include "tsinv/models.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "tsinv/io.hpp"

namespace tsinv {

using ad::Var;

namespace {

constexpr int kMaxTcnLevels = 12;
constexpr double kConvStd = 0.02;
constexpr int kCnnKernel = 5;
constexpr int64_t kCnnChannels1 = 16;
constexpr int64_t kCnnChannels2 = 32;

// x: (B, in), w: (out, in), b: (out) -> (B, out)
Var Linear(const Var& x, const Var& w, const Var& b) { return ad::Add(ad::MatMul(x, w, false, true), b); }

// Standard GRU cell (reset/update/candidate), PyTorch gate order r, z, n.
// input_proj: x_t W_ih^T + b_ih, already computed, (B, 3h).
Var GruStep(const Var& input_proj, const Var& h, const Var& w_hh, const Var& b_hh, int64_t hidden) {
  Var hp = Linear(h, w_hh, b_hh);
  Var r = ad::Sigmoid(ad::Slice(input_proj, 1, 0, hidden) + ad::Slice(hp, 1, 0, hidden));
  Var z = ad::Sigmoid(ad::Slice(input_proj, 1, hidden, hidden) + ad::Slice(hp, 1, hidden, hidden));
  Var n = ad::Tanh(ad::Slice(input_proj, 1, 2 * hidden, hidden) + r * ad::Slice(hp, 1, 2 * hidden, hidden));
  return n + z * (h - n);
}

// Runs a GRU over (B, T, 1) and returns the final hidden state (B, hidden).
Var GruEncode(const Var& seq, std::span<const Var> p, size_t first, int64_t hidden) {
  const int64_t batch = seq.shape()[0], steps = seq.shape()[1];
  const Var& w_ih = p[first];
  const Var& w_hh = p[first + 1];
  const Var& b_ih = p[first + 2];
  const Var& b_hh = p[first + 3];
  Var proj = Linear(ad::Reshape(seq, {batch * steps, 1}), w_ih, b_ih);
  proj = ad::Reshape(proj, {batch, steps, 3 * hidden});
  Var h = Var::Constant(Tensor({batch, hidden}, 0.0));
  for (int64_t t = 0; t < steps; ++t) {
    Var xt = ad::Reshape(ad::Slice(proj, 1, t, 1), {batch, 3 * hidden});
    h = GruStep(xt, h, w_hh, b_hh, hidden);
  }
  return h;
}

class FcnModel : public ForecastModel {
 public:
  explicit FcnModel(ModelSpec spec) : ForecastModel(std::move(spec)) {
    const int64_t h = spec_.obs_len, f = spec_.horizon, w = spec_.hidden;
    AddParam("fc1.weight", {w, h}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(h)));
    AddParam("fc1.bias", {w}, InitKind::kZero);
    AddParam("fc2.weight", {w, w}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(w)));
    AddParam("fc2.bias", {w}, InitKind::kZero);
    AddParam("head.weight", {f, w}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(w)));
    AddParam("head.bias", {f}, InitKind::kZero);
  }
  std::optional<HeadInfo> FcHead() const override { return HeadInfo{4, 5}; }

 protected:
  Var ForwardImpl(std::span<const Var> p, const Var& obs, const MaskSet*) const override {
    const int64_t batch = obs.shape()[0];
    Var x = ad::Reshape(obs, {batch, spec_.obs_len});
    x = ad::Sigmoid(Linear(x, p[0], p[1]));
    x = ad::Sigmoid(Linear(x, p[2], p[3]));
    return Linear(x, p[4], p[5]);
  }
};

// LeNet-style: two conv/sigmoid/max-pool stages, then an FC head.
class CnnModel : public ForecastModel {
 public:
  explicit CnnModel(ModelSpec spec) : ForecastModel(std::move(spec)) {
    pooled_ = spec_.obs_len / 2 / 2;
    if (pooled_ < 1) throw std::invalid_argument("CNN needs obs_len >= 4");
    AddParam("conv1.weight", {kCnnChannels1, 1, kCnnKernel}, InitKind::kConvNormal, kConvStd);
    AddParam("conv1.bias", {kCnnChannels1}, InitKind::kZero);
    AddParam("conv2.weight", {kCnnChannels2, kCnnChannels1, kCnnKernel}, InitKind::kConvNormal, kConvStd);
    AddParam("conv2.bias", {kCnnChannels2}, InitKind::kZero);
    const int64_t flat = kCnnChannels2 * pooled_;
    AddParam("head.weight", {spec_.horizon, flat}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(flat)));
    AddParam("head.bias", {spec_.horizon}, InitKind::kZero);
  }
  std::optional<HeadInfo> FcHead() const override { return HeadInfo{4, 5}; }

 protected:
  Var ForwardImpl(std::span<const Var> p, const Var& obs, const MaskSet*) const override {
    const int64_t batch = obs.shape()[0];
    constexpr int pad = kCnnKernel / 2;
    Var x = ad::Reshape(obs, {batch, 1, spec_.obs_len});
    x = ad::MaxPool1d(ad::Sigmoid(ad::Conv1d(x, p[0], p[1], 1, pad, pad)), 2);
    x = ad::MaxPool1d(ad::Sigmoid(ad::Conv1d(x, p[2], p[3], 1, pad, pad)), 2);
    x = ad::Reshape(x, {batch, kCnnChannels2 * pooled_});
    return Linear(x, p[4], p[5]);
  }

 private:
  int64_t pooled_ = 0;
};

// Residual blocks of two causal dilated convolutions, each followed by ReLU
// and a dropout mask. The head reads the features of the last timestep.
class TcnModel : public ForecastModel {
 public:
  explicit TcnModel(ModelSpec spec) : ForecastModel(std::move(spec)) {
    levels_ = TcnLevels(spec_.obs_len, spec_.tcn_kernel, spec_.tcn_dilation_base);
    const int64_t w = spec_.hidden, k = spec_.tcn_kernel;
    for (int i = 0; i < levels_; ++i) {
      const int64_t in = i == 0 ? spec_.features : w;
      const std::string prefix = "block" + std::to_string(i) + ".";
      Block block;
      block.first = layout_.size();
      AddParam(prefix + "conv1.weight", {w, in, k}, InitKind::kConvNormal, kConvStd);
      AddParam(prefix + "conv1.bias", {w}, InitKind::kZero);
      AddParam(prefix + "conv2.weight", {w, w, k}, InitKind::kConvNormal, kConvStd);
      AddParam(prefix + "conv2.bias", {w}, InitKind::kZero);
      if (in != w) {
        block.downsample = true;
        AddParam(prefix + "downsample.weight", {w, in, 1}, InitKind::kConvNormal, kConvStd);
        AddParam(prefix + "downsample.bias", {w}, InitKind::kZero);
      }
      block.dilation = static_cast<int>(std::lround(std::pow(spec_.tcn_dilation_base, i)));
      blocks_.push_back(block);
    }
    head_ = {layout_.size(), layout_.size() + 1};
    AddParam("head.weight", {spec_.horizon, w}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(w)));
    AddParam("head.bias", {spec_.horizon}, InitKind::kZero);
  }

  std::vector<Shape> MaskShapes(int64_t batch) const override {
    return std::vector<Shape>(2 * blocks_.size(), Shape{batch, spec_.hidden, spec_.obs_len});
  }
  std::optional<HeadInfo> FcHead() const override { return head_; }

  Var Features(std::span<const Var> p, const Var& obs, const MaskSet& masks) const {
    const int k = spec_.tcn_kernel;
    Var x = ad::Permute(obs, {0, 2, 1});  // (B, 1, H)
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const Block& b = blocks_[i];
      const int pad = (k - 1) * b.dilation;
      Var h = ad::Relu(ad::Conv1d(x, p[b.first], p[b.first + 1], b.dilation, pad, 0));
      h = h * masks[2 * i];
      h = ad::Relu(ad::Conv1d(h, p[b.first + 2], p[b.first + 3], b.dilation, pad, 0));
      h = h * masks[2 * i + 1];
      Var residual = b.downsample ? ad::Conv1d(x, p[b.first + 4], p[b.first + 5], 1, 0, 0) : x;
      x = ad::Relu(h + residual);
    }
    return x;
  }

 protected:
  Var ForwardImpl(std::span<const Var> p, const Var& obs, const MaskSet* masks) const override {
    const int64_t batch = obs.shape()[0];
    Var x = Features(p, obs, *masks);
    Var last = ad::Reshape(ad::Slice(x, 2, spec_.obs_len - 1, 1), {batch, spec_.hidden});
    return Linear(last, p[head_.weight_index], p[head_.bias_index]);
  }

 private:
  struct Block {
    size_t first = 0;
    bool downsample = false;
    int dilation = 1;
  };
  int levels_ = 0;
  std::vector<Block> blocks_;
  HeadInfo head_{0, 0};
};

void AddGruParams(std::vector<ParamInfo>& layout, const std::string& prefix, int64_t in, int64_t hidden) {
  const double bound = 1.0 / std::sqrt(double(hidden));
  layout.push_back({prefix + "weight_ih", {3 * hidden, in}, InitKind::kUniformFanIn, bound});
  layout.push_back({prefix + "weight_hh", {3 * hidden, hidden}, InitKind::kUniformFanIn, bound});
  layout.push_back({prefix + "bias_ih", {3 * hidden}, InitKind::kZero, 0.0});
  layout.push_back({prefix + "bias_hh", {3 * hidden}, InitKind::kZero, 0.0});
}

class Gru2FcnModel : public ForecastModel {
 public:
  explicit Gru2FcnModel(ModelSpec spec) : ForecastModel(std::move(spec)) {
    const int64_t w = spec_.hidden;
    AddGruParams(layout_, "enc.", spec_.features, w);
    AddParam("head.weight", {spec_.horizon, w}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(w)));
    AddParam("head.bias", {spec_.horizon}, InitKind::kZero);
  }
  std::optional<HeadInfo> FcHead() const override { return HeadInfo{4, 5}; }

 protected:
  Var ForwardImpl(std::span<const Var> p, const Var& obs, const MaskSet*) const override {
    Var h = GruEncode(obs, p, 0, spec_.hidden);
    return Linear(h, p[4], p[5]);
  }
};

// Encoder GRU, then a decoder GRU seeded with the encoder state that feeds
// back its own previous output; the first decoder input is the last observation.
class Gru2GruModel : public ForecastModel {
 public:
  explicit Gru2GruModel(ModelSpec spec) : ForecastModel(std::move(spec)) {
    const int64_t w = spec_.hidden;
    AddGruParams(layout_, "enc.", spec_.features, w);
    AddGruParams(layout_, "dec.", spec_.features, w);
    AddParam("out.weight", {1, w}, InitKind::kUniformFanIn, 1.0 / std::sqrt(double(w)));
    AddParam("out.bias", {1}, InitKind::kZero);
  }

 protected:
  Var ForwardImpl(std::span<const Var> p, const Var& obs, const MaskSet*) const override {
    const int64_t batch = obs.shape()[0], hidden = spec_.hidden;
    Var h = GruEncode(obs, p, 0, hidden);
    Var input = ad::Reshape(ad::Slice(obs, 1, spec_.obs_len - 1, 1), {batch, 1});
    std::vector<Var> outputs;
    for (int t = 0; t < spec_.horizon; ++t) {
      h = GruStep(Linear(input, p[4], p[6]), h, p[5], p[7], hidden);
      input = Linear(h, p[8], p[9]);
      outputs.push_back(input);
    }
    return ad::Concat(outputs, 1);
  }
};

}  // namespace

std::string ArchitectureName(Architecture arch) {
  switch (arch) {
    case Architecture::kFcn: return "fcn";
    case Architecture::kCnn: return "cnn";
    case Architecture::kTcn: return "tcn";
    case Architecture::kGru2Fcn: return "gru2fcn";
    case Architecture::kGru2Gru: return "gru2gru";
  }
  return "unknown";
}

Architecture ParseArchitecture(std::string_view name) {
  for (auto a : {Architecture::kFcn, Architecture::kCnn, Architecture::kTcn, Architecture::kGru2Fcn,
                 Architecture::kGru2Gru}) {
    if (ArchitectureName(a) == name) return a;
  }
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

void ModelSpec::Validate() const {
  if (obs_len < 1 || horizon < 1) throw std::invalid_argument("H and F must be >= 1");
  if (features != 1) throw std::invalid_argument("only univariate series (d == 1) are supported");
  if (hidden < 1) throw std::invalid_argument("hidden width must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (architecture == Architecture::kTcn) {
    if (tcn_kernel < 2 || tcn_dilation_base < 1) throw std::invalid_argument("invalid TCN kernel/dilation");
    TcnLevels(obs_len, tcn_kernel, tcn_dilation_base);
  }
}

bool operator==(const ModelSpec& a, const ModelSpec& b) {
  return a.architecture == b.architecture && a.obs_len == b.obs_len && a.horizon == b.horizon &&
         a.features == b.features && a.hidden == b.hidden && a.tcn_kernel == b.tcn_kernel &&
         a.tcn_dilation_base == b.tcn_dilation_base && a.dropout_rate == b.dropout_rate &&
         a.init_seed == b.init_seed;
}

int64_t TcnReceptiveField(int levels, int kernel, int dilation_base) {
  int64_t sum = 0, d = 1;
  for (int i = 0; i < levels; ++i) {
    sum += d;
    d *= dilation_base;
  }
  return 1 + static_cast<int64_t>(kernel - 1) * sum;
}

int TcnLevels(int obs_len, int kernel, int dilation_base) {
  for (int levels = 1; levels <= kMaxTcnLevels; ++levels) {
    if (TcnReceptiveField(levels, kernel, dilation_base) >= obs_len) return levels;
  }
  throw std::invalid_argument("TCN receptive field cannot cover H=" + std::to_string(obs_len) + " with <= " +
                              std::to_string(kMaxTcnLevels) + " levels");
}

ParamVector::ParamVector(std::vector<std::string> names, std::vector<Tensor> tensors)
    : names_(std::move(names)), tensors_(std::move(tensors)) {
  if (names_.size() != tensors_.size()) throw std::invalid_argument("ParamVector names/tensors length mismatch");
}

int64_t ParamVector::total_size() const {
  int64_t n = 0;
  for (const auto& t : tensors_) n += static_cast<int64_t>(t.size());
  return n;
}

std::optional<size_t> ParamVector::IndexOf(std::string_view name) const {
  for (size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::vector<double> ParamVector::Flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(total_size()));
  for (const auto& t : tensors_) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

ParamVector ParamVector::Unflatten(const ParamVector& like, std::span<const double> flat) {
  if (static_cast<int64_t>(flat.size()) != like.total_size()) {
    throw ShapeError("flat vector of length " + std::to_string(flat.size()) + " does not match parameter count " +
                     std::to_string(like.total_size()));
  }
  std::vector<Tensor> tensors;
  size_t offset = 0;
  for (const auto& t : like.tensors_) {
    tensors.emplace_back(t.shape(), std::vector<double>(flat.begin() + offset, flat.begin() + offset + t.size()));
    offset += t.size();
  }
  return ParamVector(like.names_, std::move(tensors));
}

std::vector<Var> ParamVector::AsLeaves() const {
  std::vector<Var> vars;
  for (const auto& t : tensors_) vars.push_back(Var::Leaf(t));
  return vars;
}

std::vector<Var> ParamVector::AsConstants() const {
  std::vector<Var> vars;
  for (const auto& t : tensors_) vars.push_back(Var::Constant(t));
  return vars;
}

int64_t ForecastModel::ParameterCount() const {
  int64_t n = 0;
  for (const auto& p : layout_) n += NumElements(p.shape);
  return n;
}

void ForecastModel::AddParam(std::string name, Shape shape, InitKind init, double bound) {
  layout_.push_back({std::move(name), std::move(shape), init, bound});
}

Var ForecastModel::Forward(std::span<const Var> params, const Var& obs, const MaskSet* masks) const {
  if (params.size() != layout_.size()) {
    throw ShapeError("expected " + std::to_string(layout_.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != layout_[i].shape) {
      throw ShapeError("parameter " + layout_[i].name + " has shape " + ShapeString(params[i].shape()) +
                       ", expected " + ShapeString(layout_[i].shape));
    }
  }
  if (obs.value().rank() != 3 || obs.shape()[1] != spec_.obs_len || obs.shape()[2] != spec_.features) {
    throw ShapeError("observation batch must be (B, " + std::to_string(spec_.obs_len) + ", 1), got " +
                     ShapeString(obs.shape()));
  }
  const int64_t batch = obs.shape()[0];
  auto shapes = MaskShapes(batch);
  if (!shapes.empty()) {
    if (masks == nullptr) throw std::invalid_argument(ArchitectureName(spec_.architecture) + " requires dropout masks");
    if (masks->size() != shapes.size()) throw ShapeError("wrong number of dropout masks");
    for (size_t i = 0; i < shapes.size(); ++i) {
      if ((*masks)[i].shape() != shapes[i]) throw ShapeError("dropout mask has shape " + ShapeString((*masks)[i].shape()));
    }
  }
  Var out = ForwardImpl(params, obs, masks);
  return ad::Reshape(out, {batch, spec_.horizon, spec_.features});
}

std::unique_ptr<ForecastModel> BuildModel(const ModelSpec& spec) {
  spec.Validate();
  switch (spec.architecture) {
    case Architecture::kFcn: return std::make_unique<FcnModel>(spec);
    case Architecture::kCnn: return std::make_unique<CnnModel>(spec);
    case Architecture::kTcn: return std::make_unique<TcnModel>(spec);
    case Architecture::kGru2Fcn: return std::make_unique<Gru2FcnModel>(spec);
    case Architecture::kGru2Gru: return std::make_unique<Gru2GruModel>(spec);
  }
  throw std::invalid_argument("unknown architecture");
}

ParamVector InitParams(const ForecastModel& model, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  for (const auto& info : model.layout()) {
    Tensor t(info.shape, 0.0);
    if (info.init == InitKind::kConvNormal) {
      std::normal_distribution<double> dist(0.0, info.bound);
      for (double& v : t.data()) v = dist(rng);
    } else if (info.init == InitKind::kUniformFanIn) {
      std::uniform_real_distribution<double> dist(-info.bound, info.bound);
      for (double& v : t.data()) v = dist(rng);
    }
    names.push_back(info.name);
    tensors.push_back(std::move(t));
  }
  return ParamVector(std::move(names), std::move(tensors));
}

Var MseLoss(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: prediction " + ShapeString(pred.shape()) + " vs target " + ShapeString(target.shape()));
  }
  return ad::Mean(ad::Square(pred - target));
}

MaskSet SampleDropoutMasks(const ForecastModel& model, int64_t batch, uint64_t seed) {
  const double rate = model.spec().dropout_rate;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  MaskSet masks;
  for (const Shape& s : model.MaskShapes(batch)) {
    Tensor t(s);
    for (double& v : t.data()) v = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    masks.push_back(Var::Constant(std::move(t)));
  }
  return masks;
}

MaskSet OnesMasks(const ForecastModel& model, int64_t batch) {
  MaskSet masks;
  for (const Shape& s : model.MaskShapes(batch)) masks.push_back(Var::Constant(Tensor(s, 1.0)));
  return masks;
}

Var TcnFeatures(const ForecastModel& model, std::span<const Var> params, const Var& obs, const MaskSet& masks) {
  const auto* tcn = dynamic_cast<const TcnModel*>(&model);
  if (tcn == nullptr) throw std::invalid_argument("TcnFeatures on a non-TCN model");
  return tcn->Features(params, obs, masks);
}

nlohmann::json ModelSpecToJson(const ModelSpec& s) {
  return {{"architecture", ArchitectureName(s.architecture)},
          {"H", s.obs_len},
          {"F", s.horizon},
          {"d", s.features},
          {"hidden", s.hidden},
          {"tcn_kernel", s.tcn_kernel},
          {"tcn_dilation_base", s.tcn_dilation_base},
          {"dropout_rate", s.dropout_rate},
          {"init_seed", s.init_seed}};
}

ModelSpec ModelSpecFromJson(const nlohmann::json& j) {
  ModelSpec s;
  s.architecture = ParseArchitecture(j.at("architecture").get<std::string>());
  s.obs_len = j.at("H").get<int>();
  s.horizon = j.at("F").get<int>();
  s.features = j.value("d", 1);
  s.hidden = j.at("hidden").get<int>();
  s.tcn_kernel = j.value("tcn_kernel", 6);
  s.tcn_dilation_base = j.value("tcn_dilation_base", 2);
  s.dropout_rate = j.value("dropout_rate", 0.2);
  s.init_seed = j.value("init_seed", uint64_t{10});
  return s;
}

std::string ModelRef(const ModelSpec& spec, const ParamVector& params) {
  const std::string text = ModelSpecToJson(spec).dump();
  uint64_t h = io::Fnv1a(text.data(), text.size());
  const auto flat = params.Flatten();
  h = io::Fnv1a(flat.data(), flat.size() * sizeof(double), h);
  return io::Hex64(h);
}

void SaveCheckpoint(const std::string& dir, const ModelSpec& spec, const ParamVector& params) {
  io::EnsureDir(dir);
  nlohmann::json names = nlohmann::json::array();
  for (size_t i = 0; i < params.count(); ++i) names.push_back(params.name(i));
  nlohmann::json j = {{"spec", ModelSpecToJson(spec)},
                      {"model_ref", ModelRef(spec, params)},
                      {"param_count", params.total_size()},
                      {"layout", names}};
  io::WriteJson(io::Join(dir, "model.json"), j);
  io::WriteF64(io::Join(dir, "params.bin"), params.Flatten());
}

Checkpoint LoadCheckpoint(const std::string& dir) {
  auto j = io::ReadJson(io::Join(dir, "model.json"));
  Checkpoint ckpt;
  ckpt.spec = ModelSpecFromJson(j.at("spec"));
  auto model = BuildModel(ckpt.spec);
  auto flat = io::ReadF64(io::Join(dir, "params.bin"));
  ckpt.params = ParamVector::Unflatten(InitParams(*model, 0), flat);
  ckpt.model_ref = ModelRef(ckpt.spec, ckpt.params);
  if (j.contains("model_ref") && j["model_ref"].get<std::string>() != ckpt.model_ref) {
    throw std::runtime_error("checkpoint " + dir + " failed its integrity check");
  }
  return ckpt;
}

}  // namespace tsinv
