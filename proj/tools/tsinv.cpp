// Command-line surface: data preparation, model setup, gradient capture,
// learned components, attacks, evaluation, grids and plots.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsinv/attacks.hpp"
#include "tsinv/data.hpp"
#include "tsinv/eval.hpp"
#include "tsinv/federation.hpp"
#include "tsinv/inversion.hpp"
#include "tsinv/io.hpp"
#include "tsinv/models.hpp"

using namespace tsinv;

namespace {

std::vector<double> ParseLevels(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) out.push_back(std::stod(item));
  return out;
}

void RequireModelMatch(const Checkpoint& ckpt, const fed::ObservedGradient& capture) {
  if (capture.model_ref != ckpt.model_ref) {
    throw std::invalid_argument("capture was taken on model " + capture.model_ref + ", checkpoint is " + ckpt.model_ref);
  }
}

struct DataArgs {
  std::string input, out, value_column, time_column, name = "series";
  bool synthetic = false;
  int h = 96, f = 96, step_attack = 96, step_aux = 1;
  uint64_t synth_seed = 7;
  int length = 4000, period = 96;
  double slope = 0.0002, noise = 0.03;
};

struct LearnArgs {
  std::string aux, model, out, defense = "none", quantiles = "0.1,0.3,0.7,0.9";
  int epochs = 75, batch = 1, captures = 512, minibatch = 32;
  std::vector<int> hidden{768, 512};
  double noise_std = 0.1, prune_ratio = 0.9, lr = 1e-3;
  uint64_t seed = 0;
};

void AddLearnOptions(CLI::App* cmd, LearnArgs& a) {
  cmd->add_option("--aux", a.aux, "prepared data directory")->required();
  cmd->add_option("--model", a.model, "model checkpoint")->required();
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--epochs", a.epochs)->capture_default_str();
  cmd->add_option("--batch-size", a.batch, "batch size of the captures the net will invert")->capture_default_str();
  cmd->add_option("--captures", a.captures, "training captures drawn from the aux set")->capture_default_str();
  cmd->add_option("--hidden", a.hidden, "residual block widths")->capture_default_str();
  cmd->add_option("--minibatch", a.minibatch)->capture_default_str();
  cmd->add_option("--lr", a.lr)->capture_default_str();
  cmd->add_option("--defense", a.defense)->check(CLI::IsMember({"none", "gauss", "prune", "sign"}))->capture_default_str();
  cmd->add_option("--noise-std", a.noise_std)->capture_default_str();
  cmd->add_option("--prune-ratio", a.prune_ratio)->capture_default_str();
  cmd->add_option("--seed", a.seed)->capture_default_str();
}

inv::InvNetSpec LearnSpec(const LearnArgs& a, const Checkpoint& ckpt) {
  inv::InvNetSpec s;
  s.input_dim = ckpt.params.total_size();
  s.obs_len = ckpt.spec.obs_len;
  s.horizon = ckpt.spec.horizon;
  s.target_batch = a.batch;
  s.levels = ParseLevels(a.quantiles);
  s.hidden = a.hidden;
  s.epochs = a.epochs;
  s.minibatch = a.minibatch;
  s.learning_rate = a.lr;
  s.train_captures = a.captures;
  return s;
}

fed::DefenseSpec LearnDefense(const LearnArgs& a) {
  fed::DefenseSpec d;
  d.kind = fed::ParseDefense(a.defense);
  d.noise_std = a.noise_std;
  d.prune_ratio = a.prune_ratio;
  d.seed = a.seed;
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient inversion attacks on federated time-series forecasting"};
  app.require_subcommand(1);
  // --h and --f name window lengths, so help is long-form only.
  app.set_help_flag("--help", "print help and exit");

  // data prepare
  DataArgs da;
  auto* data_cmd = app.add_subcommand("data", "dataset preparation")->require_subcommand(1);
  auto* prepare = data_cmd->add_subcommand("prepare", "normalize, window and split a series");
  auto* input_opt = prepare->add_option("--input", da.input, "CSV file");
  auto* synth_flag = prepare->add_flag("--synthetic", da.synthetic, "generate a periodic synthetic series");
  input_opt->excludes(synth_flag);
  prepare->add_option("--value-column", da.value_column);
  prepare->add_option("--time-column", da.time_column);
  prepare->add_option("--name", da.name)->capture_default_str();
  prepare->add_option("--h", da.h)->capture_default_str();
  prepare->add_option("--f", da.f)->capture_default_str();
  prepare->add_option("--step-attack", da.step_attack)->capture_default_str();
  prepare->add_option("--step-aux", da.step_aux)->capture_default_str();
  prepare->add_option("--synth-seed", da.synth_seed)->capture_default_str();
  prepare->add_option("--length", da.length)->capture_default_str();
  prepare->add_option("--period", da.period)->capture_default_str();
  prepare->add_option("--slope", da.slope)->capture_default_str();
  prepare->add_option("--noise", da.noise)->capture_default_str();
  prepare->add_option("--out", da.out)->required();

  // model init
  std::string arch = "fcn", model_out;
  ModelSpec ms;
  auto* model_cmd = app.add_subcommand("model", "forecasting models")->require_subcommand(1);
  auto* init = model_cmd->add_subcommand("init", "initialize and checkpoint a model");
  init->add_option("--arch", arch)->check(CLI::IsMember({"fcn", "cnn", "tcn", "gru2fcn", "gru2gru"}))->required();
  init->add_option("--h", ms.obs_len)->capture_default_str();
  init->add_option("--f", ms.horizon)->capture_default_str();
  init->add_option("--hidden", ms.hidden)->capture_default_str();
  init->add_option("--seed", ms.init_seed)->capture_default_str();
  init->add_option("--out", model_out)->required();

  // capture
  std::string cap_model, cap_data, cap_out, cap_defense = "none";
  int cap_batch = 1;
  double cap_noise = 0.1, cap_prune = 0.9;
  uint64_t cap_seed = 0;
  auto* capture = app.add_subcommand("capture", "client gradient of one batch, optionally defended");
  capture->add_option("--model", cap_model)->required();
  capture->add_option("--data", cap_data)->required();
  capture->add_option("--batch-size", cap_batch)->capture_default_str();
  capture->add_option("--defense", cap_defense)->check(CLI::IsMember({"none", "gauss", "prune", "sign"}))->capture_default_str();
  capture->add_option("--noise-std", cap_noise)->capture_default_str();
  capture->add_option("--prune-ratio", cap_prune)->capture_default_str();
  capture->add_option("--seed", cap_seed)->capture_default_str();
  capture->add_option("--out", cap_out)->required();

  // finv train / lti train
  LearnArgs finv_args, lti_args;
  lti_args.epochs = 250;
  auto* finv_cmd = app.add_subcommand("finv", "quantile-bound inversion net")->require_subcommand(1);
  auto* finv_train = finv_cmd->add_subcommand("train", "train on auxiliary captures");
  AddLearnOptions(finv_train, finv_args);
  finv_train->add_option("--quantiles", finv_args.quantiles)->capture_default_str();
  auto* lti_cmd = app.add_subcommand("lti", "learning-to-invert baseline")->require_subcommand(1);
  auto* lti_train = lti_cmd->add_subcommand("train", "train on auxiliary captures");
  AddLearnOptions(lti_train, lti_args);

  // attack
  std::string atk_capture, atk_model, atk_method, atk_out, atk_bounds, atk_lti;
  int atk_steps = 5000;
  uint64_t atk_seed = 0;
  double lp = -1, lt = -1, lq_obs = -1, lq_tar = -1, ltv_obs = -1, ltv_tar = -1;
  int period = 0;
  auto* attack_cmd = app.add_subcommand("attack", "reconstruct a batch from a capture");
  attack_cmd->add_option("--capture", atk_capture)->required();
  attack_cmd->add_option("--model", atk_model, "checkpoint the capture was taken on")->required();
  attack_cmd->add_option("--method", atk_method)
      ->check(CLI::IsMember({"dlg-lbfgs", "dlg-adam", "invg", "dia", "lti", "ts-inverse", "ts-inverse-oneshot"}))
      ->required();
  attack_cmd->add_option("--steps", atk_steps)->capture_default_str();
  attack_cmd->add_option("--lp", lp, "periodicity weight");
  attack_cmd->add_option("--lt", lt, "trend weight");
  attack_cmd->add_option("--lq-obs", lq_obs, "observation quantile-bound weight");
  attack_cmd->add_option("--lq-tar", lq_tar, "target quantile-bound weight");
  attack_cmd->add_option("--ltv-obs", ltv_obs, "observation total-variation weight");
  attack_cmd->add_option("--ltv-tar", ltv_tar, "target total-variation weight");
  attack_cmd->add_option("--period", period, "periodicity lag in steps");
  attack_cmd->add_option("--bounds", atk_bounds, "trained quantile-bound net");
  attack_cmd->add_option("--lti-net", atk_lti, "trained learning-to-invert net (method lti)");
  attack_cmd->add_option("--seed", atk_seed)->capture_default_str();
  attack_cmd->add_option("--out", atk_out)->required();

  // eval
  std::string ev_result, ev_capture, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "score a reconstruction against the captured truth");
  eval_cmd->add_option("--result", ev_result)->required();
  eval_cmd->add_option("--capture", ev_capture)->required();
  eval_cmd->add_option("--out", ev_out)->required();

  // grid run
  std::string grid_config;
  auto* grid_cmd = app.add_subcommand("grid", "experiment grids")->require_subcommand(1);
  auto* grid_run = grid_cmd->add_subcommand("run", "run or resume a grid");
  grid_run->add_option("--config", grid_config)->required();

  // plot
  std::string pl_result, pl_capture, pl_out, pl_bounds;
  auto* plot_cmd = app.add_subcommand("plot", "SVG line plots per sample");
  plot_cmd->add_option("--result", pl_result)->required();
  plot_cmd->add_option("--capture", pl_capture, "capture holding the ground truth")->required();
  plot_cmd->add_option("--bounds", pl_bounds, "quantile-bound net to draw as bands");
  plot_cmd->add_option("--out", pl_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      if (!da.synthetic && da.input.empty()) throw std::invalid_argument("pass --input <csv> or --synthetic");
      data::RawSeries raw;
      if (da.synthetic) {
        raw = data::SynthSeries(da.synth_seed, da.length, da.period, da.slope, da.noise);
      } else {
        raw = data::ReadCsv(da.input, {da.value_column, da.time_column});
      }
      raw.name = da.name;
      data::WindowingSpec w{da.h, da.f, da.step_attack, da.step_aux};
      auto prepared = data::Prepare(raw, w);
      data::SavePrepared(da.out, prepared);
      std::printf("attack pool %zu windows, aux %zu windows -> %s\n", prepared.attack_pool.size(), prepared.aux.size(),
                  da.out.c_str());
    } else if (init->parsed()) {
      ms.architecture = ParseArchitecture(arch);
      auto model = BuildModel(ms);
      auto params = InitParams(*model, ms.init_seed);
      SaveCheckpoint(model_out, ms, params);
      std::printf("%s: %lld parameters, ref %s\n", arch.c_str(), static_cast<long long>(params.total_size()),
                  ModelRef(ms, params).c_str());
    } else if (capture->parsed()) {
      auto ckpt = LoadCheckpoint(cap_model);
      auto model = BuildModel(ckpt.spec);
      auto prepared = data::LoadPrepared(cap_data);
      auto batch = data::SampleBatch(prepared.attack_pool, cap_batch, cap_seed);
      auto c = fed::ClientGradient(*model, ckpt.params, data::StackObs(batch), data::StackTar(batch), cap_seed);
      fed::DefenseSpec d;
      d.kind = fed::ParseDefense(cap_defense);
      d.noise_std = cap_noise;
      d.prune_ratio = cap_prune;
      d.seed = cap_seed;
      if (d.kind != fed::DefenseKind::kNone) c.observed = fed::ApplyDefense(c.observed, d);
      fed::SaveCapture(cap_out, c);
      std::printf("captured B=%d, defense %s -> %s\n", cap_batch, cap_defense.c_str(), cap_out.c_str());
    } else if (finv_train->parsed() || lti_train->parsed()) {
      const bool finv = finv_train->parsed();
      const LearnArgs& a = finv ? finv_args : lti_args;
      auto ckpt = LoadCheckpoint(a.model);
      auto model = BuildModel(ckpt.spec);
      auto prepared = data::LoadPrepared(a.aux);
      const auto spec = LearnSpec(a, ckpt);
      std::vector<double> losses;
      if (finv) {
        auto net = inv::TrainFinv(prepared.aux, *model, ckpt.params, spec, LearnDefense(a), a.seed);
        inv::SaveInvNet(a.out, net);
        losses = net.log.epoch_loss;
      } else {
        auto net = inv::TrainLti(prepared.aux, *model, ckpt.params, spec, LearnDefense(a), a.seed);
        inv::SaveLtiNet(a.out, net);
        losses = net.log.epoch_loss;
      }
      if (!losses.empty()) std::printf("loss %.6g -> %.6g over %zu epochs\n", losses.front(), losses.back(), losses.size());
    } else if (attack_cmd->parsed()) {
      auto ckpt = LoadCheckpoint(atk_model);
      auto model = BuildModel(ckpt.spec);
      auto observed = fed::LoadObserved(atk_capture);
      RequireModelMatch(ckpt, observed);
      attack::AttackResult result;
      if (atk_method == "lti") {
        if (atk_lti.empty()) throw std::invalid_argument("method lti needs --lti-net");
        result = inv::LtiReconstruct(inv::LoadLtiNet(atk_lti), observed);
      } else {
        auto c = attack::MethodConfig(atk_method, ckpt.spec.architecture);
        c.steps = atk_steps;
        c.seed = atk_seed;
        c.period = period > 0 ? period : ckpt.spec.obs_len;
        if (lp >= 0) c.periodicity = lp;
        if (lt >= 0) c.trend = lt;
        if (ltv_obs >= 0) c.tv_obs = ltv_obs;
        if (ltv_tar >= 0) c.tv_tar = ltv_tar;
        if (!atk_bounds.empty()) {
          c.bounds = inv::PredictBounds(inv::LoadInvNet(atk_bounds), observed);
          c.bounds_obs = lq_obs >= 0 ? lq_obs : 1.0;
          c.bounds_tar = lq_tar >= 0 ? lq_tar : 0.1;
        } else if (lq_obs > 0 || lq_tar > 0) {
          throw std::invalid_argument("quantile-bound weights need --bounds");
        }
        result = attack::RunAttack(observed, *model, ckpt.params, c);
      }
      attack::SaveResult(atk_out, result);
      std::printf("%s: status %s, best loss %.6g at step %d, %.1fs\n", atk_method.c_str(), result.status.c_str(),
                  result.best_loss, result.best_step, result.wall_time);
    } else if (eval_cmd->parsed()) {
      auto result = attack::LoadResult(ev_result);
      auto truth = fed::LoadTruth(ev_capture);
      auto report = eval::MatchBatch(result.recon_obs, result.recon_tar, truth.obs, truth.tar);
      auto j = eval::ReportToJson(report);
      io::WriteJson(ev_out, j);
      std::printf("sMAPE obs %.6g tar %.6g (identity obs %.6g tar %.6g)\n", report.mean.smape_obs,
                  report.mean.smape_tar, report.identity.smape_obs, report.identity.smape_tar);
    } else if (grid_run->parsed()) {
      auto grid = eval::GridFromJson(io::ReadJson(grid_config));
      if (grid.out_dir.empty()) grid.out_dir = std::filesystem::absolute(grid_config).parent_path().string();
      auto summary = eval::RunGrid(grid);
      std::printf("%d runs executed, %zu rows -> %s/results.csv\n", summary.executed, summary.rows.size(),
                  grid.out_dir.c_str());
      for (const auto& r : summary.rows) {
        std::printf("%-40s obs %.4g (%.2g)  tar %.4g (%.2g)  failures %d\n", r.cell.Key().c_str(), r.smape_obs_mean,
                    r.smape_obs_std, r.smape_tar_mean, r.smape_tar_std, r.failures);
      }
    } else if (plot_cmd->parsed()) {
      auto result = attack::LoadResult(pl_result);
      auto truth = fed::LoadTruth(pl_capture);
      std::optional<attack::QuantileBounds> bounds;
      if (!pl_bounds.empty()) bounds = inv::PredictBounds(inv::LoadInvNet(pl_bounds), fed::LoadObserved(pl_capture));
      auto files = eval::EmitPlots(pl_out, "recon", result.recon_obs, result.recon_tar, truth.obs, truth.tar, bounds);
      for (const auto& f : files) std::printf("%s\n", f.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
