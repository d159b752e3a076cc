#include "tsinv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fd_oracle.hpp"

using namespace tsinv;
using namespace tsinv::eval;
using tsinv::testing::RandomTensor;

namespace {

std::string ReadAll(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

size_t Count(const std::string& text, const std::string& needle) {
  size_t n = 0;
  for (size_t p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

Tensor Reversed(const Tensor& t) {
  const int64_t b = t.dim(0);
  const auto per = t.size() / size_t(b);
  Tensor out(t.shape());
  for (int64_t i = 0; i < b; ++i) {
    for (size_t k = 0; k < per; ++k) out[size_t(b - 1 - i) * per + k] = t[size_t(i) * per + k];
  }
  return out;
}

ExperimentGrid TinyGrid(const std::string& dir) {
  ExperimentGrid g;
  DatasetSpec d;
  d.name = "synth";
  g.datasets = {d};
  g.models = {"fcn"};
  AttackSpec a;
  a.label = a.method = "dlg-adam";
  g.attacks = {a};
  g.seeds = {10, 43};
  g.obs_len = g.horizon = 8;
  g.hidden = 4;
  g.steps = 30;
  g.out_dir = dir;
  return g;
}

}  // namespace

TEST_CASE("sMAPE examples and contracts") {
  const std::vector<double> ones(6, 1.0), zeros(6, 0.0);
  CHECK(Smape(ones, ones) == 0.0);
  CHECK(Smape(ones, zeros) == doctest::Approx(2.0));
  CHECK(Smape(std::vector<double>{1, 1}, std::vector<double>{1, 3}) == doctest::Approx(0.5));
  CHECK(Smape(zeros, zeros) == 0.0);
  CHECK(Smape(std::vector<double>{0, 1e-13}, std::vector<double>{1e-14, 0}) == 0.0);
  CHECK_THROWS_AS(Smape(ones, std::vector<double>(5, 1.0)), ShapeError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(7), b(7);
    for (double& v : a) v = u(rng);
    for (double& v : b) v = u(rng);
    const double s = Smape(a, b);
    CHECK(s >= 0.0);
    CHECK(s <= 2.0);
    CHECK(s == Smape(b, a));
    CHECK((s == 0.0) == (a == b));
  }
}

TEST_CASE("batch matching") {
  const Tensor obs = RandomTensor({1, 6, 1}, 1, 0.1, 1), tar = RandomTensor({1, 4, 1}, 2, 0.1, 1);
  const Tensor ro = RandomTensor({1, 6, 1}, 3, 0.1, 1), rt = RandomTensor({1, 4, 1}, 4, 0.1, 1);
  auto one = MatchBatch(ro, rt, obs, tar);
  CHECK(one.permutation == std::vector<int>{0});
  CHECK(one.mean.smape_obs == one.identity.smape_obs);

  const Tensor bo = RandomTensor({5, 6, 1}, 5, 0.1, 1), bt = RandomTensor({5, 4, 1}, 6, 0.1, 1);
  auto rev = MatchBatch(Reversed(bo), Reversed(bt), bo, bt);
  CHECK(rev.permutation == std::vector<int>{4, 3, 2, 1, 0});
  CHECK(rev.mean.smape_obs == 0.0);
  CHECK(rev.mean.smape_tar == 0.0);
  CHECK(rev.identity.smape_obs > 0.0);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor xo = RandomTensor({4, 6, 1}, 100 + seed, 0.1, 1), xt = RandomTensor({4, 4, 1}, 200 + seed, 0.1, 1);
    const Tensor yo = RandomTensor({4, 6, 1}, 300 + seed, 0.1, 1), yt = RandomTensor({4, 4, 1}, 400 + seed, 0.1, 1);
    auto r = MatchBatch(yo, yt, xo, xt);
    const double matched = (6 * r.mean.smape_obs + 4 * r.mean.smape_tar) / 10;
    CHECK(matched <= (6 * r.identity.smape_obs + 4 * r.identity.smape_tar) / 10 + 1e-15);
    // Brute force over all assignments with an independent cost.
    std::vector<int> p{0, 1, 2, 3};
    double best = 1e9;
    do {
      double s = 0;
      for (int b = 0; b < 4; ++b) {
        std::vector<double> t(10), q(10);
        for (int k = 0; k < 6; ++k) {
          t[size_t(k)] = xo[size_t(b * 6 + k)];
          q[size_t(k)] = yo[size_t(p[size_t(b)] * 6 + k)];
        }
        for (int k = 0; k < 4; ++k) {
          t[size_t(6 + k)] = xt[size_t(b * 4 + k)];
          q[size_t(6 + k)] = yt[size_t(p[size_t(b)] * 4 + k)];
        }
        s += Smape(t, q);
      }
      best = std::min(best, s / 4);
    } while (std::next_permutation(p.begin(), p.end()));
    CHECK(matched == doctest::Approx(best).epsilon(1e-12));
  }

  const Tensor go = RandomTensor({9, 3, 1}, 7, 0.1, 1), gt = RandomTensor({9, 2, 1}, 8, 0.1, 1);
  auto greedy = MatchBatch(Reversed(go), Reversed(gt), go, gt);
  CHECK(greedy.greedy);
  CHECK(greedy.mean.smape_obs == 0.0);
  CHECK_THROWS_AS(MatchBatch(ro, rt, bo, bt), ShapeError);
}

TEST_CASE("grid expansion and config round trip") {
  auto g = TinyGrid("unused");
  g.models = {"fcn", "cnn"};
  g.defenses = {"none", "sign"};
  g.batch_sizes = {1, 2};
  auto cells = ExpandGrid(g);
  CHECK(cells.size() == 8);
  CHECK(cells.front().Key() == "synth|fcn|dlg-adam|none|B1");
  CHECK(cells.back().Key() == "synth|cnn|dlg-adam|sign|B2");
  auto back = GridFromJson(GridToJson(g));
  CHECK(GridToJson(back) == GridToJson(g));
  auto defaults = GridFromJson({{"datasets", {"synth"}}, {"models", {"fcn"}}, {"attacks", {"ts-inverse"}}});
  CHECK(defaults.seeds == std::vector<uint64_t>{10, 43, 28, 80, 71});
  CHECK_THROWS(GridFromJson({{"datasets", {"synth"}}, {"models", {"fcn"}}, {"attacks", {"l1", "l1"}}}));
}

TEST_CASE("grid run: one row per cell, resumable, reproducible, failures recorded") {
  const auto dir = (std::filesystem::temp_directory_path() / "tsinv_grid_test").string();
  std::filesystem::remove_all(dir);
  auto g = TinyGrid(dir);
  AttackSpec broken;
  broken.label = "broken";
  broken.method = "ts-inverse";
  broken.overrides = {{"learning_rate", -1.0}};
  g.attacks.push_back(broken);
  auto first = RunGrid(g);
  REQUIRE(first.rows.size() == 2);
  CHECK(first.executed == 4);
  const auto& row = first.rows[0];
  CHECK(row.runs == 2);
  CHECK(row.failures == 0);
  auto a = RunCell(g, row.cell, 10), b = RunCell(g, row.cell, 43);
  const double mean = (a.report.mean.smape_obs + b.report.mean.smape_obs) / 2;
  CHECK(row.smape_obs_mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(row.smape_obs_std == doctest::Approx(std::fabs(a.report.mean.smape_obs - mean)).epsilon(1e-12));
  CHECK(first.rows[1].failures == 2);
  int stored = 0;
  for (const auto& run : std::filesystem::directory_iterator(dir + "/runs")) {
    CHECK(std::filesystem::exists(run.path() / "run.json"));
    if (!std::filesystem::exists(run.path() / "recon.bin")) continue;
    ++stored;
    CHECK(attack::LoadResult(run.path().string()).recon_obs.shape() == Shape{1, 8, 1});
  }
  CHECK(stored == 2);

  const std::string csv = ReadAll(dir + "/results.csv");
  auto again = RunGrid(g);
  CHECK(again.executed == 0);
  CHECK(ReadAll(dir + "/results.csv") == csv);
  CHECK(RunCell(g, row.cell, 10).report.mean.smape_obs == a.report.mean.smape_obs);
  std::filesystem::remove_all(dir);
}

TEST_CASE("plots") {
  const auto dir = (std::filesystem::temp_directory_path() / "tsinv_plot_test").string();
  std::filesystem::remove_all(dir);
  const Tensor o = RandomTensor({1, 6, 1}, 1, 0, 1), t = RandomTensor({1, 4, 1}, 2, 0, 1);
  auto files = EmitPlots(dir, "run", o, t, o, t);
  REQUIRE(files.size() == 1);
  CHECK(files[0] == dir + "/run_sample0.svg");
  const auto svg = ReadAll(files[0]);
  CHECK(Count(svg, "<polyline") == 4);
  CHECK(Count(svg, "<polygon") == 0);

  attack::QuantileBounds bounds{{0.1, 0.3, 0.7, 0.9}, Tensor({6, 4}, 0.5), Tensor({4, 4}, 0.5)};
  files = EmitPlots(dir, "banded", o, t, o, t, bounds);
  CHECK(Count(ReadAll(files[0]), "<polygon") == 2);

  CHECK(EmitPlots(dir + "/empty", "none", Tensor(), Tensor(), Tensor(), Tensor()).empty());
  CHECK_FALSE(std::filesystem::exists(dir + "/empty"));
  std::filesystem::remove_all(dir);
}
