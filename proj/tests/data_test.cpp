#include "tsinv/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fd_oracle.hpp"

using namespace tsinv;
using namespace tsinv::data;

namespace {

RawSeries Ramp(int n) {
  RawSeries s;
  for (int i = 0; i < n; ++i) s.values.push_back(double(i));
  return s;
}

std::string TempPath(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("minmax normalize") {
  RawSeries s;
  s.values = {0, 5, 10};
  NormStats stats;
  CHECK(MinmaxNormalize(s, &stats).values == std::vector<double>{0, 0.5, 1});
  CHECK(stats.min == 0.0);
  CHECK(stats.max == 10.0);

  s.values = {0, 0.25, 1, 0.5};
  CHECK(MinmaxNormalize(s, nullptr).values == s.values);

  s.values = {3, 3, 3};
  CHECK_THROWS_AS(MinmaxNormalize(s, nullptr), std::invalid_argument);
}

TEST_CASE("denormalize inverts normalize") {
  RawSeries s;
  s.values = testing::RandomVector(500, 1, -40.0, 900.0);
  NormStats stats;
  RawSeries n = MinmaxNormalize(s, &stats);
  for (double v : n.values) CHECK((v >= 0.0 && v <= 1.0));
  auto back = Denormalize(n.values, stats);
  for (size_t i = 0; i < s.values.size(); ++i) CHECK(std::fabs(back[i] - s.values[i]) <= 1e-12 * 1000);

  auto argmax = [](const std::vector<double>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
  auto argmin = [](const std::vector<double>& v) { return std::min_element(v.begin(), v.end()) - v.begin(); };
  CHECK(argmax(n.values) == argmax(s.values));
  CHECK(argmin(n.values) == argmin(s.values));
}

TEST_CASE("rolling window counts and offsets") {
  CHECK(RollingWindows(Ramp(192), 96, 96, 96).size() == 1);
  auto w = RollingWindows(Ramp(384), 96, 96, 96);
  REQUIRE(w.size() == 3);
  CHECK(w[0].origin_index == 0);
  CHECK(w[1].origin_index == 96);
  CHECK(w[2].origin_index == 192);
  CHECK_THROWS_AS(RollingWindows(Ramp(100), 96, 96, 1), std::invalid_argument);

  for (int len : {10, 37, 64}) {
    for (int step : {1, 3, 7}) {
      const auto n = RollingWindows(Ramp(len), 4, 3, step).size();
      CHECK(n == size_t((len - 7) / step + 1));
    }
  }
}

TEST_CASE("windows are exact contiguous source slices") {
  RawSeries s;
  s.values = testing::RandomVector(80, 2, 0.0, 1.0);
  for (const auto& w : RollingWindows(s, 10, 6, 3)) {
    for (int64_t i = 0; i < 10; ++i) CHECK(w.obs[size_t(i)] == s.values[size_t(w.origin_index + i)]);
    for (int64_t i = 0; i < 6; ++i) CHECK(w.tar[size_t(i)] == s.values[size_t(w.origin_index + 10 + i)]);
  }
}

TEST_CASE("windows with step equal to width tile the prefix") {
  auto w = RollingWindows(Ramp(50), 5, 3, 8);
  REQUIRE(w.size() == 6);
  for (size_t i = 0; i < w.size(); ++i) {
    CHECK(w[i].origin_index == int64_t(8 * i));
    CHECK(w[i].obs[0] == double(8 * i));
  }
}

TEST_CASE("chronological splits") {
  auto split = [](int n) { return SplitDataset(RollingWindows(Ramp(n + 1), 1, 1, 1)); };
  auto s = split(100);
  CHECK(s.train.size() == 64);
  CHECK(s.val.size() == 16);
  CHECK(s.test.size() == 20);
  s = split(5);
  CHECK(s.train.size() == 3);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 1);
  CHECK_THROWS_AS(split(4), std::invalid_argument);

  for (int n = 5; n < 60; ++n) {
    auto p = split(n);
    std::vector<int64_t> origins;
    for (const auto* part : {&p.train, &p.val, &p.test}) {
      for (const auto& w : *part) origins.push_back(w.origin_index);
    }
    REQUIRE(origins.size() == size_t(n));
    for (int i = 0; i < n; ++i) CHECK(origins[size_t(i)] == i);
  }
}

TEST_CASE("synthetic series") {
  auto a = SynthSeries(4, 200, 24, 0.001, 0.05);
  auto b = SynthSeries(4, 200, 24, 0.001, 0.05);
  CHECK(a.values == b.values);
  CHECK(a.values != SynthSeries(5, 200, 24, 0.001, 0.05).values);
  CHECK(*std::min_element(a.values.begin(), a.values.end()) == 0.0);
  CHECK(*std::max_element(a.values.begin(), a.values.end()) == 1.0);

  auto clean = SynthSeries(1, 96, 24, 0.0, 0.0);
  for (size_t t = 0; t + 24 < clean.values.size(); ++t) CHECK(std::fabs(clean.values[t] - clean.values[t + 24]) < 1e-12);
  CHECK_THROWS_AS(SynthSeries(1, 40, 24, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("csv ingestion fills gaps") {
  const auto path = TempPath("tsinv_data_test.csv");
  {
    std::ofstream out(path);
    out << "time,load\n"
        << "2020-01-01 00:00:00,1\n"
        << "2020-01-01 00:15:00,\n"
        << "2020-01-01 00:30:00,3\n"
        << "2020-01-01 01:15:00,6\n"
        << "2020-01-01 01:30:00,NA\n";
  }
  CsvOptions opts;
  opts.time_column = "time";
  auto s = ReadCsv(path, opts);
  CHECK(s.name == "load");
  CHECK(s.values == std::vector<double>{1, 2, 3, 4, 5, 6, 6});

  auto plain = ReadCsv(path);
  CHECK(plain.values == std::vector<double>{1, 2, 3, 6, 6});
  std::filesystem::remove(path);
}

TEST_CASE("prepared data round-trips through pack and manifest") {
  WindowingSpec spec;
  spec.obs_len = 8;
  spec.horizon = 4;
  spec.step_attack = 12;
  spec.step_aux = 2;
  auto raw = SynthSeries(3, 400, 24, 0.0, 0.05);
  PreparedData d = Prepare(raw, spec);
  CHECK(d.attack_pool.size() == SplitDataset(RollingWindows(raw, 8, 4, 12)).train.size());
  CHECK(d.aux.size() == SplitDataset(RollingWindows(raw, 8, 4, 2)).val.size());

  const auto dir = TempPath("tsinv_prepared_test");
  SavePrepared(dir, d);
  PreparedData back = LoadPrepared(dir);
  REQUIRE(back.attack_pool.size() == d.attack_pool.size());
  REQUIRE(back.aux.size() == d.aux.size());
  for (size_t i = 0; i < d.aux.size(); ++i) {
    CHECK(back.aux[i].obs.vec() == d.aux[i].obs.vec());
    CHECK(back.aux[i].tar.vec() == d.aux[i].tar.vec());
    CHECK(back.aux[i].origin_index == d.aux[i].origin_index);
  }
  CHECK(back.norm.max == d.norm.max);
  CHECK(StackObs(back.attack_pool).shape() == Shape{int64_t(d.attack_pool.size()), 8, 1});
  std::filesystem::remove_all(dir);
}

TEST_CASE("batch sampling draws distinct windows deterministically") {
  auto pool = RollingWindows(SynthSeries(3, 200, 24, 0.0, 0.05), 8, 4, 4);
  auto a = SampleBatch(pool, 5, 11), b = SampleBatch(pool, 5, 11);
  std::vector<int64_t> origins;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].origin_index == b[i].origin_index);
    origins.push_back(a[i].origin_index);
  }
  std::sort(origins.begin(), origins.end());
  CHECK(std::adjacent_find(origins.begin(), origins.end()) == origins.end());
  CHECK(SampleBatch(pool, int(pool.size()), 2).size() == pool.size());
  CHECK_THROWS_AS(SampleBatch(pool, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(SampleBatch(pool, int(pool.size()) + 1, 1), std::invalid_argument);
}
