#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ruleminer/data_io.hpp"
#include "ruleminer/random.hpp"

using namespace ruleminer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_fixture(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
  return p.string();
}

// three units x few cycles, 26 columns each
const char* kFixture =
    "1 1 0.1 0.2 0.3 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21\n"
    "1 2 0.1 0.2 0.3 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21 22\n"
    "1 3 0.1 0.2 0.3 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21 22 23\n"
    "2 1 0.4 0.5 0.6 9 8 7 6 5 4 3 2 1 0 1 2 3 4 5 6 7 8 9 10 11\n"
    "2 2 0.4 0.5 0.6 8 7 6 5 4 3 2 1 0 1 2 3 4 5 6 7 8 9 10 11 12\n";

}  // namespace

TEST_CASE("cmapss fixture parses exactly and round trips") {
  TempDir dir("rm_cmapss_fixture");
  const std::string path = write_fixture(dir.path / "fd.txt", kFixture);

  const auto units = parse_cmapss(path);
  REQUIRE(units.size() == 2);
  REQUIRE(units[0].size() == 3);
  REQUIRE(units[1].size() == 2);
  CHECK(units[0][0].unit_id == 1);
  CHECK(units[0][0].cycle == 1);
  CHECK(units[0][0].op_settings[0] == doctest::Approx(0.1));
  CHECK(units[0][0].sensors[0] == doctest::Approx(1.0));
  CHECK(units[0][2].sensors[20] == doctest::Approx(23.0));
  CHECK(units[1][1].sensors[0] == doctest::Approx(8.0));

  // parse -> serialize -> parse is the identity
  const std::string again = (dir.path / "fd2.txt").string();
  write_cmapss(again, units);
  const auto units2 = parse_cmapss(again);
  REQUIRE(units2.size() == units.size());
  for (size_t u = 0; u < units.size(); ++u) {
    REQUIRE(units2[u].size() == units[u].size());
    for (size_t i = 0; i < units[u].size(); ++i) {
      CHECK(units2[u][i].unit_id == units[u][i].unit_id);
      CHECK(units2[u][i].cycle == units[u][i].cycle);
      for (int s = 0; s < 21; ++s)
        CHECK(units2[u][i].sensors[static_cast<size_t>(s)] ==
              units[u][i].sensors[static_cast<size_t>(s)]);
    }
  }
}

TEST_CASE("cmapss parse errors carry line numbers") {
  TempDir dir("rm_cmapss_errors");

  const std::string short_line = write_fixture(
      dir.path / "short.txt",
      "1 1 0.1 0.2 0.3 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21\n"
      "1 2 0.1 0.2 0.3 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20\n");
  try {
    parse_cmapss(short_line);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("25") != std::string::npos);
  }

  const std::string bad_field = write_fixture(
      dir.path / "alpha.txt",
      "1 1 0.1 0.2 xyz 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21\n");
  try {
    parse_cmapss(bad_field);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    CHECK(std::string(e.what()).find("xyz") != std::string::npos);
  }

  const std::string gap = write_fixture(
      dir.path / "gap.txt",
      "1 1 0.1 0.2 0.3 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21\n"
      "1 3 0.1 0.2 0.3 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21\n");
  CHECK_THROWS_AS(parse_cmapss(gap), InputError);

  CHECK_THROWS_AS(parse_cmapss((dir.path / "missing.txt").string()), IoError);
}

TEST_CASE("windowing: rul of the final window is zero") {
  TempDir dir("rm_windowing");
  std::string body;
  for (int c = 1; c <= 12; ++c) {
    body += "1 " + std::to_string(c) + " 0 0 0";
    for (int s = 0; s < 21; ++s) body += " " + std::to_string(s + c);
    body += "\n";
  }
  const std::string path = write_fixture(dir.path / "unit.txt", body);
  WindowingConfig wc;
  wc.T = 4;
  wc.stride = 4;
  const auto windows = make_windows(parse_cmapss(path), wc);
  REQUIRE(windows.size() == 3);
  CHECK(windows[0].rul == doctest::Approx(8.0));
  CHECK(windows[1].rul == doctest::Approx(4.0));
  CHECK(windows[2].rul == doctest::Approx(0.0));
  CHECK(windows[0].timestamps.front() == doctest::Approx(1.0));
  CHECK(windows[2].timestamps.back() == doctest::Approx(12.0));
}

TEST_CASE("extract_features: constant, ramp, sinusoid oracles") {
  const int T = 32;
  Matrix sensors(T, 3);
  for (int t = 0; t < T; ++t) {
    sensors(t, 0) = 5.0;                        // constant
    sensors(t, 1) = 2.0 + 0.37 * t;             // exact ramp
    sensors(t, 2) = std::cos(2.0 * M_PI * 4.0 * t / T);  // exact-bin sinusoid
  }
  const Matrix f = extract_features(sensors);
  REQUIRE(f.cols() == 9);
  // first three steps have no prefix of length >= 4
  CHECK(f.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(f.row(2).cwiseAbs().maxCoeff() == 0.0);

  // constant: trend 0, anomaly 0, periodicity 0 at every step
  for (int t = 3; t < T; ++t) {
    CHECK(f(t, 0) == doctest::Approx(0.0));
    CHECK(f(t, 1) == doctest::Approx(0.0));
    CHECK(f(t, 2) == doctest::Approx(0.0));
  }
  // ramp: slope exact over every prefix
  for (int t = 3; t < T; ++t)
    CHECK(f(t, 3) == doctest::Approx(0.37).epsilon(1e-9));
  // sinusoid at an exact bin: dominant-bin energy fraction >= 0.99 over the
  // full window
  CHECK(f(T - 1, 8) >= 0.99);

  // any phase keeps the dominant bin clearly on top
  for (double phase : {0.3, 1.1, 2.0, 4.5}) {
    Matrix s(T, 1);
    for (int t = 0; t < T; ++t)
      s(t, 0) = std::sin(2.0 * M_PI * 4.0 * t / T + phase);
    CHECK(extract_features(s)(T - 1, 2) >= 0.9);
  }

  CHECK_THROWS_AS(extract_features(Matrix::Zero(3, 2)), InputError);
}

TEST_CASE("extract_features covariances: translation and rescaling") {
  Rng rng(1);
  const int T = 16;
  Matrix a = rng.gaussian_matrix(T, 1);
  Matrix shifted = a;
  shifted.array() += 100.0;
  Matrix scaled = 3.0 * a;

  const Matrix fa = extract_features(a);
  const Matrix fs = extract_features(shifted);
  const Matrix fc = extract_features(scaled);
  for (int t = 3; t < T; ++t) {
    CHECK(fa(t, 0) == doctest::Approx(fs(t, 0)).epsilon(1e-9));  // slope
    CHECK(fa(t, 1) == doctest::Approx(fc(t, 1)).epsilon(1e-9));  // max |z|
  }
}

TEST_CASE("normalization: self-stats, constants, held-out transform") {
  Rng rng(2);
  std::vector<WindowedSample> train;
  for (int i = 0; i < 30; ++i) {
    WindowedSample w;
    w.sensors = rng.gaussian_matrix(8, 2);
    w.sensors.col(1).setConstant(3.0);  // zero-variance sensor
    w.timestamps = {1, 2, 3, 4, 5, 6, 7, 8};
    train.push_back(std::move(w));
  }
  build_features(train);
  const NormStats stats = fit_feature_norm(train);
  apply_feature_norm(train, stats);

  // training data itself: mean 0, std 1 per non-degenerate feature
  const auto d = train.front().features.cols();
  for (Eigen::Index f = 0; f < d; ++f) {
    double mean = 0.0, meansq = 0.0;
    long n = 0;
    for (const auto& w : train) {
      for (Eigen::Index t = 0; t < w.features.rows(); ++t) {
        mean += w.features(t, f);
        meansq += w.features(t, f) * w.features(t, f);
        ++n;
      }
    }
    mean /= static_cast<double>(n);
    meansq /= static_cast<double>(n);
    if (stats.zero_variance[static_cast<size_t>(f)]) {
      CHECK(std::abs(mean) < 1e-12);
      CHECK(meansq < 1e-12);  // constants collapse to zero
    } else {
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(meansq - 1.0) < 1e-9);
    }
  }

  // held-out data: same transform, means generally nonzero
  std::vector<WindowedSample> held;
  for (int i = 0; i < 10; ++i) {
    WindowedSample w;
    w.sensors = rng.gaussian_matrix(8, 2);
    w.sensors.col(0).array() += 2.0;
    w.sensors.col(1).setConstant(3.0);
    w.timestamps = {1, 2, 3, 4, 5, 6, 7, 8};
    held.push_back(std::move(w));
  }
  build_features(held);
  apply_feature_norm(held, stats);
  double held_mean = 0.0;
  long n = 0;
  for (const auto& w : held)
    for (Eigen::Index t = 0; t < w.features.rows(); ++t) {
      held_mean += w.features(t, 0);
      ++n;
    }
  held_mean /= static_cast<double>(n);
  CHECK(std::abs(held_mean) > 0.5);
}

TEST_CASE("equal-frequency bands split mass evenly") {
  Rng rng(3);
  std::vector<double> ruls;
  for (int i = 0; i < 1000; ++i) ruls.push_back(125.0 * rng.uniform());
  const BandEdges be = equal_frequency_bands(ruls, 4);
  std::vector<long> counts(4, 0);
  for (double r : ruls) counts[static_cast<size_t>(be.band_of(r))]++;
  for (long c : counts) CHECK(std::abs(c - 250) <= 25);
}

TEST_CASE("synth generator: determinism") {
  SynthConfig cfg;
  cfg.seed = 123;
  cfg.rules = 3;
  cfg.windows = 200;
  cfg.sensors = 8;
  const SynthDataset a = synth_planted_rules(cfg);
  const SynthDataset b = synth_planted_rules(cfg);
  REQUIRE(a.windows.size() == b.windows.size());
  for (size_t i = 0; i < a.windows.size(); ++i) {
    CHECK(a.windows[i].rul == b.windows[i].rul);
    for (Eigen::Index j = 0; j < a.windows[i].sensors.size(); ++j)
      CHECK(a.windows[i].sensors.data()[j] == b.windows[i].sensors.data()[j]);
  }
  REQUIRE(a.planted.size() == b.planted.size());
  for (size_t r = 0; r < a.planted.size(); ++r)
    CHECK(a.planted[r].antecedent == b.planted[r].antecedent);
}

TEST_CASE("synth generator: measured support matches injection rates") {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.rules = 5;
  cfg.windows = 1000;
  cfg.sensors = 12;
  cfg.injection_rates = {0.30, 0.20, 0.15, 0.10, 0.08};
  const SynthDataset ds = synth_planted_rules(cfg);
  const FeatureStats stats = compute_sensor_stats(ds.windows);

  for (size_t r = 0; r < ds.planted.size(); ++r) {
    long covered = 0;
    for (const auto& w : ds.windows)
      if (antecedent_holds(ds.planted[r].antecedent, w, stats, cfg.mining))
        ++covered;
    const double measured =
        static_cast<double>(covered) / static_cast<double>(ds.windows.size());
    CHECK(measured ==
          doctest::Approx(cfg.injection_rates[r]).epsilon(0.07));
    CHECK(std::abs(measured - cfg.injection_rates[r]) <= 0.02);

    // noiseless consequents: every covered window is in the planted band
    for (const auto& w : ds.windows)
      if (antecedent_holds(ds.planted[r].antecedent, w, stats, cfg.mining))
        CHECK(ds.bands.band_of(w.rul) == ds.planted[r].consequent);
  }
}

TEST_CASE("synth generator: engineered coverage overlap") {
  SynthConfig cfg;
  cfg.seed = 11;
  cfg.rules = 3;
  cfg.windows = 1500;
  cfg.sensors = 8;
  cfg.injection_rates = {0.15, 0.15, 0.10};
  cfg.overlaps = {{0, 1, 0.93}};
  const SynthDataset ds = synth_planted_rules(cfg);
  const FeatureStats stats = compute_sensor_stats(ds.windows);

  std::vector<int> cov_a, cov_b;
  for (size_t i = 0; i < ds.windows.size(); ++i) {
    if (antecedent_holds(ds.planted[0].antecedent, ds.windows[i], stats,
                         cfg.mining))
      cov_a.push_back(static_cast<int>(i));
    if (antecedent_holds(ds.planted[1].antecedent, ds.windows[i], stats,
                         cfg.mining))
      cov_b.push_back(static_cast<int>(i));
  }
  std::vector<int> inter;
  std::set_intersection(cov_a.begin(), cov_a.end(), cov_b.begin(), cov_b.end(),
                        std::back_inserter(inter));
  const double jaccard =
      static_cast<double>(inter.size()) /
      static_cast<double>(cov_a.size() + cov_b.size() - inter.size());
  CHECK(std::abs(jaccard - 0.93) <= 0.02);
  // overlapping rules share a consequent band
  CHECK(ds.planted[0].consequent == ds.planted[1].consequent);
}

TEST_CASE("synth generator: config validation") {
  SynthConfig cfg;
  cfg.rules = 0;
  CHECK_THROWS_AS(synth_planted_rules(cfg), ConfigError);
  cfg.rules = 3;
  cfg.windows = 50;
  CHECK_THROWS_AS(synth_planted_rules(cfg), ConfigError);
  cfg.windows = 200;
  cfg.sensors = 2;  // not enough channels for 3 rules (needs 1+2+1)
  CHECK_THROWS_AS(synth_planted_rules(cfg), ConfigError);
  cfg.sensors = 8;
  cfg.injection_rates = {0.5, 0.5, 0.2};  // sums past 1
  CHECK_THROWS_AS(synth_planted_rules(cfg), ConfigError);
}

TEST_CASE("dataset save/load round trip with sidecar") {
  TempDir dir("rm_dataset_roundtrip");
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.rules = 2;
  cfg.windows = 150;
  cfg.sensors = 6;
  const SynthDataset ds = synth_planted_rules(cfg);
  save_dataset(ds, dir.path.string());

  WindowingConfig wc;
  const LoadedDataset loaded = load_dataset(dir.path.string(), wc);
  REQUIRE(loaded.windows.size() == ds.windows.size());
  REQUIRE(loaded.planted.has_value());
  REQUIRE(loaded.bands.has_value());
  CHECK(loaded.bands->edges == ds.bands.edges);
  REQUIRE(loaded.planted->size() == ds.planted.size());
  for (size_t r = 0; r < ds.planted.size(); ++r) {
    CHECK((*loaded.planted)[r].antecedent == ds.planted[r].antecedent);
    CHECK((*loaded.planted)[r].consequent == ds.planted[r].consequent);
  }
  for (size_t i = 0; i < ds.windows.size(); ++i) {
    CHECK(loaded.windows[i].rul == ds.windows[i].rul);
    for (Eigen::Index j = 0; j < ds.windows[i].sensors.size(); ++j)
      CHECK(loaded.windows[i].sensors.data()[j] ==
            ds.windows[i].sensors.data()[j]);
  }
}
