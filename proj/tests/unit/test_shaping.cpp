#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "tips/shaping.hpp"

using namespace tips;

namespace {

void check_near(const std::vector<double>& got, const std::vector<double>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

TEST_CASE("info deltas") {
  check_near(info_deltas(std::vector<double>{-5, -3, -2}, 0.1), {0.2, 0.1});
  check_near(info_deltas(std::vector<double>{-4, -4, -4}, 0.3), {0, 0});
  check_near(info_deltas(std::vector<double>{-2, -4}, 1.0), {-2});
  CHECK_THROWS_AS(info_deltas(std::vector<double>{-1}, 1.0), InvalidInput);
  CHECK_THROWS_AS(info_deltas(std::vector<double>{-1, NAN}, 1.0), InvalidInput);
}

TEST_CASE("history-max deltas") {
  check_near(history_max_deltas(std::vector<double>{-5, -4, -6, -3}, 1.0), {1, 0, 1});
  const std::vector<double> up{-6, -5, -2, -1};
  check_near(history_max_deltas(up, 0.4), info_deltas(up, 0.4));
  check_near(history_max_deltas(std::vector<double>{-1, -2, -3}, 1.0), {0, 0});
}

TEST_CASE("delta sums telescope") {
  Rng rng(1);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> phi(2 + rng.below(8));
    for (double& p : phi) p = rng.uniform(-10.0, 0.0);
    const double alpha = rng.uniform(0.01, 3.0);
    double s = 0.0, h = 0.0;
    for (double d : info_deltas(phi, alpha)) s += d;
    for (double d : history_max_deltas(phi, alpha)) {
      CHECK(d >= 0.0);
      h += d;
    }
    CHECK(s == doctest::Approx(alpha * (phi.back() - phi.front())).epsilon(1e-12));
    CHECK(h == doctest::Approx(alpha * (*std::max_element(phi.begin(), phi.end()) - phi.front())).epsilon(1e-12));
  }
}

TEST_CASE("rule rewards") {
  ShapingConfig cfg;
  const std::vector<std::string> gold{"Blue Lake"};
  const std::vector<SegmentText> segs{
      {"<tool_call> q </tool_call>", "alpha blue lake beta"},
      {"<tool_call> q </tool_call>", "alpha beta"},
      {"<tool_call> q </tool_call>", "Error: blue lake"},
      {"", "blue lake"},
      {"<tool_call> q </tool_call>", std::nullopt},
  };
  check_near(rule_rewards(segs, gold, cfg), {0.25, 0.1, 0.0, 0.15, 0.0});
  cfg.kappa = 2.0;
  check_near(rule_rewards(segs, gold, cfg), {0.5, 0.2, 0.0, 0.3, 0.0});
  const SegmentText loud{"<tool_call> q </tool_call>", upper("alpha blue lake beta")};
  CHECK(rule_events(loud, gold).answer == rule_events(segs[0], gold).answer);
  CHECK(rule_events(loud, gold).exec);
}

TEST_CASE("segment rewards land on the last trainable token or spread evenly") {
  Trajectory t;
  t.tokens.assign(7, 0);
  t.logprobs_old.assign(7, 0.0);
  t.mask = {1, 1, 0, 1, 0, 0, 1};
  t.rewards.assign(7, 0.0);
  t.boundaries = {0, 3, 6, 7};
  const std::vector<double> r{0.4, 0.1};
  check_near(map_segment_rewards(t, r, RuleMapping::LastToken), {0, 0.4, 0, 0.1, 0, 0, 0});
  check_near(map_segment_rewards(t, r, RuleMapping::Distributed), {0.2, 0.2, 0, 0.1, 0, 0, 0});
}

TEST_CASE("fixed alpha calibration") {
  CHECK(calibrate_alpha_fixed(std::vector<double>{1.0, 3.0}) == doctest::Approx(0.1));
  CHECK(calibrate_alpha_fixed(std::vector<double>{10.0}) == 0.05);
  CHECK(calibrate_alpha_fixed(std::vector<double>{0.2}) == 0.3);
  CHECK(calibrate_alpha_fixed(std::vector<double>{-1.0, 3.0}) == doctest::Approx(0.1));
  CHECK_THROWS_AS(calibrate_alpha_fixed(std::vector<double>{0.0, 0.0}), CalibrationFailed);
  CHECK_THROWS_AS(calibrate_alpha_fixed(std::vector<double>{}), CalibrationFailed);
}

TEST_CASE("dynamic alpha moves toward the band") {
  AlphaControllerState st;
  observe(st, 0.4);
  CHECK(alpha_dynamic_update(st, 0.11, AlphaBand::Medium) == doctest::Approx(0.1));
  st = {};
  observe(st, 0.1);
  CHECK(alpha_dynamic_update(st, 0.1, AlphaBand::Medium) == 0.1);
  st = {};
  observe(st, 0.01);
  CHECK(alpha_dynamic_update(st, 0.1, AlphaBand::Medium) == doctest::Approx(0.11));
  observe(st, 1.01);
  CHECK(st.running_mean_abs_delta == doctest::Approx(0.99 * 0.01 + 0.01 * 1.01));
}

TEST_CASE("dynamic alpha stays bounded over 1e5 random steps and settles in band") {
  Rng rng(9);
  for (AlphaBand band : {AlphaBand::Small, AlphaBand::Medium, AlphaBand::Large}) {
    AlphaControllerState st;
    double alpha = 0.1;
    const Band b = band_range(band);
    for (int i = 0; i < 100000; ++i) {
      const double raw = rng.uniform(0.0, 4.0);
      observe(st, alpha * raw);
      alpha = alpha_dynamic_update(st, alpha, band);
      REQUIRE(alpha >= 1e-4);
      REQUIRE(alpha <= 1e2);
    }
    CHECK(st.running_mean_abs_delta >= b.lo / 1.1);
    CHECK(st.running_mean_abs_delta <= b.hi * 1.1);
  }
}

TEST_CASE("config validation and enum round trips") {
  ShapingConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  for (auto m : {ShapingMode::Info, ShapingMode::HistoryMax, ShapingMode::Rule, ShapingMode::None})
    CHECK(parse_shaping_mode(to_string(m)) == m);
  for (auto b : {AlphaBand::Small, AlphaBand::Medium, AlphaBand::Large}) CHECK(parse_alpha_band(to_string(b)) == b);
  CHECK_THROWS_AS(parse_shaping_mode("bogus"), InvalidInput);
}
