#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tips/common.hpp"
#include "tips/flops.hpp"

using namespace tips;
using namespace tips::flops;

namespace {

struct Row {
  ModelConfig cfg;
  double n_dense;
  double ppo_tflops;
  double overhead_pct;
};

// Public model-card configurations and the published reference columns.
std::vector<Row> reference_rows() {
  return {
      {{"qwen2.5-3b", 36, 2048, 11008, 16, 128, 2, 151936}, 3.397e9, 64661.474, 11.761},
      {{"qwen2.5-7b", 28, 3584, 18944, 28, 128, 4, 152064}, 7.615e9, 136219.934, 11.846},
      {{"qwen2.5-14b", 48, 5120, 13824, 40, 128, 8, 152064}, 1.477e10, 0.0, 11.810},
      {{"llama3-8b", 32, 4096, 14336, 32, 128, 8, 128256}, 8.030e9, 0.0, 11.813},
      {{"qwen3-4b", 36, 2560, 9728, 32, 128, 8, 151936}, 4.411e9, 0.0, 11.659},
  };
}

ScoringWorkload shared_workload() {
  return {256, {400.0, 1219.2, 2038.4, 2857.6, 3676.8}, 10, 2};
}

double sig4(double x) {
  const double e = std::floor(std::log10(std::abs(x)));
  return std::round(x / std::pow(10.0, e - 3)) * std::pow(10.0, e - 3);
}

// Independent evaluation of the cost model, term by term.
double oracle_total(const ModelConfig& c, const ScoringWorkload& w) {
  const double L = c.layers, h = c.hidden, I = c.intermediate, H = c.heads, d = c.head_dim, Hkv = c.kv_heads,
               V = c.vocab;
  const double nd = L * (3 * h * I + h * (H * d + Hkv * d + Hkv * d + H * d)) + 2 * V * h;
  double lmax = 0.0, ctx = 0.0;
  for (double li : w.prefix_lengths) {
    lmax = std::max(lmax, li);
    ctx += w.answer_len * li + w.answer_len * (w.answer_len - 1) / 2;
  }
  const double B = w.batch, S = static_cast<double>(w.prefix_lengths.size()), A = w.answers_per_sample;
  return 2 * nd * B * lmax + 4 * B * lmax * lmax * d * H * L + 2 * nd * B * S * A * w.answer_len +
         4 * B * A * ctx * d * H * L;
}

}  // namespace

TEST_CASE("n_dense reproduces the published model inputs to 4 significant figures") {
  for (const auto& r : reference_rows()) {
    CAPTURE(r.cfg.name);
    CHECK(sig4(n_dense(r.cfg)) == doctest::Approx(r.n_dense).epsilon(1e-12));
  }
}

TEST_CASE("all-ones config gives 9; V enters linearly") {
  ModelConfig one{"one", 1, 1, 1, 1, 1, 1, 1};
  CHECK(n_dense(one) == 9.0);
  ModelConfig c = reference_rows()[1].cfg;
  const double base = n_dense(c);
  c.vocab *= 2;
  CHECK(n_dense(c) - base == 2.0 * (c.vocab / 2) * c.hidden);
}

TEST_CASE("teacher scoring cost for the 7B model and the overhead examples") {
  const auto r = reference_rows()[1];
  const ScoringFlops f = teacher_scoring_flops(r.cfg, shared_workload());
  CHECK(f.total / 1e12 == doctest::Approx(16136.034).epsilon(0.005));
  CHECK(f.total == doctest::Approx(oracle_total(r.cfg, shared_workload())).epsilon(1e-14));
  CHECK(relative_overhead(16136.034, 136219.934) == doctest::Approx(11.846).epsilon(1e-4));
  CHECK(relative_overhead(7604.648, 64661.474) == doctest::Approx(11.761).epsilon(1e-4));
  CHECK(relative_overhead(0.0, 5.0) == 0.0);
  CHECK_THROWS_AS(relative_overhead(1.0, 0.0), InvalidInput);
}

TEST_CASE("overheads against the bundled baseline reproduce the published table") {
  const auto baseline = load_baseline_csv(TIPS_DATA_DIR "/flops/ppo_baseline.csv");
  for (const auto& r : reference_rows()) {
    CAPTURE(r.cfg.name);
    REQUIRE(baseline.count(r.cfg.name) == 1);
    const OverheadRow row = overhead_row(r.cfg, shared_workload(), baseline.at(r.cfg.name));
    CHECK(std::abs(row.overhead_pct - r.overhead_pct) < 0.05);
    CHECK(row.teacher_tflops * 1e12 == doctest::Approx(oracle_total(r.cfg, shared_workload())).epsilon(1e-14));
  }
}

TEST_CASE("A = 0 drops the answer term; L_a = 1 drops the triangular term") {
  const ModelConfig c = reference_rows()[0].cfg;
  ScoringWorkload w = shared_workload();
  w.answers_per_sample = 0;
  const ScoringFlops f = teacher_scoring_flops(c, w);
  CHECK(f.answers == 0.0);
  CHECK(f.total == f.prefix);
  w = shared_workload();
  w.answer_len = 1;
  double sum_l = 0.0;
  for (double l : w.prefix_lengths) sum_l += l;
  const double attn = 4.0 * w.batch * w.answers_per_sample * sum_l * c.head_dim * c.heads * c.layers;
  const double lin = 2.0 * n_dense(c) * w.batch * 5 * w.answers_per_sample;
  CHECK(teacher_scoring_flops(c, w).answers == doctest::Approx(attn + lin).epsilon(1e-15));
}

TEST_CASE("cost is monotone in every field and linear in batch") {
  const ModelConfig c0 = reference_rows()[2].cfg;
  const ScoringWorkload w0 = shared_workload();
  const double base = teacher_scoring_flops(c0, w0).total;
  double ModelConfig::*fields[] = {&ModelConfig::layers,   &ModelConfig::hidden,   &ModelConfig::intermediate,
                                   &ModelConfig::heads,    &ModelConfig::head_dim, &ModelConfig::kv_heads,
                                   &ModelConfig::vocab};
  for (auto f : fields) {
    ModelConfig c = c0;
    c.*f *= 1.5;
    CHECK(n_dense(c) >= n_dense(c0));
    CHECK(teacher_scoring_flops(c, w0).total >= base);
  }
  ScoringWorkload w = w0;
  w.answer_len += 1;
  CHECK(teacher_scoring_flops(c0, w).total >= base);
  w = w0;
  w.answers_per_sample += 1;
  CHECK(teacher_scoring_flops(c0, w).total >= base);
  w = w0;
  w.prefix_lengths[0] += 100;
  CHECK(teacher_scoring_flops(c0, w).total >= base);
  w = w0;
  w.prefix_lengths.push_back(10);
  CHECK(teacher_scoring_flops(c0, w).total >= base);

  for (double k : {2.0, 3.0, 7.0}) {
    w = w0;
    w.batch *= k;
    const ScoringFlops a = teacher_scoring_flops(c0, w0), b = teacher_scoring_flops(c0, w);
    CHECK(b.prefix == doctest::Approx(k * a.prefix).epsilon(1e-15));
    CHECK(b.answers == doctest::Approx(k * a.answers).epsilon(1e-15));
  }
}

TEST_CASE("config files parse and inconsistencies are rejected") {
  const auto c = ModelConfig::from_kv(KvConfig::load(TIPS_DATA_DIR "/flops/qwen2.5-7b.cfg"));
  CHECK(n_dense(c) == n_dense(reference_rows()[1].cfg));
  const auto w = ScoringWorkload::from_kv(KvConfig::load(TIPS_DATA_DIR "/flops/workload.cfg"));
  CHECK(w.prefix_lengths == shared_workload().prefix_lengths);
  KvConfig kv = KvConfig::load(TIPS_DATA_DIR "/flops/workload.cfg");
  kv.set("prefixes_per_sample", "4");
  CHECK_THROWS_AS(ScoringWorkload::from_kv(kv), InvalidInput);
  ModelConfig bad = c;
  bad.heads = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("missing baseline prints a dash") {
  const OverheadRow row = overhead_row(reference_rows()[0].cfg, shared_workload(), std::nan(""));
  const std::string s = format_row(row);
  CHECK(s.find(" - ") != std::string::npos);
}
