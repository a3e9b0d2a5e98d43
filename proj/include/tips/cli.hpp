#pragma once

// Command-line front end: gen-data, train, ablate, verify-pbrs, flops.
// Exit codes: 0 success, 1 runtime failure, 2 invalid input or usage.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tips/env_qa.hpp"
#include "tips/kv_config.hpp"
#include "tips/train_loop.hpp"

namespace tips::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// One ablation arm: a name and the config keys it overrides.
struct Arm {
  std::string name;
  KvConfig overrides;
};

/// "name:key=value,key=value". The name may be omitted ("key=value,...").
Arm parse_arm(const std::string& spec);
/// "key=v1,v2,v3" -> one arm per value, named "key=v".
std::vector<Arm> parse_sweep(const std::string& spec);
/// "1,2,3" or "1..5".
std::vector<std::uint64_t> parse_seeds(const std::string& spec);

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalResult eval;
  bool collapsed = false;
  std::optional<std::size_t> collapse_step;
  double final_alpha = 0.0;
  std::optional<double> calibrated_alpha;
};

struct ArmSummary {
  std::string arm;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double median_em = 0.0;
  double mean_em = 0.0;
  /// Sample standard deviation across seeds (n - 1 denominator).
  double stdev_em = 0.0;
  double median_em_2hop = 0.0;
  double median_f1 = 0.0;
  std::size_t collapsed = 0;
};

double median(std::vector<double> x);
double sample_stdev(const std::vector<double>& x);

/// Runs every (arm, seed) pair. A failing run is recorded and the rest
/// continue. When run_root is set, each run writes its resolved config and
/// telemetry under run_root/<arm>_s<seed>/.
std::vector<AblationRow> run_ablation(const qa::Dataset& data, const KvConfig& base, const std::vector<Arm>& arms,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr,
                                      const std::optional<std::string>& run_root = std::nullopt);
std::vector<ArmSummary> summarize(const std::vector<Arm>& arms, const std::vector<AblationRow>& rows);

std::string ablation_csv(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows, const std::vector<ArmSummary>& summary);

}  // namespace tips::cli
