#include "tips/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "tips/flops.hpp"
#include "tips/kernels.hpp"
#include "tips/metrics.hpp"
#include "tips/pbrs_verify.hpp"
#include "tips/policy.hpp"

namespace fs = std::filesystem;

namespace tips::cli {

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot write " + path.string());
  f << text;
  if (!f) throw InvalidInput("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InvalidInput("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out;
}

/// Options that map one-to-one onto run-config keys.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Run config file (key = value lines)")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key: --set key=value (repeatable)");
    static const std::pair<const char*, const char*> keys[] = {
        {"--trainer", "trainer"},       {"--shaping", "shaping"},   {"--alpha", "alpha"},
        {"--alpha-policy", "alpha_policy"}, {"--band", "band"},     {"--refresh", "refresh"},
        {"--steps", "steps"},           {"--seed", "seed"},         {"--group", "group_size"},
        {"--batch", "batch_size"},      {"--terminal", "terminal"}, {"--eval-every", "eval_every"},
        {"--trace-every", "trace_every"}};
    for (const auto& [flag, key] : keys) {
      app->add_option(flag, values[key], std::string("Config key '") + key + "'");
    }
  }

  KvConfig resolve(const CLI::App* app) const {
    KvConfig kv = config_path.empty() ? KvConfig{} : KvConfig::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + s + "'");
      kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    for (const auto& [key, value] : values) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      if (key == "group_size") flag = "--group";
      if (key == "batch_size") flag = "--batch";
      if (app->count(flag) > 0) kv.set(key, value);
    }
    return kv;
  }
};

int cmd_gen_data(const qa::DatasetParams& p, const std::string& out_path, std::ostream& out) {
  const qa::Dataset d = qa::generate_dataset(p);
  qa::save_dataset(d, out_path);
  std::size_t one = 0, two = 0;
  for (const auto& q : d.questions) (q.hops == 2 ? two : one) += 1;
  out << "gen-data: entities=" << d.entities.size() << " relations=" << d.relations.size()
      << " facts=" << d.facts.size() << " passages=" << d.passages.size() << " questions=" << d.questions.size()
      << " one_hop=" << one << " two_hop=" << two << " -> " << out_path << '\n';
  return 0;
}

int cmd_train(const KvConfig& kv, const std::string& data_path, const std::string& out_dir,
              std::size_t checkpoint_every, bool quiet, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = TrainConfig::from_kv(kv);
  const qa::Dataset data = qa::load_dataset(data_path);
  const qa::Environment env(data, cfg.env);
  const fs::path dir(out_dir);
  make_dir(dir);
  write_file(dir / "config.cfg", cfg.to_kv().dump());
  fs::copy_file(data_path, dir / "dataset.json", fs::copy_options::overwrite_existing);

  std::ofstream telemetry(dir / "telemetry.jsonl", std::ios::binary);
  std::ofstream traces;
  Trainer trainer(env, cfg);
  if (cfg.trace_every) {
    traces.open(dir / "traces.jsonl", std::ios::binary);
    trainer.set_trace_sink([&traces](const nlohmann::json& j) { traces << j.dump() << '\n'; });
  }
  const std::size_t report_every = std::max<std::size_t>(1, cfg.steps / 20);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const StepTelemetry t = trainer.step();
    telemetry << t.to_json().dump() << '\n';
    if (checkpoint_every && (s + 1) % checkpoint_every == 0) {
      save_checkpoint((dir / ("checkpoint_step" + std::to_string(s + 1) + ".bin")).string(), trainer.policy(),
                      trainer.critic());
    }
    if (!quiet && ((s + 1) % report_every == 0 || s + 1 == cfg.steps)) {
      err << "step " << (s + 1) << "/" << cfg.steps << " mean_EM=" << t.mean_em << " alpha=" << t.alpha
          << " teacher_version=" << t.teacher_version << '\n';
    }
  }
  save_checkpoint((dir / "checkpoint_final.bin").string(), trainer.policy(), trainer.critic());
  const auto hist = trainer.histogram();
  write_file(dir / "advantage_histogram.csv", metrics::histogram_csv(hist));
  write_file(dir / "advantage_histogram.json", metrics::histogram_summary(hist).dump(1) + "\n");

  const EvalResult eval = trainer.evaluate_validation();
  nlohmann::json result = {{"final_eval", eval.to_json()},
                           {"steps", trainer.steps_done()},
                           {"collapsed", trainer.collapse_step().has_value()},
                           {"final_alpha", trainer.alpha()}};
  result["collapse_step"] = trainer.collapse_step() ? nlohmann::json(*trainer.collapse_step()) : nlohmann::json();
  result["calibrated_alpha"] =
      trainer.calibrated_alpha() ? nlohmann::json(*trainer.calibrated_alpha()) : nlohmann::json();
  write_file(dir / "result.json", result.dump(1) + "\n");
  out << "train: trainer=" << to_string(cfg.trainer) << " shaping=" << to_string(cfg.shaping.mode)
      << " steps=" << cfg.steps << " val_EM=" << eval.em << " val_EM_2hop=" << eval.em_2hop
      << " collapsed=" << (trainer.collapse_step() ? "yes" : "no") << " -> " << dir.string() << '\n';
  return 0;
}

int cmd_ablate(const KvConfig& base, const std::string& data_path, const std::vector<std::string>& arm_specs,
               const std::vector<std::string>& sweeps, const std::string& seeds_spec, const std::string& out_dir,
               bool quiet, std::ostream& out, std::ostream& err) {
  std::vector<Arm> arms;
  for (const auto& s : arm_specs) arms.push_back(parse_arm(s));
  for (const auto& s : sweeps) {
    for (auto& a : parse_sweep(s)) arms.push_back(std::move(a));
  }
  if (arms.empty()) throw InvalidInput("ablate: give at least one --arm or --sweep");
  const auto seeds = parse_seeds(seeds_spec);
  // Fail fast on config errors common to every run.
  TrainConfig::from_kv(base);
  const qa::Dataset data = qa::load_dataset(data_path);
  const fs::path dir(out_dir);
  make_dir(dir);
  write_file(dir / "base_config.cfg", base.dump());
  const auto rows = run_ablation(data, base, arms, seeds, quiet ? nullptr : &err, (dir / "runs").string());
  const auto summary = summarize(arms, rows);
  write_file(dir / "report.csv", ablation_csv(rows));
  write_file(dir / "report.json", ablation_json(rows, summary).dump(1) + "\n");
  std::size_t failed = 0;
  for (const auto& s : summary) {
    out << "ablate: arm=" << s.arm << " runs=" << s.runs << " median_EM=" << s.median_em
        << " stdev_EM=" << s.stdev_em << " median_EM_2hop=" << s.median_em_2hop << " collapsed=" << s.collapsed
        << " failures=" << s.failures << '\n';
    failed += s.failures;
  }
  return failed ? kExitFailure : 0;
}

int cmd_verify_pbrs(std::size_t instances, std::uint64_t seed, std::size_t policies, const std::string& report,
                    std::ostream& out) {
  const pbrs::SuiteReport r = pbrs::verify_suite(instances, seed, policies);
  out << r.summary_line() << '\n';
  if (report.empty()) {
    out << r.to_json().dump() << '\n';
  } else {
    write_file(report, r.to_json().dump(1) + "\n");
  }
  return r.pass ? 0 : kExitFailure;
}

int cmd_flops(const std::vector<std::string>& models, const std::string& workload_path, std::string baseline_path,
              const std::optional<double>& ppo_tflops, std::ostream& out) {
  const auto workload = flops::ScoringWorkload::from_kv(KvConfig::load(workload_path));
  if (baseline_path.empty() && !ppo_tflops) {
    const fs::path sibling = fs::path(models.front()).parent_path() / "ppo_baseline.csv";
    if (fs::exists(sibling)) baseline_path = sibling.string();
  }
  std::map<std::string, double> baseline;
  if (!baseline_path.empty()) baseline = flops::load_baseline_csv(baseline_path);
  out << flops::format_row_header() << '\n';
  for (const auto& m : models) {
    const auto model = flops::ModelConfig::from_kv(KvConfig::load(m));
    double ppo = std::nan("");
    if (ppo_tflops) {
      ppo = *ppo_tflops;
    } else if (auto it = baseline.find(model.name); it != baseline.end()) {
      ppo = it->second;
    }
    out << flops::format_row(flops::overhead_row(model, workload, ppo)) << '\n';
  }
  return 0;
}

}  // namespace

Arm parse_arm(const std::string& spec) {
  Arm arm;
  std::string body = spec;
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    arm.name = trim(spec.substr(0, colon));
    body = spec.substr(colon + 1);
  }
  for (const auto& part : split(body, ',')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw InvalidInput("arm '" + spec + "': expected key=value pairs");
    arm.overrides.set(trim(part.substr(0, eq)), trim(part.substr(eq + 1)));
  }
  if (arm.name.empty()) arm.name = trim(body);
  if (arm.name.empty()) throw InvalidInput("arm spec is empty");
  return arm;
}

std::vector<Arm> parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw InvalidInput("sweep '" + spec + "': expected key=v1,v2,...");
  const std::string key = trim(spec.substr(0, eq));
  std::vector<Arm> arms;
  for (const auto& v : split(spec.substr(eq + 1), ',')) {
    if (v.empty()) continue;
    Arm a;
    a.name = key + "=" + v;
    a.overrides.set(key, v);
    arms.push_back(std::move(a));
  }
  if (key.empty() || arms.empty()) throw InvalidInput("sweep '" + spec + "' has no values");
  return arms;
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  auto number = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw InvalidInput("seeds '" + spec + "': '" + s + "' is not an unsigned integer");
    }
    return std::stoull(s);
  };
  std::vector<std::uint64_t> out;
  if (const auto dots = spec.find(".."); dots != std::string::npos) {
    const std::uint64_t lo = number(trim(spec.substr(0, dots))), hi = number(trim(spec.substr(dots + 2)));
    if (hi < lo) throw InvalidInput("seeds '" + spec + "': empty range");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
  } else {
    for (const auto& s : split(spec, ',')) out.push_back(number(s));
  }
  if (out.empty()) throw InvalidInput("no seeds given");
  return out;
}

double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

double sample_stdev(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

std::vector<AblationRow> run_ablation(const qa::Dataset& data, const KvConfig& base, const std::vector<Arm>& arms,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log,
                                      const std::optional<std::string>& run_root) {
  std::vector<AblationRow> rows;
  for (const Arm& arm : arms) {
    for (std::uint64_t seed : seeds) {
      AblationRow row;
      row.arm = arm.name;
      row.seed = seed;
      try {
        KvConfig kv = base;
        for (const auto& [k, v] : arm.overrides.values()) kv.set(k, v);
        kv.set("seed", std::to_string(seed));
        const TrainConfig cfg = TrainConfig::from_kv(kv);
        const qa::Environment env(data, cfg.env);
        std::ofstream telemetry;
        if (run_root) {
          const fs::path dir = fs::path(*run_root) / (sanitize(arm.name) + "_s" + std::to_string(seed));
          make_dir(dir);
          write_file(dir / "config.cfg", cfg.to_kv().dump());
          telemetry.open(dir / "telemetry.jsonl", std::ios::binary);
        }
        const RunResult r = train_loop(env, cfg, [&telemetry](const StepTelemetry& t) {
          if (telemetry.is_open()) telemetry << t.to_json().dump() << '\n';
        });
        row.ok = true;
        row.eval = r.final_eval;
        row.collapse_step = r.collapse_step;
        row.collapsed = r.collapse_step.has_value();
        row.final_alpha = r.final_alpha;
        row.calibrated_alpha = r.calibrated_alpha;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      if (log) {
        *log << "ablate: " << row.arm << " seed=" << seed << (row.ok ? "" : " FAILED: " + row.error)
             << (row.ok ? " val_EM=" + std::to_string(row.eval.em) : "") << '\n';
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<ArmSummary> summarize(const std::vector<Arm>& arms, const std::vector<AblationRow>& rows) {
  std::vector<ArmSummary> out;
  for (const Arm& arm : arms) {
    ArmSummary s;
    s.arm = arm.name;
    std::vector<double> em, em2, f1;
    for (const auto& r : rows) {
      if (r.arm != arm.name) continue;
      ++s.runs;
      if (!r.ok) {
        ++s.failures;
        continue;
      }
      em.push_back(r.eval.em);
      em2.push_back(r.eval.em_2hop);
      f1.push_back(r.eval.f1);
      if (r.collapsed) ++s.collapsed;
    }
    s.median_em = median(em);
    s.median_em_2hop = median(em2);
    s.median_f1 = median(f1);
    s.stdev_em = sample_stdev(em);
    for (double v : em) s.mean_em += v / static_cast<double>(em.size());
    out.push_back(s);
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "arm,seed,ok,val_em,val_f1,val_em_1hop,val_em_2hop,collapsed,collapse_step,final_alpha,error\n";
  for (const auto& r : rows) {
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << '"' << r.arm << "\"," << r.seed << ',' << (r.ok ? 1 : 0) << ',' << r.eval.em << ',' << r.eval.f1 << ','
        << r.eval.em_1hop << ',' << r.eval.em_2hop << ',' << (r.collapsed ? 1 : 0) << ','
        << (r.collapse_step ? std::to_string(*r.collapse_step) : "") << ',' << r.final_alpha << ',' << error
        << '\n';
  }
  return out.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows, const std::vector<ArmSummary>& summary) {
  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json x = {{"arm", r.arm},       {"seed", r.seed},           {"ok", r.ok},
                        {"collapsed", r.collapsed}, {"final_alpha", r.final_alpha}};
    if (r.ok) x["eval"] = r.eval.to_json();
    if (!r.error.empty()) x["error"] = r.error;
    x["collapse_step"] = r.collapse_step ? nlohmann::json(*r.collapse_step) : nlohmann::json();
    x["calibrated_alpha"] = r.calibrated_alpha ? nlohmann::json(*r.calibrated_alpha) : nlohmann::json();
    j["runs"].push_back(x);
  }
  j["arms"] = nlohmann::json::array();
  for (const auto& s : summary) {
    j["arms"].push_back({{"arm", s.arm},
                         {"runs", s.runs},
                         {"failures", s.failures},
                         {"median_em", s.median_em},
                         {"mean_em", s.mean_em},
                         {"stdev_em", s.stdev_em},
                         {"median_em_2hop", s.median_em_2hop},
                         {"median_f1", s.median_f1},
                         {"collapsed", s.collapsed}});
  }
  return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tips: turn-level information-potential reward shaping lab on synthetic retrieval QA"};
  app.require_subcommand(1);
  std::string backend;
  app.add_option("--kernels", backend, "Force the kernel backend")->check(CLI::IsMember({"scalar", "avx2", "neon"}));

  qa::DatasetParams dp;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-hop QA dataset");
  gen->add_option("--seed", dp.seed, "Generator seed");
  gen->add_option("--entities", dp.n_entities, "Number of entities");
  gen->add_option("--relations", dp.n_relations, "Number of relation types");
  gen->add_option("--questions", dp.n_questions, "Number of questions");
  gen->add_option("--facts-per-entity", dp.facts_per_entity, "Facts whose subject is each entity");
  gen->add_option("--hop-mix", dp.hop_mix, "Fraction of 2-hop questions");
  gen->add_option("--alias-fraction", dp.alias_fraction, "Fraction of entities with an alias");
  gen->add_option("--top-k", dp.top_k, "Retrieval depth assumed by the solvability check");
  gen->add_option("--out", gen_out, "Output JSON path")->required();

  ConfigFlags train_flags;
  std::string train_data, train_out;
  std::size_t checkpoint_every = 0;
  bool train_quiet = false;
  auto* train = app.add_subcommand("train", "Run one training job");
  train_flags.attach(train);
  train->add_option("--data", train_data, "Dataset JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every C steps (0: final only)");
  train->add_flag("--quiet", train_quiet, "No progress lines on stderr");

  ConfigFlags ablate_flags;
  std::string ablate_data, ablate_out, seeds = "1..5";
  std::vector<std::string> arm_specs, sweeps;
  bool ablate_quiet = false;
  auto* ablate = app.add_subcommand("ablate", "Run several config arms across seeds and compare them");
  ablate_flags.attach(ablate);
  ablate->add_option("--data", ablate_data, "Dataset JSON")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "Report directory")->required();
  ablate->add_option("--arm", arm_specs, "Arm 'name:key=value,key=value' (repeatable)");
  ablate->add_option("--sweep", sweeps, "Sweep 'key=v1,v2,...' (repeatable)");
  ablate->add_option("--seeds", seeds, "Seeds '1,2,3' or '1..5'");
  ablate->add_flag("--quiet", ablate_quiet, "No per-run lines on stderr");

  std::size_t instances = 200, policies = 3;
  std::uint64_t pbrs_seed = 1;
  std::string pbrs_report;
  auto* verify = app.add_subcommand("verify-pbrs", "Check shaping invariance on random finite MDPs");
  verify->add_option("--instances", instances, "Number of random instances");
  verify->add_option("--seed", pbrs_seed, "Suite seed");
  verify->add_option("--policies", policies, "Random policies per instance");
  verify->add_option("--report", pbrs_report, "Write the JSON defect report here instead of stdout");

  std::vector<std::string> models;
  std::string workload, baseline;
  std::optional<double> ppo_tflops;
  auto* fl = app.add_subcommand("flops", "Teacher-scoring FLOPs and overhead for a model config");
  fl->add_option("--model", models, "Model config file (repeatable)")->required()->check(CLI::ExistingFile);
  fl->add_option("--workload", workload, "Workload config file")->required()->check(CLI::ExistingFile);
  fl->add_option("--baseline", baseline, "CSV of PPO step TFLOPs per model name")->check(CLI::ExistingFile);
  fl->add_option("--ppo-tflops", ppo_tflops, "PPO step TFLOPs (overrides --baseline)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (!backend.empty()) {
      kernels::set_backend(backend == "scalar" ? kernels::Backend::Scalar
                           : backend == "avx2" ? kernels::Backend::Avx2
                                               : kernels::Backend::Neon);
    }
    if (*gen) return cmd_gen_data(dp, gen_out, out);
    if (*train) {
      return cmd_train(train_flags.resolve(train), train_data, train_out, checkpoint_every, train_quiet, out, err);
    }
    if (*ablate) {
      return cmd_ablate(ablate_flags.resolve(ablate), ablate_data, arm_specs, sweeps, seeds, ablate_out, ablate_quiet,
                        out, err);
    }
    if (*verify) return cmd_verify_pbrs(instances, pbrs_seed, policies, pbrs_report, out);
    if (*fl) return cmd_flops(models, workload, baseline, ppo_tflops, out);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tips::cli
