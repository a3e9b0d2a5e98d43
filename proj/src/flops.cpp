#include "tips/flops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tips/common.hpp"

namespace tips::flops {

namespace {

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw InvalidInput(std::string("flops: ") + what + " must be positive");
}

}  // namespace

void ModelConfig::validate() const {
  require_positive(layers, "layers");
  require_positive(hidden, "hidden");
  require_positive(intermediate, "intermediate");
  require_positive(heads, "heads");
  require_positive(head_dim, "head_dim");
  require_positive(kv_heads, "kv_heads");
  require_positive(vocab, "vocab");
}

ModelConfig ModelConfig::from_kv(const KvConfig& kv) {
  kv.require_known({"name", "layers", "hidden", "intermediate", "heads", "head_dim", "kv_heads", "vocab"});
  ModelConfig c;
  c.name = kv.get_or("name", "model");
  c.layers = kv.get_double("layers");
  c.hidden = kv.get_double("hidden");
  c.intermediate = kv.get_double("intermediate");
  c.heads = kv.get_double("heads");
  c.head_dim = kv.get_double("head_dim");
  c.kv_heads = kv.get_double("kv_heads");
  c.vocab = kv.get_double("vocab");
  c.validate();
  return c;
}

double ScoringWorkload::max_prefix() const {
  return prefix_lengths.empty() ? 0.0 : *std::max_element(prefix_lengths.begin(), prefix_lengths.end());
}

void ScoringWorkload::validate() const {
  require_positive(batch, "batch");
  if (prefix_lengths.empty()) throw InvalidInput("flops: prefix_lengths must not be empty");
  for (double l : prefix_lengths) require_positive(l, "prefix length");
  require_positive(answer_len, "answer_len");
  if (!(answers_per_sample >= 0.0)) throw InvalidInput("flops: answers_per_sample must be >= 0");
}

ScoringWorkload ScoringWorkload::from_kv(const KvConfig& kv) {
  kv.require_known({"batch", "prefixes_per_sample", "prefix_lengths", "max_prefix", "answer_len",
                    "answers_per_sample"});
  ScoringWorkload w;
  w.batch = kv.get_double("batch");
  w.prefix_lengths = kv.get_doubles("prefix_lengths");
  w.answer_len = kv.get_double("answer_len");
  w.answers_per_sample = kv.get_double("answers_per_sample");
  if (kv.has("prefixes_per_sample") && kv.get_double("prefixes_per_sample") != w.prefixes_per_sample()) {
    throw InvalidInput("flops: prefixes_per_sample disagrees with the prefix_lengths list");
  }
  if (kv.has("max_prefix") && kv.get_double("max_prefix") != w.max_prefix()) {
    throw InvalidInput("flops: max_prefix disagrees with the prefix_lengths list");
  }
  w.validate();
  return w;
}

double n_dense(const ModelConfig& c) {
  const double h = c.hidden;
  const double attn = h * (c.q_size() + 2.0 * c.kv_size() + c.heads * c.head_dim);
  return c.layers * (3.0 * h * c.intermediate + attn) + 2.0 * c.vocab * h;
}

ScoringFlops teacher_scoring_flops(const ModelConfig& c, const ScoringWorkload& w) {
  const double nd = n_dense(c);
  const double attn_unit = c.head_dim * c.heads * c.layers;
  const double b = w.batch, lmax = w.max_prefix(), la = w.answer_len, a = w.answers_per_sample;
  ScoringFlops f;
  f.prefix = 2.0 * nd * b * lmax + 4.0 * b * lmax * lmax * attn_unit;
  double context = 0.0;
  for (double li : w.prefix_lengths) context += la * li + la * (la - 1.0) / 2.0;
  f.answers = 2.0 * nd * b * w.prefixes_per_sample() * a * la + 4.0 * b * a * context * attn_unit;
  f.total = f.prefix + f.answers;
  return f;
}

double relative_overhead(double f_total, double baseline_step_flops) {
  if (!(baseline_step_flops > 0.0)) throw InvalidInput("relative_overhead: baseline must be positive");
  return 100.0 * f_total / baseline_step_flops;
}

std::map<std::string, double> load_baseline_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read baseline file " + path);
  std::map<std::string, double> out;
  std::string line;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected model,value");
    const std::string value = line.substr(comma + 1);
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || (*end != '\0' && *end != '\r')) {
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": bad number '" + value + "'");
    }
    out[line.substr(0, comma)] = v;
  }
  return out;
}

OverheadRow overhead_row(const ModelConfig& c, const ScoringWorkload& w, double ppo_tflops) {
  OverheadRow r;
  r.model = c.name;
  r.n_dense = n_dense(c);
  r.teacher_tflops = teacher_scoring_flops(c, w).total / 1e12;
  r.ppo_tflops = ppo_tflops;
  r.overhead_pct = std::isnan(ppo_tflops) ? ppo_tflops : relative_overhead(r.teacher_tflops, ppo_tflops);
  return r;
}

std::string format_row_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-14s %12s %16s %16s %10s", "model", "n_dense", "teacher_TFLOPs", "ppo_TFLOPs",
                "overhead%");
  return buf;
}

std::string format_row(const OverheadRow& row) {
  char buf[160];
  if (std::isnan(row.ppo_tflops)) {
    std::snprintf(buf, sizeof buf, "%-14s %12.4e %16.3f %16s %10s", row.model.c_str(), row.n_dense,
                  row.teacher_tflops, "-", "-");
  } else {
    std::snprintf(buf, sizeof buf, "%-14s %12.4e %16.3f %16.3f %10.3f", row.model.c_str(), row.n_dense,
                  row.teacher_tflops, row.ppo_tflops, row.overhead_pct);
  }
  return buf;
}

}  // namespace tips::flops
