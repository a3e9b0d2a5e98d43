#include "tips/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "tips/kernels.hpp"

namespace tips {

PolicyParams::PolicyParams(std::size_t feature_dim, std::size_t vocab_size, std::size_t pair_dim,
                           std::uint64_t hash_seed)
    : vocab_size_(vocab_size), hash_seed_(hash_seed), rows_(feature_dim), pair_(pair_dim, 0.0) {
  if (feature_dim < 1 || vocab_size < 1) throw InvalidInput("policy: dimensions must be >= 1");
}

double* PolicyParams::mutable_row(std::uint32_t f) {
  auto& r = rows_.at(f);
  if (!r) {
    r = std::make_shared<std::vector<double>>(vocab_size_, 0.0);
  } else if (r.use_count() > 1) {
    r = std::make_shared<std::vector<double>>(*r);
  }
  return r->data();
}

double PolicyParams::weight(std::uint32_t f, TokenId v) const {
  const double* r = row(f);
  return r ? r[v] : 0.0;
}

std::vector<std::uint32_t> PolicyParams::allocated_rows() const {
  std::vector<std::uint32_t> out;
  for (std::size_t f = 0; f < rows_.size(); ++f) {
    if (rows_[f]) out.push_back(static_cast<std::uint32_t>(f));
  }
  return out;
}

bool PolicyParams::all_finite() const {
  for (const auto& r : rows_) {
    if (r && !std::all_of(r->begin(), r->end(), [](double x) { return std::isfinite(x); })) return false;
  }
  return std::all_of(pair_.begin(), pair_.end(), [](double x) { return std::isfinite(x); });
}

void compute_logits(const PolicyParams& params, const PolicyInput& input, std::span<double> out) {
  const TokenRange legal = input.legal;
  if (out.size() != legal.size()) throw InvalidInput("compute_logits: output size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  const auto& k = kernels::active();
  const auto& fs = input.features;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    if (const double* r = params.row(fs.index[i])) k.axpy(fs.value[i], r + legal.begin, out.data(), out.size());
  }
  const auto u = params.pair_weights();
  for (const auto& p : input.pairs) {
    if (legal.contains(p.token) && p.index < u.size()) out[p.token - legal.begin] += u[p.index] * p.value;
  }
}

Distribution distribution(const PolicyParams& params, const PolicyInput& input) {
  if (input.legal.end > params.vocab_size()) throw InvalidInput("distribution: legal range exceeds vocabulary");
  if (input.legal.size() == 0) throw InvalidState("distribution: no legal tokens in this state");
  Distribution d;
  d.legal = input.legal;
  d.logits.resize(input.legal.size());
  d.probs.resize(input.legal.size());
  compute_logits(params, input, d.logits);
  d.log_z = kernels::softmax(d.logits, d.probs);
  return d;
}

double log_prob(const PolicyParams& params, const PolicyInput& input, TokenId token) {
  if (token >= params.vocab_size()) throw InvalidInput("log_prob: token outside the vocabulary");
  if (!input.legal.contains(token)) throw InvalidInput("log_prob: token not legal in this state");
  return distribution(params, input).log_prob(token);
}

TokenId sample(const Distribution& dist, std::uint64_t seed) {
  Rng rng(seed);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    cum += dist.probs[i];
    if (u < cum) return dist.legal.begin + static_cast<TokenId>(i);
  }
  // Rounding left u above the last partial sum: take the last token with mass.
  for (std::size_t i = dist.probs.size(); i-- > 0;) {
    if (dist.probs[i] > 0.0) return dist.legal.begin + static_cast<TokenId>(i);
  }
  return dist.legal.begin;
}

TokenId sample(const PolicyParams& params, const PolicyInput& input, std::uint64_t seed) {
  return sample(distribution(params, input), seed);
}

TokenId greedy(const Distribution& dist) {
  const auto it = std::max_element(dist.logits.begin(), dist.logits.end());
  return dist.legal.begin + static_cast<TokenId>(it - dist.logits.begin());
}

// ------------------------------------------------------------ gradients

GradientBuffer::GradientBuffer(std::size_t vocab_size, std::size_t pair_dim)
    : vocab_size_(vocab_size), pair_(pair_dim, 0.0) {}

void GradientBuffer::clear() {
  slot_.clear();
  order_.clear();
  pool_.clear();
  std::fill(pair_.begin(), pair_.end(), 0.0);
}

double* GradientBuffer::row_for(std::uint32_t f) {
  auto [it, inserted] = slot_.try_emplace(f, order_.size());
  if (inserted) {
    order_.push_back(f);
    pool_.resize(pool_.size() + vocab_size_, 0.0);
  }
  return pool_.data() + it->second * vocab_size_;
}

void GradientBuffer::add_log_prob_grad(const Distribution& dist, const PolicyInput& input, TokenId token,
                                       double coef) {
  if (!dist.contains(token)) throw InvalidInput("gradient: token not legal in this state");
  if (coef == 0.0) return;
  const auto& k = kernels::active();
  const std::size_t n = dist.legal.size();
  const auto& fs = input.features;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const double c = coef * fs.value[i];
    double* r = row_for(fs.index[i]);
    k.axpy(-c, dist.probs.data(), r + dist.legal.begin, n);
    r[token] += c;
  }
  for (const auto& p : input.pairs) {
    if (p.index >= pair_.size() || !dist.contains(p.token)) continue;
    double g = -dist.prob(p.token);
    if (p.token == token) g += 1.0;
    pair_[p.index] += coef * g * p.value;
  }
}

double GradientBuffer::get(std::uint32_t f, TokenId v) const {
  auto it = slot_.find(f);
  return it == slot_.end() ? 0.0 : pool_[it->second * vocab_size_ + v];
}

double GradientBuffer::squared_norm() const {
  const auto& k = kernels::active();
  return k.dot(pool_.data(), pool_.data(), pool_.size()) + k.dot(pair_.data(), pair_.data(), pair_.size());
}

void GradientBuffer::scale(double s) {
  for (double& x : pool_) x *= s;
  for (double& x : pair_) x *= s;
}

void GradientBuffer::apply(PolicyParams& params, double step) const {
  if (params.vocab_size() != vocab_size_ || params.pair_dim() != pair_.size()) {
    throw InvalidInput("gradient: parameter shape mismatch");
  }
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < order_.size(); ++i) {
    k.axpy(step, pool_.data() + i * vocab_size_, params.mutable_row(order_[i]), vocab_size_);
  }
  auto u = params.pair_weights();
  k.axpy(step, pair_.data(), u.data(), u.size());
}

GradientBuffer grad_log_prob(const PolicyParams& params, const PolicyInput& input, TokenId token) {
  if (token >= params.vocab_size()) throw InvalidInput("grad_log_prob: token outside the vocabulary");
  GradientBuffer g(params.vocab_size(), params.pair_dim());
  g.add_log_prob_grad(distribution(params, input), input, token, 1.0);
  return g;
}

// --------------------------------------------------------------- critic

double value(const CriticParams& critic, const SparseVector& features) {
  return features.dot(critic.weights);
}

void critic_fit_inplace(CriticParams& critic, std::span<const CriticSample> batch, double lr) {
  if (batch.empty()) return;
  for (const auto& s : batch) {
    if (!std::isfinite(s.target)) throw InvalidInput("critic_fit: non-finite return in batch");
  }
  // Residuals are computed before any write so the step uses one parameter value.
  std::vector<double> resid(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) resid[i] = value(critic, *batch[i].features) - batch[i].target;
  const double scale = lr / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = *batch[i].features;
    for (std::size_t j = 0; j < f.size(); ++j) critic.weights[f.index[j]] -= scale * resid[i] * f.value[j];
  }
}

CriticParams critic_fit(const CriticParams& critic, std::span<const CriticSample> batch, double lr) {
  CriticParams out = critic;
  critic_fit_inplace(out, batch, lr);
  return out;
}

double critic_mse(const CriticParams& critic, std::span<const CriticSample> batch) {
  if (batch.empty()) return 0.0;
  double s = 0.0;
  for (const auto& b : batch) {
    const double r = value(critic, *b.features) - b.target;
    s += r * r;
  }
  return s / static_cast<double>(batch.size());
}

// ----------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'T', 'I', 'P', 'S', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, const T& x) {
  out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <class T>
T take(std::istream& in) {
  T x{};
  in.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (!in) throw InvalidInput("checkpoint: truncated file");
  return x;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParams& policy, const CriticParams& critic) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write checkpoint " + path);
  const nlohmann::json meta = {{"version", policy.version},
                               {"feature_dim", policy.feature_dim()},
                               {"vocab_size", policy.vocab_size()},
                               {"hash_seed", policy.hash_seed()},
                               {"pair_dim", policy.pair_dim()},
                               {"critic_dim", critic.weights.size()}};
  const std::string m = meta.dump();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));

  std::vector<std::uint32_t> rows;
  for (std::uint32_t f : policy.allocated_rows()) {
    const double* r = policy.row(f);
    if (std::any_of(r, r + policy.vocab_size(), [](double x) { return x != 0.0; })) rows.push_back(f);
  }
  put<std::uint64_t>(out, rows.size());
  for (std::uint32_t f : rows) {
    put(out, f);
    out.write(reinterpret_cast<const char*>(policy.row(f)),
              static_cast<std::streamsize>(policy.vocab_size() * sizeof(double)));
  }
  for (double u : policy.pair_weights()) put(out, u);

  std::vector<std::uint32_t> nz;
  for (std::size_t i = 0; i < critic.weights.size(); ++i) {
    if (critic.weights[i] != 0.0) nz.push_back(static_cast<std::uint32_t>(i));
  }
  put<std::uint64_t>(out, nz.size());
  for (std::uint32_t i : nz) {
    put(out, i);
    put(out, critic.weights[i]);
  }
  if (!out) throw InvalidInput("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InvalidInput("checkpoint: bad magic");
  const auto mlen = take<std::uint32_t>(in);
  std::string m(mlen, '\0');
  in.read(m.data(), mlen);
  if (!in) throw InvalidInput("checkpoint: truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto fdim = meta.at("feature_dim").get<std::size_t>();
  const auto vsize = meta.at("vocab_size").get<std::size_t>();
  Checkpoint ck{PolicyParams(fdim, vsize, meta.at("pair_dim").get<std::size_t>(),
                             meta.at("hash_seed").get<std::uint64_t>()),
                CriticParams(meta.value("critic_dim", fdim))};
  ck.policy.version = meta.at("version").get<std::uint64_t>();
  const auto nrows = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < nrows; ++i) {
    const auto f = take<std::uint32_t>(in);
    if (f >= fdim) throw InvalidInput("checkpoint: row index out of range");
    in.read(reinterpret_cast<char*>(ck.policy.mutable_row(f)), static_cast<std::streamsize>(vsize * sizeof(double)));
    if (!in) throw InvalidInput("checkpoint: truncated row");
  }
  for (double& u : ck.policy.pair_weights()) u = take<double>(in);
  const auto nz = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < nz; ++i) {
    const auto idx = take<std::uint32_t>(in);
    if (idx >= ck.critic.weights.size()) throw InvalidInput("checkpoint: critic index out of range");
    ck.critic.weights[idx] = take<double>(in);
  }
  return ck;
}

}  // namespace tips
