#include "l2r/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <tuple>

namespace l2r::losses {

using encoder::Tower;

namespace {

// Candidate order throughout: positive, new negatives, memory negatives.
struct Forward {
  Embedding query;
  std::vector<const Candidate*> cands;
  std::vector<bool> is_new;
  std::vector<Embedding> live;        // current document-tower encodings
  std::vector<double> live_logits;    // q . live
  std::vector<double> compat_logits;  // q . frozen for old docs, q . live for new
};

struct Weights {
  double contrastive = 0.0;
  double rank = 0.0;
  double embed = 0.0;
  double kl = 0.0;
  bool detach = false;
};

void require_finite(const std::vector<double>& xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite score in ") + what);
  }
}

Forward forward(const TrainingInstance& inst, const EncoderParams& params, bool need_frozen) {
  Forward f;
  f.query = encoder::encode(params, inst.query, Tower::query);
  f.cands.push_back(&inst.positive);
  f.is_new.push_back(false);
  for (const auto& c : inst.new_negatives) {
    f.cands.push_back(&c);
    f.is_new.push_back(true);
  }
  for (const auto& c : inst.memory_negatives) {
    f.cands.push_back(&c);
    f.is_new.push_back(false);
  }
  for (std::size_t i = 0; i < f.cands.size(); ++i) {
    f.live.push_back(encoder::encode(params, f.cands[i]->features, Tower::document));
    f.live_logits.push_back(encoder::score(f.query, f.live.back()));
    if (!need_frozen) continue;
    if (f.is_new[i]) {
      f.compat_logits.push_back(f.live_logits.back());
    } else {
      if (!f.cands[i]->frozen) {
        throw std::invalid_argument("missing frozen embedding for " + f.cands[i]->doc_id);
      }
      f.compat_logits.push_back(encoder::score(f.query, *f.cands[i]->frozen));
    }
  }
  require_finite(f.live_logits, "live scores");
  require_finite(f.compat_logits, "compatible scores");
  return f;
}

const Embedding& compat_embedding(const Forward& f, std::size_t i) {
  return f.is_new[i] ? f.live[i] : *f.cands[i]->frozen;
}

LossResult evaluate(const TrainingInstance& inst, const EncoderParams& params, const Weights& w) {
  const bool compat_terms = w.rank != 0.0 || w.embed != 0.0 || w.kl != 0.0;
  if (compat_terms && inst.mode != TrainMode::compat) {
    throw std::invalid_argument("compatible loss requires a compat-mode instance");
  }
  if (w.contrastive != 0.0 && inst.mode != TrainMode::no_compat) {
    throw std::invalid_argument("contrastive loss requires a no_compat-mode instance");
  }
  const Forward f = forward(inst, params, compat_terms);
  const std::size_t m = f.cands.size();
  const std::size_t dim = params.dim();

  double loss = 0.0;
  std::vector<double> g_live_logit(m, 0.0);    // dL / d(live_logits)
  std::vector<double> g_compat_logit(m, 0.0);  // dL / d(compat_logits)
  std::vector<Embedding> g_live(m);            // direct dL / d(live embedding)

  if (w.contrastive != 0.0) {
    const auto p = softmax(f.live_logits);
    loss += w.contrastive * (log_sum_exp(f.live_logits) - f.live_logits[0]);
    for (std::size_t i = 0; i < m; ++i) g_live_logit[i] += w.contrastive * (p[i] - (i == 0 ? 1.0 : 0.0));
  }

  std::vector<double> p_compat;
  if (w.rank != 0.0 || w.kl != 0.0) p_compat = softmax(f.compat_logits);

  if (w.rank != 0.0) {
    loss += w.rank * (log_sum_exp(f.compat_logits) - f.compat_logits[0]);
    for (std::size_t i = 0; i < m; ++i) g_compat_logit[i] += w.rank * (p_compat[i] - (i == 0 ? 1.0 : 0.0));
  }

  if (w.embed != 0.0) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (f.is_new[i]) continue;
      Embedding r(dim);
      for (std::size_t c = 0; c < dim; ++c) {
        r[c] = f.live[i][c] - (*f.cands[i]->frozen)[c];
        sum += 0.5 * r[c] * r[c];
        r[c] *= w.embed;
      }
      g_live[i] = std::move(r);
    }
    loss += w.embed * sum;
  }

  if (w.kl != 0.0) {
    const double lse_a = log_sum_exp(f.compat_logits);
    const double lse_b = log_sum_exp(f.live_logits);
    const auto p_live = softmax(f.live_logits);
    std::vector<double> log_ratio(m);
    double kl = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      log_ratio[i] = (f.compat_logits[i] - lse_a) - (f.live_logits[i] - lse_b);
      kl += p_compat[i] * log_ratio[i];
    }
    if (!std::isfinite(kl)) throw std::runtime_error("non-finite KL divergence");
    loss += w.kl * kl;
    for (std::size_t i = 0; i < m; ++i) {
      g_live_logit[i] += w.kl * (p_live[i] - p_compat[i]);
      if (!w.detach) g_compat_logit[i] += w.kl * p_compat[i] * (log_ratio[i] - kl);
    }
  }

  // Backprop logits into the query embedding and the live document embeddings.
  Embedding g_query(dim, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double gl = g_live_logit[i];
    const double gc = g_compat_logit[i];
    const bool touches_live = gl != 0.0 || (gc != 0.0 && f.is_new[i]);
    if (gl != 0.0) {
      for (std::size_t c = 0; c < dim; ++c) g_query[c] += gl * f.live[i][c];
    }
    if (gc != 0.0) {
      const Embedding& e = compat_embedding(f, i);
      for (std::size_t c = 0; c < dim; ++c) g_query[c] += gc * e[c];
    }
    if (touches_live) {
      if (g_live[i].empty()) g_live[i].assign(dim, 0.0);
      const double coef = gl + (f.is_new[i] ? gc : 0.0);
      for (std::size_t c = 0; c < dim; ++c) g_live[i][c] += coef * f.query[c];
    }
  }

  LossResult out{loss, ParamGradient(dim)};
  encoder::encode_backward(params, inst.query, Tower::query, g_query, out.gradient);
  for (std::size_t i = 0; i < m; ++i) {
    if (g_live[i].empty()) continue;
    encoder::encode_backward(params, f.cands[i]->features, Tower::document, g_live[i], out.gradient);
  }
  return out;
}

}  // namespace

double log_sum_exp(const std::vector<double>& x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

std::vector<double> softmax(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

LossResult contrastive_loss(const TrainingInstance& inst, const EncoderParams& params) {
  return evaluate(inst, params, {.contrastive = 1.0});
}

LossResult rank_loss_compat(const TrainingInstance& inst, const EncoderParams& params) {
  return evaluate(inst, params, {.rank = 1.0});
}

LossResult embed_align_loss(const TrainingInstance& inst, const EncoderParams& params) {
  return evaluate(inst, params, {.embed = 1.0});
}

LossResult rank_align_loss(const TrainingInstance& inst, const EncoderParams& params, bool detach_compatible) {
  return evaluate(inst, params, {.kl = 1.0, .detach = detach_compatible});
}

LossResult total_compat_loss(const TrainingInstance& inst, const EncoderParams& params, const LossConfig& cfg) {
  if (!std::isfinite(cfg.lambda) || cfg.lambda < 0.0) throw std::invalid_argument("lambda must be finite and >= 0");
  Weights w{.rank = 1.0, .detach = cfg.detach_compatible};
  switch (cfg.align) {
    case AlignKind::none:
      break;
    case AlignKind::embedding:
      w.embed = cfg.lambda;
      break;
    case AlignKind::ranking:
      w.kl = cfg.lambda;
      break;
  }
  return evaluate(inst, params, w);
}

LossResult mean_over_batch(const std::vector<TrainingInstance>& batch, const EncoderParams& params,
                           const std::function<LossResult(const TrainingInstance&, const EncoderParams&)>& loss) {
  LossResult out{0.0, ParamGradient(params.dim())};
  if (batch.empty()) return out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& inst : batch) {
    LossResult r = loss(inst, params);
    out.loss += inv * r.loss;
    out.gradient.add(r.gradient, inv);
  }
  return out;
}

std::vector<std::pair<int, std::uint32_t>> reachable_rows(const TrainingInstance& inst,
                                                          const EncoderParams& params) {
  std::set<std::pair<int, std::uint32_t>> rows;
  for (auto f : inst.query.indices) rows.emplace(params.matrix_of(Tower::query), f);
  auto add_doc = [&](const Candidate& c) {
    for (auto f : c.features.indices) rows.emplace(params.matrix_of(Tower::document), f);
  };
  add_doc(inst.positive);
  for (const auto& c : inst.new_negatives) add_doc(c);
  for (const auto& c : inst.memory_negatives) add_doc(c);
  return {rows.begin(), rows.end()};
}

double finite_diff_check(const LossFn& loss, const EncoderParams& params, const FiniteDiffOptions& opts) {
  if (!(opts.epsilon >= 1e-6 && opts.epsilon <= 1e-3)) {
    throw std::invalid_argument("finite-difference epsilon must lie in [1e-6, 1e-3]");
  }
  const LossResult analytic = loss(params);

  std::set<std::pair<int, std::uint32_t>> rows(opts.extra_rows.begin(), opts.extra_rows.end());
  for (int m = 0; m < params.matrix_count(); ++m) {
    for (const auto& [f, _] : analytic.gradient.rows(m)) rows.emplace(m, f);
  }
  std::vector<std::tuple<int, std::uint32_t, std::size_t>> coords;
  for (const auto& [m, f] : rows) {
    if (m >= params.matrix_count() || f >= params.feature_dim()) {
      throw std::invalid_argument("finite_diff_check: probe row out of range");
    }
    for (std::size_t c = 0; c < params.dim(); ++c) coords.emplace_back(m, f, c);
  }
  Rng rng(opts.seed);
  const auto picks = rng.sample_indices(coords.size(), opts.samples);

  EncoderParams probe = params;
  double worst = 0.0;
  for (std::size_t k : picks) {
    const auto [m, f, c] = coords[k];
    double& w = probe.matrix(m)[static_cast<std::size_t>(f) * params.dim() + c];
    const double orig = w;
    w = orig + opts.epsilon;
    const double up = loss(probe).loss;
    w = orig - opts.epsilon;
    const double down = loss(probe).loss;
    w = orig;
    const double numeric = (up - down) / (2.0 * opts.epsilon);
    const double exact = analytic.gradient.at(m, f, c);
    const double denom = std::max({std::abs(exact), std::abs(numeric), opts.abs_floor});
    worst = std::max(worst, std::abs(exact - numeric) / denom);
  }
  return worst;
}

}  // namespace l2r::losses
