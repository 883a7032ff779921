#include "disgenib/fsl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "disgenib/errors.hpp"
#include "disgenib/gauss.hpp"
#include "disgenib/rng.hpp"

namespace dgib {

std::string to_string(ZPool pool) {
  switch (pool) {
    case ZPool::transductive: return "transductive";
    case ZPool::support_only: return "support-only";
    case ZPool::base_pool: return "base-pool";
  }
  return "unknown";
}

ZPool parse_z_pool(const std::string& name) {
  for (auto p : {ZPool::transductive, ZPool::support_only, ZPool::base_pool}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown z pool '" + name + "' (expected transductive, support-only or base-pool)");
}

std::string to_string(Metric metric) { return metric == Metric::cosine ? "cosine" : "euclidean"; }

Metric parse_metric(const std::string& name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "cosine") return Metric::cosine;
  throw ConfigError("unknown metric '" + name + "' (expected euclidean or cosine)");
}

void AugmentConfig::validate() const {
  if (n_gen < 1) throw ConfigError("eval.n_gen must be >= 1");
  if (!(variance_floor > 0.0) || !std::isfinite(variance_floor)) throw ConfigError("eval.variance_floor must be > 0");
  if (!std::isfinite(fallback_variance)) throw ConfigError("eval.fallback_variance must be finite");
}

nlohmann::json to_json(const AugmentConfig& cfg) {
  return {{"z_pool", to_string(cfg.pool)},
          {"n_gen", cfg.n_gen},
          {"use_prior", cfg.use_prior},
          {"variance_floor", cfg.variance_floor},
          {"fallback_variance", cfg.fallback_variance},
          {"metric", to_string(cfg.metric)}};
}

void EvalSpec::validate() const {
  if (way < 1 || shot < 1 || queries < 1 || episodes < 1) {
    throw ConfigError("eval way, shot, queries and episodes must all be >= 1");
  }
}

// ---- generation -----------------------------------------------------------

GeneratedSet generate_augmented(const DisGenModel& model, const Dataset& ds, const Episode& ep,
                                const AugmentConfig& cfg, const PriorTable* priors, const Dataset* base,
                                std::uint64_t seed) {
  cfg.validate();
  if (cfg.use_prior && priors == nullptr) throw ContractError("prior-sourced A needs a prior table");
  NoGradGuard no_grad;
  Rng rng(seed);

  // Z pool, as (dataset, row) with the rows recorded for auditing.
  const Dataset* pool_ds = &ds;
  std::vector<std::size_t> pool;
  switch (cfg.pool) {
    case ZPool::transductive:
      pool = ep.support_rows;
      pool.insert(pool.end(), ep.query_rows.begin(), ep.query_rows.end());
      break;
    case ZPool::support_only: pool = ep.support_rows; break;
    case ZPool::base_pool:
      if (base == nullptr) throw ContractError("base-pool generation needs a base dataset");
      pool_ds = base;
      for (std::size_t i = 0; i < base->size(); ++i) pool.push_back(i);
      break;
  }
  if (pool.empty()) throw ContractError("Z pool '" + to_string(cfg.pool) + "' is empty");

  const std::size_t total = ep.way * cfg.n_gen;
  const std::size_t d_a = model.dims().d_a;
  const std::size_t d_z = model.dims().d_z;

  GeneratedSet out;
  out.pool = cfg.pool;
  out.labels.resize(total);
  out.pool_rows.resize(total);

  // A draws.
  Array a = Array::zeros({total, d_a});
  if (cfg.use_prior) {
    std::vector<std::size_t> classes(total);
    for (std::size_t k = 0; k < ep.way; ++k) {
      for (std::size_t g = 0; g < cfg.n_gen; ++g) classes[k * cfg.n_gen + g] = ep.classes[k];
    }
    a = priors->sample(classes, rng);
  } else {
    const Array support = ds.gather(ep.support_rows);
    const DiagGaussian qa = model.encode_a(Tensor::constant(support));
    std::vector<std::size_t> src(total);
    for (std::size_t k = 0; k < ep.way; ++k) {
      std::vector<std::size_t> mine;
      for (std::size_t i = 0; i < ep.support_rows.size(); ++i) {
        if (ep.support_labels[i] == k) mine.push_back(i);
      }
      if (mine.empty()) throw ContractError("episode class " + std::to_string(k) + " has no support rows");
      for (std::size_t g = 0; g < cfg.n_gen; ++g) src[k * cfg.n_gen + g] = mine[rng.index(mine.size())];
    }
    const Array& mu = qa.mu().value();
    const Array& lv = qa.log_var().value();
    for (std::size_t r = 0; r < total; ++r) {
      for (std::size_t j = 0; j < d_a; ++j) {
        a.at(r, j) = mu.at(src[r], j) + std::exp(0.5 * lv.at(src[r], j)) * rng.normal();
      }
    }
  }

  // Z draws.
  for (std::size_t r = 0; r < total; ++r) {
    out.labels[r] = r / cfg.n_gen;
    out.pool_rows[r] = pool[rng.index(pool.size())];
  }
  const DiagGaussian qz = model.encode_z(Tensor::constant(pool_ds->gather(out.pool_rows)));
  const Tensor z = sample_reparam(qz, rng.normal_array({total, d_z}));

  out.features = model.decode_az_mean(Tensor::constant(std::move(a)), z).value();
  return out;
}

// ---- prototypes -----------------------------------------------------------

PrototypeSet prototype_estimate(const Array& samples, std::span<const std::size_t> labels, std::size_t classes,
                                double variance_floor, double fallback_variance) {
  if (samples.rank() != 2 || samples.rows() != labels.size()) {
    throw ShapeError("prototype_estimate: " + std::to_string(labels.size()) + " labels for samples of shape " +
                     shape_to_string(samples.shape()));
  }
  if (!(variance_floor > 0.0)) throw ContractError("variance floor must be > 0");
  const std::size_t d = samples.cols();
  PrototypeSet p;
  p.mean = Array::zeros({classes, d});
  p.variance = Array::zeros({classes, d});
  p.counts.assign(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ContractError("label " + std::to_string(labels[i]) + " out of range");
    auto row = samples.row(i);
    auto m = p.mean.row(labels[i]);
    for (std::size_t k = 0; k < d; ++k) m[k] += row[k];
    ++p.counts[labels[i]];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (p.counts[c] == 0) throw ContractError("class " + std::to_string(c) + " has no samples");
    for (double& v : p.mean.row(c)) v /= static_cast<double>(p.counts[c]);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = samples.row(i);
    auto m = p.mean.row(labels[i]);
    auto v = p.variance.row(labels[i]);
    for (std::size_t k = 0; k < d; ++k) v[k] += (row[k] - m[k]) * (row[k] - m[k]);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (double& v : p.variance.row(c)) {
      v = p.counts[c] >= 2 ? v / static_cast<double>(p.counts[c] - 1) : fallback_variance;
      v = std::max(v, variance_floor);
    }
  }
  return p;
}

PrototypeSet fuse_prototypes(const PrototypeSet& p, const PrototypeSet& q) {
  if (p.classes() != q.classes() || p.mean.shape() != q.mean.shape()) {
    throw ContractError("fuse_prototypes: class sets differ (" + shape_to_string(p.mean.shape()) + " vs " +
                        shape_to_string(q.mean.shape()) + ")");
  }
  PrototypeSet out;
  out.mean = Array::zeros(p.mean.shape());
  out.variance = Array::zeros(p.mean.shape());
  out.counts.resize(p.classes());
  for (std::size_t c = 0; c < p.classes(); ++c) out.counts[c] = p.counts[c] + q.counts[c];
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    const double wp = 1.0 / p.variance[i];
    const double wq = 1.0 / q.variance[i];
    out.mean[i] = (p.mean[i] * wp + q.mean[i] * wq) / (wp + wq);
    out.variance[i] = 1.0 / (wp + wq);
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<std::size_t> classify_queries(const PrototypeSet& protos, const Array& queries, Metric metric) {
  if (queries.rank() != 2 || queries.cols() != protos.mean.cols()) {
    throw ShapeError("queries of shape " + shape_to_string(queries.shape()) + " against prototypes of shape " +
                     shape_to_string(protos.mean.shape()));
  }
  std::vector<std::size_t> out(queries.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto q = queries.row(i);
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t c = 0; c < protos.classes(); ++c) {
      auto m = protos.mean.row(c);
      double score;
      if (metric == Metric::euclidean) {
        score = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k) score += (q[k] - m[k]) * (q[k] - m[k]);
      } else {
        score = -cosine_similarity(q, m);
      }
      // Strict comparison keeps the lowest index on ties.
      if (c == 0 || score < best_score) {
        best = c;
        best_score = score;
      }
    }
    out[i] = best;
  }
  return out;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw ContractError("accuracy: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// ---- evaluation -----------------------------------------------------------

Summary summarize_accuracies(std::vector<double> accuracies) {
  Summary s;
  if (accuracies.empty()) return s;
  std::sort(accuracies.begin(), accuracies.end());
  const double n = static_cast<double>(accuracies.size());
  for (double a : accuracies) s.mean += a;
  s.mean /= n;
  double ss = 0.0;
  for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(ss / n);
  s.ci95 = 1.96 * s.std / std::sqrt(n);
  return s;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"mode", r.mode},
          {"way", r.spec.way},
          {"shot", r.spec.shot},
          {"queries", r.spec.queries},
          {"episodes", r.spec.episodes},
          {"mean_accuracy", r.mean_accuracy},
          {"std_accuracy", r.std_accuracy},
          {"ci95", r.ci95},
          {"baseline_cosine", r.baseline_cosine},
          {"fused_cosine", r.fused_cosine},
          {"seed", r.seed},
          {"config", r.config}};
}

std::string accuracies_csv(const EvalReport& r) {
  std::string out = "episode,accuracy\n";
  char buf[64];
  for (std::size_t e = 0; e < r.accuracies.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e, r.accuracies[e]);
    out += buf;
  }
  return out;
}

namespace {

struct EpisodeResult {
  double accuracy = 0.0;
  double baseline_cosine = 0.0;
  double fused_cosine = 0.0;
};

double mean_cosine(const PrototypeSet& p, const Array& centroids, const Episode& ep) {
  double total = 0.0;
  for (std::size_t k = 0; k < ep.way; ++k) total += cosine_similarity(p.mean.row(k), centroids.row(ep.classes[k]));
  return total / static_cast<double>(ep.way);
}

}  // namespace

EvalReport eval_episodes(const DisGenModel& model, const Dataset& ds, const EvalSpec& spec,
                         const AugmentConfig& cfg_in, bool baseline, const PriorTable* priors, const Dataset* base,
                         std::uint64_t seed, std::size_t threads) {
  spec.validate();
  AugmentConfig cfg = cfg_in;
  cfg.validate();
  if (ds.dim() != model.dims().d_x) {
    throw ContractError("dataset d_x " + std::to_string(ds.dim()) + " differs from model d_x " +
                        std::to_string(model.dims().d_x));
  }
  if (!baseline && cfg.fallback_variance < 0.0) {
    if (base == nullptr) throw ConfigError("fallback variance needs a base dataset or an explicit value");
    cfg.fallback_variance = mean_within_class_variance(*base);
  }
  const Array centroids = class_centroids(ds);
  const Rng root(seed);

  std::vector<EpisodeResult> results(spec.episodes);
  auto run_one = [&](std::size_t e) {
    const std::uint64_t ep_seed = root.substream("episode", e).seed();
    const Episode ep = sample_episode(ds, spec.way, spec.shot, spec.queries, ep_seed);
    const Array support = ds.gather(ep.support_rows);
    const Array queries = ds.gather(ep.query_rows);
    const double fallback = baseline ? 1.0 : cfg.fallback_variance;
    const PrototypeSet p = prototype_estimate(support, ep.support_labels, ep.way, cfg.variance_floor, fallback);
    EpisodeResult r;
    r.baseline_cosine = mean_cosine(p, centroids, ep);
    if (baseline) {
      r.accuracy = accuracy(classify_queries(p, queries, cfg.metric), ep.query_labels);
      r.fused_cosine = r.baseline_cosine;
    } else {
      const GeneratedSet gen =
          generate_augmented(model, ds, ep, cfg, priors, base, mix_seed(ep_seed, 0x67656eULL));
      const PrototypeSet q = prototype_estimate(gen.features, gen.labels, ep.way, cfg.variance_floor, fallback);
      const PrototypeSet fused = fuse_prototypes(p, q);
      r.accuracy = accuracy(classify_queries(fused, queries, cfg.metric), ep.query_labels);
      r.fused_cosine = mean_cosine(fused, centroids, ep);
    }
    results[e] = r;
  };

  threads = std::max<std::size_t>(1, std::min(threads, spec.episodes));
  if (threads == 1) {
    for (std::size_t e = 0; e < spec.episodes; ++e) run_one(e);
  } else {
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t e = t; e < spec.episodes; e += threads) run_one(e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
  }

  EvalReport report;
  report.mode = baseline ? "baseline" : "augmented";
  report.spec = spec;
  report.seed = seed;
  report.accuracies.reserve(spec.episodes);
  std::vector<double> bcos, fcos;
  for (const auto& r : results) {
    report.accuracies.push_back(r.accuracy);
    bcos.push_back(r.baseline_cosine);
    fcos.push_back(r.fused_cosine);
  }
  const Summary s = summarize_accuracies(report.accuracies);
  report.mean_accuracy = s.mean;
  report.std_accuracy = s.std;
  report.ci95 = s.ci95;
  report.baseline_cosine = summarize_accuracies(bcos).mean;
  report.fused_cosine = summarize_accuracies(fcos).mean;
  report.config = to_json(cfg);
  report.config["baseline"] = baseline;
  return report;
}

}  // namespace dgib
