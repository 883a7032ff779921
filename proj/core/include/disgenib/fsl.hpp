#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disgenib/data.hpp"
#include "disgenib/model.hpp"

namespace dgib {

// Where the Z of a generated sample comes from.
//   transductive: support and query rows of the episode
//   support_only: support rows only
//   base_pool:    rows of a held-out base dataset
enum class ZPool { transductive, support_only, base_pool };
enum class Metric { euclidean, cosine };

std::string to_string(ZPool pool);
ZPool parse_z_pool(const std::string& name);
std::string to_string(Metric metric);
Metric parse_metric(const std::string& name);

struct AugmentConfig {
  ZPool pool = ZPool::transductive;
  std::size_t n_gen = 50;  // generated rows per episode class
  // A from the per-class prior N(a_c, sigma^2 I) instead of enc_a(support).
  bool use_prior = false;
  double variance_floor = 1e-4;
  // Variance used for classes with a single sample; negative means "derive
  // it from the base data" (mean within-class variance), see eval_episodes.
  double fallback_variance = -1.0;
  Metric metric = Metric::euclidean;

  void validate() const;
};

nlohmann::json to_json(const AugmentConfig& cfg);

struct GeneratedSet {
  Array features;                     // [way * n_gen, d_x]
  std::vector<std::size_t> labels;    // episode labels, n_gen per class
  std::vector<std::size_t> pool_rows; // rows the Z draws came from (audit)
  ZPool pool = ZPool::transductive;
};

// For each episode class and each of n_gen draws: A from enc_a of a random
// support row of that class (or from the prior), Z from enc_z of a random
// pool row, x' = dec_az mean. `priors` is indexed by dataset class id and
// `base` is required for base_pool. ContractError on an empty pool.
GeneratedSet generate_augmented(const DisGenModel& model, const Dataset& ds, const Episode& ep,
                                const AugmentConfig& cfg, const PriorTable* priors, const Dataset* base,
                                std::uint64_t seed);

struct PrototypeSet {
  Array mean;      // [classes, d]
  Array variance;  // [classes, d], every entry >= floor
  std::vector<std::size_t> counts;

  std::size_t classes() const { return counts.size(); }
};

// Per-class mean and unbiased per-dimension variance. Classes with a
// single sample get `fallback_variance`. All variances are floored.
PrototypeSet prototype_estimate(const Array& samples, std::span<const std::size_t> labels, std::size_t classes,
                                double variance_floor, double fallback_variance);

// Precision-weighted product of the two Gaussian estimates, per dimension.
PrototypeSet fuse_prototypes(const PrototypeSet& p, const PrototypeSet& q);

// Nearest prototype per query row; ties go to the lowest class index.
std::vector<std::size_t> classify_queries(const PrototypeSet& protos, const Array& queries, Metric metric);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct EvalSpec {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries = 15;
  std::size_t episodes = 600;

  void validate() const;
};

struct EvalReport {
  std::string mode;                 // "augmented" or "baseline"
  EvalSpec spec;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;        // population std over episodes
  double ci95 = 0.0;                // 1.96 * std / sqrt(episodes)
  std::vector<double> accuracies;   // episode order
  // Mean cosine between the prototypes and the class centroids of `ds`.
  double baseline_cosine = 0.0;
  double fused_cosine = 0.0;        // equals baseline_cosine in baseline mode
  std::uint64_t seed = 0;
  nlohmann::json config;
};

nlohmann::json to_json(const EvalReport& r);
// Header "episode,accuracy", one row per episode, values printed with 17
// significant digits so the CI can be recomputed exactly.
std::string accuracies_csv(const EvalReport& r);

// mean, population std and 1.96 * std / sqrt(n), computed over the sorted
// accuracies so the result does not depend on evaluation order.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double ci95 = 0.0;
};
Summary summarize_accuracies(std::vector<double> accuracies);

// Episode e uses seed substream ("episode", e). `baseline` skips generation
// and classifies with support prototypes. `threads` >= 1 workers evaluate
// disjoint episode ranges.
EvalReport eval_episodes(const DisGenModel& model, const Dataset& ds, const EvalSpec& spec,
                         const AugmentConfig& cfg, bool baseline, const PriorTable* priors, const Dataset* base,
                         std::uint64_t seed, std::size_t threads = 1);

}  // namespace dgib
