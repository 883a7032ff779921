#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "disgenib/tensor.hpp"

namespace dgib {

// Labeled feature matrix with optional ground-truth generating factors.
struct Dataset {
  Array features;                   // [n, d_x]
  std::vector<std::size_t> labels;  // n entries in [0, classes)
  std::vector<std::string> class_names;
  std::optional<Array> truth_a;     // [n, d_a] label factor per row
  std::optional<Array> truth_z;     // [n, d_z] style factor per row
  std::optional<Array> attributes;  // [classes, d_a]

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.cols() : 0; }
  std::size_t classes() const { return class_names.size(); }

  // ContractError on inconsistent row counts, labels >= classes, or an
  // attribute table whose row count differs from the class count.
  void validate() const;

  Array gather(std::span<const std::size_t> rows) const;
  std::vector<std::vector<std::size_t>> rows_by_class() const;
};

std::vector<std::string> default_class_names(std::size_t classes);

struct SynthConfig {
  std::size_t classes = 20;
  std::size_t n_per_class = 100;
  std::size_t d_x = 32;
  std::size_t d_a = 8;
  std::size_t d_z = 8;
  double noise_sigma = 0.1;
  std::size_t depth = 1;  // tanh mixing layers after the linear mix

  void validate() const;
};

// Per class c: a*_c ~ N(0, I). Per row: z* ~ N(0, I),
//   x = g(W_a a*_c + W_z z*) + eps,  eps ~ N(0, noise_sigma^2 I),
// where W_a, W_z are fixed random matrices and g applies `depth` fixed
// random tanh layers (identity when depth == 0). Rows are class-major.
// The a*_c vectors are stored both per row (truth_a) and per class
// (attributes).
Dataset synth_make(const SynthConfig& cfg, std::uint64_t seed);

struct BaseNovelSplit {
  Dataset base;
  Dataset novel;
  std::vector<std::size_t> base_classes;   // original ids, in new-label order
  std::vector<std::size_t> novel_classes;  // original ids, in new-label order
};

// Disjoint class partition. Both halves are re-indexed densely (preserving
// original id order); attribute rows travel with their classes.
BaseNovelSplit split_base_novel(const Dataset& ds, std::span<const std::size_t> novel_classes);

// The last `count` classes as the novel set.
std::vector<std::size_t> last_classes(std::size_t classes, std::size_t count);

struct Episode {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t queries = 0;
  std::vector<std::size_t> classes;  // dataset class id for each episode label
  std::vector<std::size_t> support_rows;
  std::vector<std::size_t> support_labels;  // in [0, way)
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> query_labels;
};

// Uniform class and row sampling without replacement, deterministic per seed.
Episode sample_episode(const Dataset& ds, std::size_t way, std::size_t shot, std::size_t queries, std::uint64_t seed);

// DGIBDS01 binary layout (little-endian):
//   magic "DGIBDS01"; u32 n, d_x, classes, flags, d_a, d_z      (32 bytes)
//   features n*d_x f32; labels n u32;
//   flags bit0: truth_a n*d_a f32; bit1: truth_z n*d_z f32;
//   bit2: attributes classes*d_a f32.
inline constexpr char kDatasetMagic[8] = {'D', 'G', 'I', 'B', 'D', 'S', '0', '1'};

std::vector<char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<char>& bytes);
void dataset_write(const Dataset& ds, const std::filesystem::path& path);
Dataset dataset_read(const std::filesystem::path& path);

// Features CSV: header row, one numeric column per feature plus the label
// column named `label_column` (any text). Classes are numbered in order of
// first appearance. Optional attributes CSV: header row, one numeric row
// per class in that same order.
Dataset csv_import(const std::filesystem::path& features_csv, const std::string& label_column,
                   const std::optional<std::filesystem::path>& attributes_csv = std::nullopt);

// Mean feature vector per class, [classes, d_x].
Array class_centroids(const Dataset& ds);

// Mean over classes of the per-dimension within-class variance.
double mean_within_class_variance(const Dataset& ds);

}  // namespace dgib
