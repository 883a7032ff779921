#include "disgenib/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "disgenib/checkpoint.hpp"
#include "disgenib/errors.hpp"
#include "disgenib/rng.hpp"

namespace dgib {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// ---- Dataset --------------------------------------------------------------

std::vector<std::string> default_class_names(std::size_t classes) {
  std::vector<std::string> names;
  names.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class_%03zu", c);
    names.emplace_back(buf);
  }
  return names;
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (features.rank() != 2 || features.rows() != n) {
    throw ContractError("dataset features have shape " + shape_to_string(features.shape()) + " for " +
                        std::to_string(n) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= classes()) {
      throw ContractError("label " + std::to_string(y) + " out of range for " + std::to_string(classes()) + " classes");
    }
  }
  if (truth_a && (truth_a->rank() != 2 || truth_a->rows() != n)) throw ContractError("truth_a row count mismatch");
  if (truth_z && (truth_z->rank() != 2 || truth_z->rows() != n)) throw ContractError("truth_z row count mismatch");
  if (attributes && (attributes->rank() != 2 || attributes->rows() != classes())) {
    throw ContractError("attribute table has " +
                        std::to_string(attributes->rank() == 2 ? attributes->rows() : 0) + " rows for " +
                        std::to_string(classes()) + " classes");
  }
}

Array Dataset::gather(std::span<const std::size_t> rows) const {
  const std::size_t d = dim();
  Array out = Array::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw ContractError("row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(features.row(rows[i]).begin(), d, out.row(i).begin());
  }
  return out;
}

std::vector<std::vector<std::size_t>> Dataset::rows_by_class() const {
  std::vector<std::vector<std::size_t>> out(classes());
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

// ---- synthetic fixture ----------------------------------------------------

void SynthConfig::validate() const {
  if (classes < 1 || n_per_class < 1 || d_x < 1 || d_a < 1 || d_z < 1) {
    throw ConfigError("synthetic data counts and dimensions must be >= 1");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
}

namespace {

Array random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Array m = rng.normal_array({rows, cols});
  for (double& v : m.data()) v *= stddev;
  return m;
}

// y = M v for M [rows, cols].
void matvec(const Array& m, std::span<const double> v, std::span<double> y) {
  const std::size_t cols = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += m.at(r, c) * v[c];
    y[r] += acc;
  }
}

}  // namespace

Dataset synth_make(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng root(seed);
  Rng attr_rng = root.substream("attributes");
  Rng mix_rng = root.substream("mixing");
  Rng style_rng = root.substream("style");
  Rng noise_rng = root.substream("noise");

  const Array w_a = random_matrix(mix_rng, cfg.d_x, cfg.d_a, 1.0 / std::sqrt(static_cast<double>(cfg.d_a)));
  const Array w_z = random_matrix(mix_rng, cfg.d_x, cfg.d_z, 1.0 / std::sqrt(static_cast<double>(cfg.d_z)));
  std::vector<Array> layers;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    layers.push_back(random_matrix(mix_rng, cfg.d_x, cfg.d_x, 1.0 / std::sqrt(static_cast<double>(cfg.d_x))));
  }
  const Array attributes = attr_rng.normal_array({cfg.classes, cfg.d_a});

  const std::size_t n = cfg.classes * cfg.n_per_class;
  Dataset ds;
  ds.features = Array::zeros({n, cfg.d_x});
  ds.truth_a = Array::zeros({n, cfg.d_a});
  ds.truth_z = Array::zeros({n, cfg.d_z});
  ds.labels.resize(n);
  ds.class_names = default_class_names(cfg.classes);

  std::vector<double> h(cfg.d_x), next(cfg.d_x);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t i = 0; i < cfg.n_per_class; ++i, ++row) {
      ds.labels[row] = c;
      auto a = ds.truth_a->row(row);
      std::copy_n(attributes.row(c).begin(), cfg.d_a, a.begin());
      auto z = ds.truth_z->row(row);
      for (double& v : z) v = style_rng.normal();

      std::fill(h.begin(), h.end(), 0.0);
      matvec(w_a, a, h);
      matvec(w_z, z, h);
      for (const Array& m : layers) {
        std::fill(next.begin(), next.end(), 0.0);
        matvec(m, h, next);
        for (std::size_t k = 0; k < cfg.d_x; ++k) h[k] = std::tanh(next[k]);
      }
      auto x = ds.features.row(row);
      for (std::size_t k = 0; k < cfg.d_x; ++k) x[k] = h[k] + cfg.noise_sigma * noise_rng.normal();
    }
  }
  ds.attributes = attributes;
  // Stored values are kept at f32 precision so the dataset equals its file
  // round-trip exactly.
  for (Array* block : {&ds.features, &*ds.truth_a, &*ds.truth_z, &*ds.attributes}) {
    for (double& v : block->data()) v = static_cast<double>(static_cast<float>(v));
  }
  ds.validate();
  return ds;
}

// ---- splits and episodes --------------------------------------------------

namespace {

Array gather_matrix_rows(const Array& m, std::span<const std::size_t> rows) {
  const std::size_t d = m.cols();
  Array out = Array::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), d, out.row(i).begin());
  return out;
}

Dataset subset_by_classes(const Dataset& ds, const std::vector<std::size_t>& classes) {
  std::vector<std::size_t> remap(ds.classes(), SIZE_MAX);
  for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = i;
  std::vector<std::size_t> rows;
  Dataset out;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (remap[ds.labels[r]] != SIZE_MAX) {
      rows.push_back(r);
      out.labels.push_back(remap[ds.labels[r]]);
    }
  }
  out.features = ds.gather(rows);
  for (std::size_t c : classes) out.class_names.push_back(ds.class_names[c]);
  if (ds.truth_a) out.truth_a = gather_matrix_rows(*ds.truth_a, rows);
  if (ds.truth_z) out.truth_z = gather_matrix_rows(*ds.truth_z, rows);
  if (ds.attributes) out.attributes = gather_matrix_rows(*ds.attributes, classes);
  return out;
}

}  // namespace

std::vector<std::size_t> last_classes(std::size_t classes, std::size_t count) {
  if (count == 0 || count >= classes) {
    throw ConfigError("novel class count must be in [1, " + std::to_string(classes) + ")");
  }
  std::vector<std::size_t> out;
  for (std::size_t c = classes - count; c < classes; ++c) out.push_back(c);
  return out;
}

BaseNovelSplit split_base_novel(const Dataset& ds, std::span<const std::size_t> novel_classes) {
  if (novel_classes.empty()) throw ConfigError("novel class list is empty");
  std::vector<bool> is_novel(ds.classes(), false);
  for (std::size_t c : novel_classes) {
    if (c >= ds.classes()) throw ConfigError("novel class " + std::to_string(c) + " does not exist");
    if (is_novel[c]) throw ConfigError("novel class " + std::to_string(c) + " listed twice");
    is_novel[c] = true;
  }
  if (novel_classes.size() >= ds.classes()) throw ConfigError("at least one base class must remain");
  BaseNovelSplit split;
  for (std::size_t c = 0; c < ds.classes(); ++c) (is_novel[c] ? split.novel_classes : split.base_classes).push_back(c);
  split.base = subset_by_classes(ds, split.base_classes);
  split.novel = subset_by_classes(ds, split.novel_classes);
  return split;
}

Episode sample_episode(const Dataset& ds, std::size_t way, std::size_t shot, std::size_t queries, std::uint64_t seed) {
  if (way < 1 || shot < 1) throw ContractError("episode needs way >= 1 and shot >= 1");
  if (ds.classes() < way) {
    throw ContractError("episode needs " + std::to_string(way) + " classes, dataset has " +
                        std::to_string(ds.classes()));
  }
  Rng rng(seed);
  std::vector<std::size_t> pool(ds.classes());
  for (std::size_t c = 0; c < pool.size(); ++c) pool[c] = c;
  // Partial Fisher-Yates: first `way` entries are a uniform sample.
  for (std::size_t i = 0; i < way; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);

  const auto by_class = ds.rows_by_class();
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries = queries;
  ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(way));
  for (std::size_t k = 0; k < way; ++k) {
    std::vector<std::size_t> rows = by_class[ep.classes[k]];
    if (rows.size() < shot + queries) {
      throw ContractError("class '" + ds.class_names[ep.classes[k]] + "' has " + std::to_string(rows.size()) +
                          " rows, episode needs " + std::to_string(shot + queries));
    }
    for (std::size_t i = 0; i < shot + queries; ++i) std::swap(rows[i], rows[i + rng.index(rows.size() - i)]);
    for (std::size_t i = 0; i < shot; ++i) {
      ep.support_rows.push_back(rows[i]);
      ep.support_labels.push_back(k);
    }
    for (std::size_t i = shot; i < shot + queries; ++i) {
      ep.query_rows.push_back(rows[i]);
      ep.query_labels.push_back(k);
    }
  }
  return ep;
}

// ---- binary format --------------------------------------------------------

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + 4);
}

void put_f32_block(std::vector<char>& out, const Array& a) {
  for (double v : a.data()) {
    const auto f = static_cast<float>(v);
    const char* p = reinterpret_cast<const char*>(&f);
    out.insert(out.end(), p, p + 4);
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("dataset truncated reading ") + what + " at byte offset " +
                        std::to_string(bytes_.size()) + " (needed " + std::to_string(pos_ + n) + ")");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  Array f32_block(std::size_t rows, std::size_t cols, const char* what) {
    const std::size_t n = rows * cols;
    need(4 * n, what);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes_.data() + pos_ + 4 * i, 4);
      if (!std::isfinite(f)) throw FormatError(std::string("non-finite value in ") + what + " at byte offset " +
                                               std::to_string(pos_ + 4 * i));
      data[i] = f;
    }
    pos_ += 4 * n;
    return Array({rows, cols}, std::move(data));
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_dataset(const Dataset& ds) {
  ds.validate();
  std::uint32_t flags = 0;
  std::size_t d_a = 0, d_z = 0;
  if (ds.truth_a) {
    flags |= 1u;
    d_a = ds.truth_a->cols();
  }
  if (ds.truth_z) {
    flags |= 2u;
    d_z = ds.truth_z->cols();
  }
  if (ds.attributes) {
    flags |= 4u;
    if (ds.truth_a && ds.attributes->cols() != d_a) throw ContractError("attribute width differs from truth_a width");
    d_a = ds.attributes->cols();
  }
  std::vector<char> out(kDatasetMagic, kDatasetMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(ds.size()));
  put_u32(out, static_cast<std::uint32_t>(ds.dim()));
  put_u32(out, static_cast<std::uint32_t>(ds.classes()));
  put_u32(out, flags);
  put_u32(out, static_cast<std::uint32_t>(d_a));
  put_u32(out, static_cast<std::uint32_t>(d_z));
  put_f32_block(out, ds.features);
  for (std::size_t y : ds.labels) put_u32(out, static_cast<std::uint32_t>(y));
  if (ds.truth_a) put_f32_block(out, *ds.truth_a);
  if (ds.truth_z) put_f32_block(out, *ds.truth_z);
  if (ds.attributes) put_f32_block(out, *ds.attributes);
  return out;
}

Dataset decode_dataset(const std::vector<char>& bytes) {
  Reader r(bytes);
  r.need(8, "magic");
  if (std::memcmp(bytes.data(), kDatasetMagic, 8) != 0) throw FormatError("bad dataset magic at byte offset 0");
  r.skip(8);
  const std::size_t n = r.u32("n");
  const std::size_t d_x = r.u32("d_x");
  const std::size_t classes = r.u32("classes");
  const std::uint32_t flags = r.u32("flags");
  const std::size_t d_a = r.u32("d_a");
  const std::size_t d_z = r.u32("d_z");
  if (flags & ~7u) throw FormatError("unknown dataset flag bits at byte offset 20");

  Dataset ds;
  ds.features = r.f32_block(n, d_x, "features");
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.pos();
    ds.labels[i] = r.u32("labels");
    if (ds.labels[i] >= classes) {
      throw FormatError("label out of range at byte offset " + std::to_string(at));
    }
  }
  if (flags & 1u) ds.truth_a = r.f32_block(n, d_a, "truth_a");
  if (flags & 2u) ds.truth_z = r.f32_block(n, d_z, "truth_z");
  if (flags & 4u) ds.attributes = r.f32_block(classes, d_a, "attributes");
  if (r.pos() != bytes.size()) {
    throw FormatError("trailing bytes after dataset payload at byte offset " + std::to_string(r.pos()));
  }
  ds.class_names = default_class_names(classes);
  ds.validate();
  return ds;
}

void dataset_write(const Dataset& ds, const std::filesystem::path& path) { write_file_bytes(path, encode_dataset(ds)); }

Dataset dataset_read(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

// ---- CSV ------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& cell, std::size_t line_no, const std::string& file) {
  if (cell.empty()) throw ParseError(file + ":" + std::to_string(line_no) + ": empty cell");
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || !std::isfinite(v)) {
    throw ParseError(file + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " cells, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw ParseError(path.string() + ":1: missing header row");
  return t;
}

}  // namespace

Dataset csv_import(const std::filesystem::path& features_csv, const std::string& label_column,
                   const std::optional<std::filesystem::path>& attributes_csv) {
  const CsvTable t = read_csv(features_csv);
  const auto it = std::find(t.header.begin(), t.header.end(), label_column);
  if (it == t.header.end()) throw ParseError(features_csv.string() + ":1: no column named '" + label_column + "'");
  const std::size_t label_col = static_cast<std::size_t>(it - t.header.begin());
  const std::size_t d = t.header.size() - 1;
  if (d == 0) throw ParseError(features_csv.string() + ":1: no feature columns");

  Dataset ds;
  std::map<std::string, std::size_t> class_ids;
  std::vector<double> values;
  values.reserve(t.rows.size() * d);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& cells = t.rows[r];
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) continue;
      values.push_back(parse_number(cells[c], t.line_numbers[r], features_csv.string()));
    }
    const std::string& name = cells[label_col];
    auto [pos, inserted] = class_ids.emplace(name, ds.class_names.size());
    if (inserted) ds.class_names.push_back(name);
    ds.labels.push_back(pos->second);
  }
  ds.features = Array({t.rows.size(), d}, std::move(values));

  if (attributes_csv) {
    const CsvTable at = read_csv(*attributes_csv);
    if (at.rows.size() != ds.classes()) {
      throw ContractError("attributes CSV has " + std::to_string(at.rows.size()) + " rows for " +
                          std::to_string(ds.classes()) + " classes");
    }
    std::vector<double> attr;
    for (std::size_t r = 0; r < at.rows.size(); ++r)
      for (const auto& cell : at.rows[r]) attr.push_back(parse_number(cell, at.line_numbers[r], attributes_csv->string()));
    ds.attributes = Array({at.rows.size(), at.header.size()}, std::move(attr));
  }
  ds.validate();
  return ds;
}

// ---- statistics -----------------------------------------------------------

Array class_centroids(const Dataset& ds) {
  const std::size_t d = ds.dim();
  Array out = Array::zeros({ds.classes(), d});
  std::vector<std::size_t> counts(ds.classes(), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    auto dst = out.row(ds.labels[i]);
    for (std::size_t k = 0; k < d; ++k) dst[k] += row[k];
    ++counts[ds.labels[i]];
  }
  for (std::size_t c = 0; c < ds.classes(); ++c) {
    if (counts[c] == 0) throw ContractError("class '" + ds.class_names[c] + "' has no rows");
    for (double& v : out.row(c)) v /= static_cast<double>(counts[c]);
  }
  return out;
}

double mean_within_class_variance(const Dataset& ds) {
  const Array centroids = class_centroids(ds);
  const std::size_t d = ds.dim();
  std::vector<double> per_class(ds.classes(), 0.0);
  std::vector<std::size_t> counts(ds.classes(), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t c = ds.labels[i];
    auto row = ds.features.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = row[k] - centroids.at(c, k);
      per_class[c] += diff * diff;
    }
    ++counts[c];
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < ds.classes(); ++c) {
    if (counts[c] < 2) continue;
    total += per_class[c] / (static_cast<double>(counts[c] - 1) * static_cast<double>(d));
    ++used;
  }
  if (used == 0) throw ContractError("within-class variance needs a class with at least 2 rows");
  return total / static_cast<double>(used);
}

}  // namespace dgib
