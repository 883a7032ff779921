#include "disgenib/model.hpp"

#include <cmath>
#include <unordered_map>

#include "disgenib/errors.hpp"

namespace dgib {

void ModelDims::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model dimension '") + name + "' must be >= 1");
  };
  positive(d_x, "d_x");
  positive(d_a, "d_a");
  positive(d_z, "d_z");
  positive(hidden, "hidden");
  positive(classes, "classes");
}

void PriorTable::validate() const {
  if (attributes.rank() != 2 || attributes.rows() == 0) throw ContractError("prior table has no attribute rows");
  if (!attributes.all_finite()) throw ContractError("prior table holds non-finite attributes");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ContractError("prior spread must be finite and >= 0");
}

Array PriorTable::sample(std::span<const std::size_t> labels, Rng& rng) const {
  const std::size_t d = dim();
  Array out = Array::zeros({labels.size(), d});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes()) {
      throw ContractError("prior table has no row for class " + std::to_string(labels[i]));
    }
    for (std::size_t k = 0; k < d; ++k) out.at(i, k) = attributes.at(labels[i], k) + sigma * rng.normal();
  }
  return out;
}

DisGenModel DisGenModel::init(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng = Rng(seed).substream("init");
  DisGenModel m;
  m.dims_ = dims;
  m.enc_a_ = GaussianMlp(dims.d_x, dims.hidden, dims.layers, dims.d_a, rng);
  m.enc_z_ = GaussianMlp(dims.d_x, dims.hidden, dims.layers, dims.d_z, rng);
  m.dec_az_ = Mlp(dims.d_a + dims.d_z, dims.hidden, dims.layers, dims.d_x, rng);
  m.dec_yz_ = Mlp(dims.d_a + dims.d_z, dims.hidden, dims.layers, dims.d_x, rng);
  // Linear head: keeps A linearly separable by class.
  m.classifier_ = Mlp(dims.d_a, dims.hidden, 0, dims.classes, rng);
  m.label_embed_ = Tensor::parameter(rng.uniform_array({dims.classes, dims.d_a}, -1.0, 1.0));
  return m;
}

DisGenModel DisGenModel::clone() const {
  DisGenModel copy = init(dims_, 0);
  copy.load(snapshot());
  return copy;
}

namespace {

void require_width(const Tensor& t, std::size_t width, const char* what) {
  if (t.shape().size() != 2 || t.shape()[1] != width) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

DiagGaussian DisGenModel::encode_a(const Tensor& x) const {
  require_width(x, dims_.d_x, "encode_a");
  return enc_a_.condition(x);
}

DiagGaussian DisGenModel::encode_z(const Tensor& x) const {
  require_width(x, dims_.d_x, "encode_z");
  return enc_z_.condition(x);
}

Tensor DisGenModel::label_embedding(std::span<const std::size_t> labels) const {
  for (std::size_t y : labels) {
    if (y >= dims_.classes) {
      throw ContractError("unknown label index " + std::to_string(y) + " (model has " + std::to_string(dims_.classes) +
                          " classes)");
    }
  }
  return gather_rows(label_embed_, labels);
}

Tensor DisGenModel::decode_az_mean(const Tensor& a, const Tensor& z) const {
  require_width(a, dims_.d_a, "decode_az (a)");
  require_width(z, dims_.d_z, "decode_az (z)");
  return dec_az_.forward(concat_last({a, z}));
}

Tensor DisGenModel::decode_yz_mean(std::span<const std::size_t> labels, const Tensor& z) const {
  require_width(z, dims_.d_z, "decode_yz (z)");
  if (z.shape()[0] != labels.size()) throw ShapeError("decode_yz: label count differs from batch");
  return dec_yz_.forward(concat_last({label_embedding(labels), z}));
}

DiagGaussian fixed_variance_gaussian(const Tensor& mean, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma_rec must be > 0");
  return DiagGaussian(mean, Tensor::constant(Array::filled(mean.shape(), 2.0 * std::log(sigma))));
}

DiagGaussian DisGenModel::decode_az(const Tensor& a, const Tensor& z, double sigma_rec) const {
  return fixed_variance_gaussian(decode_az_mean(a, z), sigma_rec);
}

DiagGaussian DisGenModel::decode_yz(std::span<const std::size_t> labels, const Tensor& z, double sigma_rec) const {
  return fixed_variance_gaussian(decode_yz_mean(labels, z), sigma_rec);
}

Tensor DisGenModel::classify(const Tensor& a) const {
  require_width(a, dims_.d_a, "classify");
  return classifier_.forward(a);
}

std::vector<NamedTensor> DisGenModel::named_parameters() const {
  std::vector<NamedTensor> out;
  enc_a_.collect("enc_a", out);
  enc_z_.collect("enc_z", out);
  dec_az_.collect("dec_az", out);
  dec_yz_.collect("dec_yz", out);
  classifier_.collect("classifier", out);
  out.push_back({"label_embed", label_embed_});
  return out;
}

std::vector<Tensor> DisGenModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& n : named_parameters()) out.push_back(n.tensor);
  return out;
}

std::vector<NamedArray> DisGenModel::snapshot() const {
  std::vector<NamedArray> out;
  for (auto& n : named_parameters()) out.push_back({n.name, n.tensor.value()});
  return out;
}

void DisGenModel::load(const std::vector<NamedArray>& values) {
  std::unordered_map<std::string, const Array*> by_name;
  for (const auto& v : values) by_name[v.name] = &v.value;
  for (auto& n : named_parameters()) {
    auto it = by_name.find(n.name);
    if (it == by_name.end()) throw ContractError("missing parameter '" + n.name + "'");
    if (it->second->shape() != n.tensor.shape()) {
      throw ShapeError("parameter '" + n.name + "' has shape " + shape_to_string(it->second->shape()) +
                       ", model expects " + shape_to_string(n.tensor.shape()));
    }
    if (!it->second->all_finite()) throw NumericError("parameter '" + n.name + "' holds non-finite values");
    n.tensor.mutable_value() = *it->second;
  }
}

}  // namespace dgib
