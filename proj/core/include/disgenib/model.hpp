#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "disgenib/gauss.hpp"
#include "disgenib/nn.hpp"
#include "disgenib/rng.hpp"
#include "disgenib/tensor.hpp"

namespace dgib {

struct NamedArray {
  std::string name;
  Array value;
};

struct ModelDims {
  std::size_t d_x = 0;
  std::size_t d_a = 16;
  std::size_t d_z = 16;
  std::size_t hidden = 128;
  std::size_t layers = 2;  // hidden layers per encoder/decoder
  std::size_t classes = 0;

  void validate() const;  // ConfigError on any zero dimension
};

// Per-class Gaussian prior over the label-related representation:
// A | y=c ~ N(attributes[c], sigma^2 I).
struct PriorTable {
  Array attributes;  // [classes, d_a]
  double sigma = 0.0;

  std::size_t classes() const { return attributes.rank() == 2 ? attributes.rows() : 0; }
  std::size_t dim() const { return attributes.rank() == 2 ? attributes.cols() : 0; }
  void validate() const;
  // One draw per label; ContractError when a label has no row.
  Array sample(std::span<const std::size_t> labels, Rng& rng) const;
};

// The five networks: encoders q(A|X), q(Z|X); decoders q(X|A,Z), q(X|Y,Z);
// classifier q(Y|A); plus the label embedding that feeds q(X|Y,Z).
//
// Parameters are shared handles, so the model is move-only; use clone() for
// an independent copy.
class DisGenModel {
 public:
  static DisGenModel init(const ModelDims& dims, std::uint64_t seed);

  DisGenModel(DisGenModel&&) = default;
  DisGenModel& operator=(DisGenModel&&) = default;
  DisGenModel(const DisGenModel&) = delete;
  DisGenModel& operator=(const DisGenModel&) = delete;

  DisGenModel clone() const;

  const ModelDims& dims() const { return dims_; }

  DiagGaussian encode_a(const Tensor& x) const;
  DiagGaussian encode_z(const Tensor& x) const;

  Tensor label_embedding(std::span<const std::size_t> labels) const;

  Tensor decode_az_mean(const Tensor& a, const Tensor& z) const;
  Tensor decode_yz_mean(std::span<const std::size_t> labels, const Tensor& z) const;
  // Decoders emit a mean with fixed log-variance 2 ln(sigma_rec).
  DiagGaussian decode_az(const Tensor& a, const Tensor& z, double sigma_rec) const;
  DiagGaussian decode_yz(std::span<const std::size_t> labels, const Tensor& z, double sigma_rec) const;

  Tensor classify(const Tensor& a) const;

  const GaussianMlp& enc_a() const { return enc_a_; }
  const GaussianMlp& enc_z() const { return enc_z_; }
  const Mlp& dec_az() const { return dec_az_; }
  const Mlp& dec_yz() const { return dec_yz_; }
  const Mlp& classifier() const { return classifier_; }
  const Tensor& label_table() const { return label_embed_; }

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<NamedArray> snapshot() const;
  // Copies values by name; every parameter must be present with its shape.
  void load(const std::vector<NamedArray>& values);

 private:
  DisGenModel() = default;

  ModelDims dims_;
  GaussianMlp enc_a_;
  GaussianMlp enc_z_;
  Mlp dec_az_;
  Mlp dec_yz_;
  Mlp classifier_;
  Tensor label_embed_;
};

DiagGaussian fixed_variance_gaussian(const Tensor& mean, double sigma);

}  // namespace dgib
