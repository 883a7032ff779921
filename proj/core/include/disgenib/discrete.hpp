#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dgib {

// Probability table over up to three finite variables, row-major in variable
// order (last variable fastest).
class DiscreteJoint {
 public:
  // Validates: 1..3 variables, non-empty alphabets, entries >= 0 summing to 1
  // within 1e-12. Throws ContractError otherwise.
  DiscreteJoint(std::vector<std::size_t> cardinalities, std::vector<double> probabilities);

  const std::vector<std::size_t>& cardinalities() const { return cards_; }
  const std::vector<double>& probabilities() const { return probs_; }
  std::size_t variables() const { return cards_.size(); }

  double at(std::span<const std::size_t> outcome) const;
  // Marginal over the listed variables, in listed order.
  std::vector<double> marginal(std::span<const std::size_t> vars) const;

  std::string to_json() const;
  static DiscreteJoint from_json(const std::string& text);

 private:
  std::vector<std::size_t> cards_;
  std::vector<double> probs_;
};

// Exact I(U;V) in nats, where U and V are disjoint groups of variables.
// 0 log 0 is taken as 0.
double discrete_mi(const DiscreteJoint& joint, std::span<const std::size_t> u_vars,
                   std::span<const std::size_t> v_vars);

// |I(Y;Z) - I(X;Z) - I(X;Y) + I(X;Y,Z)| for a joint over (X, Y, Z) that
// factorizes as P(X)P(Y|X)P(Z|X) (checked within 1e-10; ContractError
// otherwise).
double chain_identity_residual(const DiscreteJoint& xyz);

// I(A;Z) - I(Y;Z) for a joint over (Y, A, Z) in which Y is a deterministic
// function of A (ContractError otherwise).
double lemma2_slack(const DiscreteJoint& yaz);

}  // namespace dgib
