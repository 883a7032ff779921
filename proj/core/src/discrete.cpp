#include "disgenib/discrete.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "disgenib/errors.hpp"

namespace dgib {

namespace {

std::vector<std::size_t> strides_of(const std::vector<std::size_t>& cards) {
  std::vector<std::size_t> s(cards.size(), 1);
  for (std::size_t i = cards.size(); i-- > 1;) s[i - 1] = s[i] * cards[i];
  return s;
}

// Index into the marginal table of `vars` for joint flat index `flat`.
std::size_t marginal_index(std::size_t flat, const std::vector<std::size_t>& cards,
                           const std::vector<std::size_t>& strides, std::span<const std::size_t> vars) {
  std::size_t idx = 0;
  for (std::size_t v : vars) idx = idx * cards[v] + (flat / strides[v]) % cards[v];
  return idx;
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::vector<std::size_t> cardinalities, std::vector<double> probabilities)
    : cards_(std::move(cardinalities)), probs_(std::move(probabilities)) {
  if (cards_.empty() || cards_.size() > 3) throw ContractError("DiscreteJoint supports 1 to 3 variables");
  std::size_t n = 1;
  for (std::size_t c : cards_) {
    if (c == 0) throw ContractError("DiscreteJoint: empty alphabet");
    n *= c;
  }
  if (probs_.size() != n) {
    throw ContractError("DiscreteJoint: " + std::to_string(probs_.size()) + " entries for " + std::to_string(n) +
                        " outcomes");
  }
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ContractError("DiscreteJoint: negative or non-finite entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ContractError("DiscreteJoint: entries sum to " + std::to_string(total) + ", not 1");
  }
}

double DiscreteJoint::at(std::span<const std::size_t> outcome) const {
  if (outcome.size() != cards_.size()) throw ContractError("DiscreteJoint::at: wrong outcome arity");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < outcome.size(); ++i) {
    if (outcome[i] >= cards_[i]) throw ContractError("DiscreteJoint::at: outcome out of range");
    idx = idx * cards_[i] + outcome[i];
  }
  return probs_[idx];
}

std::vector<double> DiscreteJoint::marginal(std::span<const std::size_t> vars) const {
  std::size_t n = 1;
  for (std::size_t v : vars) {
    if (v >= cards_.size()) throw ContractError("DiscreteJoint::marginal: variable out of range");
    n *= cards_[v];
  }
  const auto strides = strides_of(cards_);
  std::vector<double> out(n, 0.0);
  for (std::size_t f = 0; f < probs_.size(); ++f) out[marginal_index(f, cards_, strides, vars)] += probs_[f];
  return out;
}

std::string DiscreteJoint::to_json() const {
  nlohmann::json j;
  j["cardinalities"] = cards_;
  j["probabilities"] = probs_;
  return j.dump();
}

DiscreteJoint DiscreteJoint::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    return DiscreteJoint(j.at("cardinalities").get<std::vector<std::size_t>>(),
                         j.at("probabilities").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("DiscreteJoint JSON: ") + e.what());
  }
}

double discrete_mi(const DiscreteJoint& joint, std::span<const std::size_t> u_vars,
                   std::span<const std::size_t> v_vars) {
  if (u_vars.empty() || v_vars.empty()) throw ContractError("discrete_mi: empty variable group");
  for (std::size_t u : u_vars)
    for (std::size_t v : v_vars)
      if (u == v) throw ContractError("discrete_mi: variable groups overlap");

  std::vector<std::size_t> both(u_vars.begin(), u_vars.end());
  both.insert(both.end(), v_vars.begin(), v_vars.end());
  const auto p_uv = joint.marginal(both);
  const auto p_u = joint.marginal(u_vars);
  const auto p_v = joint.marginal(v_vars);
  const std::size_t nv = p_v.size();
  double mi = 0.0;
  for (std::size_t iu = 0; iu < p_u.size(); ++iu) {
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const double p = p_uv[iu * nv + iv];
      if (p > 0.0) mi += p * std::log(p / (p_u[iu] * p_v[iv]));
    }
  }
  return mi;
}

double chain_identity_residual(const DiscreteJoint& xyz) {
  if (xyz.variables() != 3) throw ContractError("chain_identity_residual needs a joint over (X, Y, Z)");
  const auto& c = xyz.cardinalities();
  const std::vector<std::size_t> x{0}, y{1}, z{2}, xy{0, 1}, xz{0, 2}, yz{1, 2};
  const auto px = xyz.marginal(x);
  const auto pxy = xyz.marginal(xy);
  const auto pxz = xyz.marginal(xz);
  // Markov through X  <=>  P(x,y,z) P(x) = P(x,y) P(x,z).
  for (std::size_t i = 0; i < c[0]; ++i)
    for (std::size_t j = 0; j < c[1]; ++j)
      for (std::size_t k = 0; k < c[2]; ++k) {
        const std::size_t o[3] = {i, j, k};
        const double lhs = xyz.at(o) * px[i];
        const double rhs = pxy[i * c[1] + j] * pxz[i * c[2] + k];
        if (std::abs(lhs - rhs) > 1e-10) {
          throw ContractError("chain_identity_residual: joint does not factorize as P(X)P(Y|X)P(Z|X)");
        }
      }
  const double i_yz = discrete_mi(xyz, y, z);
  const double i_xz = discrete_mi(xyz, x, z);
  const double i_xy = discrete_mi(xyz, x, y);
  const double i_x_yz = discrete_mi(xyz, x, yz);
  return std::abs(i_yz - i_xz - i_xy + i_x_yz);
}

double lemma2_slack(const DiscreteJoint& yaz) {
  if (yaz.variables() != 3) throw ContractError("lemma2_slack needs a joint over (Y, A, Z)");
  const auto& c = yaz.cardinalities();
  const std::vector<std::size_t> y{0}, a{1}, z{2}, ya{0, 1};
  const auto pya = yaz.marginal(ya);
  for (std::size_t ia = 0; ia < c[1]; ++ia) {
    std::size_t support = 0;
    for (std::size_t iy = 0; iy < c[0]; ++iy)
      if (pya[iy * c[1] + ia] > 0.0) ++support;
    if (support > 1) throw ContractError("lemma2_slack: Y is not a function of A");
  }
  return discrete_mi(yaz, a, z) - discrete_mi(yaz, y, z);
}

}  // namespace dgib
