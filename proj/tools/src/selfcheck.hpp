#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dgib::cli {

// Deliberate defects the selfcheck can inject to prove a suite has teeth.
enum class Mutation { none, vclub_sign };

Mutation parse_mutation(const std::string& name);  // "none", "vclub-sign"

struct SuiteReport {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  double seconds = 0.0;
  nlohmann::json failures = nlohmann::json::array();  // one object per failing case
  std::string summary;                                // worst observed value etc.
};

// Fixed order: gradients, kl-oracle, chain-identity, nuisance-slack, vclub-gaussian,
// reductions, alpha-prime.
const std::vector<std::string>& selfcheck_suites();

SuiteReport run_selfcheck_suite(const std::string& name, Mutation mutation = Mutation::none);

// Prints one line per suite and any failing cases as JSON. Returns the exit
// code (0 all pass, 1 otherwise).
int cmd_selfcheck(Mutation mutation, std::ostream& out);

// Trains a 1-d conditional Gaussian approximator q(v|x) on fresh batches of
// the standard bivariate normal pair with correlation rho, then returns the
// vCLUB estimate on a fresh batch. With Mutation::vclub_sign the negative
// term enters with the wrong sign.
struct VclubRun {
  double estimate = 0.0;
  double final_nll = 0.0;
};
VclubRun vclub_gaussian_run(double rho, std::uint64_t seed, std::size_t steps = 2000, std::size_t batch = 512,
                            Mutation mutation = Mutation::none);

}  // namespace dgib::cli
