#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facml/gmm.hpp"
#include "facml/nn.hpp"

namespace facml {

// One-seed, three-strategy agreement check: per-iteration (or per-epoch)
// parameters must match within a relative tolerance.
struct VerifyConfig {
  std::string model = "gmm";  // "gmm" | "nn"
  std::uint64_t seed = 0;
  double tolerance = 1e-8;
  // gmm
  std::size_t k = 3;
  std::size_t iters = 20;
  // nn
  std::size_t epochs = 10;
  std::vector<std::size_t> hidden = {4};
  Activation activation = Activation::Sigmoid;
  double lr = 1e-3;
  // perturbs one factorized cache value to prove detection works
  double fault_injection = 0.0;
};

struct VerifyReport {
  std::string model;
  double tolerance = 0;
  bool pass = false;
  double max_rel_diff = 0;
  std::vector<double> per_iter_max_rel_diff;
  double gradient_max_rel_diff = 0;  // nn only

  nlohmann::json to_json() const;
};

VerifyReport verify_strategies(const JoinSpec& spec, Catalog& catalog, const VerifyConfig& config);

// |a-b| / max(1, |a|, |b|), the relative metric used throughout the
// agreement checks.
double rel_diff(double a, double b);

}  // namespace facml
