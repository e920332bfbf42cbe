#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "facml/catalog.hpp"
#include "facml/join.hpp"

namespace facml {

// Parameters of one synthetic star-join dataset. `seed` fully determines
// the generated bytes; tuple ratio rr for table m is n_s / n_r[m].
struct SynthSpec {
  std::uint64_t n_s = 1000;
  std::vector<std::uint64_t> n_r = {100};
  std::size_t d_s = 5;
  std::vector<std::size_t> d_r = {15};
  std::size_t k_true = 3;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  bool with_target = false;
  std::uint64_t page_size_rows = kDefaultPageSizeRows;
  std::string prefix;  // catalog name prefix: <prefix>S, <prefix>R1, ...

  std::size_t q() const { return n_r.size(); }
  void validate() const;

  static SynthSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static SynthSpec load(const std::filesystem::path& path);
};

// Generator-side bookkeeping used by test oracles.
struct GenTruth {
  std::vector<std::uint32_t> component_of_s_row;
  std::vector<std::vector<std::uint32_t>> component_of_r_row;  // per table
  std::vector<std::vector<std::uint32_t>> multiplicity;        // per table: S rows per R ordinal
  std::vector<double> teacher;                                 // d+1 coefficients (bias last)
};

struct SynthResult {
  Relation s;
  std::vector<Relation> tables;
  JoinSpec join;
  GenTruth truth;
};

// Generates S and R_1..R_q into the catalog. Every R key is referenced at
// least once when n_s >= n_r; remaining FKs are drawn uniformly.
SynthResult gen_dataset(const SynthSpec& spec, Catalog& catalog);

// q == 1 / q >= 2 convenience fronts for gen_dataset.
SynthResult gen_binary(const SynthSpec& spec, Catalog& catalog);
SynthResult gen_multiway(const SynthSpec& spec, Catalog& catalog);

}  // namespace facml
