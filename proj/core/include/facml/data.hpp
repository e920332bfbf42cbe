#pragma once

#include <optional>

#include "facml/join.hpp"

namespace facml {

// Input for the three training strategies: Materialized reads `t`;
// Streamed and Factorized read `join`. Verification harnesses populate
// both so every strategy sees identical bytes.
struct DataSource {
  std::optional<Relation> t;
  std::optional<StarJoin> join;

  std::uint64_t n_rows() const;
  std::uint64_t block_size_pages() const;
  std::vector<std::size_t> partition_widths() const;  // [d_S, d_R1, ...] or [d_T]
};

}  // namespace facml
