#pragma once

#include <cstdint>
#include <optional>

namespace facml {

// Page counts, table dimensions and abstract per-op costs feeding the
// analytic I/O and saving-rate models.
struct CostModelInputs {
  double pages_r = 1;
  double pages_s = 1;
  double pages_t = 1;
  double block_size = 16;
  double iters = 1;
  double n_s = 1;
  double n_r = 1;
  double d_s = 1;
  double d_r = 1;
  double tau_s = 1;  // subtraction cost
  double tau_m = 1;  // multiplication cost
};

struct IoCostResult {
  double m_cost = 0;  // join + materialize + 3 reads of T per iteration
  double s_cost = 0;  // 3 on-the-fly joins per iteration
  // Block size above which the streamed strategy reads fewer pages;
  // absent when the denominator is not positive (crossover unattainable).
  std::optional<double> crossover_block_size;
};

// m = |R| + (|R|/B)|S| + |T| + 3*iter*|T|;  s = 3*iter*(|R| + (|R|/B)|S|).
IoCostResult io_cost_model(const CostModelInputs& in);

// Fraction of Sigma-pass work removed by factorization:
// ((n_S/n_R - 1)(tau_s + d_R tau_m)) / ((n_S/n_R)(d_S/d_R + 1)(tau_s + d tau_m)).
double saving_rate(const CostModelInputs& in);

}  // namespace facml
