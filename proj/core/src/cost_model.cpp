#include "facml/cost_model.hpp"

#include "facml/errors.hpp"

namespace facml {

IoCostResult io_cost_model(const CostModelInputs& in) {
  if (in.pages_r <= 0 || in.pages_s <= 0 || in.pages_t <= 0 || in.block_size <= 0 || in.iters <= 0)
    throw ShapeError("cost model inputs must be positive");
  IoCostResult out;
  const double join_pages = in.pages_r + (in.pages_r / in.block_size) * in.pages_s;
  out.m_cost = join_pages + in.pages_t + 3.0 * in.iters * in.pages_t;
  out.s_cost = 3.0 * in.iters * join_pages;

  const double a = 3.0 * in.iters - 1.0;
  const double denom = (3.0 * in.iters + 1.0) * in.pages_t - a * in.pages_r;
  if (denom > 0) out.crossover_block_size = a * in.pages_r * in.pages_s / denom;
  return out;
}

double saving_rate(const CostModelInputs& in) {
  if (in.n_s < in.n_r) throw ShapeError("saving rate needs n_s >= n_r");
  if (in.n_r <= 0 || in.d_r <= 0 || in.d_s < 0) throw ShapeError("invalid saving rate inputs");
  const double rr = in.n_s / in.n_r;
  const double d = in.d_s + in.d_r;
  const double num = (rr - 1.0) * (in.tau_s + in.d_r * in.tau_m);
  const double den = rr * (in.d_s / in.d_r + 1.0) * (in.tau_s + d * in.tau_m);
  return num / den;
}

}  // namespace facml
