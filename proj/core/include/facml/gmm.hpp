#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "facml/data.hpp"
#include "facml/trace.hpp"

namespace facml {

enum class Strategy { Materialized, Streamed, Factorized };

Strategy strategy_from_string(const std::string& s);  // "m" | "s" | "f"
std::string to_string(Strategy s);

// Full-covariance mixture parameters over the joined feature space.
struct GmmParams {
  Eigen::VectorXd pi;                  // K mixing weights
  std::vector<Eigen::VectorXd> mu;     // K mean vectors of length d
  std::vector<Eigen::MatrixXd> sigma;  // K covariance matrices d x d

  std::size_t k() const { return mu.size(); }
  std::size_t dim() const { return mu.empty() ? 0 : static_cast<std::size_t>(mu[0].size()); }
};

// Feature-dimension split by table boundaries: widths[0] = d_S,
// widths[m] = d_{R_m}.
struct DimPartition {
  std::vector<std::size_t> widths;
  std::vector<std::size_t> offsets;  // offsets[i] = sum of widths[0..i)

  static DimPartition from_widths(std::vector<std::size_t> widths);
  std::size_t blocks() const { return widths.size(); }
  std::size_t total() const { return offsets.empty() ? 0 : offsets.back() + widths.back(); }
};

// Per-component inverse covariance with its table-boundary block tiling.
struct ComponentPrecision {
  Eigen::MatrixXd inv;  // I_k
  double log_det_sigma = 0;
  double log_norm = 0;  // -(d*log(2*pi) + log|Sigma|) / 2
  double ridge = 0;     // diagonal term actually added before factorization
  std::vector<std::vector<Eigen::MatrixXd>> block;  // block[m][n] = I_mn
};

struct Precisions {
  DimPartition partition;
  std::vector<ComponentPrecision> comp;
  std::uint64_t version = 0;  // parameter-state stamp for cache validation
};

struct RidgePolicy {
  double relative = 1e-6;  // times trace(Sigma)/d
  double max_relative = 1e-2;
  double escalation = 10.0;
};

// Cholesky-based inversion of every component covariance, with diagonal
// ridge escalation. Throws SingularCovariance when the ridge cap is hit.
Precisions precompute_precision(const GmmParams& params, const DimPartition& partition,
                                const RidgePolicy& ridge = {}, std::uint64_t version = 0);

// (x - mu)^T I (x - mu)
double quadform_direct(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& inv);

// Reusable per-(R tuple, component) intermediates of the factorized
// quadratic form.
struct RTupleCacheEntry {
  Eigen::VectorXd pd_r;   // x_R - mu_R
  double lr = 0;          // PD_R^T I_RR PD_R
  Eigen::VectorXd cross;  // I_SR * PD_R, length d_S
  std::uint64_t version = 0;
};

RTupleCacheEntry make_rtuple_cache(const Eigen::VectorXd& x_r, const GmmParams& params, std::size_t k,
                                   const Precisions& prec);

// UL + UR + LL + LR with UR = LL by symmetry: pd_s^T I_SS pd_s +
// 2 pd_s.cross + lr. Requires a cache entry stamped by the same precision
// version (StaleCache otherwise). Binary joins only.
double quadform_factorized(const Eigen::VectorXd& pd_s, const RTupleCacheEntry& entry,
                           const Precisions& prec, std::size_t k);

// Multi-way block sum over the (q+1) x (q+1) tiling of I_k:
// sum_ij pd_i^T I_ij pd_j.
double quadform_multiway(const std::vector<Eigen::VectorXd>& pd_blocks, const ComponentPrecision& prec);

// log N(x | mu, Sigma) given the quadratic form: log_norm - quadform/2.
double gaussian_logpdf(double quadform, const ComponentPrecision& prec);

struct Responsibilities {
  FeatureMatrix gamma;  // N x K, row-stochastic, indexed by S row ordinal
  Eigen::VectorXd n_k;  // per-component effective counts
};

using GmmData = DataSource;

// [d_S, d_R1, ...] for join inputs, a single block for bare T.
DimPartition data_partition(const DataSource& data);

struct GmmConfig {
  std::size_t k = 3;
  double tol = 1e-4;
  std::size_t max_iters = 100;
  std::uint64_t seed = 0;
  RidgePolicy ridge;
  double empty_component_fraction = 1e-10;  // N_k threshold, times N
  // Verification aid: added to one cached LR term in the factorized
  // E-step to prove the cross-strategy checker detects cache faults.
  double fault_injection = 0.0;
};

// One E-step over all N logical join rows; fills gamma (log-sum-exp in
// log space) and returns the data log-likelihood under `params`.
double estep(Strategy strategy, const GmmData& data, const GmmParams& params, const Precisions& prec,
             Responsibilities& resp, double fault_injection = 0.0);

struct MstepResult {
  GmmParams params;
  std::vector<std::size_t> empty_components;  // N_k below threshold; mu/sigma kept
};

// Two-pass M-step (mu first, then Sigma against the new mu).
MstepResult mstep(Strategy strategy, const GmmData& data, const Responsibilities& resp,
                  const GmmParams& params, double empty_fraction = 1e-10);

using GmmObserver = std::function<void(std::size_t iter, const GmmParams&, double loglik)>;

struct GmmTrainResult {
  GmmParams params;
  TrainTrace trace;
};

// EM until |delta log-likelihood| < tol or max_iters. For the Materialized
// strategy with a join input, T is materialized first and its cost recorded
// in the trace setup phase.
GmmTrainResult train_gmm(Strategy strategy, GmmData data, const GmmConfig& config,
                         Catalog* catalog = nullptr, const GmmObserver& observer = {});

// Seeded, strategy-independent initialization: uniform pi, mu from
// reservoir-sampled join rows, diagonal global-variance Sigma.
GmmParams init_gmm(const GmmData& data, std::size_t k, std::uint64_t seed);

}  // namespace facml
