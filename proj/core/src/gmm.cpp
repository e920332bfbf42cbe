#include "facml/gmm.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <random>

#include "facml/counters.hpp"
#include "facml/errors.hpp"

namespace facml {

Strategy strategy_from_string(const std::string& s) {
  if (s == "m" || s == "materialized") return Strategy::Materialized;
  if (s == "s" || s == "streamed") return Strategy::Streamed;
  if (s == "f" || s == "factorized") return Strategy::Factorized;
  throw UsageError("unknown strategy '" + s + "' (expected m, s or f)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Materialized: return "m";
    case Strategy::Streamed: return "s";
    case Strategy::Factorized: return "f";
  }
  return "?";
}

DimPartition DimPartition::from_widths(std::vector<std::size_t> widths) {
  DimPartition p;
  p.widths = std::move(widths);
  p.offsets.resize(p.widths.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < p.widths.size(); ++i) {
    p.offsets[i] = off;
    off += p.widths[i];
  }
  return p;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::MatrixXd ridged_llt(const Eigen::MatrixXd& sigma, const RidgePolicy& policy, double& used,
                           Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto d = sigma.rows();
  const double tr = sigma.trace();
  const double base = tr > 0 ? tr / static_cast<double>(d) : 1.0;
  double rel = policy.relative;
  while (true) {
    used = rel * base;
    Eigen::MatrixXd reg = sigma + used * Eigen::MatrixXd::Identity(d, d);
    llt.compute(reg);
    if (llt.info() == Eigen::Success) {
      // LLT can "succeed" on near-singular input; insist on positive pivots.
      if ((llt.matrixLLT().diagonal().array() > 0).all()) return reg;
    }
    if (rel >= policy.max_relative) break;
    rel = std::min(rel * policy.escalation, policy.max_relative);
  }
  throw SingularCovariance("component covariance not SPD after ridge escalation to " +
                           std::to_string(policy.max_relative));
}

}  // namespace

Precisions precompute_precision(const GmmParams& params, const DimPartition& partition,
                                const RidgePolicy& ridge, std::uint64_t version) {
  const std::size_t d = params.dim();
  if (partition.total() != d)
    throw ShapeError("partition widths sum to " + std::to_string(partition.total()) +
                     ", params have d = " + std::to_string(d));
  Precisions out;
  out.partition = partition;
  out.version = version;
  out.comp.resize(params.k());
  const auto di = static_cast<Eigen::Index>(d);
  for (std::size_t k = 0; k < params.k(); ++k) {
    ComponentPrecision& cp = out.comp[k];
    Eigen::LLT<Eigen::MatrixXd> llt;
    ridged_llt(params.sigma[k], ridge, cp.ridge, llt);
    cp.log_det_sigma = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    cp.log_norm = -0.5 * (static_cast<double>(d) * kLog2Pi + cp.log_det_sigma);
    cp.inv = llt.solve(Eigen::MatrixXd::Identity(di, di));

    const std::size_t nb = partition.blocks();
    cp.block.assign(nb, std::vector<Eigen::MatrixXd>(nb));
    for (std::size_t m = 0; m < nb; ++m)
      for (std::size_t n = 0; n < nb; ++n)
        cp.block[m][n] = cp.inv.block(static_cast<Eigen::Index>(partition.offsets[m]),
                                      static_cast<Eigen::Index>(partition.offsets[n]),
                                      static_cast<Eigen::Index>(partition.widths[m]),
                                      static_cast<Eigen::Index>(partition.widths[n]));
  }
  return out;
}

double quadform_direct(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                       const Eigen::MatrixXd& inv) {
  if (x.size() != mu.size() || inv.rows() != x.size() || inv.cols() != x.size())
    throw ShapeError("quadform_direct dimension mismatch");
  Eigen::VectorXd pd = x - mu;
  const auto d = static_cast<std::uint64_t>(x.size());
  counters::add_subs(d);
  counters::add_mults(d * d + d);
  return pd.dot(inv * pd);
}

RTupleCacheEntry make_rtuple_cache(const Eigen::VectorXd& x_r, const GmmParams& params, std::size_t k,
                                   const Precisions& prec) {
  if (prec.partition.blocks() != 2)
    throw ShapeError("binary cache needs a two-block partition");
  const auto d_s = static_cast<Eigen::Index>(prec.partition.widths[0]);
  const auto d_r = static_cast<Eigen::Index>(prec.partition.widths[1]);
  if (x_r.size() != d_r) throw ShapeError("x_r width does not match partition");
  RTupleCacheEntry e;
  e.pd_r = x_r - params.mu[k].tail(d_r);
  e.lr = e.pd_r.dot(prec.comp[k].block[1][1] * e.pd_r);
  e.cross = prec.comp[k].block[0][1] * e.pd_r;
  e.version = prec.version;
  counters::add_subs(static_cast<std::uint64_t>(d_r));
  counters::add_mults(static_cast<std::uint64_t>(d_r * d_r + d_r + d_s * d_r));
  return e;
}

double quadform_factorized(const Eigen::VectorXd& pd_s, const RTupleCacheEntry& entry,
                           const Precisions& prec, std::size_t k) {
  if (entry.version != prec.version)
    throw StaleCache("R-tuple cache stamped " + std::to_string(entry.version) +
                     ", precision version is " + std::to_string(prec.version));
  const ComponentPrecision& cp = prec.comp.at(k);
  if (pd_s.size() != cp.block[0][0].rows()) throw ShapeError("pd_s width does not match partition");
  const auto d_s = static_cast<std::uint64_t>(pd_s.size());
  counters::add_mults(d_s * d_s + d_s + d_s);
  const double ul = pd_s.dot(cp.block[0][0] * pd_s);
  return ul + 2.0 * pd_s.dot(entry.cross) + entry.lr;
}

double quadform_multiway(const std::vector<Eigen::VectorXd>& pd_blocks,
                         const ComponentPrecision& prec) {
  const std::size_t nb = pd_blocks.size();
  if (prec.block.size() != nb) throw ShapeError("pd block count does not match precision tiling");
  for (std::size_t m = 0; m < nb; ++m)
    if (pd_blocks[m].size() != prec.block[m][m].rows())
      throw ShapeError("pd block " + std::to_string(m) + " width mismatch");
  double total = 0;
  std::uint64_t mults = 0;
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      total += pd_blocks[i].dot(prec.block[i][j] * pd_blocks[j]);
      const auto di = static_cast<std::uint64_t>(pd_blocks[i].size());
      const auto dj = static_cast<std::uint64_t>(pd_blocks[j].size());
      mults += di * dj + di;
    }
  counters::add_mults(mults);
  return total;
}

double gaussian_logpdf(double quadform, const ComponentPrecision& prec) {
  return prec.log_norm - 0.5 * quadform;
}

std::uint64_t DataSource::n_rows() const {
  if (join) return join->s.row_count();
  if (t) return t->row_count();
  throw ShapeError("data source holds neither T nor a join");
}

std::vector<std::size_t> DataSource::partition_widths() const {
  if (join) return join->partition();
  if (t) return {t->schema().feature_count()};
  throw ShapeError("data source holds neither T nor a join");
}

std::uint64_t DataSource::block_size_pages() const {
  return join ? join->block_size_pages : kDefaultBlockSizePages;
}

DimPartition data_partition(const DataSource& data) {
  return DimPartition::from_widths(data.partition_widths());
}

// ---------------------------------------------------------------------------
// Pass machinery shared by the E-step and the two M-step passes.

namespace {

struct PassTables {
  std::vector<std::size_t> fk_ords;           // per table m (0-based over tables)
  std::vector<AttributeTable> resolved;       // tables[1..q-1] decoded, index m-1
};

PassTables load_pass_tables(const StarJoin& join) {
  PassTables pt;
  for (std::size_t m = 0; m < join.q(); ++m)
    pt.fk_ords.push_back(join.s.schema().fk_ordinal(join.fk_columns[m]));
  for (std::size_t m = 1; m < join.q(); ++m)
    pt.resolved.push_back(AttributeTable::load(join.tables[m]));
  return pt;
}

// Row index of each probed S row into every resolved table (m >= 2).
void map_resolved_rows(const PassTables& pt, const Batch& s_rows,
                       std::vector<std::vector<std::uint32_t>>& tmap) {
  tmap.assign(pt.resolved.size(), {});
  for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
    const auto& fk = s_rows.fks[pt.fk_ords[m + 1]];
    auto& out = tmap[m];
    out.resize(s_rows.size());
    for (std::size_t r = 0; r < s_rows.size(); ++r) {
      auto it = pt.resolved[m].row_of_key.find(fk[r]);
      if (it == pt.resolved[m].row_of_key.end())
        throw ReferentialViolation("S row " + std::to_string(s_rows.row_ordinals[r]) +
                                   " dangling FK " + std::to_string(fk[r]));
      out[r] = it->second;
    }
  }
}

// Assembles the joined feature rows for one probed block (streaming
// strategy): [X_S | X_R1 broadcast per group | X_Rm gathered per row].
void assemble_joined(const StarJoin& join, const PassTables& pt, const Batch& r_blk,
                     const GroupedProbe& probe, const std::vector<std::vector<std::uint32_t>>& tmap,
                     FeatureMatrix& x) {
  const auto total = static_cast<Eigen::Index>(probe.s_rows.size());
  const auto d_s = static_cast<Eigen::Index>(join.d_s());
  const auto d_1 = static_cast<Eigen::Index>(join.d_r(0));
  std::size_t width = join.joined_width();
  x.resize(total, static_cast<Eigen::Index>(width));
  x.leftCols(d_s) = probe.s_rows.features;
  for (const ProbeGroup& g : probe.groups) {
    if (g.count == 0) continue;
    x.block(static_cast<Eigen::Index>(g.offset), d_s, static_cast<Eigen::Index>(g.count), d_1)
        .rowwise() = r_blk.features.row(static_cast<Eigen::Index>(g.r_row));
  }
  Eigen::Index off = d_s + d_1;
  for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
    const auto dm = static_cast<Eigen::Index>(pt.resolved[m].features.cols());
    for (Eigen::Index r = 0; r < total; ++r)
      x.block(r, off, 1, dm) = pt.resolved[m].features.row(tmap[m][static_cast<std::size_t>(r)]);
    off += dm;
  }
}

// gamma rows for the probed block, gathered by S ordinal.
void gather_gamma(const FeatureMatrix& gamma, const Batch& s_rows, FeatureMatrix& out) {
  out.resize(static_cast<Eigen::Index>(s_rows.size()), gamma.cols());
  for (std::size_t r = 0; r < s_rows.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = gamma.row(static_cast<Eigen::Index>(s_rows.row_ordinals[r]));
}

// Per-component, per-tuple factorized E-step cache over one set of rows.
struct TableEstepCache {
  // index [k]: rows x width matrices / vectors
  std::vector<FeatureMatrix> pd;      // x_R - mu_R
  std::vector<Eigen::VectorXd> lr;    // diag quadratic forms
  std::vector<FeatureMatrix> v;       // pd * I_0m^T  (rows x d_S)
  // w[k][i]: pd * I_im^T (rows x d_Ri) for i >= 1, i != m; empty otherwise
  std::vector<std::vector<FeatureMatrix>> w;
};

// Builds the E-step cache for table block m (1-based) over `feats`.
TableEstepCache build_estep_cache(const FeatureMatrix& feats, std::size_t m, const GmmParams& params,
                                  const Precisions& prec, bool with_pairs) {
  const std::size_t kk = params.k();
  const auto rows = feats.rows();
  const auto dm = feats.cols();
  const auto off = static_cast<Eigen::Index>(prec.partition.offsets[m]);
  const std::size_t nb = prec.partition.blocks();
  TableEstepCache c;
  c.pd.resize(kk);
  c.lr.resize(kk);
  c.v.resize(kk);
  c.w.resize(kk);
  std::uint64_t mults = 0;
  for (std::size_t k = 0; k < kk; ++k) {
    c.pd[k] = feats.rowwise() - params.mu[k].segment(off, dm).transpose();
    counters::add_subs(static_cast<std::uint64_t>(rows * dm));
    FeatureMatrix tmp = c.pd[k] * prec.comp[k].block[m][m];
    c.lr[k] = (tmp.array() * c.pd[k].array()).rowwise().sum();
    c.v[k] = c.pd[k] * prec.comp[k].block[0][m].transpose();
    mults += static_cast<std::uint64_t>(rows) *
             static_cast<std::uint64_t>(dm * dm + dm + prec.comp[k].block[0][m].rows() * dm);
    c.w[k].resize(nb);
    if (with_pairs) {
      for (std::size_t i = 1; i < nb; ++i) {
        if (i == m) continue;
        c.w[k][i] = c.pd[k] * prec.comp[k].block[i][m].transpose();
        mults += static_cast<std::uint64_t>(rows) *
                 static_cast<std::uint64_t>(prec.comp[k].block[i][m].rows() * dm);
      }
    }
  }
  counters::add_mults(mults);
  return c;
}

// log-sum-exp over lw rows; writes gamma rows at the given ordinals and
// accumulates the log-likelihood.
void finish_rows(const Eigen::MatrixXd& lw, const std::vector<std::uint64_t>& ordinals,
                 FeatureMatrix& gamma, double& loglik) {
  const auto n = lw.rows();
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = lw.row(r).maxCoeff();
    Eigen::RowVectorXd e = (lw.row(r).array() - mx).exp().matrix();
    const double s = e.sum();
    gamma.row(static_cast<Eigen::Index>(ordinals[static_cast<std::size_t>(r)])) = e / s;
    loglik += mx + std::log(s);
  }
}

// Direct-route responsibilities for one assembled batch (M and S paths).
void estep_direct_batch(const FeatureMatrix& x, const std::vector<std::uint64_t>& ordinals,
                        const GmmParams& params, const Precisions& prec, FeatureMatrix& gamma,
                        double& loglik) {
  const auto n = x.rows();
  const auto d = x.cols();
  const std::size_t kk = params.k();
  Eigen::MatrixXd lw(n, static_cast<Eigen::Index>(kk));
  FeatureMatrix pd, tmp;
  for (std::size_t k = 0; k < kk; ++k) {
    pd = x.rowwise() - params.mu[k].transpose();
    tmp.noalias() = pd * prec.comp[k].inv;
    lw.col(static_cast<Eigen::Index>(k)) =
        ((tmp.array() * pd.array()).rowwise().sum() * -0.5 +
         (std::log(params.pi(static_cast<Eigen::Index>(k))) + prec.comp[k].log_norm))
            .matrix();
    counters::add_subs(static_cast<std::uint64_t>(n * d));
    counters::add_mults(static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(d * d + d));
  }
  finish_rows(lw, ordinals, gamma, loglik);
}

}  // namespace

double estep(Strategy strategy, const GmmData& data, const GmmParams& params, const Precisions& prec,
             Responsibilities& resp, double fault_injection) {
  const auto n_total = static_cast<Eigen::Index>(data.n_rows());
  const auto kk = static_cast<Eigen::Index>(params.k());
  resp.gamma.resize(n_total, kk);
  double loglik = 0;

  if (strategy == Strategy::Materialized) {
    if (!data.t) throw ShapeError("materialized strategy needs T");
    Batch b;
    auto cur = data.t->scan(data.block_size_pages());
    while (cur.next(b)) estep_direct_batch(b.features, b.row_ordinals, params, prec, resp.gamma, loglik);
    resp.n_k = resp.gamma.colwise().sum();
    return loglik;
  }

  if (!data.join) throw ShapeError("streamed/factorized strategies need a join");
  const StarJoin& join = *data.join;
  PassTables pt = load_pass_tables(join);
  const std::size_t nb = prec.partition.blocks();
  const bool multiway = nb > 2;

  // Caches for the in-memory tables (m >= 2) are built once per pass.
  std::vector<TableEstepCache> rcache;
  if (strategy == Strategy::Factorized)
    for (std::size_t m = 0; m < pt.resolved.size(); ++m)
      rcache.push_back(build_estep_cache(pt.resolved[m].features, m + 2, params, prec, multiway));

  Batch r_blk;
  GroupedProbe probe;
  FeatureMatrix x, pd_s, tmp;
  std::vector<std::vector<std::uint32_t>> tmap;
  bool fault_pending = fault_injection != 0.0;
  auto cur = join.tables[0].scan(join.block_size_pages);
  while (cur.next(r_blk)) {
    probe_matching(join.s, r_blk, join.fk_columns[0], probe);
    map_resolved_rows(pt, probe.s_rows, tmap);

    if (strategy == Strategy::Streamed) {
      assemble_joined(join, pt, r_blk, probe, tmap, x);
      estep_direct_batch(x, probe.s_rows.row_ordinals, params, prec, resp.gamma, loglik);
      continue;
    }

    // Factorized route: per-tuple quantities for this R_1 block, then
    // group-wise shared terms.
    TableEstepCache c1 = build_estep_cache(r_blk.features, 1, params, prec, /*with_pairs=*/false);
    if (fault_pending && c1.lr[0].size() > 0) {
      c1.lr[0](0) += fault_injection;
      fault_pending = false;
    }

    const auto total = static_cast<Eigen::Index>(probe.s_rows.size());
    const auto d_s = static_cast<Eigen::Index>(join.d_s());
    Eigen::MatrixXd lw(total, kk);
    for (std::size_t k = 0; k < params.k(); ++k) {
      pd_s = probe.s_rows.features.rowwise() - params.mu[k].head(d_s).transpose();
      tmp.noalias() = pd_s * prec.comp[k].block[0][0];
      Eigen::VectorXd quad = (tmp.array() * pd_s.array()).rowwise().sum();
      counters::add_subs(static_cast<std::uint64_t>(total * d_s));
      counters::add_mults(static_cast<std::uint64_t>(total) *
                          static_cast<std::uint64_t>(d_s * d_s + d_s));

      for (const ProbeGroup& g : probe.groups) {
        if (g.count == 0) continue;
        const auto off = static_cast<Eigen::Index>(g.offset);
        const auto cnt = static_cast<Eigen::Index>(g.count);
        const auto rr = static_cast<Eigen::Index>(g.r_row);
        quad.segment(off, cnt).noalias() +=
            2.0 * (pd_s.middleRows(off, cnt) * c1.v[k].row(rr).transpose());
        quad.segment(off, cnt).array() += c1.lr[k](rr);
        counters::add_mults(static_cast<std::uint64_t>(cnt) * static_cast<std::uint64_t>(d_s));
      }

      if (multiway) {
        // Terms involving the in-memory tables: (0,m) cross and diagonal
        // per row, plus attribute-table pairs (1,j) and (i,j), all from
        // cached per-tuple vectors.
        std::uint64_t per_row_mults = 0;
        for (std::size_t mj = 0; mj < pt.resolved.size(); ++mj)
          per_row_mults += static_cast<std::uint64_t>(d_s) + join.d_r(0);
        for (std::size_t mi = 0; mi < pt.resolved.size(); ++mi)
          for (std::size_t mj = mi + 1; mj < pt.resolved.size(); ++mj)
            per_row_mults += join.d_r(mi + 1);
        for (const ProbeGroup& g : probe.groups) {
          if (g.count == 0) continue;
          const auto rr = static_cast<Eigen::Index>(g.r_row);
          for (std::size_t row = g.offset; row < g.offset + g.count; ++row) {
            const auto ri = static_cast<Eigen::Index>(row);
            double extra = 0;
            for (std::size_t mj = 0; mj < pt.resolved.size(); ++mj) {
              const auto tj = static_cast<Eigen::Index>(tmap[mj][row]);
              extra += 2.0 * pd_s.row(ri).dot(rcache[mj].v[k].row(tj)) + rcache[mj].lr[k](tj);
              extra += 2.0 * c1.pd[k].row(rr).dot(rcache[mj].w[k][1].row(tj));
            }
            for (std::size_t mi = 0; mi < pt.resolved.size(); ++mi)
              for (std::size_t mj = mi + 1; mj < pt.resolved.size(); ++mj) {
                const auto ti = static_cast<Eigen::Index>(tmap[mi][row]);
                const auto tj = static_cast<Eigen::Index>(tmap[mj][row]);
                extra += 2.0 * rcache[mi].pd[k].row(ti).dot(rcache[mj].w[k][mi + 2].row(tj));
              }
            quad(ri) += extra;
          }
        }
        counters::add_mults(static_cast<std::uint64_t>(total) * per_row_mults);
      }

      lw.col(static_cast<Eigen::Index>(k)) =
          (-0.5 * quad.array() +
           (std::log(params.pi(static_cast<Eigen::Index>(k))) + prec.comp[k].log_norm))
              .matrix();
    }
    finish_rows(lw, probe.s_rows.row_ordinals, resp.gamma, loglik);
  }

  resp.n_k = resp.gamma.colwise().sum();
  return loglik;
}

// ---------------------------------------------------------------------------
// M-step

namespace {

// mu pass: sums gamma-weighted features; returns d x K sums.
Eigen::MatrixXd mstep_mu_pass(Strategy strategy, const GmmData& data, const Responsibilities& resp,
                              std::size_t kk) {
  const auto kki = static_cast<Eigen::Index>(kk);
  if (strategy == Strategy::Materialized) {
    if (!data.t) throw ShapeError("materialized strategy needs T");
    const auto d = static_cast<Eigen::Index>(data.t->schema().feature_count());
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, kki);
    Batch b;
    auto cur = data.t->scan(data.block_size_pages());
    while (cur.next(b)) {
      const auto first = static_cast<Eigen::Index>(b.row_ordinals.front());
      const auto n = static_cast<Eigen::Index>(b.size());
      sum.noalias() += b.features.transpose() * resp.gamma.middleRows(first, n);
      counters::add_mults(static_cast<std::uint64_t>(n * d) * kk);
    }
    return sum;
  }

  if (!data.join) throw ShapeError("streamed/factorized strategies need a join");
  const StarJoin& join = *data.join;
  PassTables pt = load_pass_tables(join);
  const auto d = static_cast<Eigen::Index>(join.joined_width());
  const auto d_s = static_cast<Eigen::Index>(join.d_s());
  const auto d_1 = static_cast<Eigen::Index>(join.d_r(0));

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, kki);
  // factorized: per-tuple gamma sums for resolved tables
  std::vector<Eigen::MatrixXd> gsum;
  if (strategy == Strategy::Factorized)
    for (const auto& at : pt.resolved)
      gsum.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(at.keys.size()), kki));

  Batch r_blk;
  GroupedProbe probe;
  FeatureMatrix x, gam;
  std::vector<std::vector<std::uint32_t>> tmap;
  auto cur = join.tables[0].scan(join.block_size_pages);
  while (cur.next(r_blk)) {
    probe_matching(join.s, r_blk, join.fk_columns[0], probe);
    map_resolved_rows(pt, probe.s_rows, tmap);
    gather_gamma(resp.gamma, probe.s_rows, gam);
    const auto total = static_cast<Eigen::Index>(probe.s_rows.size());

    if (strategy == Strategy::Streamed) {
      assemble_joined(join, pt, r_blk, probe, tmap, x);
      sum.noalias() += x.transpose() * gam;
      counters::add_mults(static_cast<std::uint64_t>(total * d) * kk);
      continue;
    }

    // S-side features weighted per row.
    sum.topRows(d_s).noalias() += probe.s_rows.features.transpose() * gam;
    counters::add_mults(static_cast<std::uint64_t>(total * d_s) * kk);

    // R_1: per-tuple gamma sums folded against this block's features.
    Eigen::MatrixXd gs1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r_blk.size()), kki);
    for (const ProbeGroup& g : probe.groups) {
      if (g.count == 0) continue;
      gs1.row(static_cast<Eigen::Index>(g.r_row)) =
          gam.middleRows(static_cast<Eigen::Index>(g.offset), static_cast<Eigen::Index>(g.count))
              .colwise()
              .sum();
    }
    sum.middleRows(d_s, d_1).noalias() += r_blk.features.transpose() * gs1;
    counters::add_mults(static_cast<std::uint64_t>(r_blk.size()) * static_cast<std::uint64_t>(d_1) * kk);

    for (std::size_t m = 0; m < pt.resolved.size(); ++m)
      for (Eigen::Index r = 0; r < total; ++r)
        gsum[m].row(static_cast<Eigen::Index>(tmap[m][static_cast<std::size_t>(r)])) += gam.row(r);
  }

  if (strategy == Strategy::Factorized) {
    Eigen::Index off = d_s + d_1;
    for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
      const auto dm = static_cast<Eigen::Index>(pt.resolved[m].features.cols());
      sum.middleRows(off, dm).noalias() += pt.resolved[m].features.transpose() * gsum[m];
      counters::add_mults(static_cast<std::uint64_t>(pt.resolved[m].keys.size()) *
                          static_cast<std::uint64_t>(dm) * kk);
      off += dm;
    }
  }
  return sum;
}

// Sigma pass: gamma-weighted outer products of deviations from the new mu.
std::vector<Eigen::MatrixXd> mstep_sigma_pass(Strategy strategy, const GmmData& data,
                                              const Responsibilities& resp,
                                              const std::vector<Eigen::VectorXd>& mu_new) {
  const std::size_t kk = mu_new.size();
  const auto d = static_cast<Eigen::Index>(mu_new[0].size());
  std::vector<Eigen::MatrixXd> sums(kk, Eigen::MatrixXd::Zero(d, d));

  if (strategy == Strategy::Materialized) {
    if (!data.t) throw ShapeError("materialized strategy needs T");
    Batch b;
    FeatureMatrix pd, wpd;
    auto cur = data.t->scan(data.block_size_pages());
    while (cur.next(b)) {
      const auto first = static_cast<Eigen::Index>(b.row_ordinals.front());
      const auto n = static_cast<Eigen::Index>(b.size());
      for (std::size_t k = 0; k < kk; ++k) {
        pd = b.features.rowwise() - mu_new[k].transpose();
        wpd = (pd.array().colwise() *
               resp.gamma.middleRows(first, n).col(static_cast<Eigen::Index>(k)).array())
                  .matrix();
        sums[k].noalias() += wpd.transpose() * pd;
        counters::add_subs(static_cast<std::uint64_t>(n * d));
        counters::add_mults(static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(d * d));
      }
    }
    return sums;
  }

  if (!data.join) throw ShapeError("streamed/factorized strategies need a join");
  const StarJoin& join = *data.join;
  PassTables pt = load_pass_tables(join);
  const auto d_s = static_cast<Eigen::Index>(join.d_s());
  const auto d_1 = static_cast<Eigen::Index>(join.d_r(0));
  const std::size_t q = join.q();

  Batch r_blk;
  GroupedProbe probe;
  FeatureMatrix x, gam, pd, wpd;
  std::vector<std::vector<std::uint32_t>> tmap;

  if (strategy == Strategy::Streamed) {
    auto cur = join.tables[0].scan(join.block_size_pages);
    while (cur.next(r_blk)) {
      probe_matching(join.s, r_blk, join.fk_columns[0], probe);
      map_resolved_rows(pt, probe.s_rows, tmap);
      gather_gamma(resp.gamma, probe.s_rows, gam);
      assemble_joined(join, pt, r_blk, probe, tmap, x);
      const auto n = static_cast<Eigen::Index>(x.rows());
      for (std::size_t k = 0; k < kk; ++k) {
        pd = x.rowwise() - mu_new[k].transpose();
        wpd = (pd.array().colwise() * gam.col(static_cast<Eigen::Index>(k)).array()).matrix();
        sums[k].noalias() += wpd.transpose() * pd;
        counters::add_subs(static_cast<std::uint64_t>(n * d));
        counters::add_mults(static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(d * d));
      }
    }
    return sums;
  }

  // Factorized: blockwise assembly. Per component: UL from gamma-weighted
  // S outer products; UR_m from per-tuple weighted PD_S sums times PD_Rm;
  // LL by transpose; LR_m from per-tuple gamma sums times the tuple outer
  // product; attribute-table pairs from per-tuple weighted PD_Ri sums.
  struct FState {
    Eigen::MatrixXd ul;                    // d_S x d_S
    std::vector<Eigen::MatrixXd> ur;       // per table m: d_S x d_m
    std::vector<Eigen::MatrixXd> diag;     // per table m: d_m x d_m
    std::vector<Eigen::MatrixXd> ws;       // resolved m: n_m x d_S weighted PD_S sums
    std::vector<Eigen::VectorXd> gs;       // resolved m: n_m gamma sums
    std::vector<std::vector<Eigen::MatrixXd>> pw;  // pw[i][j]: n_j x d_i weighted PD_i sums, 1 <= i < j
    std::vector<FeatureMatrix> pd_res;     // resolved m: PD under new mu
  };
  std::vector<FState> st(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    st[k].ul = Eigen::MatrixXd::Zero(d_s, d_s);
    for (std::size_t m = 0; m < q; ++m) {
      const auto dm = static_cast<Eigen::Index>(join.d_r(m));
      st[k].ur.push_back(Eigen::MatrixXd::Zero(d_s, dm));
      st[k].diag.push_back(Eigen::MatrixXd::Zero(dm, dm));
    }
    Eigen::Index off = d_s + d_1;
    for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
      const auto n_m = static_cast<Eigen::Index>(pt.resolved[m].keys.size());
      const auto dm = static_cast<Eigen::Index>(pt.resolved[m].features.cols());
      st[k].ws.push_back(Eigen::MatrixXd::Zero(n_m, d_s));
      st[k].gs.push_back(Eigen::VectorXd::Zero(n_m));
      st[k].pd_res.push_back(pt.resolved[m].features.rowwise() -
                             mu_new[k].segment(off, dm).transpose());
      counters::add_subs(static_cast<std::uint64_t>(n_m * dm));
      off += dm;
    }
    st[k].pw.assign(q + 1, std::vector<Eigen::MatrixXd>(q + 1));
    for (std::size_t i = 1; i <= q; ++i)
      for (std::size_t j = i + 1; j <= q; ++j) {
        const auto n_j = static_cast<Eigen::Index>(pt.resolved[j - 2].keys.size());
        const auto di = static_cast<Eigen::Index>(join.d_r(i - 1));
        st[k].pw[i][j] = Eigen::MatrixXd::Zero(n_j, di);
      }
  }

  auto cur = join.tables[0].scan(join.block_size_pages);
  while (cur.next(r_blk)) {
    probe_matching(join.s, r_blk, join.fk_columns[0], probe);
    map_resolved_rows(pt, probe.s_rows, tmap);
    gather_gamma(resp.gamma, probe.s_rows, gam);
    const auto total = static_cast<Eigen::Index>(probe.s_rows.size());
    const auto nr1 = static_cast<Eigen::Index>(r_blk.size());

    for (std::size_t k = 0; k < kk; ++k) {
      const auto kc = static_cast<Eigen::Index>(k);
      pd = probe.s_rows.features.rowwise() - mu_new[k].head(d_s).transpose();
      wpd = (pd.array().colwise() * gam.col(kc).array()).matrix();
      st[k].ul.noalias() += wpd.transpose() * pd;
      counters::add_subs(static_cast<std::uint64_t>(total * d_s));

      FeatureMatrix pd1 = r_blk.features.rowwise() - mu_new[k].segment(d_s, d_1).transpose();
      counters::add_subs(static_cast<std::uint64_t>(nr1 * d_1));

      Eigen::MatrixXd ws1 = Eigen::MatrixXd::Zero(nr1, d_s);
      Eigen::VectorXd gs1 = Eigen::VectorXd::Zero(nr1);
      for (const ProbeGroup& g : probe.groups) {
        if (g.count == 0) continue;
        const auto off = static_cast<Eigen::Index>(g.offset);
        const auto cnt = static_cast<Eigen::Index>(g.count);
        const auto rr = static_cast<Eigen::Index>(g.r_row);
        ws1.row(rr) = wpd.middleRows(off, cnt).colwise().sum();
        gs1(rr) = gam.col(kc).segment(off, cnt).sum();
      }
      st[k].ur[0].noalias() += ws1.transpose() * pd1;
      st[k].diag[0].noalias() += pd1.transpose() * (pd1.array().colwise() * gs1.array()).matrix();

      for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
        auto& ws = st[k].ws[m];
        auto& gs = st[k].gs[m];
        for (Eigen::Index r = 0; r < total; ++r) {
          const auto t = static_cast<Eigen::Index>(tmap[m][static_cast<std::size_t>(r)]);
          ws.row(t) += wpd.row(r);
          gs(t) += gam(r, kc);
        }
      }

      // attribute-table pairs: weighted PD_i sums keyed by the j-side tuple
      for (std::size_t j = 2; j <= q; ++j) {
        auto& pw1 = st[k].pw[1][j];
        const auto& tm = tmap[j - 2];
        for (const ProbeGroup& g : probe.groups) {
          if (g.count == 0) continue;
          const auto rr = static_cast<Eigen::Index>(g.r_row);
          for (std::size_t row = g.offset; row < g.offset + g.count; ++row)
            pw1.row(static_cast<Eigen::Index>(tm[row])) +=
                gam(static_cast<Eigen::Index>(row), kc) * pd1.row(rr);
        }
        for (std::size_t i = 2; i < j; ++i) {
          auto& pw = st[k].pw[i][j];
          const auto& ti_map = tmap[i - 2];
          for (Eigen::Index r = 0; r < total; ++r)
            pw.row(static_cast<Eigen::Index>(tm[static_cast<std::size_t>(r)])) +=
                gam(r, kc) *
                st[k].pd_res[i - 2].row(static_cast<Eigen::Index>(ti_map[static_cast<std::size_t>(r)]));
        }
      }

      // Paper-accounted multiply charges for this block's rows and tuples.
      std::uint64_t per_row = static_cast<std::uint64_t>(d_s) * static_cast<std::uint64_t>(d_s);
      for (std::size_t m = 0; m < q; ++m)
        per_row += 2 * static_cast<std::uint64_t>(d_s) * join.d_r(m);
      for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < q; ++j)
          if (i != j) per_row += static_cast<std::uint64_t>(join.d_r(i)) * join.d_r(j);
      counters::add_mults(static_cast<std::uint64_t>(total) * per_row +
                          static_cast<std::uint64_t>(nr1) * static_cast<std::uint64_t>(d_1 * d_1));
    }
  }

  // Fold resolved-table accumulators and tile the blocks.
  for (std::size_t k = 0; k < kk; ++k) {
    for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
      const auto& pdm = st[k].pd_res[m];
      st[k].ur[m + 1].noalias() += st[k].ws[m].transpose() * pdm;
      st[k].diag[m + 1].noalias() +=
          pdm.transpose() * (pdm.array().colwise() * st[k].gs[m].array()).matrix();
      counters::add_mults(static_cast<std::uint64_t>(pt.resolved[m].keys.size()) *
                          static_cast<std::uint64_t>(pdm.cols() * pdm.cols()));
    }
    Eigen::MatrixXd& out = sums[k];
    out.topLeftCorner(d_s, d_s) = st[k].ul;
    Eigen::Index off_i = d_s;
    for (std::size_t m = 0; m < q; ++m) {
      const auto dm = static_cast<Eigen::Index>(join.d_r(m));
      out.block(0, off_i, d_s, dm) = st[k].ur[m];
      out.block(off_i, 0, dm, d_s) = st[k].ur[m].transpose();
      out.block(off_i, off_i, dm, dm) = st[k].diag[m];
      off_i += dm;
    }
    // pairs (i < j): fold weighted sums against the j-side deviations
    std::vector<Eigen::Index> offs(q + 1);
    offs[0] = d_s;
    for (std::size_t m = 1; m <= q; ++m) offs[m] = offs[m - 1] + static_cast<Eigen::Index>(join.d_r(m - 1));
    for (std::size_t i = 1; i <= q; ++i)
      for (std::size_t j = i + 1; j <= q; ++j) {
        Eigen::MatrixXd mij = st[k].pw[i][j].transpose() * st[k].pd_res[j - 2];
        const auto di = static_cast<Eigen::Index>(join.d_r(i - 1));
        const auto dj = static_cast<Eigen::Index>(join.d_r(j - 1));
        out.block(offs[i - 1], offs[j - 1], di, dj) = mij;
        out.block(offs[j - 1], offs[i - 1], dj, di) = mij.transpose();
      }
  }
  return sums;
}

}  // namespace

MstepResult mstep(Strategy strategy, const GmmData& data, const Responsibilities& resp,
                  const GmmParams& params, double empty_fraction) {
  const std::size_t kk = params.k();
  const double n_total = static_cast<double>(data.n_rows());
  if (static_cast<std::uint64_t>(resp.gamma.rows()) != data.n_rows() ||
      static_cast<std::size_t>(resp.gamma.cols()) != kk)
    throw ShapeError("responsibilities shape does not match data/params");

  MstepResult out;
  out.params = params;
  const Eigen::VectorXd n_k = resp.gamma.colwise().sum();

  Eigen::MatrixXd mu_sums = mstep_mu_pass(strategy, data, resp, kk);
  std::vector<Eigen::VectorXd> mu_new(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    const auto kc = static_cast<Eigen::Index>(k);
    if (n_k(kc) < empty_fraction * n_total) {
      out.empty_components.push_back(k);
      mu_new[k] = params.mu[k];  // kept; the trainer reseeds
    } else {
      mu_new[k] = mu_sums.col(kc) / n_k(kc);
    }
  }

  std::vector<Eigen::MatrixXd> sigma_sums = mstep_sigma_pass(strategy, data, resp, mu_new);

  for (std::size_t k = 0; k < kk; ++k) {
    const auto kc = static_cast<Eigen::Index>(k);
    const bool empty = n_k(kc) < empty_fraction * n_total;
    out.params.pi(kc) = n_k(kc) / n_total;
    out.params.mu[k] = mu_new[k];
    if (!empty) out.params.sigma[k] = sigma_sums[k] / n_k(kc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization and the training loop

namespace {

// Canonical join-row enumeration in S storage order: identical values and
// accumulation order for every strategy, so initialization is shared.
struct CanonicalReader {
  const GmmData& data;
  PassTables pt;            // only for join inputs
  bool use_t;

  explicit CanonicalReader(const GmmData& d) : data(d), use_t(!d.join) {
    if (!use_t) pt = load_pass_tables(*d.join);
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) {
    if (use_t) {
      Batch b;
      auto cur = data.t->scan(data.block_size_pages());
      while (cur.next(b)) fn(b.features, b.row_ordinals);
      return;
    }
    const StarJoin& join = *data.join;
    const auto width = static_cast<Eigen::Index>(join.joined_width());
    const auto d_s = static_cast<Eigen::Index>(join.d_s());
    AttributeTable r1 = AttributeTable::load(join.tables[0]);
    Batch b;
    FeatureMatrix x;
    auto cur = join.s.scan(data.block_size_pages());
    while (cur.next(b)) {
      const auto n = static_cast<Eigen::Index>(b.size());
      x.resize(n, width);
      x.leftCols(d_s) = b.features;
      for (Eigen::Index r = 0; r < n; ++r) {
        Eigen::Index off = d_s;
        for (std::size_t m = 0; m < join.q(); ++m) {
          const auto& at = m == 0 ? r1 : pt.resolved[m - 1];
          const std::uint64_t fk = b.fks[pt.fk_ords[m]][static_cast<std::size_t>(r)];
          auto it = at.row_of_key.find(fk);
          if (it == at.row_of_key.end())
            throw ReferentialViolation("S row " + std::to_string(b.row_ordinals[static_cast<std::size_t>(r)]) +
                                       " dangling FK " + std::to_string(fk));
          const auto dm = static_cast<Eigen::Index>(at.features.cols());
          x.block(r, off, 1, dm) = at.features.row(it->second);
          off += dm;
        }
      }
      fn(x, b.row_ordinals);
    }
  }

  Eigen::VectorXd fetch_row(std::uint64_t ordinal) {
    std::uint64_t ords[1] = {ordinal};
    if (use_t) {
      Batch b = data.t->read_rows(ords);
      return b.features.row(0);
    }
    const StarJoin& join = *data.join;
    Batch b = join.s.read_rows(ords);
    Eigen::VectorXd x(static_cast<Eigen::Index>(join.joined_width()));
    const auto d_s = static_cast<Eigen::Index>(join.d_s());
    x.head(d_s) = b.features.row(0);
    Eigen::Index off = d_s;
    for (std::size_t m = 0; m < join.q(); ++m) {
      const std::uint64_t fk = b.fks[pt.fk_ords[m]][0];
      const auto& tbl = join.tables[m];
      auto it = tbl.key_index().find(fk);
      if (it == tbl.key_index().end())
        throw ReferentialViolation("dangling FK " + std::to_string(fk));
      std::uint64_t rord[1] = {it->second};
      Batch rb = tbl.read_rows(rord);
      const auto dm = static_cast<Eigen::Index>(rb.features.cols());
      x.segment(off, dm) = rb.features.row(0);
      off += dm;
    }
    return x;
  }
};

std::vector<std::uint64_t> reservoir_sample(std::uint64_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::uint64_t> res;
  res.reserve(k);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (res.size() < k) {
      res.push_back(i);
    } else {
      std::uniform_int_distribution<std::uint64_t> dist(0, i);
      const std::uint64_t j = dist(rng);
      if (j < k) res[static_cast<std::size_t>(j)] = i;
    }
  }
  return res;
}

Eigen::VectorXd global_variance(CanonicalReader& reader, std::uint64_t n, std::size_t d) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  reader.for_each_block([&](const FeatureMatrix& x, const std::vector<std::uint64_t>&) {
    sum += x.colwise().sum().transpose();
    sumsq += x.array().square().colwise().sum().matrix().transpose();
  });
  const double nn = static_cast<double>(n);
  Eigen::VectorXd mean = sum / nn;
  Eigen::VectorXd var = (sumsq / nn - mean.array().square().matrix()).cwiseMax(1e-12);
  return var;
}

}  // namespace

GmmParams init_gmm(const GmmData& data, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ShapeError("k must be >= 1");
  const std::uint64_t n = data.n_rows();
  if (n == 0) throw ShapeError("cannot initialize on an empty dataset");
  const std::size_t d = data_partition(data).total();

  std::mt19937_64 rng(seed);
  CanonicalReader reader(data);

  GmmParams p;
  p.pi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
  for (std::uint64_t ord : reservoir_sample(n, k, rng)) p.mu.push_back(reader.fetch_row(ord));
  Eigen::VectorXd var = global_variance(reader, n, d);
  p.sigma.assign(k, var.asDiagonal().toDenseMatrix());
  return p;
}

GmmTrainResult train_gmm(Strategy strategy, GmmData data, const GmmConfig& config, Catalog*,
                         const GmmObserver& observer) {
  if (config.k < 1) throw ShapeError("k must be >= 1");
  GmmTrainResult out;
  TrainTrace& trace = out.trace;
  trace.model = "gmm";
  trace.strategy = to_string(strategy);
  trace.config = {{"k", config.k},       {"tol", config.tol},   {"max_iters", config.max_iters},
                  {"seed", config.seed}, {"strategy", trace.strategy}};

  const auto t_start = std::chrono::steady_clock::now();

  // Setup: materialize T when the strategy needs it, plus initialization.
  std::filesystem::path temp_t;
  {
    CounterScope scope(trace.setup.counters);
    const auto s0 = std::chrono::steady_clock::now();
    if (strategy == Strategy::Materialized && !data.t) {
      if (!data.join) throw ShapeError("materialized strategy needs T or a join to materialize");
      temp_t = data.join->s.path().parent_path() /
               (".tmp_T_" + std::to_string(config.seed) + "_" +
                std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()) + ".rel");
      data.t = materialize_star_to(*data.join, temp_t);
    }
    trace.setup.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s0).count();
  }

  trace.data_stats = {{"n_rows", data.n_rows()}, {"d", data_partition(data).total()}};
  if (data.join) {
    trace.data_stats["d_s"] = data.join->d_s();
    std::vector<std::size_t> drs;
    std::vector<std::uint64_t> nrs, rpages;
    for (std::size_t m = 0; m < data.join->q(); ++m) {
      drs.push_back(data.join->d_r(m));
      nrs.push_back(data.join->tables[m].row_count());
      rpages.push_back(data.join->tables[m].page_count());
    }
    trace.data_stats["d_r"] = drs;
    trace.data_stats["n_r"] = nrs;
    trace.data_stats["pages_s"] = data.join->s.page_count();
    trace.data_stats["pages_r"] = rpages;
  }
  if (data.t) trace.data_stats["pages_t"] = data.t->page_count();

  GmmParams params;
  Eigen::VectorXd sigma0_diag;
  {
    IterationTrace init_it;
    {
      PhaseTimer timer(init_it, "init");
      params = init_gmm(data, config.k, config.seed);
      sigma0_diag = params.sigma[0].diagonal();
    }
    trace.setup.ms += init_it.phases[0].second.ms;
    trace.setup.counters += init_it.phases[0].second.counters;
  }

  std::mt19937_64 reseed_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::optional<CanonicalReader> reseed_reader;

  const DimPartition partition = data_partition(data);
  Responsibilities resp;
  double prev_ll = 0.0;  // first-iteration delta baseline
  for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
    IterationTrace it;
    it.index = iter;

    Precisions prec = precompute_precision(params, partition, config.ridge, iter);

    double ll = 0;
    {
      PhaseTimer timer(it, "estep");
      ll = estep(strategy, data, params, prec, resp, config.fault_injection);
    }

    std::vector<std::size_t> empties;
    {
      const std::size_t kk = config.k;
      const double n_total = static_cast<double>(data.n_rows());
      const Eigen::VectorXd n_k = resp.n_k;

      Eigen::MatrixXd mu_sums;
      {
        PhaseTimer timer(it, "mstep_mu");
        mu_sums = mstep_mu_pass(strategy, data, resp, kk);
      }
      std::vector<Eigen::VectorXd> mu_new(kk);
      for (std::size_t k = 0; k < kk; ++k) {
        const auto kc = static_cast<Eigen::Index>(k);
        if (n_k(kc) < config.empty_component_fraction * n_total) {
          empties.push_back(k);
          mu_new[k] = params.mu[k];
        } else {
          mu_new[k] = mu_sums.col(kc) / n_k(kc);
        }
      }
      std::vector<Eigen::MatrixXd> sigma_sums;
      {
        PhaseTimer timer(it, "mstep_sigma");
        sigma_sums = mstep_sigma_pass(strategy, data, resp, mu_new);
      }
      for (std::size_t k = 0; k < kk; ++k) {
        const auto kc = static_cast<Eigen::Index>(k);
        params.pi(kc) = n_k(kc) / n_total;
        params.mu[k] = mu_new[k];
        if (n_k(kc) >= config.empty_component_fraction * n_total)
          params.sigma[k] = sigma_sums[k] / n_k(kc);
      }
    }

    // Re-seed starved components from a random join row.
    for (std::size_t k : empties) {
      if (!reseed_reader) reseed_reader.emplace(data);
      std::uniform_int_distribution<std::uint64_t> dist(0, data.n_rows() - 1);
      params.mu[k] = reseed_reader->fetch_row(dist(reseed_rng));
      params.sigma[k] = sigma0_diag.asDiagonal();
      params.pi(static_cast<Eigen::Index>(k)) = 1.0 / static_cast<double>(config.k);
      params.pi /= params.pi.sum();
    }

    it.metric = ll;
    trace.iterations.push_back(std::move(it));
    if (observer) observer(iter, params, ll);

    if (std::abs(ll - prev_ll) < config.tol) {
      trace.converged = true;
      break;
    }
    prev_ll = ll;
  }

  if (!temp_t.empty()) {
    data.t.reset();
    std::error_code ec;
    std::filesystem::remove(temp_t, ec);
  }

  trace.total_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  out.params = std::move(params);
  return out;
}

}  // namespace facml
