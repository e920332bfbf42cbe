#include "facml/nn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "facml/counters.hpp"
#include "facml/errors.hpp"

namespace facml {

Activation activation_from_string(const std::string& s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw UsageError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "?";
}

BatchMode batch_mode_from_string(const std::string& s) {
  if (s == "batch") return BatchMode::Batch;
  if (s == "minibatch") return BatchMode::MiniBatch;
  if (s == "sgd") return BatchMode::Sgd;
  throw UsageError("unknown batch mode '" + s + "'");
}

std::string to_string(BatchMode m) {
  switch (m) {
    case BatchMode::Batch: return "batch";
    case BatchMode::MiniBatch: return "minibatch";
    case BatchMode::Sgd: return "sgd";
  }
  return "?";
}

void activation_apply(Activation kind, const Eigen::MatrixXd& a, Eigen::MatrixXd& value,
                      Eigen::MatrixXd& deriv) {
  switch (kind) {
    case Activation::Sigmoid:
      value = (1.0 / (1.0 + (-a.array()).exp())).matrix();
      deriv = (value.array() * (1.0 - value.array())).matrix();
      break;
    case Activation::Tanh:
      value = a.array().tanh().matrix();
      deriv = (1.0 - value.array().square()).matrix();
      break;
    case Activation::Relu:
      value = a.cwiseMax(0.0);
      deriv = (a.array() > 0.0).cast<double>().matrix();
      break;
  }
}

MlpParams init_mlp(const std::vector<std::size_t>& layer_sizes, Activation activation,
                   const DimPartition& input_partition, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ShapeError("network needs at least input and output layers");
  if (input_partition.total() != layer_sizes.front())
    throw ShapeError("input partition does not tile the input width");
  MlpParams p;
  p.layer_sizes = layer_sizes;
  p.activation = activation;
  p.input_partition = input_partition;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(layer_sizes[l]);
    const auto fan_out = static_cast<Eigen::Index>(layer_sizes[l + 1]);
    const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-lim, lim);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < fan_out; ++i)
      for (Eigen::Index j = 0; j < fan_in; ++j) w(i, j) = dist(rng);
    p.w.push_back(std::move(w));
    p.b.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

T2Cache make_t2_cache(const FeatureMatrix& features, const MlpParams& params, std::size_t table,
                      bool include_bias) {
  if (table < 1 || table >= params.input_partition.blocks())
    throw ShapeError("t2 cache table index out of range");
  const auto off = static_cast<Eigen::Index>(params.input_partition.offsets[table]);
  const auto dm = static_cast<Eigen::Index>(params.input_partition.widths[table]);
  if (features.cols() != dm) throw ShapeError("t2 cache feature width mismatch");
  const auto n_h = static_cast<Eigen::Index>(params.layer_sizes[1]);
  T2Cache c;
  c.t2.noalias() = params.w[0].middleCols(off, dm) * features.transpose();
  if (include_bias) c.t2.colwise() += params.b[0];
  c.version = params.version;
  counters::add_mults(static_cast<std::uint64_t>(features.rows()) *
                      static_cast<std::uint64_t>(n_h * dm));
  return c;
}

Eigen::MatrixXd first_layer_direct(const Eigen::MatrixXd& x, const MlpParams& params) {
  if (x.rows() != static_cast<Eigen::Index>(params.input_dim()))
    throw ShapeError("input width mismatch");
  Eigen::MatrixXd a = params.w[0] * x;
  a.colwise() += params.b[0];
  counters::add_mults(static_cast<std::uint64_t>(x.cols()) *
                      static_cast<std::uint64_t>(params.w[0].rows() * params.w[0].cols()));
  return a;
}

Eigen::MatrixXd first_layer_factorized(const Eigen::MatrixXd& x_s, const T2Cache& cache,
                                       std::uint32_t tuple, const MlpParams& params) {
  if (cache.version != params.version)
    throw StaleCache("t2 cache stamped " + std::to_string(cache.version) + ", parameters at " +
                     std::to_string(params.version));
  const auto d_s = static_cast<Eigen::Index>(params.input_partition.widths[0]);
  if (x_s.rows() != d_s) throw ShapeError("x_s width mismatch");
  Eigen::MatrixXd a = params.w[0].leftCols(d_s) * x_s;
  a.colwise() += cache.t2.col(tuple);
  counters::add_mults(static_cast<std::uint64_t>(x_s.cols()) *
                      static_cast<std::uint64_t>(params.w[0].rows() * d_s));
  return a;
}

Eigen::MatrixXd first_layer_multiway(const Eigen::MatrixXd& x_s, const std::vector<T2Cache>& caches,
                                     const std::vector<std::vector<std::uint32_t>>& tuple_of_col,
                                     const MlpParams& params) {
  if (caches.size() != params.input_partition.blocks() - 1)
    throw ShapeError("need one t2 cache per attribute table");
  if (tuple_of_col.size() != caches.size()) throw ShapeError("tuple map / cache count mismatch");
  for (const auto& c : caches)
    if (c.version != params.version) throw StaleCache("t2 cache predates current parameters");
  const auto d_s = static_cast<Eigen::Index>(params.input_partition.widths[0]);
  if (x_s.rows() != d_s) throw ShapeError("x_s width mismatch");
  const auto g = x_s.cols();
  Eigen::MatrixXd a = params.w[0].leftCols(d_s) * x_s;
  for (std::size_t m = 0; m < caches.size(); ++m) {
    if (tuple_of_col[m].size() != static_cast<std::size_t>(g))
      throw ShapeError("tuple map length mismatch");
    for (Eigen::Index c = 0; c < g; ++c)
      a.col(c) += caches[m].t2.col(tuple_of_col[m][static_cast<std::size_t>(c)]);
  }
  counters::add_mults(static_cast<std::uint64_t>(g) *
                      static_cast<std::uint64_t>(params.w[0].rows() * d_s));
  return a;
}

ForwardStash forward_from_first(const Eigen::MatrixXd& a1, const MlpParams& params) {
  const std::size_t n_hidden = params.layer_sizes.size() - 2;
  ForwardStash st;
  st.hidden.resize(n_hidden);
  st.deriv.resize(n_hidden);
  Eigen::MatrixXd a = a1;
  for (std::size_t i = 0; i < n_hidden; ++i) {
    activation_apply(params.activation, a, st.hidden[i], st.deriv[i]);
    a.noalias() = params.w[i + 1] * st.hidden[i];
    a.colwise() += params.b[i + 1];
    counters::add_mults(static_cast<std::uint64_t>(st.hidden[i].cols()) *
                        static_cast<std::uint64_t>(params.w[i + 1].rows() * params.w[i + 1].cols()));
  }
  st.output = a;
  return st;
}

ForwardStash forward_full(const Eigen::MatrixXd& x, const MlpParams& params) {
  return forward_from_first(first_layer_direct(x, params), params);
}

double mse_loss(const Eigen::MatrixXd& output, const Eigen::VectorXd& y) {
  if (output.cols() != y.size() || output.rows() != 1)
    throw ShapeError("mse_loss expects a 1 x N output against N targets");
  const double g = static_cast<double>(y.size());
  return (output.transpose().col(0) - y).squaredNorm() / (2.0 * g);
}

GradientSet backward(const std::vector<Eigen::MatrixXd>& x_blocks, const ForwardStash& stash,
                     const Eigen::VectorXd& y, const MlpParams& params) {
  if (x_blocks.empty()) throw ShapeError("backward needs at least one feature block");
  const auto g = x_blocks[0].cols();
  Eigen::Index width = 0;
  for (const auto& xb : x_blocks) {
    if (xb.cols() != g) throw ShapeError("feature blocks disagree on sample count");
    width += xb.rows();
  }
  if (width != static_cast<Eigen::Index>(params.input_dim()))
    throw ShapeError("feature blocks do not tile the input width");
  if (stash.output.cols() != g || y.size() != g) throw ShapeError("stash/target shape mismatch");

  const std::size_t layers = params.layers();
  GradientSet grads;
  grads.dw.resize(layers);
  grads.db.resize(layers);

  Eigen::MatrixXd delta = (stash.output.row(0).transpose() - y).transpose() / static_cast<double>(g);
  for (std::size_t l = layers - 1; l >= 1; --l) {
    grads.dw[l].noalias() = delta * stash.hidden[l - 1].transpose();
    grads.db[l] = delta.rowwise().sum();
    counters::add_mults(static_cast<std::uint64_t>(g) *
                        static_cast<std::uint64_t>(delta.rows() * stash.hidden[l - 1].rows()));
    Eigen::MatrixXd back = params.w[l].transpose() * delta;
    counters::add_mults(static_cast<std::uint64_t>(g) *
                        static_cast<std::uint64_t>(params.w[l].rows() * params.w[l].cols()));
    delta = (back.array() * stash.deriv[l - 1].array()).matrix();
  }

  const auto n_h = delta.rows();
  grads.dw[0].resize(n_h, width);
  Eigen::Index off = 0;
  for (const auto& xb : x_blocks) {
    grads.dw[0].middleCols(off, xb.rows()).noalias() = delta * xb.transpose();
    counters::add_mults(static_cast<std::uint64_t>(g) * static_cast<std::uint64_t>(n_h * xb.rows()));
    off += xb.rows();
  }
  grads.db[0] = delta.rowwise().sum();
  return grads;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct PassTablesNN {
  std::vector<std::size_t> fk_ords;
  std::vector<AttributeTable> resolved;  // tables[1..q-1]
};

PassTablesNN load_pass_tables_nn(const StarJoin& join) {
  PassTablesNN pt;
  for (std::size_t m = 0; m < join.q(); ++m)
    pt.fk_ords.push_back(join.s.schema().fk_ordinal(join.fk_columns[m]));
  for (std::size_t m = 1; m < join.q(); ++m)
    pt.resolved.push_back(AttributeTable::load(join.tables[m]));
  return pt;
}

void map_resolved_rows_nn(const PassTablesNN& pt, const Batch& s_rows,
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

void activation_value_inplace(Activation kind, Eigen::MatrixXd& a) {
  switch (kind) {
    case Activation::Sigmoid:
      a = (1.0 / (1.0 + (-a.array()).exp())).matrix();
      break;
    case Activation::Tanh:
      a = a.array().tanh().matrix();
      break;
    case Activation::Relu:
      a = a.cwiseMax(0.0);
      break;
  }
}

// f'(a) recovered from h = f(a); avoids stashing a second n_h x N matrix.
Eigen::MatrixXd deriv_from_value(Activation kind, const Eigen::MatrixXd& h) {
  switch (kind) {
    case Activation::Sigmoid:
      return (h.array() * (1.0 - h.array())).matrix();
    case Activation::Tanh:
      return (1.0 - h.array().square()).matrix();
    case Activation::Relu:
      return (h.array() > 0.0).cast<double>().matrix();
  }
  return h;
}

void check_targets(const DataSource& data, Strategy strategy) {
  if (strategy == Strategy::Materialized) {
    if (data.t && !data.t->schema().has_target())
      throw SchemaError("T carries no target column; NN training needs targets");
    if (!data.t && data.join && !data.join->s.schema().has_target())
      throw SchemaError("S carries no target column; NN training needs targets");
  } else if (data.join && !data.join->s.schema().has_target()) {
    throw SchemaError("S carries no target column; NN training needs targets");
  }
}

struct FullBatchState {
  Eigen::MatrixXd a1;  // n_h x N first-layer pre-activations
  Eigen::VectorXd y;   // N targets
};

// Forward data pass: fills first-layer pre-activations and targets, in
// storage order for the materialized strategy and probe order for the
// join strategies. The backward pass repeats the same deterministic
// traversal, so columns line up without any scatter.
void forward_pass(Strategy strategy, const DataSource& data, const MlpParams& params,
                  FullBatchState& st) {
  const auto n = static_cast<Eigen::Index>(data.n_rows());
  const auto n_h = static_cast<Eigen::Index>(params.layer_sizes[1]);
  st.a1.resize(n_h, n);
  st.y.resize(n);

  if (strategy == Strategy::Materialized) {
    Batch b;
    auto cur = data.t->scan(data.block_size_pages());
    while (cur.next(b)) {
      const auto first = static_cast<Eigen::Index>(b.row_ordinals.front());
      const auto g = static_cast<Eigen::Index>(b.size());
      st.a1.middleCols(first, g).noalias() = params.w[0] * b.features.transpose();
      st.a1.middleCols(first, g).colwise() += params.b[0];
      counters::add_mults(static_cast<std::uint64_t>(g) *
                          static_cast<std::uint64_t>(params.w[0].rows() * params.w[0].cols()));
      for (std::size_t r = 0; r < b.size(); ++r) st.y(first + static_cast<Eigen::Index>(r)) = b.targets[r];
    }
    return;
  }

  const StarJoin& join = *data.join;
  PassTablesNN pt = load_pass_tables_nn(join);
  const auto d_s = static_cast<Eigen::Index>(join.d_s());
  const std::size_t q = join.q();

  std::vector<T2Cache> resolved_cache;
  if (strategy == Strategy::Factorized)
    for (std::size_t m = 0; m < pt.resolved.size(); ++m)
      resolved_cache.push_back(make_t2_cache(pt.resolved[m].features, params, m + 2, false));

  Batch r_blk;
  GroupedProbe probe;
  std::vector<std::vector<std::uint32_t>> tmap;
  FeatureMatrix xj;
  Eigen::Index done = 0;
  auto cur = join.tables[0].scan(join.block_size_pages);
  while (cur.next(r_blk)) {
    probe_matching(join.s, r_blk, join.fk_columns[0], probe);
    map_resolved_rows_nn(pt, probe.s_rows, tmap);
    const auto total = static_cast<Eigen::Index>(probe.s_rows.size());
    if (total == 0) continue;

    auto a_blk = st.a1.middleCols(done, total);
    if (strategy == Strategy::Streamed) {
      xj.resize(total, static_cast<Eigen::Index>(join.joined_width()));
      xj.leftCols(d_s) = probe.s_rows.features;
      const auto d_1 = static_cast<Eigen::Index>(join.d_r(0));
      for (const ProbeGroup& g : probe.groups) {
        if (g.count == 0) continue;
        xj.block(static_cast<Eigen::Index>(g.offset), d_s, static_cast<Eigen::Index>(g.count), d_1)
            .rowwise() = r_blk.features.row(static_cast<Eigen::Index>(g.r_row));
      }
      Eigen::Index off = d_s + d_1;
      for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
        const auto dm = static_cast<Eigen::Index>(pt.resolved[m].features.cols());
        for (Eigen::Index r = 0; r < total; ++r)
          xj.block(r, off, 1, dm) = pt.resolved[m].features.row(tmap[m][static_cast<std::size_t>(r)]);
        off += dm;
      }
      a_blk.noalias() = params.w[0] * xj.transpose();
      a_blk.colwise() += params.b[0];
      counters::add_mults(static_cast<std::uint64_t>(total) *
                          static_cast<std::uint64_t>(params.w[0].rows() * params.w[0].cols()));
    } else {
      // Factorized: shared per-tuple partial pre-activations.
      T2Cache c1 = make_t2_cache(r_blk.features, params, 1, true);
      a_blk.noalias() = params.w[0].leftCols(d_s) * probe.s_rows.features.transpose();
      counters::add_mults(static_cast<std::uint64_t>(total) *
                          static_cast<std::uint64_t>(params.w[0].rows() * d_s));
      for (const ProbeGroup& g : probe.groups) {
        if (g.count == 0) continue;
        a_blk.middleCols(static_cast<Eigen::Index>(g.offset), static_cast<Eigen::Index>(g.count))
            .colwise() += c1.t2.col(static_cast<Eigen::Index>(g.r_row));
      }
      for (std::size_t m = 0; m < pt.resolved.size(); ++m)
        for (Eigen::Index r = 0; r < total; ++r)
          a_blk.col(r) += resolved_cache[m].t2.col(tmap[m][static_cast<std::size_t>(r)]);
    }

    for (std::size_t r = 0; r < probe.s_rows.size(); ++r)
      st.y(done + static_cast<Eigen::Index>(r)) = probe.s_rows.targets[r];
    done += total;
  }
}

// Backward data pass: first-layer weight gradient [PG_S | PG_R...] from a
// fresh read of the features (x_S by probing, x_R expanded per group).
void backward_pass(Strategy strategy, const DataSource& data, const Eigen::MatrixXd& delta1,
                   Eigen::MatrixXd& dw1) {
  const auto n_h = delta1.rows();
  dw1.setZero();

  if (strategy == Strategy::Materialized) {
    Batch b;
    auto cur = data.t->scan(data.block_size_pages());
    while (cur.next(b)) {
      const auto first = static_cast<Eigen::Index>(b.row_ordinals.front());
      const auto g = static_cast<Eigen::Index>(b.size());
      dw1.noalias() += delta1.middleCols(first, g) * b.features;
      counters::add_mults(static_cast<std::uint64_t>(g) *
                          static_cast<std::uint64_t>(n_h * b.features.cols()));
    }
    return;
  }

  const StarJoin& join = *data.join;
  PassTablesNN pt = load_pass_tables_nn(join);
  const auto d_s = static_cast<Eigen::Index>(join.d_s());
  const auto d_1 = static_cast<Eigen::Index>(join.d_r(0));

  Batch r_blk;
  GroupedProbe probe;
  std::vector<std::vector<std::uint32_t>> tmap;
  FeatureMatrix xr;
  Eigen::Index done = 0;
  auto cur = join.tables[0].scan(join.block_size_pages);
  while (cur.next(r_blk)) {
    probe_matching(join.s, r_blk, join.fk_columns[0], probe);
    map_resolved_rows_nn(pt, probe.s_rows, tmap);
    const auto total = static_cast<Eigen::Index>(probe.s_rows.size());
    if (total == 0) continue;

    // same traversal as the forward pass, so these delta columns belong
    // to exactly this block's rows
    auto dcols = delta1.middleCols(done, total);
    done += total;

    dw1.leftCols(d_s).noalias() += dcols * probe.s_rows.features;
    counters::add_mults(static_cast<std::uint64_t>(total) * static_cast<std::uint64_t>(n_h * d_s));

    // x_R1^T has N rows: expand the block's tuples group-wise, then one
    // multiply per sample column as in the unfactorized route.
    xr.resize(total, d_1);
    for (const ProbeGroup& g : probe.groups) {
      if (g.count == 0) continue;
      xr.middleRows(static_cast<Eigen::Index>(g.offset), static_cast<Eigen::Index>(g.count))
          .rowwise() = r_blk.features.row(static_cast<Eigen::Index>(g.r_row));
    }
    dw1.middleCols(d_s, d_1).noalias() += dcols * xr;
    counters::add_mults(static_cast<std::uint64_t>(total) * static_cast<std::uint64_t>(n_h * d_1));

    Eigen::Index off = d_s + d_1;
    for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
      const auto dm = static_cast<Eigen::Index>(pt.resolved[m].features.cols());
      xr.resize(total, dm);
      for (Eigen::Index r = 0; r < total; ++r)
        xr.row(r) = pt.resolved[m].features.row(tmap[m][static_cast<std::size_t>(r)]);
      dw1.middleCols(off, dm).noalias() += dcols * xr;
      counters::add_mults(static_cast<std::uint64_t>(total) * static_cast<std::uint64_t>(n_h * dm));
      off += dm;
    }
  }
}

struct StepBatch {
  std::vector<Eigen::MatrixXd> x_blocks;  // per-table blocks, cols = samples
  Eigen::MatrixXd x_joined;               // d x g (materialized/streamed forward)
  Eigen::VectorXd y;
  FeatureMatrix r1_feats;  // 1 x d_1: the step's shared R_1 tuple (factorized)
};

}  // namespace

NnTrainResult train_nn(Strategy strategy, NnData data, const NnConfig& config,
                       const NnObserver& observer) {
  NnTrainResult out;
  TrainTrace& trace = out.trace;
  trace.model = "nn";
  trace.strategy = to_string(strategy);
  nlohmann::json hidden_json = config.hidden;
  trace.config = {{"hidden", hidden_json},
                  {"activation", to_string(config.activation)},
                  {"epochs", config.epochs},
                  {"lr", config.lr},
                  {"batch_mode", to_string(config.batch_mode)},
                  {"seed", config.seed},
                  {"strategy", trace.strategy}};

  const auto t_start = std::chrono::steady_clock::now();

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
  check_targets(data, strategy);

  const DimPartition partition = DimPartition::from_widths(data.partition_widths());
  std::vector<std::size_t> layer_sizes{partition.total()};
  for (std::size_t h : config.hidden) layer_sizes.push_back(h);
  layer_sizes.push_back(1);

  MlpParams params = init_mlp(layer_sizes, config.activation, partition, config.seed);
  const std::uint64_t n = data.n_rows();
  trace.data_stats = {{"n_rows", n}, {"d", partition.total()}};
  if (data.join) {
    trace.data_stats["d_s"] = data.join->d_s();
    std::vector<std::uint64_t> nrs;
    for (auto& tb : data.join->tables) nrs.push_back(tb.row_count());
    trace.data_stats["n_r"] = nrs;
  }

  const double lr = config.lr;
  auto apply_update = [&](const GradientSet& grads) {
    for (std::size_t l = 0; l < params.layers(); ++l) {
      params.w[l] -= lr * grads.dw[l];
      params.b[l] -= lr * grads.db[l];
      counters::add_mults(static_cast<std::uint64_t>(grads.dw[l].size() + grads.db[l].size()));
    }
    ++params.version;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    IterationTrace it;
    it.index = epoch;
    double epoch_loss = 0;

    if (config.batch_mode == BatchMode::Batch) {
      FullBatchState st;
      const std::size_t n_hidden = params.layer_sizes.size() - 2;
      std::vector<Eigen::MatrixXd> hidden(n_hidden);
      Eigen::MatrixXd output;
      {
        PhaseTimer timer(it, "forward");
        forward_pass(strategy, data, params, st);
        for (std::size_t l = 0; l < n_hidden; ++l) {
          if (l == 0) {
            activation_value_inplace(params.activation, st.a1);
            hidden[0] = std::move(st.a1);
          } else {
            hidden[l].noalias() = params.w[l] * hidden[l - 1];
            hidden[l].colwise() += params.b[l];
            counters::add_mults(static_cast<std::uint64_t>(hidden[l].cols()) *
                                static_cast<std::uint64_t>(params.w[l].rows() * params.w[l].cols()));
            activation_value_inplace(params.activation, hidden[l]);
          }
        }
        const auto& top = hidden.empty() ? st.a1 : hidden.back();
        output.noalias() = params.w.back() * top;
        output.colwise() += params.b.back();
        counters::add_mults(static_cast<std::uint64_t>(top.cols()) *
                            static_cast<std::uint64_t>(params.w.back().rows() * params.w.back().cols()));
        epoch_loss = mse_loss(output, st.y);
      }
      GradientSet grads;
      {
        PhaseTimer timer(it, "backward");
        grads.dw.resize(params.layers());
        grads.db.resize(params.layers());
        Eigen::MatrixXd delta =
            (output.row(0).transpose() - st.y).transpose() / static_cast<double>(n);
        for (std::size_t l = params.layers() - 1; l >= 1; --l) {
          grads.dw[l].noalias() = delta * hidden[l - 1].transpose();
          grads.db[l] = delta.rowwise().sum();
          counters::add_mults(static_cast<std::uint64_t>(delta.cols()) *
                              static_cast<std::uint64_t>(delta.rows() * hidden[l - 1].rows()));
          Eigen::MatrixXd back = params.w[l].transpose() * delta;
          counters::add_mults(static_cast<std::uint64_t>(delta.cols()) *
                              static_cast<std::uint64_t>(params.w[l].rows() * params.w[l].cols()));
          delta = (back.array() * deriv_from_value(params.activation, hidden[l - 1]).array()).matrix();
        }
        grads.dw[0].resize(params.w[0].rows(), params.w[0].cols());
        backward_pass(strategy, data, delta, grads.dw[0]);
        grads.db[0] = delta.rowwise().sum();
      }
      {
        PhaseTimer timer(it, "update");
        apply_update(grads);
      }
    } else {
      // Mini-batch / SGD: one R tuple's S-group (or one row) per step,
      // visiting a seeded per-epoch permutation of R_1 keys.
      PhaseStats fwd_stats, bwd_stats, upd_stats;
      const auto epoch_t0 = std::chrono::steady_clock::now();

      auto run_step = [&](StepBatch& step) {
        const auto g = step.y.size();
        if (g == 0) return;
        ForwardStash stash;
        {
          const auto f0 = std::chrono::steady_clock::now();
          CounterScope cs(fwd_stats.counters);
          Eigen::MatrixXd a1;
          if (strategy == Strategy::Factorized) {
            // One shared tuple per step: its partial pre-activation (with
            // the bias) is computed once and broadcast over the group.
            T2Cache c1 = make_t2_cache(step.r1_feats, params, 1, true);
            std::vector<T2Cache> res;
            for (std::size_t m = 2; m < step.x_blocks.size(); ++m)
              res.push_back(make_t2_cache(FeatureMatrix(step.x_blocks[m].transpose()), params, m, false));
            a1 = params.w[0].leftCols(step.x_blocks[0].rows()) * step.x_blocks[0];
            counters::add_mults(static_cast<std::uint64_t>(g) *
                                static_cast<std::uint64_t>(params.w[0].rows() *
                                                           step.x_blocks[0].rows()));
            a1.colwise() += c1.t2.col(0);
            for (Eigen::Index c = 0; c < g; ++c)
              for (std::size_t m = 0; m < res.size(); ++m)
                a1.col(c) += res[m].t2.col(c);
          } else {
            a1 = first_layer_direct(step.x_joined, params);
          }
          stash = forward_from_first(a1, params);
          epoch_loss += mse_loss(stash.output, step.y) * static_cast<double>(g);
          fwd_stats.ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - f0).count();
        }
        GradientSet grads;
        {
          const auto b0 = std::chrono::steady_clock::now();
          CounterScope cs(bwd_stats.counters);
          grads = backward(step.x_blocks, stash, step.y, params);
          bwd_stats.ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - b0).count();
        }
        {
          const auto u0 = std::chrono::steady_clock::now();
          CounterScope cs(upd_stats.counters);
          apply_update(grads);
          upd_stats.ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - u0).count();
        }
      };

      CounterScope fetch_scope(fwd_stats.counters);  // data fetch charged to forward
      if (data.join) {
        const StarJoin& join = *data.join;
        PassTablesNN pt = load_pass_tables_nn(join);
        AttributeTable r1 = AttributeTable::load(join.tables[0]);

        std::vector<std::uint32_t> order(r1.keys.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 perm_rng(config.seed * 0x9E3779B97F4A7C15ULL + epoch);
        std::shuffle(order.begin(), order.end(), perm_rng);

        const FkIndex& fk_idx = join.s.fk_index(join.fk_columns[0]);
        Batch s_rows;
        std::vector<std::vector<std::uint32_t>> tmap;
        for (std::uint32_t t1 : order) {
          auto itg = fk_idx.find(r1.keys[t1]);
          if (itg == fk_idx.end()) continue;  // orphan R tuple
          std::vector<std::uint64_t> ords(itg->second.begin(), itg->second.end());
          if (strategy == Strategy::Materialized) {
            data.t->read_rows(ords, s_rows);
          } else {
            join.s.read_rows(ords, s_rows);
            map_resolved_rows_nn(pt, s_rows, tmap);
          }

          auto make_step = [&](std::size_t first, std::size_t count) {
            StepBatch step;
            step.y.resize(static_cast<Eigen::Index>(count));
            for (std::size_t r = 0; r < count; ++r)
              step.y(static_cast<Eigen::Index>(r)) = s_rows.targets[first + r];
            if (strategy == Strategy::Materialized) {
              step.x_joined = s_rows.features.middleRows(static_cast<Eigen::Index>(first),
                                                         static_cast<Eigen::Index>(count))
                                  .transpose();
              Eigen::Index off = 0;
              for (std::size_t mb = 0; mb < partition.blocks(); ++mb) {
                const auto wm = static_cast<Eigen::Index>(partition.widths[mb]);
                step.x_blocks.push_back(step.x_joined.middleRows(off, wm));
                off += wm;
              }
            } else {
              step.x_blocks.resize(partition.blocks());
              step.x_blocks[0] = s_rows.features.middleRows(static_cast<Eigen::Index>(first),
                                                            static_cast<Eigen::Index>(count))
                                     .transpose();
              step.r1_feats = r1.features.row(t1);
              step.x_blocks[1] =
                  r1.features.row(t1).transpose().replicate(1, static_cast<Eigen::Index>(count));
              for (std::size_t m = 0; m < pt.resolved.size(); ++m) {
                const auto dm = static_cast<Eigen::Index>(pt.resolved[m].features.cols());
                Eigen::MatrixXd xb(dm, static_cast<Eigen::Index>(count));
                for (std::size_t r = 0; r < count; ++r)
                  xb.col(static_cast<Eigen::Index>(r)) =
                      pt.resolved[m].features.row(tmap[m][first + r]).transpose();
                step.x_blocks[m + 2] = std::move(xb);
              }
              if (strategy == Strategy::Streamed) {
                step.x_joined.resize(static_cast<Eigen::Index>(partition.total()),
                                     static_cast<Eigen::Index>(count));
                Eigen::Index off = 0;
                for (const auto& xb : step.x_blocks) {
                  step.x_joined.middleRows(off, xb.rows()) = xb;
                  off += xb.rows();
                }
              }
            }
            return step;
          };

          if (config.batch_mode == BatchMode::MiniBatch) {
            StepBatch step = make_step(0, s_rows.size());
            run_step(step);
          } else {
            for (std::size_t r = 0; r < s_rows.size(); ++r) {
              StepBatch step = make_step(r, 1);
              run_step(step);
            }
          }
        }
      } else {
        // Bare T: sequential scan batches as steps (storage order).
        Batch b;
        auto cur = data.t->scan(data.block_size_pages());
        while (cur.next(b)) {
          auto make_step = [&](std::size_t first, std::size_t count) {
            StepBatch step;
            step.x_joined = b.features.middleRows(static_cast<Eigen::Index>(first),
                                                  static_cast<Eigen::Index>(count))
                                .transpose();
            step.x_blocks.push_back(step.x_joined);
            step.y.resize(static_cast<Eigen::Index>(count));
            for (std::size_t r = 0; r < count; ++r)
              step.y(static_cast<Eigen::Index>(r)) = b.targets[first + r];
            return step;
          };
          if (config.batch_mode == BatchMode::MiniBatch) {
            StepBatch step = make_step(0, b.size());
            run_step(step);
          } else {
            for (std::size_t r = 0; r < b.size(); ++r) {
              StepBatch step = make_step(r, 1);
              run_step(step);
            }
          }
        }
      }
      epoch_loss /= static_cast<double>(n);
      fwd_stats.ms +=
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_t0).count() -
          fwd_stats.ms - bwd_stats.ms - upd_stats.ms;  // attribute fetch time to the forward phase
      it.phases.emplace_back("forward", fwd_stats);
      it.phases.emplace_back("backward", bwd_stats);
      it.phases.emplace_back("update", upd_stats);
    }

    it.metric = epoch_loss;
    trace.iterations.push_back(std::move(it));
    if (observer) observer(epoch, params, epoch_loss);
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
