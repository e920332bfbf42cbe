#include <doctest.h>

#include <random>

#include "facml/counters.hpp"
#include "facml/datagen.hpp"
#include "facml/errors.hpp"
#include "facml/nn.hpp"
#include "facml/verify.hpp"
#include "test_util.hpp"

using namespace facml;
using namespace facml::test;

namespace {

MlpParams tiny_net(std::size_t d, std::size_t n_h, Activation act, std::uint64_t seed,
                   std::vector<std::size_t> partition = {}) {
  if (partition.empty()) partition = {d};
  return init_mlp({d, n_h, 1}, act, DimPartition::from_widths(partition), seed);
}

double loss_at(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpParams& p) {
  return mse_loss(forward_full(x, p).output, y);
}

struct Fixture {
  TempDir tmp;
  Catalog cat;
  SynthResult gen;
  DataSource data;

  explicit Fixture(SynthSpec spec, bool with_t = true) : cat(Catalog::create(tmp.path)) {
    spec.with_target = true;
    gen = gen_dataset(spec, cat);
    data.join = StarJoin::open(gen.join, cat);
    if (with_t) data.t = materialize_join(gen.join, cat, "t");
  }
};

SynthSpec nn_spec(std::uint64_t seed, std::uint64_t n_s = 600, std::uint64_t n_r = 12) {
  SynthSpec s;
  s.n_s = n_s;
  s.n_r = {n_r};
  s.d_s = 3;
  s.d_r = {5};
  s.k_true = 2;
  s.seed = seed;
  s.page_size_rows = 64;
  return s;
}

double max_param_diff(const MlpParams& a, const MlpParams& b) {
  double worst = 0;
  for (std::size_t l = 0; l < a.layers(); ++l) {
    for (Eigen::Index i = 0; i < a.w[l].size(); ++i)
      worst = std::max(worst, rel_diff(a.w[l].data()[i], b.w[l].data()[i]));
    for (Eigen::Index i = 0; i < a.b[l].size(); ++i)
      worst = std::max(worst, rel_diff(a.b[l](i), b.b[l](i)));
  }
  return worst;
}

}  // namespace

TEST_CASE("activation values and derivatives") {
  Eigen::MatrixXd a(1, 3), v, d;
  a << 0.0, -1.0, 2.0;

  activation_apply(Activation::Sigmoid, a, v, d);
  CHECK(v(0, 0) == doctest::Approx(0.5));
  CHECK(d(0, 0) == doctest::Approx(0.25));

  activation_apply(Activation::Relu, a, v, d);
  CHECK(v(0, 1) == 0.0);
  CHECK(v(0, 2) == 2.0);
  CHECK(d(0, 1) == 0.0);
  CHECK(d(0, 2) == 1.0);

  // tanh derivative against a central difference
  activation_apply(Activation::Tanh, a, v, d);
  const double h = 1e-6;
  Eigen::MatrixXd vp, vm, unused;
  activation_apply(Activation::Tanh, a.array() + h, vp, unused);
  activation_apply(Activation::Tanh, a.array() - h, vm, unused);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    CHECK(d.data()[i] == doctest::Approx((vp.data()[i] - vm.data()[i]) / (2 * h)).epsilon(1e-8));
}

TEST_CASE("zero weights propagate the bias") {
  MlpParams p = tiny_net(4, 3, Activation::Relu, 1);
  p.w[0].setZero();
  p.b[0] = Eigen::Vector3d(0.5, -1.0, 2.0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 7);
  Eigen::MatrixXd a = first_layer_direct(x, p);
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    CHECK(a(0, c) == 0.5);
    CHECK(a(2, c) == 2.0);
  }
}

TEST_CASE("t2 is computed once per tuple and reused across the group") {
  const std::size_t d_s = 3, d_r = 5, n_h = 4;
  MlpParams p = tiny_net(d_s + d_r, n_h, Activation::Sigmoid, 2, {d_s, d_r});
  FeatureMatrix r_feats = FeatureMatrix::Random(1, d_r);

  Counters fact;
  Eigen::MatrixXd x_s = Eigen::MatrixXd::Random(d_s, 3);  // one tuple, three S rows
  Eigen::MatrixXd a_f;
  {
    CounterScope scope(fact);
    T2Cache cache = make_t2_cache(r_feats, p, 1, true);
    a_f = first_layer_factorized(x_s, cache, 0, p);
  }
  // n_h * d_R charged once for the tuple, n_h * d_S per S row
  CHECK(fact.mults == n_h * d_r + 3 * n_h * d_s);

  Counters direct;
  Eigen::MatrixXd x(d_s + d_r, 3), a_m;
  x.topRows(d_s) = x_s;
  x.bottomRows(d_r) = r_feats.row(0).transpose().replicate(1, 3);
  {
    CounterScope scope(direct);
    a_m = first_layer_direct(x, p);
  }
  CHECK(direct.mults == 3 * n_h * (d_s + d_r));
  CHECK((a_f - a_m).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("stale t2 caches are detected") {
  MlpParams p = tiny_net(4, 2, Activation::Tanh, 3, {2, 2});
  T2Cache cache = make_t2_cache(FeatureMatrix::Random(5, 2), p, 1, true);
  ++p.version;
  CHECK_THROWS_AS(first_layer_factorized(Eigen::MatrixXd::Random(2, 1), cache, 0, p), StaleCache);
}

TEST_CASE("single relu unit propagates a plain sum") {
  MlpParams p = tiny_net(3, 1, Activation::Relu, 4);
  p.w[0].setOnes();
  p.b[0].setConstant(0.25);
  p.w[1].setOnes();
  p.b[1].setConstant(0.75);
  Eigen::MatrixXd x(3, 1);
  x << 1.0, 2.0, 3.0;
  ForwardStash st = forward_full(x, p);
  CHECK(st.output(0, 0) == doctest::Approx(1 + 2 + 3 + 0.25 + 0.75));
}

TEST_CASE("zero input and zero biases give zero output for odd activations") {
  for (Activation act : {Activation::Tanh, Activation::Relu}) {
    MlpParams p = tiny_net(4, 3, act, 5);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 2);
    CHECK(forward_full(x, p).output.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("mse_loss basics and loop oracle") {
  Eigen::MatrixXd o(1, 2);
  o << 1.0, 2.0;
  Eigen::VectorXd y(2);
  y << 1.0, 2.0;
  CHECK(mse_loss(o, y) == 0.0);

  Eigen::MatrixXd o1(1, 1);
  o1 << 3.0;
  Eigen::VectorXd y1(1);
  y1 << 1.0;
  CHECK(mse_loss(o1, y1) == doctest::Approx(2.0));  // (1/2)*4

  std::mt19937_64 rng(6);
  std::normal_distribution<double> unit;
  Eigen::MatrixXd oo(1, 9);
  Eigen::VectorXd yy(9);
  for (int i = 0; i < 9; ++i) {
    oo(0, i) = unit(rng);
    yy(i) = unit(rng);
  }
  double want = 0;
  for (int i = 0; i < 9; ++i) want += (oo(0, i) - yy(i)) * (oo(0, i) - yy(i));
  want /= 2 * 9;
  CHECK(mse_loss(oo, yy) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("perfect predictions give zero gradients") {
  MlpParams p = tiny_net(3, 2, Activation::Sigmoid, 7);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
  ForwardStash st = forward_full(x, p);
  Eigen::VectorXd y = st.output.row(0).transpose();
  GradientSet g = backward({x}, st, y, p);
  for (const auto& dw : g.dw) CHECK(dw.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& db : g.db) CHECK(db.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> unit;
  for (Activation act : {Activation::Sigmoid, Activation::Tanh, Activation::Relu}) {
    MlpParams p = tiny_net(5, 4, act, 9);
    Eigen::MatrixXd x(5, 6);
    Eigen::VectorXd y(6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = unit(rng);
    if (act == Activation::Relu) {
      // keep pre-activations away from the kink
      ForwardStash probe = forward_full(x, p);
      (void)probe;
      p.b[0].setConstant(0.1);
    }

    ForwardStash st = forward_full(x, p);
    GradientSet g = backward({x}, st, y, p);

    const double h = 1e-6;
    for (std::size_t l = 0; l < p.layers(); ++l) {
      for (Eigen::Index i = 0; i < p.w[l].size(); ++i) {
        MlpParams pp = p, pm = p;
        pp.w[l].data()[i] += h;
        pm.w[l].data()[i] -= h;
        const double fd = (loss_at(x, y, pp) - loss_at(x, y, pm)) / (2 * h);
        CHECK(rel_diff(g.dw[l].data()[i], fd) <= 1e-6);
      }
      for (Eigen::Index i = 0; i < p.b[l].size(); ++i) {
        MlpParams pp = p, pm = p;
        pp.b[l](i) += h;
        pm.b[l](i) -= h;
        const double fd = (loss_at(x, y, pp) - loss_at(x, y, pm)) / (2 * h);
        CHECK(rel_diff(g.db[l](i), fd) <= 1e-6);
      }
    }
  }
}

TEST_CASE("first-layer gradient splits into per-table blocks") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> unit;
  MlpParams p = tiny_net(6, 3, Activation::Tanh, 11, {2, 4});
  Eigen::MatrixXd x(6, 8);
  Eigen::VectorXd y(8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = unit(rng);

  ForwardStash st = forward_full(x, p);
  GradientSet whole = backward({x}, st, y, p);
  GradientSet split = backward({x.topRows(2), x.bottomRows(4)}, st, y, p);
  CHECK((whole.dw[0] - split.dw[0]).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("multiway first layer reduces to the binary route") {
  MlpParams p = tiny_net(7, 3, Activation::Sigmoid, 12, {3, 4});
  FeatureMatrix r = FeatureMatrix::Random(5, 4);
  Eigen::MatrixXd x_s = Eigen::MatrixXd::Random(3, 6);
  std::vector<std::uint32_t> pick{0, 3, 3, 1, 4, 2};

  T2Cache cache = make_t2_cache(r, p, 1, true);
  Eigen::MatrixXd via_multi = first_layer_multiway(x_s, {cache}, {pick}, p);
  for (Eigen::Index c = 0; c < 6; ++c) {
    Eigen::MatrixXd one = first_layer_factorized(x_s.col(c), cache, pick[static_cast<std::size_t>(c)], p);
    CHECK((via_multi.col(c) - one.col(0)).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("multiway first layer with zero attribute weights degenerates to S only") {
  MlpParams p = tiny_net(9, 2, Activation::Sigmoid, 13, {3, 4, 2});
  p.w[0].middleCols(3, 6).setZero();
  FeatureMatrix r1 = FeatureMatrix::Random(4, 4), r2 = FeatureMatrix::Random(3, 2);
  Eigen::MatrixXd x_s = Eigen::MatrixXd::Random(3, 5);
  T2Cache c1 = make_t2_cache(r1, p, 1, true);
  T2Cache c2 = make_t2_cache(r2, p, 2, false);
  Eigen::MatrixXd a = first_layer_multiway(x_s, {c1, c2}, {{0, 1, 2, 3, 0}, {0, 0, 1, 2, 2}}, p);
  Eigen::MatrixXd want = p.w[0].leftCols(3) * x_s;
  want.colwise() += p.b[0];
  CHECK((a - want).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("multiway first layer agrees with the direct route") {
  std::mt19937_64 rng(14);
  MlpParams p = tiny_net(9, 4, Activation::Tanh, 15, {3, 4, 2});
  FeatureMatrix r1 = FeatureMatrix::Random(5, 4), r2 = FeatureMatrix::Random(3, 2);
  Eigen::MatrixXd x_s = Eigen::MatrixXd::Random(3, 7);
  std::uniform_int_distribution<std::uint32_t> pick1(0, 4), pick2(0, 2);
  std::vector<std::uint32_t> t1, t2;
  for (int i = 0; i < 7; ++i) {
    t1.push_back(pick1(rng));
    t2.push_back(pick2(rng));
  }
  T2Cache c1 = make_t2_cache(r1, p, 1, true);
  T2Cache c2 = make_t2_cache(r2, p, 2, false);
  Eigen::MatrixXd a_f = first_layer_multiway(x_s, {c1, c2}, {t1, t2}, p);

  Eigen::MatrixXd x(9, 7);
  x.topRows(3) = x_s;
  for (int i = 0; i < 7; ++i) {
    x.block(3, i, 4, 1) = r1.row(t1[static_cast<std::size_t>(i)]).transpose();
    x.block(7, i, 2, 1) = r2.row(t2[static_cast<std::size_t>(i)]).transpose();
  }
  CHECK((a_f - first_layer_direct(x, p)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("lr = 0 leaves parameters untouched") {
  Fixture fx(nn_spec(16), /*with_t=*/false);
  NnConfig cfg;
  cfg.hidden = {4};
  cfg.epochs = 3;
  cfg.lr = 0;
  cfg.seed = 1;
  auto res = train_nn(Strategy::Factorized, fx.data, cfg);
  MlpParams fresh = init_mlp({fx.data.partition_widths()[0] + fx.data.partition_widths()[1], 4, 1},
                             cfg.activation, DimPartition::from_widths(fx.data.partition_widths()),
                             cfg.seed);
  CHECK(max_param_diff(res.params, fresh) == 0.0);
  // every epoch sees the same loss
  CHECK(res.trace.iterations[0].metric == res.trace.iterations[2].metric);
}

TEST_CASE("strategies agree per epoch under a shared seed") {
  Fixture fx(nn_spec(17, 900, 18));
  NnConfig cfg;
  cfg.hidden = {6};
  cfg.epochs = 5;
  cfg.lr = 1e-2;
  cfg.seed = 3;
  auto m = train_nn(Strategy::Materialized, fx.data, cfg);
  auto s = train_nn(Strategy::Streamed, fx.data, cfg);
  auto f = train_nn(Strategy::Factorized, fx.data, cfg);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    CHECK(rel_diff(m.trace.iterations[e].metric, s.trace.iterations[e].metric) <= 1e-10);
    CHECK(rel_diff(m.trace.iterations[e].metric, f.trace.iterations[e].metric) <= 1e-8);
  }
  CHECK(max_param_diff(m.params, s.params) <= 1e-10);
  CHECK(max_param_diff(m.params, f.params) <= 1e-8);
}

TEST_CASE("minibatch and sgd visit the same permuted groups in every strategy") {
  Fixture fx(nn_spec(18, 300, 10));
  for (BatchMode mode : {BatchMode::MiniBatch, BatchMode::Sgd}) {
    NnConfig cfg;
    cfg.hidden = {4};
    cfg.epochs = 2;
    cfg.lr = 1e-2;
    cfg.seed = 5;
    cfg.batch_mode = mode;
    auto m = train_nn(Strategy::Materialized, fx.data, cfg);
    auto s = train_nn(Strategy::Streamed, fx.data, cfg);
    auto f = train_nn(Strategy::Factorized, fx.data, cfg);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      CHECK(rel_diff(m.trace.iterations[e].metric, s.trace.iterations[e].metric) <= 1e-8);
      CHECK(rel_diff(m.trace.iterations[e].metric, f.trace.iterations[e].metric) <= 1e-8);
    }
    CHECK(max_param_diff(m.params, f.params) <= 1e-8);
  }
}

TEST_CASE("training reduces the loss") {
  Fixture fx(nn_spec(19, 800, 16), /*with_t=*/false);
  NnConfig cfg;
  cfg.hidden = {8};
  cfg.epochs = 10;
  cfg.lr = 5e-2;
  cfg.seed = 7;
  auto res = train_nn(Strategy::Factorized, fx.data, cfg);
  CHECK(res.trace.iterations.back().metric < res.trace.iterations.front().metric);
}

TEST_CASE("forward multiply counters show the factorized saving") {
  const std::uint64_t n_s = 600, n_r = 12, d_s = 3, d_r = 5, n_h = 4;
  Fixture fx(nn_spec(20, n_s, n_r));
  NnConfig cfg;
  cfg.hidden = {n_h};
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  cfg.seed = 9;

  auto f = train_nn(Strategy::Factorized, fx.data, cfg);
  auto m = train_nn(Strategy::Materialized, fx.data, cfg);
  const std::uint64_t layer2 = n_s * n_h;  // hidden -> single output unit
  CHECK(f.trace.iterations[0].phase("forward")->counters.mults ==
        n_s * n_h * d_s + n_r * n_h * d_r + layer2);
  CHECK(m.trace.iterations[0].phase("forward")->counters.mults ==
        n_s * n_h * (d_s + d_r) + layer2);
}

TEST_CASE("backward field reads match the I/O analysis") {
  const std::uint64_t n_s = 600, n_r = 12, d_s = 3, d_r = 5;
  Fixture fx(nn_spec(21, n_s, n_r));
  NnConfig cfg;
  cfg.hidden = {4};
  cfg.epochs = 1;
  cfg.seed = 11;

  auto f = train_nn(Strategy::Factorized, fx.data, cfg);
  auto m = train_nn(Strategy::Materialized, fx.data, cfg);
  CHECK(f.trace.iterations[0].phase("backward")->counters.field_reads == n_s * d_s + n_r * d_r);
  CHECK(m.trace.iterations[0].phase("backward")->counters.field_reads == n_s * (d_s + d_r));
}

TEST_CASE("nn verify passes on a desk dataset") {
  Fixture fx(nn_spec(22, 400, 8), /*with_t=*/false);
  VerifyConfig vc;
  vc.model = "nn";
  vc.hidden = {4};
  vc.epochs = 4;
  vc.lr = 1e-2;
  vc.seed = 13;
  vc.tolerance = 1e-8;
  VerifyReport rep = verify_strategies(fx.gen.join, fx.cat, vc);
  CHECK(rep.pass);
  CHECK(rep.gradient_max_rel_diff <= 1e-10);
}
