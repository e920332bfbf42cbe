#include "facml/verify.hpp"

#include <algorithm>
#include <cmath>

#include "facml/errors.hpp"

namespace facml {

double rel_diff(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

namespace {

double params_rel_diff(const GmmParams& a, const GmmParams& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.pi.size(); ++i) worst = std::max(worst, rel_diff(a.pi(i), b.pi(i)));
  for (std::size_t k = 0; k < a.k(); ++k) {
    for (Eigen::Index i = 0; i < a.mu[k].size(); ++i)
      worst = std::max(worst, rel_diff(a.mu[k](i), b.mu[k](i)));
    for (Eigen::Index i = 0; i < a.sigma[k].size(); ++i)
      worst = std::max(worst, rel_diff(a.sigma[k].data()[i], b.sigma[k].data()[i]));
  }
  return worst;
}

double mlp_rel_diff(const MlpParams& a, const MlpParams& b) {
  double worst = 0;
  for (std::size_t l = 0; l < a.layers(); ++l) {
    for (Eigen::Index i = 0; i < a.w[l].size(); ++i)
      worst = std::max(worst, rel_diff(a.w[l].data()[i], b.w[l].data()[i]));
    for (Eigen::Index i = 0; i < a.b[l].size(); ++i)
      worst = std::max(worst, rel_diff(a.b[l](i), b.b[l](i)));
  }
  return worst;
}

struct GmmRun {
  std::vector<GmmParams> per_iter;
  std::vector<double> logliks;
};

GmmRun run_gmm(Strategy strategy, const JoinSpec& spec, Catalog& catalog, const VerifyConfig& vc) {
  DataSource data;
  data.join = StarJoin::open(spec, catalog);
  GmmConfig cfg;
  cfg.k = vc.k;
  cfg.max_iters = vc.iters;
  cfg.tol = 0;  // run all iterations
  cfg.seed = vc.seed;
  if (strategy == Strategy::Factorized) cfg.fault_injection = vc.fault_injection;
  GmmRun run;
  train_gmm(strategy, data, cfg, nullptr,
            [&](std::size_t, const GmmParams& p, double ll) {
              run.per_iter.push_back(p);
              run.logliks.push_back(ll);
            });
  return run;
}

struct NnRun {
  std::vector<double> losses;
  MlpParams final_params;
  MlpParams after_one_update;  // single-step probe for gradient agreement
};

NnRun run_nn(Strategy strategy, const JoinSpec& spec, Catalog& catalog, const VerifyConfig& vc) {
  DataSource data;
  data.join = StarJoin::open(spec, catalog);
  NnConfig cfg;
  cfg.hidden = vc.hidden;
  cfg.activation = vc.activation;
  cfg.epochs = vc.epochs;
  cfg.lr = vc.lr;
  cfg.seed = vc.seed;
  NnRun run;
  auto res = train_nn(strategy, data, cfg, [&](std::size_t, const MlpParams&, double loss) {
    run.losses.push_back(loss);
  });
  run.final_params = res.params;

  NnConfig probe = cfg;
  probe.epochs = 1;
  probe.lr = 1.0;  // reconstructing gradients from the parameter delta
  run.after_one_update = train_nn(strategy, data, probe).params;
  return run;
}

}  // namespace

nlohmann::json VerifyReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["tolerance"] = tolerance;
  j["pass"] = pass;
  j["max_rel_diff"] = max_rel_diff;
  j["max_rel_diff_per_iter"] = per_iter_max_rel_diff;
  if (model == "nn") j["gradient_max_rel_diff"] = gradient_max_rel_diff;
  return j;
}

VerifyReport verify_strategies(const JoinSpec& spec, Catalog& catalog, const VerifyConfig& config) {
  VerifyReport rep;
  rep.model = config.model;
  rep.tolerance = config.tolerance;

  if (config.model == "gmm") {
    GmmRun m = run_gmm(Strategy::Materialized, spec, catalog, config);
    GmmRun s = run_gmm(Strategy::Streamed, spec, catalog, config);
    GmmRun f = run_gmm(Strategy::Factorized, spec, catalog, config);
    const std::size_t iters = std::min({m.per_iter.size(), s.per_iter.size(), f.per_iter.size()});
    for (std::size_t i = 0; i < iters; ++i) {
      double worst = std::max(params_rel_diff(m.per_iter[i], s.per_iter[i]),
                              params_rel_diff(m.per_iter[i], f.per_iter[i]));
      worst = std::max(worst, rel_diff(m.logliks[i], s.logliks[i]));
      worst = std::max(worst, rel_diff(m.logliks[i], f.logliks[i]));
      rep.per_iter_max_rel_diff.push_back(worst);
      rep.max_rel_diff = std::max(rep.max_rel_diff, worst);
    }
  } else if (config.model == "nn") {
    NnRun m = run_nn(Strategy::Materialized, spec, catalog, config);
    NnRun s = run_nn(Strategy::Streamed, spec, catalog, config);
    NnRun f = run_nn(Strategy::Factorized, spec, catalog, config);
    const std::size_t epochs = std::min({m.losses.size(), s.losses.size(), f.losses.size()});
    for (std::size_t i = 0; i < epochs; ++i) {
      const double worst =
          std::max(rel_diff(m.losses[i], s.losses[i]), rel_diff(m.losses[i], f.losses[i]));
      rep.per_iter_max_rel_diff.push_back(worst);
      rep.max_rel_diff = std::max(rep.max_rel_diff, worst);
    }
    rep.max_rel_diff = std::max(rep.max_rel_diff, mlp_rel_diff(m.final_params, s.final_params));
    rep.max_rel_diff = std::max(rep.max_rel_diff, mlp_rel_diff(m.final_params, f.final_params));
    rep.gradient_max_rel_diff =
        std::max(mlp_rel_diff(m.after_one_update, s.after_one_update),
                 mlp_rel_diff(m.after_one_update, f.after_one_update));
    rep.max_rel_diff = std::max(rep.max_rel_diff, rep.gradient_max_rel_diff);
  } else {
    throw UsageError("verify model must be 'gmm' or 'nn'");
  }

  rep.pass = rep.max_rel_diff <= config.tolerance;
  return rep;
}

}  // namespace facml
