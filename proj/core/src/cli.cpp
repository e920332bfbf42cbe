#include "facml/cli.hpp"

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "facml/catalog.hpp"
#include "facml/cost_model.hpp"
#include "facml/csv.hpp"
#include "facml/datagen.hpp"
#include "facml/errors.hpp"
#include "facml/gmm.hpp"
#include "facml/nn.hpp"
#include "facml/sweep.hpp"
#include "facml/verify.hpp"

namespace facml {

namespace {

void echo_config(const std::string& subcommand, const nlohmann::json& cfg) {
  nlohmann::json j = cfg;
  j["subcommand"] = subcommand;
  std::cerr << j.dump() << "\n";
}

struct DataFlags {
  std::string catalog;
  std::string t;
  std::string s;
  std::vector<std::string> r;
  std::vector<std::string> fk;
  std::uint64_t block_pages = kDefaultBlockSizePages;

  void add_to(CLI::App* cmd, bool with_t = true) {
    cmd->add_option("--catalog", catalog, "catalog directory")
        ->envname("FACML_CATALOG")
        ->required();
    if (with_t) cmd->add_option("--t", t, "materialized join relation T");
    cmd->add_option("--s", s, "entity relation S");
    cmd->add_option("--r", r, "attribute tables R1[,R2,...]")->delimiter(',');
    cmd->add_option("--fk", fk, "FK columns of S, one per attribute table")->delimiter(',');
    cmd->add_option("--block-pages", block_pages, "scan block size in pages");
  }

  JoinSpec join_spec() const {
    JoinSpec js;
    js.s = s;
    js.tables = r;
    js.fk_columns = fk;
    js.block_size_pages = block_pages;
    return js;
  }

  DataSource open(Catalog& cat) const {
    DataSource data;
    if (!t.empty()) data.t = cat.get(t);
    if (!s.empty()) {
      if (r.empty() || fk.empty())
        throw UsageError("--s needs --r and --fk to describe the join");
      data.join = StarJoin::open(join_spec(), cat);
    }
    if (!data.t && !data.join) throw UsageError("give either --t or --s/--r/--fk");
    return data;
  }

  nlohmann::json to_json() const {
    return {{"catalog", catalog}, {"t", t}, {"s", s}, {"r", r}, {"fk", fk},
            {"block_pages", block_pages}};
  }
};

int cmd_gen(const std::string& catalog_dir, const std::string& spec_file, SynthSpec spec) {
  if (!spec_file.empty()) spec = SynthSpec::load(spec_file);
  echo_config("gen", spec.to_json());
  Catalog cat = Catalog::open_or_create(catalog_dir);
  SynthResult res = gen_dataset(spec, cat);
  nlohmann::json out;
  out["s"] = {{"name", res.join.s}, {"rows", res.s.row_count()}, {"pages", res.s.page_count()}};
  out["tables"] = nlohmann::json::array();
  for (std::size_t m = 0; m < res.tables.size(); ++m)
    out["tables"].push_back({{"name", res.join.tables[m]},
                             {"rows", res.tables[m].row_count()},
                             {"pages", res.tables[m].page_count()}});
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_import(const std::string& catalog_dir, const std::string& csv_path,
               const std::string& name, const std::string& schema_path, const CsvOptions& opts) {
  echo_config("import", {{"catalog", catalog_dir},
                         {"csv", csv_path},
                         {"name", name},
                         {"schema", schema_path},
                         {"delimiter", std::string(1, opts.delimiter)},
                         {"header", opts.header},
                         {"one_hot", opts.one_hot_columns}});
  Catalog cat = Catalog::open_or_create(catalog_dir);
  Schema schema = load_schema(schema_path);
  Relation rel = import_csv(csv_path, schema, cat, name, opts);
  std::cout << nlohmann::json{{"name", name},
                              {"rows", rel.row_count()},
                              {"features", rel.schema().feature_count()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_materialize(const DataFlags& flags, const std::string& out_name, bool force) {
  echo_config("materialize", {{"data", flags.to_json()}, {"out", out_name}, {"force", force}});
  Catalog cat = Catalog::open(flags.catalog);
  if (force && cat.contains(out_name)) cat.remove(out_name);
  Relation t = materialize_join(flags.join_spec(), cat, out_name);
  std::cout << nlohmann::json{{"name", out_name},
                              {"rows", t.row_count()},
                              {"pages", t.page_count()},
                              {"features", t.schema().feature_count()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_train_gmm(const DataFlags& flags, const std::string& strategy, const GmmConfig& cfg,
                  const std::string& trace_out) {
  echo_config("train-gmm", {{"data", flags.to_json()},
                            {"strategy", strategy},
                            {"k", cfg.k},
                            {"tol", cfg.tol},
                            {"max_iters", cfg.max_iters},
                            {"seed", cfg.seed},
                            {"trace_out", trace_out}});
  Catalog cat = Catalog::open(flags.catalog);
  DataSource data = flags.open(cat);
  auto res = train_gmm(strategy_from_string(strategy), data, cfg);
  if (!trace_out.empty()) res.trace.save(trace_out);
  std::cout << nlohmann::json{{"loglik", res.trace.final_metric()},
                              {"iterations", res.trace.iterations.size()},
                              {"converged", res.trace.converged},
                              {"seconds", res.trace.total_ms / 1000.0}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_train_nn(const DataFlags& flags, const std::string& strategy, const NnConfig& cfg,
                 const std::string& trace_out) {
  echo_config("train-nn", {{"data", flags.to_json()},
                           {"strategy", strategy},
                           {"hidden", cfg.hidden},
                           {"activation", to_string(cfg.activation)},
                           {"epochs", cfg.epochs},
                           {"lr", cfg.lr},
                           {"batch_mode", to_string(cfg.batch_mode)},
                           {"seed", cfg.seed},
                           {"trace_out", trace_out}});
  Catalog cat = Catalog::open(flags.catalog);
  DataSource data = flags.open(cat);
  auto res = train_nn(strategy_from_string(strategy), data, cfg);
  if (!trace_out.empty()) res.trace.save(trace_out);
  std::cout << nlohmann::json{{"loss", res.trace.final_metric()},
                              {"epochs", res.trace.iterations.size()},
                              {"seconds", res.trace.total_ms / 1000.0}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_verify(const DataFlags& flags, const VerifyConfig& cfg, const std::string& report_path) {
  echo_config("verify", {{"data", flags.to_json()},
                         {"model", cfg.model},
                         {"seed", cfg.seed},
                         {"tolerance", cfg.tolerance},
                         {"inject_fault", cfg.fault_injection},
                         {"report", report_path}});
  Catalog cat = Catalog::open(flags.catalog);
  VerifyReport rep = verify_strategies(flags.join_spec(), cat, cfg);
  nlohmann::json j = rep.to_json();
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw StorageError("cannot write report to " + report_path);
    out << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return rep.pass ? 0 : 1;
}

int cmd_bench(const std::string& catalog_dir, const std::string& sweep_path,
              const std::string& out_csv) {
  echo_config("bench", {{"catalog", catalog_dir}, {"sweep", sweep_path}, {"out", out_csv}});
  SweepSpec spec = SweepSpec::load(sweep_path);
  run_sweep(spec, catalog_dir, out_csv);
  std::cout << nlohmann::json{{"out", out_csv}}.dump(2) << "\n";
  return 0;
}

int cmd_cost(const CostModelInputs& in, bool as_json) {
  echo_config("cost", {{"pages_r", in.pages_r},
                       {"pages_s", in.pages_s},
                       {"pages_t", in.pages_t},
                       {"block", in.block_size},
                       {"iters", in.iters}});
  IoCostResult io = io_cost_model(in);
  const double rate = saving_rate(in);
  if (as_json) {
    nlohmann::json j{{"m_cost_pages", io.m_cost},
                     {"s_cost_pages", io.s_cost},
                     {"saving_rate", rate}};
    if (io.crossover_block_size)
      j["crossover_block_size"] = *io.crossover_block_size;
    else
      j["crossover_block_size"] = nullptr;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "I/O cost model (pages)\n"
              << "  materialized: " << io.m_cost << "\n"
              << "  streamed:     " << io.s_cost << "\n";
    if (io.crossover_block_size)
      std::cout << "  streamed cheaper for BlockSize > " << *io.crossover_block_size << "\n";
    else
      std::cout << "  streamed never cheaper (degenerate denominator)\n";
    std::cout << "Sigma-pass saving rate: " << rate << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"training engine for Gaussian mixtures and feed-forward networks over normalized relations"};
  app.require_subcommand(1);
  std::function<int()> runner;

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic star-join dataset");
  {
    auto catalog = std::make_shared<std::string>();
    auto spec_file = std::make_shared<std::string>();
    auto spec = std::make_shared<SynthSpec>();
    gen->add_option("--catalog", *catalog, "catalog directory")->envname("FACML_CATALOG")->required();
    gen->add_option("--spec", *spec_file, "SynthSpec JSON file (overrides inline flags)");
    gen->add_option("--n-s", spec->n_s, "rows in S");
    gen->add_option("--n-r", spec->n_r, "rows per attribute table")->delimiter(',');
    gen->add_option("--d-s", spec->d_s, "features in S");
    gen->add_option("--d-r", spec->d_r, "features per attribute table")->delimiter(',');
    gen->add_option("--k-true", spec->k_true, "generating component count");
    gen->add_option("--noise", spec->noise_sigma, "noise sigma");
    gen->add_option("--seed", spec->seed, "generator seed");
    gen->add_flag("--with-target", spec->with_target, "emit a regression target in S");
    gen->add_option("--page-rows", spec->page_size_rows, "rows per page");
    gen->add_option("--prefix", spec->prefix, "relation name prefix");
    gen->callback([=, &runner] { runner = [=] { return cmd_gen(*catalog, *spec_file, *spec); }; });
  }

  // import
  auto* import = app.add_subcommand("import", "load a CSV file as a relation");
  {
    auto catalog = std::make_shared<std::string>();
    auto csv_path = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    auto schema_path = std::make_shared<std::string>();
    auto delim = std::make_shared<std::string>(",");
    auto no_header = std::make_shared<bool>(false);
    auto one_hot = std::make_shared<std::vector<std::string>>();
    import->add_option("--catalog", *catalog, "catalog directory")->envname("FACML_CATALOG")->required();
    import->add_option("--csv", *csv_path, "input CSV path")->required();
    import->add_option("--name", *name, "relation name")->required();
    import->add_option("--schema", *schema_path, "schema JSON path")->required();
    import->add_option("--delimiter", *delim, "field delimiter");
    import->add_flag("--no-header", *no_header, "input has no header row");
    import->add_option("--one-hot", *one_hot, "feature columns to expand to indicators")->delimiter(',');
    import->callback([=, &runner] {
      runner = [=] {
        CsvOptions opts;
        if (!delim->empty()) opts.delimiter = (*delim)[0];
        opts.header = !*no_header;
        opts.one_hot_columns = *one_hot;
        return cmd_import(*catalog, *csv_path, *name, *schema_path, opts);
      };
    });
  }

  // materialize
  auto* mat = app.add_subcommand("materialize", "join S with its attribute tables into T");
  {
    auto flags = std::make_shared<DataFlags>();
    auto out_name = std::make_shared<std::string>();
    auto force = std::make_shared<bool>(false);
    flags->add_to(mat, /*with_t=*/false);
    mat->add_option("--out", *out_name, "name for T")->required();
    mat->add_flag("--force", *force, "replace an existing T");
    mat->callback([=, &runner] { runner = [=] { return cmd_materialize(*flags, *out_name, *force); }; });
  }

  // train-gmm
  auto* tg = app.add_subcommand("train-gmm", "EM training of a full-covariance mixture");
  {
    auto flags = std::make_shared<DataFlags>();
    auto strategy = std::make_shared<std::string>("f");
    auto cfg = std::make_shared<GmmConfig>();
    auto trace_out = std::make_shared<std::string>();
    flags->add_to(tg);
    tg->add_option("--strategy", *strategy, "m | s | f");
    tg->add_option("--k", cfg->k, "components");
    tg->add_option("--tol", cfg->tol, "log-likelihood convergence tolerance");
    tg->add_option("--max-iters", cfg->max_iters, "iteration cap");
    tg->add_option("--seed", cfg->seed, "initialization seed");
    tg->add_option("--trace-out", *trace_out, "write the run trace JSON here");
    tg->callback([=, &runner] {
      runner = [=] { return cmd_train_gmm(*flags, *strategy, *cfg, *trace_out); };
    });
  }

  // train-nn
  auto* tn = app.add_subcommand("train-nn", "gradient-descent training of a feed-forward regressor");
  {
    auto flags = std::make_shared<DataFlags>();
    auto strategy = std::make_shared<std::string>("f");
    auto hidden = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{50});
    auto activation = std::make_shared<std::string>("sigmoid");
    auto batch_mode = std::make_shared<std::string>("batch");
    auto cfg = std::make_shared<NnConfig>();
    auto trace_out = std::make_shared<std::string>();
    flags->add_to(tn);
    tn->add_option("--strategy", *strategy, "m | s | f");
    tn->add_option("--epochs", cfg->epochs, "training epochs");
    tn->add_option("--hidden", *hidden, "hidden layer widths")->delimiter(',');
    tn->add_option("--lr", cfg->lr, "learning rate");
    tn->add_option("--batch-mode", *batch_mode, "batch | minibatch | sgd");
    tn->add_option("--activation", *activation, "sigmoid | tanh | relu");
    tn->add_option("--seed", cfg->seed, "initialization seed");
    tn->add_option("--trace-out", *trace_out, "write the run trace JSON here");
    tn->callback([=, &runner] {
      runner = [=] {
        NnConfig c = *cfg;
        c.hidden = *hidden;
        c.activation = activation_from_string(*activation);
        c.batch_mode = batch_mode_from_string(*batch_mode);
        return cmd_train_nn(*flags, *strategy, c, *trace_out);
      };
    });
  }

  // verify
  auto* ver = app.add_subcommand("verify", "check M/S/F agreement on one seed");
  {
    auto flags = std::make_shared<DataFlags>();
    auto cfg = std::make_shared<VerifyConfig>();
    auto activation = std::make_shared<std::string>("sigmoid");
    auto report = std::make_shared<std::string>();
    flags->add_to(ver, /*with_t=*/false);
    ver->add_option("--model", cfg->model, "gmm | nn");
    ver->add_option("--k", cfg->k, "gmm components");
    ver->add_option("--iters", cfg->iters, "gmm iterations");
    ver->add_option("--epochs", cfg->epochs, "nn epochs");
    ver->add_option("--hidden", cfg->hidden, "nn hidden widths")->delimiter(',');
    ver->add_option("--lr", cfg->lr, "nn learning rate");
    ver->add_option("--activation", *activation, "nn activation");
    ver->add_option("--seed", cfg->seed, "shared seed");
    ver->add_option("--tolerance", cfg->tolerance, "relative agreement tolerance");
    ver->add_option("--inject-fault", cfg->fault_injection,
                    "perturb one factorized cache value by this amount");
    ver->add_option("--report", *report, "write the JSON report here");
    ver->callback([=, &runner] {
      runner = [=] {
        VerifyConfig c = *cfg;
        c.activation = activation_from_string(*activation);
        return cmd_verify(*flags, c, *report);
      };
    });
  }

  // bench
  auto* bench = app.add_subcommand("bench", "run a parameter sweep and emit CSV");
  {
    auto catalog = std::make_shared<std::string>();
    auto sweep = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("results.csv");
    bench->add_option("--catalog", *catalog, "working catalog directory")
        ->envname("FACML_CATALOG")
        ->required();
    bench->add_option("--sweep", *sweep, "SweepSpec JSON path")->required();
    bench->add_option("--out", *out, "output CSV path");
    bench->callback([=, &runner] { runner = [=] { return cmd_bench(*catalog, *sweep, *out); }; });
  }

  // cost
  auto* cost = app.add_subcommand("cost", "evaluate the analytic I/O and saving-rate models");
  {
    auto in = std::make_shared<CostModelInputs>();
    auto as_json = std::make_shared<bool>(false);
    cost->add_option("--pages-r", in->pages_r, "pages in R");
    cost->add_option("--pages-s", in->pages_s, "pages in S");
    cost->add_option("--pages-t", in->pages_t, "pages in T");
    cost->add_option("--block", in->block_size, "block size in pages");
    cost->add_option("--iter", in->iters, "EM iterations");
    cost->add_option("--n-s", in->n_s, "rows in S");
    cost->add_option("--n-r", in->n_r, "rows in R");
    cost->add_option("--d-s", in->d_s, "features in S");
    cost->add_option("--d-r", in->d_r, "features in R");
    cost->add_option("--tau-s", in->tau_s, "cost of one subtraction");
    cost->add_option("--tau-m", in->tau_m, "cost of one multiplication");
    cost->add_flag("--json", *as_json, "JSON output");
    cost->callback([=, &runner] { runner = [=] { return cmd_cost(*in, *as_json); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return runner ? runner() : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Usage: return 2;
      case ErrorKind::Verification: return 1;
      case ErrorKind::Data: return 3;
    }
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace facml
