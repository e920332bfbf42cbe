#include "facml/sweep.hpp"

#include <fstream>
#include <map>

#include "facml/errors.hpp"
#include "facml/gmm.hpp"
#include "facml/nn.hpp"

namespace facml {

void SweepSpec::validate() const {
  if (values.empty()) throw UsageError("sweep grid is empty");
  if (reps < 1) throw UsageError("sweep needs reps >= 1");
  if (model != "gmm" && model != "nn") throw UsageError("sweep model must be gmm or nn");
  static const std::vector<std::string> known{"rr", "d_R", "K", "n_h", "d_R1"};
  if (std::find(known.begin(), known.end(), param) == known.end())
    throw UsageError("unknown sweep parameter '" + param + "'");
  if (param == "d_R1" && base.q() < 2) throw UsageError("d_R1 sweep needs a multi-way base spec");
  if (param == "n_h" && model != "nn") throw UsageError("n_h sweep applies to the nn model");
  if (param == "K" && model != "gmm") throw UsageError("K sweep applies to the gmm model");
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
  SweepSpec s;
  s.param = j.at("param").get<std::string>();
  s.values = j.at("values").get<std::vector<double>>();
  s.base = SynthSpec::from_json(j.at("base"));
  s.model = j.value("model", s.model);
  if (j.contains("strategies")) s.strategies = j["strategies"].get<std::vector<std::string>>();
  s.reps = j.value("reps", s.reps);
  s.k = j.value("k", s.k);
  s.iters = j.value("iters", s.iters);
  s.epochs = j.value("epochs", s.epochs);
  if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<std::size_t>>();
  s.lr = j.value("lr", s.lr);
  s.activation = j.value("activation", s.activation);
  return s;
}

SweepSpec SweepSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

struct PointSetup {
  SynthSpec synth;
  std::size_t train_k;
  std::vector<std::size_t> hidden;
};

PointSetup point_setup(const SweepSpec& spec, std::size_t idx, double value) {
  PointSetup p;
  p.synth = spec.base;
  p.synth.seed = spec.base.seed + idx;
  p.synth.prefix = "swp" + std::to_string(idx) + "_";
  p.synth.with_target = spec.model == "nn";
  p.train_k = spec.k;
  p.hidden = spec.hidden;
  if (spec.param == "rr") {
    p.synth.n_s = static_cast<std::uint64_t>(value * static_cast<double>(p.synth.n_r[0]));
  } else if (spec.param == "d_R") {
    p.synth.d_r[0] = static_cast<std::size_t>(value);
  } else if (spec.param == "d_R1") {
    p.synth.d_r[0] = static_cast<std::size_t>(value);
  } else if (spec.param == "K") {
    p.train_k = static_cast<std::size_t>(value);
    p.synth.k_true = p.train_k;  // generator follows the trained K
  } else if (spec.param == "n_h") {
    p.hidden[0] = static_cast<std::size_t>(value);
  }
  return p;
}

}  // namespace

void run_sweep(const SweepSpec& spec, const std::filesystem::path& catalog_dir,
               const std::filesystem::path& out_csv) {
  spec.validate();
  Catalog catalog = Catalog::open_or_create(catalog_dir);

  std::ofstream csv(out_csv);
  if (!csv) throw StorageError("cannot write " + out_csv.string());
  csv << "param,value,strategy,rep,seconds,pages,mults,final_metric,status\n";
  csv.precision(12);

  for (std::size_t idx = 0; idx < spec.values.size(); ++idx) {
    const double value = spec.values[idx];
    PointSetup point = point_setup(spec, idx, value);

    std::vector<std::string> generated;
    JoinSpec join;
    bool have_data = false;
    try {
      SynthResult res = gen_dataset(point.synth, catalog);
      join = res.join;
      generated.push_back(point.synth.prefix + "S");
      for (const auto& t : res.join.tables) generated.push_back(t);
      have_data = true;
    } catch (const std::exception& e) {
      for (const auto& s : spec.strategies)
        for (std::size_t rep = 1; rep <= spec.reps; ++rep)
          csv << spec.param << ',' << value << ',' << s << ',' << rep << ",,,,,\"error: " << e.what()
              << "\"\n";
    }

    if (have_data) {
      for (const auto& sname : spec.strategies) {
        for (std::size_t rep = 1; rep <= spec.reps; ++rep) {
          try {
            const Strategy strategy = strategy_from_string(sname);
            DataSource data;
            data.join = StarJoin::open(join, catalog);
            TrainTrace trace;
            double metric = 0;
            if (spec.model == "gmm") {
              GmmConfig cfg;
              cfg.k = point.train_k;
              cfg.max_iters = spec.iters;
              cfg.tol = 0;
              cfg.seed = point.synth.seed;
              auto res = train_gmm(strategy, data, cfg);
              trace = std::move(res.trace);
              metric = trace.final_metric();
            } else {
              NnConfig cfg;
              cfg.hidden = point.hidden;
              cfg.activation = activation_from_string(spec.activation);
              cfg.epochs = spec.epochs;
              cfg.lr = spec.lr;
              cfg.seed = point.synth.seed;
              auto res = train_nn(strategy, data, cfg);
              trace = std::move(res.trace);
              metric = trace.final_metric();
            }
            const Counters totals = trace.totals();
            csv << spec.param << ',' << value << ',' << sname << ',' << rep << ','
                << trace.total_ms / 1000.0 << ',' << totals.pages_read + totals.pages_written << ','
                << totals.mults << ',' << metric << ",ok\n";
          } catch (const std::exception& e) {
            csv << spec.param << ',' << value << ',' << sname << ',' << rep
                << ",,,,,\"error: " << e.what() << "\"\n";
          }
          csv.flush();
        }
      }
    }

    for (const auto& name : generated) catalog.remove(name);
  }
}

nlohmann::json CompareReport::to_json() const {
  return {{"speedup_f_over_s", speedup_f_over_s},
          {"speedup_f_over_m", speedup_f_over_m},
          {"phase_breakdown", phase_breakdown}};
}

CompareReport compare_report(const std::vector<TrainTrace>& traces) {
  std::map<std::string, const TrainTrace*> by_strategy;
  for (const auto& t : traces) by_strategy[t.strategy] = &t;
  if (!by_strategy.count("f")) throw ComparabilityError("no factorized trace");

  const TrainTrace& f = *by_strategy.at("f");
  for (const auto& [name, t] : by_strategy) {
    if (t->model != f.model) throw ComparabilityError("traces mix models");
    if (t->iterations.size() != f.iterations.size())
      throw ComparabilityError("traces differ in iteration count");
    if (t->data_stats != f.data_stats) throw ComparabilityError("traces ran on different data");
  }

  CompareReport rep;
  auto total_seconds = [](const TrainTrace& t) { return (t.total_ms) / 1000.0; };
  if (by_strategy.count("s"))
    rep.speedup_f_over_s = total_seconds(*by_strategy.at("s")) / total_seconds(f);
  if (by_strategy.count("m"))
    rep.speedup_f_over_m = total_seconds(*by_strategy.at("m")) / total_seconds(f);

  nlohmann::json phases = nlohmann::json::object();
  for (const auto& [name, t] : by_strategy) {
    std::map<std::string, double> ms;
    for (const auto& it : t->iterations)
      for (const auto& [pname, p] : it.phases) ms[pname] += p.ms;
    nlohmann::json pj = nlohmann::json::object();
    for (const auto& [pname, v] : ms) pj[pname] = v;
    pj["setup"] = t->setup.ms;
    phases[name] = pj;
  }
  rep.phase_breakdown = phases;
  return rep;
}

}  // namespace facml
