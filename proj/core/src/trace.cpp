#include "facml/trace.hpp"

#include <chrono>
#include <fstream>

#include "facml/errors.hpp"

namespace facml {

namespace {

nlohmann::json counters_json(const Counters& c) {
  return {{"pages_read", c.pages_read},
          {"pages_written", c.pages_written},
          {"field_reads", c.field_reads},
          {"mults", c.mults},
          {"subs", c.subs}};
}

Counters counters_from_json(const nlohmann::json& j) {
  Counters c;
  c.pages_read = j.value("pages_read", 0ULL);
  c.pages_written = j.value("pages_written", 0ULL);
  c.field_reads = j.value("field_reads", 0ULL);
  c.mults = j.value("mults", 0ULL);
  c.subs = j.value("subs", 0ULL);
  return c;
}

}  // namespace

Counters IterationTrace::totals() const {
  Counters c;
  for (const auto& [_, p] : phases) c += p.counters;
  return c;
}

const PhaseStats* IterationTrace::phase(const std::string& name) const {
  for (const auto& [n, p] : phases)
    if (n == name) return &p;
  return nullptr;
}

double TrainTrace::final_metric() const {
  return iterations.empty() ? 0.0 : iterations.back().metric;
}

Counters TrainTrace::totals() const {
  Counters c = setup.counters;
  for (const auto& it : iterations) c += it.totals();
  return c;
}

nlohmann::json TrainTrace::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["strategy"] = strategy;
  j["config"] = config;
  j["data_stats"] = data_stats;
  j["setup"] = {{"ms", setup.ms}, {"counters", counters_json(setup.counters)}};
  j["total_ms"] = total_ms;
  j["converged"] = converged;
  const char* metric_key = model == "nn" ? "loss" : "loglik";
  j["iterations"] = nlohmann::json::array();
  for (const auto& it : iterations) {
    nlohmann::json ji;
    ji[metric_key] = it.metric;
    nlohmann::json times = nlohmann::json::object();
    nlohmann::json per_phase = nlohmann::json::object();
    for (const auto& [name, p] : it.phases) {
      times[name] = p.ms;
      per_phase[name] = counters_json(p.counters);
    }
    ji["phase_times_ms"] = times;
    Counters t = it.totals();
    ji["pages_read"] = t.pages_read;
    ji["field_reads"] = t.field_reads;
    ji["mults"] = t.mults;
    ji["subs"] = t.subs;
    ji["phase_counters"] = per_phase;
    j["iterations"].push_back(std::move(ji));
  }
  return j;
}

TrainTrace TrainTrace::from_json(const nlohmann::json& j) {
  TrainTrace t;
  t.model = j.value("model", "");
  t.strategy = j.value("strategy", "");
  t.config = j.value("config", nlohmann::json::object());
  t.data_stats = j.value("data_stats", nlohmann::json::object());
  t.total_ms = j.value("total_ms", 0.0);
  t.converged = j.value("converged", false);
  if (j.contains("setup")) {
    t.setup.ms = j["setup"].value("ms", 0.0);
    if (j["setup"].contains("counters")) t.setup.counters = counters_from_json(j["setup"]["counters"]);
  }
  const char* metric_key = t.model == "nn" ? "loss" : "loglik";
  std::size_t idx = 0;
  for (const auto& ji : j.value("iterations", nlohmann::json::array())) {
    IterationTrace it;
    it.index = idx++;
    it.metric = ji.value(metric_key, 0.0);
    if (ji.contains("phase_counters")) {
      for (const auto& [name, cj] : ji["phase_counters"].items()) {
        PhaseStats p;
        p.counters = counters_from_json(cj);
        if (ji.contains("phase_times_ms") && ji["phase_times_ms"].contains(name))
          p.ms = ji["phase_times_ms"][name].get<double>();
        it.phases.emplace_back(name, p);
      }
    }
    t.iterations.push_back(std::move(it));
  }
  return t;
}

void TrainTrace::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw StorageError("cannot write trace to " + path.string());
  out << to_json().dump(2) << "\n";
}

TrainTrace TrainTrace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open trace " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

PhaseTimer::PhaseTimer(IterationTrace& out, std::string name)
    : out_(out), name_(std::move(name)), scope_(stats_.counters), start_(std::chrono::steady_clock::now()) {}

PhaseTimer::~PhaseTimer() {
  auto end = std::chrono::steady_clock::now();
  stats_.ms = std::chrono::duration<double, std::milli>(end - start_).count();
  out_.phases.emplace_back(name_, stats_);
}

}  // namespace facml
