#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "facml/counters.hpp"

namespace facml {

struct PhaseStats {
  double ms = 0;
  Counters counters;
};

struct IterationTrace {
  std::size_t index = 0;
  double metric = 0;  // log-likelihood (gmm) or loss (nn)
  std::vector<std::pair<std::string, PhaseStats>> phases;

  Counters totals() const;
  const PhaseStats* phase(const std::string& name) const;
};

// Per-run record: setup work (materialization, index builds), one entry
// per EM iteration / training epoch, exact counters, wall times.
struct TrainTrace {
  std::string model;     // "gmm" | "nn"
  std::string strategy;  // "m" | "s" | "f"
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json data_stats = nlohmann::json::object();
  PhaseStats setup;
  std::vector<IterationTrace> iterations;
  double total_ms = 0;
  bool converged = false;

  double final_metric() const;
  Counters totals() const;  // setup + all iterations

  nlohmann::json to_json() const;
  static TrainTrace from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TrainTrace load(const std::filesystem::path& path);
};

// Wall-clock + counter capture for one phase; appends to `out` on scope exit.
class PhaseTimer {
 public:
  PhaseTimer(IterationTrace& out, std::string name);
  ~PhaseTimer();
  PhaseTimer(const PhaseTimer&) = delete;
  PhaseTimer& operator=(const PhaseTimer&) = delete;

 private:
  IterationTrace& out_;
  std::string name_;
  PhaseStats stats_;
  CounterScope scope_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace facml
