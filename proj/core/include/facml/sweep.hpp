#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facml/datagen.hpp"
#include "facml/trace.hpp"

namespace facml {

// One parameter sweep: for each grid value x strategy x repetition, a
// dataset is generated (seeded per point), a model trained, and one CSV
// row emitted.
struct SweepSpec {
  std::string param = "rr";  // rr | d_R | K | n_h | d_R1
  std::vector<double> values;
  SynthSpec base;
  std::string model = "gmm";  // gmm | nn
  std::vector<std::string> strategies = {"m", "s", "f"};
  std::size_t reps = 3;
  // gmm training
  std::size_t k = 5;
  std::size_t iters = 3;
  // nn training
  std::size_t epochs = 3;
  std::vector<std::size_t> hidden = {50};
  double lr = 1e-3;
  std::string activation = "sigmoid";

  void validate() const;
  static SweepSpec from_json(const nlohmann::json& j);
  static SweepSpec load(const std::filesystem::path& path);
};

// CSV columns: param,value,strategy,rep,seconds,pages,mults,final_metric,status
void run_sweep(const SweepSpec& spec, const std::filesystem::path& catalog_dir,
               const std::filesystem::path& out_csv);

struct CompareReport {
  double speedup_f_over_s = 0;  // wall-time ratios S/F and (M+setup)/F
  double speedup_f_over_m = 0;
  nlohmann::json phase_breakdown;

  nlohmann::json to_json() const;
};

// Ratios of wall time across traces of one workload run under different
// strategies; ComparabilityError when the workloads differ.
CompareReport compare_report(const std::vector<TrainTrace>& traces);

}  // namespace facml
