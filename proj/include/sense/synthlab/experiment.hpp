#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sense/synthlab/generate.hpp"
#include "sense/synthlab/predictor.hpp"

namespace sense::synthlab {

enum class Strategy { real_only, mixed, synthetic_only };
const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct ExperimentPlan {
  std::vector<Strategy> strategies{Strategy::real_only, Strategy::mixed, Strategy::synthetic_only};
  std::vector<double> real_fractions{0.1};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  // Synthetic tiles per arm; negative means train-pool size minus the real subset.
  long synthetic_count = -1;
  latentdecode::HeadKind target = latentdecode::HeadKind::energy;
  latentdecode::HeadTrainOptions head;  // decoder trained on the real subset
  PredictorConfig predictor;
  PredictorTrainOptions predictor_train;
  long generation_chunk = 16;

  // Throws naming the first invalid field.
  void validate() const;
};

nlohmann::json to_json(const ExperimentPlan& plan);
ExperimentPlan experiment_plan_from_json(const nlohmann::json& j);

struct ArmResult {
  Strategy strategy = Strategy::real_only;
  double real_fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_real = 0;
  std::size_t n_synthetic = 0;
  metrics::SegmentationMetrics segmentation;
  std::optional<metrics::CalibrationReport> calibration;  // energy target only
  // Percentage-point gap between synthetic and real-subset class marginals.
  double synthetic_marginal_gap = 0.0;
};

struct ExperimentResult {
  std::vector<ArmResult> arms;
  std::vector<std::string> test_ids;

  // Median mIoU over seeds for one (strategy, fraction) cell.
  double median_miou(Strategy s, double fraction) const;
  // Tab-separated: fraction, strategy, median mIoU, then one column per seed.
  std::string sweep_table() const;
};

// Real train pool and the fixed test set; backbone and control are trained
// beforehand (they see imagery only, never labels).
struct ExperimentInputs {
  diffcore::Backbone* backbone = nullptr;
  latentdecode::ControlBranch* branch = nullptr;
  std::vector<tiles::Tile> train_pool;
  std::vector<tiles::Tile> test;
};

// Real subset for a fraction and seed: a seeded permutation of the pool,
// first max(1, round(f * N)) tiles.
std::vector<std::size_t> real_subset(std::size_t pool_size, double fraction, std::uint64_t seed);

// Throws Error(leakage) when any training id is also a test id.
void check_no_leakage(const std::vector<std::string>& training_ids, const std::vector<std::string>& test_ids);

using ArmCallback = std::function<void(const ArmResult&)>;

// For every (fraction, seed): fits bins and trains the decoder head on the
// real subset, generates annotated tiles from the held-back constraints,
// then trains and evaluates the reference predictor per strategy.
ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentInputs& inputs,
                                const ArmCallback& on_arm = {});

// Writes plan.json, one report per arm and sweep.tsv.
void write_experiment(const std::filesystem::path& dir, const ExperimentPlan& plan, const ExperimentResult& result);

}  // namespace sense::synthlab
