#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kinegraph/model.hpp"

namespace kinegraph {

// Desk-scale limits for the finite-difference trainer.
struct MicroBudget {
  std::size_t max_joints = 6;
  std::size_t max_frames = 8;
  std::size_t max_channels = 8;
  std::size_t max_blocks = 2;
  std::size_t max_classes = 3;
  std::size_t max_params = 2000;
};

struct MicroTrainConfig {
  ModelConfig model;
  std::size_t steps = 300;
  double lr = 0.5;
  double h = 1e-4;
  std::size_t samples_per_class = 4;
  double noise = 0.05;
  std::uint64_t data_seed = 1;  // fixes the bundled dataset independently of the init seed
  std::filesystem::path embeddings;  // source of the class templates

  // Relative paths in the file resolve against its directory.
  static MicroTrainConfig load(const std::filesystem::path& path);
  static MicroTrainConfig from_json(const Json& doc, const std::filesystem::path& base_dir);
  Json to_json() const;
};

struct LabeledSet {
  std::vector<SkeletonSequence> samples;
  std::vector<std::size_t> labels;
};

// Class c displaces joints 2c and 2c+1 along axis c (mod d) with a slow
// oscillation, on top of a shared chain pose and Gaussian noise.
LabeledSet synthetic_dataset(const ModelConfig& cfg, std::size_t per_class, double noise, std::uint64_t seed);

// Throws BudgetExceeded when cfg is larger than the budget allows.
void check_budget(const ModelConfig& cfg, const MicroBudget& budget = {});

// Training objective: batch-statistics forward, main CE + lambda PC-AC CE.
LossBreakdown training_loss(const ModelParams& params, const LabeledSet& data, const ClassTemplateSet& templates);

// Central difference of the training objective along one coordinate.
double fd_gradient(ModelParams& params, const LabeledSet& data, const ClassTemplateSet& templates,
                   std::size_t coordinate, double h);

struct TrainTrace {
  std::vector<LossBreakdown> steps;  // loss before each update
  LossBreakdown final_loss;          // after the last update
  double train_accuracy = 0.0;       // main head only, frozen statistics
  std::size_t parameters = 0;
  std::uint64_t seed = 0;

  Json to_json() const;
};

struct TrainResult {
  TrainTrace trace;
  ModelParams params;  // batch-norm statistics calibrated on the training set
};

TrainResult micro_train(const LabeledSet& data, const ClassTemplateSet& templates, const MicroTrainConfig& cfg,
                        std::uint64_t seed);

}  // namespace kinegraph
