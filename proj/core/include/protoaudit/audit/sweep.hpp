#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoaudit/audit/config.hpp"
#include "protoaudit/metrics/metrics.hpp"
#include "protoaudit/sourcebench/mixer.hpp"
#include "protoaudit/trainer/trainer.hpp"

namespace protoaudit::audit {

struct MethodScores {
  double average_drop = 0.0;
  double average_increase = 0.0;
};

struct SweepEntry {
  int x = 0;
  std::string mix;                  // e.g. "30H1-70H2"
  std::optional<std::string> error;  // set when a stage failed
  std::string checkpoint;           // relative to the sweep directory
  std::string selected_phase;
  std::size_t selected_epoch = 0;
  double val_accuracy = 0.0;
  std::size_t projection_events = 0;
  // Test-100H1, Test-100H2, Test-50-50
  std::array<double, 3> accuracy{};
  std::string faithfulness_test;
  std::optional<MethodScores> prp;
  std::optional<MethodScores> upsample;
  std::vector<double> tag_mass;  // per prototype
  std::vector<int> source_hospital;
  std::vector<int> owner_class;
  std::vector<double> tag_mass_class_mean;
  double tag_mass_mean = 0.0;
  double majority_tag_mass = 0.0;
  std::vector<std::array<std::size_t, 2>> source_histogram;  // [class][hospital]
};

struct SweepReport {
  std::uint64_t root_seed = 0;
  std::map<std::string, std::string> config;
  std::vector<SweepEntry> entries;

  const SweepEntry* find(int x) const;
};

/// Hospital that supplies most of `label`'s training images at composition
/// x; H1 on the 50/50 tie.
sourcebench::Hospital majority_hospital(int x, int label);

/// Mean tag mass over prototypes whose source image comes from the majority
/// hospital of their class; all prototypes when x = 50.
double majority_source_tag_mass(int x, std::span<const double> tag_mass,
                                std::span<const int> owner_class,
                                std::span<const int> source_hospital);

/// Test set used for the faithfulness metrics of composition x: the one that
/// matches the training correlation (Test-100H1 for x >= 50, else Test-100H2).
sourcebench::TestVariant faithfulness_variant(int x);

struct TrainedModel {
  trainer::TrainingOutcome outcome;
  protonet::ProtoNetModel model;  // selected checkpoint
};

/// Mix, train and select one model. The model and the trainer are both
/// seeded from the root seed.
TrainedModel train_for_point(int x, const sourcebench::Pools& pools, const AuditConfig& config,
                             const trainer::EpochCallback& on_epoch = {});

/// Accuracies, faithfulness, tag mass and source histogram of a trained model.
SweepEntry evaluate_point(int x, const protonet::ProtoNetModel& model,
                          const sourcebench::Pools& pools, const AuditConfig& config);

/// Exports the PRP and upsampling heatmaps of the top-scoring prototype on
/// the first `count` images of `images` into `dir`.
void export_model_heatmaps(const protonet::ProtoNetModel& model,
                           std::span<const sourcebench::ImageRecord> images, std::size_t count,
                           const std::filesystem::path& dir);

using SweepProgress = std::function<void(const std::string&)>;

/// Trains and evaluates every configured point. A failing point is recorded
/// with its error and the sweep moves on. With a non-empty `out_dir`, each
/// point writes `x_<xxx>/model.prp1` and `x_<xxx>/heatmaps/`, and the
/// report files are refreshed after every point.
SweepReport run_sweep(const AuditConfig& config, const std::filesystem::path& out_dir = {},
                      const SweepProgress& progress = {});
/// Same, on already built pools (e.g. loaded from a manifest).
SweepReport run_sweep(const AuditConfig& config, const sourcebench::Pools& pools,
                      const std::filesystem::path& out_dir = {}, const SweepProgress& progress = {});

}  // namespace protoaudit::audit
