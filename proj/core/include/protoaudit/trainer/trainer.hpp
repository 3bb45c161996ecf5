#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protoaudit/protonet/model.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace protoaudit::trainer {

using protonet::BasicProtoNet;
using protonet::ProtoNetModel;
using sourcebench::ImageRecord;

struct LossCoefficients {
  double cluster = 0.8;
  double separation = 0.08;
  double l1 = 1e-4;
};

struct TrainConfig {
  std::size_t joint_epochs = 50;
  std::size_t projection_interval = 10;
  std::size_t last_layer_epochs = 20;
  std::size_t batch_size = 32;
  double joint_lr = 0.05;  // backbone
  double addon_lr = 0.05;
  double prototype_lr = 0.05;
  double last_layer_lr = 0.01;
  double momentum = 0.9;
  /// Cap on the L2 norm of the joint-phase batch gradient over backbone,
  /// add-on and prototypes; 0 disables clipping.
  double max_grad_norm = 1.0;
  LossCoefficients coefficients;
  std::uint64_t seed = 42;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

struct LossBreakdown {
  double cross_entropy = 0.0;
  double cluster_cost = 0.0;
  double separation_cost = 0.0;
  double total = 0.0;  // ce + lambda_clst * cluster - lambda_sep * separation
};

template <typename T>
struct ModelGradients {
  numerics::GradientTape<T> backbone;
  numerics::GradientTape<T> addon;
  numerics::BasicTensor<T> prototypes;  // [N, D]
  numerics::BasicTensor<T> last_layer;  // [C, N]
};

template <typename T>
struct ObjectiveResult {
  LossBreakdown loss;
  ModelGradients<T> grads;
  int predicted = 0;
};

/// Joint-phase objective for one image and its exact gradient with respect to
/// every parameter of the model (backbone, add-on, prototypes, last layer).
template <typename T>
ObjectiveResult<T> evaluate_objective(const BasicProtoNet<T>& model,
                                      const numerics::BasicTensor<T>& image, int label,
                                      const LossCoefficients& coefficients,
                                      bool with_gradients = true);

/// L2 norm over the backbone, add-on and prototype gradients.
double joint_gradient_norm(const ModelGradients<float>& g);

/// Rescales those gradients to `max_norm` when their norm exceeds it
/// (max_norm = 0 disables). Returns whether it rescaled.
bool clip_gradients(ModelGradients<float>& g, double max_norm);

/// Batch means of the three loss terms. cluster: min over own-class
/// prototypes of the min patch distance; separation: the same over
/// other-class prototypes.
LossBreakdown cluster_separation(const ProtoNetModel& model,
                                 std::span<const ImageRecord> batch,
                                 const LossCoefficients& coefficients = {});

enum class Phase { kJoint, kLastLayer };
std::string to_string(Phase phase);

struct EpochSnapshot {
  std::size_t epoch = 0;  // 1-based within its phase
  Phase phase = Phase::kJoint;
  double val_accuracy = 0.0;
  LossBreakdown train_loss;  // mean over the epoch's batches, before updates
  bool projected = false;    // prototypes coincide with training patches
  ProtoNetModel model;
};

using EpochCallback = std::function<void(const EpochSnapshot&)>;

struct JointTrainResult {
  std::vector<EpochSnapshot> checkpoints;
  std::size_t projection_events = 0;
};

/// End-to-end training of backbone, add-on and prototypes with a projection
/// after every `projection_interval` epochs; validation accuracy of a
/// projection epoch is measured after projecting. Throws
/// numerics::NumericalError when the loss becomes non-finite.
JointTrainResult joint_train(ProtoNetModel& model, std::span<const ImageRecord> train_set,
                             std::span<const ImageRecord> val_set, const TrainConfig& config,
                             const EpochCallback& on_epoch = {});

/// Convex last-layer optimisation on frozen features: cross-entropy plus
/// lambda_l1 * sum |w| over connections from prototypes to non-owner classes.
/// Returns one snapshot per epoch (val accuracy only when val_set is given).
std::vector<EpochSnapshot> train_last_layer(ProtoNetModel& model,
                                            std::span<const ImageRecord> train_set,
                                            std::span<const ImageRecord> val_set,
                                            const TrainConfig& config,
                                            const EpochCallback& on_epoch = {});

/// Index of the best validation accuracy, earliest on ties. Throws
/// std::invalid_argument on an empty list.
std::size_t select_model(std::span<const double> val_accuracies);
std::size_t select_model(std::span<const EpochSnapshot> checkpoints);

struct TrainingOutcome {
  std::vector<EpochSnapshot> checkpoints;  // joint then last-layer epochs
  std::size_t projection_events = 0;
  std::size_t selected = 0;                // index into checkpoints
  const EpochSnapshot& best() const { return checkpoints[selected]; }
};

/// Full schedule: joint training with periodic projection, last-layer
/// training from the final projected model, then selection among the
/// checkpoints with projected prototypes.
TrainingOutcome train_protonet(ProtoNetModel& model, std::span<const ImageRecord> train_set,
                               std::span<const ImageRecord> val_set, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

/// Byte hash of backbone, add-on and prototype parameters.
std::uint64_t feature_parameter_hash(const ProtoNetModel& model);

}  // namespace protoaudit::trainer
