#include "protoaudit/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "protoaudit/metrics/metrics.hpp"
#include "protoaudit/numerics/rng.hpp"
#include "protoaudit/numerics/sgd.hpp"

namespace protoaudit::trainer {

using numerics::BasicTensor;
using numerics::NumericalError;
using numerics::Tensor;

void TrainConfig::validate() const {
  if (joint_epochs < 1 || last_layer_epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (projection_interval < 1 || joint_epochs % projection_interval != 0) {
    throw std::invalid_argument("TrainConfig: projection_interval must divide joint_epochs");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(joint_lr >= 0.0) || !(addon_lr >= 0.0) || !(prototype_lr >= 0.0) || !(last_layer_lr >= 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
  }
  if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("TrainConfig: max_grad_norm must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must lie in [0,1)");
  if (coefficients.cluster < 0.0 || coefficients.separation < 0.0 || coefficients.l1 < 0.0) {
    throw std::invalid_argument("TrainConfig: loss coefficients must be >= 0");
  }
}

std::string to_string(Phase phase) { return phase == Phase::kJoint ? "joint" : "last_layer"; }

double joint_gradient_norm(const ModelGradients<float>& g) {
  double sq = 0.0;
  auto feed = [&sq](const Tensor& t) {
    for (float v : t.data()) sq += static_cast<double>(v) * v;
  };
  for (const auto* tape : {&g.backbone, &g.addon}) {
    for (const auto& p : tape->grads) {
      feed(p.weight);
      feed(p.bias);
    }
  }
  feed(g.prototypes);
  return std::sqrt(sq);
}

bool clip_gradients(ModelGradients<float>& g, double max_norm) {
  if (max_norm <= 0.0) return false;
  const double norm = joint_gradient_norm(g);
  if (!(norm > max_norm)) return false;
  const auto f = static_cast<float>(max_norm / norm);
  g.backbone.scale(f);
  g.addon.scale(f);
  for (float& v : g.prototypes.data()) v *= f;
  return true;
}

namespace {

struct Softmax {
  std::vector<double> probs;
  double cross_entropy = 0.0;
};

template <typename T>
Softmax softmax_ce(std::span<const T> logits, int label) {
  Softmax s;
  const double peak = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double norm = 0.0;
  s.probs.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    s.probs[c] = std::exp(static_cast<double>(logits[c]) - peak);
    norm += s.probs[c];
  }
  for (double& p : s.probs) p /= norm;
  s.cross_entropy = -(static_cast<double>(logits[static_cast<std::size_t>(label)]) - peak - std::log(norm));
  return s;
}

struct MinLocation {
  double d2 = std::numeric_limits<double>::infinity();
  std::size_t prototype = 0;
  std::size_t patch = 0;
};

// Smallest distance over prototypes selected by `pick`; ties to smaller
// (prototype, patch).
template <typename T, typename Pick>
MinLocation min_distance(const BasicTensor<T>& distances, const std::vector<int>& owners, Pick pick) {
  MinLocation best;
  const std::size_t patches = distances.dim(1);
  for (std::size_t m = 0; m < owners.size(); ++m) {
    if (!pick(owners[m])) continue;
    for (std::size_t p = 0; p < patches; ++p) {
      const double d = distances[m * patches + p];
      if (d < best.d2) best = {d, m, p};
    }
  }
  return best;
}

}  // namespace

template <typename T>
ObjectiveResult<T> evaluate_objective(const BasicProtoNet<T>& model, const BasicTensor<T>& image,
                                      int label, const LossCoefficients& coefficients,
                                      bool with_gradients) {
  const auto fwd = model.forward(image, with_gradients);
  const auto& bank = model.prototypes();
  const std::size_t n = bank.size();
  const std::size_t depth = bank.depth();
  const std::size_t patches = fwd.distances.dim(1);
  const std::size_t classes = fwd.logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= classes) throw std::invalid_argument("label out of range");

  const Softmax sm = softmax_ce<T>(fwd.logits.data(), label);
  const MinLocation cluster = min_distance(fwd.distances, bank.owner_class, [label](int c) { return c == label; });
  const MinLocation separation = min_distance(fwd.distances, bank.owner_class, [label](int c) { return c != label; });

  ObjectiveResult<T> res;
  res.predicted = fwd.predicted;
  res.loss.cross_entropy = sm.cross_entropy;
  res.loss.cluster_cost = cluster.d2;
  res.loss.separation_cost = std::isfinite(separation.d2) ? separation.d2 : 0.0;
  res.loss.total = res.loss.cross_entropy + coefficients.cluster * res.loss.cluster_cost -
                   coefficients.separation * res.loss.separation_cost;
  if (!with_gradients) return res;

  std::vector<double> g_logits(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    g_logits[c] = sm.probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);
  }
  const auto& w = model.last_layer();
  res.grads.last_layer = BasicTensor<T>(w.shape());
  // Sparse d(loss)/d(d2): score winners plus the two min-distance terms.
  std::vector<double> g_d2(n * patches, 0.0);
  for (std::size_t m = 0; m < n; ++m) {
    double g_score = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      g_score += static_cast<double>(w[c * n + m]) * g_logits[c];
      res.grads.last_layer[c * n + m] = static_cast<T>(g_logits[c] * static_cast<double>(fwd.scores[m]));
    }
    const std::size_t p = fwd.score_argmax[m];
    g_d2[m * patches + p] += g_score * protonet::similarity_derivative(fwd.distances[m * patches + p]);
  }
  g_d2[cluster.prototype * patches + cluster.patch] += coefficients.cluster;
  if (std::isfinite(separation.d2)) {
    g_d2[separation.prototype * patches + separation.patch] -= coefficients.separation;
  }

  BasicTensor<T> g_z(fwd.z.shape());
  res.grads.prototypes = BasicTensor<T>(bank.vectors.shape());
  for (std::size_t m = 0; m < n; ++m) {
    const T* proto = bank.vectors.raw() + m * depth;
    for (std::size_t p = 0; p < patches; ++p) {
      const double g = g_d2[m * patches + p];
      if (g == 0.0) continue;
      for (std::size_t d = 0; d < depth; ++d) {
        const double diff = static_cast<double>(fwd.z[d * patches + p]) - static_cast<double>(proto[d]);
        g_z[d * patches + p] += static_cast<T>(2.0 * g * diff);
        res.grads.prototypes[m * depth + d] -= static_cast<T>(2.0 * g * diff);
      }
    }
  }
  res.grads.addon = model.addon().backward(fwd.addon_cache, g_z, true);
  res.grads.backbone = model.backbone().backward(fwd.backbone_cache, res.grads.addon.input_grad, false);
  res.grads.addon.input_grad = {};
  return res;
}

template ObjectiveResult<float> evaluate_objective(const BasicProtoNet<float>&, const BasicTensor<float>&, int,
                                                   const LossCoefficients&, bool);
template ObjectiveResult<double> evaluate_objective(const BasicProtoNet<double>&, const BasicTensor<double>&,
                                                    int, const LossCoefficients&, bool);

LossBreakdown cluster_separation(const ProtoNetModel& model, std::span<const ImageRecord> batch,
                                 const LossCoefficients& coefficients) {
  if (batch.empty()) throw std::invalid_argument("cluster_separation: empty batch");
  LossBreakdown mean;
  for (const auto& rec : batch) {
    const auto r = evaluate_objective(model, rec.pixels, rec.label, coefficients, false);
    mean.cross_entropy += r.loss.cross_entropy;
    mean.cluster_cost += r.loss.cluster_cost;
    mean.separation_cost += r.loss.separation_cost;
  }
  const double k = static_cast<double>(batch.size());
  mean.cross_entropy /= k;
  mean.cluster_cost /= k;
  mean.separation_cost /= k;
  mean.total = mean.cross_entropy + coefficients.cluster * mean.cluster_cost -
               coefficients.separation * mean.separation_cost;
  return mean;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t phase, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  numerics::Rng rng(numerics::derive_seed(seed, {phase, epoch}));
  rng.shuffle(order.begin(), order.end());
  return order;
}

void add_scaled(Tensor& dst, const Tensor& src, float scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

struct ParamGroup {
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
};

ParamGroup network_parameters(numerics::Network<float>& net, const numerics::GradientTape<float>& tape) {
  ParamGroup group;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    if (!net.params()[i].weight.empty()) {
      group.params.push_back(&net.params()[i].weight);
      group.grads.push_back(&tape.grads[i].weight);
    }
    if (!net.params()[i].bias.empty()) {
      group.params.push_back(&net.params()[i].bias);
      group.grads.push_back(&tape.grads[i].bias);
    }
  }
  return group;
}

void check_finite(const LossBreakdown& loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss.total)) {
    throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch) + " (ce=" + std::to_string(loss.cross_entropy) +
                         ", cluster=" + std::to_string(loss.cluster_cost) +
                         ", separation=" + std::to_string(loss.separation_cost) + ")");
  }
}

}  // namespace

JointTrainResult joint_train(ProtoNetModel& model, std::span<const ImageRecord> train_set,
                             std::span<const ImageRecord> val_set, const TrainConfig& config,
                             const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("joint_train: empty training set");
  JointTrainResult result;
  numerics::SgdMomentum<float> backbone_opt(config.joint_lr, config.momentum);
  numerics::SgdMomentum<float> addon_opt(config.addon_lr, config.momentum);
  numerics::SgdMomentum<float> prototype_opt(config.prototype_lr, config.momentum);
  const std::size_t n = train_set.size();

  for (std::size_t epoch = 1; epoch <= config.joint_epochs; ++epoch) {
    const auto order = epoch_order(n, config.seed, 0, epoch);
    LossBreakdown epoch_loss;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const float scale = 1.0f / static_cast<float>(end - start);
      ModelGradients<float> acc;
      LossBreakdown batch_loss;
      for (std::size_t k = start; k < end; ++k) {
        const ImageRecord& rec = train_set[order[k]];
        auto r = evaluate_objective(model, rec.pixels, rec.label, config.coefficients, true);
        if (k == start) {
          acc.backbone = model.backbone().zero_tape();
          acc.addon = model.addon().zero_tape();
          acc.prototypes = Tensor(model.prototypes().vectors.shape());
          acc.last_layer = Tensor(model.last_layer().shape());
        }
        acc.backbone.accumulate(r.grads.backbone, scale);
        acc.addon.accumulate(r.grads.addon, scale);
        add_scaled(acc.prototypes, r.grads.prototypes, scale);
        batch_loss.cross_entropy += r.loss.cross_entropy;
        batch_loss.cluster_cost += r.loss.cluster_cost;
        batch_loss.separation_cost += r.loss.separation_cost;
        batch_loss.total += r.loss.total;
      }
      check_finite(batch_loss, epoch, batch_index);
      epoch_loss.cross_entropy += batch_loss.cross_entropy;
      epoch_loss.cluster_cost += batch_loss.cluster_cost;
      epoch_loss.separation_cost += batch_loss.separation_cost;
      epoch_loss.total += batch_loss.total;
      clip_gradients(acc, config.max_grad_norm);
      // The last layer keeps its class-connection initialisation in this phase.
      const auto bb = network_parameters(model.backbone(), acc.backbone);
      const auto ad = network_parameters(model.addon(), acc.addon);
      backbone_opt.step(bb.params, bb.grads);
      addon_opt.step(ad.params, ad.grads);
      prototype_opt.step({&model.prototypes().vectors}, {&acc.prototypes});
    }
    const double inv = 1.0 / static_cast<double>(n);
    epoch_loss.cross_entropy *= inv;
    epoch_loss.cluster_cost *= inv;
    epoch_loss.separation_cost *= inv;
    epoch_loss.total *= inv;

    const bool project = epoch % config.projection_interval == 0;
    if (project) {
      model.project_prototypes(train_set);
      ++result.projection_events;
    } else if (model.prototypes().projected()) {
      // Vectors moved since the last projection; the source records are stale.
      model.prototypes().source.assign(model.prototypes().size(), std::nullopt);
    }
    EpochSnapshot snap;
    snap.epoch = epoch;
    snap.phase = Phase::kJoint;
    snap.val_accuracy = val_set.empty() ? 0.0 : metrics::accuracy(model, val_set);
    snap.train_loss = epoch_loss;
    snap.projected = project;
    snap.model = model;
    if (on_epoch) on_epoch(snap);
    result.checkpoints.push_back(std::move(snap));
  }
  return result;
}

std::vector<EpochSnapshot> train_last_layer(ProtoNetModel& model, std::span<const ImageRecord> train_set,
                                            std::span<const ImageRecord> val_set, const TrainConfig& config,
                                            const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train_last_layer: empty training set");
  const std::size_t n_proto = model.prototypes().size();
  const std::size_t classes = model.architecture().num_classes;

  // Features are frozen, so the similarity scores are computed once.
  auto scores_of = [&](std::span<const ImageRecord> set) {
    std::vector<std::vector<double>> s;
    s.reserve(set.size());
    for (const auto& rec : set) {
      const auto fwd = model.forward(rec.pixels);
      s.emplace_back(fwd.scores.data().begin(), fwd.scores.data().end());
    }
    return s;
  };
  const auto train_scores = scores_of(train_set);
  const auto val_scores = scores_of(val_set);

  auto logits_of = [&](const std::vector<double>& s) {
    std::vector<double> logits(classes, 0.0);
    const Tensor& w = model.last_layer();
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t m = 0; m < n_proto; ++m) logits[c] += static_cast<double>(w[c * n_proto + m]) * s[m];
      logits[c] = static_cast<double>(static_cast<float>(logits[c]));
    }
    return logits;
  };
  auto val_accuracy = [&]() {
    if (val_set.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      const auto logits = logits_of(val_scores[i]);
      if (protonet::predict_from_logits<double>(logits) == val_set[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(val_set.size());
  };

  std::vector<EpochSnapshot> snapshots;
  numerics::SgdMomentum<float> optimizer(config.last_layer_lr, config.momentum);
  const std::size_t n = train_set.size();
  const auto& owners = model.prototypes().owner_class;
  for (std::size_t epoch = 1; epoch <= config.last_layer_epochs; ++epoch) {
    const auto order = epoch_order(n, config.seed, 1, epoch);
    LossBreakdown epoch_loss;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::vector<double> grad(classes * n_proto, 0.0);
      double batch_ce = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto logits = logits_of(train_scores[i]);
        const Softmax sm = softmax_ce<double>(logits, train_set[i].label);
        batch_ce += sm.cross_entropy;
        for (std::size_t c = 0; c < classes; ++c) {
          const double g = sm.probs[c] - (static_cast<int>(c) == train_set[i].label ? 1.0 : 0.0);
          for (std::size_t m = 0; m < n_proto; ++m) grad[c * n_proto + m] += scale * g * train_scores[i][m];
        }
      }
      Tensor& w = model.last_layer();
      double l1 = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t m = 0; m < n_proto; ++m) {
          if (owners[m] == static_cast<int>(c)) continue;
          const double v = w[c * n_proto + m];
          l1 += std::abs(v);
          const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
          grad[c * n_proto + m] += config.coefficients.l1 * sign;
        }
      }
      epoch_loss.cross_entropy += batch_ce;
      epoch_loss.total += batch_ce + config.coefficients.l1 * l1 * static_cast<double>(end - start);
      if (!std::isfinite(epoch_loss.total)) {
        throw NumericalError("last-layer training diverged at epoch " + std::to_string(epoch));
      }
      Tensor g(w.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(grad[i]);
      optimizer.step({&w}, {&g});
    }
    epoch_loss.cross_entropy /= static_cast<double>(n);
    epoch_loss.total /= static_cast<double>(n);

    EpochSnapshot snap;
    snap.epoch = epoch;
    snap.phase = Phase::kLastLayer;
    snap.val_accuracy = val_accuracy();
    snap.train_loss = epoch_loss;
    snap.projected = model.prototypes().projected();
    snap.model = model;
    if (on_epoch) on_epoch(snap);
    snapshots.push_back(std::move(snap));
  }
  return snapshots;
}

std::size_t select_model(std::span<const double> val_accuracies) {
  if (val_accuracies.empty()) throw std::invalid_argument("select_model: no checkpoints");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_accuracies.size(); ++i) {
    if (val_accuracies[i] > val_accuracies[best]) best = i;
  }
  return best;
}

std::size_t select_model(std::span<const EpochSnapshot> checkpoints) {
  std::vector<double> acc;
  acc.reserve(checkpoints.size());
  for (const auto& c : checkpoints) acc.push_back(c.val_accuracy);
  return select_model(acc);
}

TrainingOutcome train_protonet(ProtoNetModel& model, std::span<const ImageRecord> train_set,
                               std::span<const ImageRecord> val_set, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
  auto joint = joint_train(model, train_set, val_set, config, on_epoch);
  auto last = train_last_layer(model, train_set, val_set, config, on_epoch);
  TrainingOutcome out;
  out.projection_events = joint.projection_events;
  out.checkpoints = std::move(joint.checkpoints);
  for (auto& s : last) out.checkpoints.push_back(std::move(s));

  std::vector<std::size_t> candidates;
  std::vector<double> acc;
  for (std::size_t i = 0; i < out.checkpoints.size(); ++i) {
    if (!out.checkpoints[i].projected) continue;
    candidates.push_back(i);
    acc.push_back(out.checkpoints[i].val_accuracy);
  }
  out.selected = candidates.at(select_model(acc));
  return out;
}

std::uint64_t feature_parameter_hash(const ProtoNetModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const Tensor& t) {
    const auto bytes = std::as_bytes(t.data());
    h = numerics::hash_bytes(
        std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()), h);
  };
  for (const auto* net : {&model.backbone(), &model.addon()}) {
    for (const auto& p : net->params()) {
      feed(p.weight);
      feed(p.bias);
    }
  }
  feed(model.prototypes().vectors);
  return h;
}

}  // namespace protoaudit::trainer
