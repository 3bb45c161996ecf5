#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoaudit/numerics/network.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace protoaudit::protonet {

using numerics::BasicTensor;
using numerics::Network;

/// Stabilizer of the similarity activation log((d2 + 1) / (d2 + eps)).
inline constexpr double kSimilarityEpsilon = 1e-4;

double similarity_from_distance(double d2);
/// d(similarity)/d(d2).
double similarity_derivative(double d2);

/// Shape of the classifier. The defaults are the desk-scale architecture:
/// 1x64x64 -> 3x [conv3x3, relu, maxpool2] with 16/32/64 channels ->
/// 1x1 conv + sigmoid -> z in R^{64x8x8}; 10 prototypes per class, 2 classes.
struct Architecture {
  std::size_t input_channels = 1;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t prototype_depth = 64;
  std::size_t num_classes = 2;
  std::size_t prototypes_per_class = 10;
  bool bias = true;

  std::size_t num_prototypes() const { return num_classes * prototypes_per_class; }
  numerics::Shape input_shape() const { return {input_channels, input_height, input_width}; }

  std::vector<numerics::LayerSpec> backbone_layers() const;
  std::vector<numerics::LayerSpec> addon_layers() const;

  std::string to_text() const;
  static Architecture from_text(const std::string& text);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct PrototypeSource {
  std::uint64_t image_id = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  double distance = 0.0;  // squared distance found at projection time

  friend bool operator==(const PrototypeSource&, const PrototypeSource&) = default;
};

template <typename T>
struct PrototypeBank {
  BasicTensor<T> vectors;  // [N, D]
  std::vector<int> owner_class;
  std::vector<std::optional<PrototypeSource>> source;

  std::size_t size() const { return owner_class.size(); }
  std::size_t depth() const { return vectors.dim(1); }
  bool projected() const;
  std::vector<std::size_t> prototypes_of(int cls) const;
};

template <typename T>
struct ActivationMap {
  BasicTensor<T> values;  // [H', W']
  T score{};
  std::size_t argmax = 0;  // flat index, ties -> smallest
  std::size_t h = 0;
  std::size_t w = 0;
};

struct SimilarityScore {
  double score = 0.0;
  std::size_t h = 0;
  std::size_t w = 0;
};

struct Classification {
  std::vector<double> logits;
  int predicted = 0;
};

/// Everything a single forward pass produces; caches are filled only when
/// requested.
template <typename T>
struct ForwardResult {
  numerics::ForwardCache<T> backbone_cache;
  numerics::ForwardCache<T> addon_cache;
  BasicTensor<T> z;            // [D, H', W']
  BasicTensor<T> distances;    // [N, H'*W'] squared L2
  BasicTensor<T> activations;  // [N, H'*W']
  BasicTensor<T> scores;       // [N]
  std::vector<std::size_t> score_argmax;  // per prototype, flat patch index
  BasicTensor<T> logits;       // [C]
  int predicted = 0;
};

/// Squared L2 distances from every patch of z [D,H',W'] to prototype p [D],
/// accumulated in double.
template <typename T>
std::vector<double> patch_distances(const BasicTensor<T>& z, std::span<const T> prototype);

template <typename T>
ActivationMap<T> similarity_map(const BasicTensor<T>& z, std::span<const T> prototype);

/// Max over the map with the smallest flat index on ties.
template <typename T>
std::size_t argmax_first(std::span<const T> values);

/// Prototype classifier: backbone -> add-on -> prototype layer -> last layer.
template <typename T>
class BasicProtoNet {
 public:
  BasicProtoNet() = default;
  BasicProtoNet(Architecture arch, Network<T> backbone, Network<T> addon,
                PrototypeBank<T> prototypes, BasicTensor<T> last_layer);

  /// Fresh model: He-uniform convolutions, zero biases, prototypes uniform in
  /// (0,1), last layer +1 own class / -0.5 other classes.
  static BasicProtoNet create(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  std::size_t feature_height() const { return addon_.output_shape()[1]; }
  std::size_t feature_width() const { return addon_.output_shape()[2]; }

  Network<T>& backbone() noexcept { return backbone_; }
  const Network<T>& backbone() const noexcept { return backbone_; }
  Network<T>& addon() noexcept { return addon_; }
  const Network<T>& addon() const noexcept { return addon_; }
  PrototypeBank<T>& prototypes() noexcept { return prototypes_; }
  const PrototypeBank<T>& prototypes() const noexcept { return prototypes_; }
  BasicTensor<T>& last_layer() noexcept { return last_layer_; }
  const BasicTensor<T>& last_layer() const noexcept { return last_layer_; }

  BasicTensor<T> encode(const BasicTensor<T>& image) const;
  ForwardResult<T> forward(const BasicTensor<T>& image, bool keep_caches = false) const;
  /// Prototype layer and last layer applied to an already computed z.
  void forward_from_features(ForwardResult<T>& result) const;

  std::vector<SimilarityScore> similarity_scores(const BasicTensor<T>& image) const;
  Classification classify(const BasicTensor<T>& image) const;
  ActivationMap<T> activation_map(const BasicTensor<T>& image, std::size_t prototype) const;

  /// Snaps every prototype onto its nearest same-class training patch.
  /// Ties go to smaller (image id, flat patch index). Throws
  /// std::invalid_argument when a class has no training image.
  void project_prototypes(std::span<const sourcebench::ImageRecord> train_set);

  template <typename U>
  BasicProtoNet<U> cast() const;

 private:
  void validate() const;

  Architecture arch_;
  Network<T> backbone_;
  Network<T> addon_;
  PrototypeBank<T> prototypes_;
  BasicTensor<T> last_layer_;  // [C, N], no bias
};

using ProtoNetModel = BasicProtoNet<float>;

/// Logits from scores S and weight [C,N]; argmax with ties to smaller class.
template <typename T>
int predict_from_logits(std::span<const T> logits);

template <typename T>
template <typename U>
BasicProtoNet<U> BasicProtoNet<T>::cast() const {
  PrototypeBank<U> bank;
  bank.vectors = prototypes_.vectors.template cast<U>();
  bank.owner_class = prototypes_.owner_class;
  bank.source = prototypes_.source;
  return BasicProtoNet<U>(arch_, backbone_.template cast<U>(), addon_.template cast<U>(),
                          std::move(bank), last_layer_.template cast<U>());
}

}  // namespace protoaudit::protonet
