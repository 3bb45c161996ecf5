#include "protoaudit/protonet/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "protoaudit/numerics/rng.hpp"

namespace protoaudit::protonet {

using numerics::LayerSpec;
using numerics::Shape;
using numerics::ShapeError;

double similarity_from_distance(double d2) {
  return std::log((d2 + 1.0) / (d2 + kSimilarityEpsilon));
}

double similarity_derivative(double d2) {
  return 1.0 / (d2 + 1.0) - 1.0 / (d2 + kSimilarityEpsilon);
}

std::vector<LayerSpec> Architecture::backbone_layers() const {
  std::vector<LayerSpec> layers;
  std::size_t in = input_channels;
  for (std::size_t out : conv_channels) {
    layers.push_back(LayerSpec::conv2d(in, out, kernel, kernel / 2, bias));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool2d(pool));
    in = out;
  }
  return layers;
}

std::vector<LayerSpec> Architecture::addon_layers() const {
  const std::size_t in = conv_channels.empty() ? input_channels : conv_channels.back();
  return {LayerSpec::conv2d(in, prototype_depth, 1, 0, bias), LayerSpec::sigmoid()};
}

std::string Architecture::to_text() const {
  std::ostringstream os;
  os << "input=" << input_channels << 'x' << input_height << 'x' << input_width << ";convs=";
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (i) os << ',';
    os << conv_channels[i];
  }
  os << ";kernel=" << kernel << ";pool=" << pool << ";depth=" << prototype_depth
     << ";classes=" << num_classes << ";per_class=" << prototypes_per_class
     << ";bias=" << (bias ? 1 : 0);
  return os.str();
}

namespace {

std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) {
    throw std::invalid_argument("architecture: bad value '" + s + "' for " + key);
  }
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> parse_list(const std::string& s, char sep, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(parse_size(item, key));
  return out;
}

}  // namespace

Architecture Architecture::from_text(const std::string& text) {
  Architecture a;
  std::stringstream ss(text);
  std::string field;
  bool seen_input = false;
  while (std::getline(ss, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("architecture: malformed field '" + field + "'");
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "input") {
      auto dims = parse_list(value, 'x', key);
      if (dims.size() != 3) throw std::invalid_argument("architecture: input must be CxHxW");
      a.input_channels = dims[0];
      a.input_height = dims[1];
      a.input_width = dims[2];
      seen_input = true;
    } else if (key == "convs") {
      a.conv_channels = value.empty() ? std::vector<std::size_t>{} : parse_list(value, ',', key);
    } else if (key == "kernel") {
      a.kernel = parse_size(value, key);
    } else if (key == "pool") {
      a.pool = parse_size(value, key);
    } else if (key == "depth") {
      a.prototype_depth = parse_size(value, key);
    } else if (key == "classes") {
      a.num_classes = parse_size(value, key);
    } else if (key == "per_class") {
      a.prototypes_per_class = parse_size(value, key);
    } else if (key == "bias") {
      a.bias = parse_size(value, key) != 0;
    } else {
      throw std::invalid_argument("architecture: unknown key '" + key + "'");
    }
  }
  if (!seen_input) throw std::invalid_argument("architecture: missing input dims");
  return a;
}

template <typename T>
bool PrototypeBank<T>::projected() const {
  if (source.size() != owner_class.size() || source.empty()) return false;
  for (const auto& s : source) {
    if (!s) return false;
  }
  return true;
}

template <typename T>
std::vector<std::size_t> PrototypeBank<T>::prototypes_of(int cls) const {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < owner_class.size(); ++m) {
    if (owner_class[m] == cls) out.push_back(m);
  }
  return out;
}

template <typename T>
std::vector<double> patch_distances(const BasicTensor<T>& z, std::span<const T> prototype) {
  if (z.rank() != 3 || z.dim(0) != prototype.size()) {
    throw ShapeError("patch_distances: prototype depth does not match feature map");
  }
  const std::size_t depth = z.dim(0), patches = z.dim(1) * z.dim(2);
  std::vector<double> d2(patches, 0.0);
  for (std::size_t d = 0; d < depth; ++d) {
    const T* plane = z.raw() + d * patches;
    const double pd = static_cast<double>(prototype[d]);
    for (std::size_t p = 0; p < patches; ++p) {
      const double diff = static_cast<double>(plane[p]) - pd;
      d2[p] += diff * diff;
    }
  }
  return d2;
}

template <typename T>
std::size_t argmax_first(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
ActivationMap<T> similarity_map(const BasicTensor<T>& z, std::span<const T> prototype) {
  const auto d2 = patch_distances(z, prototype);
  ActivationMap<T> map;
  map.values = BasicTensor<T>({z.dim(1), z.dim(2)});
  for (std::size_t p = 0; p < d2.size(); ++p) {
    map.values[p] = static_cast<T>(similarity_from_distance(d2[p]));
  }
  map.argmax = argmax_first<T>(map.values.data());
  map.score = map.values[map.argmax];
  map.h = map.argmax / z.dim(2);
  map.w = map.argmax % z.dim(2);
  return map;
}

template <typename T>
int predict_from_logits(std::span<const T> logits) {
  return static_cast<int>(argmax_first(logits));
}

template <typename T>
BasicProtoNet<T>::BasicProtoNet(Architecture arch, Network<T> backbone, Network<T> addon,
                                PrototypeBank<T> prototypes, BasicTensor<T> last_layer)
    : arch_(std::move(arch)),
      backbone_(std::move(backbone)),
      addon_(std::move(addon)),
      prototypes_(std::move(prototypes)),
      last_layer_(std::move(last_layer)) {
  validate();
}

template <typename T>
void BasicProtoNet<T>::validate() const {
  if (backbone_.input_shape() != arch_.input_shape()) {
    throw ShapeError("protonet: backbone input does not match architecture");
  }
  if (addon_.input_shape() != backbone_.output_shape()) {
    throw ShapeError("protonet: add-on input does not match backbone output");
  }
  const std::size_t n = arch_.num_prototypes();
  if (prototypes_.vectors.shape() != Shape{n, arch_.prototype_depth} ||
      prototypes_.owner_class.size() != n || prototypes_.source.size() != n) {
    throw ShapeError("protonet: prototype bank must hold N x D vectors");
  }
  if (addon_.output_shape()[0] != arch_.prototype_depth) {
    throw ShapeError("protonet: add-on depth does not match prototype depth");
  }
  if (last_layer_.shape() != Shape{arch_.num_classes, n}) {
    throw ShapeError("protonet: last layer must be [C, N]");
  }
  for (int c : prototypes_.owner_class) {
    if (c < 0 || static_cast<std::size_t>(c) >= arch_.num_classes) {
      throw std::invalid_argument("protonet: prototype owner class out of range");
    }
  }
}

template <typename T>
BasicProtoNet<T> BasicProtoNet<T>::create(const Architecture& arch, std::uint64_t seed) {
  numerics::Rng rng(seed);
  Network<T> backbone(arch.backbone_layers(), arch.input_shape());
  Network<T> addon(arch.addon_layers(), backbone.output_shape());
  auto init = [&rng](Network<T>& net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      const LayerSpec& l = net.layers()[i];
      if (!l.has_parameters()) continue;
      auto& w = net.params()[i].weight;
      const std::size_t fan_in = w.size() / w.dim(0);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (T& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  };
  init(backbone);
  init(addon);

  const std::size_t n = arch.num_prototypes();
  PrototypeBank<T> bank;
  bank.vectors = BasicTensor<T>({n, arch.prototype_depth});
  for (T& v : bank.vectors.data()) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    v = static_cast<T>(u);
  }
  bank.owner_class.resize(n);
  for (std::size_t m = 0; m < n; ++m) {
    bank.owner_class[m] = static_cast<int>(m / arch.prototypes_per_class);
  }
  bank.source.assign(n, std::nullopt);

  BasicTensor<T> last({arch.num_classes, n});
  for (std::size_t c = 0; c < arch.num_classes; ++c) {
    for (std::size_t m = 0; m < n; ++m) {
      last.at(c, m) = static_cast<std::size_t>(bank.owner_class[m]) == c ? T{1} : T(-0.5);
    }
  }
  return BasicProtoNet(arch, std::move(backbone), std::move(addon), std::move(bank), std::move(last));
}

template <typename T>
BasicTensor<T> BasicProtoNet<T>::encode(const BasicTensor<T>& image) const {
  return addon_.forward(backbone_.forward(image));
}

template <typename T>
void BasicProtoNet<T>::forward_from_features(ForwardResult<T>& r) const {
  const std::size_t n = prototypes_.size();
  const std::size_t depth = prototypes_.depth();
  const std::size_t patches = r.z.dim(1) * r.z.dim(2);
  r.distances = BasicTensor<T>({n, patches});
  r.activations = BasicTensor<T>({n, patches});
  r.scores = BasicTensor<T>({n});
  r.score_argmax.assign(n, 0);
  for (std::size_t m = 0; m < n; ++m) {
    std::span<const T> proto(prototypes_.vectors.raw() + m * depth, depth);
    const auto d2 = patch_distances(r.z, proto);
    T* dist_row = r.distances.raw() + m * patches;
    T* act_row = r.activations.raw() + m * patches;
    for (std::size_t p = 0; p < patches; ++p) {
      dist_row[p] = static_cast<T>(d2[p]);
      act_row[p] = static_cast<T>(similarity_from_distance(d2[p]));
    }
    const std::size_t best = argmax_first(std::span<const T>(act_row, patches));
    r.score_argmax[m] = best;
    r.scores[m] = act_row[best];
  }
  r.logits = numerics::dense_forward<T>(r.scores, last_layer_, nullptr);
  r.predicted = predict_from_logits<T>(r.logits.data());
}

template <typename T>
ForwardResult<T> BasicProtoNet<T>::forward(const BasicTensor<T>& image, bool keep_caches) const {
  ForwardResult<T> r;
  r.backbone_cache = backbone_.forward_cached(image);
  r.addon_cache = addon_.forward_cached(r.backbone_cache.output());
  r.z = r.addon_cache.output();
  if (!keep_caches) {
    r.backbone_cache = {};
    r.addon_cache = {};
  }
  forward_from_features(r);
  return r;
}

template <typename T>
std::vector<SimilarityScore> BasicProtoNet<T>::similarity_scores(const BasicTensor<T>& image) const {
  const auto r = forward(image);
  std::vector<SimilarityScore> out(r.scores.size());
  for (std::size_t m = 0; m < out.size(); ++m) {
    out[m] = {static_cast<double>(r.scores[m]), r.score_argmax[m] / feature_width(),
              r.score_argmax[m] % feature_width()};
  }
  return out;
}

template <typename T>
Classification BasicProtoNet<T>::classify(const BasicTensor<T>& image) const {
  const auto r = forward(image);
  Classification c;
  c.logits.assign(r.logits.data().begin(), r.logits.data().end());
  c.predicted = r.predicted;
  return c;
}

template <typename T>
ActivationMap<T> BasicProtoNet<T>::activation_map(const BasicTensor<T>& image,
                                                  std::size_t prototype) const {
  if (prototype >= prototypes_.size()) throw std::out_of_range("prototype id out of range");
  const auto z = encode(image);
  const std::size_t depth = prototypes_.depth();
  return similarity_map(z, std::span<const T>(prototypes_.vectors.raw() + prototype * depth, depth));
}

template <typename T>
void BasicProtoNet<T>::project_prototypes(std::span<const sourcebench::ImageRecord> train_set) {
  const std::size_t n = prototypes_.size();
  const std::size_t depth = prototypes_.depth();
  for (std::size_t c = 0; c < arch_.num_classes; ++c) {
    bool found = false;
    for (const auto& rec : train_set) found = found || rec.label == static_cast<int>(c);
    if (!found) {
      throw std::invalid_argument("project_prototypes: class " + std::to_string(c) +
                                  " has no training images");
    }
  }

  struct Best {
    double d2 = std::numeric_limits<double>::infinity();
    std::uint64_t image_id = 0;
    std::size_t patch = 0;
    std::vector<T> feature;
    bool set = false;
  };
  std::vector<Best> best(n);
  for (const auto& rec : train_set) {
    const BasicTensor<T> z = encode(rec.pixels.template cast<T>());
    const std::size_t patches = z.dim(1) * z.dim(2);
    for (std::size_t m = 0; m < n; ++m) {
      if (prototypes_.owner_class[m] != rec.label) continue;
      std::span<const T> proto(prototypes_.vectors.raw() + m * depth, depth);
      const auto d2 = patch_distances(z, proto);
      for (std::size_t p = 0; p < patches; ++p) {
        Best& b = best[m];
        const bool better = !b.set || d2[p] < b.d2 ||
                            (d2[p] == b.d2 && std::tie(rec.id, p) < std::tie(b.image_id, b.patch));
        if (!better) continue;
        b.d2 = d2[p];
        b.image_id = rec.id;
        b.patch = p;
        b.set = true;
        b.feature.resize(depth);
        for (std::size_t d = 0; d < depth; ++d) b.feature[d] = z[d * patches + p];
      }
    }
  }
  const std::size_t width = feature_width();
  for (std::size_t m = 0; m < n; ++m) {
    const Best& b = best[m];
    std::copy(b.feature.begin(), b.feature.end(), prototypes_.vectors.raw() + m * depth);
    prototypes_.source[m] = PrototypeSource{b.image_id, static_cast<std::uint32_t>(b.patch / width),
                                            static_cast<std::uint32_t>(b.patch % width), b.d2};
  }
}

#define PROTOAUDIT_INSTANTIATE_PROTONET(T)                                              \
  template struct PrototypeBank<T>;                                                    \
  template class BasicProtoNet<T>;                                                     \
  template std::vector<double> patch_distances(const BasicTensor<T>&, std::span<const T>); \
  template ActivationMap<T> similarity_map(const BasicTensor<T>&, std::span<const T>);  \
  template std::size_t argmax_first(std::span<const T>);                                \
  template int predict_from_logits(std::span<const T>);

PROTOAUDIT_INSTANTIATE_PROTONET(float)
PROTOAUDIT_INSTANTIATE_PROTONET(double)

#undef PROTOAUDIT_INSTANTIATE_PROTONET

}  // namespace protoaudit::protonet
