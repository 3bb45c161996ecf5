#include "protoaudit/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace protoaudit::metrics {

double accuracy(const ProtoNetModel& model, std::span<const ImageRecord> dataset) {
  if (dataset.empty()) throw std::invalid_argument("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& rec : dataset) {
    if (model.classify(rec.pixels).predicted == rec.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

Tensor mask_least_activated(const Tensor& image, const Tensor& heatmap, double fraction,
                            numerics::Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("mask_least_activated: fraction must lie in [0,1]");
  }
  if (image.size() != heatmap.size()) {
    throw numerics::ShapeError("mask_least_activated: image and heatmap sizes differ");
  }
  std::vector<std::size_t> order(heatmap.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return heatmap[a] < heatmap[b]; });
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(heatmap.size())));
  Tensor out = image;
  for (std::size_t r = 0; r < count; ++r) out[order[r]] = static_cast<float>(rng.uniform());
  return out;
}

double average_drop(std::span<const ScorePair> terms) {
  if (terms.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& t : terms) {
    if (!(t.original > 0.0)) throw std::domain_error("average_drop: scores must be positive");
    acc += std::max(0.0, t.original - t.masked) / t.original;
  }
  return acc * 100.0 / static_cast<double>(terms.size());
}

double average_increase(std::span<const ScorePair> terms) {
  if (terms.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& t : terms) {
    if (t.original < t.masked) ++hits;
  }
  return static_cast<double>(hits) * 100.0 / static_cast<double>(terms.size());
}

namespace {

std::uint64_t content_hash(const Tensor& image) {
  const auto bytes = std::as_bytes(image.data());
  return numerics::hash_bytes(
      std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

}  // namespace

FaithfulnessResult faithfulness(const ProtoNetModel& model, std::span<const ImageRecord> dataset,
                                prp::Method method, std::uint64_t seed,
                                const prp::PropagationConfig& config) {
  FaithfulnessResult result;
  result.method = method;
  result.K = dataset.size();
  std::vector<ScorePair> terms;
  for (const auto& rec : dataset) {
    const auto fwd = model.forward(rec.pixels);
    const auto protos = model.prototypes().prototypes_of(fwd.predicted);
    result.n = protos.size();
    const std::uint64_t image_key = content_hash(rec.pixels);
    for (std::size_t m : protos) {
      const auto map = prp::explain(model, rec.pixels, m, method, config, rec.id);
      numerics::Rng rng(numerics::derive_seed(seed, {image_key, m}));
      const Tensor masked = mask_least_activated(rec.pixels, map.values, 0.5, rng);
      const auto masked_fwd = model.forward(masked);
      terms.push_back({static_cast<double>(fwd.scores[m]), static_cast<double>(masked_fwd.scores[m])});
    }
  }
  result.average_drop = average_drop(terms);
  result.average_increase = average_increase(terms);
  return result;
}

double average_drop(const ProtoNetModel& model, std::span<const ImageRecord> dataset,
                    prp::Method method, std::uint64_t seed) {
  return faithfulness(model, dataset, method, seed).average_drop;
}

double average_increase(const ProtoNetModel& model, std::span<const ImageRecord> dataset,
                        prp::Method method, std::uint64_t seed) {
  return faithfulness(model, dataset, method, seed).average_increase;
}

double tag_relevance_mass(const prp::RelevanceMap& map, const sourcebench::Mask& tag_mask) {
  if (map.values.size() != tag_mask.size()) {
    throw numerics::ShapeError("tag_relevance_mass: map and mask sizes differ");
  }
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < tag_mask.size(); ++i) {
    const double v = map.values[i];
    if (v < 0.0) throw std::domain_error("tag_relevance_mass: map must be non-negative");
    total += v;
    if (tag_mask[i]) inside += v;
  }
  return total > 0.0 ? inside / total : 0.0;
}

namespace {

std::unordered_map<std::uint64_t, const ImageRecord*> index_by_id(std::span<const ImageRecord> dataset) {
  std::unordered_map<std::uint64_t, const ImageRecord*> index;
  for (const auto& rec : dataset) index.emplace(rec.id, &rec);
  return index;
}

}  // namespace

SourceHistogram prototype_source_histogram(const ProtoNetModel& model,
                                           std::span<const ImageRecord> dataset) {
  const auto& bank = model.prototypes();
  if (!bank.projected()) throw prp::UnprojectedModelError("source histogram needs projected prototypes");
  const auto index = index_by_id(dataset);
  SourceHistogram hist;
  hist.counts.assign(model.architecture().num_classes, {0, 0});
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const auto it = index.find(bank.source[m]->image_id);
    if (it == index.end()) {
      throw std::invalid_argument("source image " + std::to_string(bank.source[m]->image_id) +
                                  " of prototype " + std::to_string(m) + " not found");
    }
    ++hist.counts[static_cast<std::size_t>(bank.owner_class[m])]
                 [static_cast<std::size_t>(it->second->hospital)];
  }
  return hist;
}

TagMassReport tag_mass_report(const ProtoNetModel& model, std::span<const ImageRecord> train_set,
                              const prp::PropagationConfig& config) {
  const auto& bank = model.prototypes();
  if (!bank.projected()) throw prp::UnprojectedModelError("tag mass needs projected prototypes");
  const auto index = index_by_id(train_set);
  TagMassReport report;
  const std::size_t classes = model.architecture().num_classes;
  std::vector<double> class_sum(classes, 0.0);
  std::vector<std::size_t> class_count(classes, 0);
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const auto it = index.find(bank.source[m]->image_id);
    if (it == index.end()) {
      throw std::invalid_argument("tag_mass_report: source image of prototype " + std::to_string(m) +
                                  " not in training set");
    }
    const ImageRecord& src = *it->second;
    if (src.tag_mask.empty()) throw std::invalid_argument("tag_mass_report: source image has no tag mask");
    const auto map = prp::prp_map(model, src.pixels, m, config, src.id);
    const double mass = tag_relevance_mass(map, src.tag_mask);
    report.per_prototype.push_back(mass);
    report.source_hospital.push_back(static_cast<int>(src.hospital));
    const auto cls = static_cast<std::size_t>(bank.owner_class[m]);
    class_sum[cls] += mass;
    ++class_count[cls];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    report.per_class_mean.push_back(class_count[c] ? class_sum[c] / class_count[c] : 0.0);
  }
  report.overall_mean = report.per_prototype.empty()
                            ? 0.0
                            : std::accumulate(report.per_prototype.begin(), report.per_prototype.end(), 0.0) /
                                  static_cast<double>(report.per_prototype.size());
  return report;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace protoaudit::metrics
