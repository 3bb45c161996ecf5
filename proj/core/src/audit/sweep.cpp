#include "protoaudit/audit/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "protoaudit/audit/checkpoint.hpp"
#include "protoaudit/audit/report.hpp"
#include "protoaudit/prp/relevance.hpp"

namespace protoaudit::audit {

using sourcebench::Hospital;
using sourcebench::TestVariant;

const SweepEntry* SweepReport::find(int x) const {
  for (const auto& e : entries) {
    if (e.x == x) return &e;
  }
  return nullptr;
}

Hospital majority_hospital(int x, int label) {
  const int h1_share = label == sourcebench::kPositive ? x : 100 - x;
  return h1_share >= 50 ? Hospital::kH1 : Hospital::kH2;
}

double majority_source_tag_mass(int x, std::span<const double> tag_mass, std::span<const int> owner_class,
                                std::span<const int> source_hospital) {
  if (tag_mass.size() != owner_class.size() || tag_mass.size() != source_hospital.size()) {
    throw std::invalid_argument("majority_source_tag_mass: length mismatch");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t m = 0; m < tag_mass.size(); ++m) {
    const bool keep = x == 50 || static_cast<int>(majority_hospital(x, owner_class[m])) == source_hospital[m];
    if (!keep) continue;
    sum += tag_mass[m];
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TestVariant faithfulness_variant(int x) { return x >= 50 ? TestVariant::kTest100H1 : TestVariant::kTest100H2; }

TrainedModel train_for_point(int x, const sourcebench::Pools& pools, const AuditConfig& config,
                             const trainer::EpochCallback& on_epoch) {
  const sourcebench::MixSpec spec(x);
  const auto train = sourcebench::mix_train(spec, pools);
  const auto val = sourcebench::mix_validation(spec, pools);
  auto model = protonet::ProtoNetModel::create({}, config.root_seed);
  TrainedModel out;
  out.outcome = trainer::train_protonet(model, train, val, config.train, on_epoch);
  out.model = out.outcome.best().model;
  return out;
}

SweepEntry evaluate_point(int x, const protonet::ProtoNetModel& model, const sourcebench::Pools& pools,
                          const AuditConfig& config) {
  SweepEntry e;
  e.x = x;
  e.mix = sourcebench::MixSpec(x).name();
  const auto variants = sourcebench::all_test_variants();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    e.accuracy[i] = metrics::accuracy(model, sourcebench::build_test(variants[i], pools));
  }
  const TestVariant fv = faithfulness_variant(x);
  e.faithfulness_test = sourcebench::to_string(fv);
  if (config.faithfulness) {
    const auto test = sourcebench::build_test(fv, pools);
    const auto seed = numerics::derive_seed(config.root_seed, {static_cast<std::uint64_t>(x)});
    const auto p = metrics::faithfulness(model, test, prp::Method::kPrp, seed);
    const auto u = metrics::faithfulness(model, test, prp::Method::kUpsample, seed);
    e.prp = MethodScores{p.average_drop, p.average_increase};
    e.upsample = MethodScores{u.average_drop, u.average_increase};
  }
  const auto train = sourcebench::mix_train(sourcebench::MixSpec(x), pools);
  e.owner_class = model.prototypes().owner_class;
  e.source_histogram = metrics::prototype_source_histogram(model, train).counts;
  const bool masks_known = std::all_of(train.begin(), train.end(), [](const auto& r) { return !r.tag_mask.empty(); });
  if (!masks_known) return e;
  const auto tm = metrics::tag_mass_report(model, train);
  e.tag_mass = tm.per_prototype;
  e.source_hospital = tm.source_hospital;
  e.tag_mass_class_mean = tm.per_class_mean;
  e.tag_mass_mean = tm.overall_mean;
  e.majority_tag_mass = majority_source_tag_mass(x, e.tag_mass, e.owner_class, e.source_hospital);
  return e;
}

void export_model_heatmaps(const protonet::ProtoNetModel& model, std::span<const sourcebench::ImageRecord> images,
                           std::size_t count, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < std::min(count, images.size()); ++i) {
    const auto& rec = images[i];
    const auto fwd = model.forward(rec.pixels);
    const auto protos = model.prototypes().prototypes_of(fwd.predicted);
    const std::size_t m = *std::max_element(protos.begin(), protos.end(),
                                            [&](std::size_t a, std::size_t b) { return fwd.scores[a] < fwd.scores[b]; });
    const std::string stem = std::to_string(rec.id) + "_p" + std::to_string(m);
    for (auto method : {prp::Method::kPrp, prp::Method::kUpsample}) {
      const auto map = prp::explain(model, rec.pixels, m, method, {}, rec.id);
      export_heatmap(map, rec.pixels, dir / (stem + "_" + prp::to_string(method) + ".pgm"));
    }
  }
}

namespace {

std::string point_dir(int x) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "x_%03d", x);
  return buf;
}

}  // namespace

SweepReport run_sweep(const AuditConfig& config, const std::filesystem::path& out_dir,
                      const SweepProgress& progress) {
  config.validate();
  if (progress) progress("generating pools");
  return run_sweep(config, sourcebench::generate_pools(config.generator), out_dir, progress);
}

SweepReport run_sweep(const AuditConfig& config, const sourcebench::Pools& pools,
                      const std::filesystem::path& out_dir, const SweepProgress& progress) {
  config.validate();
  SweepReport report;
  report.root_seed = config.root_seed;
  report.config = config.to_map();
  const auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  for (int x : config.points) {
    SweepEntry entry;
    try {
      say("training " + sourcebench::MixSpec(x).name());
      const auto trained = train_for_point(x, pools, config);
      const auto& best = trained.outcome.best();
      entry = evaluate_point(x, trained.model, pools, config);
      entry.selected_phase = trainer::to_string(best.phase);
      entry.selected_epoch = best.epoch;
      entry.val_accuracy = best.val_accuracy;
      entry.projection_events = trained.outcome.projection_events;
      if (!out_dir.empty()) {
        const std::string rel = point_dir(x) + "/model.prp1";
        const std::uint64_t epoch =
            best.phase == trainer::Phase::kJoint ? best.epoch : config.train.joint_epochs + best.epoch;
        save_checkpoint(trained.model, {x, config.root_seed, epoch}, out_dir / rel);
        entry.checkpoint = rel;
        export_model_heatmaps(trained.model, sourcebench::build_test(TestVariant::kTest5050, pools),
                              config.heatmaps_per_model, out_dir / point_dir(x) / "heatmaps");
      }
      char line[160];
      std::snprintf(line, sizeof line, "%s: 100H1 %.3f  100H2 %.3f  50-50 %.3f  tag mass %.3f",
                    entry.mix.c_str(), entry.accuracy[0], entry.accuracy[1], entry.accuracy[2],
                    entry.majority_tag_mass);
      say(line);
    } catch (const std::exception& ex) {
      entry = SweepEntry{};
      entry.x = x;
      entry.mix = sourcebench::MixSpec(x).name();
      entry.error = ex.what();
      say(entry.mix + " failed: " + ex.what());
    }
    report.entries.push_back(std::move(entry));
    if (!out_dir.empty()) emit_report(report, out_dir);
  }
  return report;
}

}  // namespace protoaudit::audit
