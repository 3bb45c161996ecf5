#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "protoaudit/audit/checkpoint.hpp"
#include "protoaudit/audit/config.hpp"
#include "protoaudit/audit/report.hpp"
#include "protoaudit/audit/sweep.hpp"
#include "protoaudit/metrics/metrics.hpp"
#include "protoaudit/prp/relevance.hpp"
#include "protoaudit/sourcebench/generator.hpp"
#include "protoaudit/sourcebench/manifest.hpp"
#include "protoaudit/sourcebench/mixer.hpp"

namespace fs = std::filesystem;
using namespace protoaudit;

namespace {

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string config_file;
  std::string out = "out";
  std::string mode;
  std::string preset;
  std::string manifest;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--config", o.config_file, "Flat key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--mode", o.mode, "pneumonia | abnormality");
  cmd->add_option("--preset", o.preset, "Pool size preset")->check(CLI::IsMember({"reference-sizes"}));
  cmd->add_option("--manifest", o.manifest, "Read images from a manifest instead of generating them")
      ->check(CLI::ExistingFile);
}

audit::AuditConfig resolve_config(const CommonOptions& o) {
  audit::AuditConfig c = o.config_file.empty() ? audit::AuditConfig{} : audit::load_config(o.config_file);
  if (o.preset == "reference-sizes") {
    const auto sizes = sourcebench::GeneratorConfig::reference_sizes();
    c.generator.pool_size = sizes.pool_size;
    c.generator.val_size = sizes.val_size;
    c.generator.test_size = sizes.test_size;
  }
  if (!o.mode.empty()) c.generator.mode = sourcebench::mode_from_string(o.mode);
  if (o.seed) c.set_root_seed(*o.seed);
  c.validate();
  return c;
}

sourcebench::Pools resolve_pools(const CommonOptions& o, const audit::AuditConfig& c) {
  if (o.manifest.empty()) return sourcebench::generate_pools(c.generator);
  return sourcebench::Pools::from_records(c.generator, sourcebench::load_manifest(o.manifest));
}

void print_accuracies(const protonet::ProtoNetModel& model, const sourcebench::Pools& pools) {
  for (auto v : sourcebench::all_test_variants()) {
    std::printf("%-11s %.4f\n", sourcebench::to_string(v).c_str(),
                metrics::accuracy(model, sourcebench::build_test(v, pools)));
  }
}

const sourcebench::ImageRecord& find_image(const sourcebench::Pools& pools, std::uint64_t id,
                                           sourcebench::Dataset& storage) {
  storage = pools.flatten();
  for (const auto& r : storage) {
    if (r.id == id) return r;
  }
  throw std::invalid_argument("no image with id " + std::to_string(id));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-imbalance audit of a prototype classifier"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* gen = app.add_subcommand("gen", "Generate the image pools as PGM files plus manifest.csv");
  add_common(gen, common);

  int train_x = 50;
  auto* train = app.add_subcommand("train", "Train one xH1-yH2 model and save its checkpoint");
  add_common(train, common);
  train->add_option("--x", train_x, "Percentage of positive training images from H1")
      ->required()
      ->check(CLI::Range(0, 100));

  std::string test_name, checkpoint_path;
  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a controlled test set");
  add_common(eval, common);
  eval->add_option("--test", test_name, "Test-100H1 | Test-100H2 | Test-50-50")->required();
  eval->add_option("--checkpoint", checkpoint_path, "PRP1 checkpoint")->required()->check(CLI::ExistingFile);

  std::size_t prototype = 0;
  std::uint64_t image_id = 0;
  std::string method_name = "both";
  auto* explain = app.add_subcommand("explain", "Heatmap of one prototype on one image");
  add_common(explain, common);
  explain->add_option("--prototype", prototype, "Prototype index")->required();
  explain->add_option("--image", image_id, "Image id")->required();
  explain->add_option("--checkpoint", checkpoint_path, "PRP1 checkpoint")->required()->check(CLI::ExistingFile);
  explain->add_option("--method", method_name, "PRP | UPSAMPLE | both")
      ->check(CLI::IsMember({"PRP", "UPSAMPLE", "both"}));

  std::string points;
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every composition, then write the report");
  add_common(sweep, common);
  sweep->add_option("--points", points, "Comma separated subset of x values, e.g. 0,50,100");

  auto* report = app.add_subcommand("report", "Re-emit curves.csv from report.json and print a summary");
  add_common(report, common);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = resolve_config(common);
    const fs::path out = common.out;

    if (*gen) {
      const auto pools = sourcebench::generate_pools(config.generator);
      const auto manifest = sourcebench::write_manifest(pools.flatten(), out, config.generator.mode);
      std::printf("wrote %zu images, manifest %s (seed %llu)\n", pools.total(), manifest.string().c_str(),
                  static_cast<unsigned long long>(config.root_seed));
    } else if (*train) {
      const auto pools = resolve_pools(common, config);
      const auto trained = audit::train_for_point(train_x, pools, config, [](const trainer::EpochSnapshot& s) {
        std::printf("%s epoch %zu  val %.4f  ce %.4f%s\n", trainer::to_string(s.phase).c_str(), s.epoch,
                    s.val_accuracy, s.train_loss.cross_entropy, s.projected ? "  (projected)" : "");
        std::fflush(stdout);
      });
      const auto& best = trained.outcome.best();
      const std::uint64_t epoch =
          best.phase == trainer::Phase::kJoint ? best.epoch : config.train.joint_epochs + best.epoch;
      const fs::path path = out / "model.prp1";
      audit::save_checkpoint(trained.model, {train_x, config.root_seed, epoch}, path);
      std::printf("selected %s epoch %zu (val %.4f), saved %s\n", trainer::to_string(best.phase).c_str(),
                  best.epoch, best.val_accuracy, path.string().c_str());
      print_accuracies(trained.model, pools);
    } else if (*eval) {
      const auto ck = audit::load_checkpoint(checkpoint_path);
      const auto pools = resolve_pools(common, config);
      const auto variant = sourcebench::test_variant_from_string(test_name);
      std::printf("%s %.4f\n", sourcebench::to_string(variant).c_str(),
                  metrics::accuracy(ck.model, sourcebench::build_test(variant, pools)));
    } else if (*explain) {
      const auto ck = audit::load_checkpoint(checkpoint_path);
      if (prototype >= ck.model.prototypes().size()) throw std::invalid_argument("prototype index out of range");
      const auto pools = resolve_pools(common, config);
      sourcebench::Dataset storage;
      const auto& rec = find_image(pools, image_id, storage);
      for (auto method : {prp::Method::kPrp, prp::Method::kUpsample}) {
        if (method_name != "both" && method_name != prp::to_string(method)) continue;
        const auto map = prp::explain(ck.model, rec.pixels, prototype, method, {}, rec.id);
        const fs::path path =
            out / ("explain_p" + std::to_string(prototype) + "_" + std::to_string(rec.id) + "_" + prp::to_string(method) + ".pgm");
        audit::export_heatmap(map, rec.pixels, path);
        double mass = 0.0;
        if (!rec.tag_mask.empty()) mass = metrics::tag_relevance_mass(map, rec.tag_mask);
        std::printf("%s map sum %.4f  tag mass %.4f  -> %s\n", prp::to_string(method).c_str(),
                    numerics::sum(map.values), mass, path.string().c_str());
      }
    } else if (*sweep) {
      auto c = config;
      if (!points.empty()) c.points = audit::parse_points(points);
      c.validate();
      const auto progress = [](const std::string& msg) {
        std::printf("%s\n", msg.c_str());
        std::fflush(stdout);
      };
      const auto r = common.manifest.empty() ? audit::run_sweep(c, out, progress)
                                             : audit::run_sweep(c, resolve_pools(common, c), out, progress);
      audit::emit_report(r, out);
      std::printf("report written to %s\n", (out / "report.json").string().c_str());
    } else if (*report) {
      const auto r = audit::load_report(out / "report.json");
      audit::emit_report(r, out);
      std::printf("root seed %llu\n%5s %10s %10s %10s %9s\n", static_cast<unsigned long long>(r.root_seed), "x",
                  "100H1", "100H2", "50-50", "tag mass");
      for (const auto& e : r.entries) {
        if (e.error) {
          std::printf("%5d failed: %s\n", e.x, e.error->c_str());
          continue;
        }
        std::printf("%5d %10.4f %10.4f %10.4f %9.4f\n", e.x, e.accuracy[0], e.accuracy[1], e.accuracy[2],
                    e.majority_tag_mass);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
