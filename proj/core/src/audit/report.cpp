#include "protoaudit/audit/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "protoaudit/audit/config.hpp"
#include "protoaudit/sourcebench/pgm.hpp"

namespace protoaudit::audit {

namespace {

using nlohmann::json;

json scores_json(const std::optional<MethodScores>& s) {
  if (!s) return nullptr;
  return {{"average_drop", s->average_drop}, {"average_increase", s->average_increase}};
}

std::optional<MethodScores> scores_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return MethodScores{j.at("average_drop").get<double>(), j.at("average_increase").get<double>()};
}

json entry_json(const SweepEntry& e) {
  json hist = json::array();
  for (const auto& row : e.source_histogram) hist.push_back({row[0], row[1]});
  return {
      {"x", e.x},
      {"mix", e.mix},
      {"error", e.error ? json(*e.error) : json(nullptr)},
      {"checkpoint", e.checkpoint},
      {"selected", {{"phase", e.selected_phase}, {"epoch", e.selected_epoch}, {"val_accuracy", e.val_accuracy}}},
      {"projection_events", e.projection_events},
      {"accuracy", {{"Test-100H1", e.accuracy[0]}, {"Test-100H2", e.accuracy[1]}, {"Test-50-50", e.accuracy[2]}}},
      {"faithfulness", {{"test", e.faithfulness_test}, {"PRP", scores_json(e.prp)}, {"UPSAMPLE", scores_json(e.upsample)}}},
      {"tag_mass",
       {{"per_prototype", e.tag_mass},
        {"owner_class", e.owner_class},
        {"source_hospital", e.source_hospital},
        {"per_class_mean", e.tag_mass_class_mean},
        {"mean", e.tag_mass_mean},
        {"majority_source_mean", e.majority_tag_mass}}},
      {"source_histogram", hist},
  };
}

SweepEntry entry_from(const json& j) {
  SweepEntry e;
  e.x = j.at("x").get<int>();
  e.mix = j.at("mix").get<std::string>();
  if (!j.at("error").is_null()) e.error = j.at("error").get<std::string>();
  e.checkpoint = j.at("checkpoint").get<std::string>();
  const auto& sel = j.at("selected");
  e.selected_phase = sel.at("phase").get<std::string>();
  e.selected_epoch = sel.at("epoch").get<std::size_t>();
  e.val_accuracy = sel.at("val_accuracy").get<double>();
  e.projection_events = j.at("projection_events").get<std::size_t>();
  const auto& acc = j.at("accuracy");
  e.accuracy = {acc.at("Test-100H1").get<double>(), acc.at("Test-100H2").get<double>(),
                acc.at("Test-50-50").get<double>()};
  const auto& f = j.at("faithfulness");
  e.faithfulness_test = f.at("test").get<std::string>();
  e.prp = scores_from(f.at("PRP"));
  e.upsample = scores_from(f.at("UPSAMPLE"));
  const auto& t = j.at("tag_mass");
  e.tag_mass = t.at("per_prototype").get<std::vector<double>>();
  e.owner_class = t.at("owner_class").get<std::vector<int>>();
  e.source_hospital = t.at("source_hospital").get<std::vector<int>>();
  e.tag_mass_class_mean = t.at("per_class_mean").get<std::vector<double>>();
  e.tag_mass_mean = t.at("mean").get<double>();
  e.majority_tag_mass = t.at("majority_source_mean").get<double>();
  for (const auto& row : j.at("source_histogram")) {
    e.source_histogram.push_back({row.at(0).get<std::size_t>(), row.at(1).get<std::size_t>()});
  }
  return e;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("report: cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("report: write failed for " + path.string());
}

}  // namespace

std::string report_json(const SweepReport& report) {
  json entries = json::array();
  for (const auto& e : report.entries) entries.push_back(entry_json(e));
  const json doc = {{"root_seed", report.root_seed}, {"config", report.config}, {"entries", entries}};
  return doc.dump(2) + "\n";
}

SweepReport report_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    SweepReport r;
    r.root_seed = doc.at("root_seed").get<std::uint64_t>();
    r.config = doc.at("config").get<std::map<std::string, std::string>>();
    for (const auto& e : doc.at("entries")) r.entries.push_back(entry_from(e));
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
}

std::string curves_csv(const SweepReport& report) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << kCurvesHeader << '\n';
  for (const auto& e : report.entries) {
    os << e.x;
    for (double a : e.accuracy) {
      if (e.error) {
        os << ',';
      } else {
        os << ',' << a;
      }
    }
    os << '\n';
  }
  return os.str();
}

void emit_report(const SweepReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_json(report));
  write_text(dir / "curves.csv", curves_csv(report));
}

SweepReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("report: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::vector<std::uint8_t> heatmap_panels(const prp::RelevanceMap& map, const numerics::Tensor& image) {
  const std::size_t h = sourcebench::kImageSize, w = sourcebench::kImageSize;
  if (map.values.size() != h * w || image.size() != h * w) {
    throw numerics::ShapeError("heatmap: map and image must both be 64x64");
  }
  double peak = 0.0;
  for (float v : map.values.data()) peak = std::max(peak, static_cast<double>(v));
  std::vector<std::uint8_t> px(3 * w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const std::uint8_t a = sourcebench::quantize(image[i]);
      const double v = peak > 0.0 ? std::max(0.0, static_cast<double>(map.values[i])) / peak : 0.0;
      const auto b = static_cast<std::uint8_t>(std::lround(v * 255.0));
      const auto c = static_cast<std::uint8_t>(std::lround(0.5 * a + 0.5 * b));
      px[y * 3 * w + x] = a;
      px[y * 3 * w + w + x] = b;
      px[y * 3 * w + 2 * w + x] = c;
    }
  }
  return px;
}

void export_heatmap(const prp::RelevanceMap& map, const numerics::Tensor& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  sourcebench::write_pgm(path, 3 * sourcebench::kImageSize, sourcebench::kImageSize, heatmap_panels(map, image));
}

}  // namespace protoaudit::audit
