#include "protoaudit/sourcebench/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace protoaudit::sourcebench {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw FormatError("manifest line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("manifest: cannot open " + path.string());
  const std::filesystem::path base = path.parent_path();
  Dataset records;
  std::set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
      if (line != kManifestHeader) {
        throw FormatError("manifest: header must be '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, line_no);
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    if (fields.size() != 5) {
      throw FormatError(where + "expected 5 columns, found " + std::to_string(fields.size()));
    }
    ImageRecord rec;
    try {
      std::size_t pos = 0;
      rec.id = std::stoull(fields[0], &pos);
      if (pos != fields[0].size()) throw std::invalid_argument("id");
      rec.label = class_from_string(fields[2]);
      rec.hospital = hospital_from_string(fields[3]);
      rec.split = split_from_string(fields[4]);
    } catch (const std::exception& e) {
      throw FormatError(where + "malformed row (" + e.what() + ")");
    }
    if (!seen.insert(rec.id).second) throw FormatError(where + "duplicate id " + fields[0]);
    const std::filesystem::path image_path = base / fields[1];
    if (!std::filesystem::exists(image_path)) {
      throw FormatError(where + "missing image file " + image_path.string());
    }
    const GrayImage img = read_pgm(image_path);
    if (img.width != kImageSize || img.height != kImageSize) {
      throw FormatError(where + "image " + image_path.string() + " is " + std::to_string(img.width) +
                        "x" + std::to_string(img.height) + ", expected 64x64");
    }
    rec.pixels = to_tensor(img);
    records.push_back(std::move(rec));
  }
  // A zero-byte file counts as an empty manifest.
  return records;
}

std::filesystem::path write_manifest(const Dataset& records, const std::filesystem::path& dir,
                                     Mode mode) {
  std::filesystem::create_directories(dir / "images");
  const std::filesystem::path manifest = dir / "manifest.csv";
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("manifest: cannot write " + manifest.string());
  out << kManifestHeader << '\n';
  for (const auto& rec : records) {
    const std::string file = "images/" + std::to_string(rec.id) + ".pgm";
    write_pgm(dir / file, rec.pixels);
    out << rec.id << ',' << csv_field(file) << ',' << class_name(rec.label, mode) << ','
        << to_string(rec.hospital) << ',' << to_string(rec.split) << '\n';
  }
  if (!out) throw std::runtime_error("manifest: write failed for " + manifest.string());
  return manifest;
}

}  // namespace protoaudit::sourcebench
