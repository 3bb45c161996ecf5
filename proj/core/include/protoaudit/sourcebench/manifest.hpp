#pragma once

#include <filesystem>

#include "protoaudit/sourcebench/pgm.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace protoaudit::sourcebench {

inline constexpr const char* kManifestHeader = "id,file,class,hospital,split";

/// Loads a CSV manifest with header `id,file,class,hospital,split`. Image
/// paths are relative to the manifest's directory; images must be 64x64
/// grayscale PGM. Masks of loaded records are empty.
Dataset load_manifest(const std::filesystem::path& path);

/// Writes `<dir>/images/<id>.pgm` for every record plus `<dir>/manifest.csv`.
/// Returns the manifest path.
std::filesystem::path write_manifest(const Dataset& records, const std::filesystem::path& dir,
                                     Mode mode);

}  // namespace protoaudit::sourcebench
