#pragma once

#include "sacc/sacc.hpp"

#include <filesystem>

namespace sacc {

inline constexpr int kCheckpointLayoutVersion = 1;

// JSON record {layout_version, F, D, Wq, bq, Wk, bk, Wv, bv}; matrices are
// row-major flat arrays. Doubles round-trip exactly.
void save_checkpoint(const SaccParams<double>& params, const std::filesystem::path& path);
SaccParams<double> load_checkpoint(const std::filesystem::path& path);

}  // namespace sacc
