#pragma once

namespace sgdlab {

inline constexpr const char* kVersion = "sgdlab 0.1.0";
inline constexpr int kSummarySchemaVersion = 1;

}  // namespace sgdlab
