#pragma once

namespace siamcd {

inline constexpr const char* kToolName = "siamcd";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace siamcd
