#pragma once

namespace mira {

inline constexpr const char* kToolVersion = "mira 0.1.0";

}  // namespace mira
