#pragma once

namespace cellinr {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cellinr
