#pragma once

namespace cspace {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cspace
