#pragma once

namespace affinity {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace affinity
