#pragma once

namespace rflab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rflab
