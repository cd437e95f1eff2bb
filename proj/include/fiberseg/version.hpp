#pragma once

namespace fiberseg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fiberseg
