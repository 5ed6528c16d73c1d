#pragma once

namespace graftbench {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace graftbench
