#pragma once

namespace ugac {

inline constexpr const char* kVersion = "0.1.0";

} // namespace ugac
