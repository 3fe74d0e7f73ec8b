#pragma once

namespace tor {

inline constexpr const char* engineVersion = "0.1.0";

}  // namespace tor
