#pragma once

namespace ecofuse {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ecofuse
