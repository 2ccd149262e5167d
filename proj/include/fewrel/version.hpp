#pragma once

namespace fewrel {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace fewrel
