#pragma once

#include <string_view>

namespace qlink {

inline constexpr std::string_view kToolName = "qlink";
inline constexpr std::string_view kToolVersion = "0.1.0";

}  // namespace qlink
