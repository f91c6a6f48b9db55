#pragma once

namespace aerolabel {

inline constexpr const char* kToolName = "aerolabel";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace aerolabel
