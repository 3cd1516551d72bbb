#pragma once

namespace rtb::detail {

extern const char* const kDefaultSumPrompt;
extern const char* const kDefaultInsPrompt;
extern const char* const kDefaultActPrompt;
extern const char* const kDefaultRefPrompt;

}  // namespace rtb::detail
