#pragma once

#include <cstddef>
#include <functional>
#include <string>

namespace mmc {

// Warnings go to stderr unless a sink is installed.
using WarningSink = std::function<void(const std::string&)>;

void warn(const std::string& message);
void set_warning_sink(WarningSink sink);
std::size_t warning_count();

}  // namespace mmc
