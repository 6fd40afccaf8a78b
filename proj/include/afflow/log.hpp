#pragma once

#include <string_view>

namespace afflow::logging {

void info(std::string_view msg);
void warn(std::string_view msg);

// Suppresses info-level output (warnings still print).
void set_quiet(bool quiet);

}  // namespace afflow::logging
