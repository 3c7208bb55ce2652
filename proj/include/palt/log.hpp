#pragma once

#include <cstdint>
#include <string_view>

namespace palt {

/// Writes a warning line to stderr and bumps the process-wide warning counter.
void log_warning(std::string_view message);

/// Number of warnings emitted so far; tests use it to observe warnings.
std::int64_t warning_count();

/// Suppresses stderr output of warnings (they are still counted).
void set_warnings_quiet(bool quiet);

}  // namespace palt
