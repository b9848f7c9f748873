#pragma once

#include <iosfwd>

namespace xtalk {

/// moc-xtalk gen|train|bench|gradcheck|inspect [--config PATH] [--seed N]
/// [--jobs N] [--out DIR]. Exit codes: 0 ok, 1 check failure or internal
/// error, 2 configuration error, 3 missing or unreadable file. Errors are
/// reported on `err` as one JSON object per line.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xtalk
