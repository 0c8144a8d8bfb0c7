#pragma once

#include <cstdint>
#include <string>

#include "datacl/trainer.hpp"

namespace datacl {

// Flat key = value text; '#' starts a comment. Unknown keys, duplicate keys
// and out-of-range values are rejected with messages naming the offender.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical sorted rendering of the semantic keys (operational keys such as
// stop_after_task and the gradcheck hook excluded). Two configs that hash
// alike resume each other's checkpoints.
std::string canonical_config_text(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

// Commented example shipped with the tool.
std::string example_config_text();

}  // namespace datacl
