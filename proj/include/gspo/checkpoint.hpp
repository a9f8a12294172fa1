#pragma once

#include <filesystem>
#include <iosfwd>

#include "gspo/policy.hpp"

namespace gspo {

/**
 * Policy checkpoint, plain text:
 *
 *   gspo-policy 1
 *   query_count <Q> vocab_size <V>
 *   <V logits>            one line per (query, prev) row, Q*(V+1) lines,
 *   ...                   query-major, prev 0..V-1 then the BOS row
 *
 * Logits use the shortest round-trip decimal form, so save/load is bit-exact.
 */
void write_checkpoint(std::ostream& out, const PolicyParams& params);
PolicyParams read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gspo
