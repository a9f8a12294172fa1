#include "gspo/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "gspo/errors.hpp"
#include "gspo/numfmt.hpp"

namespace gspo {

namespace {
constexpr const char* kMagic = "gspo-policy";
constexpr int kVersion = 1;
}  // namespace

void write_checkpoint(std::ostream& out, const PolicyParams& params) {
  const auto& table = params.logits();
  out << kMagic << ' ' << kVersion << '\n';
  out << "query_count " << table.query_count() << " vocab_size " << table.vocab_size() << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto row = table.row_at(r);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out << ' ';
      out << format_double(row[k]);
    }
    out << '\n';
  }
}

PolicyParams read_checkpoint(std::istream& in) {
  std::string magic, qkey, vkey;
  int version = 0, queries = 0, vocab = 0;
  if (!(in >> magic >> version) || magic != kMagic || version != kVersion)
    throw ConfigError("not a gspo-policy v1 checkpoint");
  if (!(in >> qkey >> queries >> vkey >> vocab) || qkey != "query_count" || vkey != "vocab_size")
    throw ConfigError("malformed checkpoint header");
  if (queries < 1 || vocab < 2) throw ConfigError("checkpoint header has invalid shape");
  LogitTable table(queries, vocab);
  std::string tok;
  for (double& v : table.values()) {
    if (!(in >> tok)) throw ConfigError("checkpoint truncated");
    try {
      v = parse_double(tok);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("checkpoint: ") + e.what());
    }
  }
  if (in >> tok) throw ConfigError("checkpoint has trailing data");
  try {
    return PolicyParams(std::move(table));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace gspo
