#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lead/common.hpp"

namespace lead {

enum class QueryKind : std::uint8_t { Lookup, Range, Put };

std::string to_string(QueryKind kind);

struct QueryRecord {
  std::uint64_t id = 0;
  QueryKind kind = QueryKind::Lookup;
  SimTime start = 0;
  SimTime complete = 0;
  std::uint64_t messages = 0;
  std::uint64_t hops = 0;
  bool success = false;
  /// Range query returned fewer than n keys because the data ran out.
  bool short_count = false;
  /// Range query gave up with partial results.
  bool partial = false;
  Key key = 0;
  std::size_t requested = 0;
  std::uint64_t owner = 0;           // Vid of the peer that resolved the id
  std::vector<Key> results;          // range results, ascending
  std::optional<Value> value;        // lookup result
  std::vector<std::uint64_t> trace;  // Vids visited while routing

  SimTime latency() const noexcept { return complete - start; }
};

using QueryCallback = std::function<void(const QueryRecord&)>;

/// kind,start_ms,complete_ms,latency_ms,messages,hops,success
void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const QueryRecord& r);

}  // namespace lead
