#include "lead/query.hpp"

#include <cstdio>

namespace lead {

std::string to_string(QueryKind kind) {
  switch (kind) {
    case QueryKind::Lookup:
      return "lookup";
    case QueryKind::Range:
      return "range";
    case QueryKind::Put:
      return "put";
  }
  return "?";
}

void write_csv_header(std::ostream& out) { out << "kind,start_ms,complete_ms,latency_ms,messages,hops,success\n"; }

void write_csv_row(std::ostream& out, const QueryRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%.3f,%.3f,%.3f,%llu,%llu,%d\n", to_string(r.kind).c_str(), r.start, r.complete,
                r.latency(), static_cast<unsigned long long>(r.messages), static_cast<unsigned long long>(r.hops),
                r.success ? 1 : 0);
  out << buf;
}

}  // namespace lead
