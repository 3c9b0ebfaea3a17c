#include "nvmtree/types.hpp"

namespace nvmtree {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::alignment: return "alignment error";
    case Errc::range: return "range error";
    case Errc::plan: return "plan error";
    case Errc::empty_stats: return "empty-stats error";
    case Errc::domain: return "domain error";
    case Errc::duplicate_key: return "duplicate-key error";
    case Errc::not_found: return "not-found error";
    case Errc::corruption: return "corruption error";
    case Errc::out_of_space: return "out-of-space error";
    case Errc::parse: return "parse error";
    case Errc::config: return "config error";
    case Errc::invalid_argument: return "invalid argument";
  }
  return "unknown error";
}

}  // namespace nvmtree
