#include "videoscan/error.hpp"

namespace videoscan {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kDegenerateRow: return "degenerate row";
    case ErrorCode::kDegenerateVector: return "degenerate vector";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kCapacity: return "capacity error";
    case ErrorCode::kState: return "state error";
    case ErrorCode::kLayout: return "layout error";
    case ErrorCode::kOrdering: return "ordering error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kLength: return "length error";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kSelection: return "selection error";
    case ErrorCode::kOracle: return "oracle error";
    case ErrorCode::kSpec: return "spec error";
  }
  return "error";
}

}  // namespace videoscan
