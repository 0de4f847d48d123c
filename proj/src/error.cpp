#include "parnet/error.hpp"

namespace parnet {

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::Config:
      return 2;
    case ErrorCategory::Data:
      return 3;
    case ErrorCategory::Io:
      return 4;
    case ErrorCategory::Internal:
      break;
  }
  return 1;
}

}  // namespace parnet
