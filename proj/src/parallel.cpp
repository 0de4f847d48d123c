#include "parnet/parallel.hpp"

#include <cstdlib>
#include <string>

namespace parnet {

int worker_count(int requested) {
  if (const char* env = std::getenv("PARNET_THREADS"); env != nullptr && *env != '\0') {
    try {
      const int value = std::stoi(env);
      if (value >= 1) return value;
    } catch (const std::exception&) {
    }
  }
  return requested < 1 ? 1 : requested;
}

}  // namespace parnet
