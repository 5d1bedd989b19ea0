#pragma once

#include <string>

#include "fedgate/sim/time.hpp"

namespace fedgate::backends {

enum class BackendKind { kMock, kPassthrough };

struct BackendProfile {
  BackendKind kind = BackendKind::kMock;
  // Output tokens/s one instance emits when every parallel slot is busy.
  double service_rate = 1000.0;
  Duration per_request_overhead{0};
  // Output length when neither max_tokens nor a target length is given.
  int default_output_tokens = 128;
  std::string base_url;  // passthrough only
  Duration timeout = std::chrono::seconds(300);

  void validate() const;
};

}  // namespace fedgate::backends
