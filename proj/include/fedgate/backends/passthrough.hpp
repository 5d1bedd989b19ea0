#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "fedgate/backends/profile.hpp"

namespace fedgate::backends {

struct PassthroughResponse {
  int status = 0;
  std::string body;
  std::string content_type;
  int events = 0;  // SSE data events relayed (streaming only)
};

using SseDataSink = std::function<void(std::string_view data)>;

/// Forwards an OpenAI-format request body to `profile.base_url + path`.
///
/// Non-streaming: returns the upstream body verbatim. Streaming (`on_event`
/// set): every `data:` payload except the `[DONE]` terminator is handed to
/// `on_event` in arrival order.
///
/// Throws Error(kBackendUnavailable) when the upstream cannot be reached and
/// Error(kUpstreamError) carrying the upstream status for non-2xx replies.
PassthroughResponse passthrough_call(const BackendProfile& profile, const std::string& path,
                                     const std::string& body, const SseDataSink& on_event = {});

/// Incremental `text/event-stream` parser. Feed arbitrary byte chunks; each
/// complete event's data lines are joined with '\n' and emitted.
class SseParser {
 public:
  explicit SseParser(SseDataSink sink) : sink_(std::move(sink)) {}
  void feed(std::string_view bytes);
  void finish();
  bool saw_done() const { return saw_done_; }
  int events() const { return events_; }

 private:
  void line(std::string_view l);

  SseDataSink sink_;
  std::string buffer_;
  std::string data_;
  bool has_data_ = false;
  bool saw_done_ = false;
  int events_ = 0;
};

}  // namespace fedgate::backends
