#include "fedgate/backends/passthrough.hpp"

#include <httplib.h>

#include "fedgate/errors.hpp"

namespace fedgate::backends {

void SseParser::feed(std::string_view bytes) {
  buffer_.append(bytes);
  std::size_t start = 0;
  for (;;) {
    const auto nl = buffer_.find('\n', start);
    if (nl == std::string::npos) break;
    std::string_view l(buffer_.data() + start, nl - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    line(l);
    start = nl + 1;
  }
  buffer_.erase(0, start);
}

void SseParser::finish() {
  if (!buffer_.empty()) {
    line(buffer_);
    buffer_.clear();
  }
  line("");
}

void SseParser::line(std::string_view l) {
  if (l.empty()) {
    if (!has_data_) return;
    has_data_ = false;
    std::string data;
    data.swap(data_);
    if (data == "[DONE]") {
      saw_done_ = true;
      return;
    }
    ++events_;
    if (sink_) sink_(data);
    return;
  }
  if (l.front() == ':') return;  // comment
  if (l.rfind("data:", 0) == 0) {
    auto v = l.substr(5);
    if (!v.empty() && v.front() == ' ') v.remove_prefix(1);
    if (has_data_) data_.push_back('\n');
    data_.append(v);
    has_data_ = true;
  }
}

PassthroughResponse passthrough_call(const BackendProfile& profile, const std::string& path,
                                     const std::string& body, const SseDataSink& on_event) {
  if (profile.base_url.empty()) throw Error(ErrorCode::kBackendUnavailable, "passthrough base_url not configured");
  httplib::Client client(profile.base_url);
  const auto secs = std::max<std::int64_t>(
      1, std::chrono::duration_cast<std::chrono::seconds>(profile.timeout).count());
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  client.set_write_timeout(secs);

  PassthroughResponse out;
  if (!on_event) {
    auto res = client.Post(path, body, "application/json");
    if (!res) {
      throw Error(ErrorCode::kBackendUnavailable,
                  "upstream unreachable: " + httplib::to_string(res.error()));
    }
    out.status = res->status;
    out.body = res->body;
    out.content_type = res->get_header_value("Content-Type");
  } else {
    SseParser parser(on_event);
    int status = 0;
    std::string error_body;
    httplib::Request req;
    req.method = "POST";
    req.path = path;
    req.body = body;
    req.set_header("Content-Type", "application/json");
    req.set_header("Accept", "text/event-stream");
    req.response_handler = [&](const httplib::Response& r) {
      status = r.status;
      return true;
    };
    req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
      if (status >= 200 && status < 300) {
        parser.feed(std::string_view(data, len));
      } else {
        error_body.append(data, len);
      }
      return true;
    };
    auto res = client.send(req);
    if (!res) {
      throw Error(ErrorCode::kBackendUnavailable,
                  "upstream unreachable: " + httplib::to_string(res.error()));
    }
    out.status = status != 0 ? status : res->status;
    if (out.status >= 200 && out.status < 300) parser.finish();
    out.events = parser.events();
    out.body = error_body;
    out.content_type = res->get_header_value("Content-Type");
  }
  if (out.status < 200 || out.status >= 300) {
    throw Error(ErrorCode::kUpstreamError, out.body.empty() ? "upstream error" : out.body, out.status);
  }
  return out;
}

}  // namespace fedgate::backends
