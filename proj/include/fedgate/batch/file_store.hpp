#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace fedgate::batch {

/// Content-addressed blob store. Ids are derived from the content hash, so
/// storing the same bytes twice yields the same id. With a directory the
/// blobs are also written to `<dir>/<id>` and reloaded on demand.
class FileStore {
 public:
  explicit FileStore(std::string dir = {});

  std::string put(std::string_view content);
  std::optional<std::string> get(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::size_t size() const;

  static std::string id_for(std::string_view content);

 private:
  std::string dir_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::string> blobs_;
};

}  // namespace fedgate::batch
