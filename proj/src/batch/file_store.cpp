#include "fedgate/batch/file_store.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fedgate::batch {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

FileStore::FileStore(std::string dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::string FileStore::id_for(std::string_view content) {
  // Two independent 64-bit FNV-1a lanes.
  const std::uint64_t a = fnv1a(content, 0xcbf29ce484222325ULL);
  const std::uint64_t b = fnv1a(content, 0x84222325cbf29ce4ULL ^ content.size());
  char buf[40];
  std::snprintf(buf, sizeof buf, "file-%016llx%016llx", static_cast<unsigned long long>(a),
                static_cast<unsigned long long>(b));
  return buf;
}

std::string FileStore::put(std::string_view content) {
  std::string id = id_for(content);
  std::lock_guard lock(mu_);
  if (blobs_.contains(id)) return id;
  if (!dir_.empty()) {
    const auto path = std::filesystem::path(dir_) / id;
    const auto tmp = std::filesystem::path(dir_) / (id + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
    }
    std::filesystem::rename(tmp, path);
  }
  blobs_.emplace(id, std::string(content));
  return id;
}

std::optional<std::string> FileStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  if (auto it = blobs_.find(id); it != blobs_.end()) return it->second;
  if (dir_.empty() || id.find('/') != std::string::npos) return std::nullopt;
  std::ifstream in(std::filesystem::path(dir_) / id, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return blobs_.emplace(id, ss.str()).first->second;
}

bool FileStore::contains(const std::string& id) const { return get(id).has_value(); }

std::size_t FileStore::size() const {
  std::lock_guard lock(mu_);
  return blobs_.size();
}

}  // namespace fedgate::batch
