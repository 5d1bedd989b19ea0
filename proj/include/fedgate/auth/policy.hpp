#pragma once

#include <map>
#include <string>

#include "fedgate/auth/token.hpp"

namespace fedgate::auth {

enum class Decision { kAllow, kDeny };

/// model name -> required groups. An empty set admits any authenticated
/// principal. Models without an entry are unknown.
class AccessPolicy {
 public:
  void set(const std::string& model, GroupSet required) { required_[model] = std::move(required); }
  void erase(const std::string& model) { required_.erase(model); }
  const GroupSet* find(const std::string& model) const;
  std::size_t size() const { return required_.size(); }

 private:
  std::map<std::string, GroupSet> required_;
};

/// Allow iff the model's required set is empty or intersects the principal's
/// groups. Throws Error(kUnknownModel) when the model has no policy entry.
Decision authorize(const Principal& principal, const std::string& model, const AccessPolicy& policy);

bool groups_intersect(const GroupSet& a, const GroupSet& b);

}  // namespace fedgate::auth
