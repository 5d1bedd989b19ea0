#include "fedgate/auth/policy.hpp"

#include "fedgate/errors.hpp"

namespace fedgate::auth {

const GroupSet* AccessPolicy::find(const std::string& model) const {
  auto it = required_.find(model);
  return it == required_.end() ? nullptr : &it->second;
}

bool groups_intersect(const GroupSet& a, const GroupSet& b) {
  // Both sets are ordered; walk them together.
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

Decision authorize(const Principal& principal, const std::string& model, const AccessPolicy& policy) {
  const GroupSet* required = policy.find(model);
  if (required == nullptr) throw Error(ErrorCode::kUnknownModel, "model '" + model + "' is not registered");
  if (required->empty() || groups_intersect(principal.groups, *required)) return Decision::kAllow;
  return Decision::kDeny;
}

}  // namespace fedgate::auth
