#include "tycoon/types.hpp"

namespace tycoon {

std::string_view to_string(ResourceKind kind) {
  switch (kind) {
    case ResourceKind::cpu:
      return "cpu";
    case ResourceKind::memory:
      return "memory";
    case ResourceKind::disk:
      return "disk";
  }
  return "unknown";
}

std::optional<ResourceKind> parse_resource(std::string_view name) {
  if (name == "cpu") return ResourceKind::cpu;
  if (name == "memory" || name == "mem") return ResourceKind::memory;
  if (name == "disk") return ResourceKind::disk;
  return std::nullopt;
}

}  // namespace tycoon
