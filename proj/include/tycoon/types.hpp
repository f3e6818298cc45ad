#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tycoon {

using UserId = std::string;
using HostId = std::string;
using Bytes = std::vector<std::uint8_t>;

// Markets for different resources on the same host are independent.
enum class ResourceKind : std::uint8_t { cpu = 0, memory = 1, disk = 2 };

inline constexpr ResourceKind kAllResources[] = {ResourceKind::cpu, ResourceKind::memory,
                                                 ResourceKind::disk};

std::string_view to_string(ResourceKind kind);
std::optional<ResourceKind> parse_resource(std::string_view name);

}  // namespace tycoon
