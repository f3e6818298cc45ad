#pragma once

// Soft-state service locator. Auctioneers re-register every
// register_interval seconds; anything silent for longer than `expiry` is
// forgotten. The first key seen for a host is pinned until its entry expires.

#include <map>
#include <shared_mutex>
#include <vector>

#include "tycoon/protocol.hpp"

namespace tycoon::sls {

inline constexpr double kDefaultExpiry = 120.0;
inline constexpr double kDefaultRegisterInterval = 30.0;

struct SlsConfig {
  double expiry = kDefaultExpiry;
  double register_interval = kDefaultRegisterInterval;
};

class Registry {
 public:
  explicit Registry(SlsConfig config = {});

  const SlsConfig& config() const { return config_; }

  // Rejects: bad-signature, key-mismatch (a live entry holds another key),
  // replay (older than the stored ad), malformed (negative total_spent or
  // non-positive capacity).
  protocol::Verdict register_ad(const protocol::HostAdvertisement& ad, double now);

  // Removes entries with now - last_seen > expiry; returns them sorted.
  std::vector<HostId> sweep(double now);

  // Live entries matching the filter, sorted by host. Entries past expiry are
  // excluded even if no sweep has run yet.
  std::vector<protocol::HostAdvertisement> query(const protocol::SlsQuery& filter, double now) const;

  std::size_t size() const;
  std::optional<double> last_seen(const HostId& host) const;

 private:
  struct Entry {
    protocol::HostAdvertisement ad;
    double last_seen = 0.0;
  };

  bool live(const Entry& e, double now) const { return now - e.last_seen <= config_.expiry; }

  SlsConfig config_;
  mutable std::shared_mutex mu_;
  std::map<HostId, Entry> entries_;
};

// Filter predicate used by query; exposed for agents that filter cached ads.
bool matches(const protocol::HostAdvertisement& ad, const protocol::SlsQuery& filter);

}  // namespace tycoon::sls
