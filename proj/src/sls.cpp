#include "tycoon/sls.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace tycoon::sls {

using protocol::Reject;
using protocol::Verdict;

Registry::Registry(SlsConfig config) : config_(config) {
  if (!(config_.expiry > 0) || !(config_.register_interval > 0)) {
    throw std::invalid_argument("SLS expiry and registration interval must be positive");
  }
}

bool matches(const protocol::HostAdvertisement& ad, const protocol::SlsQuery& filter) {
  for (const auto& r : ad.resources) {
    if (filter.resource && r.resource != *filter.resource) continue;
    if (r.capacity >= filter.min_capacity) return true;
  }
  return false;
}

Verdict Registry::register_ad(const protocol::HostAdvertisement& ad, double now) {
  if (!protocol::signature_valid(ad, ad.public_key)) return Verdict::reject(Reject::bad_signature);
  for (const auto& r : ad.resources) {
    if (!(r.total_spent >= 0) || !(r.capacity > 0) || !std::isfinite(r.total_spent) ||
        !std::isfinite(r.capacity)) {
      return Verdict::reject(Reject::malformed);
    }
  }
  std::unique_lock lock(mu_);
  auto it = entries_.find(ad.host);
  if (it != entries_.end() && live(it->second, now)) {
    if (it->second.ad.public_key != ad.public_key) return Verdict::reject(Reject::key_mismatch);
    if (ad.issued_at < it->second.ad.issued_at) return Verdict::reject(Reject::replay);
  }
  entries_[ad.host] = Entry{ad, now};
  return Verdict::accept();
}

std::vector<HostId> Registry::sweep(double now) {
  std::unique_lock lock(mu_);
  std::vector<HostId> expired;
  for (auto it = entries_.begin(); it != entries_.end();) {
    if (!live(it->second, now)) {
      expired.push_back(it->first);
      it = entries_.erase(it);
    } else {
      ++it;
    }
  }
  return expired;
}

std::vector<protocol::HostAdvertisement> Registry::query(const protocol::SlsQuery& filter,
                                                         double now) const {
  std::shared_lock lock(mu_);
  std::vector<protocol::HostAdvertisement> out;
  for (const auto& [host, entry] : entries_) {
    if (live(entry, now) && matches(entry.ad, filter)) out.push_back(entry.ad);
  }
  return out;
}

std::size_t Registry::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::optional<double> Registry::last_seen(const HostId& host) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(host);
  if (it == entries_.end()) return std::nullopt;
  return it->second.last_seen;
}

}  // namespace tycoon::sls
