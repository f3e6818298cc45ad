#include "tycoon/agent.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>

namespace tycoon::agent {

namespace {

struct Ranked {
  const HostMarketView* view;
  double weight;
  double others;
  double ratio;
  double root;  // sqrt(w y)
};

std::vector<Ranked> rank(std::span<const HostMarketView> views, const BestResponseOptions& options) {
  std::vector<Ranked> ranked;
  ranked.reserve(views.size());
  for (const auto& view : views) {
    const double others = std::max(view.others_bid, options.idle_floor);
    ranked.push_back({&view, view.weight, others, view.weight / others,
                      std::sqrt(view.weight * others)});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.ratio != b.ratio) return a.ratio > b.ratio;
    return a.view->host < b.view->host;
  });
  return ranked;
}

void check_inputs(std::span<const HostMarketView> views, double budget) {
  if (views.empty()) throw std::invalid_argument("best response needs at least one host");
  if (!(budget > 0.0) || !std::isfinite(budget)) {
    throw std::invalid_argument("budget must be finite and > 0");
  }
  bool any_weight = false;
  for (const auto& view : views) {
    if (!(view.weight >= 0.0) || !std::isfinite(view.weight)) {
      throw std::invalid_argument("host weight must be finite and >= 0: " + view.host);
    }
    any_weight |= view.weight > 0.0;
  }
  if (!any_weight) throw std::invalid_argument("all host weights are zero");
}

}  // namespace

double BidVector::total() const {
  double sum = 0.0;
  for (const auto& [host, bid] : bids) sum += bid;
  return sum;
}

double marginal_value(double weight, double others_bid, double bid) {
  const double denom = bid + others_bid;
  return weight * others_bid / (denom * denom);
}

double utility(std::span<const HostMarketView> views, const std::map<HostId, double>& bids,
               const BestResponseOptions& options) {
  double total = 0.0;
  for (const auto& view : views) {
    auto it = bids.find(view.host);
    if (it == bids.end() || it->second <= 0.0) continue;
    const double others = std::max(view.others_bid, options.idle_floor);
    total += view.weight * it->second / (it->second + others);
  }
  return total;
}

BidVector best_response(std::span<const HostMarketView> views, double budget,
                        const BestResponseOptions& options) {
  check_inputs(views, budget);
  const auto ranked = rank(views, options);

  // Largest k whose k-th host still gets a non-negative bid when the budget
  // is spread over the first k.
  std::size_t funded = 0;
  double root_sum = 0.0, others_sum = 0.0;
  double funded_root_sum = 0.0, funded_others_sum = 0.0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    root_sum += ranked[k].root;
    others_sum += ranked[k].others;
    if (root_sum <= 0.0) continue;
    const double bid = ranked[k].root / root_sum * (budget + others_sum) - ranked[k].others;
    if (bid >= 0.0) {
      funded = k + 1;
      funded_root_sum = root_sum;
      funded_others_sum = others_sum;
    }
  }

  BidVector result;
  result.budget = budget;
  const double scale = (budget + funded_others_sum) / funded_root_sum;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const double bid = i < funded ? std::max(0.0, ranked[i].root * scale - ranked[i].others) : 0.0;
    result.bids[ranked[i].view->host] = bid;
  }
  result.marginal = 1.0 / (scale * scale);
  result.utility = utility(views, result.bids, options);
  return result;
}

BidVector best_response_with_threshold(std::span<const HostMarketView> views, double budget,
                                       double threshold, const BestResponseOptions& options) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
    throw std::invalid_argument("threshold must be finite and >= 0");
  }
  BidVector unconstrained = best_response(views, budget, options);
  if (unconstrained.marginal >= threshold) return unconstrained;

  // Spending the whole budget would push the common marginal below the
  // threshold, so stop where every funded host sits exactly at it:
  // x_i = sqrt(w_i y_i / threshold) - y_i.
  BidVector result;
  result.budget = budget;
  for (const auto& entry : rank(views, options)) {
    const double bid = entry.ratio > threshold
                           ? std::max(0.0, std::sqrt(entry.weight * entry.others / threshold) -
                                               entry.others)
                           : 0.0;
    result.bids[entry.view->host] = bid;
  }
  result.marginal = result.total() > 0.0 ? threshold : 0.0;
  result.utility = utility(views, result.bids, options);
  return result;
}

double estimate_others_bid(double total_spent, double own_last_charge, double floor) {
  const double estimate = total_spent - own_last_charge;
  return std::isfinite(estimate) ? std::max(estimate, floor) : floor;
}

double predictability_bid(double target_share, double others_total, double capacity) {
  if (!(capacity > 0.0)) throw std::invalid_argument("capacity must be > 0");
  if (!(target_share >= 0.0)) throw std::invalid_argument("target share must be >= 0");
  if (!(others_total >= 0.0)) throw std::invalid_argument("competing bids must be >= 0");
  if (target_share >= capacity) {
    throw std::invalid_argument("target share must be below the host capacity");
  }
  return target_share * others_total / (capacity - target_share);
}

void BidHistory::record(const HostId& host, double others_total) {
  std::unique_lock lock(mutex_);
  auto& samples = samples_[host];
  samples.push_back(others_total);
  while (samples.size() > window_) samples.pop_front();
}

std::size_t BidHistory::size(const HostId& host) const {
  std::shared_lock lock(mutex_);
  auto it = samples_.find(host);
  return it == samples_.end() ? 0 : it->second.size();
}

std::optional<double> BidHistory::percentile(const HostId& host, double p) const {
  std::vector<double> snapshot;
  {
    std::shared_lock lock(mutex_);
    auto it = samples_.find(host);
    if (it == samples_.end() || it->second.empty()) return std::nullopt;
    snapshot.assign(it->second.begin(), it->second.end());
  }
  std::sort(snapshot.begin(), snapshot.end());
  const double clamped = std::clamp(p, 0.0, 100.0);
  auto rank = static_cast<std::size_t>(std::ceil(clamped / 100.0 * static_cast<double>(snapshot.size())));
  rank = std::clamp<std::size_t>(rank, 1, snapshot.size());
  return snapshot[rank - 1];
}

double assured_bid(const BidHistory& history, const HostId& host, double target_share,
                   double capacity, double latest_others_total, double percentile) {
  const double others = history.percentile(host, percentile).value_or(latest_others_total);
  return predictability_bid(target_share, others, capacity);
}

std::map<HostId, double> measure_cost_effectiveness(
    const std::map<HostId, std::vector<WorkSample>>& trace,
    const CostEffectivenessOptions& options) {
  std::map<HostId, double> weights;
  double best = 0.0;
  for (const auto& [host, samples] : trace) {
    const std::size_t take = std::min(options.window, samples.size());
    double work = 0.0, spent = 0.0;
    for (auto it = samples.end() - static_cast<std::ptrdiff_t>(take); it != samples.end(); ++it) {
      work += it->work;
      spent += it->spent;
    }
    if (!(spent > 0.0)) {
      throw std::invalid_argument("no credits spent at host " + host + " over the window");
    }
    weights[host] = work / spent;
    best = std::max(best, weights[host]);
  }
  for (auto& [host, weight] : weights) {
    if (weight < options.epsilon * best) weight = 0.0;
  }
  return weights;
}

}  // namespace tycoon::agent
