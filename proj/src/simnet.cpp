#include "tycoon/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <memory>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "tycoon/agent.hpp"
#include "tycoon/auctioneer.hpp"
#include "tycoon/bank.hpp"
#include "tycoon/dispatch.hpp"
#include "tycoon/sls.hpp"

namespace tycoon::sim {

using protocol::MessageType;
using protocol::Reject;

std::string_view Trace::header() {
  return "time,kind,host,user,resource,share,granted,charge,balance,work,detail";
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr int kDelivery = 0;
constexpr int kTimer = 1;

}  // namespace

void Trace::write_csv(std::ostream& out) const {
  out << header() << '\n';
  for (const auto& e : events) {
    out << num(e.time) << ',' << e.kind << ',' << e.host << ',' << e.user << ',' << e.resource
        << ',' << num(e.share) << ',' << num(e.granted) << ',' << num(e.charge) << ',' << num(e.balance) << ','
        << num(e.work) << ',' << e.detail << '\n';
  }
}

std::string Trace::csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

namespace {

class Simulation;

// Work-conserving usage model: shares left idle are redistributed among the
// users that can still use them, in proportion to their bid rates.
class SimWorkload final : public auctioneer::WorkloadAdapter {
 public:
  SimWorkload(Simulation& sim, HostId host, double capacity, double speed)
      : sim_(sim), host_(std::move(host)), capacity_(capacity), speed_(speed) {}

  std::vector<market::UsageRecord> usage(ResourceKind resource, const market::ShareMap& shares,
                                         std::span<const market::Bid> retained, double now,
                                         double period) override;

  // Grant and work of each user in the period just probed (cpu only).
  std::map<UserId, double> last_granted;
  std::map<UserId, double> last_work;

 private:
  Simulation& sim_;
  HostId host_;
  double capacity_;
  double speed_;
};

struct HostNode {
  HostNode(HostSpec s, crypto::Ed25519Signer k) : spec(std::move(s)), signer(std::move(k)) {}
  HostSpec spec;
  crypto::Ed25519Signer signer;
  std::shared_ptr<SimWorkload> workload;
  std::unique_ptr<auctioneer::Auctioneer> market;
  bool dead = false;
};

struct Outgoing {
  std::function<Bytes(std::uint64_t nonce)> build;
  std::function<void(const Bytes* reply)> done;
};

struct Outbox {
  std::deque<Outgoing> queue;
  bool busy = false;
};

struct UserNode {
  UserNode(const UserSpec* s, crypto::Ed25519Signer k) : spec(s), signer(std::move(k)) {}
  const UserSpec* spec;
  crypto::Ed25519Signer signer;
  std::map<HostId, std::uint64_t> nonce;
  std::map<HostId, Outbox> outbox;
  double last_timestamp = -std::numeric_limits<double>::infinity();
  double remaining = 0.0;  // batch work still to do
  std::map<HostId, double> frame_work;
  std::set<HostId> accounts;  // acknowledged create_account
  std::set<HostId> creating;  // create_account in progress
  // cost-effectiveness bookkeeping
  std::map<HostId, std::vector<agent::WorkSample>> samples;
  std::map<HostId, double> work_mark;
  std::map<HostId, double> spent_mark;
};

class Simulation {
 public:
  Simulation(const Scenario& scenario, std::uint64_t seed);
  RunResult run();

  bool active(const UserId& user, double now) const;
  double demand_cap(const UserId& user, double now, double period, double speed) const;
  void record_work(const HostId& host, const UserId& user, double work, double now, double period,
                   double full_work);
  void flag_work_conservation(bool ok) {
    if (!ok) result_.work_conserving = false;
  }

 private:
  struct Event {
    double time;
    int cls;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return std::tie(a.time, a.cls, a.seq) > std::tie(b.time, b.cls, b.seq);
    }
  };

  void at(double time, int cls, std::function<void()> fn) {
    queue_.push({time, cls, seq_++, std::move(fn)});
  }
  void timer(double time, std::function<void()> fn) { at(time, kTimer, std::move(fn)); }

  double latency(const std::string& from, const std::string& to);
  void send(const std::string& from, const std::string& to, Bytes frame,
            std::function<void(const Bytes*)> on_reply);
  std::optional<Bytes> serve(const std::string& to, const std::string& from, const Bytes& frame,
                             double sent);
  std::optional<Bytes> serve_host(HostNode& host, const std::string& from, const Bytes& frame,
                                  double sent);
  void orphan(const std::vector<protocol::Receipt>& receipts);

  void emit(TraceEvent e) {
    e.time = now_;
    result_.trace.events.push_back(std::move(e));
  }

  // user side
  double next_timestamp(UserNode& user);
  void transfer(UserNode& user, const std::string& recipient, double amount,
                std::function<void(std::optional<protocol::Receipt>)> done);
  void enqueue(UserNode& user, const HostId& host, Outgoing item);
  void pump(UserNode& user, const HostId& host);
  void do_create(UserNode& user, const HostId& host, std::map<ResourceKind, double> credits,
                 double interval, std::function<void(bool)> done = nullptr);
  void do_fund(UserNode& user, const HostId& host, ResourceKind resource, double amount,
               double interval);
  void do_set_interval(UserNode& user, const HostId& host, ResourceKind resource, double interval);
  void run_action(UserNode& user, const ActionSpec& action);
  void agent_round(UserNode& user);
  void agent_decide(UserNode& user, std::vector<protocol::HostAdvertisement> ads,
                    std::map<HostId, double> own_charge);

  // provider side
  void run_period(HostNode& host);
  void sweep_earnings(HostNode& host);

  void check_conservation();
  Conservation conservation() const;
  void fill_effective();

  const Scenario& scenario_;
  std::uint64_t seed_;
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::map<std::pair<std::string, std::string>, std::mt19937_64> links_;

  crypto::Ed25519Signer bank_signer_;
  crypto::Ed25519Signer admin_signer_;
  std::unique_ptr<bank::Bank> bank_;
  std::unique_ptr<sls::Registry> sls_;
  std::map<HostId, HostNode> hosts_;
  std::map<UserId, UserNode> users_;

  std::map<crypto::Digest, double> outstanding_;  // receipts paid to hosts, not yet settled
  double orphaned_ = 0.0;

  RunResult result_;
};

std::vector<market::UsageRecord> SimWorkload::usage(ResourceKind resource,
                                                    const market::ShareMap& shares,
                                                    std::span<const market::Bid> retained,
                                                    double now, double period) {
  last_work.clear();
  last_granted.clear();
  std::vector<market::UsageRecord> out;
  if (resource != ResourceKind::cpu) {
    for (const auto& bid : retained) {
      out.push_back({bid.user, sim_.active(bid.user, now) ? shares.at(bid.user) : 0.0});
    }
    return out;
  }

  const double capacity = capacity_;
  struct Demand {
    UserId user;
    double rate;
    double cap;
    double granted = 0.0;
  };
  std::vector<Demand> demands;
  bool all_full = true;
  double cap_total = 0.0;
  for (const auto& bid : retained) {
    const double cap = sim_.demand_cap(bid.user, now, period, speed_);
    const double share = shares.at(bid.user);
    if (cap < share) all_full = false;
    if (bid.rate() > 0.0 && cap > 0.0) {
      demands.push_back({bid.user, bid.rate(), cap});
      cap_total += cap;
    }
  }

  std::map<UserId, double> granted;
  if (all_full) {
    for (const auto& bid : retained) granted[bid.user] = shares.at(bid.user);
  } else {
    // Water-fill the whole capacity over the users that still want more.
    double left = capacity;
    std::vector<Demand*> open;
    for (auto& d : demands) open.push_back(&d);
    while (!open.empty() && left > 0.0) {
      double rate_sum = 0.0;
      for (auto* d : open) rate_sum += d->rate;
      std::vector<Demand*> capped;
      for (auto* d : open) {
        if (left * d->rate / rate_sum >= d->cap) capped.push_back(d);
      }
      if (capped.empty()) {
        for (auto* d : open) d->granted = left * d->rate / rate_sum;
        left = 0.0;
        break;
      }
      for (auto* d : capped) {
        d->granted = d->cap;
        left -= d->cap;
        std::erase(open, d);
      }
    }
    for (const auto& d : demands) granted[d.user] = d.granted;
  }

  if (!retained.empty()) {
    double sum = 0.0;
    for (const auto& [user, q] : granted) sum += q;
    const double expect = std::min(capacity, all_full ? capacity : cap_total);
    bool demanding = false;
    for (const auto& d : demands) demanding |= d.cap > 0.0;
    if (demanding && std::abs(sum - expect) > 1e-9 * std::max(1.0, capacity)) {
      sim_.flag_work_conservation(false);
    }
  }

  for (const auto& bid : retained) {
    const double q = granted.count(bid.user) ? granted[bid.user] : 0.0;
    out.push_back({bid.user, q});
    last_granted[bid.user] = q;
    const double work = q * period * speed_;
    last_work[bid.user] = work;
    if (work > 0.0) sim_.record_work(host_, bid.user, work, now, period, work);
  }
  return out;
}

Simulation::Simulation(const Scenario& scenario, std::uint64_t seed)
    : scenario_(scenario),
      seed_(seed),
      bank_signer_(crypto::Ed25519Signer::from_label("bank")),
      admin_signer_(crypto::Ed25519Signer::from_label("admin")) {
  validate(scenario_);

  protocol::KeyRegistry keys;
  keys.add("admin", admin_signer_.public_key());
  for (const auto& u : scenario_.users) {
    UserNode node(&u, crypto::Ed25519Signer::from_label("user:" + u.name));
    if (u.workload.kind == WorkloadSpec::Kind::batch) node.remaining = u.workload.work;
    keys.add(u.name, node.signer.public_key());
    users_.emplace(u.name, std::move(node));
    result_.users[u.name];
  }
  for (const auto& h : scenario_.hosts) {
    keys.add(h.name, crypto::Ed25519Signer::from_label("host:" + h.name).public_key());
  }

  bank::BankConfig bank_config;
  bank_config.max_skew = scenario_.max_skew;
  bank_ = std::make_unique<bank::Bank>(bank_config, bank_signer_, keys);
  sls_ = std::make_unique<sls::Registry>(
      sls::SlsConfig{scenario_.expiry, scenario_.register_interval});

  for (const auto& h : scenario_.hosts) {
    HostNode node(h, crypto::Ed25519Signer::from_label("host:" + h.name));
    auto cpu = h.capacity.find(ResourceKind::cpu);
    node.workload = std::make_shared<SimWorkload>(
        *this, h.name, cpu == h.capacity.end() ? 0.0 : cpu->second, h.speed);
    auctioneer::AuctioneerConfig config;
    config.host = h.name;
    config.resources.clear();
    for (const auto& [resource, total] : h.capacity) {
      config.resources.push_back({resource, total, scenario_.period});
    }
    config.default_interval = scenario_.default_interval;
    config.max_skew = scenario_.max_skew;
    config.eviction_threshold = scenario_.eviction_threshold;
    node.market = std::make_unique<auctioneer::Auctioneer>(config, node.signer,
                                                           bank_signer_.public_key(), keys,
                                                           node.workload);
    const HostId name = h.name;
    node.market->set_trace_sink([this, name](const auctioneer::PeriodRow& row) {
      TraceEvent e;
      e.kind = "alloc";
      e.host = name;
      e.user = row.user;
      e.resource = std::string(to_string(row.resource));
      e.share = row.share;
      e.charge = row.charge;
      e.balance = row.balance;
      if (row.resource == ResourceKind::cpu) {
        const auto& load = *hosts_.at(name).workload;
        if (auto it = load.last_work.find(row.user); it != load.last_work.end()) e.work = it->second;
        if (auto it = load.last_granted.find(row.user); it != load.last_granted.end()) {
          e.granted = it->second;
        }
      }
      emit(std::move(e));
    });
    hosts_.emplace(h.name, std::move(node));
  }
}

bool Simulation::active(const UserId& user, double now) const {
  const auto& w = users_.at(user).spec->workload;
  switch (w.kind) {
    case WorkloadSpec::Kind::none:
      return false;
    case WorkloadSpec::Kind::batch:
      return now >= w.windows.front().start && users_.at(user).remaining > 0.0;
    case WorkloadSpec::Kind::continuous:
    case WorkloadSpec::Kind::bursty:
      for (const auto& win : w.windows) {
        if (now >= win.start && now < win.stop) return true;
      }
      return false;
  }
  return false;
}

double Simulation::demand_cap(const UserId& user, double now, double period, double speed) const {
  if (!active(user, now)) return 0.0;
  const auto& node = users_.at(user);
  if (node.spec->workload.kind == WorkloadSpec::Kind::batch) {
    return node.remaining / (period * speed);
  }
  return std::numeric_limits<double>::infinity();
}

void Simulation::record_work(const HostId& host, const UserId& user, double work, double now,
                             double period, double full_work) {
  auto& node = users_.at(user);
  auto& stats = result_.users[user];
  const auto& w = node.spec->workload;
  if (w.kind == WorkloadSpec::Kind::batch) {
    work = std::min(work, node.remaining);
    node.remaining -= work;
    if (node.remaining <= 1e-12 * w.work) {
      node.remaining = 0.0;
      if (!stats.finished_at) stats.finished_at = now + period * (work / full_work);
    }
  }
  stats.work += work;
  stats.work_by_host[host] += work;
  auto& acc = node.frame_work[host];
  acc += work;
  const auto frames = static_cast<std::uint64_t>(std::floor(acc / w.frame_cost));
  stats.frames += frames;
  acc -= static_cast<double>(frames) * w.frame_cost;
}

double Simulation::latency(const std::string& from, const std::string& to) {
  const auto& model = scenario_.latency;
  if (model.kind == LatencyModel::Kind::constant) return model.value;
  auto key = std::make_pair(from, to);
  auto it = links_.find(key);
  if (it == links_.end()) {
    const std::string label = std::to_string(seed_) + '\0' + from + '\0' + to;
    const auto d = crypto::digest(std::span(reinterpret_cast<const std::uint8_t*>(label.data()),
                                            label.size()));
    std::uint64_t s = 0;
    for (int i = 0; i < 8; ++i) s = (s << 8) | d[i];
    it = links_.emplace(key, std::mt19937_64(s)).first;
  }
  std::uniform_real_distribution<double> dist(model.min, model.max);
  return dist(it->second);
}

void Simulation::send(const std::string& from, const std::string& to, Bytes frame,
                      std::function<void(const Bytes*)> on_reply) {
  const double sent = now_;
  const double arrive = now_ + latency(from, to);
  at(arrive, kDelivery, [this, from, to, frame = std::move(frame), on_reply, sent] {
    ++result_.messages;
    const auto type = protocol::peek_type(frame);
    emit({.kind = "msg", .host = to, .user = from, .detail = std::string(to_string(type))});
    auto response = serve(to, from, frame, sent);
    if (!response) {
      emit({.kind = "fail", .host = to, .user = from, .detail = std::string(to_string(type))});
      if (on_reply) at(now_ + latency(to, from), kDelivery, [on_reply] { on_reply(nullptr); });
      return;
    }
    at(now_ + latency(to, from), kDelivery,
       [this, from, to, reply = std::move(*response), on_reply] {
         ++result_.messages;
         emit({.kind = "msg",
               .host = from,
               .user = to,
               .detail = std::string(to_string(protocol::peek_type(reply)))});
         if (on_reply) on_reply(&reply);
       });
  });
}

void Simulation::orphan(const std::vector<protocol::Receipt>& receipts) {
  for (const auto& r : receipts) {
    auto it = outstanding_.find(protocol::message_digest(r));
    if (it == outstanding_.end()) continue;
    orphaned_ += it->second;
    outstanding_.erase(it);
  }
}

namespace {

std::vector<protocol::Receipt> carried_receipts(const Bytes& frame) {
  try {
    switch (protocol::peek_type(frame)) {
      case MessageType::fund:
        return {protocol::decode<protocol::FundMessage>(frame).receipt};
      case MessageType::create_account: {
        std::vector<protocol::Receipt> out;
        for (const auto& f : protocol::decode<protocol::CreateAccountMessage>(frame).funding) {
          out.push_back(f.receipt);
        }
        return out;
      }
      default:
        return {};
    }
  } catch (const protocol::DecodeError&) {
    return {};
  }
}

std::optional<protocol::Rejection> as_rejection(const Bytes& frame) {
  if (protocol::peek_type(frame) != MessageType::rejection) return std::nullopt;
  return protocol::decode<protocol::Rejection>(frame);
}

}  // namespace

std::optional<Bytes> Simulation::serve(const std::string& to, const std::string& from,
                                       const Bytes& frame, double sent) {
  if (to == "bank") {
    Bytes reply = dispatch::serve(*bank_, frame, now_);
    if (protocol::peek_type(reply) == MessageType::receipt) {
      auto receipt = protocol::decode<protocol::Receipt>(reply);
      if (users_.count(receipt.sender) && hosts_.count(receipt.recipient)) {
        outstanding_[protocol::message_digest(receipt)] = receipt.amount;
      }
    } else if (auto rej = as_rejection(reply)) {
      emit({.kind = "reject",
            .host = "bank",
            .user = from,
            .detail = std::string(to_string(protocol::peek_type(frame))) + ":" +
                      std::string(to_string(rej->reason))});
    }
    return reply;
  }
  if (to == "sls") return dispatch::serve(*sls_, frame, now_);
  auto it = hosts_.find(to);
  if (it == hosts_.end()) return std::nullopt;
  return serve_host(it->second, from, frame, sent);
}

std::optional<Bytes> Simulation::serve_host(HostNode& host, const std::string& from,
                                            const Bytes& frame, double sent) {
  const auto receipts = carried_receipts(frame);
  if (host.dead) {
    orphan(receipts);
    return std::nullopt;
  }
  Bytes reply = dispatch::serve(*host.market, frame, now_);
  const auto type = protocol::peek_type(frame);
  if (type == MessageType::status_query) return reply;

  if (auto rej = as_rejection(reply)) {
    orphan(receipts);
    emit({.kind = "reject",
          .host = host.spec.name,
          .user = from,
          .detail = std::string(to_string(type)) + ":" + std::string(to_string(rej->reason))});
    return reply;
  }
  for (const auto& r : receipts) outstanding_.erase(protocol::message_digest(r));

  TraceEvent e{.kind = "accept", .host = host.spec.name, .user = from,
               .detail = std::string(to_string(type))};
  if (type == MessageType::set_interval) {
    const auto m = protocol::decode<protocol::SetIntervalMessage>(frame);
    e.resource = std::string(to_string(m.resource));
    result_.bid_changes.push_back(
        {m.sender, host.spec.name, m.resource, m.interval, sent, now_, std::nullopt});
  } else if (type == MessageType::fund) {
    const auto m = protocol::decode<protocol::FundMessage>(frame);
    e.resource = std::string(to_string(m.resource));
    e.balance = m.receipt.amount;
  }
  emit(std::move(e));
  return reply;
}

double Simulation::next_timestamp(UserNode& user) {
  // Distinct timestamps keep two identical transfers in one instant from
  // looking like a replay.
  double ts = now_;
  if (ts <= user.last_timestamp) ts = user.last_timestamp + 1e-6;
  user.last_timestamp = ts;
  return ts;
}

void Simulation::transfer(UserNode& user, const std::string& recipient, double amount,
                          std::function<void(std::optional<protocol::Receipt>)> done) {
  protocol::TransferRequest req{user.spec->name, recipient, amount, next_timestamp(user), {}};
  protocol::sign(req, user.signer);
  send(user.spec->name, "bank", protocol::encode(req), [done](const Bytes* reply) {
    if (reply && protocol::peek_type(*reply) == MessageType::receipt) {
      done(protocol::decode<protocol::Receipt>(*reply));
    } else {
      done(std::nullopt);
    }
  });
}

void Simulation::enqueue(UserNode& user, const HostId& host, Outgoing item) {
  user.outbox[host].queue.push_back(std::move(item));
  pump(user, host);
}

// One message per host at a time, so nonces reach the auctioneer in order.
void Simulation::pump(UserNode& user, const HostId& host) {
  auto& box = user.outbox[host];
  if (box.busy || box.queue.empty()) return;
  box.busy = true;
  Outgoing item = std::move(box.queue.front());
  box.queue.pop_front();
  Bytes frame = item.build(++user.nonce[host]);
  UserNode* u = &user;
  send(user.spec->name, host, std::move(frame),
       [this, u, host, done = std::move(item.done)](const Bytes* reply) {
         if (done) done(reply);
         u->outbox[host].busy = false;
         pump(*u, host);
       });
}

namespace {

bool acked(const Bytes* reply) {
  return reply && protocol::peek_type(*reply) == MessageType::ack;
}

}  // namespace

void Simulation::do_create(UserNode& user, const HostId& host,
                           std::map<ResourceKind, double> credits, double interval,
                           std::function<void(bool)> done) {
  const auto& spec = hosts_.at(host).spec;
  struct Flow {
    std::size_t pending = 0;
    std::vector<protocol::InitialFunding> funding;
  };
  auto flow = std::make_shared<Flow>();
  std::vector<std::pair<ResourceKind, double>> paid;
  for (const auto& [r, c] : credits) {
    if (c > 0.0 && spec.capacity.count(r)) paid.emplace_back(r, c);
  }
  flow->pending = paid.size();
  user.creating.insert(host);
  UserNode* u = &user;
  auto submit = [this, u, host, interval, flow, done] {
    enqueue(*u, host,
            {[u, host, interval, flow](std::uint64_t nonce) {
               protocol::CreateAccountMessage m{u->spec->name, host, nonce, interval,
                                                flow->funding, {}};
               protocol::sign(m, u->signer);
               return protocol::encode(m);
             },
             [u, host, done](const Bytes* reply) {
               bool ok = acked(reply);
               if (!ok && reply) {
                 if (auto rej = as_rejection(*reply); rej && rej->reason == Reject::duplicate_account) {
                   ok = true;
                 }
               }
               u->creating.erase(host);
               if (ok) u->accounts.insert(host);
               if (done) done(ok);
             }});
  };
  if (paid.empty()) {
    submit();
    return;
  }
  for (const auto& [r, c] : paid) {
    const ResourceKind resource = r;
    transfer(user, host, c, [flow, resource, submit](std::optional<protocol::Receipt> receipt) {
      if (receipt) flow->funding.push_back({resource, *receipt});
      if (--flow->pending == 0) {
        std::sort(flow->funding.begin(), flow->funding.end(),
                  [](const auto& a, const auto& b) { return a.resource < b.resource; });
        submit();
      }
    });
  }
}

void Simulation::do_fund(UserNode& user, const HostId& host, ResourceKind resource,
                         double amount, double interval) {
  UserNode* u = &user;
  transfer(user, host, amount,
           [this, u, host, resource, interval](std::optional<protocol::Receipt> receipt) {
             if (!receipt) return;
             enqueue(*u, host,
                     {[u, host, resource, interval, r = *receipt](std::uint64_t nonce) {
                        protocol::FundMessage m{u->spec->name, host, nonce, resource,
                                                interval, r, {}};
                        protocol::sign(m, u->signer);
                        return protocol::encode(m);
                      },
                      nullptr});
           });
}

void Simulation::do_set_interval(UserNode& user, const HostId& host, ResourceKind resource,
                                 double interval) {
  UserNode* u = &user;
  enqueue(user, host,
          {[u, host, resource, interval](std::uint64_t nonce) {
             protocol::SetIntervalMessage m{u->spec->name, host, nonce, resource, interval, {}};
             protocol::sign(m, u->signer);
             return protocol::encode(m);
           },
           nullptr});
}

void Simulation::run_action(UserNode& user, const ActionSpec& action) {
  std::vector<HostId> targets = action.hosts;
  if (targets.empty()) {
    for (const auto& h : scenario_.hosts) targets.push_back(h.name);
  }
  for (const auto& host : targets) {
    switch (action.kind) {
      case ActionSpec::Kind::create_account:
        do_create(user, host, action.credits,
                  action.interval > 0.0 ? action.interval : scenario_.default_interval);
        break;
      case ActionSpec::Kind::fund:
        do_fund(user, host, action.resource, action.amount, action.interval);
        break;
      case ActionSpec::Kind::set_interval:
        do_set_interval(user, host, action.resource, action.interval);
        break;
    }
  }
}

void Simulation::agent_round(UserNode& user) {
  UserNode* u = &user;
  protocol::SlsQuery query{ResourceKind::cpu, 0.0};
  send(user.spec->name, "sls", protocol::encode(query), [this, u](const Bytes* reply) {
    if (!reply || protocol::peek_type(*reply) != MessageType::sls_reply) return;
    std::vector<protocol::HostAdvertisement> ads;
    for (auto& ad : protocol::decode<protocol::SlsReply>(*reply).ads) {
      if (hosts_.count(ad.host) && protocol::signature_valid(ad, ad.public_key)) {
        ads.push_back(std::move(ad));
      }
    }
    if (ads.empty()) return;

    struct Gather {
      std::size_t pending = 0;
      std::map<HostId, double> own_charge;
      std::vector<protocol::HostAdvertisement> ads;
    };
    auto gather = std::make_shared<Gather>();
    gather->ads = ads;
    std::vector<HostId> ask;
    for (const auto& ad : ads) {
      if (u->accounts.count(ad.host)) ask.push_back(ad.host);
    }
    gather->pending = ask.size();
    if (ask.empty()) {
      agent_decide(*u, std::move(gather->ads), {});
      return;
    }
    for (const auto& host : ask) {
      send(u->spec->name, host, protocol::encode(protocol::StatusQuery{u->spec->name}),
           [this, u, host, gather](const Bytes* reply) {
             if (reply && protocol::peek_type(*reply) == MessageType::status_reply) {
               for (const auto& r : protocol::decode<protocol::StatusReply>(*reply).resources) {
                 if (r.resource == ResourceKind::cpu) gather->own_charge[host] = r.last_charge;
               }
             }
             if (--gather->pending == 0) {
               agent_decide(*u, std::move(gather->ads), std::move(gather->own_charge));
             }
           });
    }
  });
}

void Simulation::agent_decide(UserNode& user, std::vector<protocol::HostAdvertisement> ads,
                              std::map<HostId, double> own_charge) {
  const auto& spec = user.spec->agent;
  const auto& stats = result_.users[user.spec->name];

  std::map<HostId, double> measured;
  if (spec.cost_effectiveness) {
    for (const auto& host : user.accounts) {
      const auto& accounts = hosts_.at(host).market->accounts();
      auto it = accounts.find(user.spec->name);
      if (it == accounts.end()) continue;
      const double spent = it->second.at(ResourceKind::cpu).debited;
      auto wit = stats.work_by_host.find(host);
      const double work = wit == stats.work_by_host.end() ? 0.0 : wit->second;
      const double d_spent = spent - user.spent_mark[host];
      const double d_work = work - user.work_mark[host];
      user.spent_mark[host] = spent;
      user.work_mark[host] = work;
      if (d_spent > 0.0) user.samples[host].push_back({d_work, d_spent});
    }
    if (!user.samples.empty()) measured = agent::measure_cost_effectiveness(user.samples);
  }
  double best = 0.0;
  for (const auto& [h, w] : measured) best = std::max(best, w);

  std::vector<agent::HostMarketView> views;
  for (const auto& ad : ads) {
    const auto* cpu = ad.find(ResourceKind::cpu);
    if (!cpu) continue;
    agent::HostMarketView v;
    v.host = ad.host;
    auto own = own_charge.find(ad.host);
    v.others_bid =
        agent::estimate_others_bid(cpu->total_spent, own == own_charge.end() ? 0.0 : own->second);
    v.capacity = cpu->capacity;
    v.total_spent = cpu->total_spent;
    auto sw = spec.weights.find(ad.host);
    v.weight = sw == spec.weights.end() ? 1.0 : sw->second;
    if (spec.cost_effectiveness) {
      // Hosts not yet measured are weighed as well as the best measured one.
      auto m = measured.find(ad.host);
      v.weight *= m == measured.end() ? (best > 0.0 ? best : 1.0) : m->second;
    }
    views.push_back(v);
  }

  agent::BidVector plan;
  try {
    plan = agent::best_response_with_threshold(views, spec.budget / spec.interval, spec.lambda);
  } catch (const std::invalid_argument&) {
    return;
  }
  for (const auto& [host, rate] : plan.bids) {
    const double amount = rate * spec.interval;
    if (!(amount > 1e-12)) continue;
    if (user.accounts.count(host)) {
      do_fund(user, host, ResourceKind::cpu, amount, spec.interval);
    } else if (!user.creating.count(host)) {
      do_create(user, host, {{ResourceKind::cpu, amount}}, spec.interval);
    }
  }
}

void Simulation::run_period(HostNode& host) {
  host.market->run_period(now_);
  ++result_.periods;
  check_conservation();
}

void Simulation::sweep_earnings(HostNode& host) {
  const HostId name = host.spec.name;
  send(name, "bank", protocol::encode(protocol::BalanceQuery{name}),
       [this, name](const Bytes* reply) {
         if (!reply || protocol::peek_type(*reply) != MessageType::balance_reply) return;
         auto& h = hosts_.at(name);
         const double balance = protocol::decode<protocol::BalanceReply>(*reply).balance;
         if (h.dead || !(balance > 0.0)) return;
         protocol::TransferRequest req{name, "admin", balance, now_, {}};
         protocol::sign(req, h.signer);
         send(name, "bank", protocol::encode(req), nullptr);
       });
}

Conservation Simulation::conservation() const {
  Conservation c;
  c.total_issued = bank_->total_issued();
  c.bank_sum = bank_->sum_of_balances();
  for (const auto& [name, user] : users_) c.user_bank += bank_->balance_of(name);
  for (const auto& [name, host] : hosts_) {
    c.local += host.market->sum_local_balances();
    c.debited += host.market->total_debited();
  }
  for (const auto& [digest, amount] : outstanding_) c.in_flight += amount;
  c.orphaned = orphaned_;
  return c;
}

void Simulation::check_conservation() {
  const auto c = conservation();
  result_.max_conservation_error = std::max(
      {result_.max_conservation_error, std::abs(c.residual()), std::abs(c.bank_sum - c.total_issued)});
}

void Simulation::fill_effective() {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> allocs;
  for (const auto& e : result_.trace.events) {
    if (e.kind == "alloc") allocs[{e.host, e.user, e.resource}].push_back(e.time);
  }
  for (auto& change : result_.bid_changes) {
    auto it = allocs.find({change.host, change.user, std::string(to_string(change.resource))});
    if (it == allocs.end()) continue;
    auto t = std::lower_bound(it->second.begin(), it->second.end(), change.accepted);
    if (t != it->second.end()) change.effective = *t;
  }
}

RunResult Simulation::run() {
  const double lead = std::max(1.0, 10.0 * scenario_.latency.max_latency());

  // Setup: initial bank balances, then setup-phase actions, early enough to
  // settle before the first period.
  timer(-lead, [this] {
    for (const auto& u : scenario_.users) {
      if (u.bank > 0.0) {
        bank_->mint(u.name, u.bank);
        emit({.kind = "mint", .user = u.name, .balance = bank_->balance_of(u.name)});
      }
    }
    for (const auto& u : scenario_.users) {
      for (const auto& a : u.actions) {
        if (a.at == kSetup) run_action(users_.at(u.name), a);
      }
    }
  });

  for (const auto& u : scenario_.users) {
    for (const auto& a : u.actions) {
      if (a.at == kSetup) continue;
      const ActionSpec* action = &a;
      UserNode* node = &users_.at(u.name);
      timer(a.at, [this, node, action] { run_action(*node, *action); });
    }
    if (u.agent.enabled) {
      UserNode* node = &users_.at(u.name);
      for (double t = u.agent.start; t < scenario_.duration; t += u.agent.every) {
        timer(t, [this, node] { agent_round(*node); });
      }
    }
  }

  // Scheduled first so a kill wins over the host's own timers at that instant.
  for (const auto& k : scenario_.kills) {
    HostNode* node = &hosts_.at(k.host);
    timer(k.at, [this, node] {
      if (node->dead) return;
      node->dead = true;
      emit({.kind = "kill", .host = node->spec.name});
    });
  }

  for (const auto& h : scenario_.hosts) {
    HostNode* node = &hosts_.at(h.name);
    for (std::uint64_t k = 0;; ++k) {
      const double t = static_cast<double>(k) * scenario_.period;
      if (t >= scenario_.duration) break;
      timer(t, [this, node] {
        if (!node->dead) run_period(*node);
      });
    }
    for (std::uint64_t k = 0;; ++k) {
      const double t = static_cast<double>(k) * scenario_.register_interval;
      if (t >= scenario_.duration) break;
      timer(t, [this, node] {
        if (!node->dead) send(node->spec.name, "sls", protocol::encode(node->market->advertise(now_)), nullptr);
      });
    }
    if (scenario_.funding.sweep_period > 0.0) {
      for (double t = scenario_.funding.sweep_period; t < scenario_.duration;
           t += scenario_.funding.sweep_period) {
        timer(t, [this, node] {
          if (!node->dead) sweep_earnings(*node);
        });
      }
    }
  }

  for (double t = scenario_.register_interval; t < scenario_.duration;
       t += scenario_.register_interval) {
    timer(t, [this] { sls_->sweep(now_); });
  }

  if (scenario_.funding.income_period > 0.0) {
    for (double t = scenario_.funding.income_period; t < scenario_.duration;
         t += scenario_.funding.income_period) {
      timer(t, [this] {
        for (const auto& u : scenario_.users) {
          if (u.income > 0.0) {
            bank_->mint(u.name, u.income);
            emit({.kind = "mint", .user = u.name, .balance = bank_->balance_of(u.name)});
          }
        }
      });
    }
  }

  while (!queue_.empty() && queue_.top().time < scenario_.duration) {
    Event e = queue_.top();
    queue_.pop();
    now_ = e.time;
    e.fn();
  }

  check_conservation();
  result_.conservation = conservation();
  fill_effective();
  return std::move(result_);
}

}  // namespace

RunResult run_scenario(const Scenario& scenario) { return run_scenario(scenario, scenario.seed); }

RunResult run_scenario(const Scenario& scenario, std::uint64_t seed) {
  Simulation sim(scenario, seed);
  return sim.run();
}

double measure_reallocation_latency(const Trace& trace, const BidChange& change) {
  const std::string resource(to_string(change.resource));
  bool found = false;
  for (const auto& e : trace.events) {
    if (!found) {
      found = e.kind == "accept" && e.detail == "set_interval" && e.time == change.accepted &&
              e.host == change.host && e.user == change.user && e.resource == resource;
      continue;
    }
    if (e.kind == "alloc" && e.host == change.host && e.user == change.user &&
        e.resource == resource && e.time >= change.accepted) {
      return e.time - change.accepted;
    }
  }
  if (!found) throw std::invalid_argument("trace has no matching set_interval acceptance");
  throw std::invalid_argument("no allocation period ran after the set_interval was accepted");
}

double improvement_over_proportional_share(int n_continuous) {
  if (n_continuous < 1) throw std::invalid_argument("need at least one continuous user");
  return improvement_literal(n_continuous + 1);
}

double improvement_literal(int m) {
  if (m < 1) throw std::invalid_argument("user count must be at least 1");
  const double fair = 1.0 / m;
  return (0.75 - fair) / fair;
}

namespace {

Scenario improvement_scenario(int n, int k, double interval, std::uint64_t seed) {
  Scenario s;
  s.name = "improvement";
  s.seed = seed;
  s.period = 10.0;
  s.duration = (k + 1) * s.period;
  s.hosts.push_back({"h0", {{ResourceKind::cpu, 1.0}}, 1.0});
  auto user = [&](const std::string& name, Window w) {
    UserSpec u;
    u.name = name;
    u.bank = 10.0;
    u.workload.kind = WorkloadSpec::Kind::bursty;
    u.workload.windows = {w};
    ActionSpec a;
    a.at = kSetup;
    a.kind = ActionSpec::Kind::create_account;
    a.credits = {{ResourceKind::cpu, 10.0}};
    a.interval = interval;
    u.actions.push_back(a);
    return u;
  };
  for (int i = 0; i < n; ++i) s.users.push_back(user("c" + std::to_string(i), {0.0, kForever}));
  const double arrival = k * s.period;
  s.users.push_back(user("late", {arrival, arrival + s.period}));
  return s;
}

}  // namespace

ImprovementMeasurement measure_improvement(int n_continuous, std::uint64_t seed) {
  if (n_continuous < 1) throw std::invalid_argument("need at least one continuous user");
  constexpr double kInterval = 300.0;
  constexpr double kPeriod = 10.0;
  const double decay = 1.0 - kPeriod / kInterval;

  // Arrival period whose predicted share lands nearest 0.75.
  int best_k = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 1000; ++k) {
    const double share = 1.0 / (1.0 + n_continuous * std::pow(decay, k));
    const double gap = std::abs(share - 0.75);
    if (gap < best_gap) {
      best_gap = gap;
      best_k = k;
    }
  }

  ImprovementMeasurement m;
  m.n_continuous = n_continuous;
  m.arrival_periods = best_k;
  const auto tycoon = run_scenario(improvement_scenario(n_continuous, best_k, kInterval, seed));
  const auto baseline = run_scenario(improvement_scenario(n_continuous, best_k, 1e12, seed));
  m.work_tycoon = tycoon.users.at("late").work;
  m.work_proportional = baseline.users.at("late").work;
  for (const auto& e : tycoon.trace.events) {
    if (e.kind == "alloc" && e.user == "late" && e.time == best_k * kPeriod) m.arrival_share = e.share;
  }
  m.improvement = m.work_tycoon / m.work_proportional - 1.0;
  return m;
}

}  // namespace tycoon::sim
