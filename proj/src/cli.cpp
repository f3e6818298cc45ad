#include "tycoon/cli.hpp"

#include <sys/stat.h>
#include <yaml-cpp/yaml.h>

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "tycoon/agent.hpp"
#include "tycoon/auctioneer.hpp"
#include "tycoon/protocol.hpp"
#include "tycoon/services.hpp"
#include "tycoon/simnet.hpp"

namespace tycoon::cli {

using json = nlohmann::ordered_json;
using protocol::MessageType;

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

CliConfig load_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw std::runtime_error("cannot read config " + path.string() + ": " + e.what());
  }
  CliConfig c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw std::runtime_error(path.string() + ": expected a mapping");
  static const std::set<std::string> known = {"bank", "sls", "user", "key",
                                              "nonce_file", "timeout_ms", "parallel"};
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (!known.count(key)) throw std::runtime_error(path.string() + ": unknown field '" + key + "'");
  }
  auto field = [&](const char* name) -> std::string {
    try {
      return root[name].as<std::string>();
    } catch (const YAML::Exception&) {
      throw std::runtime_error(path.string() + ": bad value for '" + name + "'");
    }
  };
  try {
    if (root["bank"]) c.bank = net::Endpoint::parse(field("bank"));
    if (root["sls"]) c.sls = net::Endpoint::parse(field("sls"));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (root["user"]) c.user = field("user");
  // Relative key and nonce paths are taken from the config file's directory.
  const auto base = path.parent_path();
  if (root["key"]) c.key = base / field("key");
  if (root["nonce_file"]) c.nonce_file = base / field("nonce_file");
  try {
    if (root["timeout_ms"]) c.timeout = std::chrono::milliseconds(root["timeout_ms"].as<long>());
    if (root["parallel"]) c.parallel = root["parallel"].as<std::size_t>();
  } catch (const YAML::Exception&) {
    throw std::runtime_error(path.string() + ": timeout_ms and parallel must be integers");
  }
  if (c.parallel == 0) throw std::runtime_error(path.string() + ": parallel must be positive");
  return c;
}

NonceStore::NonceStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [host, n] : j.items()) last_[host] = n.get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt nonce file " + path_.string() + ": " + e.what());
  }
}

std::uint64_t NonceStore::next(const HostId& host) {
  std::lock_guard lock(mutex_);
  const auto n = ++last_[host];
  save();
  return n;
}

void NonceStore::observe(const HostId& host, std::uint64_t high_water) {
  std::lock_guard lock(mutex_);
  auto& n = last_[host];
  if (high_water > n) {
    n = high_water;
    save();
  }
}

std::uint64_t NonceStore::last(const HostId& host) const {
  std::lock_guard lock(mutex_);
  auto it = last_.find(host);
  return it == last_.end() ? 0 : it->second;
}

void NonceStore::save() const {
  if (path_.empty()) return;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [host, n] : last_) j[host] = n;
  const auto tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write nonce file " + tmp);
  }
  std::filesystem::rename(tmp, path_);
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HostResult {
  HostId host;
  bool ok = false;
  std::string message;
  json detail = json::object();
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string rejection_text(const Bytes& reply) {
  try {
    const auto r = protocol::decode<protocol::Rejection>(reply);
    std::string text = "rejected: " + std::string(protocol::to_string(r.reason));
    if (!r.detail.empty()) text += " (" + r.detail + ")";
    return text;
  } catch (const protocol::DecodeError&) {
    return "unexpected reply";
  }
}

bool is_rejection(const Bytes& reply, protocol::Reject reason) {
  if (protocol::peek_type(reply) != MessageType::rejection) return false;
  return protocol::decode<protocol::Rejection>(reply).reason == reason;
}

Bytes expect(const Bytes& reply, MessageType type) {
  if (protocol::peek_type(reply) != type) throw std::runtime_error(rejection_text(reply));
  return reply;
}

ResourceKind parse_resource_arg(const std::string& text) {
  auto r = parse_resource(text);
  if (!r) throw UsageError("unknown resource '" + text + "' (expected cpu, memory or disk)");
  return *r;
}

double parse_number(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string(what) + " must be a number, got '" + text + "'");
  }
}

std::vector<HostId> unique_hosts(std::vector<HostId> hosts) {
  std::sort(hosts.begin(), hosts.end());
  hosts.erase(std::unique(hosts.begin(), hosts.end()), hosts.end());
  return hosts;
}

// Runs fn for every host with at most `parallel` in flight. A throwing host
// is reported as failed; it never stops the others.
std::vector<HostResult> fan_out(const std::vector<HostId>& hosts, std::size_t parallel,
                                const std::function<HostResult(const HostId&)>& fn) {
  std::vector<HostResult> results(hosts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < hosts.size();) {
      try {
        results[i] = fn(hosts[i]);
        results[i].host = hosts[i];
      } catch (const net::ConnectionError& e) {
        results[i] = {hosts[i], false, std::string("connection error: ") + e.what()};
      } catch (const std::exception& e) {
        results[i] = {hosts[i], false, e.what()};
      }
    }
  };
  const auto n = std::max<std::size_t>(1, std::min(parallel, hosts.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  std::sort(results.begin(), results.end(),
            [](const HostResult& a, const HostResult& b) { return a.host < b.host; });
  return results;
}

int exit_code(const std::vector<HostResult>& results) {
  const auto ok = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.ok; });
  if (!results.empty() && ok == static_cast<long>(results.size())) return kExitOk;
  return ok == 0 ? kExitFailed : kExitPartial;
}

class Session {
 public:
  explicit Session(CliConfig config) : config_(std::move(config)) {
    if (config_.user.empty()) throw UsageError("no user identity (set --user or TYCOON_USER)");
    if (config_.key.empty()) throw UsageError("no key file (set --key or TYCOON_KEY)");
    std::ifstream in(config_.key);
    std::string hex;
    if (!(in >> hex)) throw UsageError("cannot read key file " + config_.key.string());
    try {
      signer_.emplace(crypto::Ed25519Signer::from_seed_hex(hex));
    } catch (const std::invalid_argument&) {
      throw UsageError("key file " + config_.key.string() + " does not hold a hex seed");
    }
    if (config_.nonce_file.empty()) config_.nonce_file = config_.key.string() + ".nonces";
    nonces_.emplace(config_.nonce_file);
  }

  const CliConfig& config() const { return config_; }
  const UserId& user() const { return config_.user; }
  const crypto::Ed25519Signer& signer() const { return *signer_; }

  Bytes call(const net::Endpoint& ep, const Bytes& frame) const {
    return net::call(ep, frame, config_.timeout);
  }

  Bytes call_bank(const Bytes& frame) const {
    if (!config_.bank) throw UsageError("no bank endpoint (set --bank or TYCOON_BANK)");
    return call(*config_.bank, frame);
  }

  // Live, correctly signed advertisements.
  std::vector<protocol::HostAdvertisement> live_hosts(std::optional<ResourceKind> resource = {}) const {
    if (!config_.sls) throw UsageError("no service locator endpoint (set --sls or TYCOON_SLS)");
    const Bytes reply = expect(call(*config_.sls, protocol::encode(protocol::SlsQuery{resource, 0.0})),
                               MessageType::sls_reply);
    std::vector<protocol::HostAdvertisement> ads;
    for (auto& ad : protocol::decode<protocol::SlsReply>(reply).ads) {
      if (protocol::signature_valid(ad, ad.public_key)) ads.push_back(std::move(ad));
    }
    return ads;
  }

  std::map<HostId, protocol::HostAdvertisement> directory() const {
    std::map<HostId, protocol::HostAdvertisement> out;
    for (auto& ad : live_hosts()) out.emplace(ad.host, std::move(ad));
    return out;
  }

  double balance() const {
    const Bytes reply = expect(call_bank(protocol::encode(protocol::BalanceQuery{user()})),
                               MessageType::balance_reply);
    return protocol::decode<protocol::BalanceReply>(reply).balance;
  }

  protocol::Receipt pay(const std::string& recipient, double amount) const {
    protocol::TransferRequest req{user(), recipient, amount, services::wall_clock(), {}};
    protocol::sign(req, *signer_);
    const Bytes reply = call_bank(protocol::encode(req));
    if (protocol::peek_type(reply) != MessageType::receipt) {
      throw std::runtime_error("bank " + rejection_text(reply));
    }
    return protocol::decode<protocol::Receipt>(reply);
  }

  std::optional<protocol::StatusReply> status(const protocol::HostAdvertisement& ad) const {
    const Bytes reply = call(endpoint_of(ad), protocol::encode(protocol::StatusQuery{user()}));
    if (is_rejection(reply, protocol::Reject::unknown_account)) return std::nullopt;
    return protocol::decode<protocol::StatusReply>(expect(reply, MessageType::status_reply));
  }

  // Sends a nonce-bearing message. After a stale-nonce reject the counter is
  // resynchronized from the host's status and the message re-signed once.
  Bytes send_nonced(const protocol::HostAdvertisement& ad,
                    const std::function<Bytes(std::uint64_t)>& build) {
    const auto ep = endpoint_of(ad);
    Bytes reply = call(ep, build(nonces_->next(ad.host)));
    if (!is_rejection(reply, protocol::Reject::stale_nonce)) return reply;
    const Bytes s = call(ep, protocol::encode(protocol::StatusQuery{user()}));
    if (protocol::peek_type(s) != MessageType::status_reply) return reply;
    nonces_->observe(ad.host, protocol::decode<protocol::StatusReply>(s).nonce_high_water);
    return call(ep, build(nonces_->next(ad.host)));
  }

  static net::Endpoint endpoint_of(const protocol::HostAdvertisement& ad) {
    if (ad.endpoint.empty()) throw std::runtime_error("host advertises no endpoint");
    return net::Endpoint::parse(ad.endpoint);
  }

 private:
  CliConfig config_;
  std::optional<crypto::Ed25519Signer> signer_;
  std::optional<NonceStore> nonces_;
};

const protocol::HostAdvertisement& lookup(const std::map<HostId, protocol::HostAdvertisement>& dir,
                                          const HostId& host) {
  auto it = dir.find(host);
  if (it == dir.end()) throw std::runtime_error("not registered with the service locator");
  return it->second;
}

void print_results(std::ostream& out, bool as_json, const std::string& command,
                   const std::vector<HostResult>& results) {
  if (as_json) {
    json doc{{"command", command}, {"results", json::array()}};
    for (const auto& r : results) {
      json row{{"host", r.host}, {"ok", r.ok}, {"message", r.message}};
      for (const auto& [k, v] : r.detail.items()) row[k] = v;
      doc["results"].push_back(row);
    }
    doc["exit_code"] = exit_code(results);
    out << doc.dump(2) << '\n';
    return;
  }
  std::size_t width = 4;
  for (const auto& r : results) width = std::max(width, r.host.size());
  for (const auto& r : results) {
    out << r.host << std::string(width - r.host.size() + 2, ' ') << (r.ok ? "ok      " : "FAILED  ")
        << r.message << '\n';
  }
  const auto ok = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.ok; });
  out << ok << " of " << results.size() << " hosts succeeded\n";
}

// ---------------------------------------------------------------------------
// Commands

struct Globals {
  std::string config, bank, sls, user, key;
  long timeout_ms = 0;
  std::size_t parallel = 0;
  bool json = false;
};

CliConfig resolve_config(const Globals& g, const EnvLookup& env) {
  std::string path = g.config;
  if (path.empty()) path = env("TYCOON_CONFIG").value_or("");
  CliConfig c;
  if (!path.empty()) {
    c = load_config(path);
  } else if (auto home = env("HOME")) {
    const auto fallback = std::filesystem::path(*home) / ".tycoon" / "config.yaml";
    if (std::filesystem::exists(fallback)) c = load_config(fallback);
  }
  auto pick = [&](const std::string& flag, const char* var) -> std::optional<std::string> {
    if (!flag.empty()) return flag;
    return env(var);
  };
  try {
    if (auto v = pick(g.bank, "TYCOON_BANK")) c.bank = net::Endpoint::parse(*v);
    if (auto v = pick(g.sls, "TYCOON_SLS")) c.sls = net::Endpoint::parse(*v);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (auto v = pick(g.user, "TYCOON_USER")) c.user = *v;
  if (auto v = pick(g.key, "TYCOON_KEY")) c.key = *v;
  if (g.timeout_ms > 0) c.timeout = std::chrono::milliseconds(g.timeout_ms);
  if (g.parallel > 0) c.parallel = g.parallel;
  return c;
}

int cmd_create_account(Session& s, const std::vector<std::string>& words, double interval,
                       const Globals& g, std::ostream& out, std::ostream& err) {
  if (words.size() < 4) throw UsageError("usage: create_account HOST... CPU MEMORY DISK");
  std::vector<HostId> hosts(words.begin(), words.end() - 3);
  std::map<ResourceKind, double> credits;
  for (std::size_t i = 0; i < 3; ++i) {
    const double c = parse_number(words[words.size() - 3 + i], "credits");
    if (c < 0) throw UsageError("credits must be non-negative");
    credits[kAllResources[i]] = c;
  }
  hosts = unique_hosts(hosts);
  const auto dir = s.directory();

  // Refuse up front when the bank balance cannot cover every transfer.
  double needed = 0;
  for (const auto& h : hosts) {
    auto it = dir.find(h);
    if (it == dir.end()) continue;
    for (const auto& [r, c] : credits) {
      if (it->second.find(r)) needed += c;
    }
  }
  const double have = s.balance();
  if (needed > have) {
    err << "insufficient bank funds: need " << fmt(needed) << ", have " << fmt(have)
        << "; nothing was transferred\n";
    return kExitFailed;
  }

  auto results = fan_out(hosts, s.config().parallel, [&](const HostId& host) {
    const auto& ad = lookup(dir, host);
    std::vector<protocol::InitialFunding> funding;
    json applied = json::object();
    for (const auto& [r, c] : credits) {
      if (!ad.find(r)) continue;
      applied[std::string(to_string(r))] = c;
      if (c > 0) funding.push_back({r, s.pay(host, c)});
    }
    const Bytes reply = s.send_nonced(ad, [&](std::uint64_t nonce) {
      protocol::CreateAccountMessage m{s.user(), host, nonce, interval, funding, {}};
      protocol::sign(m, s.signer());
      return protocol::encode(m);
    });
    if (protocol::peek_type(reply) != MessageType::ack) {
      return HostResult{host, false, rejection_text(reply), {{"credits", applied}}};
    }
    std::string msg = "account created with";
    for (const auto& [r, c] : applied.items()) msg += " " + r + " " + fmt(c.get<double>());
    return HostResult{host, true, msg, {{"credits", applied}, {"interval", interval}}};
  });
  print_results(out, g.json, "create_account", results);
  return exit_code(results);
}

int cmd_fund(Session& s, const HostId& host, ResourceKind resource, double amount,
             double interval, const Globals& g, std::ostream& out) {
  if (!(amount > 0)) throw UsageError("amount must be positive");
  if (!(interval > 0)) throw UsageError("interval must be positive");
  const auto dir = s.directory();
  auto results = fan_out({host}, 1, [&](const HostId& h) {
    const auto& ad = lookup(dir, h);
    const auto receipt = s.pay(h, amount);
    const Bytes reply = s.send_nonced(ad, [&](std::uint64_t nonce) {
      protocol::FundMessage m{s.user(), h, nonce, resource, interval, receipt, {}};
      protocol::sign(m, s.signer());
      return protocol::encode(m);
    });
    if (protocol::peek_type(reply) != MessageType::ack) return HostResult{h, false, rejection_text(reply)};
    return HostResult{h, true,
                      "funded " + std::string(to_string(resource)) + " with " + fmt(amount) +
                          " over " + fmt(interval) + " s",
                      {{"resource", to_string(resource)}, {"amount", amount}, {"interval", interval}}};
  });
  print_results(out, g.json, "fund", results);
  return exit_code(results);
}

int cmd_set_interval(Session& s, const HostId& host, ResourceKind resource, double interval,
                     const Globals& g, std::ostream& out) {
  if (!(interval > 0)) throw UsageError("interval must be positive");
  const auto dir = s.directory();
  auto results = fan_out({host}, 1, [&](const HostId& h) {
    const Bytes reply = s.send_nonced(lookup(dir, h), [&](std::uint64_t nonce) {
      protocol::SetIntervalMessage m{s.user(), h, nonce, resource, interval, {}};
      protocol::sign(m, s.signer());
      return protocol::encode(m);
    });
    if (protocol::peek_type(reply) != MessageType::ack) return HostResult{h, false, rejection_text(reply)};
    return HostResult{h, true,
                      std::string(to_string(resource)) + " interval set to " + fmt(interval) + " s",
                      {{"resource", to_string(resource)}, {"interval", interval}}};
  });
  print_results(out, g.json, "set_interval", results);
  return exit_code(results);
}

int cmd_get_status(Session& s, std::vector<HostId> hosts, const Globals& g, std::ostream& out) {
  hosts = unique_hosts(hosts);
  const auto dir = s.directory();
  auto results = fan_out(hosts, s.config().parallel, [&](const HostId& host) {
    auto st = s.status(lookup(dir, host));
    if (!st) return HostResult{host, false, "rejected: unknown-account"};
    json rows = json::array();
    for (const auto& r : st->resources) {
      rows.push_back({{"resource", to_string(r.resource)},
                      {"balance", r.balance},
                      {"interval", r.interval},
                      {"share", r.last_share},
                      {"charge", r.last_charge},
                      {"evicted", r.evicted}});
    }
    return HostResult{host, true, "", {{"nonce_high_water", st->nonce_high_water}, {"resources", rows}}};
  });
  if (g.json) {
    print_results(out, true, "get_status", results);
    return exit_code(results);
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %-8s %14s %12s %8s %12s %s\n", "HOST", "RESOURCE",
                "BALANCE", "INTERVAL", "SHARE", "CHARGE/S", "EVICTED");
  out << line;
  for (const auto& r : results) {
    if (!r.ok) {
      out << r.host << "  FAILED  " << r.message << '\n';
      continue;
    }
    for (const auto& row : r.detail["resources"]) {
      std::snprintf(line, sizeof line, "%-12s %-8s %14.6f %12.6g %8.4f %12.6g %s\n", r.host.c_str(),
                    row["resource"].get<std::string>().c_str(), row["balance"].get<double>(),
                    row["interval"].get<double>(), row["share"].get<double>(),
                    row["charge"].get<double>(), row["evicted"].get<bool>() ? "yes" : "no");
      out << line;
    }
  }
  return exit_code(results);
}

std::map<HostId, double> parse_weights(const std::string& text) {
  std::map<HostId, double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("weights look like host=w,host=w");
    const double w = parse_number(item.substr(eq + 1), "weight");
    if (w < 0) throw UsageError("weights must be non-negative");
    out[item.substr(0, eq)] = w;
  }
  return out;
}

struct BidOptions {
  double budget = 0;
  double interval = 600;
  std::string weights;
  double lambda = 0;
  bool dry_run = false;
  bool yes = false;
};

int cmd_bid(Session& s, const BidOptions& o, const Globals& g, std::ostream& out,
            std::ostream& err, std::istream& in) {
  if (!(o.budget > 0)) throw UsageError("--budget must be positive");
  if (!(o.interval > 0)) throw UsageError("--interval must be positive");
  if (o.lambda < 0) throw UsageError("--lambda must be non-negative");
  const auto weights = parse_weights(o.weights);

  const auto ads = s.live_hosts(ResourceKind::cpu);
  if (ads.empty()) {
    err << "no live hosts registered with the service locator\n";
    return kExitFailed;
  }
  std::map<HostId, protocol::HostAdvertisement> dir;
  for (const auto& ad : ads) dir.emplace(ad.host, ad);
  std::vector<HostId> hosts;
  for (const auto& ad : ads) hosts.push_back(ad.host);

  // Own last charge per host, so our bid is not counted as competition.
  std::map<HostId, std::optional<double>> own;
  std::mutex own_mutex;
  fan_out(hosts, s.config().parallel, [&](const HostId& host) {
    std::optional<double> charge;
    if (auto st = s.status(dir.at(host))) {
      charge = 0.0;
      for (const auto& r : st->resources) {
        if (r.resource == ResourceKind::cpu) charge = r.last_charge;
      }
    }
    std::lock_guard lock(own_mutex);
    own[host] = charge;
    return HostResult{host, true};
  });

  std::vector<agent::HostMarketView> views;
  for (const auto& ad : ads) {
    const auto* cpu = ad.find(ResourceKind::cpu);
    agent::HostMarketView v;
    v.host = ad.host;
    v.capacity = cpu->capacity;
    v.total_spent = cpu->total_spent;
    v.others_bid = agent::estimate_others_bid(cpu->total_spent, own[ad.host].value_or(0.0));
    auto w = weights.find(ad.host);
    v.weight = w == weights.end() ? 1.0 : w->second;
    views.push_back(v);
  }
  agent::BidVector plan;
  try {
    plan = agent::best_response_with_threshold(views, o.budget / o.interval, o.lambda);
  } catch (const std::invalid_argument& e) {
    err << "cannot plan: " << e.what() << '\n';
    return kExitFailed;
  }

  std::vector<std::pair<HostId, double>> funded;
  for (const auto& [host, rate] : plan.bids) {
    if (rate > 0) funded.emplace_back(host, rate);
  }
  json plan_json = json::array();
  for (const auto& v : views) {
    auto it = plan.bids.find(v.host);
    const double rate = it == plan.bids.end() ? 0.0 : it->second;
    plan_json.push_back({{"host", v.host},
                         {"weight", v.weight},
                         {"others_bid", v.others_bid},
                         {"bid", rate},
                         {"amount", rate * o.interval},
                         {"has_account", own[v.host].has_value()}});
  }
  const double spent = plan.total() * o.interval;
  if (g.json && (o.dry_run || funded.empty())) {
    out << json{{"command", "bid"},
                {"budget", o.budget},
                {"interval", o.interval},
                {"lambda", o.lambda},
                {"plan", plan_json},
                {"spent", spent},
                {"unspent", o.budget - spent},
                {"executed", false}}
               .dump(2)
        << '\n';
  } else if (!g.json) {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %8s %14s %14s %12s\n", "HOST", "WEIGHT", "OTHERS/S",
                  "BID/S", "CREDITS");
    out << line;
    for (const auto& row : plan_json) {
      std::snprintf(line, sizeof line, "%-12s %8.4g %14.6g %14.6g %12.6g\n",
                    row["host"].get<std::string>().c_str(), row["weight"].get<double>(),
                    row["others_bid"].get<double>(), row["bid"].get<double>(),
                    row["amount"].get<double>());
      out << line;
    }
    out << "plan spends " << fmt(spent) << " of " << fmt(o.budget) << " credits over "
        << fmt(o.interval) << " s\n";
  }
  if (funded.empty()) {
    if (!g.json) out << "no host is worth funding at this threshold; nothing to do\n";
    return kExitOk;
  }
  if (o.dry_run) return kExitOk;
  if (!o.yes) {
    out << "execute this plan? [y/N] " << std::flush;
    std::string answer;
    std::getline(in, answer);
    if (answer != "y" && answer != "Y" && answer != "yes") {
      out << "aborted\n";
      return kExitFailed;
    }
  }

  std::vector<HostId> targets;
  std::map<HostId, double> amounts;
  for (const auto& [host, rate] : funded) {
    targets.push_back(host);
    amounts[host] = rate * o.interval;
  }
  auto results = fan_out(targets, s.config().parallel, [&](const HostId& host) {
    const auto& ad = dir.at(host);
    const double amount = amounts.at(host);
    const auto receipt = s.pay(host, amount);
    const bool create = !own[host].has_value();
    const Bytes reply = s.send_nonced(ad, [&](std::uint64_t nonce) {
      if (create) {
        protocol::CreateAccountMessage m{s.user(), host, nonce, o.interval,
                                         {{ResourceKind::cpu, receipt}}, {}};
        protocol::sign(m, s.signer());
        return protocol::encode(m);
      }
      protocol::FundMessage m{s.user(), host, nonce, ResourceKind::cpu, o.interval, receipt, {}};
      protocol::sign(m, s.signer());
      return protocol::encode(m);
    });
    if (protocol::peek_type(reply) != MessageType::ack) return HostResult{host, false, rejection_text(reply)};
    return HostResult{host, true,
                      std::string(create ? "created account with " : "funded ") + fmt(amount) +
                          " over " + fmt(o.interval) + " s",
                      {{"amount", amount}, {"interval", o.interval}}};
  });
  if (g.json) {
    json doc{{"command", "bid"}, {"plan", plan_json}, {"executed", true}, {"results", json::array()}};
    for (const auto& r : results) {
      doc["results"].push_back({{"host", r.host}, {"ok", r.ok}, {"message", r.message}});
    }
    doc["exit_code"] = exit_code(results);
    out << doc.dump(2) << '\n';
  } else {
    print_results(out, false, "bid", results);
  }
  return exit_code(results);
}

int cmd_sim(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out_path,
            const Globals& g, std::ostream& out, std::ostream& err) {
  sim::Scenario scenario;
  try {
    scenario = sim::load_scenario(path);
  } catch (const sim::ScenarioError& e) {
    err << path << ": invalid scenario\n";
    for (const auto& p : e.problems()) err << "  " << p << '\n';
    return kExitFailed;
  }
  const auto result = seed ? sim::run_scenario(scenario, *seed) : sim::run_scenario(scenario);

  std::ostream* summary = &out;
  if (out_path.empty() || out_path == "-") {
    result.trace.write_csv(out);
    summary = &err;
  } else {
    std::ofstream file(out_path, std::ios::trunc);
    result.trace.write_csv(file);
    if (!file) {
      err << "cannot write " << out_path << '\n';
      return kExitFailed;
    }
  }

  double worst = 0, sum = 0;
  std::size_t measured = 0;
  for (const auto& c : result.bid_changes) {
    if (!c.effective) continue;
    worst = std::max(worst, *c.effective - c.accepted);
    sum += *c.effective - c.accepted;
    ++measured;
  }
  const double tolerance = 1e-6 * std::max(1.0, result.conservation.total_issued / 1e6);
  const bool conserved = result.max_conservation_error <= tolerance;
  const bool healthy = conserved && result.work_conserving;

  if (g.json) {
    json users = json::object();
    for (const auto& [name, st] : result.users) {
      users[name] = {{"work", st.work}, {"frames", st.frames},
                     {"throughput", st.work / scenario.duration}};
      if (st.finished_at) users[name]["finished_at"] = *st.finished_at;
    }
    *summary << json{{"scenario", scenario.name},
                     {"seed", seed.value_or(scenario.seed)},
                     {"users", users},
                     {"bid_changes", result.bid_changes.size()},
                     {"max_reallocation_latency", worst},
                     {"mean_reallocation_latency", measured ? sum / measured : 0.0},
                     {"max_conservation_error", result.max_conservation_error},
                     {"work_conserving", result.work_conserving},
                     {"messages", result.messages}}
                    .dump(2)
             << '\n';
  } else {
    *summary << "scenario " << scenario.name << " (seed " << seed.value_or(scenario.seed) << ", "
             << fmt(scenario.duration) << " s, " << result.periods << " host periods, "
             << result.messages << " messages)\n";
    for (const auto& [name, st] : result.users) {
      *summary << "  " << name << ": work " << fmt(st.work) << ", frames " << st.frames
               << ", throughput " << fmt(st.work / scenario.duration) << "/s";
      if (st.finished_at) *summary << ", finished at " << fmt(*st.finished_at);
      *summary << '\n';
    }
    if (measured) {
      *summary << "  reallocation latency: max " << fmt(worst) << " s, mean "
               << fmt(sum / measured) << " s over " << measured << " changes\n";
    }
    *summary << "  conservation error " << fmt(result.max_conservation_error)
             << (conserved ? "" : " (VIOLATED)") << ", work conserving "
             << (result.work_conserving ? "yes" : "NO") << '\n';
  }
  return healthy ? kExitOk : kExitPartial;
}

int cmd_keygen(const std::string& path, bool force, const Globals& g, std::ostream& out) {
  if (path.empty()) throw UsageError("keygen needs --out FILE");
  if (std::filesystem::exists(path) && !force) {
    throw UsageError(path + " exists; pass --force to overwrite");
  }
  const auto signer = crypto::Ed25519Signer::generate();
  {
    std::ofstream file(path, std::ios::trunc);
    file << signer.seed_hex() << '\n';
    if (!file) throw std::runtime_error("cannot write " + path);
  }
  ::chmod(path.c_str(), 0600);
  if (g.json) {
    out << json{{"key_file", path}, {"public_key", signer.public_key().hex()}}.dump(2) << '\n';
  } else {
    out << signer.public_key().hex() << '\n';
  }
  return kExitOk;
}

int cmd_mint(Session& s, const UserId& owner, double amount, const Globals& g, std::ostream& out,
             std::ostream& err) {
  if (!(amount > 0)) throw UsageError("amount must be positive");
  protocol::MintRequest req{s.user(), owner, amount, services::wall_clock(), {}};
  protocol::sign(req, s.signer());
  const Bytes reply = s.call_bank(protocol::encode(req));
  if (protocol::peek_type(reply) != MessageType::ack) {
    err << "bank " << rejection_text(reply) << '\n';
    return kExitFailed;
  }
  if (g.json) {
    out << json{{"owner", owner}, {"minted", amount}}.dump(2) << '\n';
  } else {
    out << "minted " << fmt(amount) << " for " << owner << '\n';
  }
  return kExitOk;
}

int cmd_balance(Session& s, const Globals& g, std::ostream& out) {
  const double b = s.balance();
  if (g.json) {
    out << json{{"user", s.user()}, {"balance", b}}.dump(2) << '\n';
  } else {
    out << s.user() << ": " << fmt(b) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            std::istream& in, const EnvLookup& env) {
  CLI::App app{"Market-based resource allocation client", "tycoon"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "YAML config file");
  app.add_option("--bank", g.bank, "bank address:port");
  app.add_option("--sls", g.sls, "service locator address:port");
  app.add_option("--user", g.user, "user identity");
  app.add_option("--key", g.key, "file holding the user's hex seed");
  app.add_option("--timeout", g.timeout_ms, "per-request timeout in milliseconds");
  app.add_option("--parallel", g.parallel, "hosts contacted concurrently (default 16)");
  app.add_flag("--json", g.json, "machine-readable output");

  auto* create = app.add_subcommand("create_account", "open accounts: HOST... CPU MEMORY DISK");
  std::vector<std::string> create_words;
  double create_interval = auctioneer::kDefaultInterval;
  create->add_option("words", create_words, "hosts followed by cpu, memory and disk credits")
      ->required();
  create->add_option("--interval", create_interval, "spending interval in seconds");

  auto* fund = app.add_subcommand("fund", "add credits: HOST RESOURCE AMOUNT INTERVAL");
  std::string fund_host, fund_resource;
  double fund_amount = 0, fund_interval = 0;
  fund->add_option("host", fund_host)->required();
  fund->add_option("resource", fund_resource)->required();
  fund->add_option("amount", fund_amount)->required();
  fund->add_option("interval", fund_interval)->required();

  auto* setint = app.add_subcommand("set_interval", "change the spending interval");
  std::string si_host, si_resource;
  double si_interval = 0;
  setint->add_option("host", si_host)->required();
  setint->add_option("resource", si_resource)->required();
  setint->add_option("interval", si_interval)->required();

  auto* status = app.add_subcommand("get_status", "show balances, intervals and shares");
  std::vector<std::string> status_hosts;
  status->add_option("hosts", status_hosts)->required();

  auto* bid = app.add_subcommand("bid", "compute and execute a best-response bid plan");
  BidOptions bid_options;
  bid->add_option("--budget", bid_options.budget, "credits to spend")->required();
  bid->add_option("--interval", bid_options.interval, "spending interval in seconds");
  bid->add_option("--weights", bid_options.weights, "host=w,... (missing hosts weigh 1)");
  bid->add_option("--lambda", bid_options.lambda, "marginal-value threshold");
  bid->add_flag("--dry-run", bid_options.dry_run, "print the plan only");
  bid->add_flag("--yes", bid_options.yes, "execute without asking");

  auto* simc = app.add_subcommand("sim", "run a scenario and write its trace as CSV");
  std::string sim_path, sim_out;
  std::optional<std::uint64_t> sim_seed;
  simc->add_option("scenario", sim_path)->required();
  simc->add_option("--seed", sim_seed, "override the scenario seed");
  simc->add_option("--out", sim_out, "trace file (default: standard output)");

  auto* keygen = app.add_subcommand("keygen", "create a new signing key");
  std::string keygen_out;
  bool keygen_force = false;
  keygen->add_option("--out", keygen_out, "key file to write")->required();
  keygen->add_flag("--force", keygen_force, "overwrite an existing file");

  auto* mint = app.add_subcommand("mint", "issue credits (administrator key)");
  std::string mint_owner;
  double mint_amount = 0;
  mint->add_option("owner", mint_owner)->required();
  mint->add_option("amount", mint_amount)->required();

  auto* balance = app.add_subcommand("balance", "show the bank balance");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitFailed;
  }

  try {
    if (simc->parsed()) return cmd_sim(sim_path, sim_seed, sim_out, g, out, err);
    if (keygen->parsed()) return cmd_keygen(keygen_out, keygen_force, g, out);

    Session session(resolve_config(g, env));
    if (create->parsed()) {
      if (!(create_interval > 0)) throw UsageError("--interval must be positive");
      return cmd_create_account(session, create_words, create_interval, g, out, err);
    }
    if (fund->parsed()) {
      return cmd_fund(session, fund_host, parse_resource_arg(fund_resource), fund_amount,
                      fund_interval, g, out);
    }
    if (setint->parsed()) {
      return cmd_set_interval(session, si_host, parse_resource_arg(si_resource), si_interval, g,
                              out);
    }
    if (status->parsed()) return cmd_get_status(session, status_hosts, g, out);
    if (bid->parsed()) return cmd_bid(session, bid_options, g, out, err, in);
    if (mint->parsed()) return cmd_mint(session, mint_owner, mint_amount, g, out, err);
    if (balance->parsed()) return cmd_balance(session, g, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailed;
  } catch (const net::ConnectionError& e) {
    err << "connection error: " << e.what() << '\n';
    return kExitFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitFailed;
}

}  // namespace tycoon::cli
