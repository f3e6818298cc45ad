#include "tycoon/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tycoon::sim {

namespace {

struct Problem {
  std::string path;
  std::string message;
};

std::string join(const std::vector<std::string>& problems) {
  std::string out = "invalid scenario:";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

bool positive(double x) { return x > 0 && std::isfinite(x); }
bool non_negative(double x) { return x >= 0 && std::isfinite(x); }

std::string idx(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

std::vector<Problem> check(const Scenario& s) {
  std::vector<Problem> out;
  auto fail = [&](std::string path, std::string message) {
    out.push_back({std::move(path), std::move(message)});
  };

  if (!positive(s.duration)) fail("duration", "must be positive");
  if (!positive(s.period)) fail("period", "must be positive");
  if (!positive(s.register_interval)) fail("sls.register_interval", "must be positive");
  if (!positive(s.expiry)) fail("sls.expiry", "must be positive");
  if (!positive(s.max_skew)) fail("max_skew", "must be positive");
  if (!non_negative(s.eviction_threshold) || s.eviction_threshold >= 1) {
    fail("eviction_threshold", "must be in [0, 1)");
  }
  if (!positive(s.default_interval)) fail("default_interval", "must be positive");
  if (s.latency.kind == LatencyModel::Kind::constant) {
    if (!non_negative(s.latency.value)) fail("latency.value", "must be non-negative");
  } else if (!non_negative(s.latency.min) || !(s.latency.max >= s.latency.min) ||
             !std::isfinite(s.latency.max)) {
    fail("latency", "uniform latency needs 0 <= min <= max");
  }
  if (!non_negative(s.funding.income_period)) fail("funding.income_period", "must be non-negative");
  if (!non_negative(s.funding.sweep_period)) fail("funding.sweep_period", "must be non-negative");

  static const std::set<std::string> reserved = {"bank", "sls", "admin"};
  std::set<std::string> names;
  if (s.hosts.empty()) fail("hosts", "at least one host is required");
  for (std::size_t i = 0; i < s.hosts.size(); ++i) {
    const auto& h = s.hosts[i];
    const auto path = idx("hosts", i);
    if (h.name.empty()) fail(path + ".name", "must not be empty");
    if (reserved.count(h.name)) fail(path + ".name", "'" + h.name + "' is reserved");
    if (!names.insert(h.name).second) fail(path + ".name", "duplicate name '" + h.name + "'");
    if (!positive(h.speed)) fail(path + ".speed", "must be positive");
    if (h.capacity.empty()) fail(path, "offers no resources");
    for (const auto& [r, c] : h.capacity) {
      if (!positive(c)) fail(path + "." + std::string(to_string(r)), "capacity must be positive");
    }
  }

  auto known_hosts = [&](const std::vector<HostId>& hosts, const std::string& path) {
    for (const auto& h : hosts) {
      if (!s.find_host(h)) fail(path, "unknown host '" + h + "'");
    }
  };

  for (std::size_t i = 0; i < s.users.size(); ++i) {
    const auto& u = s.users[i];
    const auto path = idx("users", i);
    if (u.name.empty()) fail(path + ".name", "must not be empty");
    if (reserved.count(u.name)) fail(path + ".name", "'" + u.name + "' is reserved");
    if (!names.insert(u.name).second) fail(path + ".name", "duplicate name '" + u.name + "'");
    if (!non_negative(u.bank)) fail(path + ".bank", "must be non-negative");
    if (!non_negative(u.income)) fail(path + ".income", "must be non-negative");

    const auto& w = u.workload;
    const auto wpath = path + ".workload";
    if (w.kind != WorkloadSpec::Kind::none) {
      if (w.windows.empty()) fail(wpath, "needs a start time");
      double prev = -kForever;
      for (std::size_t k = 0; k < w.windows.size(); ++k) {
        const auto& win = w.windows[k];
        if (!std::isfinite(win.start) || !(win.stop > win.start) || win.start < prev) {
          fail(idx(wpath + ".windows", k), "windows must be ordered with start < stop");
        }
        prev = win.stop;
      }
      if (!positive(w.frame_cost)) fail(wpath + ".frame_cost", "must be positive");
      if (w.kind == WorkloadSpec::Kind::batch && !positive(w.work)) {
        fail(wpath + ".work", "batch jobs need positive total work");
      }
    }

    for (std::size_t k = 0; k < u.actions.size(); ++k) {
      const auto& a = u.actions[k];
      const auto apath = idx(path + ".actions", k);
      if (!(a.at == kSetup || std::isfinite(a.at))) fail(apath + ".at", "must be a time or 'setup'");
      known_hosts(a.hosts, apath + ".hosts");
      switch (a.kind) {
        case ActionSpec::Kind::fund:
          if (!positive(a.amount)) fail(apath + ".amount", "must be positive");
          if (!positive(a.interval)) fail(apath + ".interval", "must be positive");
          break;
        case ActionSpec::Kind::set_interval:
          if (!positive(a.interval)) fail(apath + ".interval", "must be positive");
          break;
        case ActionSpec::Kind::create_account:
          if (!(a.interval == 0 || positive(a.interval))) fail(apath + ".interval", "must be positive");
          for (const auto& [r, c] : a.credits) {
            if (!non_negative(c)) fail(apath + ".credits", "must be non-negative");
          }
          break;
      }
    }

    const auto& ag = u.agent;
    if (ag.enabled) {
      const auto gpath = path + ".agent";
      if (!non_negative(ag.start)) fail(gpath + ".start", "must be non-negative");
      if (!positive(ag.every)) fail(gpath + ".every", "must be positive");
      if (!positive(ag.budget)) fail(gpath + ".budget", "must be positive");
      if (!positive(ag.interval)) fail(gpath + ".interval", "must be positive");
      if (!non_negative(ag.lambda)) fail(gpath + ".lambda", "must be non-negative");
      for (const auto& [h, wt] : ag.weights) {
        if (!s.find_host(h)) fail(gpath + ".weights", "unknown host '" + h + "'");
        if (!non_negative(wt)) fail(gpath + ".weights", "weights must be non-negative");
      }
    }
  }

  for (std::size_t i = 0; i < s.kills.size(); ++i) {
    const auto path = idx("kills", i);
    if (!non_negative(s.kills[i].at)) fail(path + ".at", "must be non-negative");
    if (!s.find_host(s.kills[i].host)) fail(path + ".host", "unknown host '" + s.kills[i].host + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// YAML reader. Every node read records its line so later semantic problems
// can point back into the file.

class Reader {
 public:
  std::vector<std::string> problems;
  std::map<std::string, int> lines;

  void note(const std::string& path, const YAML::Node& node) {
    if (node.Mark().line >= 0) lines.emplace(path, node.Mark().line + 1);
  }

  void error(const YAML::Node& node, const std::string& path, const std::string& what) {
    problems.push_back("line " + std::to_string(node.Mark().line + 1) + ": " + path + ": " + what);
  }

  bool expect_map(const YAML::Node& node, const std::string& path,
                  std::initializer_list<const char*> allowed) {
    note(path, node);
    if (!node.IsMap()) {
      error(node, path, "expected a mapping");
      return false;
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!ok.count(key)) error(kv.first, path.empty() ? key : path + "." + key, "unknown field");
    }
    return true;
  }

  void number(const YAML::Node& parent, const char* key, const std::string& path, double& out) {
    const auto node = parent[key];
    if (!node) return;
    const auto p = path.empty() ? std::string(key) : path + "." + key;
    note(p, node);
    try {
      if (!node.IsScalar()) throw YAML::Exception(node.Mark(), "");
      const auto text = node.Scalar();
      if (text == "inf" || text == "never") {
        out = kForever;
        return;
      }
      out = node.as<double>();
    } catch (const YAML::Exception&) {
      error(node, p, "expected a number");
    }
  }

  void text(const YAML::Node& parent, const char* key, const std::string& path, std::string& out) {
    const auto node = parent[key];
    if (!node) return;
    const auto p = path.empty() ? std::string(key) : path + "." + key;
    note(p, node);
    if (!node.IsScalar()) {
      error(node, p, "expected a string");
      return;
    }
    out = node.Scalar();
  }

  std::optional<ResourceKind> resource(const YAML::Node& node, const std::string& path) {
    auto r = node.IsScalar() ? parse_resource(node.Scalar()) : std::nullopt;
    if (!r) error(node, path, "unknown resource");
    return r;
  }

  std::vector<HostId> host_list(const YAML::Node& node, const std::string& path) {
    note(path, node);
    std::vector<HostId> out;
    if (node.IsScalar()) {
      if (node.Scalar() != "all") out.push_back(node.Scalar());
    } else if (node.IsSequence()) {
      for (const auto& h : node) out.push_back(h.as<std::string>());
    } else {
      error(node, path, "expected 'all', a host name or a list of hosts");
    }
    return out;
  }

  Scenario read(const YAML::Node& root) {
    Scenario s;
    if (!expect_map(root, "", {"name", "seed", "duration", "period", "latency", "sls", "max_skew",
                               "eviction_threshold", "default_interval", "funding", "hosts",
                               "users", "kills"})) {
      return s;
    }
    text(root, "name", "", s.name);
    if (auto n = root["seed"]) {
      note("seed", n);
      try {
        s.seed = n.as<std::uint64_t>();
      } catch (const YAML::Exception&) {
        error(n, "seed", "expected a non-negative integer");
      }
    }
    if (!root["duration"]) {
      problems.push_back("line 1: duration: required field missing");
    }
    number(root, "duration", "", s.duration);
    number(root, "period", "", s.period);
    number(root, "max_skew", "", s.max_skew);
    number(root, "eviction_threshold", "", s.eviction_threshold);
    number(root, "default_interval", "", s.default_interval);

    if (auto lat = root["latency"]) {
      if (lat.IsScalar()) {
        number(root, "latency", "", s.latency.value);
      } else if (expect_map(lat, "latency", {"model", "value", "min", "max"})) {
        std::string model = "constant";
        text(lat, "model", "latency", model);
        if (model == "uniform") {
          s.latency.kind = LatencyModel::Kind::uniform;
        } else if (model != "constant") {
          error(lat["model"], "latency.model", "expected 'constant' or 'uniform'");
        }
        number(lat, "value", "latency", s.latency.value);
        number(lat, "min", "latency", s.latency.min);
        number(lat, "max", "latency", s.latency.max);
      }
    }
    if (auto sls = root["sls"]; sls && expect_map(sls, "sls", {"register_interval", "expiry"})) {
      number(sls, "register_interval", "sls", s.register_interval);
      number(sls, "expiry", "sls", s.expiry);
    }
    if (auto f = root["funding"];
        f && expect_map(f, "funding", {"income_period", "sweep_period"})) {
      number(f, "income_period", "funding", s.funding.income_period);
      number(f, "sweep_period", "funding", s.funding.sweep_period);
    }

    if (auto hosts = root["hosts"]) {
      note("hosts", hosts);
      if (!hosts.IsSequence()) {
        error(hosts, "hosts", "expected a list");
      } else {
        for (std::size_t i = 0; i < hosts.size(); ++i) read_host(hosts[i], s);
      }
    }
    if (auto users = root["users"]) {
      note("users", users);
      if (!users.IsSequence()) {
        error(users, "users", "expected a list");
      } else {
        for (std::size_t i = 0; i < users.size(); ++i) {
          s.users.push_back(read_user(users[i], idx("users", i)));
        }
      }
    }
    if (auto kills = root["kills"]) {
      note("kills", kills);
      if (!kills.IsSequence()) {
        error(kills, "kills", "expected a list");
      } else {
        for (std::size_t i = 0; i < kills.size(); ++i) {
          const auto path = idx("kills", i);
          KillSpec k;
          if (expect_map(kills[i], path, {"at", "host"})) {
            number(kills[i], "at", path, k.at);
            text(kills[i], "host", path, k.host);
          }
          s.kills.push_back(k);
        }
      }
    }
    return s;
  }

  // `count: n` expands into name0 .. name{n-1}.
  void read_host(const YAML::Node& node, Scenario& s) {
    const auto first = s.hosts.size();
    const auto path = idx("hosts", first);
    if (!expect_map(node, path, {"name", "count", "cpu", "memory", "disk", "speed"})) return;
    HostSpec h;
    text(node, "name", path, h.name);
    number(node, "speed", path, h.speed);
    bool any = false;
    std::map<ResourceKind, double> caps;
    for (auto r : kAllResources) {
      const std::string key(to_string(r));
      if (node[key]) {
        double c = 0;
        number(node, key.c_str(), path, c);
        caps[r] = c;
        any = true;
      }
    }
    if (any) h.capacity = caps;
    double count = 1;
    number(node, "count", path, count);
    if (!(count >= 1) || count != std::floor(count) || count > 100000) {
      error(node["count"], path + ".count", "expected a positive integer");
      count = 1;
    }
    if (count == 1 && !node["count"]) {
      s.hosts.push_back(h);
      return;
    }
    for (int i = 0; i < static_cast<int>(count); ++i) {
      HostSpec copy = h;
      copy.name = h.name + std::to_string(i);
      lines.emplace(idx("hosts", s.hosts.size()), node.Mark().line + 1);
      s.hosts.push_back(copy);
    }
  }

  UserSpec read_user(const YAML::Node& node, const std::string& path) {
    UserSpec u;
    if (!expect_map(node, path, {"name", "bank", "income", "workload", "actions", "agent"})) return u;
    text(node, "name", path, u.name);
    number(node, "bank", path, u.bank);
    number(node, "income", path, u.income);
    if (auto w = node["workload"]) u.workload = read_workload(w, path + ".workload");
    if (auto actions = node["actions"]) {
      note(path + ".actions", actions);
      if (!actions.IsSequence()) {
        error(actions, path + ".actions", "expected a list");
      } else {
        for (std::size_t i = 0; i < actions.size(); ++i) {
          u.actions.push_back(read_action(actions[i], idx(path + ".actions", i)));
        }
      }
    }
    if (auto a = node["agent"]) u.agent = read_agent(a, path + ".agent");
    return u;
  }

  WorkloadSpec read_workload(const YAML::Node& node, const std::string& path) {
    WorkloadSpec w;
    if (!expect_map(node, path, {"kind", "start", "stop", "windows", "work", "frame_cost"})) return w;
    std::string kind;
    text(node, "kind", path, kind);
    if (kind == "continuous") {
      w.kind = WorkloadSpec::Kind::continuous;
    } else if (kind == "bursty") {
      w.kind = WorkloadSpec::Kind::bursty;
    } else if (kind == "batch") {
      w.kind = WorkloadSpec::Kind::batch;
    } else if (kind == "none") {
      w.kind = WorkloadSpec::Kind::none;
    } else {
      error(node["kind"] ? node["kind"] : node, path + ".kind",
            "expected continuous, bursty, batch or none");
    }
    number(node, "work", path, w.work);
    number(node, "frame_cost", path, w.frame_cost);
    if (node["start"] || node["stop"]) {
      Window win;
      number(node, "start", path, win.start);
      number(node, "stop", path, win.stop);
      w.windows.push_back(win);
    }
    if (auto windows = node["windows"]) {
      note(path + ".windows", windows);
      if (!windows.IsSequence()) {
        error(windows, path + ".windows", "expected a list of [start, stop] pairs");
      } else {
        for (std::size_t i = 0; i < windows.size(); ++i) {
          const auto& pair = windows[i];
          const auto wpath = idx(path + ".windows", w.windows.size());
          note(wpath, pair);
          Window win;
          try {
            if (!pair.IsSequence() || pair.size() != 2) throw YAML::Exception(pair.Mark(), "");
            win.start = pair[0].as<double>();
            win.stop = pair[1].Scalar() == "never" ? kForever : pair[1].as<double>();
          } catch (const YAML::Exception&) {
            error(pair, wpath, "expected [start, stop]");
          }
          w.windows.push_back(win);
        }
      }
    }
    if (w.kind != WorkloadSpec::Kind::none && w.windows.empty()) w.windows.push_back({});
    return w;
  }

  ActionSpec read_action(const YAML::Node& node, const std::string& path) {
    ActionSpec a;
    if (!expect_map(node, path, {"at", "do", "hosts", "resource", "amount", "credits", "interval"})) {
      return a;
    }
    if (auto at = node["at"]) {
      if (at.IsScalar() && at.Scalar() == "setup") {
        note(path + ".at", at);
        a.at = kSetup;
      } else {
        number(node, "at", path, a.at);
      }
    }
    std::string kind;
    text(node, "do", path, kind);
    if (kind == "create_account") {
      a.kind = ActionSpec::Kind::create_account;
    } else if (kind == "fund") {
      a.kind = ActionSpec::Kind::fund;
    } else if (kind == "set_interval") {
      a.kind = ActionSpec::Kind::set_interval;
    } else {
      error(node["do"] ? node["do"] : node, path + ".do",
            "expected create_account, fund or set_interval");
    }
    if (auto h = node["hosts"]) a.hosts = host_list(h, path + ".hosts");
    if (auto r = node["resource"]) {
      note(path + ".resource", r);
      if (auto kind_r = resource(r, path + ".resource")) a.resource = *kind_r;
    }
    number(node, "amount", path, a.amount);
    number(node, "interval", path, a.interval);
    if (auto c = node["credits"]) {
      const auto cpath = path + ".credits";
      note(cpath, c);
      try {
        if (c.IsScalar()) {
          a.credits[ResourceKind::cpu] = c.as<double>();
        } else if (c.IsSequence()) {
          if (c.size() > 3) throw YAML::Exception(c.Mark(), "");
          for (std::size_t i = 0; i < c.size(); ++i) a.credits[kAllResources[i]] = c[i].as<double>();
        } else {
          for (const auto& kv : c) {
            if (auto r = resource(kv.first, cpath)) a.credits[*r] = kv.second.as<double>();
          }
        }
      } catch (const YAML::Exception&) {
        error(c, cpath, "expected a number, [cpu, memory, disk] or a resource mapping");
      }
    }
    return a;
  }

  AgentSpec read_agent(const YAML::Node& node, const std::string& path) {
    AgentSpec g;
    if (!expect_map(node, path, {"policy", "start", "every", "budget", "interval", "weights", "lambda"})) {
      return g;
    }
    std::string policy = "best_response";
    text(node, "policy", path, policy);
    if (policy != "best_response") error(node["policy"], path + ".policy", "expected best_response");
    g.enabled = true;
    number(node, "start", path, g.start);
    number(node, "every", path, g.every);
    number(node, "budget", path, g.budget);
    number(node, "interval", path, g.interval);
    number(node, "lambda", path, g.lambda);
    if (auto w = node["weights"]) {
      note(path + ".weights", w);
      if (w.IsScalar() && w.Scalar() == "cost_effectiveness") {
        g.cost_effectiveness = true;
      } else if (w.IsScalar() && w.Scalar() == "static") {
      } else if (w.IsMap()) {
        for (const auto& kv : w) {
          try {
            g.weights[kv.first.as<std::string>()] = kv.second.as<double>();
          } catch (const YAML::Exception&) {
            error(kv.second, path + ".weights", "expected a number");
          }
        }
      } else {
        error(w, path + ".weights", "expected static, cost_effectiveness or a host mapping");
      }
    }
    return g;
  }
};

int line_for(const std::map<std::string, int>& lines, std::string path) {
  while (!path.empty()) {
    if (auto it = lines.find(path); it != lines.end()) return it->second;
    const auto cut = path.find_last_of(".[");
    if (cut == std::string::npos) break;
    path.resize(cut);
  }
  auto it = lines.find(path);
  return it == lines.end() ? 1 : it->second;
}

}  // namespace

const HostSpec* Scenario::find_host(const HostId& name) const {
  for (const auto& h : hosts) {
    if (h.name == name) return &h;
  }
  return nullptr;
}

ScenarioError::ScenarioError(std::vector<std::string> problems)
    : std::runtime_error(join(problems)), problems_(std::move(problems)) {}

void validate(const Scenario& scenario) {
  auto problems = check(scenario);
  if (problems.empty()) return;
  std::vector<std::string> out;
  for (const auto& p : problems) out.push_back(p.path + ": " + p.message);
  throw ScenarioError(std::move(out));
}

Scenario parse_scenario(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ScenarioError({"line " + std::to_string(e.mark.line + 1) + ": " + e.msg});
  }
  Reader reader;
  Scenario s = reader.read(root);
  if (!reader.problems.empty()) throw ScenarioError(reader.problems);
  auto problems = check(s);
  if (problems.empty()) return s;
  std::vector<std::string> out;
  for (const auto& p : problems) {
    out.push_back("line " + std::to_string(line_for(reader.lines, p.path)) + ": " + p.path + ": " +
                  p.message);
  }
  throw ScenarioError(std::move(out));
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError({"cannot read scenario file " + path.string()});
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace tycoon::sim
