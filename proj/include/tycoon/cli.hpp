#pragma once

// The `tycoon` command-line tool. Every command is reachable through
// run_cli so tests can drive it in-process.
//
//   tycoon create_account HOST... CPU MEMORY DISK [--interval T]
//   tycoon fund HOST RESOURCE AMOUNT INTERVAL
//   tycoon set_interval HOST RESOURCE INTERVAL
//   tycoon get_status HOST...
//   tycoon bid --budget X [--interval T] [--weights h=w,...] [--lambda L] [--dry-run] [--yes]
//   tycoon sim SCENARIO [--seed N] [--out FILE]
//   tycoon keygen --out FILE
//   tycoon mint OWNER AMOUNT
//   tycoon balance
//
// Exit codes: 0 every host succeeded, 1 some did, 2 none did (or bad usage).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tycoon/net.hpp"
#include "tycoon/types.hpp"

namespace tycoon::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitFailed = 2;

struct CliConfig {
  std::optional<net::Endpoint> bank;
  std::optional<net::Endpoint> sls;
  UserId user;
  std::filesystem::path key;         // file holding the hex Ed25519 seed
  std::filesystem::path nonce_file;  // default: key path + ".nonces"
  std::chrono::milliseconds timeout = net::kDefaultTimeout;
  std::size_t parallel = 16;
};

// YAML mapping with keys bank, sls, user, key, nonce_file, timeout_ms,
// parallel. Throws std::runtime_error naming the bad field.
CliConfig load_config(const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

// Last nonce used per host, persisted as a JSON object after every change.
class NonceStore {
 public:
  explicit NonceStore(std::filesystem::path path);
  std::uint64_t next(const HostId& host);
  // Moves the counter forward to at least `high_water`.
  void observe(const HostId& host, std::uint64_t high_water);
  std::uint64_t last(const HostId& host) const;

 private:
  void save() const;

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<HostId, std::uint64_t> last_;
};

// Settings come from flags, then TYCOON_BANK / TYCOON_SLS / TYCOON_USER /
// TYCOON_KEY / TYCOON_CONFIG, then the config file.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            std::istream& in, const EnvLookup& env = process_env);

}  // namespace tycoon::cli
