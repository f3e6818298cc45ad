// Long-running services: `tycoond bank`, `tycoond sls` and
// `tycoond auctioneer`. Each listens until SIGINT or SIGTERM.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tycoon/services.hpp"

using namespace tycoon;

namespace {

crypto::Ed25519Signer load_signer(const std::string& path) {
  std::ifstream in(path);
  std::string hex;
  if (!(in >> hex)) throw std::runtime_error("cannot read key file " + path);
  return crypto::Ed25519Signer::from_seed_hex(hex);
}

protocol::KeyRegistry load_keys(const std::string& path) {
  if (path.empty()) return {};
  return protocol::KeyRegistry::load(path);
}

void wait_for_shutdown() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
}

}  // namespace

int main(int argc, char** argv) {
  // Block the shutdown signals before any service thread starts so they all
  // inherit the mask and only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  CLI::App app{"Bank, service locator and auctioneer daemons", "tycoond"};
  app.require_subcommand(1);
  std::string listen = "0.0.0.0:7000", key_file, keys_file;
  app.add_option("--listen", listen, "address:port to serve on");
  app.add_option("--key", key_file, "file holding this service's hex seed");
  app.add_option("--keys", keys_file, "JSON map of identity to public key hex");

  auto* bank_cmd = app.add_subcommand("bank", "central account service");
  bank::BankConfig bank_config;
  std::string journal, snapshot;
  bank_cmd->add_option("--identity", bank_config.identity);
  bank_cmd->add_option("--admin", bank_config.admin, "identity allowed to mint");
  bank_cmd->add_option("--journal", journal, "append-only operation log");
  bank_cmd->add_option("--snapshot", snapshot, "periodic full-state snapshot");
  bank_cmd->add_option("--snapshot-every", bank_config.snapshot_every, "operations between snapshots");

  auto* sls_cmd = app.add_subcommand("sls", "service locator");
  sls::SlsConfig sls_config;
  sls_cmd->add_option("--expiry", sls_config.expiry, "seconds before a silent host is dropped");
  sls_cmd->add_option("--register-interval", sls_config.register_interval);

  auto* auc_cmd = app.add_subcommand("auctioneer", "per-host market");
  auctioneer::AuctioneerConfig auc_config;
  std::string bank_key_hex, sls_endpoint;
  double cpu = 1.0, memory = 0.0, disk = 0.0, period = market::kDefaultPeriod;
  services::AuctioneerServiceOptions options;
  auc_cmd->add_option("--host", auc_config.host, "host identity")->required();
  auc_cmd->add_option("--advertise", auc_config.endpoint, "address:port published to the locator");
  auc_cmd->add_option("--bank-key", bank_key_hex, "bank public key hex")->required();
  auc_cmd->add_option("--sls", sls_endpoint, "service locator address:port");
  auc_cmd->add_option("--cpu", cpu, "cpu capacity (0 to omit)");
  auc_cmd->add_option("--memory", memory, "memory capacity (0 to omit)");
  auc_cmd->add_option("--disk", disk, "disk capacity (0 to omit)");
  auc_cmd->add_option("--period", period, "allocation period in seconds");
  auc_cmd->add_option("--register-interval", options.register_interval);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto ep = net::Endpoint::parse(listen);
    if (key_file.empty()) throw std::runtime_error("--key is required");
    auto signer = load_signer(key_file);
    auto keys = load_keys(keys_file);

    if (bank_cmd->parsed()) {
      bank_config.journal = journal;
      bank_config.snapshot = snapshot;
      bank::Bank bank(bank_config, std::move(signer), std::move(keys));
      services::BankService service(bank, ep);
      std::cerr << "bank " << bank.public_key().hex() << " listening on "
                << service.endpoint().str() << '\n';
      wait_for_shutdown();
      if (!snapshot.empty()) bank.write_snapshot();
      return 0;
    }
    if (sls_cmd->parsed()) {
      sls::Registry registry(sls_config);
      services::SlsService service(registry, ep);
      std::cerr << "sls listening on " << service.endpoint().str() << '\n';
      wait_for_shutdown();
      return 0;
    }
    const auto bank_key = crypto::PublicKey::from_hex(bank_key_hex);
    if (!bank_key) throw std::runtime_error("--bank-key is not a public key");
    auc_config.resources.clear();
    for (auto [kind, total] : {std::pair{ResourceKind::cpu, cpu}, {ResourceKind::memory, memory},
                               {ResourceKind::disk, disk}}) {
      if (total > 0) auc_config.resources.push_back({kind, total, period});
    }
    if (!sls_endpoint.empty()) options.sls = net::Endpoint::parse(sls_endpoint);
    auctioneer::Auctioneer market(auc_config, std::move(signer), *bank_key, std::move(keys));
    services::AuctioneerService service(market, ep, options);
    std::cerr << "auctioneer " << auc_config.host << " listening on " << service.endpoint().str()
              << '\n';
    wait_for_shutdown();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "tycoond: " << e.what() << '\n';
    return 2;
  }
}
