#include "tycoon/bank.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tycoon::bank {

using nlohmann::json;
using protocol::Reject;
using protocol::Verdict;

namespace {

json state_to_json(const std::map<UserId, double>& accounts, double total, std::uint64_t seq,
                   const protocol::ReplayGuard& guard) {
  return {{"seq", seq},
          {"total_issued", total},
          {"accounts", accounts},
          {"guard", json::parse(guard.to_json())}};
}

// Journal entries are applied through this one function both live and on
// restore, so a rebuilt ledger is identical to the original.
void apply_entry(std::map<UserId, double>& accounts, double& total, protocol::ReplayGuard& guard,
                 const json& entry) {
  const auto& op = entry.at("op").get_ref<const std::string&>();
  if (entry.contains("now")) guard.prune(entry.at("now").get<double>());
  const double amount = entry.at("amount").get<double>();
  if (op == "mint") {
    accounts[entry.at("owner").get<std::string>()] += amount;
    total += amount;
  } else if (op == "transfer") {
    accounts[entry.at("from").get<std::string>()] -= amount;
    accounts[entry.at("to").get<std::string>()] += amount;
  } else {
    throw std::invalid_argument("unknown journal op '" + op + "'");
  }
  if (entry.contains("digest")) {
    auto raw = crypto::from_hex(entry.at("digest").get<std::string>());
    if (!raw || raw->size() != crypto::kDigestSize) throw std::invalid_argument("bad digest");
    crypto::Digest d;
    std::copy(raw->begin(), raw->end(), d.begin());
    guard.remember(d, entry.at("ts").get<double>());
  }
}

}  // namespace

Bank::Bank(BankConfig config, crypto::Ed25519Signer signer, protocol::KeyRegistry users)
    : config_(std::move(config)),
      signer_(std::move(signer)),
      users_(std::move(users)),
      state_{{}, 0.0, 0, protocol::ReplayGuard(config_.max_skew)} {
  restore();
  if (!config_.journal.empty()) {
    journal_ = std::make_unique<std::ofstream>(config_.journal, std::ios::app);
    if (!*journal_) throw std::runtime_error("cannot open journal " + config_.journal.string());
  }
}

void Bank::restore() {
  if (!config_.snapshot.empty() && std::filesystem::exists(config_.snapshot)) {
    std::ifstream in(config_.snapshot);
    json snap = json::parse(in);
    state_.seq = snap.at("seq").get<std::uint64_t>();
    state_.total_issued = snap.at("total_issued").get<double>();
    state_.accounts = snap.at("accounts").get<std::map<UserId, double>>();
    state_.guard = protocol::ReplayGuard::from_json(snap.at("guard").dump());
  }
  if (config_.journal.empty() || !std::filesystem::exists(config_.journal)) return;
  std::ifstream in(config_.journal);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json entry;
    try {
      entry = json::parse(lines[i]);
    } catch (const json::parse_error&) {
      // A torn final line is an operation that never completed; drop it so
      // later appends start on a fresh line.
      if (i + 1 == lines.size()) {
        in.close();
        std::ofstream out(config_.journal, std::ios::trunc);
        for (std::size_t j = 0; j < i; ++j) out << lines[j] << '\n';
        break;
      }
      throw std::runtime_error("corrupt journal line " + std::to_string(i + 1));
    }
    const auto seq = entry.at("seq").get<std::uint64_t>();
    if (seq <= state_.seq) continue;
    if (seq != state_.seq + 1) throw std::runtime_error("journal sequence gap at " + std::to_string(seq));
    apply_entry(state_.accounts, state_.total_issued, state_.guard, entry);
    state_.seq = seq;
  }
}

void Bank::record(const std::string& line) {
  if (!journal_) return;
  *journal_ << line << '\n';
  journal_->flush();
  if (config_.snapshot_every > 0 && !config_.snapshot.empty() &&
      state_.seq % config_.snapshot_every == 0) {
    write_snapshot_locked();
    journal_ = std::make_unique<std::ofstream>(config_.journal, std::ios::trunc);
  }
}

void Bank::write_snapshot() const {
  std::lock_guard lock(mu_);
  write_snapshot_locked();
}

void Bank::write_snapshot_locked() const {
  if (config_.snapshot.empty()) return;
  auto tmp = config_.snapshot;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << state_to_json(state_.accounts, state_.total_issued, state_.seq, state_.guard).dump()
        << '\n';
    if (!out) throw std::runtime_error("cannot write snapshot " + tmp.string());
  }
  std::filesystem::rename(tmp, config_.snapshot);
}

Verdict Bank::mint(const UserId& owner, double amount) {
  if (!(amount > 0) || !std::isfinite(amount)) return Verdict::reject(Reject::non_positive_amount);
  std::lock_guard lock(mu_);
  json entry = {{"seq", state_.seq + 1}, {"op", "mint"}, {"owner", owner}, {"amount", amount}};
  apply_entry(state_.accounts, state_.total_issued, state_.guard, entry);
  ++state_.seq;
  record(entry.dump());
  return Verdict::accept();
}

Verdict Bank::mint(const protocol::MintRequest& request, double now) {
  std::lock_guard lock(mu_);
  const crypto::PublicKey* key = users_.find(config_.admin);
  if (!key) return Verdict::reject(Reject::unauthorized);
  auto verdict = protocol::check_mint(request, state_.guard, config_.admin, *key, now);
  if (!verdict) return verdict;
  json entry = {{"seq", state_.seq + 1},
                {"op", "mint"},
                {"owner", request.owner},
                {"amount", request.amount},
                {"now", now},
                {"digest", crypto::to_hex(protocol::message_digest(request))},
                {"ts", request.timestamp}};
  apply_entry(state_.accounts, state_.total_issued, state_.guard, entry);
  ++state_.seq;
  record(entry.dump());
  return verdict;
}

protocol::Outcome<protocol::Receipt> Bank::transfer(const protocol::TransferRequest& request,
                                                    double now) {
  std::lock_guard lock(mu_);
  auto verdict = protocol::check_transfer(request, state_.guard, users_, now);
  if (!verdict) return verdict.reason();
  if (request.sender == request.recipient) return Reject::malformed;
  auto it = state_.accounts.find(request.sender);
  if (it == state_.accounts.end() || it->second < request.amount) return Reject::insufficient_funds;

  json entry = {{"seq", state_.seq + 1},
                {"op", "transfer"},
                {"from", request.sender},
                {"to", request.recipient},
                {"amount", request.amount},
                {"now", now},
                {"digest", crypto::to_hex(protocol::message_digest(request))},
                {"ts", request.timestamp}};
  apply_entry(state_.accounts, state_.total_issued, state_.guard, entry);
  ++state_.seq;
  record(entry.dump());

  protocol::Receipt receipt{request.sender, request.recipient, request.amount, request.timestamp, {}};
  protocol::sign(receipt, signer_);
  return receipt;
}

double Bank::balance_of(const UserId& owner) const {
  std::lock_guard lock(mu_);
  auto it = state_.accounts.find(owner);
  return it == state_.accounts.end() ? 0.0 : it->second;
}

double Bank::total_issued() const {
  std::lock_guard lock(mu_);
  return state_.total_issued;
}

double Bank::sum_of_balances() const {
  std::lock_guard lock(mu_);
  double sum = 0.0;
  for (const auto& [owner, balance] : state_.accounts) sum += balance;
  return sum;
}

std::map<UserId, double> Bank::balances() const {
  std::lock_guard lock(mu_);
  return state_.accounts;
}

std::uint64_t Bank::sequence() const {
  std::lock_guard lock(mu_);
  return state_.seq;
}

void Bank::register_key(const UserId& id, const crypto::PublicKey& key) {
  std::lock_guard lock(mu_);
  users_.add(id, key);
}

std::string Bank::state_json() const {
  std::lock_guard lock(mu_);
  return state_to_json(state_.accounts, state_.total_issued, state_.seq, state_.guard).dump();
}

}  // namespace tycoon::bank
