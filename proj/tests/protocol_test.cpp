#include <gtest/gtest.h>

#include <random>

#include "tycoon/protocol.hpp"
#include "tycoon/validation.hpp"

using namespace tycoon;
using namespace tycoon::protocol;
using crypto::Ed25519Signer;

namespace {

Bytes hex(std::string_view h) { return crypto::from_hex(h).value(); }

TransferRequest transfer(const UserId& from, const UserId& to, double amount, double ts) {
  TransferRequest r;
  r.sender = from;
  r.recipient = to;
  r.amount = amount;
  r.timestamp = ts;
  return r;
}

Receipt receipt_for(const TransferRequest& r, const crypto::Signer& bank) {
  Receipt out{r.sender, r.recipient, r.amount, r.timestamp, {}};
  sign(out, bank);
  return out;
}

// Frozen from an independent Ed25519/BLAKE2b implementation (Python
// cryptography + hashlib) for sender seed BLAKE2b-256("A").
constexpr std::string_view kGoldenBody =
    "00000001" "41" "00000001" "42" "00000008" "4024000000000000" "00000008" "408f400000000000";
constexpr std::string_view kGoldenPublicKey =
    "6531462b35171e5abad3943a1a0a75a56f1397d0a8c6302efb9af4d0a9e94fdb";
constexpr std::string_view kGoldenSignature =
    "6f5fd7ff1d8da2c40127c62e7311ee48564d661369bb1b5e5a510f42d9575de4"
    "7896b1014d93460d72018d1cc8ce214a6f4583331c2b29846003bf7113b1e806";
constexpr std::string_view kGoldenDigest =
    "8e4c42e220d35ed8ec628c992b328ab97e8a4593c52a4f0352f49ac00568582c";

}  // namespace

TEST(Encoding, GoldenTransferBody) {
  EXPECT_EQ(canonical_encode(transfer("A", "B", 10, 1000)), hex(kGoldenBody));
}

TEST(Encoding, GoldenSignatureAndDigest) {
  auto signer = Ed25519Signer::from_label("A");
  EXPECT_EQ(signer.public_key().hex(), kGoldenPublicKey);
  auto req = transfer("A", "B", 10, 1000);
  sign(req, signer);
  EXPECT_EQ(crypto::to_hex(req.signature.bytes), kGoldenSignature);
  EXPECT_EQ(crypto::to_hex(message_digest(req)), kGoldenDigest);

  Bytes wire = {0x01, 0x01};
  auto body = hex(kGoldenBody);
  wire.insert(wire.end(), body.begin(), body.end());
  for (auto b : hex("00000040")) wire.push_back(b);
  auto sig = hex(kGoldenSignature);
  wire.insert(wire.end(), sig.begin(), sig.end());
  EXPECT_EQ(encode(req), wire);
}

TEST(Encoding, Deterministic) {
  auto a = transfer("alice", "bank", 3.25, 17);
  EXPECT_EQ(canonical_encode(a), canonical_encode(a));
  EXPECT_EQ(encode(a), encode(a));
}

TEST(Encoding, FieldBoundariesAreUnambiguous) {
  EXPECT_NE(canonical_encode(transfer("AB", "C", 1, 1)), canonical_encode(transfer("A", "BC", 1, 1)));
  EXPECT_NE(canonical_encode(transfer("", "AB", 1, 1)), canonical_encode(transfer("AB", "", 1, 1)));
}

TEST(Encoding, InjectiveOverRandomSingleFieldChanges) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(0, 6), ch('a', 'c'), field(0, 5);
  std::uniform_real_distribution<double> real(-1e6, 1e6);
  auto word = [&] {
    std::string s(len(rng), 'a');
    for (auto& c : s) c = static_cast<char>(ch(rng));
    return s;
  };
  for (int i = 0; i < 2000; ++i) {
    FundMessage m;
    m.sender = word();
    m.recipient = word();
    m.nonce = rng() % 100;
    m.resource = kAllResources[rng() % 3];
    m.interval = real(rng);
    m.receipt = {word(), word(), real(rng), real(rng), {}};
    FundMessage n = m;
    switch (field(rng)) {
      case 0: n.sender += 'x'; break;
      case 1: n.recipient = n.recipient.empty() ? "z" : n.recipient.substr(1); break;
      case 2: n.nonce += 1 + rng() % 5; break;
      case 3: n.resource = kAllResources[(static_cast<int>(m.resource) + 1) % 3]; break;
      case 4: n.interval = std::nextafter(m.interval, 2e6); break;
      case 5: n.receipt.amount = std::nextafter(m.receipt.amount, -2e6); break;
    }
    ASSERT_NE(m, n);
    ASSERT_NE(canonical_encode(m), canonical_encode(n));
  }
}

TEST(Encoding, RoundTripsEveryMessage) {
  auto alice = Ed25519Signer::from_label("alice");
  auto bank = Ed25519Signer::from_label("bank");
  auto host = Ed25519Signer::from_label("host0");

  auto req = transfer("alice", "host0", 12.5, 99);
  sign(req, alice);
  EXPECT_EQ(decode<TransferRequest>(encode(req)), req);

  auto rec = receipt_for(req, bank);
  EXPECT_EQ(decode<Receipt>(encode(rec)), rec);

  FundMessage fund{"alice", "host0", 4, ResourceKind::disk, 1000, rec, {}};
  sign(fund, alice);
  EXPECT_EQ(decode<FundMessage>(encode(fund)), fund);

  SetIntervalMessage si{"alice", "host0", 5, ResourceKind::memory, 300, {}};
  sign(si, alice);
  EXPECT_EQ(decode<SetIntervalMessage>(encode(si)), si);

  CreateAccountMessage ca{"alice", "host0", 1, 1e7,
                          {{ResourceKind::cpu, rec}, {ResourceKind::disk, rec}}, {}};
  sign(ca, alice);
  EXPECT_EQ(decode<CreateAccountMessage>(encode(ca)), ca);

  MintRequest mint{"admin", "alice", 100, 5, {}};
  sign(mint, alice);
  EXPECT_EQ(decode<MintRequest>(encode(mint)), mint);

  HostAdvertisement ad{"host0", host.public_key(), "127.0.0.1:7000", 30,
                       {{ResourceKind::cpu, 1, 0.3}, {ResourceKind::memory, 4, 0}}, {}};
  sign(ad, host);
  EXPECT_EQ(decode<HostAdvertisement>(encode(ad)), ad);
  ASSERT_NE(ad.find(ResourceKind::memory), nullptr);
  EXPECT_EQ(ad.find(ResourceKind::disk), nullptr);

  SlsReply reply{{ad, ad}};
  EXPECT_EQ(decode<SlsReply>(encode(reply)), reply);

  SlsQuery q1{ResourceKind::cpu, 0.5}, q2{std::nullopt, 0};
  EXPECT_EQ(decode<SlsQuery>(encode(q1)), q1);
  EXPECT_EQ(decode<SlsQuery>(encode(q2)), q2);

  StatusReply status{"alice", "host0", 9, {{ResourceKind::cpu, 95, 1000, 0.5, 0.09, false},
                                           {ResourceKind::disk, 3, 1e7, 0, 0, true}}};
  EXPECT_EQ(decode<StatusReply>(encode(status)), status);
  EXPECT_EQ(decode<StatusQuery>(encode(StatusQuery{"alice"})).user, "alice");
  EXPECT_EQ(decode<BalanceReply>(encode(BalanceReply{"alice", 7})).balance, 7);
  EXPECT_EQ(decode<BalanceQuery>(encode(BalanceQuery{"bob"})).owner, "bob");
  EXPECT_EQ(decode<Ack>(encode(Ack{})), Ack{});
  Rejection rej{Reject::stale_nonce, "high water 6"};
  EXPECT_EQ(decode<Rejection>(encode(rej)), rej);
}

TEST(Encoding, DecodeRejectsMalformedFrames) {
  auto alice = Ed25519Signer::from_label("alice");
  auto req = transfer("alice", "bob", 1, 1);
  sign(req, alice);
  auto wire = encode(req);

  EXPECT_THROW(decode<TransferRequest>(Bytes{}), DecodeError);
  EXPECT_THROW(decode<Receipt>(wire), DecodeError);  // wrong tag
  auto bad_version = wire;
  bad_version[1] = 2;
  EXPECT_THROW(decode<TransferRequest>(bad_version), DecodeError);
  auto truncated = Bytes(wire.begin(), wire.end() - 1);
  EXPECT_THROW(decode<TransferRequest>(truncated), DecodeError);
  auto trailing = wire;
  trailing.push_back(0);
  EXPECT_THROW(decode<TransferRequest>(trailing), DecodeError);

  Encoder e;
  e.str("alice").str("host0").u64(1).str("gpu").f64(1);
  Bytes frame = {static_cast<std::uint8_t>(MessageType::set_interval), kVersion};
  frame.insert(frame.end(), e.bytes().begin(), e.bytes().end());
  Encoder sig;
  sig.raw(Bytes(64, 0));
  frame.insert(frame.end(), sig.bytes().begin(), sig.bytes().end());
  EXPECT_THROW(decode<SetIntervalMessage>(frame), DecodeError);

  Encoder r;
  r.u64(0).str("");
  Bytes rf = {static_cast<std::uint8_t>(MessageType::rejection), kVersion};
  rf.insert(rf.end(), r.bytes().begin(), r.bytes().end());
  EXPECT_THROW(decode<Rejection>(rf), DecodeError);
}

TEST(Encoding, PeekType) {
  EXPECT_EQ(peek_type(encode(Ack{})), MessageType::ack);
  EXPECT_THROW(peek_type(Bytes{0x20}), DecodeError);
}

TEST(Signatures, RoundTripAndTamper) {
  auto k1 = Ed25519Signer::from_label("k1");
  auto k2 = Ed25519Signer::from_label("k2");
  auto req = transfer("k1", "bob", 30, 5);
  sign(req, k1);
  EXPECT_TRUE(signature_valid(req, k1.public_key()));
  EXPECT_FALSE(signature_valid(req, k2.public_key()));

  auto tampered = req;
  tampered.amount = 31;
  EXPECT_FALSE(signature_valid(tampered, k1.public_key()));

  auto flipped = req;
  flipped.signature.bytes[10] ^= 0x01;
  EXPECT_FALSE(signature_valid(flipped, k1.public_key()));
}

TEST(Signatures, TypeTagSeparatesDomains) {
  auto k = Ed25519Signer::from_label("k");
  auto req = transfer("k", "bob", 30, 5);
  sign(req, k);
  Receipt forged{req.sender, req.recipient, req.amount, req.timestamp, req.signature};
  EXPECT_FALSE(signature_valid(forged, k.public_key()));
}

TEST(Signatures, MalformedKeyMaterial) {
  EXPECT_FALSE(crypto::PublicKey::from_bytes(Bytes(31, 1)).has_value());
  EXPECT_FALSE(crypto::PublicKey::from_bytes(Bytes(32, 0)).has_value());  // small order
  EXPECT_FALSE(crypto::PublicKey::from_hex("zz").has_value());
  EXPECT_THROW(Ed25519Signer::from_seed_hex("abcd"), std::invalid_argument);
  auto s = Ed25519Signer::generate();
  EXPECT_EQ(Ed25519Signer::from_seed_hex(s.seed_hex()).public_key(), s.public_key());
}

// ---------------------------------------------------------------------------

class TransferValidation : public ::testing::Test {
 protected:
  void SetUp() override {
    registry.add("alice", alice.public_key());
    registry.add("bob", bob.public_key());
  }

  TransferRequest signed_transfer(double amount, double ts = 1000) {
    auto r = transfer("alice", "bob", amount, ts);
    sign(r, alice);
    return r;
  }

  Ed25519Signer alice = Ed25519Signer::from_label("alice");
  Ed25519Signer bob = Ed25519Signer::from_label("bob");
  KeyRegistry registry;
  ReplayGuard guard;
};

TEST_F(TransferValidation, FreshAcceptedReplayRejected) {
  auto r = signed_transfer(10);
  EXPECT_TRUE(validate_transfer(r, guard, registry, 1000).accepted());
  auto again = validate_transfer(r, guard, registry, 1001);
  ASSERT_FALSE(again.accepted());
  EXPECT_EQ(again.reason(), Reject::replay);
}

TEST_F(TransferValidation, UnknownSender) {
  auto carol = Ed25519Signer::from_label("carol");
  auto r = transfer("carol", "bob", 1, 1000);
  sign(r, carol);
  EXPECT_EQ(validate_transfer(r, guard, registry, 1000).reason(), Reject::unknown_sender);
}

TEST_F(TransferValidation, RejectReasons) {
  auto forged = transfer("alice", "bob", 10, 1000);
  sign(forged, bob);
  EXPECT_EQ(validate_transfer(forged, guard, registry, 1000).reason(), Reject::bad_signature);
  EXPECT_EQ(validate_transfer(signed_transfer(0), guard, registry, 1000).reason(),
            Reject::non_positive_amount);
  EXPECT_EQ(validate_transfer(signed_transfer(-1), guard, registry, 1000).reason(),
            Reject::non_positive_amount);
  EXPECT_EQ(validate_transfer(signed_transfer(1, 1000), guard, registry, 1301).reason(),
            Reject::stale_timestamp);
  EXPECT_EQ(validate_transfer(signed_transfer(1, 1000), guard, registry, 699).reason(),
            Reject::stale_timestamp);
  EXPECT_EQ(guard.remembered(), 0u);
}

TEST_F(TransferValidation, CheckIsPure) {
  auto r = signed_transfer(5);
  auto before = guard;
  EXPECT_TRUE(check_transfer(r, guard, registry, 1000).accepted());
  EXPECT_EQ(guard, before);
}

TEST_F(TransferValidation, PruneKeepsReplayProtection) {
  auto r = signed_transfer(5, 1000);
  ASSERT_TRUE(validate_transfer(r, guard, registry, 1000).accepted());
  EXPECT_EQ(guard.prune(1599), 0u);
  EXPECT_EQ(validate_transfer(r, guard, registry, 1299).reason(), Reject::replay);
  EXPECT_EQ(guard.prune(1601), 1u);
  // Forgotten, but by now far outside the skew window.
  EXPECT_EQ(validate_transfer(r, guard, registry, 1601).reason(), Reject::stale_timestamp);
}

TEST_F(TransferValidation, GuardAndRegistrySerialize) {
  ASSERT_TRUE(validate_transfer(signed_transfer(5), guard, registry, 1000).accepted());
  guard.advance_nonce("alice", "host0", 42);
  EXPECT_EQ(ReplayGuard::from_json(guard.to_json()), guard);
  auto copy = KeyRegistry::from_json(registry.to_json());
  EXPECT_EQ(copy.entries(), registry.entries());
  EXPECT_THROW(KeyRegistry::from_json("{\"x\": \"00\"}"), std::invalid_argument);
  EXPECT_THROW(KeyRegistry::from_json("[1]"), std::invalid_argument);
}

TEST_F(TransferValidation, MintOnlyByAdmin) {
  MintRequest m{"alice", "bob", 50, 1000, {}};
  sign(m, alice);
  EXPECT_TRUE(check_mint(m, guard, "alice", alice.public_key(), 1000).accepted());
  EXPECT_EQ(check_mint(m, guard, "root", alice.public_key(), 1000).reason(), Reject::unauthorized);
  EXPECT_EQ(check_mint(m, guard, "alice", bob.public_key(), 1000).reason(), Reject::bad_signature);
  commit_mint(m, guard);
  EXPECT_EQ(check_mint(m, guard, "alice", alice.public_key(), 1000).reason(), Reject::replay);
  MintRequest zero{"alice", "bob", 0, 1000, {}};
  sign(zero, alice);
  EXPECT_EQ(check_mint(zero, guard, "alice", alice.public_key(), 1000).reason(),
            Reject::non_positive_amount);
}

// ---------------------------------------------------------------------------

class FundValidation : public ::testing::Test {
 protected:
  void SetUp() override {
    users.add("alice", alice.public_key());
    users.add("mallory", mallory.public_key());
    host = {"host0", bank.public_key(), &users, 1000};
  }

  Receipt pay(const UserId& from, const UserId& to, double amount, double ts = 1000) {
    return receipt_for(transfer(from, to, amount, ts), bank);
  }

  FundMessage fund(std::uint64_t nonce, Receipt r, const crypto::Signer& who,
                   const UserId& sender = "alice", const HostId& to = "host0") {
    FundMessage m{sender, to, nonce, ResourceKind::cpu, 1000, std::move(r), {}};
    sign(m, who);
    return m;
  }

  Ed25519Signer alice = Ed25519Signer::from_label("alice");
  Ed25519Signer mallory = Ed25519Signer::from_label("mallory");
  Ed25519Signer bank = Ed25519Signer::from_label("bank");
  KeyRegistry users;
  ReplayGuard guard;
  HostContext host;
};

TEST_F(FundValidation, NonceSevenAfterSix) {
  guard.advance_nonce("alice", "host0", 6);
  auto m = fund(7, pay("alice", "host0", 90), alice);
  EXPECT_TRUE(validate_fund(m, guard, host).accepted());
  EXPECT_EQ(guard.high_water("alice", "host0"), 7u);
  EXPECT_EQ(validate_fund(m, guard, host).reason(), Reject::stale_nonce);
}

TEST_F(FundValidation, ReceiptCannotBeSpentTwice) {
  auto r = pay("alice", "host0", 90);
  ASSERT_TRUE(validate_fund(fund(1, r, alice), guard, host).accepted());
  EXPECT_EQ(validate_fund(fund(2, r, alice), guard, host).reason(), Reject::receipt_replay);
}

TEST_F(FundValidation, RejectReasonsInOrder) {
  EXPECT_EQ(check_fund(fund(1, pay("alice", "host0", 9), alice, "alice", "host1"), guard, host)
                .reason(),
            Reject::wrong_recipient);
  EXPECT_EQ(check_fund(fund(0, pay("alice", "host0", 9), alice), guard, host).reason(),
            Reject::stale_nonce);
  EXPECT_EQ(check_fund(fund(1, pay("alice", "host1", 9), alice), guard, host).reason(),
            Reject::receipt_wrong_payee);
  // Mallory presents Alice's receipt as her own.
  EXPECT_EQ(check_fund(fund(1, pay("alice", "host0", 9), mallory, "mallory"), guard, host).reason(),
            Reject::receipt_wrong_payer);
  auto forged = pay("alice", "host0", 9);
  forged.amount = 900;
  EXPECT_EQ(check_fund(fund(1, forged, alice), guard, host).reason(), Reject::bad_bank_signature);
  auto carol = Ed25519Signer::from_label("carol");
  EXPECT_EQ(check_fund(fund(1, pay("carol", "host0", 9), carol, "carol"), guard, host).reason(),
            Reject::unknown_sender);
  EXPECT_EQ(check_fund(fund(1, pay("alice", "host0", 9), mallory), guard, host).reason(),
            Reject::bad_sender_signature);
  EXPECT_EQ(check_fund(fund(1, pay("alice", "host0", 9, 600), alice), guard, host).reason(),
            Reject::stale_timestamp);
  FundMessage zero_interval{"alice", "host0", 1, ResourceKind::cpu, 0, pay("alice", "host0", 9), {}};
  sign(zero_interval, alice);
  EXPECT_EQ(check_fund(zero_interval, guard, host).reason(), Reject::invalid_interval);
}

TEST_F(FundValidation, SetInterval) {
  SetIntervalMessage m{"alice", "host0", 3, ResourceKind::cpu, 300, {}};
  sign(m, alice);
  EXPECT_TRUE(validate_set_interval(m, guard, host).accepted());
  EXPECT_EQ(validate_set_interval(m, guard, host).reason(), Reject::stale_nonce);
  SetIntervalMessage bad{"alice", "host0", 4, ResourceKind::cpu, -1, {}};
  sign(bad, alice);
  EXPECT_EQ(check_set_interval(bad, guard, host).reason(), Reject::invalid_interval);
  SetIntervalMessage forged{"alice", "host0", 4, ResourceKind::cpu, 30, {}};
  sign(forged, mallory);
  EXPECT_EQ(check_set_interval(forged, guard, host).reason(), Reject::bad_sender_signature);
}

TEST_F(FundValidation, CreateAccount) {
  auto r1 = pay("alice", "host0", 10, 1000);
  auto r2 = pay("alice", "host0", 10, 1000.5);
  CreateAccountMessage m{"alice", "host0", 1, 1e7, {{ResourceKind::cpu, r1}, {ResourceKind::disk, r2}}, {}};
  sign(m, alice);
  EXPECT_TRUE(validate_create_account(m, guard, host).accepted());
  EXPECT_EQ(validate_create_account(m, guard, host).reason(), Reject::stale_nonce);

  CreateAccountMessage dup{"alice", "host0", 5, 1e7, {{ResourceKind::cpu, r1}}, {}};
  sign(dup, alice);
  EXPECT_EQ(check_create_account(dup, guard, host).reason(), Reject::receipt_replay);

  auto r3 = pay("alice", "host0", 1, 1001);
  CreateAccountMessage twice{"alice", "host0", 5, 1e7,
                             {{ResourceKind::cpu, r3}, {ResourceKind::cpu, pay("alice", "host0", 2)}}, {}};
  sign(twice, alice);
  EXPECT_EQ(check_create_account(twice, guard, host).reason(), Reject::malformed);

  auto forged = r3;
  forged.amount = 1000;
  CreateAccountMessage fake{"alice", "host0", 5, 1e7, {{ResourceKind::cpu, forged}}, {}};
  sign(fake, alice);
  EXPECT_EQ(check_create_account(fake, guard, host).reason(), Reject::bad_bank_signature);
}

// Random interleavings of fresh, replayed and resent messages: each distinct
// valid message is accepted at most once and accepted nonces strictly rise.
TEST_F(FundValidation, InterleavedReplaysAcceptedAtMostOnce) {
  std::mt19937_64 rng(11);
  std::vector<FundMessage> sent;
  std::set<Bytes> accepted;
  std::uint64_t next_nonce = 1, last_accepted = 0;
  for (int step = 0; step < 500; ++step) {
    FundMessage m;
    if (sent.empty() || rng() % 3 == 0) {
      // Nonces sometimes skip, sometimes go backwards.
      std::uint64_t nonce = next_nonce + rng() % 3;
      if (rng() % 5 == 0 && nonce > 2) nonce -= 2;
      next_nonce = nonce + 1;
      m = fund(nonce, pay("alice", "host0", 1 + step, 1000 + step * 1e-3), alice);
      sent.push_back(m);
    } else {
      m = sent[rng() % sent.size()];
    }
    if (validate_fund(m, guard, host).accepted()) {
      ASSERT_TRUE(accepted.insert(encode(m)).second) << "accepted twice at step " << step;
      ASSERT_GT(m.nonce, last_accepted);
      last_accepted = m.nonce;
    }
  }
  EXPECT_GT(accepted.size(), 50u);
}

TEST_F(FundValidation, BitFlipsNeverAccepted) {
  auto wire = encode(fund(1, pay("alice", "host0", 90), alice));
  ASSERT_TRUE(check_fund(decode<FundMessage>(wire), guard, host).accepted());
  std::mt19937_64 rng(3);
  int decoded = 0;
  for (int i = 0; i < 3000; ++i) {
    auto copy = wire;
    const auto bit = rng() % (copy.size() * 8);
    copy[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    try {
      auto m = decode<FundMessage>(copy);
      ++decoded;
      EXPECT_FALSE(check_fund(m, guard, host).accepted()) << "bit " << bit;
    } catch (const DecodeError&) {
    }
  }
  EXPECT_GT(decoded, 1000);
}

TEST(RejectNames, Stable) {
  EXPECT_EQ(to_string(Reject::receipt_wrong_payee), "receipt-wrong-payee");
  EXPECT_EQ(reject_from_code(7), Reject::stale_nonce);
  EXPECT_FALSE(reject_from_code(0).has_value());
  EXPECT_FALSE(reject_from_code(21).has_value());
  for (std::uint8_t c = 1; c <= 20; ++c) EXPECT_NE(to_string(*reject_from_code(c)), "unknown");
}
