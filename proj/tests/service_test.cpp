#include "tycoon/services.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

using namespace tycoon;
using protocol::MessageType;

namespace {

const net::Endpoint kAny{"127.0.0.1", 0};

// Virtual clock shared by every service in a test.
struct ManualClock {
  std::atomic<double> t{1000.0};
  services::Clock fn() {
    return [this] { return t.load(); };
  }
};

class ServiceTest : public ::testing::Test {
 protected:
  ServiceTest()
      : bank_signer_(crypto::Ed25519Signer::from_label("bank")),
        admin_(crypto::Ed25519Signer::from_label("admin")),
        alice_(crypto::Ed25519Signer::from_label("alice")),
        host_signer_(crypto::Ed25519Signer::from_label("host0")) {
    keys_.add("admin", admin_.public_key());
    keys_.add("alice", alice_.public_key());
    keys_.add("host0", host_signer_.public_key());
    bank_ = std::make_unique<bank::Bank>(bank::BankConfig{}, bank_signer_, keys_);
    bank_->mint("alice", 100);
    bank_service_ = std::make_unique<services::BankService>(*bank_, kAny, clock_.fn());
    sls_service_ = std::make_unique<services::SlsService>(registry_, kAny, clock_.fn());

    auctioneer::AuctioneerConfig config;
    config.host = "host0";
    market_ = std::make_unique<auctioneer::Auctioneer>(config, host_signer_,
                                                       bank_signer_.public_key(), keys_);
    services::AuctioneerServiceOptions options;
    options.sls = sls_service_->endpoint();
    options.run_timers = false;
    host_service_ =
        std::make_unique<services::AuctioneerService>(*market_, kAny, options, clock_.fn());
  }

  Bytes call_bank(const Bytes& frame) { return net::call(bank_service_->endpoint(), frame); }
  Bytes call_host(const Bytes& frame) { return net::call(host_service_->endpoint(), frame); }

  protocol::Receipt pay(const std::string& to, double amount, double ts) {
    protocol::TransferRequest req{"alice", to, amount, ts, {}};
    protocol::sign(req, alice_);
    const Bytes reply = call_bank(protocol::encode(req));
    EXPECT_EQ(protocol::peek_type(reply), MessageType::receipt);
    return protocol::decode<protocol::Receipt>(reply);
  }

  ManualClock clock_;
  crypto::Ed25519Signer bank_signer_, admin_, alice_, host_signer_;
  protocol::KeyRegistry keys_;
  std::unique_ptr<bank::Bank> bank_;
  sls::Registry registry_;
  std::unique_ptr<services::BankService> bank_service_;
  std::unique_ptr<services::SlsService> sls_service_;
  std::unique_ptr<auctioneer::Auctioneer> market_;
  std::unique_ptr<services::AuctioneerService> host_service_;
};

TEST(EndpointTest, Parse) {
  const auto e = net::Endpoint::parse("example.org:7000");
  EXPECT_EQ(e.host, "example.org");
  EXPECT_EQ(e.port, 7000);
  EXPECT_EQ(e.str(), "example.org:7000");
  EXPECT_EQ(net::Endpoint::parse("[::1]:80").host, "::1");
  EXPECT_THROW(net::Endpoint::parse("no-port"), std::invalid_argument);
  EXPECT_THROW(net::Endpoint::parse("h:99999"), std::invalid_argument);
  EXPECT_THROW(net::Endpoint::parse("h:12x"), std::invalid_argument);
  EXPECT_THROW(net::Endpoint::parse(":80"), std::invalid_argument);
}

TEST(FrameServerTest, EchoesManyFramesPerConnectionAndConcurrently) {
  net::FrameServer server(kAny, [](std::span<const std::uint8_t> f) {
    Bytes out(f.begin(), f.end());
    std::reverse(out.begin(), out.end());
    return out;
  });
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 20; ++i) {
        Bytes frame{static_cast<std::uint8_t>(t), static_cast<std::uint8_t>(i), 7};
        const Bytes reply = net::call(server.endpoint(), frame);
        if (reply == Bytes{7, static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(t)}) ++ok;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok, 160);
  EXPECT_EQ(net::call(server.endpoint(), Bytes{}), Bytes{});
}

TEST(FrameServerTest, ClosedPortIsConnectionError) {
  std::uint16_t port = 0;
  {
    net::FrameServer server(kAny, [](std::span<const std::uint8_t>) { return Bytes{}; });
    port = server.port();
  }
  EXPECT_THROW(net::call({"127.0.0.1", port}, Bytes{1}), net::ConnectionError);
}

TEST(FrameServerTest, SlowHandlerTimesOut) {
  net::FrameServer server(kAny, [](std::span<const std::uint8_t>) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    return Bytes{1};
  });
  EXPECT_THROW(net::call(server.endpoint(), Bytes{1}, std::chrono::milliseconds(50)),
               net::ConnectionError);
}

TEST(PeriodicTaskTest, RunsRepeatedlyAndStops) {
  std::atomic<int> runs{0};
  {
    services::PeriodicTask task(0.02, [&] { ++runs; });
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
  }
  const int seen = runs;
  EXPECT_GE(seen, 3);
  std::this_thread::sleep_for(std::chrono::milliseconds(60));
  EXPECT_EQ(runs, seen);
}

TEST_F(ServiceTest, TransferOverSocket) {
  const auto receipt = pay("host0", 25, clock_.t);
  EXPECT_EQ(receipt.amount, 25);
  EXPECT_TRUE(protocol::signature_valid(receipt, bank_signer_.public_key()));
  EXPECT_DOUBLE_EQ(bank_->balance_of("alice"), 75);
  EXPECT_DOUBLE_EQ(bank_->balance_of("host0"), 25);
}

TEST_F(ServiceTest, BalanceQuery) {
  const Bytes reply = call_bank(protocol::encode(protocol::BalanceQuery{"alice"}));
  EXPECT_DOUBLE_EQ(protocol::decode<protocol::BalanceReply>(reply).balance, 100);
}

TEST_F(ServiceTest, ReplayedTransferRejected) {
  protocol::TransferRequest req{"alice", "host0", 5, clock_.t, {}};
  protocol::sign(req, alice_);
  EXPECT_EQ(protocol::peek_type(call_bank(protocol::encode(req))), MessageType::receipt);
  const Bytes again = call_bank(protocol::encode(req));
  EXPECT_EQ(protocol::decode<protocol::Rejection>(again).reason, protocol::Reject::replay);
  EXPECT_DOUBLE_EQ(bank_->balance_of("alice"), 95);
}

TEST_F(ServiceTest, GarbageFrameGetsMalformed) {
  const Bytes reply = call_bank(Bytes{0x01, 0x01, 0x00});
  EXPECT_EQ(protocol::decode<protocol::Rejection>(reply).reason, protocol::Reject::malformed);
  const Bytes wrong = call_bank(protocol::encode(protocol::SlsQuery{}));
  EXPECT_EQ(protocol::decode<protocol::Rejection>(wrong).reason, protocol::Reject::malformed);
}

TEST_F(ServiceTest, AccountLifecycleOverSockets) {
  const auto receipt = pay("host0", 10, clock_.t);
  protocol::CreateAccountMessage create{"alice", "host0", 1, 1000, {{ResourceKind::cpu, receipt}}, {}};
  protocol::sign(create, alice_);
  EXPECT_EQ(protocol::peek_type(call_host(protocol::encode(create))), MessageType::ack);

  protocol::FundMessage fund{"alice", "host0", 2, ResourceKind::cpu, 500, pay("host0", 5, clock_.t + 1), {}};
  protocol::sign(fund, alice_);
  EXPECT_EQ(protocol::peek_type(call_host(protocol::encode(fund))), MessageType::ack);

  // Same nonce again: refused before anything changes.
  protocol::SetIntervalMessage stale{"alice", "host0", 2, ResourceKind::cpu, 50, {}};
  protocol::sign(stale, alice_);
  EXPECT_EQ(protocol::decode<protocol::Rejection>(call_host(protocol::encode(stale))).reason,
            protocol::Reject::stale_nonce);

  host_service_->run_period();
  const auto status = protocol::decode<protocol::StatusReply>(
      call_host(protocol::encode(protocol::StatusQuery{"alice"})));
  EXPECT_EQ(status.nonce_high_water, 2u);
  ASSERT_FALSE(status.resources.empty());
  EXPECT_DOUBLE_EQ(status.resources[0].interval, 500);
  EXPECT_DOUBLE_EQ(status.resources[0].last_share, 1.0);
  EXPECT_NEAR(status.resources[0].balance, 15 - 15.0 / 500 * 10, 1e-12);
}

TEST_F(ServiceTest, UnknownAccountStatus) {
  const Bytes reply = call_host(protocol::encode(protocol::StatusQuery{"nobody"}));
  EXPECT_EQ(protocol::decode<protocol::Rejection>(reply).reason, protocol::Reject::unknown_account);
}

TEST_F(ServiceTest, AdvertisesItsEndpoint) {
  ASSERT_TRUE(host_service_->advertise());
  const Bytes reply =
      net::call(sls_service_->endpoint(), protocol::encode(protocol::SlsQuery{}));
  const auto ads = protocol::decode<protocol::SlsReply>(reply).ads;
  ASSERT_EQ(ads.size(), 1u);
  EXPECT_EQ(ads[0].host, "host0");
  EXPECT_EQ(ads[0].endpoint, host_service_->endpoint().str());
  EXPECT_TRUE(protocol::signature_valid(ads[0], host_signer_.public_key()));

  // Soft state: the entry disappears once the clock passes expiry.
  clock_.t = clock_.t + registry_.config().expiry + 1;
  const auto later = protocol::decode<protocol::SlsReply>(
      net::call(sls_service_->endpoint(), protocol::encode(protocol::SlsQuery{})));
  EXPECT_TRUE(later.ads.empty());
}

TEST_F(ServiceTest, TimersRunPeriodsAndRegister) {
  auctioneer::AuctioneerConfig config;
  config.host = "fast";
  config.resources = {{ResourceKind::cpu, 1.0, 0.05}};
  auto signer = crypto::Ed25519Signer::from_label("fast");
  auctioneer::Auctioneer market(config, signer, bank_signer_.public_key(), keys_);
  services::AuctioneerServiceOptions options;
  options.sls = sls_service_->endpoint();
  options.register_interval = 0.05;
  {
    services::AuctioneerService service(market, kAny, options, clock_.fn());
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
  }
  EXPECT_GE(market.periods_run(), 3u);
  EXPECT_TRUE(registry_.last_seen("fast").has_value());
}

TEST_F(ServiceTest, ConcurrentTransfersConserveCredits) {
  bank_->mint("alice", 900);
  std::vector<std::thread> threads;
  std::atomic<int> receipts{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        protocol::TransferRequest req{"alice", "host0", 1, clock_.t + t * 25 + i, {}};
        protocol::sign(req, alice_);
        if (protocol::peek_type(call_bank(protocol::encode(req))) == MessageType::receipt) ++receipts;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(receipts, 200);
  EXPECT_DOUBLE_EQ(bank_->balance_of("alice"), 800);
  EXPECT_DOUBLE_EQ(bank_->sum_of_balances(), bank_->total_issued());
}

}  // namespace
