#include "tycoon/market.hpp"

#include <gtest/gtest.h>

#include <boost/rational.hpp>
#include <cmath>
#include <random>

namespace tycoon::market {
namespace {

using Rational = boost::rational<long long>;

Bid make_bid(std::string user, double balance, double interval) {
  return Bid{std::move(user), ResourceKind::cpu, balance, interval};
}

ResourceCapacity capacity(double total, double period = 10.0) {
  return ResourceCapacity{ResourceKind::cpu, total, period};
}

// Independent oracle: the allocation formula evaluated in exact rationals for
// integer balances and intervals.
std::map<std::string, Rational> rational_allocate(
    const std::vector<std::tuple<std::string, long long, long long>>& bids, long long total) {
  Rational sum = 0;
  for (const auto& [user, balance, interval] : bids) {
    if (balance > 0) sum += Rational(balance, interval);
  }
  std::map<std::string, Rational> shares;
  for (const auto& [user, balance, interval] : bids) {
    shares[user] = balance > 0 ? Rational(balance, interval) / sum * total : Rational(0);
  }
  return shares;
}

double to_double(Rational r) { return boost::rational_cast<double>(r); }

TEST(Allocate, HighVersusLowPriorityBids) {
  std::vector<Bid> bids{make_bid("A", 10, 10000), make_bid("B", 10, 100000)};
  auto shares = allocate(bids, capacity(1.0));
  EXPECT_NEAR(shares["A"], 10.0 / 11.0, 1e-12);
  EXPECT_NEAR(shares["B"], 1.0 / 11.0, 1e-12);
}

TEST(Allocate, SoleBidderTakesEverything) {
  std::vector<Bid> bids{make_bid("A", 5, 100)};
  EXPECT_DOUBLE_EQ(allocate(bids, capacity(1.0))["A"], 1.0);
}

TEST(Allocate, ThreeBiddersMatchRationalOracle) {
  std::vector<Bid> bids{make_bid("A", 3, 30), make_bid("B", 6, 30), make_bid("C", 1, 10)};
  auto shares = allocate(bids, capacity(100.0));
  auto oracle = rational_allocate({{"A", 3, 30}, {"B", 6, 30}, {"C", 1, 10}}, 100);
  EXPECT_EQ(oracle["A"], Rational(25));
  EXPECT_EQ(oracle["B"], Rational(50));
  EXPECT_EQ(oracle["C"], Rational(25));
  for (const auto& [user, exact] : oracle) EXPECT_NEAR(shares[user], to_double(exact), 1e-12);
}

TEST(Allocate, EmptyInputGivesEmptyMap) {
  EXPECT_TRUE(allocate({}, capacity(1.0)).empty());
}

TEST(Allocate, ZeroBalanceExcludedFromDenominator) {
  std::vector<Bid> bids{make_bid("A", 0, 10), make_bid("B", 4, 10)};
  auto shares = allocate(bids, capacity(2.0));
  EXPECT_EQ(shares["A"], 0.0);
  EXPECT_DOUBLE_EQ(shares["B"], 2.0);
}

TEST(Allocate, RejectsInvalidBids) {
  std::vector<Bid> negative{make_bid("A", -1, 10)};
  EXPECT_THROW(allocate(negative, capacity(1.0)), ContractViolation);
  std::vector<Bid> zero_interval{make_bid("A", 1, 0)};
  EXPECT_THROW(allocate(zero_interval, capacity(1.0)), ContractViolation);
  std::vector<Bid> duplicate{make_bid("A", 1, 1), make_bid("A", 2, 1)};
  EXPECT_THROW(allocate(duplicate, capacity(1.0)), ContractViolation);
  EXPECT_THROW(allocate({}, capacity(0.0)), std::invalid_argument);
}

TEST(Allocate, PropertyMatchesRationalOracleOnSmallInstances) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<long long> balance(0, 50), interval(1, 40), total(1, 20);
  std::uniform_int_distribution<int> count(1, 6);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::tuple<std::string, long long, long long>> raw;
    std::vector<Bid> bids;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const auto b = balance(rng), t = interval(rng);
      raw.emplace_back("u" + std::to_string(i), b, t);
      bids.push_back(make_bid("u" + std::to_string(i), static_cast<double>(b),
                              static_cast<double>(t)));
    }
    const long long r = total(rng);
    auto shares = allocate(bids, capacity(static_cast<double>(r)));
    bool any_positive = false;
    for (const auto& [u, b, t] : raw) any_positive |= b > 0;
    if (!any_positive) {
      for (const auto& [u, s] : shares) EXPECT_EQ(s, 0.0);
      continue;
    }
    auto oracle = rational_allocate(raw, r);
    double sum = 0.0;
    for (const auto& [user, exact] : oracle) {
      EXPECT_NEAR(shares[user], to_double(exact), 1e-12 * static_cast<double>(r));
      sum += shares[user];
    }
    EXPECT_NEAR(sum, static_cast<double>(r), 1e-9 * static_cast<double>(r));
  }
}

TEST(Allocate, PropertyScaleInvarianceAndMonotonicity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> value(0.1, 100.0), scale(0.01, 100.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Bid> bids;
    for (int i = 0; i < 5; ++i) {
      bids.push_back(make_bid("u" + std::to_string(i), value(rng), value(rng)));
    }
    const auto base = allocate(bids, capacity(3.0));

    const double c = scale(rng);
    auto both = bids;
    for (auto& b : both) {
      b.balance *= c;
      b.interval *= c;
    }
    const auto scaled = allocate(both, capacity(3.0));
    auto balances_only = bids;
    for (auto& b : balances_only) b.balance *= c;
    const auto proportional = allocate(balances_only, capacity(3.0));
    for (const auto& [user, share] : base) {
      EXPECT_NEAR(scaled.at(user), share, 1e-9 * 3.0);
      EXPECT_NEAR(proportional.at(user), share, 1e-9 * 3.0);
    }

    auto richer = bids;
    richer[0].balance *= 1.0 + scale(rng);
    const auto after = allocate(richer, capacity(3.0));
    EXPECT_GE(after.at("u0"), base.at("u0"));
    for (const auto& [user, share] : base) {
      if (user != "u0") EXPECT_LE(after.at(user), share);
    }
  }
}

TEST(Charge, FullUsePaysBidRate) {
  std::vector<Bid> bids{make_bid("A", 10, 100)};
  ShareMap shares{{"A", 0.4}};
  std::vector<UsageRecord> usage{{"A", 0.4}};
  EXPECT_DOUBLE_EQ(charge(shares, usage, bids)["A"], 0.1);
}

TEST(Charge, HalfUsePaysHalf) {
  std::vector<Bid> bids{make_bid("A", 10, 100)};
  ShareMap shares{{"A", 0.4}};
  std::vector<UsageRecord> usage{{"A", 0.2}};
  EXPECT_DOUBLE_EQ(charge(shares, usage, bids)["A"], 0.05);
}

TEST(Charge, OveruseIsCappedAtBid) {
  std::vector<Bid> bids{make_bid("A", 10, 100)};
  ShareMap shares{{"A", 0.4}};
  std::vector<UsageRecord> usage{{"A", 0.8}};
  EXPECT_DOUBLE_EQ(charge(shares, usage, bids)["A"], 0.1);
}

TEST(Charge, ZeroShareZeroUseCostsNothing) {
  std::vector<Bid> bids{make_bid("A", 0, 100)};
  ShareMap shares{{"A", 0.0}};
  std::vector<UsageRecord> usage{{"A", 0.0}};
  EXPECT_EQ(charge(shares, usage, bids)["A"], 0.0);
}

TEST(Charge, MissingShareOrBidIsContractViolation) {
  std::vector<Bid> bids{make_bid("A", 10, 100)};
  std::vector<UsageRecord> ghost{{"Z", 1.0}};
  try {
    charge(ShareMap{{"A", 1.0}}, ghost, bids);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_EQ(e.user(), "Z");
  }
  std::vector<UsageRecord> no_bid{{"B", 1.0}};
  EXPECT_THROW(charge(ShareMap{{"B", 1.0}}, no_bid, bids), ContractViolation);
}

TEST(Charge, PropertyCapAndUniformUnitPrice) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> value(0.1, 50.0), use(0.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Bid> bids;
    for (int i = 0; i < 4; ++i) bids.push_back(make_bid("u" + std::to_string(i), value(rng), value(rng)));
    const auto shares = allocate(bids, capacity(1.0));
    std::vector<UsageRecord> usage;
    for (const auto& [user, share] : shares) usage.push_back({user, share * use(rng)});
    const auto charges = charge(shares, usage, bids);

    std::optional<double> unit_price;
    for (std::size_t i = 0; i < bids.size(); ++i) {
      const auto& bid = bids[i];
      EXPECT_LE(charges.at(bid.user), bid.rate());
      if (usage[i].consumed >= shares.at(bid.user)) {
        const double price = charges.at(bid.user) / shares.at(bid.user);
        if (unit_price) EXPECT_NEAR(price, *unit_price, 1e-9 * *unit_price);
        unit_price = price;
      }
    }
  }
}

TEST(Evict, DropsSubThresholdBidder) {
  std::vector<Bid> bids{make_bid("A", 1.0, 1.0), make_bid("B", 0.0005, 1.0)};
  // Oracle: B's share 0.0005/1.0005 is below 0.001.
  ASSERT_LT(0.0005 / 1.0005, 0.001);
  auto result = evict_small_bidders(bids, capacity(1.0));
  ASSERT_EQ(result.evicted, std::vector<UserId>{"B"});
  ASSERT_EQ(result.retained.size(), 1u);
  EXPECT_EQ(result.retained[0].user, "A");
}

TEST(Evict, SoleBidderRetained) {
  std::vector<Bid> bids{make_bid("A", 1e-9, 1e6)};
  EXPECT_TRUE(evict_small_bidders(bids, capacity(1.0)).evicted.empty());
}

TEST(Evict, EqualBiddersRetained) {
  std::vector<Bid> bids{make_bid("A", 1, 1), make_bid("B", 1, 1)};
  auto result = evict_small_bidders(bids, capacity(1.0));
  EXPECT_TRUE(result.evicted.empty());
  auto shares = allocate(result.retained, capacity(1.0));
  EXPECT_DOUBLE_EQ(shares["A"], 0.5);
}

TEST(Evict, SmallestFirstWithLexicographicTieBreak) {
  // Three tiny equal bidders against one large one: all are below threshold,
  // removed in user order.
  std::vector<Bid> bids{make_bid("big", 10000, 1), make_bid("c", 1, 1), make_bid("a", 1, 1),
                        make_bid("b", 1, 1), make_bid("mid", 100, 1)};
  auto result = evict_small_bidders(bids, capacity(1.0));
  EXPECT_EQ(result.evicted, (std::vector<UserId>{"a", "b", "c"}));
}

TEST(Evict, CascadesThroughSubThresholdBidders) {
  std::vector<Bid> bids{make_bid("big", 1000, 1), make_bid("s1", 0.5, 1), make_bid("s2", 0.5, 1),
                        make_bid("x", 1.0, 1)};
  // s1: 0.5/1002, s2: 0.5/1001.5, x: 1/1001, each below 0.001 in turn.
  auto result = evict_small_bidders(bids, capacity(1.0));
  EXPECT_EQ(result.evicted, (std::vector<UserId>{"s1", "s2", "x"}));
}

TEST(Evict, RemovingSmallestCanRescueNextBidder) {
  // x starts below threshold (1.0012/1001.5012) but clears it once s is gone
  // (1.0012/1001.0012).
  ASSERT_LT(1.0012 / 1001.5012, 0.001);
  ASSERT_GE(1.0012 / 1001.0012, 0.001);
  std::vector<Bid> bids{make_bid("big", 1000, 1), make_bid("s", 0.5, 1), make_bid("x", 1.0012, 1)};
  auto result = evict_small_bidders(bids, capacity(1.0));
  EXPECT_EQ(result.evicted, std::vector<UserId>{"s"});
  EXPECT_EQ(result.retained.size(), 2u);
}

TEST(Evict, ZeroBalanceBiddersPassThrough) {
  std::vector<Bid> bids{make_bid("A", 1, 1), make_bid("broke", 0, 1)};
  auto result = evict_small_bidders(bids, capacity(1.0));
  EXPECT_TRUE(result.evicted.empty());
  EXPECT_EQ(result.retained.size(), 2u);
}

TEST(Evict, PropertyIdempotent) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> exponent(-6.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Bid> bids;
    for (int i = 0; i < 8; ++i) {
      bids.push_back(make_bid("u" + std::to_string(i), std::pow(10.0, exponent(rng)), 1.0));
    }
    auto once = evict_small_bidders(bids, capacity(1.0));
    auto twice = evict_small_bidders(once.retained, capacity(1.0));
    EXPECT_TRUE(twice.evicted.empty());
    EXPECT_EQ(twice.retained, once.retained);
    for (const auto& [user, share] : allocate(once.retained, capacity(1.0))) {
      EXPECT_GE(share, kEvictionThreshold);
    }
  }
}

TEST(Settle, OnePeriodDecaysBalance) {
  std::vector<Bid> bids{make_bid("A", 10, 300)};
  std::vector<UsageRecord> usage{{"A", 1.0}};
  auto settlement = settle_period(bids, capacity(1.0), usage);
  EXPECT_NEAR(settlement.bids[0].balance, 10.0 * (1.0 - 10.0 / 300.0), 1e-12);
  EXPECT_NEAR(settlement.debits["A"], 10.0 / 30.0, 1e-12);
}

TEST(Settle, FortyPeriodsFollowClosedFormDecay) {
  // Iterated settlement against the closed form b0 * (1 - P/t)^k.
  std::vector<Bid> bids{make_bid("A", 10, 300)};
  for (int k = 1; k <= 40; ++k) {
    std::vector<UsageRecord> usage{{"A", 1.0}};
    bids = settle_period(bids, capacity(1.0), usage).bids;
    const double closed = 10.0 * std::pow(29.0 / 30.0, k);
    EXPECT_NEAR(bids[0].balance, closed, 1e-9 * closed);
  }
  EXPECT_NEAR(bids[0].balance, 2.577, 1e-3);
}

TEST(Settle, ZeroUsageLeavesBalance) {
  std::vector<Bid> bids{make_bid("A", 10, 300)};
  std::vector<UsageRecord> usage{{"A", 0.0}};
  EXPECT_EQ(settle_period(bids, capacity(1.0), usage).bids[0].balance, 10.0);
}

TEST(Settle, BalanceFloorsAtZero) {
  // interval shorter than the period: s*P = 2 * balance.
  std::vector<Bid> bids{make_bid("A", 4, 5)};
  std::vector<UsageRecord> usage{{"A", 1.0}};
  auto settlement = settle_period(bids, capacity(1.0), usage);
  EXPECT_EQ(settlement.bids[0].balance, 0.0);
  EXPECT_EQ(settlement.debits["A"], 4.0);
  auto next = settle_period(settlement.bids, capacity(1.0), usage);
  EXPECT_EQ(next.result.shares["A"], 0.0);
}

TEST(Settle, EvictedUsersPayNothing) {
  std::vector<Bid> bids{make_bid("A", 1.0, 1.0), make_bid("B", 0.0005, 1.0)};
  std::vector<UsageRecord> usage{{"A", 1.0}, {"B", 1.0}};
  auto settlement = settle_period(bids, capacity(1.0), usage);
  EXPECT_EQ(settlement.result.evicted, std::vector<UserId>{"B"});
  EXPECT_EQ(settlement.result.charges["B"], 0.0);
  EXPECT_EQ(settlement.result.shares["B"], 0.0);
  EXPECT_EQ(settlement.bids[1].balance, 0.0005);
  EXPECT_DOUBLE_EQ(settlement.result.shares["A"], 1.0);
}

TEST(Settle, PropertyBalancesNeverNegativeAndSharesSumToCapacity) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> value(0.0, 20.0), interval(1.0, 200.0), use(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Bid> bids;
    for (int i = 0; i < 5; ++i) bids.push_back(make_bid("u" + std::to_string(i), value(rng), interval(rng)));
    for (int period = 0; period < 20; ++period) {
      auto settlement = settle_period(bids, capacity(2.0), [&](const ShareMap& shares,
                                                               std::span<const Bid>) {
        std::vector<UsageRecord> usage;
        for (const auto& [user, share] : shares) usage.push_back({user, share * use(rng)});
        return usage;
      });
      double sum = 0.0;
      bool any = false;
      for (const auto& [user, share] : settlement.result.shares) sum += share;
      for (const auto& bid : bids) any |= bid.balance > 0.0;
      if (any) EXPECT_NEAR(sum, 2.0, 2e-9);
      for (const auto& bid : settlement.bids) EXPECT_GE(bid.balance, 0.0);
      bids = settlement.bids;
    }
  }
}

}  // namespace
}  // namespace tycoon::market
