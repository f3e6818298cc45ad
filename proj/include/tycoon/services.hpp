#pragma once

// Socket front ends for the bank, the service locator and auctioneers.
// Requests are served through the same dispatcher the simulator uses; time
// comes from an injectable clock (wall-clock seconds by default).

#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "tycoon/auctioneer.hpp"
#include "tycoon/bank.hpp"
#include "tycoon/net.hpp"
#include "tycoon/sls.hpp"

namespace tycoon::services {

using Clock = std::function<double()>;

// Seconds since the Unix epoch.
double wall_clock();

// Calls `task` every `interval` seconds of real time on its own thread until
// destroyed.
class PeriodicTask {
 public:
  PeriodicTask(double interval, std::function<void()> task);
  ~PeriodicTask();
  PeriodicTask(const PeriodicTask&) = delete;
  PeriodicTask& operator=(const PeriodicTask&) = delete;

 private:
  std::mutex mutex_;
  std::condition_variable wake_;
  bool stopping_ = false;
  std::thread thread_;
};

class BankService {
 public:
  BankService(bank::Bank& bank, const net::Endpoint& listen, Clock clock = wall_clock);
  net::Endpoint endpoint() const { return server_.endpoint(); }

 private:
  bank::Bank& bank_;
  Clock clock_;
  net::FrameServer server_;
};

class SlsService {
 public:
  SlsService(sls::Registry& registry, const net::Endpoint& listen, Clock clock = wall_clock);
  net::Endpoint endpoint() const { return server_.endpoint(); }

 private:
  sls::Registry& registry_;
  Clock clock_;
  net::FrameServer server_;
  PeriodicTask sweeper_;
};

struct AuctioneerServiceOptions {
  std::optional<net::Endpoint> sls;  // where to register; none: do not advertise
  bool run_timers = true;            // allocation and registration loops
  double register_interval = 30.0;   // seconds between advertisements
  std::chrono::milliseconds timeout = net::kDefaultTimeout;
};

// Serializes every call into the auctioneer behind one mutex.
class AuctioneerService {
 public:
  AuctioneerService(auctioneer::Auctioneer& market, const net::Endpoint& listen,
                    AuctioneerServiceOptions options = {}, Clock clock = wall_clock);
  ~AuctioneerService();
  net::Endpoint endpoint() const { return server_.endpoint(); }

  void run_period();
  // False if the service locator could not be reached or refused the ad.
  bool advertise();

 private:
  auctioneer::Auctioneer& market_;
  AuctioneerServiceOptions options_;
  Clock clock_;
  std::mutex mutex_;
  net::FrameServer server_;
  std::optional<PeriodicTask> periods_;
  std::optional<PeriodicTask> registration_;
};

}  // namespace tycoon::services
