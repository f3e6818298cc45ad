#include "tycoon/services.hpp"

#include <chrono>

#include "tycoon/dispatch.hpp"

namespace tycoon::services {

double wall_clock() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

PeriodicTask::PeriodicTask(double interval, std::function<void()> task) {
  const auto step = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(interval));
  thread_ = std::thread([this, step, task = std::move(task)] {
    auto next = std::chrono::steady_clock::now() + step;
    std::unique_lock lock(mutex_);
    while (!wake_.wait_until(lock, next, [this] { return stopping_; })) {
      lock.unlock();
      task();
      lock.lock();
      next += step;
    }
  });
}

PeriodicTask::~PeriodicTask() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  thread_.join();
}

BankService::BankService(bank::Bank& bank, const net::Endpoint& listen, Clock clock)
    : bank_(bank),
      clock_(std::move(clock)),
      server_(listen, [this](std::span<const std::uint8_t> frame) {
        return dispatch::serve(bank_, frame, clock_());
      }) {}

SlsService::SlsService(sls::Registry& registry, const net::Endpoint& listen, Clock clock)
    : registry_(registry),
      clock_(std::move(clock)),
      server_(listen,
              [this](std::span<const std::uint8_t> frame) {
                return dispatch::serve(registry_, frame, clock_());
              }),
      sweeper_(registry.config().register_interval, [this] { registry_.sweep(clock_()); }) {}

AuctioneerService::AuctioneerService(auctioneer::Auctioneer& market, const net::Endpoint& listen,
                                     AuctioneerServiceOptions options, Clock clock)
    : market_(market),
      options_(std::move(options)),
      clock_(std::move(clock)),
      server_(listen, [this](std::span<const std::uint8_t> frame) {
        std::lock_guard lock(mutex_);
        return dispatch::serve(market_, frame, clock_());
      }) {
  {
    std::lock_guard lock(mutex_);
    if (market_.config().endpoint.empty()) market_.set_endpoint(server_.endpoint().str());
  }
  if (options_.run_timers) {
    periods_.emplace(market_.period(), [this] { run_period(); });
    if (options_.sls) {
      advertise();
      registration_.emplace(options_.register_interval, [this] { advertise(); });
    }
  }
}

AuctioneerService::~AuctioneerService() {
  registration_.reset();
  periods_.reset();
  server_.stop();
}

void AuctioneerService::run_period() {
  std::lock_guard lock(mutex_);
  market_.run_period(clock_());
}

bool AuctioneerService::advertise() {
  if (!options_.sls) return false;
  Bytes frame;
  {
    std::lock_guard lock(mutex_);
    frame = protocol::encode(market_.advertise(clock_()));
  }
  try {
    const Bytes reply = net::call(*options_.sls, frame, options_.timeout);
    return protocol::peek_type(reply) == protocol::MessageType::ack;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace tycoon::services
