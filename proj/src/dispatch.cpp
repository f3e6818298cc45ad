#include "tycoon/dispatch.hpp"

namespace tycoon::dispatch {

using namespace protocol;

namespace {

Bytes verdict_frame(const Verdict& v) {
  return v ? encode(Ack{}) : reject_frame(v.reason());
}

template <class Handler>
Bytes guarded(std::span<const std::uint8_t> frame, Handler handler) {
  try {
    return handler(peek_type(frame));
  } catch (const DecodeError& e) {
    return reject_frame(Reject::malformed, e.what());
  }
}

}  // namespace

Bytes reject_frame(Reject reason, std::string detail) {
  return encode(Rejection{reason, std::move(detail)});
}

Bytes serve(bank::Bank& bank, std::span<const std::uint8_t> frame, double now) {
  return guarded(frame, [&](MessageType type) -> Bytes {
    switch (type) {
      case MessageType::transfer_request: {
        auto out = bank.transfer(decode<TransferRequest>(frame), now);
        return out ? encode(out.value()) : reject_frame(out.error());
      }
      case MessageType::mint_request:
        return verdict_frame(bank.mint(decode<MintRequest>(frame), now));
      case MessageType::balance_query: {
        auto q = decode<BalanceQuery>(frame);
        return encode(BalanceReply{q.owner, bank.balance_of(q.owner)});
      }
      default:
        return reject_frame(Reject::malformed,
                            "bank does not handle " + std::string(to_string(type)));
    }
  });
}

Bytes serve(sls::Registry& registry, std::span<const std::uint8_t> frame, double now) {
  return guarded(frame, [&](MessageType type) -> Bytes {
    switch (type) {
      case MessageType::advertisement:
        return verdict_frame(registry.register_ad(decode<HostAdvertisement>(frame), now));
      case MessageType::sls_query:
        return encode(SlsReply{registry.query(decode<SlsQuery>(frame), now)});
      default:
        return reject_frame(Reject::malformed,
                            "service locator does not handle " + std::string(to_string(type)));
    }
  });
}

Bytes serve(auctioneer::Auctioneer& a, std::span<const std::uint8_t> frame, double now) {
  return guarded(frame, [&](MessageType type) -> Bytes {
    switch (type) {
      case MessageType::create_account:
        return verdict_frame(a.create_account(decode<CreateAccountMessage>(frame), now));
      case MessageType::fund:
        return verdict_frame(a.handle_fund(decode<FundMessage>(frame), now));
      case MessageType::set_interval:
        return verdict_frame(a.handle_set_interval(decode<SetIntervalMessage>(frame), now));
      case MessageType::status_query: {
        auto out = a.get_status(decode<StatusQuery>(frame).user);
        return out ? encode(out.value()) : reject_frame(out.error());
      }
      default:
        return reject_frame(Reject::malformed,
                            "auctioneer does not handle " + std::string(to_string(type)));
    }
  });
}

}  // namespace tycoon::dispatch
