#pragma once

// Request frame in, response frame out. Shared by the simulator and the
// socket services so both exercise the same wire path. Undecodable or
// unexpected frames produce a Rejection(malformed) frame.

#include <span>

#include "tycoon/auctioneer.hpp"
#include "tycoon/bank.hpp"
#include "tycoon/sls.hpp"

namespace tycoon::dispatch {

// transfer_request -> receipt | rejection
// mint_request     -> ack | rejection
// balance_query    -> balance_reply
Bytes serve(bank::Bank& bank, std::span<const std::uint8_t> frame, double now);

// advertisement -> ack | rejection
// sls_query     -> sls_reply
Bytes serve(sls::Registry& registry, std::span<const std::uint8_t> frame, double now);

// create_account | fund | set_interval -> ack | rejection
// status_query                         -> status_reply | rejection
Bytes serve(auctioneer::Auctioneer& auctioneer, std::span<const std::uint8_t> frame, double now);

Bytes reject_frame(protocol::Reject reason, std::string detail = {});

}  // namespace tycoon::dispatch
