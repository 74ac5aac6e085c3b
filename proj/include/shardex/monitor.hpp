#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shardex/identity.hpp"
#include "shardex/ledger.hpp"
#include "shardex/trading.hpp"

namespace shardex {

// ---------------------------------------------------------------------------
// Rules. Each kind has an exact predicate so every alert is re-checkable from
// its evidence sequence numbers:
//
//   SelfTrade    one party on both sides of a trade; consecutive offending
//                trades (same party, same isin) within `window` of each other
//                merge into one alert.
//   WashTrade    >= min_round_trips opposite-side trade pairs by one party in
//                one isin, each pair within `window` and with prices within
//                price_tolerance_bp of the first leg.
//   PriceSpike   consecutive trades within `window` whose price moved by at
//                least threshold_bp relative to the earlier trade.
//   VolumeSurge  traded quantity in the trailing `window` of logical time at
//                least `multiple` times the mean of the preceding full
//                windows (needs at least one full preceding window).
//
// Windows are in trade-ledger logical time (sequence numbers).
// ---------------------------------------------------------------------------

enum class RuleKind : std::uint8_t { SelfTrade, WashTrade, PriceSpike, VolumeSurge };

struct RuleSpec {
    std::string rule_id;
    RuleKind kind = RuleKind::SelfTrade;
    bool enabled = true;
    std::uint64_t window = 100;
    std::uint32_t min_round_trips = 2;     // WashTrade
    std::int64_t price_tolerance_bp = 500; // WashTrade
    std::int64_t threshold_bp = 1000;      // PriceSpike
    std::int64_t multiple = 4;             // VolumeSurge
};

struct Alert {
    std::string alert_id;
    std::string rule_id;
    std::string isin;
    std::vector<PartyId> implicated;
    std::vector<std::uint64_t> evidence; // trade ledger seqs
    LogicalTime detected_at = 0;
    bool realtime = true;

    bool same_finding(const Alert& other) const {
        return rule_id == other.rule_id && isin == other.isin && implicated == other.implicated &&
               evidence == other.evidence;
    }
};

// Feed records the monitor consumes, decoded from trade-ledger envelopes.
// A trade becomes visible when its settlement transaction commits; the
// monitor tracks prepared trade records and emits them at the commit seq,
// mirroring the trade manager's own replay.
struct FeedTrade {
    std::uint64_t seq = 0;
    std::string isin;
    PartyId buyer;
    PartyId seller;
    Amount qty = 0;
    Amount price = 0;
};

// Streaming detector: deterministic fold over the feed. Restarting it over
// the same prefix reproduces the same alerts, which is what makes the
// real-time and ex-post paths interchangeable.
class TradeMonitor {
public:
    explicit TradeMonitor(std::vector<RuleSpec> rules, std::string monitor_id = "monitor");

    // Consume one trade-ledger envelope in seq order; returns alerts fired.
    std::vector<Alert> on_envelope(const EventEnvelope& env);

    const std::vector<Alert>& alerts() const { return alerts_; }

    // Restrict this monitor instance to a subset of instruments (scalability
    // sharding); empty means all.
    void restrict_isins(std::vector<std::string> isins) { isins_ = std::move(isins); }

private:
    std::vector<Alert> evaluate(const FeedTrade& t);
    Alert make_alert(const RuleSpec& rule, const std::string& isin, std::vector<PartyId> implicated,
                     std::vector<std::uint64_t> evidence, LogicalTime at);

    std::vector<RuleSpec> rules_;
    std::string id_;
    std::vector<std::string> isins_;
    std::vector<Alert> alerts_;
    std::uint64_t alert_counter_ = 0;

    std::map<std::string, std::vector<Action>> pending_txn_trades_;
    // rule-scoped incremental state
    std::map<std::string, std::size_t> self_trade_group_;               // rule|isin|party -> open alert idx
    std::map<std::string, std::vector<FeedTrade>> unpaired_;            // rule|isin|party|side -> fifo
    std::map<std::string, std::vector<std::pair<std::uint64_t, std::vector<std::uint64_t>>>> round_trips_;
    std::map<std::string, FeedTrade> last_trade_;                       // rule|isin -> previous trade
    struct SurgeState {
        std::uint64_t window_index = 0;
        Amount current_volume = 0;
        std::vector<FeedTrade> current_trades;
        std::vector<Amount> closed_volumes;
        bool fired = false;
    };
    std::map<std::string, SurgeState> surge_;                           // rule|isin
};

// Ex-post scan over a persisted trade ledger file: verifies the chain, then
// folds the same detector over it. Produces the identical alert set to a
// real-time consumer of the same events.
Expected<std::vector<Alert>> expost_scan(const std::string& trade_ledger_path, const std::vector<RuleSpec>& rules,
                                         const KeyTimelineFn& keys);

// ---------------------------------------------------------------------------
// Supervisor queries: a conjunctive filter grammar over orders and trades.
//
//   query  := clause (" " clause)*
//   clause := field op value
//   field  := kind | isin | party | buyer | seller | price | qty | seq
//   op     := = | != | >= | <= | > | <
//
// `kind` is "trade" or "order"; `party` matches either side of a trade or the
// order's owner. Results carry ledger seqs for independent re-verification.
// ---------------------------------------------------------------------------

struct QueryRow {
    std::uint64_t seq = 0;
    std::string kind; // trade | order
    std::string isin;
    PartyId party;  // order owner, or buyer for trades
    PartyId party2; // seller for trades
    Amount qty = 0;
    Amount price = 0;
    std::string status;
};

class SupervisorQuery {
public:
    static Expected<SupervisorQuery> parse(const std::string& text);
    bool matches(const QueryRow& row) const;

private:
    struct Clause {
        std::string field;
        std::string op;
        std::string value;
        std::optional<std::int64_t> numeric;
    };
    std::vector<Clause> clauses_;
};

// Read-only evaluation over the authoritative trade ledger; requires the
// Supervisor role.
Expected<std::vector<QueryRow>> supervisor_query(const std::string& query_text, const PartyId& credentials,
                                                 const IdentityDirectory& identity, const Ledger& trade_ledger);

std::vector<QueryRow> feed_rows(const std::vector<EventEnvelope>& entries);

// Line-delimited structured record for alert files.
std::string alert_to_line(const Alert& a);

} // namespace shardex
