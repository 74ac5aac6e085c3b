#include <doctest.h>

#include <cstdio>

#include "shardex/monitor.hpp"
#include "test_fixtures.hpp"

using namespace shardex;
using namespace shardex::test;

namespace {

std::vector<RuleSpec> default_rules() {
    std::vector<RuleSpec> rules;
    rules.push_back({"self-1", RuleKind::SelfTrade, true, 100, 2, 500, 1000, 4});
    rules.push_back({"wash-1", RuleKind::WashTrade, true, 100, 2, 500, 1000, 4});
    return rules;
}

std::vector<Alert> stream_alerts(const Ledger& ledger, const std::vector<RuleSpec>& rules) {
    TradeMonitor monitor(rules, "rt");
    for (const EventEnvelope& env : ledger.entries()) monitor.on_envelope(env);
    return monitor.alerts();
}

void check_same_alerts(const std::vector<Alert>& a, const std::vector<Alert>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); i++) CHECK(a[i].same_finding(b[i]));
}

std::string dump_ledger(const Ledger& ledger, const std::string& name) {
    std::string path = "monitor_" + name + ".ledger";
    write_file_bytes(path, view_of(ledger.storage().read_all()));
    return path;
}

// Synthetic feed: hand-built txn.prepared/txn.committed envelope pairs, for
// detector-level tests without a full market.
std::vector<EventEnvelope> synthetic_feed(const std::vector<FeedTrade>& trades) {
    std::vector<EventEnvelope> out;
    for (const FeedTrade& t : trades) {
        std::string txn = "txn-" + std::to_string(t.seq);
        RecordTradeAction tr{"trd-" + std::to_string(t.seq), t.isin, "b", "s", t.qty, t.price, t.buyer, t.seller};
        Encoder actions;
        actions.put_u64(1);
        actions.put_bytes(view_of(encode_action(tr)));
        Encoder prep;
        prep.put_str(txn);
        prep.put_bytes(BytesView{});
        prep.put_bytes(view_of(actions.bytes()));
        EventEnvelope p;
        p.seq = t.seq > 0 ? t.seq - 1 : 0;
        p.payload_kind = "txn.prepared";
        p.payload = prep.take();
        out.push_back(std::move(p));
        Encoder commit;
        commit.put_str(txn);
        EventEnvelope c;
        c.seq = t.seq;
        c.payload_kind = "txn.committed";
        c.payload = commit.take();
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace

TEST_CASE("scripted self-trade produces exactly one alert with the trade as evidence") {
    MarketFixture fx;
    fx.fund_cash("inv1", 10000);
    fx.fund_bonds("inv1", 100);
    fx.fund_cash("inv2", 10000);
    fx.fund_bonds("inv2", 100);

    // inv2 trades normally; inv1 crosses with itself once
    REQUIRE(fx.submit("inv2", Side::Sell, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Sell, 7, 101).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 7, 101).ok()); // self cross
    REQUIRE(fx.tm->trades().size() == 2);

    std::vector<RuleSpec> rules{{"self-1", RuleKind::SelfTrade, true, 100, 2, 500, 1000, 4}};
    auto alerts = stream_alerts(fx.tm->ledger(), rules);

    // brute-force oracle: every trade with buyer == seller
    std::vector<std::uint64_t> offending;
    for (const Trade& t : fx.tm->trades()) {
        if (t.buyer == t.seller) offending.push_back(t.seq);
    }
    REQUIRE(offending.size() == 1);
    REQUIRE(alerts.size() == 1);
    CHECK(alerts[0].rule_id == "self-1");
    CHECK(alerts[0].implicated == std::vector<PartyId>{"inv1"});
    CHECK(alerts[0].evidence == offending);
}

TEST_CASE("scripted wash trade: two round trips inside the window, one alert") {
    MarketFixture fx;
    for (const char* p : {"inv1", "inv2", "inv3"}) {
        fx.fund_cash(p, 100000);
        fx.fund_bonds(p, 1000);
    }
    // inv1 buys from inv2 then sells to inv3 at the same price, twice
    REQUIRE(fx.submit("inv2", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv3", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv2", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv3", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Sell, 10, 100).ok());
    REQUIRE(fx.tm->trades().size() == 4);

    std::vector<RuleSpec> rules{{"wash-1", RuleKind::WashTrade, true, 100, 2, 500, 1000, 4}};
    auto alerts = stream_alerts(fx.tm->ledger(), rules);

    // brute-force oracle: all four trades involve inv1 alternating sides at
    // one price, so the evidence is exactly their four commit seqs
    std::vector<std::uint64_t> inv1_trades;
    for (const Trade& t : fx.tm->trades()) {
        if (t.buyer == "inv1" || t.seller == "inv1") inv1_trades.push_back(t.seq);
    }
    REQUIRE(inv1_trades.size() == 4);
    REQUIRE(alerts.size() == 1);
    CHECK(alerts[0].rule_id == "wash-1");
    CHECK(alerts[0].implicated == std::vector<PartyId>{"inv1"});
    CHECK(alerts[0].evidence == inv1_trades);
}

TEST_CASE("empty feed and disabled rules produce no alerts") {
    MarketFixture fx;
    auto alerts = stream_alerts(fx.tm->ledger(), default_rules());
    CHECK(alerts.empty());

    fx.fund_cash("inv1", 10000);
    fx.fund_bonds("inv1", 100);
    REQUIRE(fx.submit("inv1", Side::Sell, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 5, 100).ok());
    std::vector<RuleSpec> disabled = default_rules();
    for (auto& r : disabled) r.enabled = false;
    CHECK(stream_alerts(fx.tm->ledger(), disabled).empty());
}

TEST_CASE("price spike fires on consecutive-trade jumps") {
    std::vector<RuleSpec> rules{{"spike-1", RuleKind::PriceSpike, true, 50, 2, 500, 1000, 4}};
    TradeMonitor monitor(rules, "rt");
    std::vector<FeedTrade> trades{
        {5, "X", "a", "b", 1, 100}, {8, "X", "c", "d", 1, 105}, {12, "X", "a", "d", 1, 120}, // +14.3%: fires
        {90, "X", "b", "c", 1, 121},
    };
    std::vector<Alert> all;
    for (const auto& env : synthetic_feed(trades)) {
        for (const Alert& a : monitor.on_envelope(env)) all.push_back(a);
    }
    REQUIRE(all.size() == 1);
    CHECK(all[0].evidence == std::vector<std::uint64_t>{8, 12});
    CHECK(all[0].implicated == std::vector<PartyId>{"a", "d"});
}

TEST_CASE("volume surge compares a window against the preceding mean") {
    std::vector<RuleSpec> rules{{"surge-1", RuleKind::VolumeSurge, true, 10, 2, 500, 1000, 3}};
    TradeMonitor monitor(rules, "rt");
    std::vector<FeedTrade> trades{
        {2, "X", "a", "b", 5, 100},  // window 0: volume 5
        {13, "X", "a", "b", 4, 100}, // window 1: volume 4
        {21, "X", "a", "b", 6, 100}, // window 2 builds
        {24, "X", "c", "b", 9, 100}, // 15 >= 3 * mean(4.5)=13.5 -> fires
        {27, "X", "a", "c", 2, 100}, // same window, already fired
    };
    std::vector<Alert> all;
    for (const auto& env : synthetic_feed(trades)) {
        for (const Alert& a : monitor.on_envelope(env)) all.push_back(a);
    }
    REQUIRE(all.size() == 1);
    CHECK(all[0].evidence == std::vector<std::uint64_t>{21, 24});
    CHECK(all[0].implicated == std::vector<PartyId>{"a", "b", "c"});
}

TEST_CASE("real-time and ex-post scans produce identical alert sets") {
    MarketFixture fx;
    for (const char* p : {"inv1", "inv2", "inv3"}) {
        fx.fund_cash(p, 100000);
        fx.fund_bonds(p, 1000);
    }
    REQUIRE(fx.submit("inv2", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv3", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv2", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv3", Side::Buy, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Sell, 10, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Sell, 3, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 3, 100).ok()); // self cross

    auto rt = stream_alerts(fx.tm->ledger(), default_rules());
    REQUIRE(rt.size() == 2); // one wash, one self

    std::string path = dump_ledger(fx.tm->ledger(), "equiv");
    KeyTimelineFn keys = [&](const PartyId& p) { return fx.w.identity->key_timeline(p); };
    auto ep = expost_scan(path, default_rules(), keys);
    REQUIRE(ep.ok());
    check_same_alerts(rt, ep.value());
    std::remove(path.c_str());
}

TEST_CASE("monitor restart mid-stream: ex-post still yields the full alert set") {
    MarketFixture fx;
    fx.fund_cash("inv1", 100000);
    fx.fund_bonds("inv1", 1000);
    REQUIRE(fx.submit("inv1", Side::Sell, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 5, 100).ok());
    // a real-time consumer died here; more activity follows
    REQUIRE(fx.submit("inv1", Side::Sell, 200, 101).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 200, 101).ok());

    std::string path = dump_ledger(fx.tm->ledger(), "restart");
    KeyTimelineFn keys = [&](const PartyId& p) { return fx.w.identity->key_timeline(p); };
    auto ep = expost_scan(path, default_rules(), keys);
    REQUIRE(ep.ok());
    check_same_alerts(stream_alerts(fx.tm->ledger(), default_rules()), ep.value());
    std::remove(path.c_str());
}

TEST_CASE("ex-post scan rejects a tampered ledger") {
    MarketFixture fx;
    fx.fund_cash("inv1", 10000);
    fx.fund_bonds("inv2", 100);
    REQUIRE(fx.submit("inv2", Side::Sell, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 5, 100).ok());

    Bytes file = fx.tm->ledger().storage().read_all();
    file[file.size() / 2] ^= 0x10;
    std::string path = "monitor_tampered.ledger";
    write_file_bytes(path, view_of(file));
    KeyTimelineFn keys = [&](const PartyId& p) { return fx.w.identity->key_timeline(p); };
    auto ep = expost_scan(path, default_rules(), keys);
    REQUIRE(!ep.ok());
    CHECK(ep.error().code == Errc::CorruptLedger);
    std::remove(path.c_str());
}

TEST_CASE("two monitors over disjoint isin sets produce the union of alerts") {
    std::vector<FeedTrade> trades{
        {3, "AAA", "p", "p", 5, 100},  // self trade in AAA
        {9, "BBB", "q", "q", 5, 100},  // self trade in BBB
        {15, "AAA", "p", "q", 5, 100},
    };
    std::vector<RuleSpec> rules{{"self-1", RuleKind::SelfTrade, true, 100, 2, 500, 1000, 4}};

    TradeMonitor all(rules, "all");
    TradeMonitor only_a(rules, "a");
    only_a.restrict_isins({"AAA"});
    TradeMonitor only_b(rules, "b");
    only_b.restrict_isins({"BBB"});
    for (const auto& env : synthetic_feed(trades)) {
        all.on_envelope(env);
        only_a.on_envelope(env);
        only_b.on_envelope(env);
    }
    REQUIRE(all.alerts().size() == 2);
    REQUIRE(only_a.alerts().size() == 1);
    REQUIRE(only_b.alerts().size() == 1);
    CHECK(only_a.alerts()[0].same_finding(all.alerts()[0]));
    CHECK(only_b.alerts()[0].same_finding(all.alerts()[1]));
}

TEST_CASE("supervisor queries filter the authoritative ledger") {
    MarketFixture fx;
    fx.w.add_party("fsa", {Role::Supervisor});
    fx.fund_cash("inv1", 10000);
    fx.fund_bonds("inv2", 100);
    REQUIRE(fx.submit("inv2", Side::Sell, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 5, 100).ok());
    REQUIRE(fx.submit("inv1", Side::Buy, 3, 90).ok()); // rests

    auto rows = supervisor_query("kind=trade isin=" + fx.isin, "fsa", *fx.w.identity, fx.tm->ledger());
    REQUIRE(rows.ok());
    REQUIRE(rows.value().size() == 1);
    CHECK(rows.value()[0].party == "inv1");
    CHECK(rows.value()[0].party2 == "inv2");
    CHECK(rows.value()[0].qty == 5);

    auto orders = supervisor_query("kind=order party=inv1 price>=90", "fsa", *fx.w.identity, fx.tm->ledger());
    REQUIRE(orders.ok());
    CHECK(orders.value().size() == 2);

    // seq-ranged query rows re-fetch identically from the ledger
    auto ranged = supervisor_query("kind=trade seq>=0 seq<=1000", "fsa", *fx.w.identity, fx.tm->ledger());
    REQUIRE(ranged.ok());
    for (const QueryRow& row : ranged.value()) {
        auto again = supervisor_query("kind=trade seq=" + std::to_string(row.seq), "fsa", *fx.w.identity,
                                      fx.tm->ledger());
        REQUIRE(again.ok());
        REQUIRE(again.value().size() == 1);
        CHECK(again.value()[0].qty == row.qty);
        CHECK(again.value()[0].price == row.price);
    }

    auto denied = supervisor_query("kind=trade", "inv1", *fx.w.identity, fx.tm->ledger());
    REQUIRE(!denied.ok());
    CHECK(denied.error().code == Errc::Unauthorized);

    CHECK(!supervisor_query("garbage", "fsa", *fx.w.identity, fx.tm->ledger()).ok());
    CHECK(!supervisor_query("price>abc", "fsa", *fx.w.identity, fx.tm->ledger()).ok());
    CHECK(!supervisor_query("kind>trade", "fsa", *fx.w.identity, fx.tm->ledger()).ok());
}

TEST_CASE("alert lines are grep-able single records") {
    Alert a;
    a.alert_id = "alert-rt-0";
    a.rule_id = "self-1";
    a.isin = "GB0000000001";
    a.implicated = {"inv1"};
    a.evidence = {4, 7};
    a.detected_at = 7;
    std::string line = alert_to_line(a);
    CHECK(line.find("rule=self-1") != std::string::npos);
    CHECK(line.find("evidence=4,7") != std::string::npos);
    CHECK(line.find('\n') == std::string::npos);
}
