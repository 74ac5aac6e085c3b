#include "shardex/monitor.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace shardex {

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

TradeMonitor::TradeMonitor(std::vector<RuleSpec> rules, std::string monitor_id)
    : rules_(std::move(rules)), id_(std::move(monitor_id)) {}

Alert TradeMonitor::make_alert(const RuleSpec& rule, const std::string& isin, std::vector<PartyId> implicated,
                               std::vector<std::uint64_t> evidence, LogicalTime at) {
    Alert a;
    a.alert_id = "alert-" + id_ + "-" + std::to_string(alert_counter_++);
    a.rule_id = rule.rule_id;
    a.isin = isin;
    a.implicated = std::move(implicated);
    a.evidence = std::move(evidence);
    a.detected_at = at;
    return a;
}

std::vector<Alert> TradeMonitor::on_envelope(const EventEnvelope& env) {
    std::vector<Alert> fired;
    if (env.payload_kind == "txn.prepared") {
        Decoder d(view_of(env.payload));
        std::string txn = d.get_str();
        d.get_bytes(); // manifest
        Bytes actions_bytes = d.get_bytes();
        Decoder actions(view_of(actions_bytes));
        std::uint64_t n = actions.get_u64();
        std::vector<Action> trades;
        for (std::uint64_t i = 0; i < n; i++) {
            Action a = decode_action(view_of(actions.get_bytes()));
            if (std::holds_alternative<RecordTradeAction>(a)) trades.push_back(std::move(a));
        }
        if (!trades.empty()) pending_txn_trades_[txn] = std::move(trades);
        return fired;
    }
    if (env.payload_kind == "txn.aborted") {
        Decoder d(view_of(env.payload));
        pending_txn_trades_.erase(d.get_str());
        return fired;
    }
    if (env.payload_kind != "txn.committed") return fired;
    Decoder d(view_of(env.payload));
    auto it = pending_txn_trades_.find(d.get_str());
    if (it == pending_txn_trades_.end()) return fired;
    for (const Action& a : it->second) {
        const auto& tr = std::get<RecordTradeAction>(a);
        if (!isins_.empty() && std::find(isins_.begin(), isins_.end(), tr.isin) == isins_.end()) continue;
        FeedTrade t{env.seq, tr.isin, tr.buyer, tr.seller, tr.qty, tr.price};
        for (Alert& alert : evaluate(t)) {
            alerts_.push_back(alert);
            fired.push_back(std::move(alert));
        }
    }
    pending_txn_trades_.erase(it);
    return fired;
}

std::vector<Alert> TradeMonitor::evaluate(const FeedTrade& t) {
    std::vector<Alert> fired;
    for (const RuleSpec& rule : rules_) {
        if (!rule.enabled) continue;
        switch (rule.kind) {
            case RuleKind::SelfTrade: {
                if (t.buyer != t.seller) break;
                std::string gkey = rule.rule_id + "|" + t.isin + "|" + t.buyer;
                auto git = self_trade_group_.find(gkey);
                if (git != self_trade_group_.end()) {
                    Alert& open = alerts_[git->second];
                    if (t.seq - open.evidence.back() <= rule.window) {
                        open.evidence.push_back(t.seq); // maximal grouping within the window
                        break;
                    }
                }
                fired.push_back(make_alert(rule, t.isin, {t.buyer}, {t.seq}, t.seq));
                self_trade_group_[gkey] = alerts_.size() + fired.size() - 1;
                break;
            }
            case RuleKind::WashTrade: {
                for (int side = 0; side < 2; side++) {
                    const PartyId& p = side == 0 ? t.buyer : t.seller;
                    if (side == 1 && t.buyer == t.seller) break; // self trades count once
                    std::string base = rule.rule_id + "|" + t.isin + "|" + p + "|";
                    std::string mine = base + (side == 0 ? "B" : "S");
                    std::string opposite = base + (side == 0 ? "S" : "B");
                    auto& opp_queue = unpaired_[opposite];
                    while (!opp_queue.empty() && t.seq - opp_queue.front().seq > rule.window) {
                        opp_queue.erase(opp_queue.begin());
                    }
                    bool paired = false;
                    if (!opp_queue.empty()) {
                        const FeedTrade& leg = opp_queue.front();
                        // round trip: opposite sides, near in time, near in price
                        if (std::llabs(t.price - leg.price) * 10000 <= rule.price_tolerance_bp * leg.price) {
                            auto& trips = round_trips_[rule.rule_id + "|" + t.isin + "|" + p];
                            trips.emplace_back(t.seq, std::vector<std::uint64_t>{leg.seq, t.seq});
                            opp_queue.erase(opp_queue.begin());
                            paired = true;
                            while (!trips.empty() && t.seq - trips.front().first > rule.window) {
                                trips.erase(trips.begin());
                            }
                            if (trips.size() >= rule.min_round_trips) {
                                std::vector<std::uint64_t> evidence;
                                for (const auto& [done, legs] : trips) {
                                    evidence.insert(evidence.end(), legs.begin(), legs.end());
                                }
                                std::sort(evidence.begin(), evidence.end());
                                fired.push_back(make_alert(rule, t.isin, {p}, std::move(evidence), t.seq));
                                trips.clear();
                            }
                        }
                    }
                    if (!paired) unpaired_[mine].push_back(t);
                }
                break;
            }
            case RuleKind::PriceSpike: {
                std::string key = rule.rule_id + "|" + t.isin;
                auto pit = last_trade_.find(key);
                if (pit != last_trade_.end()) {
                    const FeedTrade& prev = pit->second;
                    if (t.seq - prev.seq <= rule.window && prev.price > 0 &&
                        std::llabs(t.price - prev.price) * 10000 >= rule.threshold_bp * prev.price) {
                        std::vector<PartyId> implicated{t.buyer};
                        if (t.seller != t.buyer) implicated.push_back(t.seller);
                        std::sort(implicated.begin(), implicated.end());
                        fired.push_back(make_alert(rule, t.isin, std::move(implicated), {prev.seq, t.seq}, t.seq));
                    }
                }
                last_trade_[key] = t;
                break;
            }
            case RuleKind::VolumeSurge: {
                std::string key = rule.rule_id + "|" + t.isin;
                SurgeState& st = surge_[key];
                std::uint64_t w = rule.window == 0 ? 1 : rule.window;
                std::uint64_t idx = t.seq / w;
                if (idx != st.window_index) {
                    st.closed_volumes.push_back(st.current_volume);
                    for (std::uint64_t k = st.window_index + 1; k < idx; k++) st.closed_volumes.push_back(0);
                    st.window_index = idx;
                    st.current_volume = 0;
                    st.current_trades.clear();
                    st.fired = false;
                }
                st.current_volume += t.qty;
                st.current_trades.push_back(t);
                if (!st.fired && !st.closed_volumes.empty()) {
                    Amount sum = 0;
                    for (Amount v : st.closed_volumes) sum += v;
                    Amount mean = sum / static_cast<Amount>(st.closed_volumes.size());
                    if (mean > 0 && st.current_volume >= rule.multiple * mean) {
                        std::vector<PartyId> implicated;
                        std::vector<std::uint64_t> evidence;
                        for (const FeedTrade& ft : st.current_trades) {
                            implicated.push_back(ft.buyer);
                            implicated.push_back(ft.seller);
                            evidence.push_back(ft.seq);
                        }
                        std::sort(implicated.begin(), implicated.end());
                        implicated.erase(std::unique(implicated.begin(), implicated.end()), implicated.end());
                        fired.push_back(make_alert(rule, t.isin, std::move(implicated), std::move(evidence), t.seq));
                        st.fired = true;
                    }
                }
                break;
            }
        }
    }
    return fired;
}

Expected<std::vector<Alert>> expost_scan(const std::string& trade_ledger_path, const std::vector<RuleSpec>& rules,
                                         const KeyTimelineFn& keys) {
    Bytes data;
    try {
        data = read_file_bytes(trade_ledger_path);
    } catch (const std::exception& e) {
        return Error{Errc::IoError, e.what()};
    }
    VerifyReport rep = verify_chain_bytes(view_of(data), keys);
    if (!rep.ok) {
        return Error{Errc::CorruptLedger,
                     "ledger fails verification at seq " +
                         (rep.first_bad_seq ? std::to_string(*rep.first_bad_seq) : std::string("?"))};
    }
    TradeMonitor monitor(rules, "expost");
    for (const EventEnvelope& env : decode_records(view_of(data))) {
        monitor.on_envelope(env);
    }
    std::vector<Alert> out = monitor.alerts();
    for (Alert& a : out) a.realtime = false;
    return out;
}

// ---------------------------------------------------------------------------
// Supervisor queries
// ---------------------------------------------------------------------------

std::vector<QueryRow> feed_rows(const std::vector<EventEnvelope>& entries) {
    std::vector<QueryRow> rows;
    std::map<std::string, QueryRow> orders; // order_id -> accepted row
    std::map<std::string, std::vector<RecordTradeAction>> pending;
    std::string manager_suffix;
    for (const EventEnvelope& env : entries) {
        Decoder d(view_of(env.payload));
        if (env.payload_kind == "order.accepted" || env.payload_kind == "order.rejected") {
            QueryRow r;
            r.seq = env.seq;
            r.kind = "order";
            r.party = d.get_str();
            d.get_u64(); // side
            r.isin = d.get_str();
            r.qty = d.get_i64();
            r.price = d.get_i64();
            r.status = env.payload_kind == "order.accepted" ? "accepted" : "rejected";
            rows.push_back(r);
        } else if (env.payload_kind == "txn.prepared") {
            std::string txn = d.get_str();
            d.get_bytes();
            Bytes actions_bytes = d.get_bytes();
            Decoder actions(view_of(actions_bytes));
            std::uint64_t n = actions.get_u64();
            for (std::uint64_t i = 0; i < n; i++) {
                Action a = decode_action(view_of(actions.get_bytes()));
                if (const auto* tr = std::get_if<RecordTradeAction>(&a)) pending[txn].push_back(*tr);
            }
        } else if (env.payload_kind == "txn.committed") {
            std::string txn = d.get_str();
            auto it = pending.find(txn);
            if (it == pending.end()) continue;
            for (const RecordTradeAction& tr : it->second) {
                QueryRow r;
                r.seq = env.seq;
                r.kind = "trade";
                r.isin = tr.isin;
                r.party = tr.buyer;
                r.party2 = tr.seller;
                r.qty = tr.qty;
                r.price = tr.price;
                r.status = "settled";
                rows.push_back(r);
            }
            pending.erase(it);
        } else if (env.payload_kind == "txn.aborted") {
            pending.erase(d.get_str());
        }
    }
    return rows;
}

Expected<SupervisorQuery> SupervisorQuery::parse(const std::string& text) {
    SupervisorQuery q;
    std::istringstream in(text);
    std::string token;
    while (in >> token) {
        static const char* ops[] = {"!=", ">=", "<=", "=", ">", "<"};
        Clause c;
        std::size_t op_pos = std::string::npos;
        for (const char* op : ops) {
            if (auto pos = token.find(op); pos != std::string::npos) {
                op_pos = pos;
                c.op = op;
                break;
            }
        }
        if (op_pos == std::string::npos || op_pos == 0 || op_pos + c.op.size() >= token.size()) {
            return Error{Errc::MalformedQuery, "expected field<op>value, got: " + token};
        }
        c.field = token.substr(0, op_pos);
        c.value = token.substr(op_pos + c.op.size());
        static const char* fields[] = {"kind", "isin", "party", "buyer", "seller", "price", "qty", "seq", "status"};
        if (std::find_if(std::begin(fields), std::end(fields),
                         [&](const char* f) { return c.field == f; }) == std::end(fields)) {
            return Error{Errc::MalformedQuery, "unknown field: " + c.field};
        }
        std::int64_t num = 0;
        auto [p, ec] = std::from_chars(c.value.data(), c.value.data() + c.value.size(), num);
        if (ec == std::errc{} && p == c.value.data() + c.value.size()) c.numeric = num;
        bool needs_numeric = c.field == "price" || c.field == "qty" || c.field == "seq";
        bool relational = c.op != "=" && c.op != "!=";
        if ((needs_numeric || relational) && !c.numeric) {
            return Error{Errc::MalformedQuery, "numeric value required for " + token};
        }
        if (relational && !needs_numeric) {
            return Error{Errc::MalformedQuery, "relational operator needs a numeric field: " + token};
        }
        q.clauses_.push_back(std::move(c));
    }
    if (q.clauses_.empty()) return Error{Errc::MalformedQuery, "empty query"};
    return q;
}

bool SupervisorQuery::matches(const QueryRow& row) const {
    for (const Clause& c : clauses_) {
        if (c.field == "price" || c.field == "qty" || c.field == "seq") {
            std::int64_t lhs = c.field == "price" ? row.price
                               : c.field == "qty" ? row.qty
                                                  : static_cast<std::int64_t>(row.seq);
            std::int64_t rhs = *c.numeric;
            bool ok = c.op == "=" ? lhs == rhs
                      : c.op == "!=" ? lhs != rhs
                      : c.op == ">=" ? lhs >= rhs
                      : c.op == "<=" ? lhs <= rhs
                      : c.op == ">" ? lhs > rhs
                                    : lhs < rhs;
            if (!ok) return false;
            continue;
        }
        std::string lhs;
        bool either = false;
        if (c.field == "kind") {
            lhs = row.kind;
        } else if (c.field == "isin") {
            lhs = row.isin;
        } else if (c.field == "buyer") {
            lhs = row.party;
        } else if (c.field == "seller") {
            lhs = row.party2;
        } else if (c.field == "status") {
            lhs = row.status;
        } else { // party: matches either side
            either = true;
        }
        bool eq = either ? (row.party == c.value || row.party2 == c.value) : lhs == c.value;
        bool ok = c.op == "=" ? eq : !eq;
        if (!ok) return false;
    }
    return true;
}

Expected<std::vector<QueryRow>> supervisor_query(const std::string& query_text, const PartyId& credentials,
                                                 const IdentityDirectory& identity, const Ledger& trade_ledger) {
    if (!identity.authorize(credentials, ActionKind::MonitorQuery)) {
        return Error{Errc::Unauthorized, credentials + " lacks MonitorQuery"};
    }
    auto parsed = SupervisorQuery::parse(query_text);
    if (!parsed.ok()) return parsed.error();
    std::vector<QueryRow> out;
    for (const QueryRow& row : feed_rows(trade_ledger.entries())) {
        if (parsed.value().matches(row)) out.push_back(row);
    }
    return out;
}

std::string alert_to_line(const Alert& a) {
    std::string line = "alert_id=" + a.alert_id + " rule=" + a.rule_id + " isin=" + a.isin + " mode=" +
                       (a.realtime ? "realtime" : "expost") + " detected_at=" + std::to_string(a.detected_at) +
                       " implicated=";
    for (std::size_t i = 0; i < a.implicated.size(); i++) {
        if (i) line += ",";
        line += a.implicated[i];
    }
    line += " evidence=";
    for (std::size_t i = 0; i < a.evidence.size(); i++) {
        if (i) line += ",";
        line += std::to_string(a.evidence[i]);
    }
    return line;
}

} // namespace shardex
