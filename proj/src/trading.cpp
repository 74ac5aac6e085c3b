#include "shardex/trading.hpp"

#include <algorithm>

namespace shardex {

namespace {

constexpr const char* kListed = "instrument.listed";
constexpr const char* kOrderAccepted = "order.accepted";
constexpr const char* kOrderRejected = "order.rejected";
constexpr const char* kOrderCancelled = "order.cancelled";
constexpr const char* kTradeFailed = "trade.failed";
constexpr const char* kTxnPrepared = "txn.prepared";
constexpr const char* kTxnCommitted = "txn.committed";
constexpr const char* kTxnAborted = "txn.aborted";

Bytes encode_manifest(const std::vector<std::string>& manifest) {
    Encoder e;
    e.put_u64(manifest.size());
    for (const auto& m : manifest) e.put_str(m);
    return e.take();
}

std::vector<std::string> decode_manifest(BytesView b) {
    Decoder d(b);
    std::uint64_t n = d.get_u64();
    std::vector<std::string> out;
    for (std::uint64_t i = 0; i < n; i++) out.push_back(d.get_str());
    return out;
}

Bytes encode_actions_list(const std::vector<Action>& actions) {
    Encoder e;
    e.put_u64(actions.size());
    for (const Action& a : actions) e.put_bytes(view_of(encode_action(a)));
    return e.take();
}

std::vector<Action> decode_actions_list(BytesView b) {
    Decoder d(b);
    std::uint64_t n = d.get_u64();
    std::vector<Action> out;
    for (std::uint64_t i = 0; i < n; i++) out.push_back(decode_action(view_of(d.get_bytes())));
    return out;
}

} // namespace

const char* order_status_name(OrderStatus s) {
    switch (s) {
        case OrderStatus::Open: return "Open";
        case OrderStatus::PartiallyFilled: return "PartiallyFilled";
        case OrderStatus::Filled: return "Filled";
        case OrderStatus::Cancelled: return "Cancelled";
        case OrderStatus::Rejected: return "Rejected";
        case OrderStatus::Expired: return "Expired";
    }
    return "?";
}

void DirectSettlement::execute(std::vector<TxnAction> actions, const PartyId& initiator, Callback cb) {
    TxnOutcome out = coordinator_.execute_atomic(actions, initiator);
    cb(out.txn_id, out.decision, out.reason);
}

// ---------------------------------------------------------------------------

TradeManager::TradeManager(Config cfg, const IdentityDirectory& identity, const InstrumentReader* contracts,
                           FundingGateway* funding, SettlementExecutor* settlement,
                           std::unique_ptr<Ledger> ledger)
    : id_(std::move(cfg.manager_id)),
      operator_id_(std::move(cfg.operator_id)),
      operator_keys_(std::move(cfg.operator_keys)),
      reject_stale_at_entry_(cfg.reject_stale_at_entry),
      identity_(&identity),
      contracts_(contracts),
      funding_(funding),
      settlement_(settlement),
      ledger_(std::move(ledger)) {
    ledger_->set_authorize_fn([this](const PartyId& p, std::string_view) {
        return identity_->authorize(p, ActionKind::OperateLedger);
    });
}

std::unique_ptr<TradeManager> TradeManager::create(Config cfg, const IdentityDirectory& identity,
                                                   const InstrumentReader* contracts, FundingGateway* funding,
                                                   SettlementExecutor* settlement,
                                                   std::unique_ptr<Storage> storage, LedgerConfig lcfg) {
    std::string mid = cfg.manager_id;
    return std::unique_ptr<TradeManager>(new TradeManager(std::move(cfg), identity, contracts, funding, settlement,
                                                          std::make_unique<Ledger>(mid, std::move(storage), lcfg)));
}

std::unique_ptr<TradeManager> TradeManager::restore(Config cfg, const IdentityDirectory& identity,
                                                    const InstrumentReader* contracts, FundingGateway* funding,
                                                    SettlementExecutor* settlement,
                                                    std::unique_ptr<Storage> storage, LedgerConfig lcfg) {
    auto ledger = Ledger::load(cfg.manager_id, std::move(storage), lcfg);
    auto mgr = std::unique_ptr<TradeManager>(
        new TradeManager(std::move(cfg), identity, contracts, funding, settlement, std::move(ledger)));
    for (const EventEnvelope& env : mgr->ledger_->entries()) mgr->apply_event(env);
    return mgr;
}

Expected<std::uint64_t> TradeManager::append_local(std::string_view kind, Bytes payload) {
    Bytes sk = operator_keys_.secret_key;
    auto res = ledger_->append_sealed(kind, std::move(payload), operator_id_,
                                      [&sk](BytesView pre) { return crypto::sign(pre, view_of(sk)); });
    if (!res.ok()) return res.error();
    return res.value().seq;
}

Status TradeManager::list_instrument(InstrumentListing listing) {
    if (books_.count(listing.isin)) return Error{Errc::InvalidParams, "already listed: " + listing.isin};
    Encoder e;
    e.put_str(listing.isin);
    e.put_str(listing.currency);
    e.put_str(listing.security_manager_id);
    e.put_str(listing.currency_manager_id);
    auto res = append_local(kListed, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

// ---------------------------------------------------------------------------
// Order intake
// ---------------------------------------------------------------------------

Bytes TradeManager::order_intent(const OrderDraft& draft, const PartyId& party) {
    Encoder e;
    e.put_str("order");
    e.put_str(party);
    e.put_u64(draft.side == Side::Buy ? 0 : 1);
    e.put_str(draft.isin);
    e.put_i64(draft.qty);
    e.put_i64(draft.limit_price);
    e.put_u64(draft.pinned_state_version);
    return e.take();
}

Expected<std::string> TradeManager::submit_order(const OrderDraft& draft, const PartyId& party, Bytes signature) {
    auto bit = books_.find(draft.isin);
    if (bit == books_.end()) return Error{Errc::UnknownInstrument, draft.isin};
    if (!identity_->authorize(party, ActionKind::SubmitOrder)) {
        return Error{Errc::Unauthorized, party + " lacks SubmitOrder"};
    }
    auto key = identity_->active_key(party);
    if (!key) return Error{Errc::Unauthorized, "no active key for " + party};
    if (!crypto::verify(view_of(order_intent(draft, party)), view_of(signature), view_of(*key))) {
        return Error{Errc::BadSignature, "order intent signature"};
    }
    if (draft.qty <= 0 || draft.limit_price <= 0) {
        return Error{Errc::InvalidParams, "quantity and price must be positive"};
    }
    if (!contracts_->is_tradeable(draft.isin)) return Error{Errc::InstrumentSuspended, draft.isin};
    std::uint64_t current = contracts_->version_of(draft.isin);
    if (draft.pinned_state_version > current ||
        (reject_stale_at_entry_ && draft.pinned_state_version != current)) {
        return Error{Errc::StaleStateVersion,
                     "pinned " + std::to_string(draft.pinned_state_version) + ", current " + std::to_string(current)};
    }

    const InstrumentListing& listing = bit->second.listing;
    Expected<std::string> rsv =
        draft.side == Side::Buy
            ? funding_->reserve(listing.currency_manager_id, party, listing.currency, draft.qty * draft.limit_price)
            : funding_->reserve(listing.security_manager_id, party, draft.isin, draft.qty);
    if (!rsv.ok()) {
        Encoder e;
        e.put_str(party);
        e.put_u64(draft.side == Side::Buy ? 0 : 1);
        e.put_str(draft.isin);
        e.put_i64(draft.qty);
        e.put_i64(draft.limit_price);
        e.put_u64(draft.pinned_state_version);
        e.put_str(rsv.error().to_string());
        e.put_bytes(view_of(signature));
        if (auto r = append_local(kOrderRejected, e.take()); !r.ok()) return r.error();
        return rsv.error();
    }

    Encoder e;
    e.put_str(party);
    e.put_u64(draft.side == Side::Buy ? 0 : 1);
    e.put_str(draft.isin);
    e.put_i64(draft.qty);
    e.put_i64(draft.limit_price);
    e.put_u64(draft.pinned_state_version);
    e.put_str(rsv.value());
    e.put_bytes(view_of(signature));
    auto res = append_local(kOrderAccepted, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    std::string order_id = "ord-" + id_ + "-" + std::to_string(res.value());
    match_and_settle(draft.isin);
    return order_id;
}

Bytes TradeManager::cancel_intent(const std::string& order_id, const PartyId& party) {
    Encoder e;
    e.put_str("cancel");
    e.put_str(party);
    e.put_str(order_id);
    return e.take();
}

Status TradeManager::cancel_order(const std::string& order_id, const PartyId& party, Bytes signature) {
    auto it = orders_.find(order_id);
    if (it == orders_.end()) return Error{Errc::UnknownOrder, order_id};
    Order& o = it->second;
    if (o.party != party) return Error{Errc::NotOwner, order_id};
    auto key = identity_->active_key(party);
    if (!key) return Error{Errc::Unauthorized, "no active key for " + party};
    if (!crypto::verify(view_of(cancel_intent(order_id, party)), view_of(signature), view_of(*key))) {
        return Error{Errc::BadSignature, "cancel intent signature"};
    }
    if (o.status != OrderStatus::Open && o.status != OrderStatus::PartiallyFilled) {
        return Error{Errc::AlreadyTerminal, order_id};
    }
    if (o.pinned) return Error{Errc::InvalidParams, "settlement in flight for " + order_id};
    return cancel_internal(o, OrderStatus::Cancelled, "user");
}

Status TradeManager::cancel_internal(Order& o, OrderStatus final_status, const std::string& reason) {
    const InstrumentListing& listing = books_.at(o.isin).listing;
    const std::string& rm = o.side == Side::Buy ? listing.currency_manager_id : listing.security_manager_id;
    if (Status s = funding_->release(rm, o.reservation_id); !s.ok()) return s;
    Encoder e;
    e.put_str(o.order_id);
    e.put_u64(static_cast<std::uint64_t>(final_status));
    e.put_str(reason);
    auto res = append_local(kOrderCancelled, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

void TradeManager::sweep_stale(const std::string& isin) {
    auto bit = books_.find(isin);
    if (bit == books_.end()) return;
    bool tradeable = contracts_->is_tradeable(isin);
    std::uint64_t current = contracts_->version_of(isin);
    std::vector<std::string> due;
    for (const auto& [key, oid] : bit->second.bids.levels) {
        const Order& o = orders_.at(oid);
        if (!o.pinned && (!tradeable || o.pinned_state_version != current)) due.push_back(oid);
    }
    for (const auto& [key, oid] : bit->second.asks.levels) {
        const Order& o = orders_.at(oid);
        if (!o.pinned && (!tradeable || o.pinned_state_version != current)) due.push_back(oid);
    }
    for (const std::string& oid : due) {
        cancel_internal(orders_.at(oid), OrderStatus::Expired, tradeable ? "stale-version" : "suspended");
    }
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

void TradeManager::match_and_settle(const std::string& isin) {
    auto bit = books_.find(isin);
    if (bit == books_.end() || settling_.count(isin)) return;
    sweep_stale(isin);
    InstrumentBook& book = bit->second;
    if (book.bids.levels.empty() || book.asks.levels.empty()) return;

    Order& buy = orders_.at(book.bids.levels.begin()->second);
    Order& sell = orders_.at(book.asks.levels.begin()->second);
    if (buy.limit_price < sell.limit_price) return;
    // a pinned order belongs to a settlement whose outcome is still in doubt
    if (buy.pinned || sell.pinned) return;

    // maker price: the order that was resting sets the execution price
    const Order& resting = buy.entry_seq < sell.entry_seq ? buy : sell;
    Amount price = resting.limit_price;
    Amount qty = std::min(buy.remaining, sell.remaining);
    std::string trade_id = "trd-" + id_ + "-" + std::to_string(trade_counter_);

    std::vector<TxnAction> actions;
    actions.push_back({id_, RecordTradeAction{trade_id, isin, buy.order_id, sell.order_id, qty, price, buy.party,
                                              sell.party}});
    actions.push_back({book.listing.security_manager_id, ReservedTransferAction{sell.reservation_id, buy.party, qty}});
    actions.push_back(
        {book.listing.currency_manager_id, ReservedTransferAction{buy.reservation_id, sell.party, qty * price}});
    if (Amount refund = qty * (buy.limit_price - price); refund > 0) {
        // price improvement: the buyer reserved at its limit, return the excess now
        actions.push_back({book.listing.currency_manager_id, ReservedReturnAction{buy.reservation_id, refund}});
    }

    settling_[isin] = true;
    std::string buy_id = buy.order_id, sell_id = sell.order_id;
    settlement_->execute(std::move(actions), operator_id_,
                         [this, isin, buy_id, sell_id](const TxnId& txn, TxnDecision decision, const Error& reason) {
                             settling_.erase(isin);
                             if (decision == TxnDecision::Aborted) {
                                 // Defensive path: reservation accounting should make this
                                 // unreachable; if it fires, both orders leave the book.
                                 Encoder e;
                                 e.put_str(txn);
                                 e.put_str(buy_id);
                                 e.put_str(sell_id);
                                 e.put_str(reason.to_string());
                                 (void)append_local(kTradeFailed, e.take());
                                 for (const std::string& oid : {buy_id, sell_id}) {
                                     auto it = orders_.find(oid);
                                     if (it != orders_.end() && !it->second.pinned &&
                                         (it->second.status == OrderStatus::Open ||
                                          it->second.status == OrderStatus::PartiallyFilled)) {
                                         cancel_internal(it->second, OrderStatus::Rejected, "settlement-failed");
                                     }
                                 }
                             }
                             match_and_settle(isin);
                         });
}

Status TradeManager::trade_feed(std::uint64_t from_seq, Ledger::Subscriber sub) {
    return ledger_->subscribe(from_seq, std::move(sub));
}

// ---------------------------------------------------------------------------
// Participant (the trade record rides in the settlement transaction)
// ---------------------------------------------------------------------------

Vote TradeManager::txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) {
    if (auto it = txns_.find(txn); it != txns_.end()) {
        if (it->second.state == TxnState::Prepared || it->second.state == TxnState::Committed) {
            return Vote::yes_vote();
        }
        return Vote::no_vote(Error{Errc::AlreadyTerminal, "transaction aborted"});
    }
    std::vector<Action> mine;
    for (const TxnAction& a : all_actions) {
        if (a.manager_id == id_) mine.push_back(a.action);
    }
    if (mine.empty()) return Vote::no_vote(Error{Errc::InvalidParams, "no actions for " + id_});
    for (const Action& action : mine) {
        const auto* tr = std::get_if<RecordTradeAction>(&action);
        if (!tr) return Vote::no_vote(Error{Errc::InvalidParams, "unsupported action for trade manager"});
        for (const std::string& oid : {tr->buy_order_id, tr->sell_order_id}) {
            auto it = orders_.find(oid);
            if (it == orders_.end()) return Vote::no_vote(Error{Errc::UnknownOrder, oid});
            const Order& o = it->second;
            if (o.pinned) return Vote::no_vote(Error{Errc::InvalidParams, "order pinned: " + oid});
            if (o.status != OrderStatus::Open && o.status != OrderStatus::PartiallyFilled) {
                return Vote::no_vote(Error{Errc::AlreadyTerminal, oid});
            }
            if (o.remaining < tr->qty) return Vote::no_vote(Error{Errc::InvalidParams, "overfill of " + oid});
        }
    }
    Encoder e;
    e.put_str(txn);
    e.put_bytes(view_of(encode_manifest(manifest_of(all_actions))));
    e.put_bytes(view_of(encode_actions_list(mine)));
    auto res = append_local(kTxnPrepared, e.take());
    if (!res.ok()) return Vote::no_vote(res.error());
    apply_event(ledger_->at(res.value()));
    return Vote::yes_vote();
}

Expected<std::vector<std::uint64_t>> TradeManager::txn_commit(const TxnId& txn) {
    auto it = txns_.find(txn);
    if (it == txns_.end()) return Error{Errc::UnknownTxn, "commit without prepare: " + txn};
    if (it->second.state == TxnState::Committed) return std::vector<std::uint64_t>{};
    if (it->second.state == TxnState::Aborted) return Error{Errc::AlreadyTerminal, txn};
    Encoder e;
    e.put_str(txn);
    auto res = append_local(kTxnCommitted, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return std::vector<std::uint64_t>{res.value()};
}

Status TradeManager::txn_abort(const TxnId& txn) {
    auto it = txns_.find(txn);
    if (it == txns_.end()) return ok_status();
    if (it->second.state == TxnState::Aborted) return ok_status();
    if (it->second.state == TxnState::Committed) return Error{Errc::AlreadyTerminal, txn};
    Encoder e;
    e.put_str(txn);
    auto res = append_local(kTxnAborted, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

TxnState TradeManager::txn_state(const TxnId& txn) const {
    auto it = txns_.find(txn);
    return it == txns_.end() ? TxnState::None : it->second.state;
}

std::vector<TxnId> TradeManager::in_doubt_txns() const {
    std::vector<TxnId> out;
    for (const auto& [txn, pending] : txns_) {
        if (pending.state == TxnState::Prepared) out.push_back(txn);
    }
    return out;
}

std::vector<std::string> TradeManager::txn_manifest(const TxnId& txn) const {
    auto it = txns_.find(txn);
    return it == txns_.end() ? std::vector<std::string>{} : it->second.manifest;
}

// ---------------------------------------------------------------------------
// Reducer
// ---------------------------------------------------------------------------

void TradeManager::remove_from_book(const Order& o) {
    InstrumentBook& book = books_.at(o.isin);
    BookSide& side = o.side == Side::Buy ? book.bids : book.asks;
    Amount price_key = o.side == Side::Buy ? -o.limit_price : o.limit_price;
    side.levels.erase({price_key, o.entry_seq});
}

void TradeManager::apply_event(const EventEnvelope& env) {
    Decoder d(view_of(env.payload));
    const std::string& kind = env.payload_kind;
    if (kind == kListed) {
        InstrumentListing l;
        l.isin = d.get_str();
        l.currency = d.get_str();
        l.security_manager_id = d.get_str();
        l.currency_manager_id = d.get_str();
        books_[l.isin] = InstrumentBook{l, {}, {}};
    } else if (kind == kOrderAccepted) {
        Order o;
        o.party = d.get_str();
        o.side = d.get_u64() == 0 ? Side::Buy : Side::Sell;
        o.isin = d.get_str();
        o.qty = d.get_i64();
        o.limit_price = d.get_i64();
        o.pinned_state_version = d.get_u64();
        o.reservation_id = d.get_str();
        o.remaining = o.qty;
        o.entry_seq = env.seq;
        o.order_id = "ord-" + id_ + "-" + std::to_string(env.seq);
        o.status = OrderStatus::Open;
        InstrumentBook& book = books_.at(o.isin);
        BookSide& side = o.side == Side::Buy ? book.bids : book.asks;
        Amount price_key = o.side == Side::Buy ? -o.limit_price : o.limit_price;
        side.levels[{price_key, o.entry_seq}] = o.order_id;
        orders_[o.order_id] = std::move(o);
    } else if (kind == kOrderCancelled) {
        std::string oid = d.get_str();
        auto status = static_cast<OrderStatus>(d.get_u64());
        Order& o = orders_.at(oid);
        remove_from_book(o);
        o.status = status;
    } else if (kind == kTxnPrepared) {
        PendingTxn p;
        std::string txn = d.get_str();
        p.manifest = decode_manifest(view_of(d.get_bytes()));
        p.actions = decode_actions_list(view_of(d.get_bytes()));
        for (const Action& action : p.actions) {
            if (const auto* tr = std::get_if<RecordTradeAction>(&action)) {
                orders_.at(tr->buy_order_id).pinned = true;
                orders_.at(tr->sell_order_id).pinned = true;
            }
        }
        txns_[txn] = std::move(p);
        trade_counter_++;
    } else if (kind == kTxnCommitted) {
        std::string txn_id = d.get_str();
        PendingTxn& p = txns_.at(txn_id);
        for (const Action& action : p.actions) {
            const auto* tr = std::get_if<RecordTradeAction>(&action);
            if (!tr) continue;
            for (const std::string& oid : {tr->buy_order_id, tr->sell_order_id}) {
                Order& o = orders_.at(oid);
                o.pinned = false;
                o.remaining -= tr->qty;
                if (o.remaining == 0) {
                    remove_from_book(o);
                    o.status = OrderStatus::Filled;
                } else {
                    o.status = OrderStatus::PartiallyFilled;
                }
            }
            Trade t;
            t.trade_id = tr->trade_id;
            t.isin = tr->isin;
            t.buy_order_id = tr->buy_order_id;
            t.sell_order_id = tr->sell_order_id;
            t.qty = tr->qty;
            t.price = tr->price;
            t.buyer = tr->buyer;
            t.seller = tr->seller;
            t.settlement_txn_id = txn_id;
            t.settled = true;
            t.seq = env.seq;
            trades_.push_back(std::move(t));
        }
        p.state = TxnState::Committed;
    } else if (kind == kTxnAborted) {
        PendingTxn& p = txns_.at(d.get_str());
        for (const Action& action : p.actions) {
            if (const auto* tr = std::get_if<RecordTradeAction>(&action)) {
                orders_.at(tr->buy_order_id).pinned = false;
                orders_.at(tr->sell_order_id).pinned = false;
            }
        }
        p.state = TxnState::Aborted;
    }
    // order.rejected and trade.failed are feed records with no book effect
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

const Order* TradeManager::order(const std::string& order_id) const {
    auto it = orders_.find(order_id);
    return it == orders_.end() ? nullptr : &it->second;
}

std::vector<TradeManager::BookLevel> TradeManager::bids(const std::string& isin) const {
    std::vector<BookLevel> out;
    auto bit = books_.find(isin);
    if (bit == books_.end()) return out;
    for (const auto& [key, oid] : bit->second.bids.levels) {
        const Order& o = orders_.at(oid);
        out.push_back(BookLevel{o.limit_price, o.remaining, oid});
    }
    return out;
}

std::vector<TradeManager::BookLevel> TradeManager::asks(const std::string& isin) const {
    std::vector<BookLevel> out;
    auto bit = books_.find(isin);
    if (bit == books_.end()) return out;
    for (const auto& [key, oid] : bit->second.asks.levels) {
        const Order& o = orders_.at(oid);
        out.push_back(BookLevel{o.limit_price, o.remaining, oid});
    }
    return out;
}

Bytes TradeManager::encode_state() const {
    Encoder e;
    e.put_u64(books_.size());
    for (const auto& [isin, book] : books_) {
        e.put_str(isin);
        e.put_str(book.listing.currency);
        e.put_str(book.listing.security_manager_id);
        e.put_str(book.listing.currency_manager_id);
        e.put_u64(book.bids.levels.size());
        for (const auto& [key, oid] : book.bids.levels) e.put_str(oid);
        e.put_u64(book.asks.levels.size());
        for (const auto& [key, oid] : book.asks.levels) e.put_str(oid);
    }
    e.put_u64(orders_.size());
    for (const auto& [oid, o] : orders_) {
        e.put_str(oid);
        e.put_u64(o.side == Side::Buy ? 0 : 1);
        e.put_str(o.isin);
        e.put_u64(o.pinned_state_version);
        e.put_i64(o.qty);
        e.put_i64(o.remaining);
        e.put_i64(o.limit_price);
        e.put_str(o.party);
        e.put_str(o.reservation_id);
        e.put_u64(o.entry_seq);
        e.put_u64(static_cast<std::uint64_t>(o.status));
        e.put_bool(o.pinned);
    }
    e.put_u64(trades_.size());
    for (const Trade& t : trades_) {
        e.put_str(t.trade_id);
        e.put_str(t.isin);
        e.put_str(t.buy_order_id);
        e.put_str(t.sell_order_id);
        e.put_i64(t.qty);
        e.put_i64(t.price);
        e.put_str(t.buyer);
        e.put_str(t.seller);
        e.put_u64(t.seq);
    }
    e.put_u64(txns_.size());
    for (const auto& [txn, p] : txns_) {
        e.put_str(txn);
        e.put_u64(static_cast<std::uint64_t>(p.state));
    }
    e.put_u64(trade_counter_);
    return e.take();
}

} // namespace shardex
