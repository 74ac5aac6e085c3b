#include "shardex/txn.hpp"

#include <algorithm>
#include <set>

namespace shardex {

namespace {

enum ActionTag : std::uint64_t {
    kTransfer = 0,
    kReservedTransfer = 1,
    kReservedReturn = 2,
    kRegisterResource = 3,
    kApplyLifecycle = 4,
    kRegisterInstrument = 5,
    kRecordTrade = 6,
};

} // namespace

Bytes encode_action(const Action& a) {
    Encoder e;
    if (const auto* t = std::get_if<TransferAction>(&a)) {
        e.put_u64(kTransfer);
        e.put_str(t->from);
        e.put_str(t->to);
        e.put_str(t->resource);
        e.put_i64(t->amount);
        e.put_str(t->ref);
        e.put_str(t->author);
        e.put_bytes(view_of(t->signature));
    } else if (const auto* rt = std::get_if<ReservedTransferAction>(&a)) {
        e.put_u64(kReservedTransfer);
        e.put_str(rt->reservation_id);
        e.put_str(rt->to);
        e.put_i64(rt->amount);
    } else if (const auto* rr = std::get_if<ReservedReturnAction>(&a)) {
        e.put_u64(kReservedReturn);
        e.put_str(rr->reservation_id);
        e.put_i64(rr->amount);
    } else if (const auto* reg = std::get_if<RegisterResourceAction>(&a)) {
        e.put_u64(kRegisterResource);
        e.put_str(reg->resource_id);
        e.put_u64(reg->decimals);
        e.put_str(reg->issuer);
    } else if (const auto* al = std::get_if<ApplyLifecycleAction>(&a)) {
        e.put_u64(kApplyLifecycle);
        e.put_str(al->isin);
        e.put_bytes(view_of(al->event_bytes));
    } else if (const auto* ri = std::get_if<RegisterInstrumentAction>(&a)) {
        e.put_u64(kRegisterInstrument);
        e.put_str(ri->isin);
        e.put_str(ri->spec_text);
        e.put_bytes(view_of(ri->docs_hash));
        e.put_str(ri->issuer);
        e.put_bytes(view_of(ri->signature));
    } else if (const auto* tr = std::get_if<RecordTradeAction>(&a)) {
        e.put_u64(kRecordTrade);
        e.put_str(tr->trade_id);
        e.put_str(tr->isin);
        e.put_str(tr->buy_order_id);
        e.put_str(tr->sell_order_id);
        e.put_i64(tr->qty);
        e.put_i64(tr->price);
        e.put_str(tr->buyer);
        e.put_str(tr->seller);
    }
    return e.take();
}

Action decode_action(BytesView b) {
    Decoder d(b);
    std::uint64_t tag = d.get_u64();
    switch (tag) {
        case kTransfer: {
            TransferAction t;
            t.from = d.get_str();
            t.to = d.get_str();
            t.resource = d.get_str();
            t.amount = d.get_i64();
            t.ref = d.get_str();
            t.author = d.get_str();
            t.signature = d.get_bytes();
            return t;
        }
        case kReservedTransfer: {
            ReservedTransferAction t;
            t.reservation_id = d.get_str();
            t.to = d.get_str();
            t.amount = d.get_i64();
            return t;
        }
        case kReservedReturn: {
            ReservedReturnAction t;
            t.reservation_id = d.get_str();
            t.amount = d.get_i64();
            return t;
        }
        case kRegisterResource: {
            RegisterResourceAction t;
            t.resource_id = d.get_str();
            t.decimals = static_cast<std::uint32_t>(d.get_u64());
            t.issuer = d.get_str();
            return t;
        }
        case kApplyLifecycle: {
            ApplyLifecycleAction t;
            t.isin = d.get_str();
            t.event_bytes = d.get_bytes();
            return t;
        }
        case kRegisterInstrument: {
            RegisterInstrumentAction t;
            t.isin = d.get_str();
            t.spec_text = d.get_str();
            t.docs_hash = d.get_bytes();
            t.issuer = d.get_str();
            t.signature = d.get_bytes();
            return t;
        }
        case kRecordTrade: {
            RecordTradeAction t;
            t.trade_id = d.get_str();
            t.isin = d.get_str();
            t.buy_order_id = d.get_str();
            t.sell_order_id = d.get_str();
            t.qty = d.get_i64();
            t.price = d.get_i64();
            t.buyer = d.get_str();
            t.seller = d.get_str();
            return t;
        }
        default:
            throw DecodeError("unknown action tag");
    }
}

Bytes encode_txn_actions(const std::vector<TxnAction>& actions) {
    Encoder e;
    e.put_u64(actions.size());
    for (const TxnAction& a : actions) {
        e.put_str(a.manager_id);
        e.put_bytes(view_of(encode_action(a.action)));
    }
    return e.take();
}

std::vector<TxnAction> decode_txn_actions(BytesView b) {
    Decoder d(b);
    std::uint64_t n = d.get_u64();
    std::vector<TxnAction> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; i++) {
        TxnAction a;
        a.manager_id = d.get_str();
        a.action = decode_action(view_of(d.get_bytes()));
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<std::string> manifest_of(const std::vector<TxnAction>& actions) {
    std::vector<std::string> ids;
    for (const TxnAction& a : actions) {
        if (std::find(ids.begin(), ids.end(), a.manager_id) == ids.end()) ids.push_back(a.manager_id);
    }
    return ids;
}

// ---------------------------------------------------------------------------
// DirectCoordinator
// ---------------------------------------------------------------------------

TxnOutcome DirectCoordinator::execute_atomic(const std::vector<TxnAction>& actions, const PartyId& initiator) {
    TxnOutcome out;
    if (actions.empty()) {
        out.reason = Error{Errc::InvalidParams, "empty action list"};
        return out;
    }
    TxnId txn = id_ + "-" + std::to_string(txn_counter_++) + "-" + initiator;
    out.txn_id = txn;
    std::vector<std::string> manifest = manifest_of(actions);

    std::vector<TxnParticipant*> prepared;
    for (const std::string& mid : manifest) {
        TxnParticipant* p = resolve_(mid);
        if (!p) {
            out.reason = Error{Errc::ParticipantUnreachable, mid};
            for (TxnParticipant* q : prepared) q->txn_abort(txn);
            return out;
        }
        Vote v = p->txn_prepare(txn, actions);
        if (!v.yes) {
            out.reason = v.reason;
            for (TxnParticipant* q : prepared) q->txn_abort(txn);
            return out;
        }
        prepared.push_back(p);
    }

    out.decision = TxnDecision::Committed;
    for (TxnParticipant* p : prepared) {
        auto seqs = p->txn_commit(txn);
        if (seqs.ok()) out.committed_seqs[p->participant_id()] = seqs.value();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

std::optional<TxnDecision> reconstruct_decision(const TxnId& txn, const std::vector<std::string>& manifest,
                                                const ParticipantResolver& resolve) {
    bool all_reachable = true;
    for (const std::string& mid : manifest) {
        TxnParticipant* p = resolve(mid);
        if (!p) {
            all_reachable = false;
            continue;
        }
        TxnState s = p->txn_state(txn);
        if (s == TxnState::Committed) return TxnDecision::Committed;
        if (s == TxnState::Aborted) return TxnDecision::Aborted;
    }
    // Nobody committed. Aborting is safe only when every participant answered:
    // with the coordinator stateless, the set of durable participant logs is
    // the decision of record.
    if (all_reachable) return TxnDecision::Aborted;
    return std::nullopt;
}

std::vector<TxnId> recover_participant(TxnParticipant& participant, const ParticipantResolver& resolve) {
    std::vector<TxnId> blocked;
    for (const TxnId& txn : participant.in_doubt_txns()) {
        auto decision = reconstruct_decision(txn, participant.txn_manifest(txn), resolve);
        if (!decision) {
            blocked.push_back(txn); // operator alert surface
            continue;
        }
        if (*decision == TxnDecision::Committed) {
            participant.txn_commit(txn);
        } else {
            participant.txn_abort(txn);
        }
    }
    return blocked;
}

} // namespace shardex
