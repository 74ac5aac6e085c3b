#include "shardex/resource.hpp"

#include <algorithm>

namespace shardex {

namespace {

constexpr const char* kRegistered = "res.registered";
constexpr const char* kAccountOpened = "res.account_opened";
constexpr const char* kIssued = "res.issued";
constexpr const char* kTransferred = "res.transferred";
constexpr const char* kReserved = "res.reserved";
constexpr const char* kReservationSettled = "res.reservation_settled";
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

Bytes encode_own_actions(const std::vector<Action>& actions) {
    Encoder e;
    e.put_u64(actions.size());
    for (const Action& a : actions) e.put_bytes(view_of(encode_action(a)));
    return e.take();
}

std::vector<Action> decode_own_actions(BytesView b) {
    Decoder d(b);
    std::uint64_t n = d.get_u64();
    std::vector<Action> out;
    for (std::uint64_t i = 0; i < n; i++) out.push_back(decode_action(view_of(d.get_bytes())));
    return out;
}

} // namespace

ResourceManager::ResourceManager(Config cfg, const IdentityDirectory& identity, std::unique_ptr<Ledger> ledger)
    : id_(std::move(cfg.manager_id)),
      operator_id_(std::move(cfg.operator_id)),
      operator_keys_(std::move(cfg.operator_keys)),
      verify_signatures_(cfg.verify_signatures),
      identity_(&identity),
      ledger_(std::move(ledger)) {
    ledger_->set_authorize_fn([this](const PartyId& p, std::string_view) {
        return identity_->authorize(p, ActionKind::OperateLedger);
    });
}

std::unique_ptr<ResourceManager> ResourceManager::create(Config cfg, const IdentityDirectory& identity,
                                                         std::unique_ptr<Storage> storage, LedgerConfig lcfg) {
    std::string mid = cfg.manager_id;
    return std::unique_ptr<ResourceManager>(
        new ResourceManager(std::move(cfg), identity, std::make_unique<Ledger>(mid, std::move(storage), lcfg)));
}

std::unique_ptr<ResourceManager> ResourceManager::restore(Config cfg, const IdentityDirectory& identity,
                                                          std::unique_ptr<Storage> storage, LedgerConfig lcfg) {
    auto ledger = Ledger::load(cfg.manager_id, std::move(storage), lcfg);
    auto mgr = std::unique_ptr<ResourceManager>(new ResourceManager(std::move(cfg), identity, std::move(ledger)));
    for (const EventEnvelope& env : mgr->ledger_->entries()) mgr->apply_event(env);
    return mgr;
}

Expected<std::uint64_t> ResourceManager::append_local(std::string_view kind, Bytes payload) {
    Bytes sk = operator_keys_.secret_key;
    auto res = ledger_->append_sealed(kind, std::move(payload), operator_id_,
                                      [&sk](BytesView pre) { return crypto::sign(pre, view_of(sk)); });
    if (!res.ok()) return res.error();
    return res.value().seq;
}

ResourceAccount& ResourceManager::account_ref(const PartyId& party, const ResourceId& resource) {
    return accounts_[resource][party];
}

// ---------------------------------------------------------------------------
// Bootstrap surface
// ---------------------------------------------------------------------------

Status ResourceManager::register_resource(const ResourceId& id, std::uint32_t decimals, const PartyId& issuer) {
    if (resources_.count(id)) return Error{Errc::InvalidParams, "resource already registered: " + id};
    if (!identity_->known_party(issuer)) return Error{Errc::UnknownParty, issuer};
    Encoder e;
    e.put_str(id);
    e.put_u64(decimals);
    e.put_str(issuer);
    auto res = append_local(kRegistered, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

Status ResourceManager::open_account(const PartyId& party, const ResourceId& resource, Amount credit_limit) {
    if (!resources_.count(resource)) return Error{Errc::UnknownResource, resource};
    if (!identity_->known_party(party)) return Error{Errc::UnknownParty, party};
    if (credit_limit > 0) return Error{Errc::InvalidParams, "credit limit must be <= 0"};
    Encoder e;
    e.put_str(party);
    e.put_str(resource);
    e.put_i64(credit_limit);
    auto res = append_local(kAccountOpened, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

// ---------------------------------------------------------------------------
// Client operations
// ---------------------------------------------------------------------------

Bytes ResourceManager::transfer_intent(const TransferInstruction& instr) {
    Encoder e;
    e.put_str("transfer");
    e.put_str(instr.from);
    e.put_str(instr.to);
    e.put_str(instr.resource);
    e.put_i64(instr.amount);
    e.put_str(instr.ref);
    return e.take();
}

Status ResourceManager::check_transfer(const TransferInstruction& instr, const PartyId& author,
                                       BytesView signature) const {
    if (instr.amount <= 0) return Error{Errc::InvalidParams, "amount must be positive"};
    if (instr.from == instr.to) return Error{Errc::InvalidParams, "self transfer"};
    auto rit = resources_.find(instr.resource);
    if (rit == resources_.end()) return Error{Errc::UnknownResource, instr.resource};
    if (author != instr.from) return Error{Errc::Unauthorized, "author must own the debited account"};
    if (!identity_->authorize(author, ActionKind::Transfer)) {
        return Error{Errc::Unauthorized, author + " lacks Transfer"};
    }
    if (verify_signatures_) {
        auto key = identity_->active_key(author);
        if (!key) return Error{Errc::Unauthorized, "no active key for " + author};
        if (!crypto::verify(view_of(transfer_intent(instr)), signature, view_of(*key))) {
            return Error{Errc::BadSignature, "transfer intent signature"};
        }
    }
    auto ait = accounts_.find(instr.resource);
    const ResourceAccount* from =
        ait == accounts_.end() ? nullptr
                               : (ait->second.count(instr.from) ? &ait->second.at(instr.from) : nullptr);
    if (!from) return Error{Errc::UnknownAccount, instr.from + "/" + instr.resource};
    if (from->available - instr.amount < from->credit_limit) {
        return Error{Errc::InsufficientBalance, instr.from + " cannot cover " + std::to_string(instr.amount)};
    }
    return ok_status();
}

Status ResourceManager::transfer(const TransferInstruction& instr, const PartyId& author, Bytes signature) {
    if (Status s = check_transfer(instr, author, view_of(signature)); !s.ok()) return s;
    Encoder e;
    e.put_str(instr.from);
    e.put_str(instr.to);
    e.put_str(instr.resource);
    e.put_i64(instr.amount);
    e.put_str(instr.ref);
    e.put_str(author);
    e.put_bytes(view_of(signature));
    auto res = append_local(kTransferred, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

Bytes ResourceManager::reserve_intent(const PartyId& owner, const ResourceId& resource, Amount amount) {
    Encoder e;
    e.put_str("reserve");
    e.put_str(owner);
    e.put_str(resource);
    e.put_i64(amount);
    return e.take();
}

Expected<std::string> ResourceManager::reserve(const PartyId& owner, const ResourceId& resource, Amount amount,
                                               const PartyId& author, Bytes signature,
                                               std::optional<std::uint64_t> ttl_events) {
    if (amount <= 0) return Error{Errc::InvalidParams, "amount must be positive"};
    if (!resources_.count(resource)) return Error{Errc::UnknownResource, resource};
    // Owners reserve their own funds; the market operator reserves on behalf
    // of an order's owner, with the signed order in the trade ledger as the
    // consent trail.
    if (author != owner && !identity_->authorize(author, ActionKind::OperateLedger)) {
        return Error{Errc::Unauthorized, "reservations are taken by their owner or the operator"};
    }
    if (!identity_->authorize(owner, ActionKind::Reserve)) return Error{Errc::Unauthorized, owner + " lacks Reserve"};
    auto key = identity_->active_key(author);
    if (!key) return Error{Errc::Unauthorized, "no active key for " + author};
    if (!crypto::verify(view_of(reserve_intent(owner, resource, amount)), view_of(signature), view_of(*key))) {
        return Error{Errc::BadSignature, "reserve intent signature"};
    }
    auto ait = accounts_.find(resource);
    const ResourceAccount* acc =
        ait == accounts_.end() ? nullptr : (ait->second.count(owner) ? &ait->second.at(owner) : nullptr);
    if (!acc) return Error{Errc::UnknownAccount, owner + "/" + resource};
    if (acc->available - amount < acc->credit_limit) {
        return Error{Errc::InsufficientBalance, owner + " cannot reserve " + std::to_string(amount)};
    }

    std::string rid = "rsv-" + id_ + "-" + std::to_string(ledger_->size());
    Encoder e;
    e.put_str(rid);
    e.put_str(owner);
    e.put_str(resource);
    e.put_i64(amount);
    e.put_u64(ttl_events ? ledger_->size() + *ttl_events + 1 : 0); // 0 = no expiry
    e.put_str(author);
    e.put_bytes(view_of(signature));
    auto res = append_local(kReserved, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return rid;
}

Expected<ReservationState> ResourceManager::settle_reservation(const std::string& reservation_id,
                                                               SettleDecision decision,
                                                               std::optional<PartyId> beneficiary) {
    auto it = reservations_.find(reservation_id);
    if (it == reservations_.end()) return Error{Errc::UnknownReservation, reservation_id};
    Reservation& r = it->second;
    if (r.state != ReservationState::Held) {
        // Idempotent on the identical decision; a conflicting decision is a
        // protocol bug and is reported as such.
        bool same = (decision == SettleDecision::Commit && r.state == ReservationState::Committed &&
                     r.beneficiary == beneficiary) ||
                    (decision == SettleDecision::Abort && r.state == ReservationState::Returned);
        if (same) return r.state;
        return Error{Errc::AlreadyTerminal, reservation_id};
    }
    if (r.pinned > 0) return Error{Errc::InvalidParams, "reservation pinned by an in-flight transaction"};
    if (decision == SettleDecision::Commit && !beneficiary) {
        return Error{Errc::InvalidParams, "commit requires a beneficiary"};
    }
    Encoder e;
    e.put_str(reservation_id);
    e.put_u64(decision == SettleDecision::Commit ? 0 : 1);
    e.put_str(beneficiary ? *beneficiary : "");
    auto res = append_local(kReservationSettled, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return reservations_.at(reservation_id).state;
}

Bytes ResourceManager::issue_intent(const ResourceId& resource, const PartyId& to, Amount amount) {
    Encoder e;
    e.put_str("issue");
    e.put_str(resource);
    e.put_str(to);
    e.put_i64(amount);
    return e.take();
}

Status ResourceManager::issue_units(const ResourceId& resource, const PartyId& to, Amount amount,
                                    const PartyId& author, Bytes signature) {
    if (amount <= 0) return Error{Errc::InvalidParams, "amount must be positive"};
    auto rit = resources_.find(resource);
    if (rit == resources_.end()) return Error{Errc::UnknownResource, resource};
    if (rit->second.issuer != author) return Error{Errc::Unauthorized, author + " is not the registered issuer"};
    if (!identity_->authorize(author, ActionKind::IssueUnits)) {
        return Error{Errc::Unauthorized, author + " lacks IssueUnits"};
    }
    auto key = identity_->active_key(author);
    if (!key) return Error{Errc::Unauthorized, "no active key for " + author};
    if (!crypto::verify(view_of(issue_intent(resource, to, amount)), view_of(signature), view_of(*key))) {
        return Error{Errc::BadSignature, "issue intent signature"};
    }
    Encoder e;
    e.put_str(resource);
    e.put_str(to);
    e.put_i64(amount);
    e.put_str(author);
    e.put_bytes(view_of(signature));
    auto res = append_local(kIssued, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

std::vector<std::string> ResourceManager::release_expired() {
    std::vector<std::string> released;
    LogicalTime now = ledger_->size();
    std::vector<std::string> due;
    for (const auto& [rid, r] : reservations_) {
        if (r.state == ReservationState::Held && r.pinned == 0 && r.expires_at && *r.expires_at <= now) {
            due.push_back(rid);
        }
    }
    for (const std::string& rid : due) {
        if (settle_reservation(rid, SettleDecision::Abort).ok()) released.push_back(rid);
    }
    return released;
}

// ---------------------------------------------------------------------------
// Two-phase commit participation
// ---------------------------------------------------------------------------

Vote ResourceManager::txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) {
    if (auto it = txns_.find(txn); it != txns_.end()) {
        // Redelivered prepare: answer from the durable outcome.
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

    // Validate the batch against scratch copies, honoring in-batch ordering.
    auto accounts = accounts_;
    auto reservations = reservations_;
    for (const Action& action : mine) {
        if (const auto* t = std::get_if<TransferAction>(&action)) {
            TransferInstruction instr{t->from, t->to, t->resource, t->amount, t->ref};
            // Signature and authorization checks do not depend on balances.
            if (Status s = check_transfer(instr, t->author, view_of(t->signature)); !s.ok()) {
                // Balance must be re-checked against the scratch state below, so
                // only fail here for non-balance reasons.
                if (s.error().code != Errc::InsufficientBalance) return Vote::no_vote(s.error());
            }
            auto& acc = accounts[t->resource][t->from];
            if (acc.available - t->amount < acc.credit_limit) {
                return Vote::no_vote(Error{Errc::InsufficientBalance, t->from});
            }
            acc.available -= t->amount;
            acc.reserved += t->amount;
        } else if (const auto* rt = std::get_if<ReservedTransferAction>(&action)) {
            auto rit = reservations.find(rt->reservation_id);
            if (rit == reservations.end()) return Vote::no_vote(Error{Errc::UnknownReservation, rt->reservation_id});
            Reservation& r = rit->second;
            if (r.state != ReservationState::Held || r.remaining - r.pinned < rt->amount || rt->amount <= 0) {
                return Vote::no_vote(Error{Errc::InsufficientBalance, "reservation " + rt->reservation_id});
            }
            r.pinned += rt->amount;
        } else if (const auto* rr = std::get_if<ReservedReturnAction>(&action)) {
            auto rit = reservations.find(rr->reservation_id);
            if (rit == reservations.end()) return Vote::no_vote(Error{Errc::UnknownReservation, rr->reservation_id});
            Reservation& r = rit->second;
            if (r.state != ReservationState::Held || r.remaining - r.pinned < rr->amount || rr->amount <= 0) {
                return Vote::no_vote(Error{Errc::InsufficientBalance, "reservation " + rr->reservation_id});
            }
            r.pinned += rr->amount;
        } else if (const auto* reg = std::get_if<RegisterResourceAction>(&action)) {
            if (resources_.count(reg->resource_id)) {
                return Vote::no_vote(Error{Errc::InvalidParams, "resource exists: " + reg->resource_id});
            }
            if (!identity_->known_party(reg->issuer)) return Vote::no_vote(Error{Errc::UnknownParty, reg->issuer});
            for (const auto& [other_txn, pending] : txns_) {
                if (pending.state != TxnState::Prepared) continue;
                for (const Action& pa : pending.actions) {
                    if (const auto* preg = std::get_if<RegisterResourceAction>(&pa);
                        preg && preg->resource_id == reg->resource_id) {
                        return Vote::no_vote(Error{Errc::InvalidParams, "resource id pinned by " + other_txn});
                    }
                }
            }
        } else {
            return Vote::no_vote(Error{Errc::InvalidParams, "unsupported action for resource manager"});
        }
    }

    Encoder e;
    e.put_str(txn);
    e.put_bytes(view_of(encode_manifest(manifest_of(all_actions))));
    e.put_bytes(view_of(encode_own_actions(mine)));
    auto res = append_local(kTxnPrepared, e.take());
    if (!res.ok()) return Vote::no_vote(res.error());
    apply_event(ledger_->at(res.value()));
    return Vote::yes_vote();
}

Expected<std::vector<std::uint64_t>> ResourceManager::txn_commit(const TxnId& txn) {
    auto it = txns_.find(txn);
    if (it == txns_.end()) return Error{Errc::UnknownTxn, "commit without prepare: " + txn};
    if (it->second.state == TxnState::Committed) return std::vector<std::uint64_t>{}; // redelivery
    if (it->second.state == TxnState::Aborted) return Error{Errc::AlreadyTerminal, txn};
    Encoder e;
    e.put_str(txn);
    auto res = append_local(kTxnCommitted, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return std::vector<std::uint64_t>{res.value()};
}

Status ResourceManager::txn_abort(const TxnId& txn) {
    auto it = txns_.find(txn);
    if (it == txns_.end()) return ok_status(); // never prepared here: nothing to undo
    if (it->second.state == TxnState::Aborted) return ok_status();
    if (it->second.state == TxnState::Committed) return Error{Errc::AlreadyTerminal, txn};
    Encoder e;
    e.put_str(txn);
    auto res = append_local(kTxnAborted, e.take());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return ok_status();
}

TxnState ResourceManager::txn_state(const TxnId& txn) const {
    auto it = txns_.find(txn);
    return it == txns_.end() ? TxnState::None : it->second.state;
}

std::vector<TxnId> ResourceManager::in_doubt_txns() const {
    std::vector<TxnId> out;
    for (const auto& [txn, pending] : txns_) {
        if (pending.state == TxnState::Prepared) out.push_back(txn);
    }
    return out;
}

std::vector<std::string> ResourceManager::txn_manifest(const TxnId& txn) const {
    auto it = txns_.find(txn);
    return it == txns_.end() ? std::vector<std::string>{} : it->second.manifest;
}

// ---------------------------------------------------------------------------
// Reducer
// ---------------------------------------------------------------------------

void ResourceManager::apply_event(const EventEnvelope& env) {
    Decoder d(view_of(env.payload));
    const std::string& kind = env.payload_kind;
    if (kind == kRegistered) {
        ResourceType rt;
        rt.id = d.get_str();
        rt.decimals = static_cast<std::uint32_t>(d.get_u64());
        rt.issuer = d.get_str();
        resources_[rt.id] = std::move(rt);
    } else if (kind == kAccountOpened) {
        PartyId party = d.get_str();
        ResourceId res = d.get_str();
        account_ref(party, res).credit_limit = d.get_i64();
    } else if (kind == kIssued) {
        ResourceId res = d.get_str();
        PartyId to = d.get_str();
        Amount amount = d.get_i64();
        account_ref(to, res).available += amount;
        resources_.at(res).total_supply += amount;
    } else if (kind == kTransferred) {
        PartyId from = d.get_str();
        PartyId to = d.get_str();
        ResourceId res = d.get_str();
        Amount amount = d.get_i64();
        account_ref(from, res).available -= amount;
        account_ref(to, res).available += amount;
    } else if (kind == kReserved) {
        Reservation r;
        r.reservation_id = d.get_str();
        r.owner = d.get_str();
        r.resource = d.get_str();
        r.remaining = d.get_i64();
        std::uint64_t exp = d.get_u64();
        if (exp > 0) r.expires_at = exp - 1;
        ResourceAccount& acc = account_ref(r.owner, r.resource);
        acc.available -= r.remaining;
        acc.reserved += r.remaining;
        reservations_[r.reservation_id] = std::move(r);
    } else if (kind == kReservationSettled) {
        std::string rid = d.get_str();
        bool commit = d.get_u64() == 0;
        PartyId beneficiary = d.get_str();
        Reservation& r = reservations_.at(rid);
        ResourceAccount& owner = account_ref(r.owner, r.resource);
        owner.reserved -= r.remaining;
        if (commit) {
            account_ref(beneficiary, r.resource).available += r.remaining;
            r.transferred += r.remaining;
            r.beneficiary = beneficiary;
            r.state = ReservationState::Committed;
        } else {
            owner.available += r.remaining;
            r.state = ReservationState::Returned;
        }
        r.remaining = 0;
    } else if (kind == kTxnPrepared) {
        PendingTxn p;
        std::string txn = d.get_str();
        p.manifest = decode_manifest(view_of(d.get_bytes()));
        p.actions = decode_own_actions(view_of(d.get_bytes()));
        for (const Action& action : p.actions) {
            if (const auto* t = std::get_if<TransferAction>(&action)) {
                ResourceAccount& acc = account_ref(t->from, t->resource);
                acc.available -= t->amount;
                acc.reserved += t->amount;
            } else if (const auto* rt = std::get_if<ReservedTransferAction>(&action)) {
                reservations_.at(rt->reservation_id).pinned += rt->amount;
            } else if (const auto* rr = std::get_if<ReservedReturnAction>(&action)) {
                reservations_.at(rr->reservation_id).pinned += rr->amount;
            }
        }
        txns_[txn] = std::move(p);
    } else if (kind == kTxnCommitted) {
        PendingTxn& p = txns_.at(d.get_str());
        for (const Action& action : p.actions) {
            if (const auto* t = std::get_if<TransferAction>(&action)) {
                ResourceAccount& from = account_ref(t->from, t->resource);
                from.reserved -= t->amount;
                account_ref(t->to, t->resource).available += t->amount;
            } else if (const auto* rt = std::get_if<ReservedTransferAction>(&action)) {
                Reservation& r = reservations_.at(rt->reservation_id);
                r.pinned -= rt->amount;
                r.remaining -= rt->amount;
                r.transferred += rt->amount;
                account_ref(r.owner, r.resource).reserved -= rt->amount;
                account_ref(rt->to, r.resource).available += rt->amount;
                if (r.remaining == 0) {
                    r.state = ReservationState::Committed;
                    r.beneficiary = rt->to;
                }
            } else if (const auto* rr = std::get_if<ReservedReturnAction>(&action)) {
                Reservation& r = reservations_.at(rr->reservation_id);
                r.pinned -= rr->amount;
                r.remaining -= rr->amount;
                ResourceAccount& owner = account_ref(r.owner, r.resource);
                owner.reserved -= rr->amount;
                owner.available += rr->amount;
                if (r.remaining == 0) {
                    r.state = r.transferred > 0 ? ReservationState::Committed : ReservationState::Returned;
                }
            } else if (const auto* reg = std::get_if<RegisterResourceAction>(&action)) {
                ResourceType rt;
                rt.id = reg->resource_id;
                rt.decimals = reg->decimals;
                rt.issuer = reg->issuer;
                resources_[rt.id] = std::move(rt);
            }
        }
        p.state = TxnState::Committed;
    } else if (kind == kTxnAborted) {
        PendingTxn& p = txns_.at(d.get_str());
        for (const Action& action : p.actions) {
            if (const auto* t = std::get_if<TransferAction>(&action)) {
                ResourceAccount& from = account_ref(t->from, t->resource);
                from.reserved -= t->amount;
                from.available += t->amount;
            } else if (const auto* rt = std::get_if<ReservedTransferAction>(&action)) {
                reservations_.at(rt->reservation_id).pinned -= rt->amount;
            } else if (const auto* rr = std::get_if<ReservedReturnAction>(&action)) {
                reservations_.at(rr->reservation_id).pinned -= rr->amount;
            }
        }
        p.state = TxnState::Aborted;
    }
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

const ResourceAccount* ResourceManager::account(const PartyId& party, const ResourceId& resource) const {
    auto rit = accounts_.find(resource);
    if (rit == accounts_.end()) return nullptr;
    auto ait = rit->second.find(party);
    return ait == rit->second.end() ? nullptr : &ait->second;
}

const Reservation* ResourceManager::reservation(const std::string& id) const {
    auto it = reservations_.find(id);
    return it == reservations_.end() ? nullptr : &it->second;
}

const ResourceType* ResourceManager::resource_type(const ResourceId& id) const {
    auto it = resources_.find(id);
    return it == resources_.end() ? nullptr : &it->second;
}

Amount ResourceManager::total_supply(const ResourceId& id) const {
    auto it = resources_.find(id);
    return it == resources_.end() ? 0 : it->second.total_supply;
}

std::vector<std::pair<PartyId, Amount>> ResourceManager::holders_of(const ResourceId& id) const {
    std::vector<std::pair<PartyId, Amount>> out;
    auto rit = accounts_.find(id);
    if (rit == accounts_.end()) return out;
    for (const auto& [party, acc] : rit->second) {
        if (acc.holdings() > 0) out.emplace_back(party, acc.holdings());
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

std::map<ResourceId, Amount> ResourceManager::circulating_totals() const {
    std::map<ResourceId, Amount> totals;
    for (const auto& [res, accs] : accounts_) {
        Amount sum = 0;
        for (const auto& [party, acc] : accs) sum += acc.available + acc.reserved;
        totals[res] = sum;
    }
    return totals;
}

Bytes ResourceManager::encode_state() const {
    Encoder e;
    e.put_u64(resources_.size());
    for (const auto& [id, rt] : resources_) {
        e.put_str(id);
        e.put_u64(rt.decimals);
        e.put_str(rt.issuer);
        e.put_i64(rt.total_supply);
    }
    e.put_u64(accounts_.size());
    for (const auto& [res, accs] : accounts_) {
        e.put_str(res);
        e.put_u64(accs.size());
        for (const auto& [party, acc] : accs) {
            e.put_str(party);
            e.put_i64(acc.available);
            e.put_i64(acc.reserved);
            e.put_i64(acc.credit_limit);
        }
    }
    e.put_u64(reservations_.size());
    for (const auto& [rid, r] : reservations_) {
        e.put_str(rid);
        e.put_str(r.owner);
        e.put_str(r.resource);
        e.put_i64(r.remaining);
        e.put_i64(r.pinned);
        e.put_i64(r.transferred);
        e.put_u64(static_cast<std::uint64_t>(r.state));
        e.put_str(r.beneficiary ? *r.beneficiary : "");
    }
    e.put_u64(txns_.size());
    for (const auto& [txn, p] : txns_) {
        e.put_str(txn);
        e.put_u64(static_cast<std::uint64_t>(p.state));
        e.put_bytes(view_of(encode_own_actions(p.actions)));
    }
    return e.take();
}

} // namespace shardex
