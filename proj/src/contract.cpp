#include "shardex/contract.hpp"

#include <algorithm>
#include <cctype>

namespace shardex {

namespace {

constexpr const char* kIssued = "contract.issued";
constexpr const char* kEvent = "contract.event";
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

const char* instrument_status_name(InstrumentStatus s) {
    switch (s) {
        case InstrumentStatus::Live: return "Live";
        case InstrumentStatus::Fulfilled: return "Fulfilled";
        case InstrumentStatus::Defaulted: return "Defaulted";
    }
    return "?";
}

bool validate_isin(std::string_view isin, bool check_digit) {
    if (isin.size() != 12) return false;
    for (char c : isin) {
        if (!std::isalnum(static_cast<unsigned char>(c))) return false;
        if (std::islower(static_cast<unsigned char>(c))) return false;
    }
    if (!check_digit) return true;
    // ISO 6166: expand letters to two digits (A=10..Z=35), then Luhn.
    std::string digits;
    for (char c : isin) {
        if (std::isdigit(static_cast<unsigned char>(c))) {
            digits += c;
        } else {
            digits += std::to_string(c - 'A' + 10);
        }
    }
    int sum = 0;
    bool dbl = true; // rightmost digit is the check digit (not doubled)
    for (auto it = digits.rbegin() + 1; it != digits.rend(); ++it) {
        int d = *it - '0';
        if (dbl) {
            d *= 2;
            if (d > 9) d -= 9;
        }
        sum += d;
        dbl = !dbl;
    }
    int check = (10 - sum % 10) % 10;
    return check == digits.back() - '0';
}

// ---------------------------------------------------------------------------

ContractManager::ContractManager(Config cfg, const IdentityDirectory& identity, HoldersFn holders,
                                 std::unique_ptr<Ledger> ledger)
    : id_(std::move(cfg.manager_id)),
      operator_id_(std::move(cfg.operator_id)),
      operator_keys_(std::move(cfg.operator_keys)),
      require_isin_checksum_(cfg.require_isin_checksum),
      verify_signatures_(cfg.verify_signatures),
      identity_(&identity),
      holders_(std::move(holders)),
      ledger_(std::move(ledger)) {
    ledger_->set_authorize_fn([this](const PartyId& p, std::string_view) {
        return identity_->authorize(p, ActionKind::OperateLedger);
    });
}

std::unique_ptr<ContractManager> ContractManager::create(Config cfg, const IdentityDirectory& identity,
                                                         HoldersFn holders, std::unique_ptr<Storage> storage,
                                                         LedgerConfig lcfg) {
    std::string mid = cfg.manager_id;
    return std::unique_ptr<ContractManager>(new ContractManager(
        std::move(cfg), identity, std::move(holders), std::make_unique<Ledger>(mid, std::move(storage), lcfg)));
}

std::unique_ptr<ContractManager> ContractManager::restore(Config cfg, const IdentityDirectory& identity,
                                                          HoldersFn holders, std::unique_ptr<Storage> storage,
                                                          LedgerConfig lcfg) {
    auto ledger = Ledger::load(cfg.manager_id, std::move(storage), lcfg);
    auto mgr = std::unique_ptr<ContractManager>(
        new ContractManager(std::move(cfg), identity, std::move(holders), std::move(ledger)));
    for (const EventEnvelope& env : mgr->ledger_->entries()) mgr->apply_event(env);
    return mgr;
}

Expected<std::uint64_t> ContractManager::append_local(std::string_view kind, Bytes payload) {
    Bytes sk = operator_keys_.secret_key;
    auto res = ledger_->append_sealed(kind, std::move(payload), operator_id_,
                                      [&sk](BytesView pre) { return crypto::sign(pre, view_of(sk)); });
    if (!res.ok()) return res.error();
    return res.value().seq;
}

// ---------------------------------------------------------------------------
// Issuance
// ---------------------------------------------------------------------------

Bytes ContractManager::issue_intent(const std::string& isin, const std::string& spec_text, BytesView docs_hash) {
    Encoder e;
    e.put_str("issue");
    e.put_str(isin);
    e.put_str(spec_text);
    e.put_bytes(docs_hash);
    return e.take();
}

Status ContractManager::validate_instrument_registration(const RegisterInstrumentAction& reg) const {
    if (!validate_isin(reg.isin, require_isin_checksum_)) {
        return Error{Errc::InvalidParams, "isin must be 12 uppercase alphanumerics: " + reg.isin};
    }
    if (instances_.count(reg.isin)) return Error{Errc::InvalidParams, "isin already live: " + reg.isin};
    auto parsed = spec_from_sexpr(reg.spec_text);
    if (!parsed.ok()) return parsed.error();
    if (Status s = validate_spec(parsed.value()); !s.ok()) return s;
    if (!identity_->authorize(reg.issuer, ActionKind::IssueInstrument)) {
        return Error{Errc::Unauthorized, reg.issuer + " lacks IssueInstrument"};
    }
    auto key = identity_->active_key(reg.issuer);
    if (!key) return Error{Errc::Unauthorized, "no active key for " + reg.issuer};
    Bytes intent = issue_intent(reg.isin, reg.spec_text, view_of(reg.docs_hash));
    if (!crypto::verify(view_of(intent), view_of(reg.signature), view_of(*key))) {
        return Error{Errc::BadSignature, "issue intent signature"};
    }
    return ok_status();
}

Expected<std::string> ContractManager::issue_instrument(const std::string& isin, const SpecPtr& spec,
                                                        Bytes docs_blob, const PartyId& issuer, Bytes signature) {
    RegisterInstrumentAction reg;
    reg.isin = isin;
    reg.spec_text = spec_to_sexpr(spec);
    reg.docs_hash = crypto::digest_bytes(crypto::sha256(view_of(docs_blob)));
    reg.issuer = issuer;
    reg.signature = std::move(signature);
    if (Status s = validate_instrument_registration(reg); !s.ok()) return s.error();

    Encoder e;
    e.put_str(reg.isin);
    e.put_str(reg.spec_text);
    e.put_bytes(view_of(reg.docs_hash));
    e.put_str(reg.issuer);
    e.put_bytes(view_of(reg.signature));
    auto res = append_local(kIssued, e.take());
    if (!res.ok()) return res.error();
    docs_store_[to_hex(view_of(reg.docs_hash))] = std::move(docs_blob);
    apply_event(ledger_->at(res.value()));
    return isin;
}

// ---------------------------------------------------------------------------
// Lifecycle
// ---------------------------------------------------------------------------

Status ContractManager::validate_lifecycle(const LifecycleEvent& ev, bool via_txn,
                                           const std::vector<TxnAction>* siblings) const {
    auto it = instances_.find(ev.isin);
    if (it == instances_.end()) return Error{Errc::UnknownInstrument, ev.isin};
    const ContractInstance& inst = it->second;
    if (isin_pinned(ev.isin)) return Error{Errc::InvalidParams, "instrument pinned by an in-flight transaction"};

    // authorization per event kind
    switch (ev.kind) {
        case LifecycleEvent::Kind::ObservationMade:
            if (!identity_->authorize(ev.author, ActionKind::SubmitObservation)) {
                return Error{Errc::Unauthorized, ev.author + " lacks SubmitObservation"};
            }
            break;
        case LifecycleEvent::Kind::IssuerNotice:
        case LifecycleEvent::Kind::PaymentSettled:
            if (!identity_->authorize(ev.author, ActionKind::SubmitPayment)) {
                return Error{Errc::Unauthorized, ev.author + " lacks SubmitPayment"};
            }
            break;
        case LifecycleEvent::Kind::TimeAdvanced:
            if (!identity_->authorize(ev.author, ActionKind::OperateLedger)) {
                return Error{Errc::Unauthorized, ev.author + " may not advance instrument time"};
            }
            break;
    }
    if (verify_signatures_) {
        auto key = identity_->active_key(ev.author);
        if (!key) return Error{Errc::Unauthorized, "no active key for " + ev.author};
        if (!crypto::verify(view_of(ev.intent_bytes()), view_of(ev.signature), view_of(*key))) {
            return Error{Errc::BadSignature, "lifecycle intent signature"};
        }
    }

    if (ev.kind == LifecycleEvent::Kind::PaymentSettled) {
        // Payment registration must ride in the same atomic transaction as the
        // resource-manager transfers it references.
        if (!via_txn) return Error{Errc::Unauthorized, "payment registration requires an atomic transaction"};
        std::vector<TransferRef> sibling_transfers;
        if (siblings) {
            for (const TxnAction& a : *siblings) {
                if (const auto* t = std::get_if<TransferAction>(&a.action)) {
                    sibling_transfers.push_back(TransferRef{t->from, t->to, t->resource, t->amount});
                }
            }
        }
        if (sibling_transfers != ev.transfers) {
            return Error{Errc::NoMatch, "payment refs do not match the transaction's transfer legs"};
        }
    }

    LifecycleEvent checked = ev;
    if (!residuate(inst.residual, inst.bindings, checked, inst.clock)) {
        if (ev.kind == LifecycleEvent::Kind::TimeAdvanced && ev.new_time <= inst.clock) {
            return Error{Errc::NoMatch, "time must advance"};
        }
        return Error{Errc::NoMatch, "event is not admissible for the current residual"};
    }
    return ok_status();
}

bool ContractManager::needs_snapshot(const LifecycleEvent& ev) const {
    if (ev.kind != LifecycleEvent::Kind::ObservationMade && ev.kind != LifecycleEvent::Kind::IssuerNotice) {
        return false;
    }
    return instances_.count(ev.isin) > 0 && holders_ != nullptr;
}

Status ContractManager::attach_snapshot(LifecycleEvent& ev) const {
    if (!needs_snapshot(ev)) return ok_status();
    auto holders = holders_(ev.isin);
    if (!holders) {
        return Error{Errc::ParticipantUnreachable, "holder snapshot unavailable for " + ev.isin};
    }
    ev.holders_snapshot = std::move(*holders);
    return ok_status();
}

Expected<std::uint64_t> ContractManager::apply_lifecycle(const LifecycleEvent& event) {
    if (Status s = validate_lifecycle(event, false, nullptr); !s.ok()) return s.error();
    LifecycleEvent ev = event;
    if (Status s = attach_snapshot(ev); !s.ok()) return s.error();
    auto res = append_local(kEvent, ev.encode());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value()));
    return instances_.at(event.isin).state_version;
}

void ContractManager::apply_lifecycle_to_instance(const LifecycleEvent& ev) {
    ContractInstance& inst = instances_.at(ev.isin);
    auto r = residuate(inst.residual, inst.bindings, ev, inst.clock);
    if (!r) return; // recorded events always residuate; guarded at validation
    inst.residual = r->residual;
    inst.bindings = std::move(r->bindings);
    inst.state_version += 1;
    if (ev.kind == LifecycleEvent::Kind::TimeAdvanced) inst.clock = ev.new_time;
    if (is_done(inst.residual)) {
        inst.status = InstrumentStatus::Fulfilled;
    } else if (is_fail(inst.residual)) {
        inst.status = InstrumentStatus::Defaulted;
    }
    notify(inst.isin, inst.state_version);
}

void ContractManager::notify(const std::string& isin, std::uint64_t version) {
    for (const auto& cb : listeners_) cb(isin, version);
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

Expected<ContractManager::StateView> ContractManager::query_state(const std::string& isin) const {
    auto it = instances_.find(isin);
    if (it == instances_.end()) return Error{Errc::UnknownInstrument, isin};
    const ContractInstance& inst = it->second;
    return StateView{inst.state_version, spec_to_sexpr(inst.residual), inst.bindings, inst.status, inst.clock};
}

const ContractInstance* ContractManager::instance(const std::string& isin) const {
    auto it = instances_.find(isin);
    return it == instances_.end() ? nullptr : &it->second;
}

std::uint64_t ContractManager::version_of(const std::string& isin) const {
    auto it = instances_.find(isin);
    return it == instances_.end() ? 0 : it->second.state_version;
}

bool ContractManager::is_tradeable(const std::string& isin) const {
    auto it = instances_.find(isin);
    return it != instances_.end() && it->second.status == InstrumentStatus::Live;
}

std::optional<ResolvedPayment> ContractManager::pending_payment(const std::string& isin) const {
    auto it = instances_.find(isin);
    if (it == instances_.end()) return std::nullopt;
    return next_payment(it->second.residual, it->second.bindings);
}

const Bytes* ContractManager::docs_blob(BytesView digest) const {
    auto it = docs_store_.find(to_hex(digest));
    return it == docs_store_.end() ? nullptr : &it->second;
}

bool ContractManager::isin_pinned(const std::string& isin) const {
    for (const auto& [txn, pending] : txns_) {
        if (pending.state != TxnState::Prepared) continue;
        for (const Action& a : pending.actions) {
            if (const auto* al = std::get_if<ApplyLifecycleAction>(&a); al && al->isin == isin) return true;
            if (const auto* ri = std::get_if<RegisterInstrumentAction>(&a); ri && ri->isin == isin) return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// Two-phase commit participation
// ---------------------------------------------------------------------------

Vote ContractManager::txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) {
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

    std::vector<Action> enriched;
    for (const Action& action : mine) {
        if (const auto* al = std::get_if<ApplyLifecycleAction>(&action)) {
            LifecycleEvent ev;
            try {
                ev = LifecycleEvent::decode(view_of(al->event_bytes));
            } catch (const DecodeError& e) {
                return Vote::no_vote(Error{Errc::EncodingError, e.what()});
            }
            if (ev.isin != al->isin) return Vote::no_vote(Error{Errc::InvalidParams, "action/event isin mismatch"});
            if (Status s = validate_lifecycle(ev, true, &all_actions); !s.ok()) return Vote::no_vote(s.error());
            if (Status s = attach_snapshot(ev); !s.ok()) return Vote::no_vote(s.error());
            ApplyLifecycleAction sealed = *al;
            sealed.event_bytes = ev.encode();
            enriched.push_back(std::move(sealed));
        } else if (const auto* ri = std::get_if<RegisterInstrumentAction>(&action)) {
            if (Status s = validate_instrument_registration(*ri); !s.ok()) return Vote::no_vote(s.error());
            if (isin_pinned(ri->isin)) return Vote::no_vote(Error{Errc::InvalidParams, "isin pinned"});
            enriched.push_back(action);
        } else {
            return Vote::no_vote(Error{Errc::InvalidParams, "unsupported action for contract manager"});
        }
    }

    Encoder e;
    e.put_str(txn);
    e.put_bytes(view_of(encode_manifest(manifest_of(all_actions))));
    e.put_bytes(view_of(encode_actions_list(enriched)));
    auto res = append_local(kTxnPrepared, e.take());
    if (!res.ok()) return Vote::no_vote(res.error());
    apply_event(ledger_->at(res.value()));
    return Vote::yes_vote();
}

Expected<std::vector<std::uint64_t>> ContractManager::txn_commit(const TxnId& txn) {
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

Status ContractManager::txn_abort(const TxnId& txn) {
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

TxnState ContractManager::txn_state(const TxnId& txn) const {
    auto it = txns_.find(txn);
    return it == txns_.end() ? TxnState::None : it->second.state;
}

std::vector<TxnId> ContractManager::in_doubt_txns() const {
    std::vector<TxnId> out;
    for (const auto& [txn, pending] : txns_) {
        if (pending.state == TxnState::Prepared) out.push_back(txn);
    }
    return out;
}

std::vector<std::string> ContractManager::txn_manifest(const TxnId& txn) const {
    auto it = txns_.find(txn);
    return it == txns_.end() ? std::vector<std::string>{} : it->second.manifest;
}

// ---------------------------------------------------------------------------
// Reducer
// ---------------------------------------------------------------------------

void ContractManager::apply_event(const EventEnvelope& env) {
    Decoder d(view_of(env.payload));
    const std::string& kind = env.payload_kind;
    if (kind == kIssued) {
        ContractInstance inst;
        inst.isin = d.get_str();
        std::string spec_text = d.get_str();
        inst.docs_hash = d.get_bytes();
        inst.issuer = d.get_str();
        auto parsed = spec_from_sexpr(spec_text);
        inst.spec = parsed.value(); // validated before append
        inst.residual = normalize(inst.spec, {});
        if (is_done(inst.residual)) {
            inst.status = InstrumentStatus::Fulfilled;
        } else if (is_fail(inst.residual)) {
            inst.status = InstrumentStatus::Defaulted;
        }
        instances_[inst.isin] = std::move(inst);
    } else if (kind == kEvent) {
        apply_lifecycle_to_instance(LifecycleEvent::decode(view_of(env.payload)));
    } else if (kind == kTxnPrepared) {
        PendingTxn p;
        std::string txn = d.get_str();
        p.manifest = decode_manifest(view_of(d.get_bytes()));
        p.actions = decode_actions_list(view_of(d.get_bytes()));
        txns_[txn] = std::move(p);
    } else if (kind == kTxnCommitted) {
        PendingTxn& p = txns_.at(d.get_str());
        for (const Action& action : p.actions) {
            if (const auto* al = std::get_if<ApplyLifecycleAction>(&action)) {
                apply_lifecycle_to_instance(LifecycleEvent::decode(view_of(al->event_bytes)));
            } else if (const auto* ri = std::get_if<RegisterInstrumentAction>(&action)) {
                ContractInstance inst;
                inst.isin = ri->isin;
                inst.docs_hash = ri->docs_hash;
                inst.issuer = ri->issuer;
                inst.spec = spec_from_sexpr(ri->spec_text).value();
                inst.residual = normalize(inst.spec, {});
                if (is_done(inst.residual)) {
                    inst.status = InstrumentStatus::Fulfilled;
                } else if (is_fail(inst.residual)) {
                    inst.status = InstrumentStatus::Defaulted;
                }
                instances_[ri->isin] = std::move(inst);
                notify(ri->isin, 0);
            }
        }
        p.state = TxnState::Committed;
    } else if (kind == kTxnAborted) {
        txns_.at(d.get_str()).state = TxnState::Aborted;
    }
}

// ---------------------------------------------------------------------------

namespace {

void encode_bindings(Encoder& e, const Bindings& b) {
    e.put_u64(b.size());
    for (const auto& [key, val] : b) {
        e.put_str(key);
        e.put_i64(val.value);
        e.put_u64(val.holders.size());
        for (const auto& [party, units] : val.holders) {
            e.put_str(party);
            e.put_i64(units);
        }
    }
}

} // namespace

Bytes ContractManager::encode_state() const {
    Encoder e;
    e.put_u64(instances_.size());
    for (const auto& [isin, inst] : instances_) {
        e.put_str(isin);
        e.put_str(spec_to_sexpr(inst.spec));
        e.put_str(spec_to_sexpr(inst.residual));
        e.put_u64(inst.state_version);
        encode_bindings(e, inst.bindings);
        e.put_u64(inst.clock);
        e.put_u64(static_cast<std::uint64_t>(inst.status));
        e.put_bytes(view_of(inst.docs_hash));
        e.put_str(inst.issuer);
    }
    e.put_u64(txns_.size());
    for (const auto& [txn, p] : txns_) {
        e.put_str(txn);
        e.put_u64(static_cast<std::uint64_t>(p.state));
        e.put_bytes(view_of(encode_actions_list(p.actions)));
    }
    return e.take();
}

} // namespace shardex
