#include "shardex/identity.hpp"

#include <algorithm>

namespace shardex {

namespace {

constexpr const char* kRegistered = "party.registered";
constexpr const char* kRotated = "party.key_rotated";
constexpr const char* kKycSet = "party.kyc_set";

std::uint64_t roles_to_mask(const std::set<Role>& roles) {
    std::uint64_t m = 0;
    for (Role r : roles) m |= (1ull << static_cast<unsigned>(r));
    return m;
}

std::set<Role> roles_from_mask(std::uint64_t m) {
    std::set<Role> roles;
    for (unsigned i = 0; i <= static_cast<unsigned>(Role::Supervisor); ++i) {
        if (m & (1ull << i)) roles.insert(static_cast<Role>(i));
    }
    return roles;
}

} // namespace

const char* role_name(Role r) {
    switch (r) {
        case Role::Investor: return "Investor";
        case Role::Issuer: return "Issuer";
        case Role::VerificationAgent: return "VerificationAgent";
        case Role::CalculationAgent: return "CalculationAgent";
        case Role::MarketOperator: return "MarketOperator";
        case Role::Supervisor: return "Supervisor";
    }
    return "?";
}

std::optional<Role> role_from_name(std::string_view name) {
    for (unsigned i = 0; i <= static_cast<unsigned>(Role::Supervisor); ++i) {
        Role r = static_cast<Role>(i);
        if (name == role_name(r)) return r;
    }
    return std::nullopt;
}

const char* action_name(ActionKind a) {
    switch (a) {
        case ActionKind::RegisterParty: return "RegisterParty";
        case ActionKind::RotateKey: return "RotateKey";
        case ActionKind::IssueInstrument: return "IssueInstrument";
        case ActionKind::IssueUnits: return "IssueUnits";
        case ActionKind::Transfer: return "Transfer";
        case ActionKind::Reserve: return "Reserve";
        case ActionKind::SubmitObservation: return "SubmitObservation";
        case ActionKind::SubmitPayment: return "SubmitPayment";
        case ActionKind::SubmitOrder: return "SubmitOrder";
        case ActionKind::CancelOrder: return "CancelOrder";
        case ActionKind::MonitorQuery: return "MonitorQuery";
        case ActionKind::OperateLedger: return "OperateLedger";
    }
    return "?";
}

bool role_permits(Role role, ActionKind action) {
    switch (role) {
        case Role::Investor:
            return action == ActionKind::Transfer || action == ActionKind::Reserve ||
                   action == ActionKind::SubmitOrder || action == ActionKind::CancelOrder;
        case Role::Issuer:
            return action == ActionKind::IssueInstrument || action == ActionKind::IssueUnits ||
                   action == ActionKind::Transfer || action == ActionKind::Reserve ||
                   action == ActionKind::SubmitPayment || action == ActionKind::SubmitOrder ||
                   action == ActionKind::CancelOrder;
        case Role::VerificationAgent:
        case Role::CalculationAgent:
            return action == ActionKind::SubmitObservation;
        case Role::MarketOperator:
            return action == ActionKind::OperateLedger;
        case Role::Supervisor:
            return action == ActionKind::MonitorQuery;
    }
    return false;
}

const KeyRecord* Party::active_key() const {
    for (const KeyRecord& k : keys) {
        if (k.active()) return &k;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------

IdentityManager::IdentityManager(OperatorConfig op, std::unique_ptr<Ledger> ledger)
    : operator_id_(op.party_id),
      operator_name_(op.legal_name),
      operator_roles_(op.roles),
      operator_keys_(std::move(op.keypair)),
      ledger_(std::move(ledger)) {
    operator_roles_.insert(Role::MarketOperator);
    ledger_->set_active_key_fn([this](const PartyId& p) { return active_key(p); });
    ledger_->set_authorize_fn([this](const PartyId& p, std::string_view kind) {
        if (kind == kRegistered) return p == operator_id_;
        return authorize(p, ActionKind::OperateLedger);
    });
}

std::unique_ptr<IdentityManager> IdentityManager::create(OperatorConfig op, std::unique_ptr<Storage> storage,
                                                         LedgerConfig config) {
    auto mgr = std::unique_ptr<IdentityManager>(
        new IdentityManager(std::move(op), std::make_unique<Ledger>("identity", std::move(storage), config)));
    Bytes intent = registration_intent(mgr->operator_id_, mgr->operator_name_, mgr->operator_roles_,
                                       view_of(mgr->operator_keys_.public_key));
    Bytes sig = crypto::sign(view_of(intent), view_of(mgr->operator_keys_.secret_key));
    auto res = mgr->register_party(mgr->operator_id_, mgr->operator_name_, mgr->operator_roles_,
                                   mgr->operator_keys_.public_key, std::move(sig));
    if (!res.ok()) throw std::runtime_error("operator bootstrap failed: " + res.error().to_string());
    return mgr;
}

std::unique_ptr<IdentityManager> IdentityManager::restore(OperatorConfig op, std::unique_ptr<Storage> storage,
                                                          LedgerConfig config) {
    auto ledger = Ledger::load("identity", std::move(storage), config);
    auto mgr = std::unique_ptr<IdentityManager>(new IdentityManager(std::move(op), std::move(ledger)));
    for (const EventEnvelope& env : mgr->ledger_->entries()) mgr->apply_event(env);
    return mgr;
}

Bytes IdentityManager::registration_intent(const PartyId& requested_id, const std::string& legal_name,
                                           const std::set<Role>& roles, BytesView public_key) {
    Encoder e;
    e.put_str("register");
    e.put_str(requested_id);
    e.put_str(legal_name);
    e.put_u64(roles_to_mask(roles));
    e.put_bytes(public_key);
    return e.take();
}

Expected<PartyId> IdentityManager::register_party(const PartyId& requested_id, const std::string& legal_name,
                                                  const std::set<Role>& roles, Bytes public_key,
                                                  Bytes intent_signature) {
    if (roles.empty()) return Error{Errc::InvalidParams, "role set must be non-empty"};
    if (requested_id.empty()) return Error{Errc::InvalidParams, "party id must be non-empty"};
    if (public_key.size() != crypto::kPublicKeySize) return Error{Errc::MalformedKey, "ed25519 key must be 32 bytes"};
    if (parties_.count(requested_id)) return Error{Errc::DuplicateParty, requested_id};
    Bytes intent = registration_intent(requested_id, legal_name, roles, view_of(public_key));
    if (!crypto::verify(view_of(intent), view_of(intent_signature), view_of(public_key))) {
        return Error{Errc::BadSignature, "registration intent not signed by the introduced key"};
    }

    Encoder payload;
    payload.put_str(requested_id);
    payload.put_str(legal_name);
    payload.put_u64(roles_to_mask(roles));
    payload.put_bytes(view_of(public_key));
    payload.put_bytes(view_of(intent_signature));

    auto res = ledger_->append_sealed(kRegistered, payload.take(), operator_id_, operator_signer());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value().seq));
    return requested_id;
}

Bytes IdentityManager::rotation_intent(const PartyId& party_id, BytesView new_key) {
    Encoder e;
    e.put_str("rotate");
    e.put_str(party_id);
    e.put_bytes(new_key);
    return e.take();
}

Expected<KeyRecord> IdentityManager::rotate_key(const PartyId& party_id, Bytes new_key,
                                                Bytes signed_by_old_key) {
    auto it = parties_.find(party_id);
    if (it == parties_.end()) return Error{Errc::UnknownParty, party_id};
    if (new_key.size() != crypto::kPublicKeySize) return Error{Errc::MalformedKey, "ed25519 key must be 32 bytes"};
    const KeyRecord* old = it->second.active_key();
    if (!old) return Error{Errc::InactiveOldKey, "no active key for " + party_id};
    Bytes intent = rotation_intent(party_id, view_of(new_key));
    if (!crypto::verify(view_of(intent), view_of(signed_by_old_key), view_of(old->public_key))) {
        return Error{Errc::InactiveOldKey, "rotation not signed by the active key"};
    }

    Encoder payload;
    payload.put_str(party_id);
    payload.put_bytes(view_of(new_key));
    payload.put_bytes(view_of(signed_by_old_key));
    auto res = ledger_->append_sealed(kRotated, payload.take(), operator_id_, operator_signer());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value().seq));
    return it->second.keys.back();
}

Status IdentityManager::revoke_kyc(const PartyId& party_id) {
    if (!parties_.count(party_id)) return Error{Errc::UnknownParty, party_id};
    Encoder payload;
    payload.put_str(party_id);
    payload.put_u64(static_cast<std::uint64_t>(KycStatus::Revoked));
    auto res = ledger_->append_sealed(kKycSet, payload.take(), operator_id_, operator_signer());
    if (!res.ok()) return res.error();
    apply_event(ledger_->at(res.value().seq));
    return ok_status();
}

bool IdentityManager::authorize(const PartyId& party, ActionKind action) const {
    auto it = parties_.find(party);
    if (it == parties_.end()) return false;
    const Party& p = it->second;
    if (p.kyc != KycStatus::Verified) return false;
    if (!p.active_key()) return false;
    return std::any_of(p.roles.begin(), p.roles.end(), [&](Role r) { return role_permits(r, action); });
}

std::optional<Bytes> IdentityManager::active_key(const PartyId& party) const {
    auto it = parties_.find(party);
    if (it == parties_.end()) return std::nullopt;
    if (it->second.kyc != KycStatus::Verified) return std::nullopt;
    const KeyRecord* k = it->second.active_key();
    if (!k) return std::nullopt;
    return k->public_key;
}

std::vector<Bytes> IdentityManager::key_timeline(const PartyId& party) const {
    std::vector<Bytes> keys;
    auto it = parties_.find(party);
    if (it == parties_.end()) return keys;
    for (const KeyRecord& k : it->second.keys) keys.push_back(k.public_key);
    return keys;
}

const Party* IdentityManager::party(const PartyId& id) const {
    auto it = parties_.find(id);
    return it == parties_.end() ? nullptr : &it->second;
}

Ledger::Signer IdentityManager::operator_signer() const {
    Bytes sk = operator_keys_.secret_key;
    return [sk](BytesView preimage) { return crypto::sign(preimage, view_of(sk)); };
}

void IdentityManager::apply_event(const EventEnvelope& env) {
    Decoder d(view_of(env.payload));
    if (env.payload_kind == kRegistered) {
        Party p;
        p.party_id = d.get_str();
        p.legal_name = d.get_str();
        p.roles = roles_from_mask(d.get_u64());
        KeyRecord k;
        k.public_key = d.get_bytes();
        k.registered_at = env.seq;
        p.keys.push_back(std::move(k));
        p.kyc = KycStatus::Verified; // stub auto-approval
        parties_[p.party_id] = std::move(p);
    } else if (env.payload_kind == kRotated) {
        PartyId id = d.get_str();
        Bytes new_key = d.get_bytes();
        Party& p = parties_.at(id);
        for (KeyRecord& k : p.keys) {
            if (k.active()) k.revoked_at = env.seq;
        }
        KeyRecord k;
        k.public_key = std::move(new_key);
        k.registered_at = env.seq;
        p.keys.push_back(std::move(k));
    } else if (env.payload_kind == kKycSet) {
        PartyId id = d.get_str();
        parties_.at(id).kyc = static_cast<KycStatus>(d.get_u64());
    }
}

Bytes IdentityManager::encode_state() const {
    Encoder e;
    e.put_u64(parties_.size());
    for (const auto& [id, p] : parties_) {
        e.put_str(id);
        e.put_str(p.legal_name);
        e.put_u64(roles_to_mask(p.roles));
        e.put_u64(static_cast<std::uint64_t>(p.kyc));
        e.put_u64(p.keys.size());
        for (const KeyRecord& k : p.keys) {
            e.put_bytes(view_of(k.public_key));
            e.put_u64(k.registered_at);
            e.put_u64(k.revoked_at ? *k.revoked_at + 1 : 0);
        }
    }
    return e.take();
}

} // namespace shardex
