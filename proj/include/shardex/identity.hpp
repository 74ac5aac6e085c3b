#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "shardex/ledger.hpp"

namespace shardex {

enum class Role : std::uint8_t {
    Investor,
    Issuer,
    VerificationAgent,
    CalculationAgent,
    MarketOperator,
    Supervisor,
};

enum class ActionKind : std::uint8_t {
    RegisterParty,
    RotateKey,
    IssueInstrument,
    IssueUnits,
    Transfer,
    Reserve,
    SubmitObservation,
    SubmitPayment,
    SubmitOrder,
    CancelOrder,
    MonitorQuery,
    OperateLedger,
};

const char* role_name(Role r);
std::optional<Role> role_from_name(std::string_view name);
const char* action_name(ActionKind a);

// Static role -> action table, the authoritative mapping for the artifact.
bool role_permits(Role role, ActionKind action);

enum class KycStatus : std::uint8_t { Pending, Verified, Revoked };

struct KeyRecord {
    Bytes public_key;
    LogicalTime registered_at = 0;            // identity ledger seq
    std::optional<LogicalTime> revoked_at;

    bool active() const { return !revoked_at.has_value(); }
};

struct Party {
    PartyId party_id;
    std::string legal_name;
    std::set<Role> roles;
    std::vector<KeyRecord> keys; // registration order; at most one active
    KycStatus kyc = KycStatus::Pending;

    const KeyRecord* active_key() const;
};

// Read-only identity surface the other managers depend on. Lookups are safe
// to call concurrently with identity appends.
class IdentityDirectory {
public:
    virtual ~IdentityDirectory() = default;
    virtual bool authorize(const PartyId& party, ActionKind action) const = 0;
    virtual std::optional<Bytes> active_key(const PartyId& party) const = 0;
    virtual std::vector<Bytes> key_timeline(const PartyId& party) const = 0;
    virtual bool known_party(const PartyId& party) const = 0;
};

// Identity manager: binds legal persons to keys and roles, authorizes every
// action, and is itself a state manager over its own ledger. KYC content is a
// stub flag, auto-verified at registration.
//
// Every envelope on the identity ledger is sealed by the operator; the
// registering party's proof of key possession is the self-signed intent
// embedded in the payload. The genesis envelope registers the operator itself
// and verifies against the key its own payload introduces.
class IdentityManager : public IdentityDirectory {
public:
    struct OperatorConfig {
        PartyId party_id;
        std::string legal_name;
        std::set<Role> roles; // MarketOperator is implied
        crypto::Keypair keypair;
    };

    // Fresh identity ledger with the operator genesis registration appended.
    static std::unique_ptr<IdentityManager> create(OperatorConfig op, std::unique_ptr<Storage> storage,
                                                   LedgerConfig config = {});
    // Rebuild state from the durable ledger after a crash.
    static std::unique_ptr<IdentityManager> restore(OperatorConfig op, std::unique_ptr<Storage> storage,
                                                    LedgerConfig config = {});

    static Bytes registration_intent(const PartyId& requested_id, const std::string& legal_name,
                                     const std::set<Role>& roles, BytesView public_key);
    Expected<PartyId> register_party(const PartyId& requested_id, const std::string& legal_name,
                                     const std::set<Role>& roles, Bytes public_key, Bytes intent_signature);

    static Bytes rotation_intent(const PartyId& party_id, BytesView new_key);
    Expected<KeyRecord> rotate_key(const PartyId& party_id, Bytes new_key, Bytes signed_by_old_key);

    Status revoke_kyc(const PartyId& party_id);

    // IdentityDirectory
    bool authorize(const PartyId& party, ActionKind action) const override;
    std::optional<Bytes> active_key(const PartyId& party) const override;
    std::vector<Bytes> key_timeline(const PartyId& party) const override;
    bool known_party(const PartyId& party) const override { return parties_.count(party) > 0; }

    const Party* party(const PartyId& id) const;
    const std::map<PartyId, Party>& parties() const { return parties_; }

    Ledger& ledger() { return *ledger_; }
    const Ledger& ledger() const { return *ledger_; }
    const PartyId& operator_id() const { return operator_id_; }
    Ledger::Signer operator_signer() const;

    Bytes encode_state() const;

private:
    IdentityManager(OperatorConfig op, std::unique_ptr<Ledger> ledger);

    void apply_event(const EventEnvelope& env);

    PartyId operator_id_;
    std::string operator_name_;
    std::set<Role> operator_roles_;
    crypto::Keypair operator_keys_;
    std::unique_ptr<Ledger> ledger_;
    std::map<PartyId, Party> parties_;
};

} // namespace shardex
