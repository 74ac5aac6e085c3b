#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shardex/identity.hpp"
#include "shardex/ledger.hpp"
#include "shardex/txn.hpp"

namespace shardex {

using ResourceId = std::string;

// All amounts are integers in minor units; there is no fractional arithmetic
// anywhere in the money or securities paths.
using Amount = std::int64_t;

struct ResourceType {
    ResourceId id;
    std::uint32_t decimals = 0;
    PartyId issuer;             // the only party allowed to mint
    Amount total_supply = 0;    // sum of issuance events
};

struct ResourceAccount {
    Amount available = 0;
    Amount reserved = 0;
    Amount credit_limit = 0; // <= 0; 0 for ordinary users

    Amount holdings() const { return available + reserved; }
};

enum class ReservationState : std::uint8_t { Held, Committed, Returned };

struct Reservation {
    std::string reservation_id;
    PartyId owner;
    ResourceId resource;
    Amount remaining = 0;        // still held
    Amount pinned = 0;           // earmarked by in-flight transactions
    Amount transferred = 0;      // released to beneficiaries so far
    ReservationState state = ReservationState::Held;
    std::optional<PartyId> beneficiary;
    std::optional<LogicalTime> expires_at; // manager-local ledger time
};

struct TransferInstruction {
    PartyId from;
    PartyId to;
    ResourceId resource;
    Amount amount = 0;
    std::string ref;
};

enum class SettleDecision : std::uint8_t { Commit, Abort };

// Resource manager: ownership balances with conservation, credit floors and
// reserve/commit/abort semantics. Instantiated as the security manager
// (instrument units) and the currency manager (fiat mock); both run the same
// code so the DvP path is identical either way.
class ResourceManager final : public TxnParticipant {
public:
    struct Config {
        std::string manager_id;
        PartyId operator_id;
        crypto::Keypair operator_keys;
        bool verify_signatures = true; // benchmark relaxation only
    };

    static std::unique_ptr<ResourceManager> create(Config cfg, const IdentityDirectory& identity,
                                                   std::unique_ptr<Storage> storage, LedgerConfig lcfg = {});
    static std::unique_ptr<ResourceManager> restore(Config cfg, const IdentityDirectory& identity,
                                                    std::unique_ptr<Storage> storage, LedgerConfig lcfg = {});

    // Bootstrap/operator surface.
    Status register_resource(const ResourceId& id, std::uint32_t decimals, const PartyId& issuer);
    Status open_account(const PartyId& party, const ResourceId& resource, Amount credit_limit);

    // Client intents. The signature covers the canonical intent encoding.
    static Bytes transfer_intent(const TransferInstruction& instr);
    Status transfer(const TransferInstruction& instr, const PartyId& author, Bytes signature);

    static Bytes reserve_intent(const PartyId& owner, const ResourceId& resource, Amount amount);
    Expected<std::string> reserve(const PartyId& owner, const ResourceId& resource, Amount amount,
                                  const PartyId& author, Bytes signature,
                                  std::optional<std::uint64_t> ttl_events = std::nullopt);

    Expected<ReservationState> settle_reservation(const std::string& reservation_id, SettleDecision decision,
                                                  std::optional<PartyId> beneficiary = std::nullopt);

    static Bytes issue_intent(const ResourceId& resource, const PartyId& to, Amount amount);
    Status issue_units(const ResourceId& resource, const PartyId& to, Amount amount, const PartyId& author,
                       Bytes signature);

    // Defensive cleanup for reservations carrying a TTL.
    std::vector<std::string> release_expired();

    // TxnParticipant
    const std::string& participant_id() const override { return id_; }
    Vote txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) override;
    Expected<std::vector<std::uint64_t>> txn_commit(const TxnId& txn) override;
    Status txn_abort(const TxnId& txn) override;
    TxnState txn_state(const TxnId& txn) const override;
    std::vector<TxnId> in_doubt_txns() const override;
    std::vector<std::string> txn_manifest(const TxnId& txn) const override;

    // Queries (consistent reads of the current ledger prefix).
    const ResourceAccount* account(const PartyId& party, const ResourceId& resource) const;
    const Reservation* reservation(const std::string& id) const;
    const ResourceType* resource_type(const ResourceId& id) const;
    Amount total_supply(const ResourceId& id) const;
    // Accounts with positive holdings, descending balance then party id.
    std::vector<std::pair<PartyId, Amount>> holders_of(const ResourceId& id) const;
    // Conservation audit: available + reserved summed per resource.
    std::map<ResourceId, Amount> circulating_totals() const;

    Ledger& ledger() { return *ledger_; }
    const Ledger& ledger() const { return *ledger_; }
    Bytes encode_state() const;

private:
    ResourceManager(Config cfg, const IdentityDirectory& identity, std::unique_ptr<Ledger> ledger);

    struct PendingTxn {
        std::vector<Action> actions; // this manager's share, in order
        std::vector<std::string> manifest;
        TxnState state = TxnState::Prepared;
    };

    void apply_event(const EventEnvelope& env);
    Expected<std::uint64_t> append_local(std::string_view kind, Bytes payload);
    ResourceAccount& account_ref(const PartyId& party, const ResourceId& resource);

    // Validation without mutation, used by both direct ops and prepare.
    Status check_transfer(const TransferInstruction& instr, const PartyId& author, BytesView signature) const;

    std::string id_;
    PartyId operator_id_;
    crypto::Keypair operator_keys_;
    bool verify_signatures_ = true;
    const IdentityDirectory* identity_;
    std::unique_ptr<Ledger> ledger_;

    std::map<ResourceId, ResourceType> resources_;
    std::map<ResourceId, std::map<PartyId, ResourceAccount>> accounts_;
    std::map<std::string, Reservation> reservations_;
    std::map<TxnId, PendingTxn> txns_;
};

} // namespace shardex
