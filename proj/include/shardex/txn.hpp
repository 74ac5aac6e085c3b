#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "shardex/codec.hpp"
#include "shardex/ledger.hpp"

namespace shardex {

using TxnId = std::string;

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

// A plain transfer between accounts; prepare takes a hold on the sender.
struct TransferAction {
    PartyId from;
    PartyId to;
    std::string resource;
    std::int64_t amount = 0;
    std::string ref; // optional link to a contract lifecycle event
    PartyId author;
    Bytes signature; // client intent signature, re-verified by the participant
};

// Moves part of an existing reservation to a beneficiary (DvP legs).
struct ReservedTransferAction {
    std::string reservation_id;
    PartyId to;
    std::int64_t amount = 0;
};

// Returns part of an existing reservation to its owner (price improvement).
struct ReservedReturnAction {
    std::string reservation_id;
    std::int64_t amount = 0;
};

// Registers a new resource type (instrument issuance side effect).
struct RegisterResourceAction {
    std::string resource_id;
    std::uint32_t decimals = 0;
    PartyId issuer;
};

// Applies a contract lifecycle event; the embedded bytes carry the signed
// client intent in the contract module's encoding.
struct ApplyLifecycleAction {
    std::string isin;
    Bytes event_bytes;
};

// Creates a live instrument instance on a contract manager (paired with a
// RegisterResourceAction on the security manager for atomic issuance).
struct RegisterInstrumentAction {
    std::string isin;
    std::string spec_text;
    Bytes docs_hash;
    PartyId issuer;
    Bytes signature;
};

// Books a matched trade on the trade manager's ledger in the same transaction
// as its delivery and payment legs, so a trade record exists exactly when the
// exchange settled.
struct RecordTradeAction {
    std::string trade_id;
    std::string isin;
    std::string buy_order_id;
    std::string sell_order_id;
    std::int64_t qty = 0;
    std::int64_t price = 0;
    PartyId buyer;
    PartyId seller;
};

using Action = std::variant<TransferAction, ReservedTransferAction, ReservedReturnAction, RegisterResourceAction,
                            ApplyLifecycleAction, RegisterInstrumentAction, RecordTradeAction>;

struct TxnAction {
    std::string manager_id;
    Action action;
};

Bytes encode_action(const Action& a);
Action decode_action(BytesView b);
Bytes encode_txn_actions(const std::vector<TxnAction>& actions);
std::vector<TxnAction> decode_txn_actions(BytesView b);

// ---------------------------------------------------------------------------
// Participant surface
// ---------------------------------------------------------------------------

struct Vote {
    bool yes = false;
    Error reason{Errc::InvalidParams, ""};

    static Vote yes_vote() { return Vote{true, Error{Errc::InvalidParams, ""}}; }
    static Vote no_vote(Error e) { return Vote{false, std::move(e)}; }
};

enum class TxnDecision : std::uint8_t { Committed, Aborted };
enum class TxnState : std::uint8_t { None, Prepared, Committed, Aborted };

// Implemented by every state manager that can take part in an atomic
// transaction. Prepare validates, takes holds and durably logs; the decision
// calls settle the holds and are idempotent under redelivery.
class TxnParticipant {
public:
    virtual ~TxnParticipant() = default;
    virtual const std::string& participant_id() const = 0;
    virtual Vote txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) = 0;
    virtual Expected<std::vector<std::uint64_t>> txn_commit(const TxnId& txn) = 0;
    virtual Status txn_abort(const TxnId& txn) = 0;
    virtual TxnState txn_state(const TxnId& txn) const = 0;
    // In-doubt transactions found in the durable log after a restart.
    virtual std::vector<TxnId> in_doubt_txns() const = 0;
    virtual std::vector<std::string> txn_manifest(const TxnId& txn) const = 0;
};

// ---------------------------------------------------------------------------
// Coordinator
// ---------------------------------------------------------------------------

struct TxnOutcome {
    TxnId txn_id;
    TxnDecision decision = TxnDecision::Aborted;
    std::map<std::string, std::vector<std::uint64_t>> committed_seqs; // per manager
    Error reason{Errc::InvalidParams, ""};
    bool in_doubt = false; // decision delivery incomplete, resolution pending
};

using ParticipantResolver = std::function<TxnParticipant*(const std::string& manager_id)>;

// Synchronous two-phase commit over directly reachable participants. The
// coordinator keeps no state once execute_atomic returns; durability of the
// decision lives in the participants' logs.
class DirectCoordinator {
public:
    explicit DirectCoordinator(ParticipantResolver resolve, std::string coordinator_id = "txn-0")
        : resolve_(std::move(resolve)), id_(std::move(coordinator_id)) {}

    TxnOutcome execute_atomic(const std::vector<TxnAction>& actions, const PartyId& initiator);

    const std::string& id() const { return id_; }
    std::uint64_t txns_started() const { return txn_counter_; }

private:
    ParticipantResolver resolve_;
    std::string id_;
    std::uint64_t txn_counter_ = 0;
};

// Reconstructs the decision for an in-doubt transaction from participant
// logs: committed if anyone committed, aborted only once every participant in
// the manifest is reachable and none has committed. Returns nullopt while the
// outcome cannot be safely determined (some participant unreachable).
std::optional<TxnDecision> reconstruct_decision(const TxnId& txn, const std::vector<std::string>& manifest,
                                                const ParticipantResolver& resolve);

// Drives recovery for one restarted participant: resolves every in-doubt
// transaction it can, returns the ones still blocked (operator alert surface).
std::vector<TxnId> recover_participant(TxnParticipant& participant, const ParticipantResolver& resolve);

std::vector<std::string> manifest_of(const std::vector<TxnAction>& actions);

} // namespace shardex
