#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "shardex/contract_spec.hpp"
#include "shardex/identity.hpp"
#include "shardex/txn.hpp"

namespace shardex {

enum class InstrumentStatus : std::uint8_t { Live, Fulfilled, Defaulted };

const char* instrument_status_name(InstrumentStatus s);

struct ContractInstance {
    std::string isin;
    SpecPtr spec;     // as issued
    SpecPtr residual; // current
    std::uint64_t state_version = 0;
    Bindings bindings;
    LogicalTime clock = 0; // instrument-local logical time
    InstrumentStatus status = InstrumentStatus::Live;
    Bytes docs_hash;
    PartyId issuer;
};

// ISIN shape check; ISO 6166 check-digit validation is registry plumbing and
// stays behind the flag, off by default.
bool validate_isin(std::string_view isin, bool check_digit = false);

// Supplies holder balances for pro-rata snapshots (security manager surface);
// nullopt when the security manager cannot be reached, which makes the
// observation inadmissible rather than silently pinning an empty snapshot.
using HoldersFn = std::function<std::optional<std::vector<std::pair<PartyId, std::int64_t>>>(const std::string& isin)>;

// What the trade manager needs to know about an instrument before matching;
// served locally by the contract manager or remotely over the wire.
class InstrumentReader {
public:
    virtual ~InstrumentReader() = default;
    virtual bool is_tradeable(const std::string& isin) const = 0;
    virtual std::uint64_t version_of(const std::string& isin) const = 0;
};

// Contract manager: authoritative state of a set of live instruments, sharded
// by ISIN. Independent contract managers never synchronize with each other;
// payment steps synchronize with resource managers through the transaction
// manager only.
class ContractManager final : public TxnParticipant, public InstrumentReader {
public:
    struct Config {
        std::string manager_id;
        PartyId operator_id;
        crypto::Keypair operator_keys;
        bool require_isin_checksum = false;
        bool verify_signatures = true; // benchmark relaxation only
    };

    static std::unique_ptr<ContractManager> create(Config cfg, const IdentityDirectory& identity,
                                                   HoldersFn holders, std::unique_ptr<Storage> storage,
                                                   LedgerConfig lcfg = {});
    static std::unique_ptr<ContractManager> restore(Config cfg, const IdentityDirectory& identity,
                                                    HoldersFn holders, std::unique_ptr<Storage> storage,
                                                    LedgerConfig lcfg = {});

    static Bytes issue_intent(const std::string& isin, const std::string& spec_text, BytesView docs_hash);
    Expected<std::string> issue_instrument(const std::string& isin, const SpecPtr& spec, Bytes docs_blob,
                                           const PartyId& issuer, Bytes signature);

    // Validates and applies one lifecycle event; PaymentSettled events are
    // accepted only through the two-phase commit path.
    Expected<std::uint64_t> apply_lifecycle(const LifecycleEvent& event);

    struct StateView {
        std::uint64_t state_version;
        std::string residual;
        Bindings bindings;
        InstrumentStatus status;
        LogicalTime clock;
    };
    Expected<StateView> query_state(const std::string& isin) const;

    const ContractInstance* instance(const std::string& isin) const;
    std::uint64_t version_of(const std::string& isin) const override;
    bool is_tradeable(const std::string& isin) const override;
    std::optional<ResolvedPayment> pending_payment(const std::string& isin) const;
    const Bytes* docs_blob(BytesView digest) const;

    // Fires after every accepted lifecycle event (staleness sweeps hook here).
    void on_instrument_event(std::function<void(const std::string& isin, std::uint64_t version)> cb) {
        listeners_.push_back(std::move(cb));
    }

    // TxnParticipant
    const std::string& participant_id() const override { return id_; }
    Vote txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) override;
    Expected<std::vector<std::uint64_t>> txn_commit(const TxnId& txn) override;
    Status txn_abort(const TxnId& txn) override;
    TxnState txn_state(const TxnId& txn) const override;
    std::vector<TxnId> in_doubt_txns() const override;
    std::vector<std::string> txn_manifest(const TxnId& txn) const override;

    Ledger& ledger() { return *ledger_; }
    const Ledger& ledger() const { return *ledger_; }
    Bytes encode_state() const;

private:
    ContractManager(Config cfg, const IdentityDirectory& identity, HoldersFn holders,
                    std::unique_ptr<Ledger> ledger);

    struct PendingTxn {
        std::vector<Action> actions;
        std::vector<std::string> manifest;
        TxnState state = TxnState::Prepared;
    };

    void apply_event(const EventEnvelope& env);
    void apply_lifecycle_to_instance(const LifecycleEvent& ev);
    Expected<std::uint64_t> append_local(std::string_view kind, Bytes payload);
    Status validate_lifecycle(const LifecycleEvent& ev, bool via_txn,
                              const std::vector<TxnAction>* siblings) const;
    Status attach_snapshot(LifecycleEvent& ev) const;
    bool needs_snapshot(const LifecycleEvent& ev) const;
    Status validate_instrument_registration(const RegisterInstrumentAction& reg) const;
    bool isin_pinned(const std::string& isin) const;
    void notify(const std::string& isin, std::uint64_t version);

    std::string id_;
    PartyId operator_id_;
    crypto::Keypair operator_keys_;
    bool require_isin_checksum_ = false;
    bool verify_signatures_ = true;
    const IdentityDirectory* identity_;
    HoldersFn holders_;
    std::unique_ptr<Ledger> ledger_;

    std::map<std::string, ContractInstance> instances_;
    std::map<std::string, Bytes> docs_store_; // content-addressed, not replayed state
    std::map<TxnId, PendingTxn> txns_;
    std::vector<std::function<void(const std::string&, std::uint64_t)>> listeners_;
};

} // namespace shardex
