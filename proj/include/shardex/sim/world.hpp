#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "shardex/contract.hpp"
#include "shardex/identity.hpp"
#include "shardex/monitor.hpp"
#include "shardex/resource.hpp"
#include "shardex/sim/scheduler.hpp"
#include "shardex/sim/topology.hpp"
#include "shardex/trading.hpp"

namespace shardex::sim {

struct NetMessage {
    std::string from;
    std::string to;
    std::string kind;
    Bytes body;
    std::uint64_t correlation = 0;
};

// In-process network with deterministic latency and injectable faults. Crash
// semantics: messages already in flight still arrive at live nodes, messages
// addressed to a down node are lost.
class SimNet {
public:
    explicit SimNet(Scheduler& sched) : sched_(sched) {}

    using Handler = std::function<void(const NetMessage&)>;

    void register_node(const std::string& id, Handler handler);
    void set_up(const std::string& id, bool up);
    bool is_up(const std::string& id) const;
    void send(NetMessage msg);

    void inject_delay(const std::string& target, std::uint64_t span_ms);
    void inject_duplicate_next(const std::string& target, std::uint32_t count);
    void inject_reorder(const std::string& target, std::uint32_t k);

    std::uint64_t messages_sent() const { return sent_; }

private:
    struct TargetFaults {
        std::uint64_t delay_until = 0;
        std::uint64_t delay_ms = 0;
        std::uint32_t duplicate_next = 0;
        std::uint32_t reorder_pending = 0;
        std::vector<NetMessage> reorder_buffer;
    };

    void deliver(const NetMessage& msg, std::uint64_t latency);
    void flush_reorder(const std::string& target);

    Scheduler& sched_;
    std::map<std::string, Handler> handlers_;
    std::map<std::string, bool> up_;
    std::map<std::string, TargetFaults> faults_;
    std::uint64_t sent_ = 0;
};

// Storage adapter so ledgers can be torn down and rebuilt over the same bytes
// across simulated crashes.
class SharedMemStorage final : public Storage {
public:
    explicit SharedMemStorage(std::shared_ptr<MemStorage> inner) : inner_(std::move(inner)) {}
    void append_record(BytesView record) override { inner_->append_record(record); }
    void flush() override { inner_->flush(); }
    Bytes read_all() const override { return inner_->read_all(); }
    Bytes read_durable() const override { return inner_->read_durable(); }

private:
    std::shared_ptr<MemStorage> inner_;
};

// The whole deployment in one deterministic process: every state manager as a
// bus-addressable node, stateless coordinators running message-driven
// two-phase commit, fault injection, and crash recovery via participant logs.
class SimWorld {
public:
    SimWorld(Topology topology, std::uint64_t seed);

    Status bootstrap(); // registers parties, resources, opening balances

    Scheduler& scheduler() { return sched_; }
    SimNet& net() { return net_; }
    const Topology& topology() const { return topology_; }
    std::uint64_t seed() const { return seed_; }

    // --- driver-side helpers (the runner acts for all client parties) ---
    Bytes sign_as(const PartyId& party, BytesView message) const;
    crypto::Keypair keys_of(const PartyId& party) const;

    struct Response {
        bool ok = false;
        Errc code = Errc::InvalidParams;
        std::string error;
        Bytes data;
    };
    using ResponseFn = std::function<void(const Response&)>;

    // Sends a typed request from the driver to a manager node; the callback
    // fires on response or on timeout.
    void request(const std::string& manager_id, std::string op, Bytes body, ResponseFn cb,
                 std::uint64_t timeout_ms = 5000);
    // Runs an atomic transaction through a coordinator node; replies are
    // routed back to reply_node (the driver, or the initiating trade manager).
    void execute_atomic(std::vector<TxnAction> actions, const PartyId& initiator,
                        std::function<void(bool committed, bool in_doubt, const std::string& detail)> cb,
                        std::uint64_t timeout_ms = 30000, const std::string& reply_node = "driver");

    // --- fault surface ---
    void apply_fault_plan(const FaultPlan& plan);
    void crash(const std::string& manager_id);
    void restart(const std::string& manager_id);

    // --- direct read access for assertions and invariant audits ---
    IdentityManager* identity() { return identity_mgr_.get(); }
    ResourceManager* resource_manager(const std::string& id);
    ContractManager* contract_manager(const std::string& id);
    TradeManager* trade_manager(const std::string& id);
    bool node_up(const std::string& id) const { return net_.is_up(id); }

    std::map<std::string, Bytes> ledger_files() const; // manager id -> durable bytes
    KeyTimelineFn key_timeline_fn() const;

    // Cross-manager audits; empty result means every invariant held.
    std::vector<std::string> audit(bool require_all_txns_resolved);

    const std::vector<std::string>& alerts_log() const { return alerts_log_; }

private:
    friend class SimFunding;
    friend class SimSettlement;

    struct ManagerNode {
        ManagerDecl decl;
        std::shared_ptr<MemStorage> storage;
        std::unique_ptr<ResourceManager> resource;
        std::unique_ptr<ContractManager> contract;
        std::unique_ptr<TradeManager> trade;
        std::unique_ptr<SettlementExecutor> settlement;
        std::unique_ptr<FundingGateway> funding;
        std::unique_ptr<InstrumentReader> instrument_reader;

        TxnParticipant* participant();
    };

    struct CoordinatorSession {
        TxnId txn;
        std::string initiator_node;
        std::uint64_t correlation = 0;
        std::vector<TxnAction> actions;
        std::vector<std::string> manifest;
        std::map<std::string, bool> votes;
        std::set<std::string> acked;
        bool decided = false;
        bool commit = false;
        bool replied = false;
        std::uint32_t delivery_attempts = 0;
        std::string txn_abort_reason;
    };

    struct CoordinatorNode {
        std::string id;
        std::uint64_t txn_counter = 0;
        std::map<TxnId, CoordinatorSession> sessions;
        // recovery polls for stateless decision reconstruction
        struct RecoveryPoll {
            std::string requester;
            std::uint64_t correlation;
            std::vector<std::string> manifest;
            std::map<std::string, TxnState> states;
        };
        std::map<TxnId, RecoveryPoll> polls;
    };

    void build_node(const ManagerDecl& decl);
    void wire_node(ManagerNode& node, bool fresh);
    void handle_manager_message(ManagerNode& node, const NetMessage& msg);
    void handle_request(ManagerNode& node, const NetMessage& msg);
    void handle_coordinator_message(CoordinatorNode& coord, const NetMessage& msg);
    void coordinator_decide(CoordinatorNode& coord, CoordinatorSession& session, bool commit);
    void coordinator_push_decision(CoordinatorNode& coord, const TxnId& txn);
    void coordinator_finish(CoordinatorNode& coord, CoordinatorSession& session, bool in_doubt);
    void run_recovery(const std::string& manager_id);
    void driver_handle(const NetMessage& msg);
    std::string pick_coordinator();

    Topology topology_;
    std::uint64_t seed_;
    Scheduler sched_;
    SimNet net_;

    std::unique_ptr<IdentityManager> identity_mgr_;
    std::string identity_node_id_;
    std::map<std::string, ManagerNode> nodes_;
    std::map<std::string, CoordinatorNode> coordinators_;

    std::uint64_t next_correlation_ = 1;
    std::map<std::uint64_t, ResponseFn> pending_;
    std::map<std::uint64_t, std::function<void(bool, bool, const std::string&)>> pending_exec_;
    std::map<std::string, std::uint32_t> recovery_attempts_;
    std::vector<std::string> alerts_log_;
};

} // namespace shardex::sim
