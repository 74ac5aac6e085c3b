#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "shardex/contract.hpp"
#include "shardex/identity.hpp"
#include "shardex/resource.hpp"
#include "shardex/txn.hpp"

namespace shardex {

enum class Side : std::uint8_t { Buy, Sell };
enum class OrderStatus : std::uint8_t { Open, PartiallyFilled, Filled, Cancelled, Rejected, Expired };

const char* order_status_name(OrderStatus s);

struct Order {
    std::string order_id;
    Side side = Side::Buy;
    std::string isin;
    std::uint64_t pinned_state_version = 0;
    Amount qty = 0;       // as submitted
    Amount remaining = 0;
    Amount limit_price = 0; // minor units per unit
    PartyId party;
    std::string reservation_id;
    std::uint64_t entry_seq = 0; // trade ledger seq at acceptance
    OrderStatus status = OrderStatus::Open;
    bool pinned = false; // earmarked by an in-flight settlement

    Amount remaining_exposure() const { return side == Side::Buy ? remaining * limit_price : remaining; }
};

struct Trade {
    std::string trade_id;
    std::string isin;
    std::string buy_order_id;
    std::string sell_order_id;
    Amount qty = 0;
    Amount price = 0;
    PartyId buyer;
    PartyId seller;
    std::string settlement_txn_id;
    bool settled = false;
    std::uint64_t seq = 0; // trade ledger seq of the commit record
};

// Settlement indirection: the matching step hands the atomic action set to a
// transaction manager and learns the outcome through the callback. The direct
// implementation completes inline; the simulation defers it through the bus.
class SettlementExecutor {
public:
    virtual ~SettlementExecutor() = default;
    using Callback = std::function<void(const TxnId& txn, TxnDecision decision, const Error& reason)>;
    virtual void execute(std::vector<TxnAction> actions, const PartyId& initiator, Callback cb) = 0;
};

class DirectSettlement final : public SettlementExecutor {
public:
    explicit DirectSettlement(ParticipantResolver resolve, std::string coordinator_id = "txn-0")
        : coordinator_(std::move(resolve), std::move(coordinator_id)) {}

    void execute(std::vector<TxnAction> actions, const PartyId& initiator, Callback cb) override;

private:
    DirectCoordinator coordinator_;
};

// Reservation plumbing the trade manager needs from the resource managers; in
// process this dispatches straight into them, over tcp it goes remote.
class FundingGateway {
public:
    virtual ~FundingGateway() = default;
    virtual Expected<std::string> reserve(const std::string& manager_id, const PartyId& owner,
                                          const ResourceId& resource, Amount amount) = 0;
    virtual Status release(const std::string& manager_id, const std::string& reservation_id) = 0;
};

class DirectFunding final : public FundingGateway {
public:
    using Resolver = std::function<ResourceManager*(const std::string&)>;
    DirectFunding(Resolver resolve, PartyId operator_id, crypto::Keypair operator_keys)
        : resolve_(std::move(resolve)), operator_id_(std::move(operator_id)), keys_(std::move(operator_keys)) {}

    Expected<std::string> reserve(const std::string& manager_id, const PartyId& owner, const ResourceId& resource,
                                  Amount amount) override {
        ResourceManager* rm = resolve_(manager_id);
        if (!rm) return Error{Errc::ParticipantUnreachable, manager_id};
        Bytes intent = ResourceManager::reserve_intent(owner, resource, amount);
        return rm->reserve(owner, resource, amount, operator_id_,
                           crypto::sign(view_of(intent), view_of(keys_.secret_key)));
    }

    Status release(const std::string& manager_id, const std::string& reservation_id) override {
        ResourceManager* rm = resolve_(manager_id);
        if (!rm) return Error{Errc::ParticipantUnreachable, manager_id};
        auto res = rm->settle_reservation(reservation_id, SettleDecision::Abort);
        if (!res.ok()) return res.error();
        return ok_status();
    }

private:
    Resolver resolve_;
    PartyId operator_id_;
    crypto::Keypair keys_;
};

// Trade manager: order intake with reservation-backed funding, price-time
// priority matching at the resting order's price, and immediate atomic
// delivery-versus-payment settlement. One instance owns its ISIN shard; books
// for different shards never synchronize.
class TradeManager final : public TxnParticipant {
public:
    struct InstrumentListing {
        std::string isin;
        std::string currency;
        std::string security_manager_id;
        std::string currency_manager_id;
    };

    struct Config {
        std::string manager_id;
        PartyId operator_id;
        crypto::Keypair operator_keys;
        bool reject_stale_at_entry = true;
    };

    static std::unique_ptr<TradeManager> create(Config cfg, const IdentityDirectory& identity,
                                                const InstrumentReader* contracts, FundingGateway* funding,
                                                SettlementExecutor* settlement, std::unique_ptr<Storage> storage,
                                                LedgerConfig lcfg = {});
    static std::unique_ptr<TradeManager> restore(Config cfg, const IdentityDirectory& identity,
                                                 const InstrumentReader* contracts, FundingGateway* funding,
                                                 SettlementExecutor* settlement, std::unique_ptr<Storage> storage,
                                                 LedgerConfig lcfg = {});

    Status list_instrument(InstrumentListing listing);

    struct OrderDraft {
        Side side = Side::Buy;
        std::string isin;
        Amount qty = 0;
        Amount limit_price = 0;
        std::uint64_t pinned_state_version = 0;
    };
    static Bytes order_intent(const OrderDraft& draft, const PartyId& party);
    Expected<std::string> submit_order(const OrderDraft& draft, const PartyId& party, Bytes signature);

    static Bytes cancel_intent(const std::string& order_id, const PartyId& party);
    Status cancel_order(const std::string& order_id, const PartyId& party, Bytes signature);

    // Auto-cancel resting orders whose pinned version fell behind; wired to
    // the contract manager's event callback and run before every match pass.
    void sweep_stale(const std::string& isin);

    void match_and_settle(const std::string& isin);

    // Exactly-once ordered view of the trade ledger (orders and trades).
    Status trade_feed(std::uint64_t from_seq, Ledger::Subscriber sub);

    // TxnParticipant (the trade record is a settlement action)
    const std::string& participant_id() const override { return id_; }
    Vote txn_prepare(const TxnId& txn, const std::vector<TxnAction>& all_actions) override;
    Expected<std::vector<std::uint64_t>> txn_commit(const TxnId& txn) override;
    Status txn_abort(const TxnId& txn) override;
    TxnState txn_state(const TxnId& txn) const override;
    std::vector<TxnId> in_doubt_txns() const override;
    std::vector<std::string> txn_manifest(const TxnId& txn) const override;

    const Order* order(const std::string& order_id) const;
    const std::vector<Trade>& trades() const { return trades_; }
    struct BookLevel {
        Amount price;
        Amount qty;
        std::string order_id;
    };
    std::vector<BookLevel> bids(const std::string& isin) const;
    std::vector<BookLevel> asks(const std::string& isin) const;
    bool settling(const std::string& isin) const { return settling_.count(isin) > 0; }

    Ledger& ledger() { return *ledger_; }
    const Ledger& ledger() const { return *ledger_; }
    Bytes encode_state() const;

private:
    TradeManager(Config cfg, const IdentityDirectory& identity, const InstrumentReader* contracts,
                 FundingGateway* funding, SettlementExecutor* settlement, std::unique_ptr<Ledger> ledger);

    struct BookSide {
        // key: (signed price key, entry seq) so bids sort best-first with
        // price negated; values are order ids
        std::map<std::pair<Amount, std::uint64_t>, std::string> levels;
    };
    struct InstrumentBook {
        InstrumentListing listing;
        BookSide bids;
        BookSide asks;
    };
    struct PendingTxn {
        std::vector<Action> actions;
        std::vector<std::string> manifest;
        TxnState state = TxnState::Prepared;
    };

    void apply_event(const EventEnvelope& env);
    Expected<std::uint64_t> append_local(std::string_view kind, Bytes payload);
    void remove_from_book(const Order& o);
    Status cancel_internal(Order& o, OrderStatus final_status, const std::string& reason);

    std::string id_;
    PartyId operator_id_;
    crypto::Keypair operator_keys_;
    bool reject_stale_at_entry_ = true;
    const IdentityDirectory* identity_;
    const InstrumentReader* contracts_;
    FundingGateway* funding_;
    SettlementExecutor* settlement_;
    std::unique_ptr<Ledger> ledger_;

    std::map<std::string, InstrumentBook> books_;
    std::map<std::string, Order> orders_;
    std::vector<Trade> trades_;
    std::map<TxnId, PendingTxn> txns_;
    std::map<std::string, bool> settling_;
    std::uint64_t trade_counter_ = 0;
};

} // namespace shardex
