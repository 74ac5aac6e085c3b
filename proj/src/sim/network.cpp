#include "shardex/sim/world.hpp"

#include <algorithm>

namespace shardex::sim {

// ---------------------------------------------------------------------------
// SimNet
// ---------------------------------------------------------------------------

void SimNet::register_node(const std::string& id, Handler handler) {
    handlers_[id] = std::move(handler);
    up_[id] = true;
}

void SimNet::set_up(const std::string& id, bool up) { up_[id] = up; }

bool SimNet::is_up(const std::string& id) const {
    auto it = up_.find(id);
    return it != up_.end() && it->second;
}

void SimNet::deliver(const NetMessage& msg, std::uint64_t latency) {
    sched_.after(latency, [this, msg] {
        if (!is_up(msg.to)) return; // lost: target down at delivery time
        auto it = handlers_.find(msg.to);
        if (it != handlers_.end()) it->second(msg);
    });
}

void SimNet::flush_reorder(const std::string& target) {
    TargetFaults& f = faults_[target];
    // deliver the buffered burst in reverse arrival order
    std::uint64_t lat = 1;
    for (auto it = f.reorder_buffer.rbegin(); it != f.reorder_buffer.rend(); ++it) {
        deliver(*it, lat);
        lat += 1;
    }
    f.reorder_buffer.clear();
    f.reorder_pending = 0;
}

void SimNet::send(NetMessage msg) {
    sent_++;
    TargetFaults& f = faults_[msg.to];
    std::uint64_t latency = 1 + sched_.rng()() % 4;
    if (sched_.now() < f.delay_until) latency += f.delay_ms;

    if (f.reorder_pending > 0) {
        f.reorder_buffer.push_back(msg);
        f.reorder_pending--;
        if (f.reorder_pending == 0) flush_reorder(msg.to);
        return;
    }
    deliver(msg, latency);
    if (f.duplicate_next > 0) {
        f.duplicate_next--;
        deliver(msg, latency + 2 + sched_.rng()() % 3);
    }
}

void SimNet::inject_delay(const std::string& target, std::uint64_t span_ms) {
    TargetFaults& f = faults_[target];
    f.delay_until = sched_.now() + span_ms;
    f.delay_ms = span_ms;
}

void SimNet::inject_duplicate_next(const std::string& target, std::uint32_t count) {
    faults_[target].duplicate_next += count;
}

void SimNet::inject_reorder(const std::string& target, std::uint32_t k) {
    TargetFaults& f = faults_[target];
    if (f.reorder_pending == 0) f.reorder_buffer.clear();
    f.reorder_pending = k;
    // a stalled window must not hold messages forever
    std::string id = target;
    sched_.after(50, [this, id] {
        if (!faults_[id].reorder_buffer.empty()) flush_reorder(id);
    });
}

// ---------------------------------------------------------------------------
// Gateways bridging manager-internal synchronous calls onto the sim
// ---------------------------------------------------------------------------

namespace {

class SimFunding final : public FundingGateway {
public:
    SimFunding(SimWorld& world, PartyId op, crypto::Keypair keys)
        : world_(world), op_(std::move(op)), keys_(std::move(keys)) {}

    Expected<std::string> reserve(const std::string& manager_id, const PartyId& owner, const ResourceId& resource,
                                  Amount amount) override {
        if (!world_.node_up(manager_id)) return Error{Errc::ParticipantUnreachable, manager_id};
        ResourceManager* rm = world_.resource_manager(manager_id);
        if (!rm) return Error{Errc::ParticipantUnreachable, manager_id};
        Bytes intent = ResourceManager::reserve_intent(owner, resource, amount);
        return rm->reserve(owner, resource, amount, op_, crypto::sign(view_of(intent), view_of(keys_.secret_key)));
    }

    Status release(const std::string& manager_id, const std::string& reservation_id) override {
        if (!world_.node_up(manager_id)) return Error{Errc::ParticipantUnreachable, manager_id};
        ResourceManager* rm = world_.resource_manager(manager_id);
        if (!rm) return Error{Errc::ParticipantUnreachable, manager_id};
        auto res = rm->settle_reservation(reservation_id, SettleDecision::Abort);
        if (!res.ok()) return res.error();
        return ok_status();
    }

private:
    SimWorld& world_;
    PartyId op_;
    crypto::Keypair keys_;
};

// Settlement rides the bus: the matching step fires an exec request at a
// coordinator and learns the outcome from the reply, never blocking the node.
class SimSettlement final : public SettlementExecutor {
public:
    SimSettlement(SimWorld& world, std::string node_id) : world_(world), node_id_(std::move(node_id)) {}

    void execute(std::vector<TxnAction> actions, const PartyId& initiator, Callback cb) override {
        world_.execute_atomic(
            std::move(actions), initiator,
            [cb](bool committed, bool in_doubt, const std::string& detail) {
                if (committed && !in_doubt) {
                    cb(detail, TxnDecision::Committed, Error{Errc::InvalidParams, ""});
                } else if (committed) {
                    // decision known but not fully delivered: recovery owns it now
                    cb(detail, TxnDecision::Committed, Error{Errc::Timeout, "decision delivery incomplete"});
                } else {
                    cb(detail, TxnDecision::Aborted, Error{Errc::Timeout, detail});
                }
            },
            30000, node_id_);
    }

private:
    SimWorld& world_;
    std::string node_id_;
};

// Instrument reads resolve against whichever live contract manager owns the
// isin; a down shard reads as not tradeable.
class SimInstrumentReader final : public InstrumentReader {
public:
    explicit SimInstrumentReader(SimWorld& world) : world_(world) {}

    bool is_tradeable(const std::string& isin) const override {
        ContractManager* cm = find(isin);
        return cm && cm->is_tradeable(isin);
    }
    std::uint64_t version_of(const std::string& isin) const override {
        ContractManager* cm = find(isin);
        return cm ? cm->version_of(isin) : 0;
    }

private:
    ContractManager* find(const std::string& isin) const {
        for (const std::string& id : world_.topology().managers_of(ManagerKind::Contract)) {
            if (!world_.node_up(id)) continue;
            ContractManager* cm = world_.contract_manager(id);
            if (cm && cm->instance(isin)) return cm;
        }
        return nullptr;
    }

    SimWorld& world_;
};

} // namespace

// ---------------------------------------------------------------------------
// SimWorld
// ---------------------------------------------------------------------------

TxnParticipant* SimWorld::ManagerNode::participant() {
    if (resource) return resource.get();
    if (contract) return contract.get();
    if (trade) return trade.get();
    return nullptr;
}

SimWorld::SimWorld(Topology topology, std::uint64_t seed)
    : topology_(std::move(topology)), seed_(seed), sched_(seed), net_(sched_) {
    // identity is a node but never a fault target; lookups stay read-only
    for (const ManagerDecl& decl : topology_.managers) {
        if (decl.kind == ManagerKind::Identity) {
            identity_node_id_ = decl.id;
            IdentityManager::OperatorConfig op;
            op.party_id = topology_.operator_id;
            op.legal_name = "Market Operator";
            op.roles = {Role::MarketOperator};
            op.keypair = derive_keys(seed_, topology_.operator_id);
            identity_mgr_ = IdentityManager::create(op, std::make_unique<MemStorage>());
            net_.register_node(decl.id, [this](const NetMessage& msg) {
                if (msg.kind == "request") {
                    // identity requests are bootstrap-only in this artifact
                    (void)msg;
                }
            });
        }
    }
    for (const ManagerDecl& decl : topology_.managers) {
        if (decl.kind != ManagerKind::Identity) build_node(decl);
    }
    for (std::uint32_t c = 0; c < topology_.coordinators; c++) {
        std::string id = "coord-" + std::to_string(c);
        coordinators_[id] = CoordinatorNode{id, 0, {}, {}};
        net_.register_node(id, [this, id](const NetMessage& msg) {
            handle_coordinator_message(coordinators_.at(id), msg);
        });
    }
    net_.register_node("driver", [this](const NetMessage& msg) { driver_handle(msg); });
}

void SimWorld::build_node(const ManagerDecl& decl) {
    ManagerNode node;
    node.decl = decl;
    node.storage = std::make_shared<MemStorage>();
    nodes_[decl.id] = std::move(node);
    wire_node(nodes_[decl.id], true);
    std::string id = decl.id;
    net_.register_node(id, [this, id](const NetMessage& msg) { handle_manager_message(nodes_.at(id), msg); });
}

void SimWorld::wire_node(ManagerNode& node, bool fresh) {
    crypto::Keypair op_keys = derive_keys(seed_, topology_.operator_id);
    auto storage = std::make_unique<SharedMemStorage>(node.storage);
    switch (node.decl.kind) {
        case ManagerKind::Resource: {
            ResourceManager::Config cfg{node.decl.id, topology_.operator_id, op_keys, true};
            node.resource = fresh ? ResourceManager::create(cfg, *identity_mgr_, std::move(storage))
                                  : ResourceManager::restore(cfg, *identity_mgr_, std::move(storage));
            break;
        }
        case ManagerKind::Contract: {
            ContractManager::Config cfg{node.decl.id, topology_.operator_id, op_keys, false, true};
            HoldersFn holders = [this](const std::string& isin)
                -> std::optional<std::vector<std::pair<PartyId, std::int64_t>>> {
                for (const std::string& id : topology_.managers_of(ManagerKind::Resource)) {
                    ManagerNode& n = nodes_.at(id);
                    if (!n.resource || !n.resource->resource_type(isin)) continue;
                    if (!net_.is_up(id)) return std::nullopt; // owning shard down
                    return n.resource->holders_of(isin);
                }
                return std::nullopt;
            };
            node.contract = fresh ? ContractManager::create(cfg, *identity_mgr_, holders, std::move(storage))
                                  : ContractManager::restore(cfg, *identity_mgr_, holders, std::move(storage));
            node.contract->on_instrument_event([this](const std::string& isin, std::uint64_t) {
                for (const std::string& id : topology_.managers_of(ManagerKind::Trade)) {
                    if (!net_.is_up(id)) continue;
                    TradeManager* tm = trade_manager(id);
                    if (!tm) continue;
                    tm->sweep_stale(isin);
                    tm->match_and_settle(isin);
                }
            });
            break;
        }
        case ManagerKind::Trade: {
            node.funding = std::make_unique<SimFunding>(*this, topology_.operator_id, op_keys);
            node.settlement = std::make_unique<SimSettlement>(*this, node.decl.id);
            node.instrument_reader = std::make_unique<SimInstrumentReader>(*this);
            TradeManager::Config cfg{node.decl.id, topology_.operator_id, op_keys, true};
            node.trade = fresh ? TradeManager::create(cfg, *identity_mgr_, node.instrument_reader.get(),
                                                      node.funding.get(), node.settlement.get(), std::move(storage))
                               : TradeManager::restore(cfg, *identity_mgr_, node.instrument_reader.get(),
                                                       node.funding.get(), node.settlement.get(), std::move(storage));
            break;
        }
        case ManagerKind::Identity:
            break;
    }
}

Status SimWorld::bootstrap() {
    // parties self-register on the identity ledger (operator pre-registered)
    for (const PartyDecl& p : topology_.parties) {
        if (p.id == topology_.operator_id) continue;
        crypto::Keypair keys = derive_keys(seed_, p.id);
        Bytes intent = IdentityManager::registration_intent(p.id, p.legal_name, p.roles, view_of(keys.public_key));
        auto res = identity_mgr_->register_party(p.id, p.legal_name, p.roles, keys.public_key,
                                                 crypto::sign(view_of(intent), view_of(keys.secret_key)));
        if (!res.ok()) return res.error();
    }
    for (const ResourceDecl& r : topology_.resources) {
        ResourceManager* rm = resource_manager(r.manager);
        if (!rm) return Error{Errc::ConfigError, "resource manager missing: " + r.manager};
        if (Status s = rm->register_resource(r.id, r.decimals, r.issuer); !s.ok()) return s;
    }
    for (const AccountDecl& a : topology_.accounts) {
        for (const ResourceDecl& r : topology_.resources) {
            if (r.id != a.resource) continue;
            ResourceManager* rm = resource_manager(r.manager);
            if (Status s = rm->open_account(a.party, a.resource, a.credit_limit); !s.ok()) return s;
            if (a.opening_balance > 0) {
                Bytes intent = ResourceManager::issue_intent(a.resource, a.party, a.opening_balance);
                Status s = rm->issue_units(a.resource, a.party, a.opening_balance, r.issuer,
                                           sign_as(r.issuer, view_of(intent)));
                if (!s.ok()) return s;
            }
        }
    }
    return ok_status();
}

Bytes SimWorld::sign_as(const PartyId& party, BytesView message) const {
    crypto::Keypair keys = derive_keys(seed_, party);
    return crypto::sign(message, view_of(keys.secret_key));
}

crypto::Keypair SimWorld::keys_of(const PartyId& party) const { return derive_keys(seed_, party); }

ResourceManager* SimWorld::resource_manager(const std::string& id) {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second.resource.get();
}

ContractManager* SimWorld::contract_manager(const std::string& id) {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second.contract.get();
}

TradeManager* SimWorld::trade_manager(const std::string& id) {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second.trade.get();
}

// ---------------------------------------------------------------------------
// Faults
// ---------------------------------------------------------------------------

void SimWorld::apply_fault_plan(const FaultPlan& plan) {
    for (const FaultEvent& f : plan.faults) {
        sched_.at(f.at_ms, [this, f] {
            switch (f.kind) {
                case FaultKind::Crash: crash(f.target); break;
                case FaultKind::Restart: restart(f.target); break;
                case FaultKind::DelayMessages: net_.inject_delay(f.target, f.span_ms); break;
                case FaultKind::DuplicateNext: net_.inject_duplicate_next(f.target, f.count); break;
                case FaultKind::ReorderWindow: net_.inject_reorder(f.target, f.count); break;
            }
        });
    }
}

void SimWorld::crash(const std::string& id) {
    if (!net_.is_up(id)) return;
    net_.set_up(id, false);
    if (auto it = coordinators_.find(id); it != coordinators_.end()) {
        // a coordinator holds only per-transaction volatile state
        it->second.sessions.clear();
        it->second.polls.clear();
        return;
    }
    auto it = nodes_.find(id);
    if (it == nodes_.end()) return;
    ManagerNode& node = it->second;
    node.storage->crash(); // unflushed suffix is gone
    node.resource.reset();
    node.contract.reset();
    node.trade.reset();
}

void SimWorld::restart(const std::string& id) {
    if (net_.is_up(id)) return;
    net_.set_up(id, true);
    if (coordinators_.count(id)) return; // nothing to rebuild: stateless
    auto it = nodes_.find(id);
    if (it == nodes_.end()) return;
    wire_node(it->second, false);
    recovery_attempts_[id] = 0;
    run_recovery(id);
}

void SimWorld::run_recovery(const std::string& manager_id) {
    auto it = nodes_.find(manager_id);
    if (it == nodes_.end() || !net_.is_up(manager_id)) return;
    TxnParticipant* p = it->second.participant();
    if (!p) return;
    std::vector<TxnId> in_doubt = p->in_doubt_txns();
    if (in_doubt.empty()) return;
    if (recovery_attempts_[manager_id]++ > 5) {
        for (const TxnId& txn : in_doubt) {
            alerts_log_.push_back("operator-alert: " + manager_id + " blocked on in-doubt transaction " + txn);
        }
        return;
    }
    for (const TxnId& txn : in_doubt) {
        // the owning coordinator is encoded in the transaction id
        std::string owner = txn.substr(0, txn.find("-t"));
        Encoder e;
        e.put_str(txn);
        std::vector<std::string> manifest = p->txn_manifest(txn);
        e.put_u64(manifest.size());
        for (const std::string& m : manifest) e.put_str(m);
        net_.send(NetMessage{manager_id, owner, "decision_query", e.take(), next_correlation_++});
    }
    // re-poll until resolved; unresolved transactions raise the alert above
    std::string id = manager_id;
    sched_.after(topology_.t_resolve_ms, [this, id] { run_recovery(id); });
}

std::map<std::string, Bytes> SimWorld::ledger_files() const {
    std::map<std::string, Bytes> out;
    out[identity_node_id_] = identity_mgr_->ledger().storage().read_durable();
    for (const auto& [id, node] : nodes_) {
        out[id] = node.storage->read_durable();
    }
    return out;
}

KeyTimelineFn SimWorld::key_timeline_fn() const {
    return [this](const PartyId& p) { return identity_mgr_->key_timeline(p); };
}

// ---------------------------------------------------------------------------
// Messaging
// ---------------------------------------------------------------------------

std::string SimWorld::pick_coordinator() {
    std::vector<std::string> up;
    for (const auto& [id, c] : coordinators_) {
        if (net_.is_up(id)) up.push_back(id);
    }
    if (up.empty()) return coordinators_.begin()->first; // all down: message will drop
    return up[next_correlation_ % up.size()];
}

void SimWorld::request(const std::string& manager_id, std::string op, Bytes body, ResponseFn cb,
                       std::uint64_t timeout_ms) {
    std::uint64_t corr = next_correlation_++;
    pending_[corr] = std::move(cb);
    Encoder e;
    e.put_str(op);
    e.put_bytes(view_of(body));
    net_.send(NetMessage{"driver", manager_id, "request", e.take(), corr});
    sched_.after(timeout_ms, [this, corr] {
        auto it = pending_.find(corr);
        if (it == pending_.end()) return;
        ResponseFn cb2 = std::move(it->second);
        pending_.erase(it);
        cb2(Response{false, Errc::Timeout, "request timed out", {}});
    });
}

void SimWorld::execute_atomic(std::vector<TxnAction> actions, const PartyId& initiator,
                              std::function<void(bool, bool, const std::string&)> cb, std::uint64_t timeout_ms,
                              const std::string& reply_node) {
    std::uint64_t corr = next_correlation_++;
    pending_exec_[corr] = std::move(cb);
    Encoder e;
    e.put_str(initiator);
    e.put_bytes(view_of(encode_txn_actions(actions)));
    net_.send(NetMessage{reply_node, pick_coordinator(), "exec", e.take(), corr});
    sched_.after(timeout_ms, [this, corr] {
        auto it = pending_exec_.find(corr);
        if (it == pending_exec_.end()) return;
        auto cb2 = std::move(it->second);
        pending_exec_.erase(it);
        cb2(false, true, "transaction outcome unknown: coordinator silent");
    });
}

void SimWorld::driver_handle(const NetMessage& msg) {
    if (msg.kind == "response") {
        auto it = pending_.find(msg.correlation);
        if (it == pending_.end()) return;
        ResponseFn cb = std::move(it->second);
        pending_.erase(it);
        Decoder d(view_of(msg.body));
        Response r;
        r.ok = d.get_bool();
        r.code = static_cast<Errc>(d.get_u64());
        r.error = d.get_str();
        r.data = d.get_bytes();
        cb(r);
    } else if (msg.kind == "exec_result") {
        auto it = pending_exec_.find(msg.correlation);
        if (it == pending_exec_.end()) return;
        auto cb = std::move(it->second);
        pending_exec_.erase(it);
        Decoder d(view_of(msg.body));
        bool committed = d.get_bool();
        bool in_doubt = d.get_bool();
        std::string detail = d.get_str();
        cb(committed, in_doubt, detail);
    }
}

// Participant-side protocol handling shared by every manager node.
void SimWorld::handle_manager_message(ManagerNode& node, const NetMessage& msg) {
    TxnParticipant* p = node.participant();
    if (msg.kind == "prepare" && p) {
        Decoder d(view_of(msg.body));
        TxnId txn = d.get_str();
        std::vector<TxnAction> actions = decode_txn_actions(view_of(d.get_bytes()));
        Vote v = p->txn_prepare(txn, actions);
        Encoder e;
        e.put_str(txn);
        e.put_bool(v.yes);
        e.put_str(v.yes ? "" : v.reason.to_string());
        e.put_u64(static_cast<std::uint64_t>(v.reason.code));
        net_.send(NetMessage{node.decl.id, msg.from, "vote", e.take(), msg.correlation});
        if (v.yes) {
            // a yes-voter left hanging past the resolve window asks around
            std::string nid = node.decl.id;
            sched_.after(topology_.t_resolve_ms, [this, nid, txn] {
                auto it = nodes_.find(nid);
                if (it == nodes_.end() || !net_.is_up(nid)) return;
                TxnParticipant* part = it->second.participant();
                if (!part || part->txn_state(txn) != TxnState::Prepared) return;
                recovery_attempts_[nid] = 0;
                run_recovery(nid);
            });
        }
    } else if (msg.kind == "decision" && p) {
        Decoder d(view_of(msg.body));
        TxnId txn = d.get_str();
        bool commit = d.get_bool();
        if (commit) {
            p->txn_commit(txn);
        } else {
            p->txn_abort(txn);
        }
        Encoder e;
        e.put_str(txn);
        net_.send(NetMessage{node.decl.id, msg.from, "ack", e.take(), msg.correlation});
    } else if (msg.kind == "state_query" && p) {
        Decoder d(view_of(msg.body));
        TxnId txn = d.get_str();
        Encoder e;
        e.put_str(txn);
        e.put_u64(static_cast<std::uint64_t>(p->txn_state(txn)));
        net_.send(NetMessage{node.decl.id, msg.from, "state_reply", e.take(), msg.correlation});
    } else if (msg.kind == "decision_reply" && p) {
        Decoder d(view_of(msg.body));
        TxnId txn = d.get_str();
        std::uint64_t outcome = d.get_u64(); // 0 commit, 1 abort, 2 unknown
        if (outcome == 0) {
            p->txn_commit(txn);
        } else if (outcome == 1) {
            p->txn_abort(txn);
        }
        // unknown: the scheduled re-poll in run_recovery covers it
    } else if (msg.kind == "exec_result" && node.settlement) {
        driver_handle(msg); // settlement callbacks share the pending-exec table
    } else if (msg.kind == "request") {
        handle_request(node, msg);
    }
}

void SimWorld::handle_request(ManagerNode& node, const NetMessage& msg) {
    Decoder d(view_of(msg.body));
    std::string op = d.get_str();
    Bytes body = d.get_bytes();
    Decoder b(view_of(body));

    Response r;
    auto fail = [&](const Error& err) {
        r.ok = false;
        r.code = err.code;
        r.error = err.to_string();
    };
    auto success = [&](Bytes data = {}) {
        r.ok = true;
        r.code = Errc::InvalidParams;
        r.data = std::move(data);
    };

    if (op == "issue_units" && node.resource) {
        ResourceId res = b.get_str();
        PartyId to = b.get_str();
        Amount amount = b.get_i64();
        PartyId author = b.get_str();
        Bytes sig = b.get_bytes();
        Status s = node.resource->issue_units(res, to, amount, author, std::move(sig));
        s.ok() ? success() : fail(s.error());
    } else if (op == "transfer" && node.resource) {
        TransferInstruction instr;
        instr.from = b.get_str();
        instr.to = b.get_str();
        instr.resource = b.get_str();
        instr.amount = b.get_i64();
        instr.ref = b.get_str();
        PartyId author = b.get_str();
        Bytes sig = b.get_bytes();
        Status s = node.resource->transfer(instr, author, std::move(sig));
        s.ok() ? success() : fail(s.error());
    } else if (op == "apply_lifecycle" && node.contract) {
        LifecycleEvent ev = LifecycleEvent::decode(view_of(b.get_bytes()));
        auto res = node.contract->apply_lifecycle(ev);
        if (res.ok()) {
            Encoder e;
            e.put_u64(res.value());
            success(e.take());
        } else {
            fail(res.error());
        }
    } else if (op == "submit_order" && node.trade) {
        TradeManager::OrderDraft draft;
        PartyId party = b.get_str();
        draft.side = b.get_u64() == 0 ? Side::Buy : Side::Sell;
        draft.isin = b.get_str();
        draft.qty = b.get_i64();
        draft.limit_price = b.get_i64();
        draft.pinned_state_version = b.get_u64();
        Bytes sig = b.get_bytes();
        auto res = node.trade->submit_order(draft, party, std::move(sig));
        if (res.ok()) {
            Encoder e;
            e.put_str(res.value());
            success(e.take());
        } else {
            fail(res.error());
        }
    } else if (op == "cancel_order" && node.trade) {
        std::string oid = b.get_str();
        PartyId party = b.get_str();
        Bytes sig = b.get_bytes();
        Status s = node.trade->cancel_order(oid, party, std::move(sig));
        s.ok() ? success() : fail(s.error());
    } else if (op == "list_instrument" && node.trade) {
        TradeManager::InstrumentListing l;
        l.isin = b.get_str();
        l.currency = b.get_str();
        l.security_manager_id = b.get_str();
        l.currency_manager_id = b.get_str();
        Status s = node.trade->list_instrument(std::move(l));
        s.ok() ? success() : fail(s.error());
    } else {
        fail(Error{Errc::InvalidParams, "unsupported request " + op + " for " + node.decl.id});
    }

    Encoder e;
    e.put_bool(r.ok);
    e.put_u64(static_cast<std::uint64_t>(r.code));
    e.put_str(r.error);
    e.put_bytes(view_of(r.data));
    net_.send(NetMessage{node.decl.id, msg.from, "response", e.take(), msg.correlation});
}

// ---------------------------------------------------------------------------
// Coordinator protocol
// ---------------------------------------------------------------------------

void SimWorld::handle_coordinator_message(CoordinatorNode& coord, const NetMessage& msg) {
    Decoder d(view_of(msg.body));
    if (msg.kind == "exec") {
        PartyId initiator = d.get_str();
        std::vector<TxnAction> actions = decode_txn_actions(view_of(d.get_bytes()));
        CoordinatorSession s;
        s.txn = coord.id + "-t" + std::to_string(next_correlation_++);
        s.initiator_node = msg.from;
        s.correlation = msg.correlation;
        s.actions = std::move(actions);
        s.manifest = manifest_of(s.actions);
        if (s.actions.empty()) {
            Encoder e;
            e.put_bool(false);
            e.put_bool(false);
            e.put_str("empty action list");
            net_.send(NetMessage{coord.id, s.initiator_node, "exec_result", e.take(), s.correlation});
            return;
        }
        TxnId txn = s.txn;
        coord.sessions[txn] = std::move(s);
        CoordinatorSession& session = coord.sessions[txn];
        Encoder body;
        body.put_str(txn);
        body.put_bytes(view_of(encode_txn_actions(session.actions)));
        Bytes prep = body.take();
        for (const std::string& m : session.manifest) {
            net_.send(NetMessage{coord.id, m, "prepare", prep, next_correlation_++});
        }
        std::string cid = coord.id;
        sched_.after(topology_.t_prep_ms, [this, cid, txn] {
            auto& c = coordinators_.at(cid);
            auto it = c.sessions.find(txn);
            if (it == c.sessions.end() || it->second.decided) return;
            coordinator_decide(c, it->second, false); // votes incomplete: abort
        });
    } else if (msg.kind == "vote") {
        TxnId txn = d.get_str();
        bool yes = d.get_bool();
        std::string reason = d.get_str();
        auto it = coord.sessions.find(txn);
        if (it == coord.sessions.end()) return;
        CoordinatorSession& s = it->second;
        if (s.decided) return;
        s.votes[msg.from] = yes;
        if (!yes) {
            s.txn_abort_reason = reason;
            coordinator_decide(coord, s, false);
            return;
        }
        if (s.votes.size() == s.manifest.size()) {
            bool all_yes = std::all_of(s.votes.begin(), s.votes.end(), [](const auto& kv) { return kv.second; });
            coordinator_decide(coord, s, all_yes);
        }
    } else if (msg.kind == "ack") {
        TxnId txn = d.get_str();
        auto it = coord.sessions.find(txn);
        if (it == coord.sessions.end()) return;
        CoordinatorSession& s = it->second;
        s.acked.insert(msg.from);
        if (s.decided && s.acked.size() >= s.manifest.size()) coordinator_finish(coord, s, false);
    } else if (msg.kind == "decision_query") {
        TxnId txn = d.get_str();
        std::uint64_t n = d.get_u64();
        std::vector<std::string> manifest;
        for (std::uint64_t i = 0; i < n; i++) manifest.push_back(d.get_str());
        if (auto it = coord.sessions.find(txn); it != coord.sessions.end() && it->second.decided) {
            Encoder e;
            e.put_str(txn);
            e.put_u64(it->second.commit ? 0 : 1);
            net_.send(NetMessage{coord.id, msg.from, "decision_reply", e.take(), msg.correlation});
            return;
        }
        // stateless reconstruction: the participants' durable logs are the
        // decision of record once the deciding incarnation is gone
        CoordinatorNode::RecoveryPoll poll;
        poll.requester = msg.from;
        poll.correlation = msg.correlation;
        poll.manifest = manifest;
        coord.polls[txn] = std::move(poll);
        Encoder q;
        q.put_str(txn);
        Bytes qb = q.take();
        for (const std::string& m : manifest) {
            net_.send(NetMessage{coord.id, m, "state_query", qb, next_correlation_++});
        }
        std::string cid = coord.id;
        sched_.after(topology_.t_prep_ms, [this, cid, txn] {
            auto& c = coordinators_.at(cid);
            auto it = c.polls.find(txn);
            if (it == c.polls.end()) return;
            // somebody never answered: outcome stays unknown for now
            Encoder e;
            e.put_str(txn);
            e.put_u64(2);
            net_.send(NetMessage{cid, it->second.requester, "decision_reply", e.take(), it->second.correlation});
            c.polls.erase(it);
        });
    } else if (msg.kind == "state_reply") {
        TxnId txn = d.get_str();
        auto state = static_cast<TxnState>(d.get_u64());
        auto it = coord.polls.find(txn);
        if (it == coord.polls.end()) return;
        CoordinatorNode::RecoveryPoll& poll = it->second;
        poll.states[msg.from] = state;
        bool any_committed = false, any_aborted = false;
        for (const auto& [m, st] : poll.states) {
            any_committed = any_committed || st == TxnState::Committed;
            any_aborted = any_aborted || st == TxnState::Aborted;
        }
        bool complete = poll.states.size() >= poll.manifest.size();
        if (any_committed || any_aborted || complete) {
            std::uint64_t outcome = any_committed ? 0 : (any_aborted || complete ? 1 : 2);
            Encoder e;
            e.put_str(txn);
            e.put_u64(outcome);
            net_.send(NetMessage{coord.id, poll.requester, "decision_reply", e.take(), poll.correlation});
            // push the reconstructed outcome to every participant so peers converge
            if (outcome != 2) {
                Encoder push;
                push.put_str(txn);
                push.put_bool(outcome == 0);
                Bytes pb = push.take();
                for (const std::string& m : poll.manifest) {
                    net_.send(NetMessage{coord.id, m, "decision", pb, next_correlation_++});
                }
            }
            coord.polls.erase(it);
        }
    }
}

void SimWorld::coordinator_decide(CoordinatorNode& coord, CoordinatorSession& session, bool commit) {
    session.decided = true;
    session.commit = commit;
    coordinator_push_decision(coord, session.txn);
}

void SimWorld::coordinator_push_decision(CoordinatorNode& coord, const TxnId& txn) {
    auto it = coord.sessions.find(txn);
    if (it == coord.sessions.end()) return;
    CoordinatorSession& s = it->second;
    if (s.acked.size() >= s.manifest.size()) return;
    if (s.delivery_attempts++ >= 8) {
        coordinator_finish(coord, s, true);
        return;
    }
    Encoder e;
    e.put_str(s.txn);
    e.put_bool(s.commit);
    Bytes body = e.take();
    for (const std::string& m : s.manifest) {
        if (!s.acked.count(m)) net_.send(NetMessage{coord.id, m, "decision", body, next_correlation_++});
    }
    std::string cid = coord.id;
    sched_.after(500, [this, cid, txn] {
        auto cit = coordinators_.find(cid);
        if (cit == coordinators_.end() || !net_.is_up(cid)) return;
        coordinator_push_decision(cit->second, txn);
    });
}

void SimWorld::coordinator_finish(CoordinatorNode& coord, CoordinatorSession& session, bool in_doubt) {
    if (!session.replied) {
        session.replied = true;
        Encoder e;
        e.put_bool(session.commit);
        e.put_bool(in_doubt);
        e.put_str(session.commit ? session.txn : (session.txn_abort_reason.empty() ? "aborted" : session.txn_abort_reason));
        net_.send(NetMessage{coord.id, session.initiator_node, "exec_result", e.take(), session.correlation});
    }
    coord.sessions.erase(session.txn); // stateless once concluded
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

std::vector<std::string> SimWorld::audit(bool require_all_txns_resolved) {
    std::vector<std::string> violations;
    auto note = [&](const std::string& v) { violations.push_back(v); };

    // conservation per resource manager
    for (const std::string& id : topology_.managers_of(ManagerKind::Resource)) {
        ResourceManager* rm = resource_manager(id);
        if (!rm) continue;
        for (const auto& [res, total] : rm->circulating_totals()) {
            if (total != rm->total_supply(res)) {
                note(id + ": conservation broken for " + res + ": circulating " + std::to_string(total) +
                     " vs issued " + std::to_string(rm->total_supply(res)));
            }
        }
    }

    // cross-manager transaction consistency
    std::map<TxnId, std::map<std::string, TxnState>> txn_states;
    for (auto& [id, node] : nodes_) {
        TxnParticipant* p = node.participant();
        if (!p) continue;
        for (const TxnId& txn : p->in_doubt_txns()) txn_states[txn][id] = TxnState::Prepared;
    }
    // collect terminal states from ledgers (participant objects only expose
    // in-doubt; committed/aborted is read from the durable log)
    for (auto& [id, node] : nodes_) {
        if (!node.participant()) continue;
        for (const EventEnvelope& env : decode_records(view_of(node.storage->read_durable()))) {
            if (env.payload_kind != "txn.committed" && env.payload_kind != "txn.aborted") continue;
            Decoder d(view_of(env.payload));
            TxnId txn = d.get_str();
            txn_states[txn][id] = env.payload_kind == "txn.committed" ? TxnState::Committed : TxnState::Aborted;
        }
    }
    for (const auto& [txn, states] : txn_states) {
        bool any_commit = false, any_abort = false, any_prepared = false;
        for (const auto& [mid, st] : states) {
            any_commit = any_commit || st == TxnState::Committed;
            any_abort = any_abort || st == TxnState::Aborted;
            any_prepared = any_prepared || st == TxnState::Prepared;
        }
        if (any_commit && any_abort) note("transaction " + txn + " committed on one manager, aborted on another");
        if (require_all_txns_resolved && any_prepared) {
            note("transaction " + txn + " still in doubt after drain");
        }
        if (any_commit && any_prepared) {
            // allowed only transiently; after a full drain this is a stuck leg
            if (require_all_txns_resolved) note("transaction " + txn + " has a committed and an undecided leg");
        }
    }

    // tamper evidence and replay equivalence for every manager
    KeyTimelineFn keys = key_timeline_fn();
    auto check_chain = [&](const std::string& id, const Bytes& bytes) {
        VerifyReport rep = verify_chain_bytes(view_of(bytes), keys);
        if (!rep.ok) {
            note(id + ": ledger fails verification at " +
                 (rep.first_bad_seq ? std::to_string(*rep.first_bad_seq) : std::string("?")));
        }
    };
    check_chain(identity_node_id_, identity_mgr_->ledger().storage().read_durable());
    for (auto& [id, node] : nodes_) {
        Bytes durable = node.storage->read_durable();
        check_chain(id, durable);
        auto storage_copy = std::make_unique<MemStorage>();
        for (const EventEnvelope& env : decode_records(view_of(durable))) {
            storage_copy->append_record(view_of(env.encode()));
        }
        storage_copy->flush();
        crypto::Keypair op_keys = derive_keys(seed_, topology_.operator_id);
        if (node.resource) {
            ResourceManager::Config cfg{id, topology_.operator_id, op_keys, true};
            auto replayed = ResourceManager::restore(cfg, *identity_mgr_, std::move(storage_copy));
            if (replayed->encode_state() != node.resource->encode_state()) {
                note(id + ": live state diverges from replay");
            }
        } else if (node.contract) {
            ContractManager::Config cfg{id, topology_.operator_id, op_keys, false, true};
            auto replayed = ContractManager::restore(
                cfg, *identity_mgr_, [](const std::string&) { return std::nullopt; }, std::move(storage_copy));
            if (replayed->encode_state() != node.contract->encode_state()) {
                note(id + ": live state diverges from replay");
            }
        } else if (node.trade) {
            TradeManager::Config cfg{id, topology_.operator_id, op_keys, true};
            auto replayed = TradeManager::restore(cfg, *identity_mgr_, node.instrument_reader.get(),
                                                  node.funding.get(), node.settlement.get(),
                                                  std::move(storage_copy));
            if (replayed->encode_state() != node.trade->encode_state()) {
                note(id + ": live state diverges from replay");
            }
        }
    }
    return violations;
}

} // namespace shardex::sim
