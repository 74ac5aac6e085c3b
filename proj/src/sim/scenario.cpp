#include "shardex/sim/scenario.hpp"

#include <filesystem>

#include "shardex/monitor.hpp"

namespace shardex::sim {

namespace {

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

class ScenarioDriver {
public:
    ScenarioDriver(SimWorld& world, const Scenario& scenario, RunReport& report)
        : world_(world), scenario_(scenario), report_(report) {}

    void start() { world_.scheduler().after(1, [this] { step(0); }); }

private:
    void log_action(std::size_t i, const std::string& outcome) {
        const ScenarioStep& action = scenario_.actions[i];
        report_.lines.push_back("action " + std::to_string(i) + " " + action.op + ": " + outcome);
    }

    void finish_step(std::size_t i, bool ok, const std::string& detail) {
        const ScenarioStep& action = scenario_.actions[i];
        std::string expect = action.arg("expect", "ok");
        bool pass = expect == "any" || (expect == "ok" && ok) || (expect == "reject" && !ok);
        log_action(i, (ok ? "ok" : "failed: " + detail) + (pass ? "" : " [unexpected]"));
        if (!pass) {
            report_.failures.push_back("action " + std::to_string(i) + " (" + action.op + "): expected " + expect +
                                       ", got " + (ok ? "ok" : detail));
        }
        world_.scheduler().after(1, [this, i] { step(i + 1); });
    }

    std::string first_of(ManagerKind kind) const {
        auto ids = world_.topology().managers_of(kind);
        return ids.empty() ? "" : ids.front();
    }

    ContractManager* find_contract(const std::string& isin, std::string* manager_out = nullptr) const {
        for (const std::string& id : world_.topology().managers_of(ManagerKind::Contract)) {
            ContractManager* cm = const_cast<SimWorld&>(world_).contract_manager(id);
            if (cm && cm->instance(isin)) {
                if (manager_out) *manager_out = id;
                return cm;
            }
        }
        return nullptr;
    }

    void step(std::size_t i) {
        if (i >= scenario_.actions.size()) return; // drained by the caller
        const ScenarioStep& a = scenario_.actions[i];
        auto respond = [this, i](const SimWorld::Response& r) { finish_step(i, r.ok, r.error); };

        if (a.op == "register_party") {
            std::set<Role> roles;
            for (const std::string& r : split_csv(a.arg("roles"))) {
                auto role = role_from_name(r);
                if (role) roles.insert(*role);
            }
            crypto::Keypair keys = world_.keys_of(a.arg("id"));
            Bytes intent = IdentityManager::registration_intent(a.arg("id"), a.arg("name", a.arg("id")), roles,
                                                                view_of(keys.public_key));
            auto res = world_.identity()->register_party(a.arg("id"), a.arg("name", a.arg("id")), roles,
                                                         keys.public_key,
                                                         crypto::sign(view_of(intent), view_of(keys.secret_key)));
            finish_step(i, res.ok(), res.ok() ? "" : res.error().to_string());
        } else if (a.op == "issue_units") {
            std::string manager = a.arg("manager");
            const ResourceDecl* decl = nullptr;
            for (const ResourceDecl& r : world_.topology().resources) {
                if (r.id == a.arg("resource")) decl = &r;
            }
            if (!decl) {
                finish_step(i, false, "unknown resource " + a.arg("resource"));
                return;
            }
            if (manager.empty()) manager = decl->manager;
            Encoder b;
            b.put_str(a.arg("resource"));
            b.put_str(a.arg("to"));
            b.put_i64(a.num("amount"));
            b.put_str(decl->issuer);
            Bytes intent = ResourceManager::issue_intent(a.arg("resource"), a.arg("to"), a.num("amount"));
            b.put_bytes(view_of(world_.sign_as(decl->issuer, view_of(intent))));
            world_.request(manager, "issue_units", b.take(), respond);
        } else if (a.op == "transfer") {
            TransferInstruction instr{a.arg("from"), a.arg("to"), a.arg("resource"), a.num("amount"),
                                      a.arg("ref")};
            Encoder b;
            b.put_str(instr.from);
            b.put_str(instr.to);
            b.put_str(instr.resource);
            b.put_i64(instr.amount);
            b.put_str(instr.ref);
            b.put_str(instr.from);
            b.put_bytes(view_of(world_.sign_as(instr.from, view_of(ResourceManager::transfer_intent(instr)))));
            world_.request(a.arg("manager"), "transfer", b.take(), respond);
        } else if (a.op == "issue_instrument") {
            std::string cm_id = a.arg("contract_manager", first_of(ManagerKind::Contract));
            std::string sec_id = a.arg("security_manager", first_of(ManagerKind::Resource));
            std::string isin = a.arg("isin");
            PartyId issuer = a.arg("issuer");
            SpecPtr spec;
            if (!a.arg("spec").empty()) {
                auto parsed = spec_from_sexpr(a.arg("spec"));
                if (!parsed.ok()) {
                    finish_step(i, false, parsed.error().to_string());
                    return;
                }
                spec = parsed.value();
            } else { // green bond template
                GreenBondParams params;
                params.issuer = issuer;
                params.verification_agent = a.arg("verification_agent");
                params.calculation_agent = a.arg("calculation_agent");
                params.currency = a.arg("currency", "EUR");
                params.principal = a.num("principal");
                params.n_coupons = static_cast<std::uint32_t>(a.num("coupons", 1));
                params.co2_threshold = a.num("co2_threshold", 1);
                for (const std::string& d : split_csv(a.arg("deadlines"))) {
                    params.payment_deadlines.push_back(std::stoull(d));
                }
                auto bond = make_green_bond(params);
                if (!bond.ok()) {
                    finish_step(i, false, bond.error().to_string());
                    return;
                }
                spec = bond.value();
            }
            Bytes docs = to_bytes(a.arg("docs", "prospectus and term sheet"));
            Bytes digest = crypto::digest_bytes(crypto::sha256(view_of(docs)));
            std::string spec_text = spec_to_sexpr(spec);
            Bytes intent = ContractManager::issue_intent(isin, spec_text, view_of(digest));
            RegisterInstrumentAction reg{isin, spec_text, digest, issuer,
                                         world_.sign_as(issuer, view_of(intent))};
            std::vector<TxnAction> actions{{cm_id, reg},
                                           {sec_id, RegisterResourceAction{isin, 0, issuer}}};
            world_.execute_atomic(actions, issuer, [this, i](bool committed, bool, const std::string& detail) {
                finish_step(i, committed, detail);
            });
        } else if (a.op == "list_instrument") {
            Encoder b;
            b.put_str(a.arg("isin"));
            b.put_str(a.arg("currency", "EUR"));
            b.put_str(a.arg("security_manager", first_of(ManagerKind::Resource)));
            b.put_str(a.arg("currency_manager"));
            world_.request(a.arg("trade_manager", first_of(ManagerKind::Trade)), "list_instrument", b.take(),
                           respond);
        } else if (a.op == "dvp") {
            // primary distribution: instrument units against cash, atomically
            std::vector<TxnAction> actions;
            TransferInstruction sec_leg{a.arg("seller"), a.arg("buyer"), a.arg("isin"), a.num("qty"), "dvp"};
            TransferAction sec_action{sec_leg.from, sec_leg.to, sec_leg.resource, sec_leg.amount, "dvp",
                                      sec_leg.from,
                                      world_.sign_as(sec_leg.from, view_of(ResourceManager::transfer_intent(sec_leg)))};
            TransferInstruction cur_leg{a.arg("buyer"), a.arg("seller"), a.arg("currency", "EUR"), a.num("cash"),
                                        "dvp"};
            TransferAction cur_action{cur_leg.from, cur_leg.to, cur_leg.resource, cur_leg.amount, "dvp",
                                      cur_leg.from,
                                      world_.sign_as(cur_leg.from, view_of(ResourceManager::transfer_intent(cur_leg)))};
            actions.push_back({a.arg("security_manager", "sec"), sec_action});
            actions.push_back({a.arg("currency_manager", "cur"), cur_action});
            world_.execute_atomic(actions, a.arg("seller"),
                                  [this, i](bool committed, bool, const std::string& detail) {
                                      finish_step(i, committed, detail);
                                  });
        } else if (a.op == "observe" || a.op == "issuer_notice" || a.op == "advance_time") {
            std::string cm_id;
            ContractManager* cm = find_contract(a.arg("isin"), &cm_id);
            if (!cm) {
                finish_step(i, false, "no live contract manager owns " + a.arg("isin"));
                return;
            }
            LifecycleEvent ev;
            ev.isin = a.arg("isin");
            if (a.op == "observe") {
                ev.kind = LifecycleEvent::Kind::ObservationMade;
                ev.key = a.arg("key");
                ev.value = a.num("value");
                ev.author = a.arg("agent");
            } else if (a.op == "issuer_notice") {
                ev.kind = LifecycleEvent::Kind::IssuerNotice;
                ev.tag = a.arg("tag");
                ev.author = a.arg("issuer", cm->instance(ev.isin) ? cm->instance(ev.isin)->issuer : "");
            } else {
                ev.kind = LifecycleEvent::Kind::TimeAdvanced;
                ev.new_time = static_cast<LogicalTime>(a.num("to"));
                ev.author = world_.topology().operator_id;
            }
            ev.signature = world_.sign_as(ev.author, view_of(ev.intent_bytes()));
            Encoder b;
            b.put_bytes(view_of(ev.encode()));
            world_.request(cm_id, "apply_lifecycle", b.take(), respond);
        } else if (a.op == "pay_coupon") {
            std::string cm_id;
            ContractManager* cm = find_contract(a.arg("isin"), &cm_id);
            if (!cm) {
                finish_step(i, false, "no live contract manager owns " + a.arg("isin"));
                return;
            }
            auto payment = cm->pending_payment(a.arg("isin"));
            if (!payment) {
                finish_step(i, false, "no payable obligation on " + a.arg("isin"));
                return;
            }
            const ResourceDecl* cur_decl = nullptr;
            for (const ResourceDecl& r : world_.topology().resources) {
                if (r.id == payment->resource) cur_decl = &r;
            }
            if (!cur_decl) {
                finish_step(i, false, "unknown payment currency " + payment->resource);
                return;
            }
            LifecycleEvent ev;
            ev.kind = LifecycleEvent::Kind::PaymentSettled;
            ev.isin = a.arg("isin");
            ev.transfers = payment->transfers;
            ev.txn_ref = "coupon@" + std::to_string(cm->version_of(ev.isin));
            ev.author = payment->from;
            ev.signature = world_.sign_as(ev.author, view_of(ev.intent_bytes()));

            std::vector<TxnAction> actions;
            for (const TransferRef& t : payment->transfers) {
                TransferInstruction instr{t.from, t.to, t.resource, t.amount, ev.txn_ref};
                actions.push_back({cur_decl->manager,
                                   TransferAction{t.from, t.to, t.resource, t.amount, ev.txn_ref, t.from,
                                                  world_.sign_as(t.from, view_of(ResourceManager::transfer_intent(
                                                                             instr)))}});
            }
            actions.push_back({cm_id, ApplyLifecycleAction{ev.isin, ev.encode()}});
            world_.execute_atomic(actions, payment->from,
                                  [this, i](bool committed, bool, const std::string& detail) {
                                      finish_step(i, committed, detail);
                                  });
        } else if (a.op == "submit_order") {
            TradeManager::OrderDraft draft;
            draft.side = a.arg("side") == "sell" ? Side::Sell : Side::Buy;
            draft.isin = a.arg("isin");
            draft.qty = a.num("qty");
            draft.limit_price = a.num("price");
            ContractManager* cm = find_contract(draft.isin);
            draft.pinned_state_version = a.has_num("pinned") ? static_cast<std::uint64_t>(a.num("pinned"))
                                         : cm              ? cm->version_of(draft.isin)
                                                           : 0;
            PartyId party = a.arg("party");
            Encoder b;
            b.put_str(party);
            b.put_u64(draft.side == Side::Buy ? 0 : 1);
            b.put_str(draft.isin);
            b.put_i64(draft.qty);
            b.put_i64(draft.limit_price);
            b.put_u64(draft.pinned_state_version);
            b.put_bytes(view_of(world_.sign_as(party, view_of(TradeManager::order_intent(draft, party)))));
            std::string label = a.arg("label");
            world_.request(a.arg("trade_manager", first_of(ManagerKind::Trade)), "submit_order", b.take(),
                           [this, i, label](const SimWorld::Response& r) {
                               if (r.ok && !label.empty()) {
                                   Decoder d(view_of(r.data));
                                   report_.order_ids[label] = d.get_str();
                               }
                               finish_step(i, r.ok, r.error);
                           });
        } else if (a.op == "cancel_order") {
            auto it = report_.order_ids.find(a.arg("label"));
            if (it == report_.order_ids.end()) {
                finish_step(i, false, "unknown order label " + a.arg("label"));
                return;
            }
            PartyId party = a.arg("party");
            Encoder b;
            b.put_str(it->second);
            b.put_str(party);
            b.put_bytes(view_of(world_.sign_as(party, view_of(TradeManager::cancel_intent(it->second, party)))));
            world_.request(a.arg("trade_manager", first_of(ManagerKind::Trade)), "cancel_order", b.take(), respond);
        } else if (a.op == "wait") {
            world_.scheduler().after(static_cast<std::uint64_t>(a.num("ms", 100)),
                                     [this, i] { finish_step(i, true, ""); });
        } else {
            finish_step(i, false, "unknown action op: " + a.op);
        }
    }

    SimWorld& world_;
    const Scenario& scenario_;
    RunReport& report_;
};

// ---------------------------------------------------------------------------
// Assertions
// ---------------------------------------------------------------------------

void evaluate_assertions(SimWorld& world, const Scenario& scenario, RunReport& report) {
    auto check = [&](bool ok, const std::string& what) {
        report.lines.push_back(std::string(ok ? "PASS " : "FAIL ") + what);
        if (!ok) report.failures.push_back(what);
    };
    auto find_contract = [&](const std::string& isin) -> ContractManager* {
        for (const std::string& id : world.topology().managers_of(ManagerKind::Contract)) {
            ContractManager* cm = world.contract_manager(id);
            if (cm && cm->instance(isin)) return cm;
        }
        return nullptr;
    };

    for (const ScenarioStep& a : scenario.assertions) {
        if (a.op == "balance") {
            ResourceManager* rm = world.resource_manager(a.arg("manager"));
            const ResourceAccount* acc = rm ? rm->account(a.arg("party"), a.arg("resource")) : nullptr;
            Amount available = acc ? acc->available : 0;
            bool ok = acc && available == a.num("available");
            if (ok && a.has_num("reserved")) ok = acc->reserved == a.num("reserved");
            check(ok, "balance " + a.arg("party") + "/" + a.arg("resource") + " == " +
                          std::to_string(a.num("available")) + " (got " + std::to_string(available) + ")");
        } else if (a.op == "total_supply") {
            ResourceManager* rm = world.resource_manager(a.arg("manager"));
            Amount got = rm ? rm->total_supply(a.arg("resource")) : -1;
            check(got == a.num("value"), "total_supply " + a.arg("resource") + " == " +
                                             std::to_string(a.num("value")) + " (got " + std::to_string(got) + ")");
        } else if (a.op == "contract_version") {
            ContractManager* cm = find_contract(a.arg("isin"));
            std::uint64_t got = cm ? cm->version_of(a.arg("isin")) : 0;
            check(cm && got == static_cast<std::uint64_t>(a.num("value")),
                  "contract_version " + a.arg("isin") + " == " + std::to_string(a.num("value")) + " (got " +
                      std::to_string(got) + ")");
        } else if (a.op == "contract_status") {
            ContractManager* cm = find_contract(a.arg("isin"));
            std::string got = "missing";
            if (cm) got = instrument_status_name(cm->instance(a.arg("isin"))->status);
            check(got == a.arg("value"), "contract_status " + a.arg("isin") + " == " + a.arg("value") + " (got " +
                                             got + ")");
        } else if (a.op == "binding") {
            ContractManager* cm = find_contract(a.arg("isin"));
            bool ok = false;
            std::int64_t got = 0;
            if (cm) {
                const auto& bindings = cm->instance(a.arg("isin"))->bindings;
                auto it = bindings.find(a.arg("key"));
                if (it != bindings.end()) {
                    got = it->second.value;
                    ok = got == a.num("value");
                }
            }
            check(ok, "binding " + a.arg("key") + " == " + std::to_string(a.num("value")) + " (got " +
                          std::to_string(got) + ")");
        } else if (a.op == "trade_count") {
            TradeManager* tm = world.trade_manager(a.arg("manager"));
            std::size_t got = tm ? tm->trades().size() : 0;
            check(tm && got == static_cast<std::size_t>(a.num("value")),
                  "trade_count == " + std::to_string(a.num("value")) + " (got " + std::to_string(got) + ")");
        } else if (a.op == "order_status") {
            auto it = report.order_ids.find(a.arg("label"));
            TradeManager* tm = world.trade_manager(a.arg("manager"));
            std::string got = "missing";
            if (it != report.order_ids.end() && tm && tm->order(it->second)) {
                got = order_status_name(tm->order(it->second)->status);
            }
            check(got == a.arg("value"),
                  "order_status " + a.arg("label") + " == " + a.arg("value") + " (got " + got + ")");
        } else if (a.op == "alert_count") {
            std::vector<RuleSpec> rules;
            rules.push_back({"self", RuleKind::SelfTrade, true, 1000, 2, 500, 1000, 4});
            rules.push_back({"wash", RuleKind::WashTrade, true, 1000, 2, 500, 1000, 4});
            std::size_t got = 0;
            for (const std::string& id : world.topology().managers_of(ManagerKind::Trade)) {
                TradeManager* tm = world.trade_manager(id);
                if (!tm) continue;
                TradeMonitor monitor(rules, "assert");
                for (const EventEnvelope& env : tm->ledger().entries()) monitor.on_envelope(env);
                got += monitor.alerts().size();
            }
            check(got == static_cast<std::size_t>(a.num("value")),
                  "alert_count == " + std::to_string(a.num("value")) + " (got " + std::to_string(got) + ")");
        } else if (a.op == "conservation") {
            ResourceManager* rm = world.resource_manager(a.arg("manager"));
            bool ok = rm != nullptr;
            if (rm) {
                for (const auto& [res, total] : rm->circulating_totals()) {
                    ok = ok && total == rm->total_supply(res);
                }
            }
            check(ok, "conservation holds on " + a.arg("manager"));
        } else {
            check(false, "unknown assertion: " + a.op);
        }
    }
}

} // namespace

RunReport run_scenario_sim(const Topology& topology, const Scenario& scenario,
                           const std::optional<FaultPlan>& faults, std::uint64_t seed) {
    RunReport report;
    SimWorld world(topology, seed);
    if (Status s = world.bootstrap(); !s.ok()) {
        report.failures.push_back("bootstrap: " + s.error().to_string());
        return report;
    }
    if (faults) world.apply_fault_plan(*faults);

    ScenarioDriver driver(world, scenario, report);
    driver.start();
    world.scheduler().run_until_idle(600'000); // ten simulated minutes

    evaluate_assertions(world, scenario, report);
    for (const std::string& v : world.audit(/*require_all_txns_resolved=*/!faults.has_value())) {
        report.failures.push_back("audit: " + v);
        report.lines.push_back("FAIL audit: " + v);
    }
    report.alerts = world.alerts_log();
    report.ledgers = world.ledger_files();

    // every persisted ledger must verify before the run counts as clean
    KeyTimelineFn keys = world.key_timeline_fn();
    for (const auto& [id, bytes] : report.ledgers) {
        VerifyReport rep = verify_chain_bytes(view_of(bytes), keys);
        std::string what = "verify-ledger " + id + " (" + std::to_string(rep.entries_checked) + " events)";
        report.lines.push_back(std::string(rep.ok ? "PASS " : "FAIL ") + what);
        if (!rep.ok) report.failures.push_back(what);
    }

    report.pass = report.failures.empty();
    return report;
}

Status write_run_outputs(const RunReport& report, const std::string& out_dir) {
    try {
        std::filesystem::create_directories(out_dir);
        for (const auto& [id, bytes] : report.ledgers) {
            write_file_bytes(out_dir + "/" + id + ".ledger", view_of(bytes));
        }
        std::string text;
        for (const std::string& line : report.lines) text += line + "\n";
        for (const std::string& alert : report.alerts) text += alert + "\n";
        text += report.pass ? "RESULT pass\n" : "RESULT fail\n";
        write_file_bytes(out_dir + "/report.txt", view_of(to_bytes(text)));
    } catch (const std::exception& e) {
        return Error{Errc::IoError, e.what()};
    }
    return ok_status();
}

} // namespace shardex::sim
