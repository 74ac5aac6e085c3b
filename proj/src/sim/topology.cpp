#include "shardex/sim/topology.hpp"

#include <fstream>
#include <random>
#include <json.hpp>
#include <sstream>

namespace shardex::sim {

using nlohmann::json;

const ManagerDecl* Topology::manager(const std::string& id) const {
    for (const ManagerDecl& m : managers) {
        if (m.id == id) return &m;
    }
    return nullptr;
}

std::vector<std::string> Topology::managers_of(ManagerKind kind) const {
    std::vector<std::string> out;
    for (const ManagerDecl& m : managers) {
        if (m.kind == kind) out.push_back(m.id);
    }
    return out;
}

Status Topology::validate() const {
    std::set<std::string> ids;
    bool have_identity = false;
    for (const ManagerDecl& m : managers) {
        if (!ids.insert(m.id).second) return Error{Errc::ConfigError, "duplicate manager id: " + m.id};
        if (m.kind == ManagerKind::Identity) have_identity = true;
    }
    if (!have_identity) return Error{Errc::ConfigError, "topology needs an identity manager"};
    if (coordinators == 0) return Error{Errc::ConfigError, "topology needs at least one coordinator"};
    bool op_found = false;
    for (const PartyDecl& p : parties) {
        if (p.id == operator_id) {
            op_found = true;
            if (!p.roles.count(Role::MarketOperator)) {
                return Error{Errc::ConfigError, "operator party must hold MarketOperator"};
            }
        }
        if (p.roles.empty()) return Error{Errc::ConfigError, "party with empty role set: " + p.id};
    }
    if (!op_found) return Error{Errc::ConfigError, "operator party missing from party list: " + operator_id};
    for (const ResourceDecl& r : resources) {
        const ManagerDecl* m = manager(r.manager);
        // every resource id maps to exactly one manager
        if (!m || m->kind != ManagerKind::Resource) {
            return Error{Errc::ConfigError, "resource " + r.id + " needs a resource manager"};
        }
    }
    for (const AccountDecl& a : accounts) {
        bool found = false;
        for (const ResourceDecl& r : resources) found = found || r.id == a.resource;
        if (!found) return Error{Errc::ConfigError, "account references unknown resource " + a.resource};
    }
    return ok_status();
}

namespace {

Expected<std::set<Role>> parse_roles(const json& arr) {
    std::set<Role> roles;
    for (const auto& r : arr) {
        auto role = role_from_name(r.get<std::string>());
        if (!role) return Error{Errc::ConfigError, "unknown role: " + r.get<std::string>()};
        roles.insert(*role);
    }
    return roles;
}

Expected<json> parse_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return Error{Errc::ConfigError, "invalid json"};
    return j;
}

} // namespace

Expected<Topology> parse_topology_json(const std::string& text) {
    auto parsed = parse_json(text);
    if (!parsed.ok()) return parsed.error();
    const json& j = parsed.value();
    Topology t;
    try {
        for (const auto& m : j.at("managers")) {
            ManagerDecl d;
            d.id = m.at("id").get<std::string>();
            std::string kind = m.at("kind").get<std::string>();
            if (kind == "identity") {
                d.kind = ManagerKind::Identity;
            } else if (kind == "resource") {
                d.kind = ManagerKind::Resource;
            } else if (kind == "contract") {
                d.kind = ManagerKind::Contract;
            } else if (kind == "trade") {
                d.kind = ManagerKind::Trade;
            } else {
                return Error{Errc::ConfigError, "unknown manager kind: " + kind};
            }
            t.managers.push_back(std::move(d));
        }
        t.coordinators = j.value("coordinators", 1u);
        t.operator_id = j.value("operator", "op");
        if (j.contains("timeouts_ms")) {
            t.t_prep_ms = j["timeouts_ms"].value("t_prep", t.t_prep_ms);
            t.t_resolve_ms = j["timeouts_ms"].value("t_resolve", t.t_resolve_ms);
        }
        for (const auto& p : j.at("parties")) {
            PartyDecl d;
            d.id = p.at("id").get<std::string>();
            d.legal_name = p.value("name", d.id);
            auto roles = parse_roles(p.at("roles"));
            if (!roles.ok()) return roles.error();
            d.roles = roles.value();
            t.parties.push_back(std::move(d));
        }
        for (const auto& r : j.value("resources", json::array())) {
            ResourceDecl d;
            d.id = r.at("id").get<std::string>();
            d.decimals = r.value("decimals", 0u);
            d.manager = r.at("manager").get<std::string>();
            d.issuer = r.at("issuer").get<std::string>();
            t.resources.push_back(std::move(d));
        }
        for (const auto& a : j.value("accounts", json::array())) {
            AccountDecl d;
            d.party = a.at("party").get<std::string>();
            d.resource = a.at("resource").get<std::string>();
            d.credit_limit = a.value("credit_limit", 0);
            d.opening_balance = a.value("opening_balance", 0);
            t.accounts.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        return Error{Errc::ConfigError, std::string("topology: ") + e.what()};
    }
    if (Status s = t.validate(); !s.ok()) return s.error();
    return t;
}

Expected<Scenario> parse_scenario_json(const std::string& text) {
    auto parsed = parse_json(text);
    if (!parsed.ok()) return parsed.error();
    const json& j = parsed.value();
    Scenario s;
    auto read_step = [](const json& a) -> Expected<ScenarioStep> {
        ScenarioStep step;
        for (const auto& [key, value] : a.items()) {
            if (key == "op" || key == "assert") {
                step.op = value.get<std::string>();
            } else if (value.is_string()) {
                step.args[key] = value.get<std::string>();
            } else if (value.is_number_integer()) {
                step.nums[key] = value.get<std::int64_t>();
            } else if (value.is_array()) {
                // role lists and similar: comma-joined
                std::string joined;
                for (const auto& item : value) {
                    if (!joined.empty()) joined += ",";
                    joined += item.get<std::string>();
                }
                step.args[key] = joined;
            } else {
                return Error{Errc::ConfigError, "unsupported value for key " + key};
            }
        }
        if (step.op.empty()) return Error{Errc::ConfigError, "step without op/assert"};
        return step;
    };
    try {
        s.name = j.value("name", "scenario");
        for (const auto& a : j.value("actions", json::array())) {
            auto step = read_step(a);
            if (!step.ok()) return step.error();
            s.actions.push_back(step.value());
        }
        for (const auto& a : j.value("assertions", json::array())) {
            auto step = read_step(a);
            if (!step.ok()) return step.error();
            s.assertions.push_back(step.value());
        }
    } catch (const json::exception& e) {
        return Error{Errc::ConfigError, std::string("scenario: ") + e.what()};
    }
    return s;
}

Expected<FaultPlan> parse_fault_plan_json(const std::string& text) {
    auto parsed = parse_json(text);
    if (!parsed.ok()) return parsed.error();
    const json& j = parsed.value();
    FaultPlan p;
    try {
        p.seed = j.value("seed", 0ull);
        for (const auto& f : j.value("faults", json::array())) {
            FaultEvent e;
            e.at_ms = f.at("at").get<std::uint64_t>();
            e.target = f.at("target").get<std::string>();
            std::string kind = f.at("kind").get<std::string>();
            if (kind == "crash") {
                e.kind = FaultKind::Crash;
            } else if (kind == "restart") {
                e.kind = FaultKind::Restart;
            } else if (kind == "delay") {
                e.kind = FaultKind::DelayMessages;
                e.span_ms = f.at("span_ms").get<std::uint64_t>();
            } else if (kind == "duplicate_next") {
                e.kind = FaultKind::DuplicateNext;
                e.count = f.value("count", 1u);
            } else if (kind == "reorder_window") {
                e.kind = FaultKind::ReorderWindow;
                e.count = f.value("k", 2u);
            } else {
                return Error{Errc::ConfigError, "unknown fault kind: " + kind};
            }
            p.faults.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        return Error{Errc::ConfigError, std::string("fault plan: ") + e.what()};
    }
    return p;
}

namespace {

Expected<std::string> slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) return Error{Errc::IoError, "cannot read " + path};
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

} // namespace

Expected<Topology> load_topology(const std::string& path) {
    auto text = slurp(path);
    if (!text.ok()) return text.error();
    return parse_topology_json(text.value());
}

Expected<Scenario> load_scenario(const std::string& path) {
    auto text = slurp(path);
    if (!text.ok()) return text.error();
    return parse_scenario_json(text.value());
}

Expected<FaultPlan> load_fault_plan(const std::string& path) {
    auto text = slurp(path);
    if (!text.ok()) return text.error();
    return parse_fault_plan_json(text.value());
}

crypto::Keypair derive_keys(std::uint64_t seed, const PartyId& party) {
    std::string tag = "shardex-key|" + std::to_string(seed) + "|" + party;
    return crypto::keypair_from_string_seed(tag);
}

FaultPlan random_fault_plan(std::uint64_t seed, const Topology& topology, std::uint64_t horizon_ms) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    FaultPlan plan;
    plan.seed = seed;

    std::vector<std::string> targets;
    for (const ManagerDecl& m : topology.managers) {
        if (m.kind != ManagerKind::Identity) targets.push_back(m.id);
    }
    for (std::uint32_t c = 0; c < topology.coordinators; c++) targets.push_back("coord-" + std::to_string(c));
    if (targets.empty() || horizon_ms < 100) return plan;

    std::uint32_t n = 1 + static_cast<std::uint32_t>(rng() % 3);
    for (std::uint32_t i = 0; i < n; i++) {
        const std::string& target = targets[rng() % targets.size()];
        std::uint64_t at = 10 + rng() % (horizon_ms - 50);
        switch (rng() % 4) {
            case 0: {
                FaultEvent crash{at, target, FaultKind::Crash, 0, 1};
                // always restart so every transaction can resolve before audit
                FaultEvent restart{at + 20 + rng() % (horizon_ms / 2), target, FaultKind::Restart, 0, 1};
                plan.faults.push_back(crash);
                plan.faults.push_back(restart);
                break;
            }
            case 1:
                plan.faults.push_back(FaultEvent{at, target, FaultKind::DelayMessages, 30 + rng() % 200, 1});
                break;
            case 2:
                plan.faults.push_back(
                    FaultEvent{at, target, FaultKind::DuplicateNext, 0, 1 + static_cast<std::uint32_t>(rng() % 3)});
                break;
            case 3:
                plan.faults.push_back(
                    FaultEvent{at, target, FaultKind::ReorderWindow, 0, 2 + static_cast<std::uint32_t>(rng() % 3)});
                break;
        }
    }
    return plan;
}

} // namespace shardex::sim
