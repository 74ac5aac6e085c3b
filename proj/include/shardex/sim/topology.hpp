#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "shardex/errors.hpp"
#include "shardex/identity.hpp"
#include "shardex/resource.hpp"

namespace shardex::sim {

enum class ManagerKind : std::uint8_t { Identity, Resource, Contract, Trade };

struct ManagerDecl {
    std::string id;
    ManagerKind kind = ManagerKind::Resource;
};

struct PartyDecl {
    PartyId id;
    std::string legal_name;
    std::set<Role> roles;
};

struct ResourceDecl {
    ResourceId id;
    std::uint32_t decimals = 0;
    std::string manager; // owning resource manager (functional shard)
    PartyId issuer;
};

struct AccountDecl {
    PartyId party;
    ResourceId resource;
    Amount credit_limit = 0;
    Amount opening_balance = 0; // issued by the resource's issuer at bootstrap
};

// Declarative deployment: which managers exist, who the parties are, which
// resources live on which shard, and the transaction timeouts. ISINs join at
// issuance time and are owned by the contract manager named in the scenario.
struct Topology {
    std::vector<ManagerDecl> managers;
    std::uint32_t coordinators = 1;
    PartyId operator_id = "op";
    std::vector<PartyDecl> parties;
    std::vector<ResourceDecl> resources;
    std::vector<AccountDecl> accounts;
    std::uint64_t t_prep_ms = 2000;
    std::uint64_t t_resolve_ms = 10000;

    const ManagerDecl* manager(const std::string& id) const;
    std::vector<std::string> managers_of(ManagerKind kind) const;
    Status validate() const;
};

enum class FaultKind : std::uint8_t { Crash, Restart, DelayMessages, DuplicateNext, ReorderWindow };

struct FaultEvent {
    std::uint64_t at_ms = 0;
    std::string target; // manager or coordinator id
    FaultKind kind = FaultKind::Crash;
    std::uint64_t span_ms = 0; // DelayMessages
    std::uint32_t count = 1;   // ReorderWindow size / DuplicateNext repeats
};

struct FaultPlan {
    std::uint64_t seed = 0;
    std::vector<FaultEvent> faults;
};

// One scripted step: an action the driver submits, or an assertion evaluated
// after the run. Kept as a loose key-value bag mirroring the json schema.
struct ScenarioStep {
    std::string op;
    std::map<std::string, std::string> args;
    std::map<std::string, std::int64_t> nums;

    std::string arg(const std::string& key, const std::string& fallback = "") const {
        auto it = args.find(key);
        return it == args.end() ? fallback : it->second;
    }
    std::int64_t num(const std::string& key, std::int64_t fallback = 0) const {
        auto it = nums.find(key);
        return it == nums.end() ? fallback : it->second;
    }
    bool has_num(const std::string& key) const { return nums.count(key) > 0; }
};

struct Scenario {
    std::string name;
    std::vector<ScenarioStep> actions;
    std::vector<ScenarioStep> assertions;
};

Expected<Topology> parse_topology_json(const std::string& text);
Expected<Scenario> parse_scenario_json(const std::string& text);
Expected<FaultPlan> parse_fault_plan_json(const std::string& text);

Expected<Topology> load_topology(const std::string& path);
Expected<Scenario> load_scenario(const std::string& path);
Expected<FaultPlan> load_fault_plan(const std::string& path);

// Deterministic key provisioning for the harness: every party's keypair is
// derived from the run seed and the party id, so all processes of a run agree
// on key material without distribution machinery.
crypto::Keypair derive_keys(std::uint64_t seed, const PartyId& party);

// Randomized fault plans for soundness runs: crashes always pair with a later
// restart so every transaction can resolve before the final audit.
FaultPlan random_fault_plan(std::uint64_t seed, const Topology& topology, std::uint64_t horizon_ms);

} // namespace shardex::sim
