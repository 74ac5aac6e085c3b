#pragma once

#include <optional>

#include "shardex/sim/world.hpp"

namespace shardex::sim {

struct RunReport {
    bool pass = false;
    std::vector<std::string> lines;    // human-readable action/assertion log
    std::vector<std::string> failures; // empty when pass
    std::map<std::string, Bytes> ledgers;
    std::vector<std::string> alerts;   // operator alerts raised during the run
    std::map<std::string, std::string> order_ids; // scenario label -> order id
};

// Executes the scripted actions through the deterministic simulation, drains
// recovery traffic, then evaluates assertions, runs the cross-manager audit
// and verifies every ledger chain. Identical inputs give byte-identical
// ledgers.
RunReport run_scenario_sim(const Topology& topology, const Scenario& scenario,
                           const std::optional<FaultPlan>& faults, std::uint64_t seed);

// Writes each ledger under <out_dir>/<manager>.ledger plus a report.txt.
Status write_run_outputs(const RunReport& report, const std::string& out_dir);

} // namespace shardex::sim
