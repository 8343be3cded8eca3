#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "panelmdp/agent.hpp"
#include "panelmdp/core.hpp"
#include "panelmdp/sim.hpp"

namespace panelmdp::harness {

enum class Task { ReOrg, SelectReOrg };

std::string task_name(Task task);
Task task_from_name(const std::string& name);

// Whole-experiment configuration. Loaded from a single JSON document whose
// fields are addressed by dotted path in error messages; unknown keys are
// hard errors. Task rules are enforced at validation: re_org disables the
// null action and requires K == rows*cols, select_reorg enables it and
// requires K > rows*cols.
struct ExperimentConfig {
    Task task = Task::ReOrg;
    std::uint64_t seed = 1;
    std::uint64_t train_episodes = 10000;
    std::uint64_t eval_episodes = 1000;
    std::string out_dir;
    core::PanelSpec panel;
    sim::SimulatorConfig sim;
    agent::AgentConfig agent;
    agent::RewardMode reward_mode = agent::RewardMode::Expected;
    std::uint64_t eval_period = 250;
    std::uint64_t eval_curve_episodes = 200;

    static ExperimentConfig defaults(Task task);
    static ExperimentConfig from_json(const nlohmann::json& doc);
    static ExperimentConfig load(const std::string& path);
    nlohmann::json to_json() const;

    // Applies derived fields (allow_null, epsilon horizon, sub-seeds) and
    // checks every invariant. Must be called after any mutation.
    void resolve();
};

}  // namespace panelmdp::harness
