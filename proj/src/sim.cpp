#include "panelmdp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panelmdp/checkpoint.hpp"

namespace panelmdp::sim {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int count_nulls(const std::vector<core::StepRecord>& trajectory) {
    int nulls = 0;
    for (const core::StepRecord& r : trajectory) {
        if (r.action.is_null()) ++nulls;
    }
    return nulls;
}

void check_trajectory_matches_panel(const core::Panel& panel,
                                    const std::vector<core::StepRecord>& trajectory) {
    int placements = 0;
    for (const core::StepRecord& r : trajectory) {
        if (!r.action.is_null()) ++placements;
    }
    if (placements != panel.filled_count()) {
        throw ContractError("trajectory does not match panel fill count");
    }
}

}  // namespace

double ExaminationGrid::at(int m, int n) const {
    if (m < 1 || m > rows || n < 1 || n > cols) {
        throw ContractError("examination weight out of range");
    }
    return weights[static_cast<std::size_t>((m - 1) * cols + (n - 1))];
}

ExaminationGrid examination_weights(int rows, int cols, double rho, double mu) {
    if (rows < 1 || cols < 1) {
        throw ConfigError("examination grid dimensions must be positive");
    }
    if (!(rho > 0.0 && rho <= 1.0) || !(mu > 0.0 && mu <= 1.0)) {
        throw ConfigError("examination decay parameters must lie in (0, 1]");
    }
    ExaminationGrid grid;
    grid.rows = rows;
    grid.cols = cols;
    grid.rho = rho;
    grid.mu = mu;
    const double center = (cols + 1) / 2.0;
    grid.weights.reserve(static_cast<std::size_t>(rows * cols));
    for (int m = 1; m <= rows; ++m) {
        for (int n = 1; n <= cols; ++n) {
            grid.weights.push_back(std::pow(rho, m - 1) *
                                   std::pow(mu, std::abs(n - center)));
        }
    }
    return grid;
}

void SimulatorConfig::validate(int panel_rows, int panel_cols) const {
    if (catalog_size < 1) throw ConfigError("sim.catalog_size must be positive");
    if (dim < 1) throw ConfigError("sim.dim must be positive");
    if (K < 1) throw ConfigError("sim.K must be positive");
    if (K > catalog_size) throw ConfigError("sim.K cannot exceed sim.catalog_size");
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("sim.rho must lie in (0, 1]");
    if (!(mu > 0.0 && mu <= 1.0)) throw ConfigError("sim.mu must lie in (0, 1]");
    if (noise < 0.0) throw ConfigError("sim.noise must be nonnegative");
    if (panel_rows < 1 || panel_cols < 1) {
        throw ConfigError("panel dimensions must be positive");
    }
}

double affinity(const SyntheticUser& user, const core::Item& item) {
    if (user.preference.size() != item.embedding.size()) {
        throw ContractError("user/item dimension mismatch");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < user.preference.size(); ++i) {
        dot += user.preference[i] * item.embedding[i];
    }
    return dot;
}

double purchase_propensity(const SyntheticUser& user, const core::Item& item,
                           const core::SlotAction& slot, const ExaminationGrid& grid) {
    if (slot.is_null()) {
        throw ContractError("purchase propensity is undefined for the null action");
    }
    return grid.at(slot.m(), slot.n()) * sigmoid(affinity(user, item));
}

double panel_propensity_sum(const SyntheticUser& user, const core::Panel& panel,
                            const ExaminationGrid& grid) {
    double q_sum = 0.0;
    for (int m = 1; m <= panel.spec().rows; ++m) {
        for (int n = 1; n <= panel.spec().cols; ++n) {
            const auto& cell = panel.at(m, n);
            if (!cell.has_value()) continue;
            q_sum += purchase_propensity(user, *cell, core::SlotAction::slot(m, n), grid);
        }
    }
    return q_sum;
}

std::optional<core::SlotAction> sample_feedback(const SyntheticUser& user,
                                                const core::Panel& panel,
                                                const ExaminationGrid& grid,
                                                util::Rng& rng) {
    const double q_sum = panel_propensity_sum(user, panel, grid);
    const double u = rng.uniform() * (1.0 + q_sum);
    double cumulative = 0.0;
    for (int m = 1; m <= panel.spec().rows; ++m) {
        for (int n = 1; n <= panel.spec().cols; ++n) {
            const auto& cell = panel.at(m, n);
            if (!cell.has_value()) continue;
            cumulative +=
                purchase_propensity(user, *cell, core::SlotAction::slot(m, n), grid);
            if (u < cumulative) return core::SlotAction::slot(m, n);
        }
    }
    return std::nullopt;
}

double expected_episode_reward(const SyntheticUser& user, const core::Panel& panel,
                               const ExaminationGrid& grid,
                               const std::vector<core::StepRecord>& trajectory,
                               double null_penalty) {
    check_trajectory_matches_panel(panel, trajectory);
    const double q_sum = panel_propensity_sum(user, panel, grid);
    return q_sum / (1.0 + q_sum) - null_penalty * count_nulls(trajectory);
}

std::vector<double> expected_step_rewards(const SyntheticUser& user,
                                          const core::Panel& panel,
                                          const ExaminationGrid& grid,
                                          const std::vector<core::StepRecord>& trajectory,
                                          double null_penalty) {
    check_trajectory_matches_panel(panel, trajectory);
    const double q_sum = panel_propensity_sum(user, panel, grid);
    std::vector<double> rewards;
    rewards.reserve(trajectory.size());
    for (const core::StepRecord& record : trajectory) {
        if (record.action.is_null()) {
            rewards.push_back(-null_penalty);
            continue;
        }
        const core::Item& item =
            record.state.list->item_at_rank(record.state.t + 1);
        const double q = purchase_propensity(user, item, record.action, grid);
        rewards.push_back(q / (1.0 + q_sum));
    }
    return rewards;
}

Catalog generate_catalog(const SimulatorConfig& config, util::Rng& rng) {
    Catalog catalog;
    catalog.dim = config.dim;
    catalog.items.reserve(static_cast<std::size_t>(config.catalog_size));
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));
    for (int i = 0; i < config.catalog_size; ++i) {
        core::Item item;
        item.id = i;
        item.embedding.resize(static_cast<std::size_t>(config.dim));
        for (double& v : item.embedding) v = rng.normal() * scale;
        catalog.items.push_back(std::move(item));
    }
    return catalog;
}

SyntheticUser generate_user(const SimulatorConfig& config, util::Rng& rng) {
    SyntheticUser user;
    user.preference.resize(static_cast<std::size_t>(config.dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));
    for (double& v : user.preference) v = rng.normal() * scale;
    return user;
}

core::RankingList initial_ranking(const SyntheticUser& user, const Catalog& catalog,
                                  int K, double noise, util::Rng& rng) {
    if (K < 1 || K > static_cast<int>(catalog.items.size())) {
        throw ConfigError("ranking length K must lie in [1, catalog size]");
    }
    struct Scored {
        double score;
        const core::Item* item;
    };
    std::vector<Scored> scored;
    scored.reserve(catalog.items.size());
    for (const core::Item& item : catalog.items) {
        double s = affinity(user, item);
        if (noise > 0.0) s += rng.normal() * noise;
        scored.push_back({s, &item});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item->id < b.item->id;
    });
    std::vector<core::Item> top;
    top.reserve(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) top.push_back(*scored[static_cast<std::size_t>(i)].item);
    return core::RankingList(std::move(top));
}

void save_catalog(const Catalog& catalog, const std::string& stem) {
    nn::TensorStore store;
    const auto rows = catalog.items.size();
    const auto dim = static_cast<std::size_t>(catalog.dim);
    nn::Vec embeddings(rows * dim);
    nn::Vec ids(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        ids[i] = static_cast<double>(catalog.items[i].id);
        std::copy(catalog.items[i].embedding.begin(), catalog.items[i].embedding.end(),
                  embeddings.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    store.add("catalog.embeddings", {rows, dim}, std::move(embeddings));
    store.add("catalog.ids", {rows}, std::move(ids));
    store.extra["kind"] = "catalog";
    store.save(stem);
}

Catalog load_catalog(const std::string& stem) {
    const nn::TensorStore store = nn::TensorStore::load(stem);
    const auto& shape = store.shape("catalog.embeddings");
    const auto& embeddings = store.values("catalog.embeddings");
    const auto& ids = store.values("catalog.ids");
    Catalog catalog;
    catalog.dim = static_cast<int>(shape.at(1));
    catalog.items.resize(shape.at(0));
    for (std::size_t i = 0; i < shape.at(0); ++i) {
        catalog.items[i].id = static_cast<std::int64_t>(ids.at(i));
        catalog.items[i].embedding.assign(
            embeddings.begin() + static_cast<std::ptrdiff_t>(i * shape.at(1)),
            embeddings.begin() + static_cast<std::ptrdiff_t>((i + 1) * shape.at(1)));
    }
    return catalog;
}

void save_user(const SyntheticUser& user, const std::string& stem) {
    nn::TensorStore store;
    store.add("user.preference", {user.preference.size()}, user.preference);
    store.add("user.id", {1}, {static_cast<double>(user.id)});
    store.extra["kind"] = "user";
    store.save(stem);
}

SyntheticUser load_user(const std::string& stem) {
    const nn::TensorStore store = nn::TensorStore::load(stem);
    SyntheticUser user;
    user.preference = store.values("user.preference");
    user.id = static_cast<std::int64_t>(store.values("user.id").at(0));
    return user;
}

}  // namespace panelmdp::sim
