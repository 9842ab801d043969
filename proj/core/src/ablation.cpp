// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/ablation.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "milcascade/logging.hpp"

namespace milcascade {

std::uint64_t AblationArm::hash() const {
    std::string key = dmin.canonical();
    if (with_lipn) key += "|" + lipn.canonical();
    return fnv1a64(key);
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    return derive_seed(seed, {fnv1a64("fold"), static_cast<std::uint64_t>(fold)});
}

namespace {

std::string format_ratio(double r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", r);
    return buf;
}

}  // namespace

std::vector<std::string> ablation_preset_names() { return {"table3", "table4", "order", "table5", "fig4"}; }

std::vector<AblationArm> ablation_preset(const std::string& name, const TrainConfig& dmin_base,
                                         const TrainConfig& lipn_base) {
    const auto arm = [&](std::string label, HeadKind head, bool self_distill, bool with_lipn) {
        AblationArm a;
        a.name = std::move(label);
        a.dmin = dmin_base;
        a.dmin.stage = TrainStage::kDmin;
        a.dmin.head = head;
        a.dmin.self_distill = self_distill;
        a.with_lipn = with_lipn;
        a.lipn = lipn_base;
        a.lipn.stage = TrainStage::kLipn;
        a.lipn.r = a.dmin.r;
        return a;
    };

    std::vector<AblationArm> grid;
    if (name == "table3") {
        grid.push_back(arm("fc", HeadKind::kFc, false, false));
        grid.push_back(arm("cka", HeadKind::kCka, false, false));
        grid.push_back(arm("cka+selfdist", HeadKind::kCka, true, false));
        grid.push_back(arm("cka+selfdist+lipn", HeadKind::kCka, true, true));
    } else if (name == "table4") {
        // Classifier comparison on the teacher branch alone.
        for (HeadKind k : {HeadKind::kFc, HeadKind::kMlp, HeadKind::kKaLite, HeadKind::kCka}) {
            grid.push_back(arm(to_string(k), k, false, false));
        }
    } else if (name == "order") {
        for (int order : {4, 8, 12, 16}) {
            AblationArm a = arm("cka-k" + std::to_string(order), HeadKind::kCka, false, false);
            a.dmin.order = order;
            grid.push_back(a);
        }
    } else if (name == "table5") {
        for (DistillManner m : {DistillManner::kAttention, DistillManner::kMask}) {
            AblationArm a = arm(std::string("lipn-") + to_string(m), HeadKind::kCka, true, true);
            a.lipn.manner = m;
            grid.push_back(a);
        }
    } else if (name == "fig4") {
        for (double r : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
            AblationArm a = arm("r" + format_ratio(r), HeadKind::kCka, true, true);
            a.dmin.r = r;
            a.lipn.r = r;
            grid.push_back(a);
        }
    } else {
        throw UserError("unknown ablation preset '" + name + "' (expected table3, table4, order, table5 or fig4)");
    }
    return grid;
}

namespace {

struct Task {
    std::vector<std::size_t> arms;  // arms sharing this DMIN configuration
    int fold = 0;
};

void run_task(const std::vector<BagPair>& bags, const std::vector<AblationArm>& grid, const Task& task,
              const AblationOptions& o, std::vector<std::vector<FoldMetrics>>& out) {
    const std::uint64_t seed = fold_seed(o.seed, task.fold);
    SplitSpec split = monte_carlo_split(bags, task.fold, o.seed, o.fractions);
    split.fold_index = task.fold;
    const auto test = select_bags(bags, split.test_ids.empty() ? split.valid_ids : split.test_ids);

    TrainConfig dcfg = grid[task.arms.front()].dmin;
    dcfg.seed = seed;
    const DminRun dmin = train_dmin(bags, split, dcfg, dmin_hyper_for(dcfg, o.dmin_hyper));

    for (std::size_t a : task.arms) {
        const AblationArm& arm = grid[a];
        FoldMetrics m = dmin.metrics;
        double sim = 0.0;
        if (arm.with_lipn) {
            TrainConfig lcfg = arm.lipn;
            lcfg.seed = seed;
            const LipnRun lipn =
                train_lipn(bags, split, dmin.params, dmin.hyper, lcfg, lipn_hyper_for(lcfg, o.lipn_hyper));
            std::vector<double> scores;
            std::vector<int> labels, predictions;
            double r = 0.0;
            for (const BagPair* bag : test) {
                const InferenceResult res = infer_hdmil(*bag, dmin.params, lipn.params, dmin.hyper, o.costs, o.inference);
                scores.push_back(res.score());
                labels.push_back(bag->label());
                predictions.push_back(res.predicted_label());
                r += res.r_realized;
                sim += res.simulated_time;
            }
            m.auc = compute_auc(scores, labels);
            m.acc = accuracy(predictions, labels);
            m.r_hat = r / static_cast<double>(test.size());
            m.agreement = lipn.metrics.agreement;
            m.loss = lipn.metrics.loss;
            m.train_seconds += lipn.metrics.train_seconds;
            m.eval_seconds += lipn.metrics.eval_seconds;
        } else {
            for (const BagPair* bag : test) sim += infer_dmin_only(*bag, dmin.params, dmin.hyper, o.costs).simulated_time;
        }
        m.sim_time = sim / static_cast<double>(test.size());
        out[a][static_cast<std::size_t>(task.fold)] = m;
    }
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<BagPair>& bags, const std::vector<AblationArm>& grid,
                                      const AblationOptions& o) {
    if (grid.empty()) throw UserError("ablation grid is empty");
    if (o.folds < 1) throw UserError("folds must be >= 1");
    for (const auto& arm : grid) {
        arm.dmin.validate();
        if (arm.with_lipn) arm.lipn.validate();
    }
    o.costs.validate();

    std::map<std::uint64_t, std::vector<std::size_t>> groups;
    std::vector<std::uint64_t> group_order;
    for (std::size_t a = 0; a < grid.size(); ++a) {
        const std::uint64_t key = grid[a].dmin.hash();
        if (groups.find(key) == groups.end()) group_order.push_back(key);
        groups[key].push_back(a);
    }
    std::vector<Task> tasks;
    for (std::uint64_t key : group_order) {
        for (int f = 0; f < o.folds; ++f) tasks.push_back({groups[key], f});
    }

    std::vector<std::vector<FoldMetrics>> results(grid.size(), std::vector<FoldMetrics>(static_cast<std::size_t>(o.folds)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const auto worker = [&] {
        for (std::size_t t = next++; t < tasks.size(); t = next++) {
            try {
                run_task(bags, grid, tasks[t], o, results);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = tasks.size();
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(o.jobs, static_cast<int>(tasks.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    std::vector<AblationRow> rows;
    for (std::size_t a = 0; a < grid.size(); ++a) {
        for (int f = 0; f < o.folds; ++f) {
            rows.push_back({grid[a].name, hex_hash(grid[a].hash()), results[a][static_cast<std::size_t>(f)]});
        }
    }
    return rows;
}

}  // namespace milcascade
