#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cffl/rng.hpp"

namespace cffl::coalition {

// Assignment of K users to coalitions 0..J; 0 means the user trains solo.
struct CoalitionPartition {
    std::vector<int> assignment;
    int max_coalitions = 3;  // J

    int num_users() const { return static_cast<int>(assignment.size()); }

    void validate() const {
        for (int c : assignment)
            if (c < 0 || c > max_coalitions)
                throw std::invalid_argument("CoalitionPartition: coalition id out of range");
    }

    std::vector<int> members_of(int j) const {
        std::vector<int> out;
        for (int k = 0; k < num_users(); ++k)
            if (assignment[k] == j) out.push_back(k);
        return out;
    }

    std::vector<int> sizes() const {
        std::vector<int> d(max_coalitions, 0);
        for (int c : assignment)
            if (c > 0) ++d[c - 1];
        return d;
    }

    // Member sets of every coalition with positive size; solo users appear as
    // singletons.
    std::vector<std::vector<int>> effective_coalitions() const {
        std::vector<std::vector<int>> out;
        for (int j = 1; j <= max_coalitions; ++j) {
            auto m = members_of(j);
            if (!m.empty()) out.push_back(std::move(m));
        }
        for (int k = 0; k < num_users(); ++k)
            if (assignment[k] == 0) out.push_back({k});
        return out;
    }
};

// Maps a partition to per-user estimation errors in [0,1].
class UtilityOracle {
public:
    virtual ~UtilityOracle() = default;
    virtual std::vector<double> errors(const CoalitionPartition& partition) const = 0;
};

// Deterministic stand-in for the FL pipeline: a user's error is one minus the
// mean pairwise channel correlation with its coalition peers, and solo users
// get a fixed error.
class SurrogateOracle : public UtilityOracle {
public:
    SurrogateOracle(std::vector<std::vector<double>> correlation, double solo_error = 0.5)
        : correlation_(std::move(correlation)), solo_error_(solo_error) {}

    static SurrogateOracle random(int num_users, std::uint64_t seed, double solo_error = 0.5) {
        Rng rng = Rng::stream(seed, 0x0c0a);
        std::vector<std::vector<double>> c(num_users, std::vector<double>(num_users, 1.0));
        for (int i = 0; i < num_users; ++i)
            for (int j = i + 1; j < num_users; ++j) c[i][j] = c[j][i] = rng.uniform();
        return SurrogateOracle(std::move(c), solo_error);
    }

    std::vector<double> errors(const CoalitionPartition& partition) const override {
        std::vector<double> e(partition.num_users(), solo_error_);
        for (const auto& members : partition.effective_coalitions()) {
            if (members.size() == 1) {
                e[members.front()] = solo_error_;
                continue;
            }
            for (int p : members) {
                double acc = 0.0;
                for (int q : members)
                    if (q != p) acc += correlation_.at(p).at(q);
                const double err = 1.0 - acc / static_cast<double>(members.size() - 1);
                e[p] = std::clamp(err, 0.0, 1.0);
            }
        }
        return e;
    }

    const std::vector<std::vector<double>>& correlation() const { return correlation_; }

private:
    std::vector<std::vector<double>> correlation_;
    double solo_error_;
};

struct GameConfig {
    bool size_based_a = true;  // A = |S_j|; otherwise fixed_a
    double fixed_a = 10.0;
    std::vector<double> volumes;  // |a_{j,p}| per user; empty means all 1

    double a_for(std::size_t coalition_size) const {
        return size_based_a ? static_cast<double>(coalition_size) : fixed_a;
    }
    double volume(int user) const {
        return volumes.empty() ? 1.0 : volumes.at(static_cast<std::size_t>(user));
    }
};

// U(S_j) = A - sum_p e_{j,p}
inline double coalition_utility(const std::vector<int>& members, const std::vector<double>& errors,
                                double a) {
    double acc = a;
    for (int p : members) {
        if (p < 0 || p >= static_cast<int>(errors.size()))
            throw std::invalid_argument("coalition_utility: missing member error");
        acc -= errors[static_cast<std::size_t>(p)];
    }
    return acc;
}

// u(a_{j,p}) = (|a_{j,p}| / sum_q |a_{j,q}|) * U(S_j)
inline double member_payoff(int user, const std::vector<int>& members, const GameConfig& cfg,
                            double coalition_u) {
    double total = 0.0;
    for (int q : members) total += cfg.volume(q);
    if (total <= 0.0) throw std::invalid_argument("member_payoff: zero total volume");
    return cfg.volume(user) / total * coalition_u;
}

// Per-user payoffs across the whole partition.
inline std::vector<double> all_payoffs(const CoalitionPartition& partition,
                                       const UtilityOracle& oracle, const GameConfig& cfg) {
    const auto errors = oracle.errors(partition);
    std::vector<double> u(partition.num_users(), 0.0);
    for (const auto& members : partition.effective_coalitions()) {
        const double cu = coalition_utility(members, errors, cfg.a_for(members.size()));
        for (int p : members) u[p] = member_payoff(p, members, cfg, cu);
    }
    return u;
}

// U = sum_j U(S_j)
inline double total_utility(const CoalitionPartition& partition, const UtilityOracle& oracle,
                            const GameConfig& cfg) {
    const auto errors = oracle.errors(partition);
    double acc = 0.0;
    for (const auto& members : partition.effective_coalitions())
        acc += coalition_utility(members, errors, cfg.a_for(members.size()));
    return acc;
}

// phi = sum of all member payoffs; equals U because shares within each
// coalition sum to one.
inline double potential(const CoalitionPartition& partition, const UtilityOracle& oracle,
                        const GameConfig& cfg) {
    const auto u = all_payoffs(partition, oracle, cfg);
    return std::accumulate(u.begin(), u.end(), 0.0);
}

namespace detail {

// Sum of the moving user's payoff plus the payoffs of the target coalition's
// pre-move members and the abandoned coalition's remaining members, under the
// given partition. This is both sides of the altruistic criterion.
inline double altruistic_value(const std::vector<double>& payoffs, int user,
                               const std::vector<int>& target_members,
                               const std::vector<int>& old_peers) {
    double acc = payoffs[static_cast<std::size_t>(user)];
    for (int k : target_members)
        if (k != user) acc += payoffs[static_cast<std::size_t>(k)];
    for (int k : old_peers)
        if (k != user) acc += payoffs[static_cast<std::size_t>(k)];
    return acc;
}

}  // namespace detail

// The altruistic criterion for user `user` moving to coalition id `target`:
// true iff the combined payoff of the user, the joined coalition and the
// abandoned coalition strictly increases.
inline bool altruistic_prefers(const CoalitionPartition& partition, int user, int target,
                               const UtilityOracle& oracle, const GameConfig& cfg,
                               double* delta_out = nullptr) {
    const int from = partition.assignment.at(static_cast<std::size_t>(user));
    if (target == from) return false;

    CoalitionPartition moved = partition;
    moved.assignment[static_cast<std::size_t>(user)] = target;

    const std::vector<int> target_members =
        target == 0 ? std::vector<int>{} : partition.members_of(target);
    std::vector<int> old_peers;
    if (from != 0)
        for (int k : partition.members_of(from))
            if (k != user) old_peers.push_back(k);

    const auto before = all_payoffs(partition, oracle, cfg);
    const auto after = all_payoffs(moved, oracle, cfg);
    const double lhs = detail::altruistic_value(after, user, target_members, old_peers);
    const double rhs = detail::altruistic_value(before, user, target_members, old_peers);
    if (delta_out) *delta_out = lhs - rhs;
    return lhs > rhs;
}

enum class SwitchOrder { round_robin, random };

struct SwitchTraceEntry {
    int step = 0;
    int user = 0;
    int from = 0;
    int to = 0;
    double phi = 0.0;
    double total_u = 0.0;
};

struct SwitchResult {
    CoalitionPartition partition;
    std::vector<SwitchTraceEntry> trace;
    bool converged = false;
};

// Repeatedly applies altruistically-improving unilateral switches until none
// exists. Strict preference plus the exact-potential property guarantee
// termination; max_steps is a safety cap.
inline SwitchResult switch_dynamics(const CoalitionPartition& initial, const UtilityOracle& oracle,
                                    const GameConfig& cfg,
                                    SwitchOrder order = SwitchOrder::round_robin,
                                    std::uint64_t seed = 0, std::size_t max_steps = 100000) {
    initial.validate();
    SwitchResult res;
    res.partition = initial;
    Rng rng = Rng::stream(seed, 0x5717c4);
    std::vector<int> user_order(initial.num_users());
    std::iota(user_order.begin(), user_order.end(), 0);

    std::size_t step = 0;
    bool any_switch = true;
    while (any_switch && step < max_steps) {
        any_switch = false;
        if (order == SwitchOrder::random) {
            for (std::size_t i = user_order.size(); i > 1; --i)
                std::swap(user_order[i - 1], user_order[rng.uniform_int(i)]);
        }
        for (int user : user_order) {
            const int from = res.partition.assignment[static_cast<std::size_t>(user)];
            for (int target = 0; target <= res.partition.max_coalitions; ++target) {
                if (target == from) continue;
                if (altruistic_prefers(res.partition, user, target, oracle, cfg)) {
                    res.partition.assignment[static_cast<std::size_t>(user)] = target;
                    ++step;
                    res.trace.push_back({static_cast<int>(step), user, from, target,
                                         potential(res.partition, oracle, cfg),
                                         total_utility(res.partition, oracle, cfg)});
                    any_switch = true;
                    break;
                }
            }
            if (any_switch) break;  // restart the pass after every applied switch
        }
    }
    res.converged = !any_switch;
    return res;
}

inline bool is_stable(const CoalitionPartition& partition, const UtilityOracle& oracle,
                      const GameConfig& cfg) {
    for (int user = 0; user < partition.num_users(); ++user)
        for (int target = 0; target <= partition.max_coalitions; ++target)
            if (altruistic_prefers(partition, user, target, oracle, cfg)) return false;
    return true;
}

struct StabilityReport {
    std::vector<CoalitionPartition> stable;
    CoalitionPartition phi_argmax;
    double phi_max = 0.0;
};

// Enumerates all (J+1)^K assignments, marking the stable ones and the
// potential maximizer.
inline StabilityReport brute_force_stability(const UtilityOracle& oracle, const GameConfig& cfg,
                                             int num_users, int max_coalitions) {
    const double space = std::pow(static_cast<double>(max_coalitions + 1), num_users);
    if (space > 1e6) throw std::invalid_argument("brute_force_stability: instance too large");

    StabilityReport report;
    report.phi_max = -std::numeric_limits<double>::infinity();
    CoalitionPartition p;
    p.assignment.assign(static_cast<std::size_t>(num_users), 0);
    p.max_coalitions = max_coalitions;

    const std::uint64_t total = static_cast<std::uint64_t>(space);
    for (std::uint64_t code = 0; code < total; ++code) {
        std::uint64_t c = code;
        for (int k = 0; k < num_users; ++k) {
            p.assignment[static_cast<std::size_t>(k)] = static_cast<int>(c % (max_coalitions + 1));
            c /= (max_coalitions + 1);
        }
        const double phi = potential(p, oracle, cfg);
        if (phi > report.phi_max) {
            report.phi_max = phi;
            report.phi_argmax = p;
        }
        if (is_stable(p, oracle, cfg)) report.stable.push_back(p);
    }
    return report;
}

}  // namespace cffl::coalition
