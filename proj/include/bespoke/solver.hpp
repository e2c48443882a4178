#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "bespoke/common.hpp"
#include "bespoke/mlp.hpp"

namespace bespoke {

// ---- Problem types ---------------------------------------------------------

struct ProblemInstance {
    std::vector<std::pair<NeuronId, std::vector<int>>> neurons;
    std::vector<int> candidates;   // sorted unique candidate constants
    int multiplier_budget = 16;    // M_total
    int horizon = 1;               // T_max, maximum cycles per neuron
};

struct ConstantSelection {
    std::map<int, int> counts;  // constant -> replication factor, nonzero entries only

    int total() const {
        int t = 0;
        for (const auto& [c, k] : counts) t += k;
        return t;
    }
    int count_of(int c) const {
        auto it = counts.find(c);
        return it == counts.end() ? 0 : it->second;
    }
    /// Sorted (ascending) constant vector with replicas expanded.
    std::vector<int> as_sorted_vector() const {
        std::vector<int> v;
        for (const auto& [c, k] : counts)
            for (int i = 0; i < k; ++i) v.push_back(c);
        return v;
    }
};

struct CycleAssignment {
    int weight_index = 0;  // i
    int constant = 0;      // c
    int count = 1;         // d_{n,t,i,c}
};

using NeuronCycles = std::vector<std::vector<CycleAssignment>>;

struct InferenceSchedule {
    std::map<NeuronId, NeuronCycles> per_neuron;
    std::map<NeuronId, int> neuron_latency;
    long long total_latency = 0;
};

enum class Optimality { ProvedOptimal, Heuristic, TimedOutBest };

inline std::string optimality_name(Optimality o) {
    switch (o) {
        case Optimality::ProvedOptimal: return "proved_optimal";
        case Optimality::Heuristic: return "heuristic";
        case Optimality::TimedOutBest: return "timed_out_best";
    }
    return "unknown";
}

struct SolveStats {
    std::uint64_t nodes_explored = 0;
    double wall_seconds = 0.0;
};

struct SolveOutcome {
    ConstantSelection selection;
    InferenceSchedule schedule;
    long long objective = 0;
    Optimality optimality = Optimality::Heuristic;
    SolveStats stats;
};

enum class SolveMode { Exact, Heuristic };

/// Search budget. Wall-clock limits make timeout points run-dependent, so
/// reproducible runs use the deterministic node limit instead.
struct SolveBudget {
    double time_limit_s = 60.0;          // <= 0 means unlimited
    std::uint64_t node_limit = 0;        // 0 means unlimited
    bool reproducible = false;           // ignore wall clock, rely on node_limit
};

inline void validate_instance(const ProblemInstance& inst) {
    if (inst.candidates.empty()) throw Error(ErrorCode::InvalidArgument, "candidate set is empty");
    if (!std::is_sorted(inst.candidates.begin(), inst.candidates.end()))
        throw Error(ErrorCode::InvalidArgument, "candidates must be sorted");
    if (std::adjacent_find(inst.candidates.begin(), inst.candidates.end()) != inst.candidates.end())
        throw Error(ErrorCode::InvalidArgument, "candidates must be unique");
    if (inst.multiplier_budget < 1) throw Error(ErrorCode::BudgetExceeded, "multiplier budget must be >= 1");
    if (inst.horizon < 1) throw Error(ErrorCode::InvalidArgument, "horizon must be >= 1");
}

/// Sum of |w| over the worst neuron: with one +1 and one -1 multiplier every
/// weight decomposes within that many cycles, so it is a feasibility horizon.
inline int feasibility_guard(const ProblemInstance& inst) {
    if (!std::binary_search(inst.candidates.begin(), inst.candidates.end(), 1) ||
        !std::binary_search(inst.candidates.begin(), inst.candidates.end(), -1))
        throw Error(ErrorCode::Infeasible, "feasibility guard requires +1 and -1 in the candidate set");
    long long worst = 0;
    for (const auto& [id, w] : inst.neurons) {
        long long s = 0;
        for (int x : w) s += std::abs(x);
        worst = std::max(worst, s);
    }
    return static_cast<int>(worst);
}

inline ProblemInstance instance_from_model(const QuantizedMlp& m) {
    ProblemInstance inst;
    for (int li = 0; li < static_cast<int>(m.layers.size()); ++li)
        for (int n = 0; n < m.layers[static_cast<std::size_t>(li)].out_dim(); ++n)
            inst.neurons.emplace_back(NeuronId{li, n}, m.layers[static_cast<std::size_t>(li)].weights[static_cast<std::size_t>(n)]);
    for (int c = m.weight_min(); c <= m.weight_max(); ++c) inst.candidates.push_back(c);
    inst.multiplier_budget = 64 / m.activation_bits;  // 16 at 4-bit, 12 at 5-bit
    inst.horizon = std::max(1, feasibility_guard(inst));
    return inst;
}

// ---- Weight decomposition enumeration ---------------------------------------

namespace detail {

/// One way to realize a weight value as a nonnegative combination of
/// constants: value = sum(constant * count).
struct DecompOption {
    std::vector<std::pair<int, int>> uses;  // (constant, count), constants ascending
    int slots = 0;                          // sum of counts
};

/// Minimum number of multiplier slots needed to realize `value` over
/// `constants` (unlimited replication), or nullopt when unreachable. BFS over
/// partial sums; any realizable multiset can be ordered so partial sums stay
/// within |value| + max|c| of zero, so the window below is lossless.
inline std::optional<int> min_slots(int value, const std::vector<int>& constants) {
    if (value == 0) return 0;
    int maxc = 0;
    for (int c : constants) maxc = std::max(maxc, std::abs(c));
    if (maxc == 0) return std::nullopt;
    const int window = std::abs(value) + maxc;
    const int size = 2 * window + 1;
    std::vector<int> dist(static_cast<std::size_t>(size), -1);
    auto idx = [&](int s) { return static_cast<std::size_t>(s + window); };
    std::deque<int> queue;
    dist[idx(0)] = 0;
    queue.push_back(0);
    while (!queue.empty()) {
        int s = queue.front();
        queue.pop_front();
        if (s == value) return dist[idx(s)];
        for (int c : constants) {
            if (c == 0) continue;
            int t = s + c;
            if (t < -window || t > window) continue;
            if (dist[idx(t)] >= 0) continue;
            dist[idx(t)] = dist[idx(s)] + 1;
            queue.push_back(t);
        }
    }
    return std::nullopt;
}

/// Enumerates the minimal decompositions of `value` over the given constants
/// with per-constant count caps. A decomposition is minimal iff no nonempty
/// sub-multiset sums to zero (otherwise dropping that sub-multiset yields a
/// pointwise-smaller decomposition of the same value); the DFS prunes any
/// partial assignment that already contains a zero-sum sub-multiset, which
/// also keeps the enumeration finite.
class DecompEnumerator {
public:
    DecompEnumerator(const std::vector<int>& constants, const std::vector<int>& caps, int total_cap)
        : constants_(constants), caps_(caps), total_cap_(total_cap) {
        suffix_pos_.assign(constants_.size() + 1, 0);
        suffix_neg_.assign(constants_.size() + 1, 0);
        for (int i = static_cast<int>(constants_.size()) - 1; i >= 0; --i) {
            long long pos = suffix_pos_[static_cast<std::size_t>(i) + 1];
            long long neg = suffix_neg_[static_cast<std::size_t>(i) + 1];
            long long contrib = static_cast<long long>(constants_[static_cast<std::size_t>(i)]) *
                                caps_[static_cast<std::size_t>(i)];
            if (contrib > 0) pos += contrib;
            if (contrib < 0) neg += contrib;
            suffix_pos_[static_cast<std::size_t>(i)] = pos;
            suffix_neg_[static_cast<std::size_t>(i)] = neg;
        }
    }

    std::vector<DecompOption> enumerate(int value, bool first_only = false) {
        options_.clear();
        value_ = value;
        first_only_ = first_only;
        current_.clear();
        subset_sums_.clear();
        dfs(0, 0, 0);
        std::sort(options_.begin(), options_.end(), [](const DecompOption& a, const DecompOption& b) {
            if (a.slots != b.slots) return a.slots < b.slots;
            return a.uses < b.uses;
        });
        return options_;
    }

private:
    // Adds one copy of `c` to the subset-sum set; returns false when a zero
    // sub-multiset appears (the partial assignment is no longer minimal).
    bool push_sums(int c, std::vector<int>& added) {
        added.clear();
        std::vector<int> fresh;
        for (int s : subset_sums_) {
            int t = s + c;
            if (t == 0) return false;
            if (!subset_sums_.count(t)) fresh.push_back(t);
        }
        if (!subset_sums_.count(c)) fresh.push_back(c);
        for (int t : fresh)
            if (subset_sums_.insert(t).second) added.push_back(t);
        return true;
    }

    void pop_sums(const std::vector<int>& added) {
        for (int t : added) subset_sums_.erase(t);
    }

    void dfs(std::size_t ci, long long sum, int slots) {
        if (first_only_ && !options_.empty()) return;
        if (ci == constants_.size()) {
            if (sum == value_) {
                DecompOption opt;
                opt.uses = current_;
                opt.slots = slots;
                options_.push_back(std::move(opt));
            }
            return;
        }
        // reachability: can the suffix still bridge sum -> value?
        long long need = value_ - sum;
        if (need > suffix_pos_[ci] || need < suffix_neg_[ci]) return;

        const int c = constants_[ci];
        const int cap = std::min(caps_[ci], total_cap_ - slots);
        // count = 0 branch
        dfs(ci + 1, sum, slots);
        if (c == 0 || cap <= 0) return;
        std::vector<std::vector<int>> added_stack;
        int taken = 0;
        for (int q = 1; q <= cap; ++q) {
            added_stack.emplace_back();
            if (!push_sums(c, added_stack.back())) {
                added_stack.pop_back();
                break;
            }
            ++taken;
            current_.emplace_back(c, q);
            dfs(ci + 1, sum + static_cast<long long>(c) * q, slots + q);
            current_.pop_back();
            if (first_only_ && !options_.empty()) break;
        }
        for (int i = taken - 1; i >= 0; --i) pop_sums(added_stack[static_cast<std::size_t>(i)]);
    }

    const std::vector<int>& constants_;
    const std::vector<int>& caps_;
    int total_cap_;
    std::vector<long long> suffix_pos_, suffix_neg_;

    int value_ = 0;
    bool first_only_ = false;
    std::vector<std::pair<int, int>> current_;
    std::unordered_set<int> subset_sums_;
    std::vector<DecompOption> options_;
};

}  // namespace detail

// ---- Exact per-neuron scheduler ---------------------------------------------

namespace detail {

/// Exact minimum-latency scheduler for one neuron under a fixed selection.
///
/// Reduction: the order of cycles does not matter, only the total number of
/// times N_c each constant is used. Totals are schedulable in l cycles iff
/// N_c <= l * k_c for every c (capacities are per constant, and a greedy
/// left-packed fill attains the bound), so the problem becomes: pick one
/// minimal decomposition per weight minimizing max_c ceil(N_c / k_c).
class NeuronScheduler {
public:
    explicit NeuronScheduler(const ConstantSelection& selection) {
        for (const auto& [c, k] : selection.counts) {
            if (k <= 0 || c == 0) continue;  // x*0 slots cannot contribute
            constants_.push_back(c);
            k_.push_back(k);
            total_k_ += k;
        }
    }

    bool empty_selection() const { return constants_.empty(); }

    struct Result {
        int latency = 0;
        // chosen decomposition totals per distinct value, matching values_
        std::vector<std::pair<int, std::vector<std::pair<DecompOption, int>>>> per_value;  // value -> [(option, times)]
    };

    /// Returns the provably minimal latency for the multiset of nonzero weight
    /// values given as value->multiplicity, or nullopt when no schedule exists
    /// within `horizon` cycles.
    std::optional<Result> min_latency(const std::map<int, int>& value_counts, int horizon) {
        if (value_counts.empty()) return Result{};
        if (constants_.empty()) return std::nullopt;

        std::ostringstream key;
        for (const auto& [v, m] : value_counts) key << v << 'x' << m << ';';
        key << '#' << horizon;
        auto hit = memo_.find(key.str());
        if (hit != memo_.end()) return hit->second;

        std::optional<Result> res = search(value_counts, horizon);
        memo_.emplace(key.str(), res);
        return res;
    }

    const std::vector<int>& constants() const { return constants_; }
    const std::vector<int>& replication() const { return k_; }
    int total_slots() const { return total_k_; }

    /// Minimum slots needed for one weight of this value over the selected
    /// constants (unlimited replication), nullopt when unreachable.
    std::optional<int> min_slots_for(int value) { return min_slots(value, constants_); }

private:
    std::optional<Result> search(const std::map<int, int>& value_counts, int horizon) {
        // Per-value minimum slot usage gives the latency lower bound.
        long long total_min_slots = 0;
        for (const auto& [v, m] : value_counts) {
            auto ms = min_slots(v, constants_);
            if (!ms) return std::nullopt;  // unreachable regardless of horizon
            total_min_slots += static_cast<long long>(*ms) * m;
        }
        int lb = static_cast<int>((total_min_slots + total_k_ - 1) / total_k_);
        lb = std::max(lb, 1);

        for (int l = lb; l <= horizon; ++l) {
            auto res = feasible_at(value_counts, l);
            if (res) {
                res->latency = l;
                return res;
            }
        }
        return std::nullopt;
    }

    std::optional<Result> feasible_at(const std::map<int, int>& value_counts, int l) {
        std::vector<int> caps(constants_.size());
        long long cap_total = 0;
        for (std::size_t i = 0; i < constants_.size(); ++i) {
            caps[i] = l * k_[i];
            cap_total += caps[i];
        }

        // Enumerate decomposition options per distinct value under the caps.
        struct ValueItem {
            int value;
            int mult;
            std::vector<DecompOption> options;
            long long min_slots;
        };
        std::vector<ValueItem> items;
        DecompEnumerator en(constants_, caps, static_cast<int>(std::min<long long>(cap_total, 1 << 20)));
        for (const auto& [v, m] : value_counts) {
            ValueItem it;
            it.value = v;
            it.mult = m;
            it.options = en.enumerate(v);
            if (it.options.empty()) return std::nullopt;
            it.min_slots = it.options.front().slots;  // sorted by slots
            items.push_back(std::move(it));
        }
        // Most constrained first: fewer options, then higher demand.
        std::stable_sort(items.begin(), items.end(), [](const ValueItem& a, const ValueItem& b) {
            if (a.options.size() != b.options.size()) return a.options.size() < b.options.size();
            if (a.mult != b.mult) return a.mult > b.mult;
            return a.value < b.value;
        });

        std::vector<long long> remaining_min(items.size() + 1, 0);
        for (int i = static_cast<int>(items.size()) - 1; i >= 0; --i)
            remaining_min[static_cast<std::size_t>(i)] =
                remaining_min[static_cast<std::size_t>(i) + 1] +
                items[static_cast<std::size_t>(i)].min_slots * items[static_cast<std::size_t>(i)].mult;

        std::vector<int> used(constants_.size(), 0);
        std::vector<std::vector<std::pair<DecompOption, int>>> chosen(items.size());
        failed_states_.clear();
        if (!assign_value(items, 0, used, caps, remaining_min, chosen)) return std::nullopt;

        Result res;
        res.per_value.resize(items.size());
        // report in ascending-value order for deterministic reconstruction
        std::vector<std::size_t> order(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return items[a].value < items[b].value; });
        res.per_value.clear();
        for (std::size_t i : order) res.per_value.emplace_back(items[i].value, chosen[i]);
        return res;
    }

    template <typename Items>
    bool assign_value(const Items& items, std::size_t vi, std::vector<int>& used, const std::vector<int>& caps,
                      const std::vector<long long>& remaining_min,
                      std::vector<std::vector<std::pair<DecompOption, int>>>& chosen) {
        if (vi == items.size()) return true;
        long long slack = 0;
        for (std::size_t i = 0; i < caps.size(); ++i) slack += caps[i] - used[i];
        if (slack < remaining_min[vi]) return false;
        if (!failed_states_.empty() || true) {
            std::ostringstream key;
            key << vi;
            for (int u : used) key << ',' << u;
            if (failed_states_.count(key.str())) return false;
            chosen[vi].clear();
            if (distribute(items, vi, 0, items[static_cast<std::size_t>(vi)].mult, used, caps, remaining_min, chosen))
                return true;
            if (failed_states_.size() < kMaxFailedStates) failed_states_.insert(key.str());
            return false;
        }
        return false;
    }

    template <typename Items>
    bool distribute(const Items& items, std::size_t vi, std::size_t oi, int left, std::vector<int>& used,
                    const std::vector<int>& caps, const std::vector<long long>& remaining_min,
                    std::vector<std::vector<std::pair<DecompOption, int>>>& chosen) {
        const auto& item = items[vi];
        if (left == 0) return assign_value(items, vi + 1, used, caps, remaining_min, chosen);
        if (oi == item.options.size()) return false;
        const DecompOption& opt = item.options[oi];
        // max copies of this option that fit remaining capacity
        int fit = left;
        for (const auto& [c, q] : opt.uses) {
            std::size_t ci = const_index(c);
            fit = std::min(fit, (caps[ci] - used[ci]) / q);
            if (fit == 0) break;
        }
        for (int take = fit; take >= 0; --take) {
            for (const auto& [c, q] : opt.uses) used[const_index(c)] += q * take;
            bool ok = false;
            if (take > 0) chosen[vi].emplace_back(opt, take);
            ok = distribute(items, vi, oi + 1, left - take, used, caps, remaining_min, chosen);
            if (!ok && take > 0) chosen[vi].pop_back();
            for (const auto& [c, q] : opt.uses) used[const_index(c)] -= q * take;
            if (ok) return true;
        }
        return false;
    }

    std::size_t const_index(int c) const {
        return static_cast<std::size_t>(std::lower_bound(constants_.begin(), constants_.end(), c) - constants_.begin());
    }

    static constexpr std::size_t kMaxFailedStates = 1 << 20;
    std::vector<int> constants_;  // ascending, nonzero, k > 0
    std::vector<int> k_;
    int total_k_ = 0;
    std::unordered_set<std::string> failed_states_;
    std::unordered_map<std::string, std::optional<Result>> memo_;
};

/// Expands a NeuronScheduler::Result into explicit per-cycle assignments for
/// the original weight vector. Occurrences of a value take options in the
/// deterministic order stored in the result; each constant's uses are packed
/// into cycles left to right.
inline NeuronCycles expand_schedule(const std::vector<int>& weights, const ConstantSelection& selection,
                                    const NeuronScheduler::Result& res) {
    if (res.latency == 0) return {};
    // weight index -> total uses per constant
    std::map<int, std::vector<std::pair<std::size_t, int>>> uses_by_constant;  // c -> [(weight idx, count)]
    std::map<int, std::vector<std::size_t>> indices_of_value;
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i] != 0) indices_of_value[weights[i]].push_back(i);

    for (const auto& [value, dist] : res.per_value) {
        auto& idxs = indices_of_value[value];
        std::size_t cursor = 0;
        for (const auto& [opt, times] : dist) {
            for (int t = 0; t < times; ++t) {
                std::size_t wi = idxs.at(cursor++);
                for (const auto& [c, q] : opt.uses) uses_by_constant[c].emplace_back(wi, q);
            }
        }
    }

    NeuronCycles cycles(static_cast<std::size_t>(res.latency));
    for (auto& [c, uses] : uses_by_constant) {
        std::sort(uses.begin(), uses.end());
        const int cap = selection.count_of(c);
        int cycle = 0, room = cap;
        for (const auto& [wi, count] : uses) {
            int left = count;
            while (left > 0) {
                if (room == 0) {
                    ++cycle;
                    room = cap;
                }
                int take = std::min(left, room);
                cycles.at(static_cast<std::size_t>(cycle))
                    .push_back(CycleAssignment{static_cast<int>(wi), c, take});
                left -= take;
                room -= take;
            }
        }
    }
    // canonical in-cycle order: ascending constant, then weight index
    for (auto& cyc : cycles)
        std::sort(cyc.begin(), cyc.end(), [](const CycleAssignment& a, const CycleAssignment& b) {
            if (a.constant != b.constant) return a.constant < b.constant;
            return a.weight_index < b.weight_index;
        });
    while (!cycles.empty() && cycles.back().empty()) cycles.pop_back();
    return cycles;
}

inline std::map<int, int> nonzero_value_counts(const std::vector<int>& weights) {
    std::map<int, int> counts;
    for (int w : weights)
        if (w != 0) ++counts[w];
    return counts;
}

}  // namespace detail

/// Provably minimal cycle count for a single neuron on the given multiplier
/// multiset, with a witness schedule. Throws Infeasible when no schedule
/// exists within `horizon` cycles.
inline std::pair<int, NeuronCycles> min_cycles_for_neuron(const std::vector<int>& weights,
                                                          const ConstantSelection& selection, int horizon) {
    if (horizon < 1) throw Error(ErrorCode::InvalidArgument, "horizon must be >= 1");
    auto counts = detail::nonzero_value_counts(weights);
    if (counts.empty()) return {0, {}};
    detail::NeuronScheduler sched(selection);
    if (sched.empty_selection())
        throw Error(ErrorCode::Infeasible, "selection has no usable (nonzero) multiplier slots");
    auto res = sched.min_latency(counts, horizon);
    if (!res)
        throw Error(ErrorCode::Infeasible,
                    "no schedule within " + std::to_string(horizon) + " cycles for the given selection");
    return {res->latency, detail::expand_schedule(weights, selection, *res)};
}

// ---- Solver -----------------------------------------------------------------

namespace detail {

struct ScheduleBuildResult {
    InferenceSchedule schedule;
    bool feasible = true;
};

/// Schedules every neuron under `selection`; `latency_cap` aborts early once
/// the accumulated latency reaches it (used for branch-and-bound pruning).
inline std::optional<InferenceSchedule> schedule_all(const ProblemInstance& inst, const ConstantSelection& selection,
                                                     long long latency_cap = -1) {
    detail::NeuronScheduler sched(selection);
    InferenceSchedule out;
    bool have_slots = !sched.empty_selection();
    for (const auto& [id, weights] : inst.neurons) {
        auto counts = detail::nonzero_value_counts(weights);
        if (counts.empty()) {
            out.per_neuron[id] = {};
            out.neuron_latency[id] = 0;
            continue;
        }
        if (!have_slots) return std::nullopt;
        auto res = sched.min_latency(counts, inst.horizon);
        if (!res) return std::nullopt;
        out.per_neuron[id] = detail::expand_schedule(weights, selection, *res);
        out.neuron_latency[id] = res->latency;
        out.total_latency += res->latency;
        if (latency_cap >= 0 && out.total_latency >= latency_cap) return std::nullopt;
    }
    return out;
}

/// Frequency-greedy constant selection: give slots to the most common weight
/// values, repair representability with +/-1, then spend leftover budget where
/// the per-neuron load bound improves most.
inline std::optional<ConstantSelection> heuristic_selection(const ProblemInstance& inst) {
    std::map<int, long long> freq;  // value -> occurrences over all neurons
    for (const auto& [id, w] : inst.neurons)
        for (int x : w)
            if (x != 0) ++freq[x];
    ConstantSelection sel;
    if (freq.empty()) return sel;

    auto is_candidate = [&](int c) {
        return std::binary_search(inst.candidates.begin(), inst.candidates.end(), c);
    };

    std::vector<int> ranked;  // candidates that appear as weights, by frequency
    for (const auto& [v, f] : freq)
        if (is_candidate(v)) ranked.push_back(v);
    std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
        if (freq[a] != freq[b]) return freq[a] > freq[b];
        if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
        return a < b;
    });

    const int budget = inst.multiplier_budget;
    for (int v : ranked) {
        if (sel.total() >= budget) break;
        sel.counts[v] = 1;
    }

    auto all_representable = [&](const ConstantSelection& s) {
        std::vector<int> consts;
        for (const auto& [c, k] : s.counts)
            if (c != 0 && k > 0) consts.push_back(c);
        for (const auto& [v, f] : freq)
            if (!detail::min_slots(v, consts)) return false;
        return true;
    };

    // representability repair: force +1 then -1 into the selection
    for (int fix : {1, -1}) {
        if (all_representable(sel)) break;
        if (!is_candidate(fix)) continue;
        if (sel.counts.count(fix)) continue;
        if (sel.total() >= budget) {
            // evict the lowest-ranked kept value
            for (auto it = ranked.rbegin(); it != ranked.rend(); ++it) {
                auto kept = sel.counts.find(*it);
                if (kept != sel.counts.end() && *it != 1 && *it != -1) {
                    sel.counts.erase(kept);
                    break;
                }
            }
        }
        if (sel.total() < budget) sel.counts[fix] = 1;
    }
    if (!all_representable(sel)) return std::nullopt;

    // spend leftover budget: minimize sum over neurons of the direct-load bound
    std::vector<std::map<int, int>> neuron_counts;
    for (const auto& [id, w] : inst.neurons) neuron_counts.push_back(detail::nonzero_value_counts(w));
    auto load_estimate = [&](const ConstantSelection& s) {
        long long total = 0;
        for (const auto& nc : neuron_counts) {
            long long worst = 0, slots = 0;
            for (const auto& [v, m] : nc) {
                int k = s.count_of(v);
                if (k > 0) worst = std::max(worst, static_cast<long long>((m + k - 1) / k));
                slots += m;  // >= 1 slot per nonzero weight
            }
            long long floor_bound = (slots + s.total() - 1) / std::max(1, s.total());
            total += std::max(worst, floor_bound);
        }
        return total;
    };

    std::vector<int> pool = ranked;
    for (int extra : {1, -1, 2, -2})
        if (is_candidate(extra) && std::find(pool.begin(), pool.end(), extra) == pool.end()) pool.push_back(extra);
    std::sort(pool.begin(), pool.end());
    while (sel.total() < budget && !pool.empty()) {
        long long best_score = -1;
        int best_c = pool.front();
        for (int c : pool) {
            ConstantSelection trial = sel;
            ++trial.counts[c];
            long long score = load_estimate(trial);
            if (best_score < 0 || score < best_score) {
                best_score = score;
                best_c = c;
            }
        }
        ++sel.counts[best_c];
    }
    return sel;
}

}  // namespace detail

/// Joint constant-selection and decomposition-scheduling solver.
///
/// Exact mode runs branch-and-bound over canonical constant multisets
/// (budget-saturated, lexicographically ascending; adding a multiplier never
/// hurts, so saturated selections suffice for optimality) with the exact
/// per-neuron scheduler evaluating each leaf. Heuristic mode runs the
/// frequency-greedy selection followed by the same exact per-neuron scheduler,
/// so its schedules are always valid even when its objective is not optimal.
inline SolveOutcome solve(const ProblemInstance& inst, SolveMode mode, const SolveBudget& budget = {}) {
    validate_instance(inst);
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    SolveOutcome best;
    bool have_incumbent = false;

    bool any_nonzero = false;
    for (const auto& [id, w] : inst.neurons)
        for (int x : w)
            if (x != 0) any_nonzero = true;
    if (!any_nonzero) {
        SolveOutcome out;
        for (const auto& [id, w] : inst.neurons) {
            out.schedule.per_neuron[id] = {};
            out.schedule.neuron_latency[id] = 0;
        }
        out.objective = 0;
        out.optimality = Optimality::ProvedOptimal;
        out.stats.wall_seconds = elapsed();
        return out;
    }

    // Heuristic pass seeds the incumbent in both modes.
    if (auto hsel = detail::heuristic_selection(inst)) {
        if (auto hsched = detail::schedule_all(inst, *hsel)) {
            best.selection = *hsel;
            best.schedule = std::move(*hsched);
            best.objective = best.schedule.total_latency;
            best.optimality = Optimality::Heuristic;
            have_incumbent = true;
        }
    }

    if (mode == SolveMode::Heuristic) {
        if (!have_incumbent)
            throw Error(ErrorCode::Infeasible, "heuristic found no feasible selection within the horizon");
        best.stats.wall_seconds = elapsed();
        return best;
    }

    // Exact: global latency lower bound from per-weight minimum slot usage
    // over the full candidate set.
    std::vector<long long> neuron_lb;
    long long global_lb = 0;
    for (const auto& [id, w] : inst.neurons) {
        long long min_slots_total = 0;
        bool reachable = true;
        for (int x : w) {
            if (x == 0) continue;
            auto ms = detail::min_slots(x, inst.candidates);
            if (!ms) {
                reachable = false;
                break;
            }
            min_slots_total += *ms;
        }
        if (!reachable) throw Error(ErrorCode::Infeasible, "weight unreachable over the candidate set");
        long long lb = (min_slots_total + inst.multiplier_budget - 1) / inst.multiplier_budget;
        neuron_lb.push_back(lb);
        global_lb += lb;
    }

    std::uint64_t nodes = 0;
    bool exhausted = true;
    auto over_budget = [&] {
        if (budget.node_limit > 0 && nodes >= budget.node_limit) return true;
        if (!budget.reproducible && budget.time_limit_s > 0 && elapsed() > budget.time_limit_s) return true;
        return false;
    };

    // remaining-neuron lower bounds for leaf-level early abort
    std::vector<long long> lb_suffix(neuron_lb.size() + 1, 0);
    for (int i = static_cast<int>(neuron_lb.size()) - 1; i >= 0; --i)
        lb_suffix[static_cast<std::size_t>(i)] = lb_suffix[static_cast<std::size_t>(i) + 1] + neuron_lb[static_cast<std::size_t>(i)];

    auto evaluate_leaf = [&](const ConstantSelection& sel) {
        ++nodes;
        detail::NeuronScheduler sched(sel);
        if (sched.empty_selection()) return;
        InferenceSchedule cand;
        long long total = 0;
        std::size_t ni = 0;
        for (const auto& [id, weights] : inst.neurons) {
            auto counts = detail::nonzero_value_counts(weights);
            if (counts.empty()) {
                cand.per_neuron[id] = {};
                cand.neuron_latency[id] = 0;
                ++ni;
                continue;
            }
            long long allowance = have_incumbent
                                      ? best.objective - total - lb_suffix[ni + 1]
                                      : static_cast<long long>(inst.horizon);
            if (allowance < 1) return;
            int cap = static_cast<int>(std::min<long long>(inst.horizon, allowance));
            auto res = sched.min_latency(counts, cap);
            if (!res) return;  // infeasible or cannot beat incumbent
            cand.per_neuron[id] = detail::expand_schedule(weights, sel, *res);
            cand.neuron_latency[id] = res->latency;
            total += res->latency;
            cand.total_latency = total;
            ++ni;
        }
        bool better = !have_incumbent || total < best.objective ||
                      (total == best.objective && sel.as_sorted_vector() < best.selection.as_sorted_vector());
        if (better) {
            best.selection = sel;
            best.schedule = std::move(cand);
            best.objective = total;
            have_incumbent = true;
        }
    };

    // canonical enumeration of budget-saturated multisets, lexicographically
    // ascending over the sorted constant vector
    std::vector<std::pair<int, int>> partial;  // (candidate, count)
    std::function<void(std::size_t, int)> enumerate = [&](std::size_t ci, int remaining) {
        if (over_budget() || (have_incumbent && best.objective <= global_lb)) {
            exhausted = false;
            return;
        }
        if (remaining == 0) {
            ConstantSelection sel;
            for (const auto& [c, k] : partial)
                if (k > 0) sel.counts[c] = k;
            evaluate_leaf(sel);
            return;
        }
        if (ci == inst.candidates.size()) return;
        ++nodes;
        const bool last = (ci + 1 == inst.candidates.size());
        for (int k = remaining; k >= 0; --k) {
            if (last && k != remaining) break;  // leftover budget must be spent
            partial.emplace_back(inst.candidates[ci], k);
            enumerate(ci + 1, remaining - k);
            partial.pop_back();
            if (over_budget() || (have_incumbent && best.objective <= global_lb)) {
                exhausted = false;
                return;
            }
        }
    };
    enumerate(0, inst.multiplier_budget);

    if (!have_incumbent) {
        if (!exhausted) throw Error(ErrorCode::TimeBudgetExceeded, "search budget exhausted before any incumbent");
        throw Error(ErrorCode::Infeasible, "no feasible selection/schedule within the horizon");
    }
    best.optimality = (exhausted || (have_incumbent && best.objective <= global_lb)) ? Optimality::ProvedOptimal
                                                                                     : Optimality::TimedOutBest;
    best.stats.nodes_explored = nodes;
    best.stats.wall_seconds = elapsed();
    return best;
}

// ---- Solution JSON ----------------------------------------------------------

inline nlohmann::json outcome_to_json(const SolveOutcome& out, bool include_wall_time = true) {
    nlohmann::json selection = nlohmann::json::object();
    for (const auto& [c, k] : out.selection.counts) selection[std::to_string(c)] = k;
    nlohmann::json schedule = nlohmann::json::object();
    for (const auto& [id, cycles] : out.schedule.per_neuron) {
        nlohmann::json jcycles = nlohmann::json::array();
        for (const auto& cyc : cycles) {
            nlohmann::json jc = nlohmann::json::array();
            for (const auto& a : cyc) jc.push_back({{"c", a.constant}, {"count", a.count}, {"i", a.weight_index}});
            jcycles.push_back(std::move(jc));
        }
        schedule[id.str()] = std::move(jcycles);
    }
    nlohmann::json stats = {{"nodes", out.stats.nodes_explored}};
    if (include_wall_time) stats["wall_time_s"] = out.stats.wall_seconds;
    return {{"objective", out.objective},
            {"optimality", optimality_name(out.optimality)},
            {"schedule", std::move(schedule)},
            {"selection", std::move(selection)},
            {"stats", std::move(stats)}};
}

inline SolveOutcome outcome_from_json(const nlohmann::json& doc) {
    SolveOutcome out;
    try {
        for (const auto& [key, val] : doc.at("selection").items()) out.selection.counts[std::stoi(key)] = val.get<int>();
        for (const auto& [key, val] : doc.at("schedule").items()) {
            NeuronId id = parse_neuron_id(key);
            NeuronCycles cycles;
            for (const auto& jc : val) {
                std::vector<CycleAssignment> cyc;
                for (const auto& ja : jc)
                    cyc.push_back(CycleAssignment{ja.at("i").get<int>(), ja.at("c").get<int>(), ja.at("count").get<int>()});
                cycles.push_back(std::move(cyc));
            }
            int latency = 0;
            for (std::size_t t = 0; t < cycles.size(); ++t)
                if (!cycles[t].empty()) latency = static_cast<int>(t) + 1;
            out.schedule.neuron_latency[id] = latency;
            out.schedule.total_latency += latency;
            out.schedule.per_neuron[id] = std::move(cycles);
        }
        out.objective = doc.at("objective").get<long long>();
        std::string opt = doc.at("optimality").get<std::string>();
        if (opt == "proved_optimal")
            out.optimality = Optimality::ProvedOptimal;
        else if (opt == "heuristic")
            out.optimality = Optimality::Heuristic;
        else
            out.optimality = Optimality::TimedOutBest;
        if (doc.contains("stats")) {
            out.stats.nodes_explored = doc["stats"].value("nodes", std::uint64_t{0});
            out.stats.wall_seconds = doc["stats"].value("wall_time_s", 0.0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("solution document: ") + e.what());
    }
    return out;
}

}  // namespace bespoke
