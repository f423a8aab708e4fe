#pragma once

// Differentiable forward chaining by bi-directional message passing.
//
// Each round t = 1..T:
//   conj_i  <- softor(conj_i, prod_{j in body(i)} atom_j)
//   atom_k  <- min(1, softor(atom_k, { w_rule(i) * conj_i : i -> k }))
// with softor(x) = gamma * log sum exp(x / gamma).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "deisam/error.hpp"
#include "deisam/grounding.hpp"
#include "deisam/rng.hpp"
#include "deisam/scene.hpp"

namespace deisam {

struct ReasonerConfig {
    double gamma = 0.01;
    int steps = 2;
    double target_threshold = 0.2;
    double fallback_low = 0.1;
    double fallback_high = 0.4;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(gamma > 0.0)) throw input_error("reasoner gamma must be positive");
        if (steps < 1) throw input_error("reasoner steps must be >= 1");
        if (target_threshold < 0.0 || target_threshold > 1.0) throw input_error("target_threshold must lie in [0,1]");
        if (fallback_low < 0.0 || fallback_high > 1.0 || fallback_low > fallback_high)
            throw input_error("fallback score range must satisfy 0 <= low <= high <= 1");
    }
};

/// gamma * log(sum exp(x_i / gamma)), evaluated with a max shift.
inline double softor(std::span<const double> xs, double gamma) {
    if (xs.empty()) throw internal_error("softor of an empty list");
    const double m = *std::max_element(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) s += std::exp((x - m) / gamma);
    return m + gamma * std::log(s);
}

inline double softor(std::initializer_list<double> xs, double gamma) {
    return softor(std::span<const double>(xs.begin(), xs.size()), gamma);
}

/// Intermediate values of a forward pass, needed for reverse mode.
struct ForwardTape {
    const ReasoningGraph* graph = nullptr;
    std::vector<double> weights;
    double gamma = 0.0;
    std::vector<std::vector<double>> atoms;   // atoms[t], t = 0..T
    std::vector<std::vector<double>> conjs;   // conjs[t], t = 0..T (conjs[0] = 0)
    std::vector<std::vector<double>> unclamped;  // pre-clamp atom values, t = 1..T at index t-1

    bool recorded() const noexcept { return graph != nullptr && !atoms.empty(); }
    const std::vector<double>& final_atoms() const { return atoms.back(); }
    const std::vector<double>& final_conjs() const { return conjs.back(); }
};

namespace detail {

inline void check_inputs(const ReasoningGraph& g, std::span<const double> v0, std::span<const double> weights) {
    if (v0.size() != g.num_atoms())
        throw dimension_mismatch("valuation has " + std::to_string(v0.size()) + " entries, graph has " +
                                 std::to_string(g.num_atoms()) + " atoms");
    if (weights.size() != g.num_rules())
        throw dimension_mismatch("got " + std::to_string(weights.size()) + " rule weights for a " +
                                 std::to_string(g.num_rules()) + "-rule program");
    for (double v : v0)
        if (!(v >= 0.0 && v <= 1.0)) throw input_error("valuation entries must lie in [0,1]");
}

}  // namespace detail

inline ForwardTape forward_recorded(const ReasoningGraph& g, std::span<const double> v0,
                                    std::span<const double> weights, const ReasonerConfig& cfg) {
    cfg.validate();
    detail::check_inputs(g, v0, weights);

    ForwardTape tape;
    tape.graph = &g;
    tape.weights.assign(weights.begin(), weights.end());
    tape.gamma = cfg.gamma;
    tape.atoms.emplace_back(v0.begin(), v0.end());
    tape.conjs.emplace_back(g.num_conjs(), 0.0);

    std::vector<double> inputs;
    for (int t = 1; t <= cfg.steps; ++t) {
        const auto& a_prev = tape.atoms.back();
        const auto& c_prev = tape.conjs.back();

        std::vector<double> c(g.num_conjs());
        for (std::size_t i = 0; i < g.num_conjs(); ++i) {
            double prod = 1.0;
            for (std::size_t j : g.conjs()[i].body) prod *= a_prev[j];
            c[i] = softor({c_prev[i], prod}, cfg.gamma);
        }

        std::vector<double> u(g.num_atoms());
        std::vector<double> a(g.num_atoms());
        for (std::size_t k = 0; k < g.num_atoms(); ++k) {
            const auto& in = g.incoming(k);
            if (in.empty()) {
                u[k] = a_prev[k];
            } else {
                inputs.clear();
                inputs.push_back(a_prev[k]);
                for (std::size_t i : in) inputs.push_back(weights[g.conjs()[i].rule_index] * c[i]);
                u[k] = softor(inputs, cfg.gamma);
            }
            a[k] = std::min(u[k], 1.0);
        }
        tape.conjs.push_back(std::move(c));
        tape.unclamped.push_back(std::move(u));
        tape.atoms.push_back(std::move(a));
    }
    return tape;
}

/// Final atom valuation after cfg.steps rounds.
inline std::vector<double> forward(const ReasoningGraph& g, std::span<const double> v0,
                                   std::span<const double> weights, const ReasonerConfig& cfg) {
    return forward_recorded(g, v0, weights, cfg).final_atoms();
}

struct Gradients {
    std::vector<double> weights;  // dL/dw per rule
    std::vector<double> v0;       // dL/dv0 per atom
};

/// Reverse-mode derivatives of sum_k loss_grad[k] * atom_k^(T).
/// The clamp at 1 contributes derivative 1 below 1 and 0 once clamped.
inline Gradients backward(const ReasoningGraph& g, const ForwardTape& tape, std::span<const double> loss_grad) {
    if (!tape.recorded() || tape.graph != &g || tape.atoms.size() != tape.conjs.size() ||
        tape.unclamped.size() + 1 != tape.atoms.size())
        throw tape_missing("backward needs a tape recorded by forward_recorded on the same graph");
    if (loss_grad.size() != g.num_atoms())
        throw dimension_mismatch("loss gradient has " + std::to_string(loss_grad.size()) + " entries, graph has " +
                                 std::to_string(g.num_atoms()) + " atoms");

    const double gamma = tape.gamma;
    const auto& w = tape.weights;
    Gradients out;
    out.weights.assign(w.size(), 0.0);

    std::vector<double> ga(loss_grad.begin(), loss_grad.end());  // dL/d atoms^(t)
    std::vector<double> gc(g.num_conjs(), 0.0);                  // dL/d conjs^(t)
    const std::size_t T = tape.unclamped.size();

    for (std::size_t t = T; t >= 1; --t) {
        const auto& a_prev = tape.atoms[t - 1];
        const auto& c_prev = tape.conjs[t - 1];
        const auto& c = tape.conjs[t];
        const auto& u = tape.unclamped[t - 1];

        std::vector<double> ga_prev(g.num_atoms(), 0.0);

        // Atom update: u_k = softor(a_prev_k, w c_i ...), a_k = min(u_k, 1).
        for (std::size_t k = 0; k < g.num_atoms(); ++k) {
            const auto& in = g.incoming(k);
            if (in.empty()) {
                ga_prev[k] += ga[k];
                continue;
            }
            const double gu = u[k] < 1.0 ? ga[k] : 0.0;
            if (gu == 0.0) continue;
            ga_prev[k] += gu * std::exp((a_prev[k] - u[k]) / gamma);
            for (std::size_t i : in) {
                const std::size_t r = g.conjs()[i].rule_index;
                const double s = std::exp((w[r] * c[i] - u[k]) / gamma);
                gc[i] += gu * s * w[r];
                out.weights[r] += gu * s * c[i];
            }
        }

        // Conjunction update: c_i = softor(c_prev_i, prod_j a_prev_j).
        std::vector<double> gc_prev(g.num_conjs(), 0.0);
        for (std::size_t i = 0; i < g.num_conjs(); ++i) {
            if (gc[i] == 0.0) continue;
            const auto& body = g.conjs()[i].body;
            double prod = 1.0;
            for (std::size_t j : body) prod *= a_prev[j];
            gc_prev[i] = gc[i] * std::exp((c_prev[i] - c[i]) / gamma);
            const double gp = gc[i] * std::exp((prod - c[i]) / gamma);
            for (std::size_t m = 0; m < body.size(); ++m) {
                double others = 1.0;
                for (std::size_t n = 0; n < body.size(); ++n)
                    if (n != m) others *= a_prev[body[n]];
                ga_prev[body[m]] += gp * others;
            }
        }
        ga = std::move(ga_prev);
        gc = std::move(gc_prev);
    }
    out.v0 = std::move(ga);
    return out;
}

// ---------------------------------------------------------------------------
// Targets

struct TargetPrediction {
    std::string object_constant;
    std::int64_t object_id = 0;
    Box box;
    double score = 0.0;
    bool fallback = false;
    std::size_t atom = SIZE_MAX;  // atom node id of target(objK); SIZE_MAX for fallbacks
};

/// target(objK) atoms above the threshold, best first. When none clears the
/// threshold, one uniformly chosen scene object is returned with a score
/// drawn from the fallback range.
inline std::vector<TargetPrediction> extract_targets(const ReasoningGraph& g, std::span<const double> values,
                                                     const std::vector<ObjectRef>& objects,
                                                     const ReasonerConfig& cfg) {
    if (!g.defines("target")) throw no_target_atoms("program defines no 'target' predicate");
    if (values.size() != g.num_atoms())
        throw dimension_mismatch("valuation does not match the reasoning graph");

    std::vector<TargetPrediction> out;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.num_atoms(); ++i) {
        const Atom& a = g.atoms()[i];
        if (a.predicate != "target" || a.arity() != 1) continue;
        const ObjectRef* obj = nullptr;
        for (const auto& o : objects)
            if (o.constant == a.args[0].name) obj = &o;
        if (!obj) continue;
        best = std::max(best, values[i]);
        if (values[i] > cfg.target_threshold)
            out.push_back({obj->constant, obj->object_id, obj->box, values[i], false, i});
    }
    if (!(best > cfg.target_threshold)) {
        out.clear();
        if (objects.empty()) return out;
        rng r(cfg.rng_seed);
        const ObjectRef& obj = objects[r.index(objects.size())];
        out.push_back({obj.constant, obj.object_id, obj.box, r.uniform(cfg.fallback_low, cfg.fallback_high), true,
                       SIZE_MAX});
        return out;
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TargetPrediction& a, const TargetPrediction& b) { return a.score > b.score; });
    return out;
}

/// Rules with a conjunction node of value > `threshold` deriving `head`,
/// followed transitively through the body atoms that are not facts.
inline std::vector<std::size_t> fired_rules(const ReasoningGraph& g, const ForwardTape& tape, std::size_t head,
                                            double threshold = 0.5) {
    std::vector<std::size_t> rules;
    std::vector<char> seen(g.num_atoms(), 0);
    std::vector<std::size_t> stack{head};
    const auto& conj = tape.final_conjs();
    while (!stack.empty()) {
        const std::size_t a = stack.back();
        stack.pop_back();
        if (seen[a]) continue;
        seen[a] = 1;
        for (std::size_t i : g.incoming(a)) {
            if (conj[i] <= threshold) continue;
            const std::size_t r = g.conjs()[i].rule_index;
            if (std::find(rules.begin(), rules.end(), r) == rules.end()) rules.push_back(r);
            for (std::size_t b : g.conjs()[i].body)
                if (b >= g.num_facts()) stack.push_back(b);
        }
    }
    std::sort(rules.begin(), rules.end());
    return rules;
}

}  // namespace deisam
