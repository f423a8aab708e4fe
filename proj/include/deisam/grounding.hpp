#pragma once

// Grounding of rules over a scene's constants and construction of the
// bipartite forward reasoning graph (atom nodes <-> conjunction nodes).

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/logic.hpp"
#include "deisam/scene.hpp"

namespace deisam {

struct GroundRule {
    Atom head;
    std::vector<Atom> body;
    std::size_t source_rule_index = 0;

    friend bool operator==(const GroundRule&, const GroundRule&) = default;
    friend auto operator<=>(const GroundRule&, const GroundRule&) = default;
};

struct GroundingOptions {
    /// Upper bound on |universe|^|variables| for any single rule.
    double max_instantiations = 1e7;
};

inline bool is_object_constant(const std::string& c) {
    if (c.size() < 4 || c.compare(0, 3, "obj") != 0) return false;
    for (std::size_t i = 3; i < c.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(c[i]))) return false;
    return true;
}

/// Constants that may be substituted for variables: subject-position
/// constants, objK constants anywhere, and the fact set's extra universe.
/// Order is first occurrence, which keeps grounding deterministic.
inline std::vector<std::string> grounding_universe(const FactSet& facts) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto add = [&](const std::string& c) {
        if (seen.insert(c).second) out.push_back(c);
    };
    for (const auto& f : facts.facts()) {
        if (!f.args.empty()) add(f.args.front().name);
        for (std::size_t i = 1; i < f.args.size(); ++i)
            if (is_object_constant(f.args[i].name)) add(f.args[i].name);
    }
    for (const auto& c : facts.extra_universe()) add(c);
    return out;
}

namespace detail {

class grounder {
public:
    grounder(const Program& p, const FactSet& facts, const GroundingOptions& opts)
        : program_(p), facts_(facts), opts_(opts), universe_(grounding_universe(facts)),
          universe_set_(universe_.begin(), universe_.end()), intensional_(p.intensional_predicates()) {
        for (std::size_t i = 0; i < facts.size(); ++i) by_predicate_[facts[i].predicate].push_back(i);
    }

    std::vector<GroundRule> run() {
        std::vector<GroundRule> out;
        for (std::size_t k = 0; k < program_.rules.size(); ++k) {
            const Rule& r = program_.rules[k];
            if (r.is_fact()) continue;
            const auto vars = r.variables();
            const double combos = std::pow(static_cast<double>(universe_.size()), static_cast<double>(vars.size()));
            if (combos > opts_.max_instantiations)
                throw universe_too_large("rule " + std::to_string(k) + " ('" + render_rule(r) + "') has " +
                                         std::to_string(vars.size()) + " variables over " +
                                         std::to_string(universe_.size()) + " constants");
            // Extensional atoms first: they bind variables from facts cheaply.
            std::vector<const Atom*> order;
            for (const auto& b : r.body)
                if (!intensional_.count(b.predicate)) order.push_back(&b);
            for (const auto& b : r.body)
                if (intensional_.count(b.predicate)) order.push_back(&b);
            std::map<std::string, std::string> binding;
            extend(r, k, order, 0, binding, out);
        }
        return out;
    }

private:
    using bindings = std::map<std::string, std::string>;

    static Atom substitute(const Atom& a, const bindings& b) {
        Atom g = a;
        for (auto& t : g.args)
            if (t.is_variable()) t = Term::constant(b.at(t.name));
        return g;
    }

    void emit(const Rule& r, std::size_t k, const bindings& b, std::vector<GroundRule>& out) const {
        GroundRule g;
        g.head = substitute(r.head, b);
        for (const auto& a : r.body) g.body.push_back(substitute(a, b));
        g.source_rule_index = k;
        out.push_back(std::move(g));
    }

    void extend(const Rule& r, std::size_t k, const std::vector<const Atom*>& order, std::size_t i,
                bindings& b, std::vector<GroundRule>& out) const {
        if (i == order.size()) {
            emit(r, k, b, out);
            return;
        }
        const Atom& a = *order[i];
        if (!intensional_.count(a.predicate)) {
            auto it = by_predicate_.find(a.predicate);
            if (it == by_predicate_.end()) return;
            for (std::size_t fi : it->second) {
                const Atom& f = facts_[fi];
                if (f.arity() != a.arity()) continue;
                std::vector<std::string> bound_here;
                bool ok = true;
                for (std::size_t j = 0; j < a.arity() && ok; ++j) {
                    const Term& t = a.args[j];
                    const std::string& c = f.args[j].name;
                    if (t.is_constant()) {
                        ok = t.name == c;
                    } else if (auto bt = b.find(t.name); bt != b.end()) {
                        ok = bt->second == c;
                    } else if (universe_set_.count(c)) {
                        b.emplace(t.name, c);
                        bound_here.push_back(t.name);
                    } else {
                        ok = false;
                    }
                }
                if (ok) extend(r, k, order, i + 1, b, out);
                for (const auto& v : bound_here) b.erase(v);
            }
            return;
        }
        // Intensional atom: always supportable; enumerate its unbound variables.
        std::vector<std::string> free;
        for (const auto& t : a.args)
            if (t.is_variable() && !b.count(t.name) && std::find(free.begin(), free.end(), t.name) == free.end())
                free.push_back(t.name);
        enumerate(r, k, order, i, free, 0, b, out);
    }

    void enumerate(const Rule& r, std::size_t k, const std::vector<const Atom*>& order, std::size_t i,
                   const std::vector<std::string>& free, std::size_t v, bindings& b,
                   std::vector<GroundRule>& out) const {
        if (v == free.size()) {
            extend(r, k, order, i + 1, b, out);
            return;
        }
        for (const auto& c : universe_) {
            b[free[v]] = c;
            enumerate(r, k, order, i, free, v + 1, b, out);
        }
        b.erase(free[v]);
    }

    const Program& program_;
    const FactSet& facts_;
    GroundingOptions opts_;
    std::vector<std::string> universe_;
    std::set<std::string> universe_set_;
    std::set<std::string> intensional_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_predicate_;
};

}  // namespace detail

/// Every substitution of universe constants for rule variables under which
/// each body atom is a fact or has an intensional predicate. Bodiless rules
/// produce no ground rules; fold them into the facts instead.
inline std::vector<GroundRule> ground_program(const Program& p, const FactSet& facts,
                                              const GroundingOptions& opts = {}) {
    return detail::grounder(p, facts, opts).run();
}

// ---------------------------------------------------------------------------
// Forward reasoning graph

struct ConjNode {
    std::vector<std::size_t> body;  // atom node ids
    std::size_t head = 0;           // atom node id
    std::size_t rule_index = 0;
};

class ReasoningGraph {
public:
    const std::vector<Atom>& atoms() const noexcept { return atoms_; }
    const std::vector<ConjNode>& conjs() const noexcept { return conjs_; }
    std::size_t num_atoms() const noexcept { return atoms_.size(); }
    std::size_t num_conjs() const noexcept { return conjs_.size(); }
    /// Facts occupy atom ids [0, num_facts()) in fact-set order.
    std::size_t num_facts() const noexcept { return num_facts_; }
    std::size_t num_rules() const noexcept { return num_rules_; }

    std::optional<std::size_t> find(const Atom& a) const {
        auto it = index_.find(a);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Conjunction nodes whose head is atom `i`.
    const std::vector<std::size_t>& incoming(std::size_t i) const { return incoming_[i]; }

    bool defines(const std::string& pred) const { return intensional_.count(pred) > 0; }

    friend ReasoningGraph build_reasoning_graph(const Program&, const std::vector<GroundRule>&, const FactSet&);

private:
    std::size_t intern(const Atom& a) {
        auto [it, inserted] = index_.try_emplace(a, atoms_.size());
        if (inserted) {
            atoms_.push_back(a);
            incoming_.emplace_back();
        }
        return it->second;
    }

    std::vector<Atom> atoms_;
    std::vector<ConjNode> conjs_;
    std::unordered_map<Atom, std::size_t, AtomHash> index_;
    std::vector<std::vector<std::size_t>> incoming_;
    std::set<std::string> intensional_;
    std::size_t num_facts_ = 0;
    std::size_t num_rules_ = 0;
};

/// One conjunction node per ground rule; every fact gets an atom node.
inline ReasoningGraph build_reasoning_graph(const Program& p, const std::vector<GroundRule>& ground_rules,
                                            const FactSet& facts) {
    ReasoningGraph g;
    g.num_rules_ = p.rules.size();
    g.intensional_ = p.intensional_predicates();
    for (const auto& f : facts.facts()) g.intern(f);
    g.num_facts_ = g.atoms_.size();
    for (const auto& gr : ground_rules) {
        if (gr.source_rule_index >= g.num_rules_)
            throw internal_error("ground rule refers to rule " + std::to_string(gr.source_rule_index) +
                                 " of a " + std::to_string(g.num_rules_) + "-rule program");
        if (gr.body.empty()) throw internal_error("ground rule without body: " + gr.head.str());
        ConjNode c;
        c.rule_index = gr.source_rule_index;
        for (const auto& b : gr.body) c.body.push_back(g.intern(b));
        c.head = g.intern(gr.head);
        g.incoming_[c.head].push_back(g.conjs_.size());
        g.conjs_.push_back(std::move(c));
    }
    return g;
}

inline ReasoningGraph compile(const Program& p, const FactSet& facts, const GroundingOptions& opts = {}) {
    return build_reasoning_graph(p, ground_program(p, facts, opts), facts);
}

/// Initial valuation: fact values at their atom ids, zero elsewhere.
inline std::vector<double> initial_valuation(const ReasoningGraph& g, const std::vector<double>& fact_values) {
    if (fact_values.size() != g.num_facts())
        throw dimension_mismatch("fact valuation has " + std::to_string(fact_values.size()) + " entries, graph has " +
                                 std::to_string(g.num_facts()) + " facts");
    std::vector<double> v(g.num_atoms(), 0.0);
    std::copy(fact_values.begin(), fact_values.end(), v.begin());
    return v;
}

/// Debug dump; the layout is for inspection only.
inline nlohmann::json to_json(const ReasoningGraph& g) {
    nlohmann::json atoms = nlohmann::json::array();
    for (std::size_t i = 0; i < g.num_atoms(); ++i)
        atoms.push_back({{"id", i}, {"atom", g.atoms()[i].str()}, {"fact", i < g.num_facts()}});
    nlohmann::json conjs = nlohmann::json::array();
    for (std::size_t i = 0; i < g.num_conjs(); ++i) {
        const auto& c = g.conjs()[i];
        conjs.push_back({{"id", i}, {"body", c.body}, {"head", c.head}, {"rule", c.rule_index}});
    }
    return {{"atoms", std::move(atoms)}, {"conjunctions", std::move(conjs)}};
}

}  // namespace deisam
