#pragma once

// Scene graph + rules -> segmented targets, in one call.

#include <string>
#include <utility>
#include <vector>

#include "deisam/grounding.hpp"
#include "deisam/logic.hpp"
#include "deisam/reasoner.hpp"
#include "deisam/scene.hpp"
#include "deisam/unifier.hpp"

namespace deisam {

struct ReasonResult {
    Program program;  // after unification
    UnificationReport unification;
    std::vector<double> values;  // final valuation over the graph atoms
    std::vector<TargetPrediction> predictions;
    std::vector<std::vector<std::size_t>> provenance;  // rule indices per prediction
    std::size_t num_atoms = 0;
    std::size_t num_conjs = 0;
};

/// Ground facts stated in the program are added to the scene facts with
/// value min(1, weight) and removed from the rule list.
inline std::pair<Program, SceneFacts> fold_program_facts(const Program& p, SceneFacts facts) {
    Program rules;
    for (const auto& r : p.rules) {
        if (r.body.empty() && r.head.ground()) {
            const std::size_t pos = facts.facts.add(r.head);
            const double v = std::min(1.0, std::max(0.0, r.weight));
            if (pos == facts.values.size())
                facts.values.push_back(v);
            else
                facts.values[pos] = std::max(facts.values[pos], v);
            continue;
        }
        rules.rules.push_back(r);
    }
    return {std::move(rules), std::move(facts)};
}

/// Reasons over prepared facts. With a store, rule vocabulary missing from
/// the scene is first replaced by its nearest scene term.
inline ReasonResult reason_facts(SceneFacts facts, const Program& p, const ReasonerConfig& cfg,
                                 const EmbeddingStore* store = nullptr, const UnifierOptions& uopts = {},
                                 const GroundingOptions& gopts = {}) {
    cfg.validate();
    auto [rules, all_facts] = fold_program_facts(p, std::move(facts));
    ReasonResult out;
    if (store) {
        auto [unified, report] = unify_program(rules, all_facts.facts, *store, uopts);
        rules = std::move(unified);
        out.unification = std::move(report);
    }
    const ReasoningGraph g = compile(rules, all_facts.facts, gopts);
    const auto v0 = initial_valuation(g, all_facts.values);
    const std::vector<double> w = [&] {
        std::vector<double> ws;
        for (const auto& r : rules.rules) ws.push_back(r.weight);
        return ws;
    }();
    const ForwardTape tape = forward_recorded(g, v0, w, cfg);
    out.predictions = extract_targets(g, tape.final_atoms(), all_facts.objects, cfg);
    for (const auto& pr : out.predictions)
        out.provenance.push_back(pr.fallback ? std::vector<std::size_t>{} : fired_rules(g, tape, pr.atom));
    out.values = tape.final_atoms();
    out.num_atoms = g.num_atoms();
    out.num_conjs = g.num_conjs();
    out.program = std::move(rules);
    return out;
}

inline ReasonResult reason(const SceneGraph& sg, const Program& p, const ReasonerConfig& cfg,
                           const EmbeddingStore* store = nullptr, const UnifierOptions& uopts = {},
                           const GroundingOptions& gopts = {}) {
    return reason_facts(scene_graph_to_facts(sg), p, cfg, store, uopts, gopts);
}

}  // namespace deisam
