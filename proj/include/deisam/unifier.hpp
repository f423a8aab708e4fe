#pragma once

// Semantic unification: rule vocabulary that does not occur in the scene is
// rewritten to the most similar scene term under a text embedding.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deisam/error.hpp"
#include "deisam/grounding.hpp"
#include "deisam/logic.hpp"
#include "deisam/scene.hpp"

namespace deisam {

/// Lookup key: lowercase alphanumerics only, so "parked_on", "parked on" and
/// "Parked On" share one vector.
inline std::string embedding_key(std::string_view term) {
    std::string out;
    for (char c : term) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
    }
    return out;
}

class EmbeddingStore {
public:
    EmbeddingStore() = default;
    explicit EmbeddingStore(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return vectors_.size(); }

    void add(std::string_view term, std::vector<double> v) {
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_ || dim_ == 0)
            throw input_error("embedding for '" + std::string(term) + "' has dimension " + std::to_string(v.size()) +
                              ", expected " + std::to_string(dim_));
        vectors_[embedding_key(term)] = std::move(v);
    }

    const std::vector<double>* find(std::string_view term) const {
        auto it = vectors_.find(embedding_key(term));
        return it == vectors_.end() ? nullptr : &it->second;
    }

    bool contains(std::string_view term) const { return find(term) != nullptr; }

    const std::vector<double>& at(std::string_view term) const {
        if (const auto* v = find(term)) return *v;
        throw missing_embedding(std::string(term));
    }

    /// word2vec text format: "term v1 ... vd" per line; an optional
    /// "count dim" header line is skipped.
    static EmbeddingStore load(std::istream& in, const std::string& origin = "<stream>") {
        EmbeddingStore store;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::istringstream ls(line);
            std::string term;
            if (!(ls >> term)) continue;
            std::vector<double> v;
            double x;
            while (ls >> x) v.push_back(x);
            if (!ls.eof()) throw input_error(origin + ":" + std::to_string(line_no) + ": malformed vector entry");
            if (line_no == 1 && v.size() == 1 && std::all_of(term.begin(), term.end(), ::isdigit)) continue;
            if (v.empty()) throw input_error(origin + ":" + std::to_string(line_no) + ": term without vector");
            if (store.dim_ != 0 && v.size() != store.dim_)
                throw input_error(origin + ":" + std::to_string(line_no) + ": dimension " + std::to_string(v.size()) +
                                  " differs from " + std::to_string(store.dim_));
            store.add(term, std::move(v));
        }
        return store;
    }

    static EmbeddingStore load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw input_error("cannot open embedding file '" + path + "'");
        return load(in, path);
    }

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, std::vector<double>> vectors_;
};

enum class similarity { cosine, dot };

inline double similarity_score(const std::vector<double>& a, const std::vector<double>& b, similarity mode) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (mode == similarity::dot) return dot;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// argmax over `vocab` of the similarity to `x`; ties go to the
/// lexicographically smallest term.
inline std::pair<std::string, double> nearest_term(const std::string& x, const std::vector<std::string>& vocab,
                                                   const EmbeddingStore& store,
                                                   similarity mode = similarity::cosine) {
    if (vocab.empty()) throw input_error("nearest_term over an empty vocabulary");
    const auto& q = store.at(x);
    std::vector<std::string> sorted = vocab;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::pair<std::string, double> best{"", -std::numeric_limits<double>::infinity()};
    for (const auto& y : sorted) {
        const double s = similarity_score(q, store.at(y), mode);
        if (s > best.second) best = {y, s};
    }
    return best;
}

enum class constant_vocabulary {
    type_constants,  // second argument of type/2 facts
    all_constants,   // every non-object constant in the facts
};

struct UnifierOptions {
    similarity mode = similarity::cosine;
    constant_vocabulary constants = constant_vocabulary::type_constants;
    /// Never rewritten, in addition to type/2 and every predicate the program defines.
    std::set<std::string> structural_predicates{"target", "type", "leftof", "color"};
};

struct Substitution {
    std::string original;
    std::string replacement;
    double similarity = 0.0;
    bool predicate = false;

    friend bool operator==(const Substitution&, const Substitution&) = default;
};

struct UnificationReport {
    std::vector<Substitution> substitutions;
    std::vector<std::string> unresolved;
};

/// Scene vocabulary split into relation predicates (by arity) and constants.
struct SceneVocabulary {
    std::map<std::size_t, std::set<std::string>> predicates;
    std::set<std::string> constants;

    static SceneVocabulary from(const FactSet& facts, const Program& p, const UnifierOptions& opts) {
        SceneVocabulary v;
        const auto defined = p.intensional_predicates();
        for (const auto& f : facts.facts()) {
            if (f.predicate == "type" && f.arity() == 2) {
                v.constants.insert(f.args[1].name);
                continue;
            }
            if (!defined.count(f.predicate) && !opts.structural_predicates.count(f.predicate))
                v.predicates[f.arity()].insert(f.predicate);
            if (opts.constants == constant_vocabulary::all_constants)
                for (std::size_t i = 1; i < f.arity(); ++i)
                    if (!is_object_constant(f.args[i].name)) v.constants.insert(f.args[i].name);
        }
        return v;
    }
};

/// Rewrites each non-structural predicate and attribute constant absent from
/// the scene to its nearest scene term. Predicates only map to predicates of
/// the same arity, constants only to constants. Terms without an embedding
/// stay as they are and are listed in `unresolved`.
inline std::pair<Program, UnificationReport> unify_program(const Program& p, const FactSet& facts,
                                                           const EmbeddingStore& store,
                                                           const UnifierOptions& opts = {}) {
    const SceneVocabulary vocab = SceneVocabulary::from(facts, p, opts);
    const auto defined = p.intensional_predicates();
    UnificationReport report;
    std::map<std::string, std::string> pred_map, const_map;

    auto resolve = [&](const std::string& term, const std::set<std::string>& candidates, bool is_pred,
                       std::map<std::string, std::string>& memo) -> std::string {
        if (candidates.count(term)) return term;
        if (auto it = memo.find(term); it != memo.end()) return it->second;
        std::vector<std::string> usable;
        for (const auto& c : candidates)
            if (store.contains(c)) usable.push_back(c);
        if (!store.contains(term) || usable.empty()) {
            if (std::find(report.unresolved.begin(), report.unresolved.end(), term) == report.unresolved.end())
                report.unresolved.push_back(term);
            memo[term] = term;
            return term;
        }
        auto [best, sim] = nearest_term(term, usable, store, opts.mode);
        report.substitutions.push_back({term, best, sim, is_pred});
        memo[term] = best;
        return best;
    };

    const std::set<std::string> no_predicates;
    Program out = p;
    for (auto& r : out.rules) {
        for (auto& a : r.body) {
            const bool structural = defined.count(a.predicate) || opts.structural_predicates.count(a.predicate);
            if (!structural) {
                auto it = vocab.predicates.find(a.arity());
                a.predicate = resolve(a.predicate, it == vocab.predicates.end() ? no_predicates : it->second, true,
                                      pred_map);
            }
            if (defined.count(a.predicate)) continue;
            const bool type_atom = a.predicate == "type" && a.arity() == 2;
            for (std::size_t i = 1; i < a.arity(); ++i) {
                Term& t = a.args[i];
                if (!t.is_constant()) continue;
                if (!type_atom && opts.constants == constant_vocabulary::type_constants) continue;
                if (is_object_constant(t.name)) continue;
                t.name = resolve(t.name, vocab.constants, false, const_map);
            }
        }
    }
    return {std::move(out), std::move(report)};
}

}  // namespace deisam
