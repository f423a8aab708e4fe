#pragma once

// Deictic Visual Genome style instances: prompt synthesis from scene graphs,
// the JSON record format, and synthetic scene graphs for tests and training.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/logic.hpp"
#include "deisam/rng.hpp"
#include "deisam/rulegen.hpp"
#include "deisam/scene.hpp"

namespace deisam {

struct AnswerObject {
    std::int64_t object_id = 0;
    Box box;
    std::vector<std::string> names;
    std::vector<std::string> synsets;
    std::vector<std::int64_t> merged_object_ids;

    friend bool operator==(const AnswerObject&, const AnswerObject&) = default;
};

struct DeicticInstance {
    std::string deictic_prompt;
    std::vector<AnswerObject> answers;
    std::int64_t image_id = 0;
    std::vector<Condition> structured;
    std::size_t complexity = 0;
    std::optional<std::int64_t> data_index;

    friend bool operator==(const DeicticInstance&, const DeicticInstance&) = default;
};

// ---------------------------------------------------------------------------
// Relation vocabulary and surface realization

struct RelationPhrase {
    const char* relation;  // as written in Visual Genome
    const char* verb;      // text between "that" and the object phrase
    bool article;          // "a"/"an" before the object name
};

inline const std::array<RelationPhrase, 19>& deivg_relations() {
    static const std::array<RelationPhrase, 19> table{{
        {"on", "is on", true},
        {"wears", "wears", true},
        {"has", "has", true},
        {"parked on", "is parked on", true},
        {"behind", "is behind", true},
        {"holding", "is holding", true},
        {"against", "is against", true},
        {"wearing", "is wearing", true},
        {"near", "is near", true},
        {"along", "is along", true},
        {"in front of", "is in front of", true},
        {"at", "is at", true},
        {"under", "is under", true},
        {"sitting on", "is sitting on", true},
        {"made of", "is made of", false},
        {"above", "is above", true},
        {"carrying", "is carrying", true},
        {"riding", "is riding", true},
        {"over", "is over", true},
    }};
    return table;
}

inline const RelationPhrase* find_relation(std::string_view relation) {
    const std::string key = canonical_predicate(relation);
    for (const auto& r : deivg_relations())
        if (canonical_predicate(r.relation) == key) return &r;
    return nullptr;
}

inline std::string with_article(const std::string& noun) {
    if (noun.empty()) return noun;
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(noun.front())));
    const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
    return (vowel ? "an " : "a ") + noun;
}

inline std::string condition_phrase(const Condition& c) {
    const RelationPhrase* r = find_relation(c.relation);
    if (!r) throw input_error("relation '" + c.relation + "' is not in the DeiVG vocabulary");
    return std::string(r->verb) + " " + (r->article ? with_article(c.attribute) : c.attribute);
}

enum class prompt_style {
    listing,   // "an object that A, and that B" / "an object that A, that B, and that C"
    sentence,  // "An object that A and that B" / "An object that A, that B and that C"
};

inline std::string render_deictic_prompt(const std::vector<Condition>& conds, prompt_style style = prompt_style::listing) {
    if (conds.empty()) throw input_error("a deictic prompt needs at least one condition");
    std::string out = (style == prompt_style::sentence ? "An object that " : "an object that ") + condition_phrase(conds[0]);
    for (std::size_t i = 1; i < conds.size(); ++i) {
        const bool last = i + 1 == conds.size();
        if (last)
            out += style == prompt_style::listing ? ", and that " : " and that ";
        else
            out += ", that ";
        out += condition_phrase(conds[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthesis

struct SynthesisOptions {
    prompt_style style = prompt_style::listing;
    bool strict = false;  // throw insufficient_candidates instead of returning fewer
};

struct SynthesisResult {
    std::vector<DeicticInstance> instances;
    std::size_t candidates = 0;
    bool insufficient = false;
};

namespace detail {

/// Objects satisfying every condition: for each (rel, attr) there is an
/// outgoing rel-relation to an object carrying the attribute as a name.
inline std::vector<std::size_t> satisfying_objects(const SceneGraph& sg, const std::vector<Condition>& conds) {
    std::map<std::int64_t, std::size_t> pos;
    for (std::size_t i = 0; i < sg.objects.size(); ++i) pos[sg.objects[i].object_id] = i;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < sg.objects.size(); ++i) {
        bool all = true;
        for (const auto& c : conds) {
            const std::string pred = canonical_predicate(c.relation);
            const std::string attr = canonical_constant(c.attribute);
            bool any = false;
            for (const auto& r : sg.relations) {
                if (r.subject_id != sg.objects[i].object_id || canonical_predicate(r.predicate) != pred) continue;
                auto it = pos.find(r.object_id);
                if (it == pos.end()) continue;
                for (const auto& n : sg.objects[it->second].names) any = any || canonical_constant(n) == attr;
            }
            if (!any) {
                all = false;
                break;
            }
        }
        if (all) out.push_back(i);
    }
    return out;
}

inline bool share_synset(const SceneGraph& sg, const std::vector<std::size_t>& objs) {
    if (objs.empty()) return false;
    std::set<std::string> common(sg.objects[objs[0]].synsets.begin(), sg.objects[objs[0]].synsets.end());
    for (std::size_t i = 1; i < objs.size(); ++i) {
        std::set<std::string> next;
        for (const auto& s : sg.objects[objs[i]].synsets)
            if (common.count(s)) next.insert(s);
        common = std::move(next);
    }
    return !common.empty();
}

inline void combinations(std::size_t n, std::size_t k, std::size_t start, std::vector<std::size_t>& cur,
                         std::vector<std::vector<std::size_t>>& out) {
    if (cur.size() == k) {
        out.push_back(cur);
        return;
    }
    for (std::size_t i = start; i < n; ++i) {
        cur.push_back(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop_back();
    }
}

}  // namespace detail

/// All unambiguous k-condition candidates of one scene, in a fixed order.
inline std::vector<DeicticInstance> deivg_candidates(const SceneGraph& sg, std::size_t k,
                                                     prompt_style style = prompt_style::listing) {
    std::map<std::int64_t, std::size_t> pos;
    for (std::size_t i = 0; i < sg.objects.size(); ++i) pos[sg.objects[i].object_id] = i;

    std::set<std::vector<Condition>> seen;
    std::vector<DeicticInstance> out;
    for (const auto& subject : sg.objects) {
        std::set<Condition> own;  // keyed on canonical forms
        std::vector<Condition> conds;
        for (const auto& r : sg.relations) {
            if (r.subject_id != subject.object_id) continue;
            const RelationPhrase* rp = find_relation(r.predicate);
            auto it = pos.find(r.object_id);
            if (!rp || it == pos.end()) continue;
            std::string name = sg.objects[it->second].names.front();
            std::transform(name.begin(), name.end(), name.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            Condition key{canonical_predicate(rp->relation), canonical_constant(name)};
            if (own.insert(key).second) conds.push_back({rp->relation, name});
        }
        if (conds.size() < k) continue;
        std::sort(conds.begin(), conds.end(), [](const Condition& a, const Condition& b) {
            return std::tie(a.relation, a.attribute) < std::tie(b.relation, b.attribute);
        });
        std::vector<std::vector<std::size_t>> combos;
        std::vector<std::size_t> cur;
        detail::combinations(conds.size(), k, 0, cur, combos);
        for (const auto& combo : combos) {
            std::vector<Condition> chosen;
            for (std::size_t i : combo) chosen.push_back(conds[i]);
            std::vector<Condition> key;
            for (const auto& c : chosen) key.push_back({canonical_predicate(c.relation), canonical_constant(c.attribute)});
            if (!seen.insert(key).second) continue;
            const auto answer_idx = detail::satisfying_objects(sg, chosen);
            if (!detail::share_synset(sg, answer_idx)) continue;
            DeicticInstance inst;
            inst.deictic_prompt = render_deictic_prompt(chosen, style);
            inst.image_id = sg.image_id;
            inst.structured = chosen;
            inst.complexity = chosen.size();
            for (std::size_t i : answer_idx) {
                const auto& o = sg.objects[i];
                inst.answers.push_back({o.object_id, o.box, o.names, o.synsets, {}});
            }
            out.push_back(std::move(inst));
        }
    }
    return out;
}

/// Uniform sample of n k-relation instances over all scenes.
inline SynthesisResult synthesize_deivg(const std::vector<SceneGraph>& scenes, std::size_t k, std::size_t n,
                                        std::uint64_t seed, const SynthesisOptions& opts = {}) {
    if (k < 1 || k > 3) throw input_error("DeiVG complexity k must be 1, 2 or 3");
    std::vector<DeicticInstance> all;
    for (const auto& sg : scenes) {
        auto c = deivg_candidates(sg, k, opts.style);
        all.insert(all.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
    SynthesisResult res;
    res.candidates = all.size();
    rng r(seed);
    r.shuffle(all);
    if (all.size() < n) {
        if (opts.strict) throw insufficient_candidates(n, all.size());
        res.insufficient = true;
    } else {
        all.resize(n);
    }
    res.instances = std::move(all);
    return res;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const DeicticInstance& inst) {
    json answers = json::array();
    for (const auto& a : inst.answers) {
        json ja{{"object_id", a.object_id}, {"names", a.names}, {"synsets", a.synsets}};
        if (!a.merged_object_ids.empty()) ja["merged_object_ids"] = a.merged_object_ids;
        answers.push_back(box_fields(std::move(ja), a.box));
    }
    json structured = json::array();
    for (const auto& c : inst.structured) structured.push_back({c.relation, c.attribute});
    json j{{"deictic_prompt", inst.deictic_prompt},
           {"answer", std::move(answers)},
           {"VG_image_id", inst.image_id},
           {"structured", std::move(structured)},
           {"complexity", inst.complexity}};
    if (inst.data_index) j["VG_data_index"] = *inst.data_index;
    return j;
}

inline DeicticInstance deictic_instance_from_json(const json& j, const std::string& path) {
    if (!j.is_object()) throw schema_error(path, "expected an object");
    DeicticInstance inst;
    const json& prompt = detail::require(j, "deictic_prompt", path);
    if (!prompt.is_string()) throw schema_error(path + "/deictic_prompt", "expected a string");
    inst.deictic_prompt = prompt.get<std::string>();
    inst.image_id = detail::require_int(j, "VG_image_id", path);
    if (auto it = j.find("VG_data_index"); it != j.end() && it->is_number_integer())
        inst.data_index = it->get<std::int64_t>();
    const json& answers = detail::require(j, "answer", path);
    if (!answers.is_array() || answers.empty()) throw schema_error(path + "/answer", "expected a non-empty array");
    for (std::size_t i = 0; i < answers.size(); ++i) {
        const std::string p = path + "/answer/" + std::to_string(i);
        SceneObject o = scene_object_from_json(answers[i], p);
        AnswerObject a{o.object_id, o.box, o.names, o.synsets, {}};
        if (auto it = answers[i].find("merged_object_ids"); it != answers[i].end()) {
            if (!it->is_array()) throw schema_error(p + "/merged_object_ids", "expected an array");
            a.merged_object_ids = it->get<std::vector<std::int64_t>>();
        }
        inst.answers.push_back(std::move(a));
    }
    if (auto it = j.find("structured"); it != j.end()) {
        if (!it->is_array()) throw schema_error(path + "/structured", "expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const json& c = (*it)[i];
            if (!c.is_array() || c.size() != 2 || !c[0].is_string() || !c[1].is_string())
                throw schema_error(path + "/structured/" + std::to_string(i), "expected [relation, attribute]");
            inst.structured.push_back({c[0].get<std::string>(), c[1].get<std::string>()});
        }
    }
    inst.complexity = inst.structured.size();
    return inst;
}

inline std::string dump_deivg(const std::vector<DeicticInstance>& instances) {
    json arr = json::array();
    for (const auto& i : instances) arr.push_back(to_json(i));
    return arr.dump(2) + "\n";
}

inline std::vector<DeicticInstance> parse_deivg(const json& j) {
    if (!j.is_array()) throw schema_error("/", "expected an array of instances");
    std::vector<DeicticInstance> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(deictic_instance_from_json(j[i], "/" + std::to_string(i)));
    return out;
}

inline void save_deivg(const std::vector<DeicticInstance>& instances, const std::string& path) {
    write_text_file(path, dump_deivg(instances));
}

inline std::vector<DeicticInstance> load_deivg(const std::string& path) { return parse_deivg(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Synthetic scene graphs

struct SceneGenOptions {
    std::size_t min_objects = 4;
    std::size_t max_objects = 10;
    std::size_t min_relations = 3;
    std::size_t max_relations = 14;
    double width = 640;
    double height = 480;
};

inline const std::vector<std::string>& synthetic_nouns() {
    static const std::vector<std::string> nouns{
        "person", "man", "woman", "boat", "umbrella", "table", "chair", "cup", "plate", "book",
        "paper", "sofa", "pillow", "dog", "cat", "car", "street", "tree", "window", "building",
        "shirt", "hat", "bench", "handle", "cooler", "surfboard", "wave", "hair", "helmet", "bike",
        "pole", "stop sign", "desk", "keyboard", "wall", "ground", "white line", "horse", "bag", "shoes"};
    return nouns;
}

/// Random Visual-Genome-like scene: named objects with synsets and boxes,
/// relations drawn from the DeiVG vocabulary.
inline SceneGraph random_scene_graph(rng& r, std::int64_t image_id, const SceneGenOptions& opts = {}) {
    SceneGraph sg;
    sg.image_id = image_id;
    const auto& nouns = synthetic_nouns();
    const std::size_t n = opts.min_objects + r.index(opts.max_objects - opts.min_objects + 1);
    for (std::size_t i = 0; i < n; ++i) {
        SceneObject o;
        o.object_id = image_id * 1000 + static_cast<std::int64_t>(i) + 1;
        const std::string& name = nouns[r.index(nouns.size())];
        o.names = {name};
        o.synsets = {canonical_constant(name) + ".n.01"};
        const double w = std::floor(20 + r.unit() * (opts.width / 3));
        const double h = std::floor(20 + r.unit() * (opts.height / 3));
        o.box = {std::floor(r.unit() * (opts.width - w)), std::floor(r.unit() * (opts.height - h)), w, h};
        sg.objects.push_back(std::move(o));
    }
    const auto& rels = deivg_relations();
    const std::size_t m = opts.min_relations + r.index(opts.max_relations - opts.min_relations + 1);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t s = r.index(n);
        std::size_t o = r.index(n - 1);
        if (o >= s) ++o;
        sg.relations.push_back({sg.objects[s].object_id, sg.objects[o].object_id, rels[r.index(rels.size())].relation,
                                std::nullopt});
    }
    return sg;
}

inline std::vector<SceneGraph> random_scene_graphs(std::size_t count, std::uint64_t seed, const SceneGenOptions& opts = {}) {
    rng r(seed);
    std::vector<SceneGraph> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(random_scene_graph(r, static_cast<std::int64_t>(i) + 1, opts));
    return out;
}

}  // namespace deisam
