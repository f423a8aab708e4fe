#pragma once

// Scene graphs (Visual Genome style) and their conversion to ground facts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/logic.hpp"

namespace deisam {

using json = nlohmann::json;

struct Box {
    double x = 0, y = 0, w = 0, h = 0;

    double area() const noexcept { return w * h; }
    bool valid() const noexcept { return w > 0 && h > 0 && x >= 0 && y >= 0; }

    friend bool operator==(const Box&, const Box&) = default;
};

struct SceneObject {
    std::int64_t object_id = 0;
    std::vector<std::string> names;
    std::vector<std::string> synsets;
    Box box;

    friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SceneRelation {
    std::int64_t subject_id = 0;
    std::int64_t object_id = 0;
    std::string predicate;
    std::optional<double> score;  // confidence from a generator; absent for ground truth

    friend bool operator==(const SceneRelation&, const SceneRelation&) = default;
};

struct SceneGraph {
    std::int64_t image_id = 0;
    std::vector<SceneObject> objects;
    std::vector<SceneRelation> relations;

    const SceneObject* find(std::int64_t id) const {
        for (const auto& o : objects)
            if (o.object_id == id) return &o;
        return nullptr;
    }

    friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

// ---------------------------------------------------------------------------
// JSON

inline json number_json(double v) {
    if (std::floor(v) == v && std::abs(v) < 9.0e15) return json(static_cast<std::int64_t>(v));
    return json(v);
}

inline json box_fields(json j, const Box& b) {
    j["x"] = number_json(b.x);
    j["y"] = number_json(b.y);
    j["w"] = number_json(b.w);
    j["h"] = number_json(b.h);
    return j;
}

namespace detail {

inline const json& require(const json& j, const char* key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) throw schema_error(path, std::string("missing key '") + key + "'");
    return *it;
}

inline double require_number(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number()) throw schema_error(path + "/" + key, "expected a number");
    return v.get<double>();
}

inline std::int64_t require_int(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number_integer()) throw schema_error(path + "/" + key, "expected an integer");
    return v.get<std::int64_t>();
}

inline std::vector<std::string> string_list(const json& j, const std::string& path) {
    if (j.is_string()) return {j.get<std::string>()};
    if (!j.is_array()) throw schema_error(path, "expected a string or list of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_string()) throw schema_error(path + "/" + std::to_string(i), "expected a string");
        out.push_back(j[i].get<std::string>());
    }
    return out;
}

inline std::int64_t endpoint_id(const json& rel, const char* flat_key, const char* nested_key, const std::string& path) {
    if (auto it = rel.find(flat_key); it != rel.end()) {
        if (!it->is_number_integer()) throw schema_error(path + "/" + flat_key, "expected an integer");
        return it->get<std::int64_t>();
    }
    if (auto it = rel.find(nested_key); it != rel.end() && it->is_object())
        return require_int(*it, "object_id", path + "/" + nested_key);
    throw schema_error(path, std::string("missing key '") + flat_key + "'");
}

}  // namespace detail

inline Box box_from_json(const json& j, const std::string& path) {
    Box b{detail::require_number(j, "x", path), detail::require_number(j, "y", path),
          detail::require_number(j, "w", path), detail::require_number(j, "h", path)};
    if (!b.valid()) throw schema_error(path, "invalid box (need w > 0, h > 0, x >= 0, y >= 0)");
    return b;
}

inline SceneObject scene_object_from_json(const json& j, const std::string& path) {
    if (!j.is_object()) throw schema_error(path, "expected an object");
    SceneObject o;
    o.object_id = detail::require_int(j, "object_id", path);
    if (auto it = j.find("names"); it != j.end())
        o.names = detail::string_list(*it, path + "/names");
    else if (auto it2 = j.find("name"); it2 != j.end())
        o.names = detail::string_list(*it2, path + "/name");
    else
        throw schema_error(path, "missing key 'names'");
    if (o.names.empty()) throw schema_error(path + "/names", "object has no names");
    if (auto it = j.find("synsets"); it != j.end()) o.synsets = detail::string_list(*it, path + "/synsets");
    o.box = box_from_json(j, path);
    return o;
}

/// Unknown keys are ignored so raw Visual Genome exports load unchanged.
inline SceneGraph scene_graph_from_json(const json& j, const std::string& path = "") {
    if (!j.is_object()) throw schema_error(path.empty() ? "/" : path, "expected a scene graph object");
    SceneGraph sg;
    if (auto it = j.find("image_id"); it != j.end() && it->is_number_integer())
        sg.image_id = it->get<std::int64_t>();
    const json& objs = detail::require(j, "objects", path);
    if (!objs.is_array()) throw schema_error(path + "/objects", "expected an array");
    std::unordered_set<std::int64_t> ids;
    for (std::size_t i = 0; i < objs.size(); ++i) {
        const std::string p = path + "/objects/" + std::to_string(i);
        sg.objects.push_back(scene_object_from_json(objs[i], p));
        if (!ids.insert(sg.objects.back().object_id).second)
            throw schema_error(p + "/object_id", "duplicate object_id " + std::to_string(sg.objects.back().object_id));
    }
    const json* rels = nullptr;
    if (auto it = j.find("relations"); it != j.end())
        rels = &*it;
    else if (auto it2 = j.find("relationships"); it2 != j.end())
        rels = &*it2;
    if (rels) {
        if (!rels->is_array()) throw schema_error(path + "/relations", "expected an array");
        for (std::size_t i = 0; i < rels->size(); ++i) {
            const json& r = (*rels)[i];
            const std::string p = path + "/relations/" + std::to_string(i);
            if (!r.is_object()) throw schema_error(p, "expected an object");
            SceneRelation rel;
            rel.subject_id = detail::endpoint_id(r, "subject_id", "subject", p);
            rel.object_id = detail::endpoint_id(r, "object_id", "object", p);
            const json& pred = detail::require(r, "predicate", p);
            if (!pred.is_string()) throw schema_error(p + "/predicate", "expected a string");
            rel.predicate = pred.get<std::string>();
            for (const char* key : {"score", "confidence"}) {
                if (auto it = r.find(key); it != r.end() && it->is_number()) {
                    rel.score = it->get<double>();
                    if (*rel.score < 0.0 || *rel.score > 1.0)
                        throw schema_error(p + "/" + key, "confidence must lie in [0,1]");
                }
            }
            sg.relations.push_back(std::move(rel));
        }
    }
    return sg;
}

inline json to_json(const SceneGraph& sg) {
    json j;
    j["image_id"] = sg.image_id;
    json objs = json::array();
    for (const auto& o : sg.objects) {
        json jo;
        jo["object_id"] = o.object_id;
        jo["names"] = o.names;
        jo["synsets"] = o.synsets;
        objs.push_back(box_fields(std::move(jo), o.box));
    }
    j["objects"] = std::move(objs);
    json rels = json::array();
    for (const auto& r : sg.relations) {
        json jr;
        jr["subject_id"] = r.subject_id;
        jr["predicate"] = r.predicate;
        jr["object_id"] = r.object_id;
        if (r.score) jr["score"] = *r.score;
        rels.push_back(std::move(jr));
    }
    j["relations"] = std::move(rels);
    return j;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw schema_error(path, e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw input_error("cannot write '" + path + "'");
    out << text;
}

/// A file holds either one scene graph or an array of them.
inline std::vector<SceneGraph> load_scene_graphs(const std::string& path) {
    json j = read_json_file(path);
    std::vector<SceneGraph> out;
    if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) out.push_back(scene_graph_from_json(j[i], "/" + std::to_string(i)));
    } else {
        out.push_back(scene_graph_from_json(j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fact sets

/// Ground atoms in insertion order with a position index.
class FactSet {
public:
    /// Adds a ground atom; returns its position (existing position on repeats).
    std::size_t add(Atom a) {
        if (!a.ground()) throw internal_error("FactSet accepts ground atoms only: " + a.str());
        auto it = index_.find(a);
        if (it != index_.end()) return it->second;
        const std::size_t pos = facts_.size();
        index_.emplace(a, pos);
        facts_.push_back(std::move(a));
        return pos;
    }

    std::optional<std::size_t> find(const Atom& a) const {
        auto it = index_.find(a);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(const Atom& a) const { return index_.count(a) > 0; }

    const std::vector<Atom>& facts() const noexcept { return facts_; }
    const Atom& operator[](std::size_t i) const { return facts_[i]; }
    std::size_t size() const noexcept { return facts_.size(); }
    bool empty() const noexcept { return facts_.empty(); }

    /// Constants that grounding may substitute for variables beyond the
    /// subject-position and objK constants (e.g. scene-graph source tags).
    void add_universe_constant(const std::string& c) {
        if (std::find(extra_universe_.begin(), extra_universe_.end(), c) == extra_universe_.end())
            extra_universe_.push_back(c);
    }
    const std::vector<std::string>& extra_universe() const noexcept { return extra_universe_; }

private:
    std::vector<Atom> facts_;
    std::unordered_map<Atom, std::size_t, AtomHash> index_;
    std::vector<std::string> extra_universe_;
};

inline std::string object_constant(std::size_t dense_index) { return "obj" + std::to_string(dense_index + 1); }

/// Scene object as seen by the reasoner: its constant plus the original record.
struct ObjectRef {
    std::string constant;
    std::int64_t object_id = 0;
    Box box;
    std::vector<std::string> names;
    std::vector<std::string> synsets;
};

struct SceneFacts {
    FactSet facts;
    std::vector<double> values;  // valuation, parallel to facts
    std::vector<ObjectRef> objects;

    const ObjectRef* object(const std::string& constant) const {
        for (const auto& o : objects)
            if (o.constant == constant) return &o;
        return nullptr;
    }
};

/// e(obj_s, obj_o) for every relation, then type(obj_i, name) for every
/// object name. Repeated facts keep the highest confidence.
inline SceneFacts scene_graph_to_facts(const SceneGraph& sg) {
    SceneFacts out;
    std::unordered_map<std::int64_t, std::size_t> dense;
    for (std::size_t i = 0; i < sg.objects.size(); ++i) {
        const auto& o = sg.objects[i];
        dense.emplace(o.object_id, i);
        out.objects.push_back({object_constant(i), o.object_id, o.box, o.names, o.synsets});
    }

    auto put = [&](Atom a, double v) {
        const std::size_t pos = out.facts.add(std::move(a));
        if (pos == out.values.size())
            out.values.push_back(v);
        else
            out.values[pos] = std::max(out.values[pos], v);
    };

    for (const auto& r : sg.relations) {
        auto s = dense.find(r.subject_id);
        auto o = dense.find(r.object_id);
        if (s == dense.end() || o == dense.end())
            throw dangling_reference("relation '" + r.predicate + "' references missing object " +
                                     std::to_string(s == dense.end() ? r.subject_id : r.object_id) +
                                     " in image " + std::to_string(sg.image_id));
        put(Atom::fact(canonical_predicate(r.predicate), {object_constant(s->second), object_constant(o->second)}),
            r.score.value_or(1.0));
    }
    for (std::size_t i = 0; i < sg.objects.size(); ++i)
        for (const auto& n : sg.objects[i].names)
            put(Atom::fact("type", {object_constant(i), canonical_constant(n)}), 1.0);
    return out;
}

}  // namespace deisam
