#pragma once

// Deictic CLEVR-List: scenes of 1-3 colored objects laid out left to right,
// prompts of the form "the p-th left-most object after <operation>", and
// hand-written programs that answer them.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/logic.hpp"
#include "deisam/rng.hpp"
#include "deisam/scene.hpp"

namespace deisam {

enum class list_op { delete_, sort };

inline std::string to_string(list_op op) { return op == list_op::delete_ ? "delete" : "sort"; }

inline list_op parse_list_op(const std::string& s) {
    if (s == "delete") return list_op::delete_;
    if (s == "sort") return list_op::sort;
    throw input_error("unknown list operation '" + s + "' (expected delete or sort)");
}

/// Sort order of the colors, smallest first.
inline const std::array<std::string, 4>& clevr_colors() {
    static const std::array<std::string, 4> c{"cyan", "gray", "red", "yellow"};
    return c;
}

inline std::size_t color_rank(const std::string& c) {
    const auto& cs = clevr_colors();
    auto it = std::find(cs.begin(), cs.end(), c);
    if (it == cs.end()) throw input_error("unknown CLEVR color '" + c + "'");
    return static_cast<std::size_t>(it - cs.begin());
}

struct ClevrObject {
    std::string color;
    std::string shape;
    std::string material;
    Box box;

    friend bool operator==(const ClevrObject&, const ClevrObject&) = default;
};

/// Objects are stored left to right.
struct ClevrScene {
    std::vector<ClevrObject> objects;

    friend bool operator==(const ClevrScene&, const ClevrScene&) = default;
};

struct ClevrInstance {
    ClevrScene scene;
    list_op op = list_op::delete_;
    std::size_t position = 1;  // 1-based position in the resulting list
    std::string color;         // deleted color, empty for sort
    std::string prompt;
    std::size_t answer = 0;    // index into scene.objects

    friend bool operator==(const ClevrInstance&, const ClevrInstance&) = default;
};

inline std::string ordinal(std::size_t p) {
    switch (p) {
        case 1: return "first";
        case 2: return "second";
        case 3: return "third";
        default: return std::to_string(p) + "th";
    }
}

inline std::string clevr_prompt(list_op op, std::size_t position, const std::string& color) {
    const std::string head = "The " + ordinal(position) + " left-most object after ";
    if (op == list_op::delete_) return head + "deleting a " + color + " object?";
    return head + "sorting the objects by color?";
}

/// Reference answer computed on the list directly.
inline std::optional<std::size_t> list_op_answer(const ClevrScene& s, list_op op, std::size_t position,
                                                 const std::string& color) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.objects.size(); ++i) idx.push_back(i);
    if (op == list_op::delete_) {
        auto it = std::find_if(idx.begin(), idx.end(), [&](std::size_t i) { return s.objects[i].color == color; });
        if (it == idx.end()) return std::nullopt;
        idx.erase(it);
    } else {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return color_rank(s.objects[a].color) < color_rank(s.objects[b].color);
        });
    }
    if (position < 1 || position > idx.size()) return std::nullopt;
    return idx[position - 1];
}

inline ClevrScene random_clevr_scene(rng& r, std::size_t count) {
    static const std::array<std::string, 3> shapes{"cube", "sphere", "cylinder"};
    static const std::array<std::string, 2> materials{"metal", "matte"};
    std::vector<std::string> colors(clevr_colors().begin(), clevr_colors().end());
    r.shuffle(colors);
    ClevrScene s;
    for (std::size_t i = 0; i < count; ++i) {
        ClevrObject o;
        o.color = colors[i];
        o.shape = shapes[r.index(shapes.size())];
        o.material = materials[r.index(materials.size())];
        const double w = 40 + r.index(41), h = 40 + r.index(41);
        o.box = {20 + 150.0 * static_cast<double>(i) + static_cast<double>(r.index(40)),
                 100 + static_cast<double>(r.index(120)), w, h};
        s.objects.push_back(std::move(o));
    }
    return s;
}

/// n well-posed instances: the requested position exists after the operation.
inline std::vector<ClevrInstance> generate_deiclevr(std::size_t n, list_op op, std::uint64_t seed) {
    rng r(seed);
    std::vector<ClevrInstance> out;
    while (out.size() < n) {
        ClevrInstance inst;
        inst.scene = random_clevr_scene(r, 1 + r.index(3));
        inst.op = op;
        inst.position = 1 + r.index(3);
        if (op == list_op::delete_) inst.color = inst.scene.objects[r.index(inst.scene.objects.size())].color;
        auto ans = list_op_answer(inst.scene, op, inst.position, inst.color);
        if (!ans) continue;
        inst.answer = *ans;
        inst.prompt = clevr_prompt(op, inst.position, inst.color);
        out.push_back(std::move(inst));
    }
    return out;
}

/// color(objK, c) for every object and a leftof chain from lborder through
/// the objects to rborder.
inline SceneFacts clevr_facts(const ClevrScene& s) {
    SceneFacts out;
    auto put = [&](Atom a) {
        out.facts.add(std::move(a));
        out.values.push_back(1.0);
    };
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        out.objects.push_back({object_constant(i), static_cast<std::int64_t>(i), s.objects[i].box,
                               {s.objects[i].color + " " + s.objects[i].shape}, {}});
        put(Atom::fact("color", {object_constant(i), s.objects[i].color}));
    }
    std::string prev = "lborder";
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        put(Atom::fact("leftof", {prev, object_constant(i)}));
        prev = object_constant(i);
    }
    put(Atom::fact("leftof", {prev, "rborder"}));
    out.facts.add_universe_constant("lborder");
    out.facts.add_universe_constant("rborder");
    return out;
}

namespace detail {
inline std::string position_rules() {
    return "pos1(X):-leftof(lborder,X).\n"
           "pos2(X):-leftof(lborder,Y),leftof(Y,X).\n"
           "pos3(X):-pos2(Y),leftof(Y,X).\n";
}
}  // namespace detail

/// Program for "p-th left-most object after deleting a <color> object".
inline std::string clevr_delete_program(std::size_t position, const std::string& color) {
    if (position < 1 || position > 3) throw input_error("position must be 1, 2 or 3");
    color_rank(color);
    std::string out = detail::position_rules();
    for (std::size_t d = 1; d <= 3; ++d) {
        const std::size_t take = d > position ? position : position + 1;
        if (take > 3) continue;
        out += "target(X):-pos" + std::to_string(take) + "(X),pos" + std::to_string(d) + "(Z),color(Z," + color +
               ").\n";
    }
    return out;
}

/// Program for "p-th left-most object after sorting by color".
inline std::string clevr_sort_program(std::size_t position) {
    if (position < 1 || position > 3) throw input_error("position must be 1, 2 or 3");
    const auto& cs = clevr_colors();
    std::string out;
    for (std::size_t a = 0; a < cs.size(); ++a)
        for (std::size_t b = a + 1; b < cs.size(); ++b)
            out += "smaller(X,Y):-color(X," + cs[a] + "),color(Y," + cs[b] + ").\n";
    out += "has1smaller(X):-smaller(Y,X).\n"
           "has2smaller(X):-smaller(Y,X),smaller(Z,Y).\n"
           "has1bigger(X):-smaller(X,Y).\n"
           "has2bigger(X):-smaller(X,Y),smaller(Y,Z).\n"
           "object(X):-leftof(Y,X),leftof(X,Z).\n"
           "size1(X):-leftof(lborder,X),leftof(X,rborder).\n"
           "size2(X):-leftof(lborder,X),leftof(X,Y),leftof(Y,rborder).\n"
           "size3(X):-leftof(lborder,X),leftof(X,Y),leftof(Y,Z),leftof(Z,rborder).\n";
    for (std::size_t n = position; n <= 3; ++n) {
        out += "target(X):-size" + std::to_string(n) + "(W),object(X)";
        if (position > 1) out += ",has" + std::to_string(position - 1) + "smaller(X)";
        if (n > position) out += ",has" + std::to_string(n - position) + "bigger(X)";
        out += ".\n";
    }
    return out;
}

inline Program clevr_program(const ClevrInstance& inst) {
    return parse_program(inst.op == list_op::delete_ ? clevr_delete_program(inst.position, inst.color)
                                                     : clevr_sort_program(inst.position));
}

inline nlohmann::json to_json(const ClevrInstance& inst) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : inst.scene.objects)
        objs.push_back(box_fields({{"color", o.color}, {"shape", o.shape}, {"material", o.material}}, o.box));
    nlohmann::json j{{"prompt", inst.prompt},
                     {"operation", to_string(inst.op)},
                     {"position", inst.position},
                     {"objects", std::move(objs)},
                     {"answer", inst.answer}};
    if (inst.op == list_op::delete_) j["color"] = inst.color;
    return j;
}

inline ClevrInstance clevr_instance_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw schema_error(path, "expected an object");
    ClevrInstance inst;
    const auto& op = detail::require(j, "operation", path);
    if (!op.is_string()) throw schema_error(path + "/operation", "expected a string");
    inst.op = parse_list_op(op.get<std::string>());
    inst.position = static_cast<std::size_t>(detail::require_int(j, "position", path));
    if (inst.op == list_op::delete_) {
        const auto& c = detail::require(j, "color", path);
        if (!c.is_string()) throw schema_error(path + "/color", "expected a string");
        inst.color = c.get<std::string>();
    }
    const auto& objs = detail::require(j, "objects", path);
    if (!objs.is_array() || objs.empty()) throw schema_error(path + "/objects", "expected a non-empty array");
    for (std::size_t i = 0; i < objs.size(); ++i) {
        const std::string p = path + "/objects/" + std::to_string(i);
        ClevrObject o;
        o.color = objs[i].value("color", "");
        o.shape = objs[i].value("shape", "");
        o.material = objs[i].value("material", "");
        o.box = box_from_json(objs[i], p);
        inst.scene.objects.push_back(std::move(o));
    }
    inst.prompt = j.value("prompt", clevr_prompt(inst.op, inst.position, inst.color));
    auto ans = list_op_answer(inst.scene, inst.op, inst.position, inst.color);
    if (!ans) throw schema_error(path, "instance has no answer");
    inst.answer = *ans;
    return inst;
}

}  // namespace deisam
