#pragma once

// Box-level average precision of scored target predictions.

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/scene.hpp"

namespace deisam {

inline double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct ScoredBox {
    Box box;
    double score = 0.0;
};

struct EvalConfig {
    double match_iou = 0.5;

    void validate() const {
        if (!(match_iou > 0.0 && match_iou <= 1.0)) throw input_error("match_iou must lie in (0,1]");
    }
};

struct MatchedPair {
    std::size_t prediction;
    std::size_t answer;
    double iou;
};

struct ApResult {
    double ap = 0.0;
    std::vector<MatchedPair> matches;
};

/// Greedy matching in descending score order (ties keep input order): a
/// prediction is a true positive when its best unmatched answer overlaps by
/// more than `match_iou`. AP is the area under the all-point interpolated
/// precision/recall curve.
inline ApResult average_precision_detail(std::span<const ScoredBox> preds, std::span<const Box> answers,
                                         double match_iou) {
    if (answers.empty()) throw input_error("average precision needs at least one answer box");
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });

    ApResult out;
    std::vector<char> used(answers.size(), 0);
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const ScoredBox& p = preds[order[rank]];
        double best = -1.0;
        std::size_t best_j = answers.size();
        for (std::size_t j = 0; j < answers.size(); ++j) {
            if (used[j]) continue;
            const double v = iou(p.box, answers[j]);
            if (v > best) {
                best = v;
                best_j = j;
            }
        }
        if (best_j < answers.size() && best > match_iou) {
            used[best_j] = 1;
            ++tp;
            out.matches.push_back({order[rank], best_j, best});
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(answers.size()));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        out.ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return out;
}

inline double average_precision(std::span<const ScoredBox> preds, std::span<const Box> answers, double match_iou) {
    return average_precision_detail(preds, answers, match_iou).ap;
}

inline double mean_average_precision(std::span<const double> aps) {
    if (aps.empty()) throw empty_evaluation("mean average precision over zero instances");
    return std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
}

struct InstanceResult {
    std::string id;
    double ap = 0.0;
    std::vector<MatchedPair> matches;
};

struct EvalReport {
    double map = 0.0;
    std::vector<InstanceResult> per_instance;
    EvalConfig config;

    nlohmann::json to_json() const {
        nlohmann::json inst = nlohmann::json::array();
        for (const auto& r : per_instance) {
            nlohmann::json m = nlohmann::json::array();
            for (const auto& p : r.matches) m.push_back({{"prediction", p.prediction}, {"answer", p.answer}, {"iou", p.iou}});
            inst.push_back({{"id", r.id}, {"ap", r.ap}, {"matches", std::move(m)}});
        }
        return {{"mAP", map}, {"config", {{"match_iou", config.match_iou}}}, {"instances", std::move(inst)}};
    }

    std::string table() const {
        std::ostringstream os;
        os << std::left << std::setw(28) << "instance" << std::right << std::setw(10) << "AP" << "\n";
        for (const auto& r : per_instance)
            os << std::left << std::setw(28) << r.id << std::right << std::setw(10) << std::fixed
               << std::setprecision(4) << r.ap << "\n";
        os << std::left << std::setw(28) << "mAP" << std::right << std::setw(10) << std::fixed << std::setprecision(4)
           << map << "\n";
        return os.str();
    }
};

struct EvalInstance {
    std::string id;
    std::vector<ScoredBox> predictions;
    std::vector<Box> answers;
};

inline EvalReport evaluate(const std::vector<EvalInstance>& instances, const EvalConfig& cfg) {
    cfg.validate();
    EvalReport rep;
    rep.config = cfg;
    std::vector<double> aps;
    for (const auto& in : instances) {
        auto r = average_precision_detail(in.predictions, in.answers, cfg.match_iou);
        aps.push_back(r.ap);
        rep.per_instance.push_back({in.id, r.ap, std::move(r.matches)});
    }
    rep.map = mean_average_precision(aps);
    return rep;
}

// Prediction files: {"instances": [{"id", "answers": [box...],
// "predictions": [{x, y, w, h, score}...]}...]}, boxes as {x, y, w, h}.

inline json to_json(const EvalInstance& in) {
    json answers = json::array(), preds = json::array();
    for (const auto& a : in.answers) answers.push_back(box_fields(json::object(), a));
    for (const auto& p : in.predictions) preds.push_back(box_fields({{"score", p.score}}, p.box));
    return {{"id", in.id}, {"answers", std::move(answers)}, {"predictions", std::move(preds)}};
}

inline std::vector<EvalInstance> eval_instances_from_json(const json& j) {
    const json& arr = j.is_object() ? detail::require(j, "instances", "") : j;
    if (!arr.is_array()) throw schema_error("/instances", "expected an array");
    std::vector<EvalInstance> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "/instances/" + std::to_string(i);
        const json& e = arr[i];
        if (!e.is_object()) throw schema_error(path, "expected an object");
        EvalInstance in;
        in.id = e.value("id", std::to_string(i));
        const json& answers = detail::require(e, "answers", path);
        if (!answers.is_array()) throw schema_error(path + "/answers", "expected an array");
        for (std::size_t k = 0; k < answers.size(); ++k)
            in.answers.push_back(box_from_json(answers[k], path + "/answers/" + std::to_string(k)));
        const json& preds = detail::require(e, "predictions", path);
        if (!preds.is_array()) throw schema_error(path + "/predictions", "expected an array");
        for (std::size_t k = 0; k < preds.size(); ++k) {
            const std::string pp = path + "/predictions/" + std::to_string(k);
            in.predictions.push_back({box_from_json(preds[k], pp), detail::require_number(preds[k], "score", pp)});
        }
        out.push_back(std::move(in));
    }
    return out;
}

inline json eval_instances_to_json(const std::vector<EvalInstance>& instances) {
    json arr = json::array();
    for (const auto& in : instances) arr.push_back(to_json(in));
    return {{"instances", std::move(arr)}};
}

}  // namespace deisam
