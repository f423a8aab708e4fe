#pragma once

// Learning the weights of merge rules over several scene-graph sources.
//
// Each source k contributes facts tagged with a constant sggK. The base
// program is specialized to carry the tag through every atom, and a weighted
// merge rule  w_k: target(X):-target_sgg(X,sggK).  collects each source's
// answers. The weights are w_k = sigmoid(theta_k), trained with binary
// cross-entropy on the extracted predictions and RMSProp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "deisam/deivg.hpp"
#include "deisam/error.hpp"
#include "deisam/eval.hpp"
#include "deisam/grounding.hpp"
#include "deisam/logic.hpp"
#include "deisam/reasoner.hpp"
#include "deisam/rng.hpp"
#include "deisam/rulegen.hpp"
#include "deisam/scene.hpp"

namespace deisam {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Corrupted sources

struct CorruptionOptions {
    double drop_fraction = 0.5;
    bool rewire = false;  // reattach dropped relations to a random other subject instead of removing them
};

/// Copy of `sg` with round(drop_fraction * |R|) relations chosen uniformly
/// and removed (or rewired).
inline SceneGraph corrupt_scene_graph(const SceneGraph& sg, const CorruptionOptions& opts, rng& r) {
    if (!(opts.drop_fraction >= 0.0 && opts.drop_fraction <= 1.0))
        throw input_error("drop_fraction must lie in [0,1]");
    std::vector<std::size_t> order(sg.relations.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    r.shuffle(order);
    const auto k = static_cast<std::size_t>(std::llround(opts.drop_fraction * static_cast<double>(order.size())));
    std::vector<char> hit(sg.relations.size(), 0);
    for (std::size_t i = 0; i < k; ++i) hit[order[i]] = 1;

    SceneGraph out = sg;
    out.relations.clear();
    for (std::size_t i = 0; i < sg.relations.size(); ++i) {
        if (!hit[i]) {
            out.relations.push_back(sg.relations[i]);
            continue;
        }
        if (!opts.rewire || sg.objects.size() < 3) continue;
        SceneRelation rel = sg.relations[i];
        std::vector<std::int64_t> candidates;
        for (const auto& o : sg.objects)
            if (o.object_id != rel.subject_id && o.object_id != rel.object_id) candidates.push_back(o.object_id);
        rel.subject_id = candidates[r.index(candidates.size())];
        out.relations.push_back(std::move(rel));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mixture programs

inline std::string source_constant(std::size_t k) { return "sgg" + std::to_string(k + 1); }

struct MixtureProgram {
    Program program;
    std::vector<std::size_t> merge_rules;  // rule index of each source's merge rule
};

/// Tags every atom of `base` with a source variable, renames target to
/// target_sgg, and appends one merge rule per source.
inline MixtureProgram build_mixture_program(const Program& base, std::size_t num_sources,
                                            const std::vector<double>& weights = {}) {
    if (num_sources == 0) throw input_error("a mixture needs at least one source");
    if (!weights.empty() && weights.size() != num_sources)
        throw dimension_mismatch("got " + std::to_string(weights.size()) + " weights for " +
                                 std::to_string(num_sources) + " sources");
    if (!base.defines("target")) throw no_target_atoms("base program defines no 'target' predicate");
    MixtureProgram out;
    for (const auto& r : base.rules) {
        std::string tag = "SG";
        const auto vars = r.variables();
        while (std::find(vars.begin(), vars.end(), tag) != vars.end()) tag += "G";
        auto tagged = [&](Atom a) {
            if (a.predicate == "target") a.predicate = "target_sgg";
            a.args.push_back(Term::var(tag));
            return a;
        };
        Rule nr;
        nr.head = tagged(r.head);
        for (const auto& b : r.body) nr.body.push_back(tagged(b));
        out.program.rules.push_back(std::move(nr));
    }
    for (std::size_t k = 0; k < num_sources; ++k) {
        Rule m;
        m.head = Atom("target", {Term::var("X")});
        m.body.push_back(Atom("target_sgg", {Term::var("X"), Term::constant(source_constant(k))}));
        m.weight = weights.empty() ? 1.0 : weights[k];
        out.merge_rules.push_back(out.program.rules.size());
        out.program.rules.push_back(std::move(m));
    }
    return out;
}

/// Facts of all sources, each tagged with its source constant. The sources
/// must describe the same objects in the same order.
inline SceneFacts mixture_facts(const std::vector<SceneGraph>& sources) {
    if (sources.empty()) throw input_error("a mixture needs at least one source");
    SceneFacts out;
    for (std::size_t k = 0; k < sources.size(); ++k) {
        SceneFacts f = scene_graph_to_facts(sources[k]);
        if (k == 0) {
            out.objects = f.objects;
        } else {
            bool same = f.objects.size() == out.objects.size();
            for (std::size_t i = 0; same && i < f.objects.size(); ++i)
                same = f.objects[i].object_id == out.objects[i].object_id;
            if (!same) throw input_error("source " + std::to_string(k + 1) + " does not share the object list");
        }
        const std::string tag = source_constant(k);
        for (std::size_t i = 0; i < f.facts.size(); ++i) {
            Atom a = f.facts[i];
            a.args.push_back(Term::constant(tag));
            const std::size_t pos = out.facts.add(std::move(a));
            if (pos == out.values.size()) out.values.push_back(f.values[i]);
        }
        out.facts.add_universe_constant(tag);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss

/// 1 where the prediction overlaps some answer by more than `iou_threshold`.
inline std::vector<int> label_predictions(const std::vector<TargetPrediction>& preds, const std::vector<Box>& answers,
                                          double iou_threshold) {
    std::vector<int> y;
    for (const auto& p : preds) {
        double best = 0.0;
        for (const auto& a : answers) best = std::max(best, iou(p.box, a));
        y.push_back(best > iou_threshold ? 1 : 0);
    }
    return y;
}

inline constexpr double kBceEps = 1e-7;

/// Binary cross-entropy summed over predictions, scores clipped to [eps, 1-eps].
inline double bce_loss(const std::vector<double>& s, const std::vector<int>& y) {
    if (s.size() != y.size()) throw dimension_mismatch("scores and labels differ in length");
    double l = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double p = std::clamp(s[i], kBceEps, 1.0 - kBceEps);
        l -= y[i] ? std::log(p) : std::log(1.0 - p);
    }
    return l;
}

/// d bce_loss / d s_i; zero where the clip is active.
inline std::vector<double> bce_grad(const std::vector<double>& s, const std::vector<int>& y) {
    if (s.size() != y.size()) throw dimension_mismatch("scores and labels differ in length");
    std::vector<double> g(s.size(), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < kBceEps || s[i] > 1.0 - kBceEps) continue;
        g[i] = (s[i] - y[i]) / (s[i] * (1.0 - s[i]));
    }
    return g;
}

class RmsProp {
public:
    RmsProp(std::size_t n, double lr, double alpha, double eps) : lr_(lr), alpha_(alpha), eps_(eps), sq_(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grads) {
        if (params.size() != sq_.size() || grads.size() != sq_.size())
            throw dimension_mismatch("optimizer state does not match the parameters");
        for (std::size_t i = 0; i < params.size(); ++i) {
            sq_[i] = alpha_ * sq_[i] + (1.0 - alpha_) * grads[i] * grads[i];
            params[i] -= lr_ * grads[i] / (std::sqrt(sq_[i]) + eps_);
        }
    }

    const std::vector<double>& state() const { return sq_; }
    void restore(std::vector<double> s) {
        if (s.size() != sq_.size()) throw dimension_mismatch("optimizer state does not match the parameters");
        sq_ = std::move(s);
    }

private:
    double lr_, alpha_, eps_;
    std::vector<double> sq_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double lr = 1e-2;
    int steps = 200;
    std::size_t batch_size = 1;
    double iou_threshold = 0.8;
    double rmsprop_alpha = 0.99;
    double rmsprop_eps = 1e-8;
    int reasoner_steps = 4;
    double gamma = 0.01;
    double target_threshold = 0.2;
    int eval_every = 10;
    std::uint64_t seed = 0;
    double init_theta = 0.0;
    double init_spread = 0.0;  // theta_k = init_theta + U(-spread, spread), seeded

    void validate() const {
        if (!(lr > 0.0)) throw input_error("lr must be positive");
        if (steps < 0) throw input_error("steps must be >= 0");
        if (batch_size < 1) throw input_error("batch_size must be >= 1");
        if (!(iou_threshold >= 0.0 && iou_threshold < 1.0)) throw input_error("iou_threshold must lie in [0,1)");
        if (eval_every < 1) throw input_error("eval_every must be >= 1");
        if (!(init_spread >= 0.0)) throw input_error("init_spread must be >= 0");
        reasoner().validate();
    }

    ReasonerConfig reasoner() const {
        ReasonerConfig rc;
        rc.gamma = gamma;
        rc.steps = reasoner_steps;
        rc.target_threshold = target_threshold;
        return rc;
    }

    nlohmann::json to_json() const {
        return {{"lr", lr},
                {"steps", steps},
                {"batch_size", batch_size},
                {"iou_threshold", iou_threshold},
                {"rmsprop_alpha", rmsprop_alpha},
                {"rmsprop_eps", rmsprop_eps},
                {"reasoner_steps", reasoner_steps},
                {"gamma", gamma},
                {"target_threshold", target_threshold},
                {"eval_every", eval_every},
                {"seed", seed},
                {"init_theta", init_theta},
                {"init_spread", init_spread}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        if (!j.is_object()) throw schema_error("/", "training config must be an object");
        try {
            c.lr = j.value("lr", c.lr);
            c.steps = j.value("steps", c.steps);
            c.batch_size = j.value("batch_size", c.batch_size);
            c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
            c.rmsprop_alpha = j.value("rmsprop_alpha", c.rmsprop_alpha);
            c.rmsprop_eps = j.value("rmsprop_eps", c.rmsprop_eps);
            c.reasoner_steps = j.value("reasoner_steps", c.reasoner_steps);
            c.gamma = j.value("gamma", c.gamma);
            c.target_threshold = j.value("target_threshold", c.target_threshold);
            c.eval_every = j.value("eval_every", c.eval_every);
            c.seed = j.value("seed", c.seed);
            c.init_theta = j.value("init_theta", c.init_theta);
            c.init_spread = j.value("init_spread", c.init_spread);
        } catch (const nlohmann::json::type_error& e) {
            throw schema_error("/", std::string("bad training config: ") + e.what());
        }
        return c;
    }
};

/// One deictic instance with one scene graph per source.
struct MixtureExample {
    std::string id;
    Program base;                     // single-source program, e.g. template_rulegen(structured)
    std::vector<SceneGraph> sources;  // parallel to the source list of the task
    std::vector<Box> answers;
};

inline MixtureExample mixture_example(const DeicticInstance& inst, std::vector<SceneGraph> sources) {
    MixtureExample ex;
    ex.id = std::to_string(inst.image_id) + ":" + inst.deictic_prompt;
    ex.base = template_rulegen(inst.structured);
    ex.sources = std::move(sources);
    for (const auto& a : inst.answers) ex.answers.push_back(a.box);
    return ex;
}

/// A mixture example grounded once; only the merge weights change afterwards.
struct CompiledExample {
    std::string id;
    MixtureProgram mixture;
    ReasoningGraph graph;
    std::vector<double> v0;
    std::vector<ObjectRef> objects;
    std::vector<Box> answers;
};

inline CompiledExample compile_example(const MixtureExample& ex) {
    CompiledExample c;
    c.id = ex.id;
    c.mixture = build_mixture_program(ex.base, ex.sources.size());
    SceneFacts f = mixture_facts(ex.sources);
    c.graph = compile(c.mixture.program, f.facts);
    c.v0 = initial_valuation(c.graph, f.values);
    c.objects = std::move(f.objects);
    c.answers = ex.answers;
    return c;
}

inline std::vector<double> rule_weights(const CompiledExample& c, const std::vector<double>& theta) {
    std::vector<double> w(c.mixture.program.rules.size(), 1.0);
    for (std::size_t k = 0; k < c.mixture.merge_rules.size(); ++k) w[c.mixture.merge_rules[k]] = sigmoid(theta[k]);
    return w;
}

struct ExampleOutcome {
    std::vector<TargetPrediction> predictions;
    std::vector<int> labels;
    double loss = 0.0;
    std::vector<double> grad_theta;  // filled when requested
};

inline ExampleOutcome run_example(const CompiledExample& c, const std::vector<double>& theta, const TrainConfig& cfg,
                                  std::uint64_t fallback_seed, bool with_grad) {
    ReasonerConfig rc = cfg.reasoner();
    rc.rng_seed = fallback_seed;
    const auto w = rule_weights(c, theta);
    const ForwardTape tape = forward_recorded(c.graph, c.v0, w, rc);
    ExampleOutcome out;
    out.predictions = extract_targets(c.graph, tape.final_atoms(), c.objects, rc);
    out.labels = label_predictions(out.predictions, c.answers, cfg.iou_threshold);
    std::vector<double> s;
    for (const auto& p : out.predictions) s.push_back(p.score);
    out.loss = bce_loss(s, out.labels);
    if (!with_grad) return out;

    out.grad_theta.assign(theta.size(), 0.0);
    const auto gs = bce_grad(s, out.labels);
    std::vector<double> loss_grad(c.graph.num_atoms(), 0.0);
    bool any = false;
    for (std::size_t i = 0; i < out.predictions.size(); ++i) {
        if (out.predictions[i].fallback) continue;
        loss_grad[out.predictions[i].atom] += gs[i];
        any = any || gs[i] != 0.0;
    }
    if (!any) return out;
    const Gradients g = backward(c.graph, tape, loss_grad);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double wk = w[c.mixture.merge_rules[k]];
        out.grad_theta[k] = g.weights[c.mixture.merge_rules[k]] * wk * (1.0 - wk);
    }
    return out;
}

inline std::vector<EvalInstance> eval_instances(const std::vector<CompiledExample>& set, const std::vector<double>& theta,
                                                const TrainConfig& cfg) {
    std::vector<EvalInstance> out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto o = run_example(set[i], theta, cfg, mix_seed(cfg.seed ^ 0x5eedull, i), false);
        EvalInstance e{set[i].id, {}, set[i].answers};
        for (const auto& p : o.predictions) e.predictions.push_back({p.box, p.score});
        out.push_back(std::move(e));
    }
    return out;
}

inline double mixture_map(const std::vector<CompiledExample>& set, const std::vector<double>& theta,
                          const TrainConfig& cfg, const EvalConfig& ecfg = {}) {
    return evaluate(eval_instances(set, theta, cfg), ecfg).map;
}

inline std::vector<double> initial_theta(std::size_t num_sources, const TrainConfig& cfg) {
    std::vector<double> theta(num_sources, cfg.init_theta);
    if (cfg.init_spread > 0.0) {
        rng r(mix_seed(cfg.seed, 0x1417ull));
        for (double& t : theta) t += r.uniform(-cfg.init_spread, cfg.init_spread);
    }
    return theta;
}

struct TracePoint {
    int step = 0;
    double loss = 0.0;
    std::optional<double> val_map;
};

struct TrainState {
    std::vector<double> theta;
    std::vector<double> optimizer;
    int step = 0;
    std::string rng_state;
};

struct TrainResult {
    std::vector<double> theta;
    std::vector<double> weights;
    std::vector<TracePoint> trace;
    TrainState state;
};

/// RMSProp on theta; each step draws a batch from a seeded pass over `train`
/// and validates every cfg.eval_every steps and after the last one.
inline TrainResult train_mixture(const std::vector<CompiledExample>& train, const std::vector<CompiledExample>& val,
                                 std::size_t num_sources, const TrainConfig& cfg,
                                 const std::optional<TrainState>& resume = std::nullopt,
                                 const std::function<void(const TracePoint&)>& on_step = {}) {
    cfg.validate();
    if (train.empty()) throw empty_evaluation("training set is empty");
    for (const auto& c : train)
        if (c.mixture.merge_rules.size() != num_sources)
            throw dimension_mismatch("training example '" + c.id + "' has a different number of sources");

    TrainResult res;
    std::vector<double> theta = initial_theta(num_sources, cfg);
    RmsProp opt(num_sources, cfg.lr, cfg.rmsprop_alpha, cfg.rmsprop_eps);
    rng r(cfg.seed);
    int start = 0;
    if (resume) {
        if (resume->theta.size() != num_sources) throw dimension_mismatch("checkpoint has a different number of sources");
        theta = resume->theta;
        opt.restore(resume->optimizer);
        start = resume->step;
    }

    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor == order.size()) {
            order.resize(train.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            r.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };
    // Batch order depends only on the seed, so a resumed run replays the
    // draws of the first `start` steps and must land on the saved state.
    for (int s = 0; s < start; ++s)
        for (std::size_t b = 0; b < cfg.batch_size; ++b) next_index();
    if (resume && r.state() != resume->rng_state)
        throw input_error("checkpoint does not match the training configuration");

    for (int s = start; s < cfg.steps; ++s) {
        std::vector<double> grad(num_sources, 0.0);
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = next_index();
            const auto o = run_example(train[i], theta, cfg,
                                       mix_seed(cfg.seed, static_cast<std::uint64_t>(s) * 1000003ull + i), true);
            loss += o.loss;
            for (std::size_t k = 0; k < num_sources; ++k) grad[k] += o.grad_theta[k];
        }
        const double nb = static_cast<double>(cfg.batch_size);
        for (double& g : grad) g /= nb;
        opt.step(theta, grad);
        TracePoint tp{s + 1, loss / nb, std::nullopt};
        if (!val.empty() && ((s + 1) % cfg.eval_every == 0 || s + 1 == cfg.steps))
            tp.val_map = mixture_map(val, theta, cfg);
        res.trace.push_back(tp);
        if (on_step) on_step(tp);
    }
    res.theta = theta;
    for (double t : theta) res.weights.push_back(sigmoid(t));
    res.state = {theta, opt.state(), std::max(start, cfg.steps), r.state()};
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints and traces

inline nlohmann::json checkpoint_json(const TrainState& st, const TrainConfig& cfg,
                                      const std::vector<std::string>& sources) {
    return {{"theta", st.theta},
            {"optimizer", st.optimizer},
            {"step", st.step},
            {"rng_state", st.rng_state},
            {"sources", sources},
            {"config", cfg.to_json()}};
}

inline TrainState checkpoint_from_json(const nlohmann::json& j) {
    TrainState st;
    try {
        st.theta = j.at("theta").get<std::vector<double>>();
        st.optimizer = j.at("optimizer").get<std::vector<double>>();
        st.step = j.at("step").get<int>();
        st.rng_state = j.at("rng_state").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw schema_error("/", std::string("bad checkpoint: ") + e.what());
    }
    return st;
}

inline std::string trace_csv(const std::vector<TracePoint>& trace) {
    std::ostringstream os;
    os.precision(10);
    os << "step,loss,val_mAP\n";
    for (const auto& t : trace) {
        os << t.step << "," << t.loss << ",";
        if (t.val_map) os << *t.val_map;
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Mixture datasets

/// DeiVG instances over seeded synthetic scenes; each keeps its ground-truth
/// graph as source 1 and a corrupted copy as source 2.
inline std::vector<MixtureExample> synthesize_mixture(std::size_t n, std::uint64_t seed,
                                                      const CorruptionOptions& corruption = {}, std::size_t k = 1) {
    const auto scenes = random_scene_graphs(std::max<std::size_t>(n / 2, 8), seed);
    SynthesisOptions so;
    so.strict = true;
    const auto inst = synthesize_deivg(scenes, k, n, seed, so).instances;
    std::vector<MixtureExample> out;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const SceneGraph& gt = scenes[static_cast<std::size_t>(inst[i].image_id - 1)];
        rng r(mix_seed(seed, i));
        out.push_back(mixture_example(inst[i], {gt, corrupt_scene_graph(gt, corruption, r)}));
    }
    return out;
}

inline nlohmann::json mixture_dataset_json(const std::vector<MixtureExample>& examples,
                                           const std::vector<std::string>& source_names) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& ex : examples) {
        if (ex.sources.size() != source_names.size())
            throw dimension_mismatch("example '" + ex.id + "' does not have one graph per source");
        nlohmann::json answers = nlohmann::json::array();
        for (const auto& b : ex.answers) answers.push_back(box_fields(nlohmann::json::object(), b));
        nlohmann::json graphs = nlohmann::json::array();
        for (const auto& sg : ex.sources) graphs.push_back(to_json(sg));
        arr.push_back({{"id", ex.id}, {"program", render_program(ex.base)}, {"answers", std::move(answers)},
                       {"scene_graphs", std::move(graphs)}});
    }
    return {{"sources", source_names}, {"instances", std::move(arr)}};
}

struct MixtureDataset {
    std::vector<std::string> source_names;
    std::vector<MixtureExample> examples;
};

inline MixtureDataset mixture_dataset_from_json(const nlohmann::json& j) {
    MixtureDataset d;
    if (!j.is_object()) throw schema_error("/", "expected an object");
    const auto src = j.find("sources");
    if (src == j.end() || !src->is_array() || src->empty()) throw schema_error("/sources", "expected a non-empty array");
    for (std::size_t k = 0; k < src->size(); ++k) {
        if (!(*src)[k].is_string()) throw schema_error("/sources/" + std::to_string(k), "expected a string");
        d.source_names.push_back((*src)[k].get<std::string>());
    }
    const auto inst = j.find("instances");
    if (inst == j.end() || !inst->is_array()) throw schema_error("/instances", "expected an array");
    for (std::size_t i = 0; i < inst->size(); ++i) {
        const std::string path = "/instances/" + std::to_string(i);
        const auto& ji = (*inst)[i];
        if (!ji.is_object()) throw schema_error(path, "expected an object");
        MixtureExample ex;
        ex.id = ji.contains("id") && ji["id"].is_string() ? ji["id"].get<std::string>() : std::to_string(i);
        if (!ji.contains("program") || !ji["program"].is_string())
            throw schema_error(path + "/program", "expected rule text");
        ex.base = parse_program(ji["program"].get<std::string>());
        if (!ji.contains("answers") || !ji["answers"].is_array() || ji["answers"].empty())
            throw schema_error(path + "/answers", "expected a non-empty array");
        for (std::size_t a = 0; a < ji["answers"].size(); ++a)
            ex.answers.push_back(box_from_json(ji["answers"][a], path + "/answers/" + std::to_string(a)));
        if (!ji.contains("scene_graphs") || !ji["scene_graphs"].is_array() ||
            ji["scene_graphs"].size() != d.source_names.size())
            throw schema_error(path + "/scene_graphs", "expected one scene graph per source");
        for (std::size_t k = 0; k < d.source_names.size(); ++k)
            ex.sources.push_back(scene_graph_from_json(ji["scene_graphs"][k], path + "/scene_graphs/" + std::to_string(k)));
        d.examples.push_back(std::move(ex));
    }
    return d;
}

}  // namespace deisam
