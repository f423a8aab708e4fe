// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Optional: acceptance --real-embeddings FILE reports the synonym success rate
// of a real word2vec file (informational only).

#include <sys/socket.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "deisam/deisam.hpp"
#include "mixture_data.hpp"
#include "oracles.hpp"
#include "validator_corpus.hpp"

using namespace deisam;

// ---------------------------------------------------------------------------
// Socket guard. These definitions take precedence over libc for every call
// made from this binary (the HTTP client is header-only and compiled in), so
// any attempt to open or connect a socket is counted and refused.

namespace {
std::atomic<int> g_socket_calls{0};
}

extern "C" int socket(int, int, int) noexcept {
    ++g_socket_calls;
    errno = EACCES;
    return -1;
}

extern "C" int connect(int, const struct sockaddr*, socklen_t) {
    ++g_socket_calls;
    errno = EACCES;
    return -1;
}

namespace {

std::string data(const std::string& name) { return std::string(DEISAM_DATA_DIR) + "/" + name; }
std::string fixture(const std::string& name) { return std::string(DEISAM_TEST_DATA) + "/" + name; }

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0 && secs >= budget_s) {
        o.pass = false;
        o.detail << " [over time budget " << budget_s << " s]";
    }
    if (!o.pass) ++failures;
    std::printf("%s  %2d  %-28s %8.2fs %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), secs, o.detail.str().c_str());
    std::fflush(stdout);
}

double rel_err(double a, double b) {
    const double d = std::abs(a - b);
    const double s = std::max(std::abs(a), std::abs(b));
    return s < 1e-8 ? d : d / s;
}

EvalInstance gt_eval(const DeicticInstance& inst, const SceneGraph& sg, const ReasonerConfig& rc) {
    const auto rr = reason(sg, template_rulegen(inst.structured), rc);
    EvalInstance e{inst.deictic_prompt, {}, {}};
    for (const auto& p : rr.predictions) e.predictions.push_back({p.box, p.score});
    for (const auto& a : inst.answers) e.answers.push_back(a.box);
    return e;
}

std::vector<double> unit(std::vector<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return similarity_score(a, b, similarity::cosine);
}

std::vector<double> gaussian(rng& r, std::size_t dim) {
    std::vector<double> v(dim);
    for (auto& x : v) {
        const double u1 = std::max(r.unit(), 1e-12), u2 = r.unit();
        x = std::sqrt(-2 * std::log(u1)) * std::cos(2 * M_PI * u2);
    }
    return v;
}

// ---------------------------------------------------------------------------

void c1_boolean_oracle(Outcome& o) {
    rng r(1001);
    int agree = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        const auto scene = oracle::random_scene(r, 6);
        const Program p = oracle::random_deisam_program(r);
        const ReasoningGraph g = compile(p, scene.facts);
        ReasonerConfig cfg;  // gamma 0.01, two steps
        const auto v = forward(g, initial_valuation(g, scene.values), std::vector<double>(g.num_rules(), 1.0), cfg);
        std::set<Atom> soft;
        for (std::size_t i = 0; i < g.num_atoms(); ++i)
            if (v[i] > 0.5) soft.insert(g.atoms()[i]);
        agree += soft == oracle::boolean_closure(p, scene.facts, scene.values, cfg.steps);
    }
    o.detail << agree << "/" << trials << " programs agree";
    o.require(agree == trials, "boolean closure mismatch");
}

void c2_softor(Outcome& o) {
    const double got = softor({0.5, 0.5}, 0.01);
    const double want = 0.5 + 0.01 * std::log(2.0);
    o.detail << "softor(0.5,0.5) err " << std::abs(got - want);
    o.require(std::abs(got - want) <= 1e-12, "closed form");
    rng r(2);
    int exact = 0;
    for (int i = 0; i < 10000; ++i) {
        const double x = r.unit();
        const double g = 1e-3 + r.unit();
        exact += softor({x}, g) == x;
    }
    exact += softor({0.0}, 0.01) == 0.0 && softor({1.0}, 0.01) == 1.0;
    o.detail << ", single input exact " << exact << "/10001";
    o.require(exact == 10001, "single-input identity");
}

void c3_gradients(Outcome& o) {
    const auto ex = mixdata::examples(400, 33);
    TrainConfig cfg;
    cfg.gamma = 0.1;
    rng r(303);
    int checked = 0, skipped = 0, bad = 0;
    double worst = 0.0;
    for (const auto& e : ex) {
        if (checked == 100) break;
        const auto c = compile_example(e);
        const std::vector<double> theta{r.uniform(-2, 2), r.uniform(-2, 2)};
        const auto base = run_example(c, theta, cfg, 3, true);
        std::vector<double> fd(2);
        bool stable = true;
        for (std::size_t k = 0; k < 2; ++k) {
            const double eps = 1e-5;
            auto tp = theta, tm = theta;
            tp[k] += eps;
            tm[k] -= eps;
            const auto op = run_example(c, tp, cfg, 3, false), om = run_example(c, tm, cfg, 3, false);
            // the loss is only differentiable while the thresholded prediction set stays put
            stable = stable && op.labels == base.labels && om.labels == base.labels &&
                     op.predictions.size() == base.predictions.size() &&
                     om.predictions.size() == base.predictions.size();
            fd[k] = (op.loss - om.loss) / (2 * eps);
        }
        if (!stable) {
            ++skipped;
            continue;
        }
        ++checked;
        for (std::size_t k = 0; k < 2; ++k) {
            const double e_k = rel_err(base.grad_theta[k], fd[k]);
            worst = std::max(worst, e_k);
            bad += e_k >= 1e-3;
        }
    }
    o.detail << checked << " instances, worst rel err " << worst << " (" << skipped << " at a threshold skipped)";
    o.require(checked == 100, "fewer than 100 differentiable instances");
    o.require(bad == 0, "gradient mismatch");
}

void c4_deivg(Outcome& o) {
    const auto scenes = random_scene_graphs(1500, 404);
    SynthesisOptions so;
    so.strict = true;
    EvalConfig ec;
    ec.match_iou = 0.9;
    for (std::size_t k = 1; k <= 3; ++k) {
        const auto res = synthesize_deivg(scenes, k, 500, 40 + k, so);
        std::vector<EvalInstance> evals;
        for (const auto& inst : res.instances)
            evals.push_back(gt_eval(inst, scenes[static_cast<std::size_t>(inst.image_id - 1)], ReasonerConfig{}));
        const double m = evaluate(evals, ec).map;
        o.detail << "k=" << k << ": " << evals.size() << " inst mAP " << m << "  ";
        o.require(evals.size() == 500 && m == 1.0, "k=" + std::to_string(k));
    }
}

void c5_deiclevr(Outcome& o) {
    for (list_op op : {list_op::delete_, list_op::sort}) {
        const auto set = generate_deiclevr(1000, op, op == list_op::sort ? 505 : 506);
        int hits = 0;
        for (const auto& inst : set) {
            const auto rr = reason_facts(clevr_facts(inst.scene), clevr_program(inst), ReasonerConfig{1e-2, 4});
            hits += !rr.predictions.empty() && !rr.predictions[0].fallback &&
                    static_cast<std::size_t>(rr.predictions[0].object_id) == inst.answer &&
                    (rr.predictions.size() == 1 || rr.predictions[1].fallback);
        }
        o.detail << to_string(op) << " " << hits << "/" << set.size() << "  ";
        o.require(hits == static_cast<int>(set.size()), to_string(op));
    }
}

struct MixtureRun {
    double w_gt = 0, w_corr = 0, init_test = 0, final_test = 0, init_val = 0, final_val = 0;
};

MixtureRun mixture_run(const CorruptionOptions& co, std::uint64_t seed) {
    const auto ex = mixdata::examples(2000, seed, co);
    const auto train = mixdata::compiled(ex, 0, 1200);
    const auto val = mixdata::compiled(ex, 1200, 1600);
    const auto test = mixdata::compiled(ex, 1600, 2000);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.steps = 200;
    cfg.eval_every = 50;
    cfg.seed = seed;
    const auto theta0 = initial_theta(2, cfg);  // uniform weights
    MixtureRun m;
    m.init_test = mixture_map(test, theta0, cfg);
    m.init_val = mixture_map(val, theta0, cfg);
    const auto res = train_mixture(train, val, 2, cfg);
    m.w_gt = res.weights[0];
    m.w_corr = res.weights[1];
    m.final_test = mixture_map(test, res.theta, cfg);
    m.final_val = res.trace.back().val_map.value_or(0.0);
    return m;
}

void c6_mixture(Outcome& o) {
    CorruptionOptions drop;
    drop.drop_fraction = 0.5;
    const MixtureRun m = mixture_run(drop, 606);
    o.detail << "w_gt " << m.w_gt << " w_corr " << m.w_corr << ", test mAP " << 100 * m.init_test << " -> "
             << 100 * m.final_test << " (+" << 100 * (m.final_test - m.init_test) << " pts)";
    o.require(m.w_gt > m.w_corr, "w_gt > w_corrupted");
    o.require(m.final_test - m.init_test >= 0.20, "gain >= 20 points");

    // informational: relations rewired to wrong subjects instead of dropped
    CorruptionOptions rewire = drop;
    rewire.rewire = true;
    const MixtureRun m2 = mixture_run(rewire, 606);
    std::printf("      6  (info) rewired corruption: w_gt %.4f w_corr %.4f, test mAP %.2f -> %.2f\n", m2.w_gt, m2.w_corr,
                100 * m2.init_test, 100 * m2.final_test);
}

void c7_validator(Outcome& o) {
    int valid = 0, total_valid = 0;
    for (const auto& text : corpus::valid_programs()) {
        ++total_valid;
        try {
            validate_rules(text);
            ++valid;
        } catch (const format_error&) {
        }
    }
    int rejected = 0;
    const auto bad = corpus::malformed();
    for (const auto& m : bad) {
        try {
            validate_rules(m.text);
        } catch (const format_error& e) {
            rejected += e.has(m.expected);
        }
    }
    o.detail << valid << "/" << total_valid << " valid accepted, " << rejected << "/" << bad.size()
             << " malformed rejected with the right category";
    o.require(valid == total_valid, "valid programs");
    o.require(bad.size() == 20 && rejected == 20, "malformed corpus");
}

void c8_unifier(Outcome& o, const std::string& real_vectors) {
    rng r(808);
    const std::size_t dim = 48;
    int resolved = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<double>> targets;
        const std::size_t n = 3 + r.index(6);
        while (targets.size() < n) {
            auto v = unit(gaussian(r, dim));
            bool ok = true;
            for (const auto& t : targets) ok &= std::abs(cosine(v, t)) <= 0.3;
            if (ok) targets.push_back(v);
        }
        const std::size_t pick = r.index(n);
        std::vector<double> syn;
        for (;;) {
            syn = targets[pick];
            const auto noise = gaussian(r, dim);
            for (std::size_t i = 0; i < dim; ++i) syn[i] += 0.06 * noise[i];
            bool ok = cosine(syn, targets[pick]) >= 0.9;
            for (std::size_t k = 0; k < n; ++k)
                if (k != pick) ok &= cosine(syn, targets[k]) <= 0.3;
            if (ok) break;
        }
        EmbeddingStore store;
        FactSet facts;
        for (std::size_t k = 0; k < n; ++k) {
            const std::string name = "term" + std::to_string(k);
            store.add(name, targets[k]);
            facts.add(Atom::fact("type", {object_constant(k), name}));
        }
        store.add("synonym", syn);
        const Program p = parse_program("cond1(X):-type(X,synonym).\ntarget(X):-cond1(X).");
        const auto [out, report] = unify_program(p, facts, store);
        resolved += out.rules[0].body[0].args[1].name == "term" + std::to_string(pick);
    }
    o.detail << resolved << "/200 synonyms resolved";
    o.require(resolved == 200, "synthetic synonyms");

    const auto sg = load_scene_graphs(data("barge_scene.json")).front();
    const Program p1 = parse_program(read_file(data("program1.pl")));
    const auto store = EmbeddingStore::load_file(data("embeddings.txt"));
    const auto rr = reason(sg, p1, ReasonerConfig{}, &store);
    const bool barge = rr.unification.substitutions.size() == 1 && rr.unification.substitutions[0].original == "boat" &&
                       rr.unification.substitutions[0].replacement == "barge" && !rr.predictions.empty() &&
                       !rr.predictions[0].fallback && rr.predictions[0].object_id == 1;
    o.detail << ", boat->barge " << (barge ? "resolved" : "NOT resolved");
    o.require(barge, "boat -> barge fixture");

    if (!real_vectors.empty()) {
        // synonym, the scene term it should map to, and distractor scene terms
        static const std::vector<std::pair<std::string, std::string>> pairs{
            {"boat", "barge"},    {"man", "guy"},        {"woman", "lady"},    {"car", "automobile"},
            {"cup", "mug"},       {"sofa", "couch"},     {"hat", "cap"},       {"road", "street"},
            {"shirt", "tshirt"},  {"kid", "child"},      {"rock", "stone"},    {"bag", "purse"},
            {"plane", "airplane"}, {"bike", "bicycle"},  {"glass", "cup"},     {"jacket", "coat"},
            {"puppy", "dog"},     {"kitten", "cat"},     {"pants", "trousers"}, {"trash", "garbage"},
            {"ocean", "sea"},     {"photo", "picture"},  {"table", "desk"},    {"lamp", "light"},
            {"sneaker", "shoe"}};
        static const std::vector<std::string> distractors{"tree", "window", "grass", "sky", "building", "wheel"};
        const auto real = EmbeddingStore::load_file(real_vectors);
        int ok = 0, usable = 0;
        for (const auto& [query, answer] : pairs) {
            if (!real.contains(query) || !real.contains(answer)) continue;
            ++usable;
            std::vector<std::string> vocab{answer};
            for (const auto& d : distractors)
                if (real.contains(d)) vocab.push_back(d);
            ok += nearest_term(query, vocab, real).first == answer;
        }
        std::printf("      8  (info) real embeddings: %d/%d synonyms resolved\n", ok, usable);
    }
}

void c9_eval(Outcome& o) {
    const json j = read_json_file(fixture("eval_five.json"));
    EvalConfig cfg;
    cfg.match_iou = j["match_iou"].get<double>();
    const auto rep = evaluate(eval_instances_from_json(j), cfg);
    const auto expected = j["expected"]["ap"].get<std::vector<double>>();
    bool fixture_ok = rep.per_instance.size() == expected.size();
    for (std::size_t i = 0; fixture_ok && i < expected.size(); ++i)
        fixture_ok = std::abs(rep.per_instance[i].ap - expected[i]) <= 1e-9;
    fixture_ok = fixture_ok && std::abs(rep.map - j["expected"]["mAP"].get<double>()) <= 1e-9;
    o.detail << "fixture mAP " << rep.map;
    o.require(fixture_ok, "hand-computed fixture");

    rng r(909);
    auto box = [&] {
        return Box{std::floor(r.uniform(0, 80)), std::floor(r.uniform(0, 80)), 5 + std::floor(r.uniform(0, 20)),
                   5 + std::floor(r.uniform(0, 20))};
    };
    int invariant = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        std::vector<Box> answers(1 + r.index(4));
        for (auto& a : answers) a = box();
        std::vector<ScoredBox> preds(r.index(8));
        for (auto& p : preds) {
            p.box = r.bernoulli(0.5) ? answers[r.index(answers.size())] : box();
            p.box.x += std::floor(r.uniform(0, 3));
            p.score = r.unit();
        }
        auto moved = preds;
        const auto kind = r.index(3);
        for (auto& p : moved) {
            if (kind == 0) p.score = std::exp(4 * p.score) + 7;
            if (kind == 1) p.score = p.score * p.score * p.score;
            if (kind == 2) p.score = 1 / (1 + std::exp(-10 * (p.score - 0.5)));
        }
        invariant += average_precision(preds, answers, 0.5) == average_precision(moved, answers, 0.5);
    }
    o.detail << ", monotone invariance " << invariant << "/" << trials;
    o.require(invariant == trials, "monotone transform invariance");
}

std::string predictions_bytes(std::uint64_t seed) {
    const auto scenes = random_scene_graphs(120, seed);
    const auto inst = synthesize_deivg(scenes, 2, 60, seed).instances;
    std::vector<EvalInstance> out;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        ReasonerConfig rc;
        rc.rng_seed = mix_seed(seed, i);
        // odd instances ask for something absent so the seeded fallback is exercised too
        if (i % 2) {
            DeicticInstance miss = inst[i];
            miss.structured = {{"on", "nonexistent thing"}};
            out.push_back(gt_eval(miss, scenes[static_cast<std::size_t>(inst[i].image_id - 1)], rc));
        } else {
            out.push_back(gt_eval(inst[i], scenes[static_cast<std::size_t>(inst[i].image_id - 1)], rc));
        }
    }
    return eval_instances_to_json(out).dump();
}

std::string checkpoint_bytes(std::uint64_t seed) {
    const auto ex = mixdata::examples(80, seed);
    const auto train = mixdata::compiled(ex, 0, 60);
    const auto val = mixdata::compiled(ex, 60, 80);
    TrainConfig cfg;
    cfg.steps = 25;
    cfg.seed = seed;
    cfg.init_spread = 0.5;
    const auto res = train_mixture(train, val, 2, cfg);
    return checkpoint_json(res.state, cfg, {"gt", "corrupted"}).dump() + trace_csv(res.trace);
}

void c10_determinism_offline(Outcome& o) {
    const auto scenes = random_scene_graphs(200, 10);
    const bool ds = dump_deivg(synthesize_deivg(scenes, 2, 150, 10).instances) ==
                    dump_deivg(synthesize_deivg(random_scene_graphs(200, 10), 2, 150, 10).instances);
    std::string clevr_a, clevr_b;
    for (const auto& i : generate_deiclevr(200, list_op::sort, 10)) clevr_a += to_json(i).dump();
    for (const auto& i : generate_deiclevr(200, list_op::sort, 10)) clevr_b += to_json(i).dump();
    const bool mix = mixture_dataset_json(mixdata::examples(100, 10), {"gt", "c"}).dump() ==
                     mixture_dataset_json(mixdata::examples(100, 10), {"gt", "c"}).dump();
    const bool preds = predictions_bytes(10) == predictions_bytes(10);
    const bool ckpt = checkpoint_bytes(10) == checkpoint_bytes(10);
    o.detail << "datasets " << (ds && clevr_a == clevr_b && mix ? "same" : "DIFFER") << ", predictions "
             << (preds ? "same" : "DIFFER") << ", checkpoints " << (ckpt ? "same" : "DIFFER");
    o.require(ds && clevr_a == clevr_b && mix, "dataset bytes");
    o.require(preds, "prediction bytes");
    o.require(ckpt, "checkpoint bytes");

    // guard sanity: an online request reaches the socket layer and is refused there
    const int before_probe = g_socket_calls.load();
    try {
        net::RetryPolicy once;
        once.max_retries = 0;
        net::post_json("http://127.0.0.1:9/probe", {}, "", std::chrono::seconds(1), once);
    } catch (const service_error&) {
    }
    const bool guard_live = g_socket_calls.load() > before_probe;
    o.require(guard_live, "socket guard not reached by the HTTP client");

    // offline: every stage, including attempts to use the services, opens no socket
    const int before = g_socket_calls.load();
    {
        net::offline_scope off;
        const auto sg = load_scene_graphs(data("barge_scene.json")).front();
        const auto store = EmbeddingStore::load_file(data("embeddings.txt"));
        const Program p = template_rulegen(parse_structured("on:boat;holding:umbrella"));
        const auto rr = reason(sg, p, ReasonerConfig{}, &store);
        auto replay = FixtureChatClient::load(data("chat_fixture.json"));
        const auto scene_preds = std::vector<std::string>{"holding", "on"};
        generate_rules("an object that is on the boat, and that is holding an umbrella.", scene_preds, replay);
        (void)predictions_bytes(11);
        (void)checkpoint_bytes(11);
        RulegenConfig rc;
        rc.endpoint_url = "http://127.0.0.1:9/v1/chat/completions";
        HttpChatClient http(rc);
        try {
            http.complete({{"user", "x"}});
        } catch (const offline_violation&) {
        }
        try {
            fetch_embeddings({"boat"}, EmbeddingServiceConfig{});
        } catch (const offline_violation&) {
        }
        o.require(!rr.predictions.empty(), "offline pipeline produced nothing");
    }
    const int offline_calls = g_socket_calls.load() - before;
    o.detail << ", offline socket calls " << offline_calls;
    o.require(offline_calls == 0, "network I/O while offline");
}

}  // namespace

int main(int argc, char** argv) {
    std::string real_vectors;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--real-embeddings") real_vectors = argv[i + 1];

    criterion(1, "boolean-oracle equivalence", 30, c1_boolean_oracle);
    criterion(2, "softor closed form", 0, c2_softor);
    criterion(3, "gradient correctness", 60, c3_gradients);
    criterion(4, "DeiVG self-consistency", 120, c4_deivg);
    criterion(5, "DeiCLEVR exactness", 120, c5_deiclevr);
    criterion(6, "mixture learning", 600, c6_mixture);
    criterion(7, "rule validator fidelity", 0, c7_validator);
    criterion(8, "unifier correctness", 0, [&](Outcome& o) { c8_unifier(o, real_vectors); });
    criterion(9, "mAP harness", 0, c9_eval);
    criterion(10, "determinism and offline", 0, c10_determinism_offline);
    std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
