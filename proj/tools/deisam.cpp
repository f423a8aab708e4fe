// Command-line front end: reason, synth, eval, train, graph.
//
// Exit codes: 0 ok, 2 bad input or schema, 3 external service failure,
// 4 internal error (offline violations included).

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "deisam/deisam.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deisam;

namespace {

// ---------------------------------------------------------------------------
// Configuration

json default_config() {
    const RulegenConfig rg;
    const EmbeddingServiceConfig emb;
    return {{"seed", 0},
            {"offline", false},
            {"jobs", 1},
            {"reasoner", {{"gamma", 0.01}, {"steps", 2}, {"target_threshold", 0.2}, {"fallback_low", 0.1},
                          {"fallback_high", 0.4}}},
            {"deiclevr", {{"reasoner_steps", 4}}},
            {"grounding", {{"max_instantiations", 1e7}}},
            {"rulegen", {{"endpoint_url", rg.endpoint_url}, {"model_name", rg.model_name},
                         {"api_key_env_var", rg.api_key_env_var}, {"temperature", rg.temperature},
                         {"max_retries", rg.max_retries}, {"timeout_s", rg.timeout.count()}, {"cot", false},
                         {"repair_rounds", 1}}},
            {"embeddings", {{"endpoint_url", emb.endpoint_url}, {"model_name", emb.model_name},
                            {"api_key_env_var", emb.api_key_env_var}, {"max_retries", emb.max_retries},
                            {"timeout_s", emb.timeout.count()}}},
            {"unifier", {{"similarity", "cosine"}, {"constants", "type"}}},
            {"eval", {{"match_iou", 0.5}}},
            {"train", TrainConfig{}.to_json()}};
}

// Merge `patch` into `base`, refusing keys the defaults do not know and
// values whose JSON type differs from the default.
void merge_config(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw schema_error(path.empty() ? "/" : path, "expected an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string p = path + "/" + it.key();
        if (!base.contains(it.key())) throw schema_error(p, "unknown configuration key");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_config(slot, it.value(), p);
            continue;
        }
        const bool both_numbers = slot.is_number() && it.value().is_number();
        if (!both_numbers && slot.type() != it.value().type()) throw schema_error(p, "wrong value type");
        slot = it.value();
    }
}

template <class T>
T cfg_get(const json& cfg, const std::string& pointer) {
    try {
        return cfg.at(json::json_pointer(pointer)).get<T>();
    } catch (const json::exception& e) {
        throw schema_error(pointer, e.what());
    }
}

ReasonerConfig reasoner_config(const json& cfg, std::uint64_t rng_seed) {
    ReasonerConfig rc;
    rc.gamma = cfg_get<double>(cfg, "/reasoner/gamma");
    rc.steps = cfg_get<int>(cfg, "/reasoner/steps");
    rc.target_threshold = cfg_get<double>(cfg, "/reasoner/target_threshold");
    rc.fallback_low = cfg_get<double>(cfg, "/reasoner/fallback_low");
    rc.fallback_high = cfg_get<double>(cfg, "/reasoner/fallback_high");
    rc.rng_seed = rng_seed;
    rc.validate();
    return rc;
}

GroundingOptions grounding_options(const json& cfg) {
    GroundingOptions g;
    g.max_instantiations = cfg_get<double>(cfg, "/grounding/max_instantiations");
    return g;
}

UnifierOptions unifier_options(const json& cfg) {
    UnifierOptions u;
    const auto sim = cfg_get<std::string>(cfg, "/unifier/similarity");
    if (sim == "cosine")
        u.mode = similarity::cosine;
    else if (sim == "dot")
        u.mode = similarity::dot;
    else
        throw schema_error("/unifier/similarity", "expected cosine or dot");
    const auto consts = cfg_get<std::string>(cfg, "/unifier/constants");
    if (consts == "type")
        u.constants = constant_vocabulary::type_constants;
    else if (consts == "all")
        u.constants = constant_vocabulary::all_constants;
    else
        throw schema_error("/unifier/constants", "expected type or all");
    return u;
}

RulegenConfig rulegen_config(const json& cfg) {
    RulegenConfig rg;
    rg.endpoint_url = cfg_get<std::string>(cfg, "/rulegen/endpoint_url");
    rg.model_name = cfg_get<std::string>(cfg, "/rulegen/model_name");
    rg.api_key_env_var = cfg_get<std::string>(cfg, "/rulegen/api_key_env_var");
    rg.temperature = cfg_get<double>(cfg, "/rulegen/temperature");
    rg.max_retries = cfg_get<int>(cfg, "/rulegen/max_retries");
    rg.timeout = std::chrono::seconds(cfg_get<int>(cfg, "/rulegen/timeout_s"));
    rg.validate();
    return rg;
}

EmbeddingServiceConfig embedding_config(const json& cfg) {
    EmbeddingServiceConfig e;
    e.endpoint_url = cfg_get<std::string>(cfg, "/embeddings/endpoint_url");
    e.model_name = cfg_get<std::string>(cfg, "/embeddings/model_name");
    e.api_key_env_var = cfg_get<std::string>(cfg, "/embeddings/api_key_env_var");
    e.max_retries = cfg_get<int>(cfg, "/embeddings/max_retries");
    e.timeout = std::chrono::seconds(cfg_get<int>(cfg, "/embeddings/timeout_s"));
    return e;
}

EvalConfig eval_config(const json& cfg) {
    EvalConfig e;
    e.match_iou = cfg_get<double>(cfg, "/eval/match_iou");
    e.validate();
    return e;
}

TrainConfig train_config(const json& cfg) {
    TrainConfig t = TrainConfig::from_json(cfg.at("train"));
    t.seed = cfg_get<std::uint64_t>(cfg, "/seed");
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Files, hashes, manifests

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

class Run {
public:
    Run(std::string command, json config, std::string out_dir)
        : command_(std::move(command)), config_(std::move(config)), out_(std::move(out_dir)) {
        std::error_code ec;
        fs::create_directories(out_, ec);
        if (ec) throw input_error("cannot create output directory '" + out_ + "': " + ec.message());
    }

    const json& config() const { return config_; }

    void input(const std::string& path) {
        inputs_.push_back({{"path", path}, {"fnv1a64", hex64(fnv1a(read_bytes(path)))}});
    }

    void write(const std::string& name, const std::string& bytes) {
        write_text_file((fs::path(out_) / name).string(), bytes);
        outputs_.push_back({{"file", name}, {"fnv1a64", hex64(fnv1a(bytes))}});
    }

    // Written last; holds nothing time- or host-dependent so reruns compare
    // equal. The thread count never changes results, so it stays out of the hash.
    void finish() {
        json hashed = config_;
        hashed.erase("jobs");
        json m{{"tool", "deisam"},
               {"version", kVersion},
               {"command", command_},
               {"seed", config_.at("seed")},
               {"jobs", config_.at("jobs")},
               {"config_hash", hex64(fnv1a(hashed.dump()))},
               {"config", hashed},
               {"inputs", inputs_},
               {"outputs", outputs_}};
        write_text_file((fs::path(out_) / "manifest.json").string(), pretty(m));
    }

private:
    std::string command_;
    json config_;
    std::string out_;
    json inputs_ = json::array();
    json outputs_ = json::array();
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be
// written to slot i so the outcome does not depend on scheduling; the
// exception of the lowest failing index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = SIZE_MAX;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (i < failed_at) {
                        failed_at = i;
                        failure = std::current_exception();
                    }
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Shared pieces

json box_json(const Box& b) { return box_fields(json::object(), b); }

json unification_json(const UnificationReport& r) {
    json subs = json::array();
    for (const auto& s : r.substitutions)
        subs.push_back({{"original", s.original},
                        {"replacement", s.replacement},
                        {"similarity", s.similarity},
                        {"kind", s.predicate ? "predicate" : "constant"}});
    return {{"substitutions", std::move(subs)}, {"unresolved", r.unresolved}};
}

json predictions_json(const ReasonResult& rr) {
    json preds = json::array();
    for (std::size_t i = 0; i < rr.predictions.size(); ++i) {
        const auto& p = rr.predictions[i];
        json rules = json::array();
        for (std::size_t r : rr.provenance[i]) rules.push_back(render_rule(rr.program.rules[r]));
        preds.push_back({{"object_id", p.object_id},
                         {"object", p.object_constant},
                         {"box", box_json(p.box)},
                         {"score", p.score},
                         {"fallback", p.fallback},
                         {"rules", std::move(rules)}});
    }
    return preds;
}

std::vector<std::string> scene_relation_predicates(const std::vector<SceneGraph>& scenes) {
    std::set<std::string> preds;
    for (const auto& sg : scenes)
        for (const auto& r : sg.relations) preds.insert(canonical_predicate(r.predicate));
    return {preds.begin(), preds.end()};
}

// Where rules come from for `reason` and `graph`.
struct RuleSource {
    std::string program_file;
    std::string prompt;
    std::vector<std::string> structured;  // joined with ';'
    std::string chat_fixture;
};

void add_rule_source_options(CLI::App* sub, RuleSource& src) {
    auto* prog = sub->add_option("--program", src.program_file, "rule file")->check(CLI::ExistingFile);
    sub->add_option("--prompt", src.prompt, "deictic prompt in natural language");
    sub->add_option("--structured", src.structured, "conditions as 'relation:attribute;...', repeatable (template rules)")
        ->excludes(prog);
    sub->add_option("--chat-fixture", src.chat_fixture, "recorded chat exchanges to replay instead of the service")
        ->check(CLI::ExistingFile);
}

Program obtain_rules(const RuleSource& src, const std::vector<SceneGraph>& scenes, const json& cfg, Run& run) {
    if (!src.program_file.empty()) {
        run.input(src.program_file);
        return parse_program(read_bytes(src.program_file));
    }
    if (!src.structured.empty()) {
        std::string joined;
        for (const auto& part : src.structured) joined += part + ";";
        return template_rulegen(parse_structured(joined));
    }
    if (src.prompt.empty()) throw input_error("give one of --program, --structured or --prompt");

    GenerateOptions go;
    go.cot = cfg_get<bool>(cfg, "/rulegen/cot");
    go.repair_rounds = cfg_get<int>(cfg, "/rulegen/repair_rounds");
    const auto preds = go.cot ? std::vector<std::string>{} : scene_relation_predicates(scenes);
    if (!src.chat_fixture.empty()) {
        run.input(src.chat_fixture);
        auto client = FixtureChatClient::load(src.chat_fixture);
        return generate_rules(src.prompt, preds, client, go);
    }
    if (cfg_get<bool>(cfg, "/offline"))
        throw input_error(
            "offline mode cannot translate a natural-language prompt; pass its structured form with "
            "--structured 'relation:attribute;...' (template mode), give --program or --chat-fixture, "
            "or drop --offline to use the rule-generation service");
    HttpChatClient client(rulegen_config(cfg));
    return generate_rules(src.prompt, preds, client, go);
}

std::vector<SceneGraph> select_scenes(const std::string& path, const std::optional<std::int64_t>& image_id) {
    auto scenes = load_scene_graphs(path);
    if (!image_id) return scenes;
    for (auto& sg : scenes)
        if (sg.image_id == *image_id) return {sg};
    throw input_error("no scene graph with image_id " + std::to_string(*image_id) + " in '" + path + "'");
}

// ---------------------------------------------------------------------------
// Subcommands

struct ReasonArgs {
    std::string scenes, out, embeddings;
    std::optional<std::int64_t> image_id;
    bool fetch_embeddings = false;
    RuleSource rules;
};

void cmd_reason(const ReasonArgs& a, const json& cfg) {
    Run run("reason", cfg, a.out);
    run.input(a.scenes);
    const auto scenes = select_scenes(a.scenes, a.image_id);
    const Program program = obtain_rules(a.rules, scenes, cfg, run);
    const bool offline = cfg_get<bool>(cfg, "/offline");

    std::optional<EmbeddingStore> store;
    if (!a.embeddings.empty()) {
        run.input(a.embeddings);
        store = EmbeddingStore::load_file(a.embeddings);
    } else if (a.fetch_embeddings) {
        if (offline) throw input_error("--fetch-embeddings needs the embedding service; drop --offline or pass --embeddings");
        std::set<std::string> terms;
        for (const auto& sg : scenes) {
            const SceneFacts f = scene_graph_to_facts(sg);
            for (const auto& atom : f.facts.facts())
                for (std::size_t i = 1; i < atom.arity(); ++i) terms.insert(atom.args[i].name);
            for (const auto& atom : f.facts.facts()) terms.insert(atom.predicate);
        }
        for (const auto& r : program.rules)
            for (const Atom* at : [&] {
                     std::vector<const Atom*> v{&r.head};
                     for (const auto& b : r.body) v.push_back(&b);
                     return v;
                 }()) {
                terms.insert(at->predicate);
                for (const auto& t : at->args)
                    if (!t.is_variable()) terms.insert(t.name);
            }
        store = fetch_embeddings({terms.begin(), terms.end()}, embedding_config(cfg));
    }

    const auto uopts = unifier_options(cfg);
    const auto gopts = grounding_options(cfg);
    const auto seed = cfg_get<std::uint64_t>(cfg, "/seed");
    std::vector<json> results(scenes.size());
    parallel_for(scenes.size(), cfg_get<int>(cfg, "/jobs"), [&](std::size_t i) {
        const auto rc = reasoner_config(cfg, mix_seed(seed, i));
        const ReasonResult rr = reason(scenes[i], program, rc, store ? &*store : nullptr, uopts, gopts);
        results[i] = {{"image_id", scenes[i].image_id},
                      {"predictions", predictions_json(rr)},
                      {"unification", unification_json(rr.unification)},
                      {"graph", {{"atoms", rr.num_atoms}, {"conjunctions", rr.num_conjs}}}};
    });

    json out{{"program", render_program(program)}, {"results", results}};
    if (!a.rules.prompt.empty()) out["prompt"] = a.rules.prompt;
    run.write("predictions.json", pretty(out));
    run.write("program.pl", render_program(program));
    run.finish();

    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& r = results[i];
        std::cout << "image " << scenes[i].image_id << ": " << r["predictions"].size() << " prediction(s)";
        for (const auto& s : r["unification"]["substitutions"])
            std::cout << "; " << s["original"].get<std::string>() << " -> " << s["replacement"].get<std::string>();
        std::cout << "\n";
    }
}

struct SynthArgs {
    std::string kind = "deivg", scenes, out, style = "listing", op = "delete";
    std::size_t k = 1, n = 100, num_scenes = 0;
    bool strict = false, rewire = false;
    double drop = 0.5;
};

void cmd_synth(const SynthArgs& a, const json& cfg) {
    Run run("synth", cfg, a.out);
    const auto seed = cfg_get<std::uint64_t>(cfg, "/seed");
    if (a.kind == "deivg") {
        std::vector<SceneGraph> scenes;
        if (!a.scenes.empty()) {
            run.input(a.scenes);
            scenes = load_scene_graphs(a.scenes);
        } else {
            scenes = random_scene_graphs(a.num_scenes ? a.num_scenes : std::max<std::size_t>(a.n / 2, 8), seed);
        }
        SynthesisOptions so;
        so.strict = a.strict;
        if (a.style == "listing")
            so.style = prompt_style::listing;
        else if (a.style == "sentence")
            so.style = prompt_style::sentence;
        else
            throw input_error("--style must be listing or sentence");
        const auto res = synthesize_deivg(scenes, a.k, a.n, seed, so);
        run.write("dataset.json", dump_deivg(res.instances));
        if (a.scenes.empty()) {
            json arr = json::array();
            for (const auto& sg : scenes) arr.push_back(to_json(sg));
            run.write("scene_graphs.json", pretty(arr));
        }
        std::cout << res.instances.size() << " instance(s) from " << res.candidates << " candidate(s)";
        if (res.insufficient) std::cout << " (fewer than requested)";
        std::cout << "\n";
    } else if (a.kind == "deiclevr") {
        const auto data = generate_deiclevr(a.n, parse_list_op(a.op), seed);
        json arr = json::array();
        for (const auto& inst : data) arr.push_back(to_json(inst));
        run.write("dataset.json", pretty(arr));
        std::cout << data.size() << " instance(s)\n";
    } else if (a.kind == "mixture") {
        CorruptionOptions co;
        co.drop_fraction = a.drop;
        co.rewire = a.rewire;
        const auto ex = synthesize_mixture(a.n, seed, co, a.k);
        run.write("dataset.json", pretty(mixture_dataset_json(ex, {"gt", "corrupted"})));
        std::cout << ex.size() << " instance(s)\n";
    } else {
        throw input_error("--kind must be deivg, deiclevr or mixture");
    }
    run.finish();
}

struct EvalArgs {
    std::string kind = "deivg", dataset, scenes, predictions, out;
    RuleSource rules;  // only the chat fixture is used: instances carry their own prompts
    bool llm_rules = false;
};

void cmd_eval(const EvalArgs& a, const json& cfg) {
    Run run("eval", cfg, a.out);
    const EvalConfig ecfg = eval_config(cfg);
    const auto seed = cfg_get<std::uint64_t>(cfg, "/seed");
    const int jobs = cfg_get<int>(cfg, "/jobs");
    std::vector<EvalInstance> instances;

    if (!a.predictions.empty()) {
        run.input(a.predictions);
        instances = eval_instances_from_json(read_json_file(a.predictions));
    } else if (a.kind == "deivg") {
        if (a.dataset.empty() || a.scenes.empty()) throw input_error("deivg evaluation needs --dataset and --scene-graphs");
        run.input(a.dataset);
        run.input(a.scenes);
        const auto data = load_deivg(a.dataset);
        std::map<std::int64_t, SceneGraph> by_id;
        for (auto& sg : load_scene_graphs(a.scenes)) by_id.emplace(sg.image_id, std::move(sg));
        std::unique_ptr<FixtureChatClient> fixture;
        if (a.llm_rules) {
            if (!a.rules.chat_fixture.empty()) {
                run.input(a.rules.chat_fixture);
                fixture = std::make_unique<FixtureChatClient>(FixtureChatClient::load(a.rules.chat_fixture));
            } else if (cfg_get<bool>(cfg, "/offline")) {
                throw input_error("--llm-rules in offline mode needs --chat-fixture; drop --llm-rules to use template rules");
            }
        }
        std::vector<Program> programs(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!by_id.count(data[i].image_id))
                throw input_error("instance " + std::to_string(i) + " refers to image " +
                                  std::to_string(data[i].image_id) + " which is not in '" + a.scenes + "'");
            if (!a.llm_rules) {
                programs[i] = template_rulegen(data[i].structured);
                continue;
            }
            GenerateOptions go;
            go.cot = cfg_get<bool>(cfg, "/rulegen/cot");
            go.repair_rounds = cfg_get<int>(cfg, "/rulegen/repair_rounds");
            const auto preds = go.cot ? std::vector<std::string>{}
                                      : scene_relation_predicates({by_id.at(data[i].image_id)});
            if (fixture) {
                programs[i] = generate_rules(data[i].deictic_prompt, preds, *fixture, go);
            } else {
                HttpChatClient client(rulegen_config(cfg));
                programs[i] = generate_rules(data[i].deictic_prompt, preds, client, go);
            }
        }
        instances.resize(data.size());
        const auto gopts = grounding_options(cfg);
        parallel_for(data.size(), jobs, [&](std::size_t i) {
            const auto rr = reason(by_id.at(data[i].image_id), programs[i], reasoner_config(cfg, mix_seed(seed, i)),
                                   nullptr, {}, gopts);
            EvalInstance& in = instances[i];
            in.id = std::to_string(i);
            for (const auto& ans : data[i].answers) in.answers.push_back(ans.box);
            for (const auto& p : rr.predictions) in.predictions.push_back({p.box, p.score});
        });
    } else if (a.kind == "deiclevr") {
        if (a.dataset.empty()) throw input_error("deiclevr evaluation needs --dataset");
        run.input(a.dataset);
        const json j = read_json_file(a.dataset);
        if (!j.is_array()) throw schema_error("/", "expected an array of instances");
        std::vector<ClevrInstance> data;
        for (std::size_t i = 0; i < j.size(); ++i) data.push_back(clevr_instance_from_json(j[i], "/" + std::to_string(i)));
        instances.resize(data.size());
        const auto gopts = grounding_options(cfg);
        parallel_for(data.size(), jobs, [&](std::size_t i) {
            ReasonerConfig rc = reasoner_config(cfg, mix_seed(seed, i));
            rc.steps = cfg_get<int>(cfg, "/deiclevr/reasoner_steps");
            const auto rr = reason_facts(clevr_facts(data[i].scene), clevr_program(data[i]), rc, nullptr, {}, gopts);
            EvalInstance& in = instances[i];
            in.id = std::to_string(i);
            in.answers.push_back(data[i].scene.objects[data[i].answer].box);
            for (const auto& p : rr.predictions) in.predictions.push_back({p.box, p.score});
        });
    } else {
        throw input_error("--kind must be deivg or deiclevr");
    }

    const EvalReport rep = evaluate(instances, ecfg);
    if (a.predictions.empty()) run.write("predictions.json", pretty(eval_instances_to_json(instances)));
    run.write("report.json", pretty(rep.to_json()));
    run.finish();
    std::cout << rep.table();
}

struct TrainArgs {
    std::string data, out, resume, split;
};

void cmd_train(const TrainArgs& a, const json& cfg) {
    Run run("train", cfg, a.out);
    const TrainConfig tc = train_config(cfg);
    const EvalConfig ecfg = eval_config(cfg);
    run.input(a.data);
    const MixtureDataset ds = mixture_dataset_from_json(read_json_file(a.data));
    const std::size_t n = ds.examples.size();

    std::size_t n_train = n * 3 / 5, n_val = n / 5;
    if (!a.split.empty()) {
        std::vector<std::size_t> parts;
        std::stringstream ss(a.split);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                parts.push_back(std::stoul(tok));
            } catch (const std::exception&) {
                throw input_error("--split expects three counts like 1200,400,400");
            }
        }
        if (parts.size() != 3 || parts[0] + parts[1] + parts[2] > n || parts[0] == 0)
            throw input_error("--split needs three counts, a positive training count and a sum of at most " +
                              std::to_string(n));
        n_train = parts[0];
        n_val = parts[1];
    }
    const std::size_t n_test = a.split.empty() ? n - n_train - n_val : std::stoul(a.split.substr(a.split.rfind(',') + 1));

    std::vector<CompiledExample> compiled(n_train + n_val + n_test);
    parallel_for(compiled.size(), cfg_get<int>(cfg, "/jobs"),
                 [&](std::size_t i) { compiled[i] = compile_example(ds.examples[i]); });
    const std::vector<CompiledExample> train(compiled.begin(), compiled.begin() + n_train);
    const std::vector<CompiledExample> val(compiled.begin() + n_train, compiled.begin() + n_train + n_val);
    const std::vector<CompiledExample> test(compiled.begin() + n_train + n_val, compiled.end());

    std::optional<TrainState> resume;
    if (!a.resume.empty()) {
        run.input(a.resume);
        resume = checkpoint_from_json(read_json_file(a.resume));
    }
    const std::size_t nsrc = ds.source_names.size();
    const auto theta0 = resume ? resume->theta : initial_theta(nsrc, tc);
    auto maybe_map = [&](const std::vector<CompiledExample>& set, const std::vector<double>& th) -> json {
        if (set.empty()) return nullptr;
        return mixture_map(set, th, tc, ecfg);
    };
    const json initial{{"val_mAP", maybe_map(val, theta0)}, {"test_mAP", maybe_map(test, theta0)}};

    const TrainResult res = train_mixture(train, val, nsrc, tc, resume);
    const json final_{{"val_mAP", maybe_map(val, res.theta)}, {"test_mAP", maybe_map(test, res.theta)}};

    json weights = json::object();
    for (std::size_t k = 0; k < nsrc; ++k) weights[ds.source_names[k]] = res.weights[k];
    const json report{{"sources", ds.source_names},
                      {"split", {n_train, n_val, n_test}},
                      {"theta", res.theta},
                      {"weights", weights},
                      {"initial", initial},
                      {"final", final_}};
    run.write("checkpoint.json", pretty(checkpoint_json(res.state, tc, ds.source_names)));
    run.write("trace.csv", trace_csv(res.trace));
    run.write("report.json", pretty(report));
    run.finish();

    for (std::size_t k = 0; k < nsrc; ++k)
        std::cout << ds.source_names[k] << " weight " << res.weights[k] << "\n";
    if (!val.empty())
        std::cout << "val mAP " << initial["val_mAP"].get<double>() << " -> " << final_["val_mAP"].get<double>()
                  << "\n";
}

struct GraphArgs {
    std::string scenes, out;
    std::optional<std::int64_t> image_id;
    RuleSource rules;
};

void cmd_graph(const GraphArgs& a, const json& cfg) {
    Run run("graph", cfg, a.out);
    run.input(a.scenes);
    const auto scenes = select_scenes(a.scenes, a.image_id);
    if (scenes.size() != 1) throw input_error("graph dumps one scene; pick it with --image-id");
    const Program program = obtain_rules(a.rules, scenes, cfg, run);
    auto [rules, facts] = fold_program_facts(program, scene_graph_to_facts(scenes.front()));
    const ReasoningGraph g = compile(rules, facts.facts, grounding_options(cfg));
    run.write("graph.json", pretty(to_json(g)));
    run.finish();
    std::cout << g.num_atoms() << " atoms, " << g.num_conjs() << " conjunctions\n";
}

int exit_code(error_class c) {
    switch (c) {
        case error_class::input: return 2;
        case error_class::service: return 3;
        case error_class::internal: return 4;
    }
    return 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable forward reasoning over scene graphs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs, reasoner_steps;
    std::optional<double> gamma, threshold, match_iou;
    bool offline = false;
    app.add_option("--config", config_file, "JSON configuration; flags override it")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed");
    app.add_option("--jobs", jobs, "parallel instances")->check(CLI::PositiveNumber);
    app.add_flag("--offline", offline, "forbid all network access");
    app.add_option("--gamma", gamma, "softor smoothing");
    app.add_option("--reasoner-steps", reasoner_steps, "forward-chaining steps");
    app.add_option("--threshold", threshold, "target score threshold");
    app.add_option("--match-iou", match_iou, "IoU needed for a true positive");
    app.fallthrough();

    ReasonArgs ra;
    auto* reason_cmd = app.add_subcommand("reason", "segment the objects a prompt refers to");
    reason_cmd->add_option("--scene-graphs", ra.scenes, "scene graph JSON (one or an array)")
        ->required()
        ->check(CLI::ExistingFile);
    reason_cmd->add_option("--image-id", ra.image_id, "only this scene");
    reason_cmd->add_option("--out", ra.out, "output directory")->required();
    reason_cmd->add_option("--embeddings", ra.embeddings, "word2vec text file for unification")->check(CLI::ExistingFile);
    reason_cmd->add_flag("--fetch-embeddings", ra.fetch_embeddings, "embed the vocabulary through the service");
    add_rule_source_options(reason_cmd, ra.rules);

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "generate a dataset");
    synth_cmd->add_option("--kind", sa.kind, "deivg, deiclevr or mixture");
    synth_cmd->add_option("--k", sa.k, "conditions per prompt");
    synth_cmd->add_option("--n", sa.n, "instances");
    synth_cmd->add_option("--scene-graphs", sa.scenes, "source scene graphs (deivg)")->check(CLI::ExistingFile);
    synth_cmd->add_option("--num-scenes", sa.num_scenes, "synthetic scenes to draw when none are given");
    synth_cmd->add_option("--style", sa.style, "listing or sentence");
    synth_cmd->add_flag("--strict", sa.strict, "fail when fewer than n instances exist");
    synth_cmd->add_option("--op", sa.op, "delete or sort (deiclevr)");
    synth_cmd->add_option("--drop", sa.drop, "relation drop fraction of the corrupted source (mixture)");
    synth_cmd->add_flag("--rewire", sa.rewire, "reattach dropped relations instead of removing them (mixture)");
    synth_cmd->add_option("--out", sa.out, "output directory")->required();

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "mean average precision of the pipeline or of a predictions file");
    eval_cmd->add_option("--kind", ea.kind, "deivg or deiclevr");
    eval_cmd->add_option("--dataset", ea.dataset, "dataset from synth")->check(CLI::ExistingFile);
    eval_cmd->add_option("--scene-graphs", ea.scenes, "scene graphs the dataset refers to")->check(CLI::ExistingFile);
    eval_cmd->add_option("--predictions", ea.predictions, "score an existing predictions file instead")
        ->check(CLI::ExistingFile);
    eval_cmd->add_flag("--llm-rules", ea.llm_rules, "generate rules from the prompts instead of the structured form");
    eval_cmd->add_option("--chat-fixture", ea.rules.chat_fixture, "recorded chat exchanges")->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", ea.out, "output directory")->required();

    TrainArgs ta;
    std::optional<int> train_steps;
    std::optional<double> lr, init_spread;
    std::optional<std::size_t> batch;
    auto* train_cmd = app.add_subcommand("train", "learn scene-graph source weights");
    train_cmd->add_option("--data", ta.data, "mixture dataset")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--split", ta.split, "train,val,test counts taken in order");
    train_cmd->add_option("--steps", train_steps, "optimizer steps");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--batch-size", batch, "examples per step");
    train_cmd->add_option("--init-spread", init_spread, "uniform jitter of the initial logits");
    train_cmd->add_option("--resume", ta.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", ta.out, "output directory")->required();

    GraphArgs ga;
    auto* graph_cmd = app.add_subcommand("graph", "dump the grounded reasoning graph");
    graph_cmd->add_option("--scene-graphs", ga.scenes, "scene graph JSON")->required()->check(CLI::ExistingFile);
    graph_cmd->add_option("--image-id", ga.image_id, "scene to use");
    graph_cmd->add_option("--out", ga.out, "output directory")->required();
    add_rule_source_options(graph_cmd, ga.rules);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        json cfg = default_config();
        if (!config_file.empty()) merge_config(cfg, read_json_file(config_file), "");
        if (seed) cfg["seed"] = *seed;
        if (jobs) cfg["jobs"] = *jobs;
        if (offline) cfg["offline"] = true;
        if (gamma) cfg["reasoner"]["gamma"] = *gamma;
        if (reasoner_steps) cfg["reasoner"]["steps"] = *reasoner_steps;
        if (threshold) cfg["reasoner"]["target_threshold"] = *threshold;
        if (match_iou) cfg["eval"]["match_iou"] = *match_iou;
        if (train_steps) cfg["train"]["steps"] = *train_steps;
        if (lr) cfg["train"]["lr"] = *lr;
        if (batch) cfg["train"]["batch_size"] = *batch;
        if (init_spread) cfg["train"]["init_spread"] = *init_spread;
        if (cfg_get<int>(cfg, "/jobs") < 1) throw schema_error("/jobs", "must be >= 1");

        std::optional<net::offline_scope> guard;
        if (cfg_get<bool>(cfg, "/offline")) guard.emplace();

        if (*reason_cmd) cmd_reason(ra, cfg);
        if (*synth_cmd) cmd_synth(sa, cfg);
        if (*eval_cmd) cmd_eval(ea, cfg);
        if (*train_cmd) cmd_train(ta, cfg);
        if (*graph_cmd) cmd_graph(ga, cfg);
        return 0;
    } catch (const deisam::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.cls());
    } catch (const json::exception& e) {
        std::cerr << "error: malformed JSON input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}
