#pragma once

// Deictic prompt -> logic program: prompt assembly, chat-completion clients
// (HTTP and recorded fixtures), the rule validator with one repair round,
// and the deterministic template generator for structured prompts.

#include <cctype>
#include <chrono>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "deisam/error.hpp"
#include "deisam/logic.hpp"
#include "deisam/net.hpp"
#include "deisam/scene.hpp"

namespace deisam {

// ---------------------------------------------------------------------------
// Prompts

inline constexpr const char* kRuleSystemPrompt =
    "Given a deictic representation and available predicates, generate rules in the format.\n"
    "target(X):-cond1(X),...condn(X).\n"
    "cond1(X):-pred1(X,Y),type(Y,const1).\n"
    "...\n"
    "condn(X):-predn(X,Y),type(Y,const2).\n"
    "Use predicates and constants that appear in the given sentence. \n"
    "Capitalize variables: X, Y, Z, W, etc.";

// Reconstructed; the predicate-extraction wording of the original is unknown.
inline constexpr const char* kPredicateSystemPrompt =
    "Given a deictic representation, list the relations it uses between the target object and other objects.\n"
    "Answer with one line of the form\n"
    "available predicates: pred1,pred2,...\n"
    "Write each relation in lowercase with words joined by underscores, e.g. next_to, in_front_of.";

struct FewShotExample {
    std::string user;
    std::string assistant;
};

inline const std::vector<FewShotExample>& default_few_shot() {
    static const std::vector<FewShotExample> examples{
        {"an object that is next to a keyboard.\navailable predicates: next_to",
         "cond1(X):-next_to(X,Y),type(Y,keyboard).\ntarget(X):-cond1(X)."},
        {"an object that is on a desk.\navailable predicates: on",
         "cond1(X):-on(X,Y),type(Y,desk).\ntarget(X):-cond1(X)."},
        {"an object that is on a ground, and that is behind a white line.\navailable predicates: on,behind",
         "cond1(X):-on(X,Y),type(Y,ground).\ncond2(X):-behind(X,Y),type(Y,whiteline).\ntarget(X):-cond1(X),cond2(X)"},
        {"an object that is near a desk and against wall.\navailable predicates: near,against",
         "cond1(X):-near(X,Y),type(Y,desk).\ncond2(X):-against(X,Y),type(Y,wall).\ntarget(X):-cond1(X),cond2(X)."},
        {"an object that has sides, that is on a pole, and that is above a stop sign.\n"
         "available predicates: has,on,above",
         "cond1(X):-has(X,Y),type(Y,sides).\ncond2(X):-on(X,Y),type(Y,pole).\n"
         "cond3(X):-above(X,Y),type(Y,stopsign).\ntarget(X):-cond1(X),cond2(X),cond3(X)."},
        {"an object that is wearing a shirt, that has a hair, and that is wearing shoes.\n"
         "available predicates: wearing,has,wearing",
         "cond1(X):-wearing(X,Y),type(Y,shirt).\ncond2(X):-has(X,Y),type(Y,hair).\n"
         "cond3(X):-wearing(X,Y),type(Y,shoes).\ntarget(X):-cond1(X),cond2(X),cond3(X)."},
    };
    return examples;
}

struct PromptBundle {
    std::string system;
    std::vector<FewShotExample> few_shot;
    std::string user;
    bool cot = false;
    std::string deictic;  // the bare sentence, used by the predicate-extraction pass
};

/// The sentence, then "available predicates: p1,p2,..." when any are given.
inline std::string rule_user_turn(const std::string& deictic, const std::vector<std::string>& predicates) {
    std::string user = deictic;
    if (!predicates.empty()) {
        user += "\navailable predicates: ";
        for (std::size_t i = 0; i < predicates.size(); ++i) {
            if (i) user.push_back(',');
            user += predicates[i];
        }
    }
    return user;
}

inline PromptBundle build_prompt(const std::string& deictic, const std::vector<std::string>& predicates,
                                 bool cot = false) {
    if (deictic.empty()) throw input_error("empty deictic prompt");
    PromptBundle b;
    b.system = kRuleSystemPrompt;
    b.few_shot = default_few_shot();
    b.user = rule_user_turn(deictic, predicates);
    b.cot = cot;
    b.deictic = deictic;
    return b;
}

// ---------------------------------------------------------------------------
// Chat clients

struct ChatMessage {
    std::string role;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

inline nlohmann::json to_json(const std::vector<ChatMessage>& msgs) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : msgs) j.push_back({{"role", m.role}, {"content", m.content}});
    return j;
}

inline std::vector<ChatMessage> chat_messages(const PromptBundle& b) {
    std::vector<ChatMessage> msgs{{"system", b.system}};
    for (const auto& ex : b.few_shot) {
        msgs.push_back({"user", ex.user});
        msgs.push_back({"assistant", ex.assistant});
    }
    msgs.push_back({"user", b.user});
    return msgs;
}

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

struct RulegenConfig {
    std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
    std::string model_name = "gpt-3.5-turbo";
    std::string api_key_env_var = "OPENAI_API_KEY";
    double temperature = 0.0;
    int max_retries = 3;
    std::chrono::seconds timeout{30};
    std::chrono::milliseconds initial_backoff{500};

    void validate() const {
        if (max_retries < 0) throw input_error("max_retries must be >= 0");
    }
};

/// OpenAI-style chat-completion endpoint.
class HttpChatClient : public ChatClient {
public:
    explicit HttpChatClient(RulegenConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    std::string complete(const std::vector<ChatMessage>& messages) override {
        net::ensure_online("chat completion");
        const std::string key = net::api_key_from_env(cfg_.api_key_env_var);
        nlohmann::json body{{"model", cfg_.model_name}, {"messages", to_json(messages)},
                            {"temperature", cfg_.temperature}};
        net::RetryPolicy retry;
        retry.max_retries = cfg_.max_retries;
        retry.initial_backoff = cfg_.initial_backoff;
        const nlohmann::json res = net::post_json(cfg_.endpoint_url, body, key, cfg_.timeout, retry);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw service_error("chat completion response has no choices[0].message.content");
        }
    }

private:
    RulegenConfig cfg_;
};

/// Replays recorded exchanges: a JSON array of {request, response} where
/// request is {"messages": [...]} (or the bare message array) and response
/// is the assistant text. Unmatched requests are a service error.
class FixtureChatClient : public ChatClient {
public:
    struct Exchange {
        std::vector<ChatMessage> request;
        std::string response;
        std::optional<std::string> last_user;  // match on the final user turn only
    };

    FixtureChatClient() = default;
    explicit FixtureChatClient(std::vector<Exchange> ex) : exchanges_(std::move(ex)) {}

    static FixtureChatClient from_json(const nlohmann::json& j) {
        if (!j.is_array()) throw schema_error("/", "fixture file must be an array of exchanges");
        std::vector<Exchange> ex;
        for (std::size_t i = 0; i < j.size(); ++i) {
            const std::string path = "/" + std::to_string(i);
            const auto& e = j[i];
            if (!e.is_object() || !e.contains("request") || !e.contains("response"))
                throw schema_error(path, "exchange needs 'request' and 'response'");
            const auto& req = e["request"].is_object() ? e["request"].value("messages", nlohmann::json::array())
                                                       : e["request"];
            Exchange x;
            if (e["request"].is_object() && e["request"].contains("user")) {
                x.last_user = e["request"]["user"].get<std::string>();
            } else {
                for (const auto& m : req) x.request.push_back({m.value("role", ""), m.value("content", "")});
            }
            if (!e["response"].is_string()) throw schema_error(path + "/response", "expected a string");
            x.response = e["response"].get<std::string>();
            ex.push_back(std::move(x));
        }
        return FixtureChatClient(std::move(ex));
    }

    static FixtureChatClient load(const std::string& path) { return from_json(read_json_file(path)); }

    void add(std::vector<ChatMessage> request, std::string response) {
        exchanges_.push_back({std::move(request), std::move(response), std::nullopt});
    }

    std::string complete(const std::vector<ChatMessage>& messages) override {
        ++calls_;
        for (const auto& e : exchanges_) {
            if (e.last_user) {
                if (!messages.empty() && messages.back().role == "user" && messages.back().content == *e.last_user)
                    return e.response;
            } else if (e.request == messages) {
                return e.response;
            }
        }
        throw service_error("no recorded exchange matches the request (last user turn: '" +
                            (messages.empty() ? std::string() : messages.back().content) + "')");
    }

    std::size_t calls() const noexcept { return calls_; }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& e : exchanges_) {
            if (e.last_user)
                j.push_back({{"request", {{"user", *e.last_user}}}, {"response", e.response}});
            else
                j.push_back({{"request", {{"messages", deisam::to_json(e.request)}}}, {"response", e.response}});
        }
        return j;
    }

private:
    std::vector<Exchange> exchanges_;
    std::size_t calls_ = 0;
};

/// Parses "available predicates: a,b" (or a bare comma list) from a reply.
inline std::vector<std::string> parse_predicate_list(const std::string& text) {
    std::string line = text;
    const std::string marker = "available predicates:";
    if (auto pos = text.find(marker); pos != std::string::npos) {
        line = text.substr(pos + marker.size());
        line = line.substr(0, line.find('\n'));
    } else {
        line = line.substr(0, line.find('\n'));
    }
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        std::string p = canonical_predicate(cur);
        if (!cur.empty() && p != "related") out.push_back(p);
        cur.clear();
    };
    for (char c : line) {
        if (c == ',')
            flush();
        else
            cur.push_back(c);
    }
    flush();
    return out;
}

/// Calls the model. With cot=true a first exchange extracts the predicates,
/// which are then injected into the rule-generation user turn.
inline std::string request_rules(const PromptBundle& bundle, ChatClient& client) {
    if (!bundle.cot) return client.complete(chat_messages(bundle));
    const std::vector<ChatMessage> extract{{"system", kPredicateSystemPrompt}, {"user", bundle.deictic}};
    const auto predicates = parse_predicate_list(client.complete(extract));
    PromptBundle second = bundle;
    second.user = rule_user_turn(bundle.deictic, predicates);
    return client.complete(chat_messages(second));
}

// ---------------------------------------------------------------------------
// Validation

/// Keeps lines that start like a rule (optional weight, then `name(`);
/// prose and code fences are dropped.
inline std::vector<std::string> extract_rule_lines(const std::string& text) {
    static const std::regex rule_start(R"(^([0-9][0-9.eE+-]*\s*:\s*)?[a-z][A-Za-z0-9_]*\(.*$)");
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (std::regex_match(line, rule_start)) out.push_back(line);
    }
    return out;
}

namespace detail {

inline bool is_condition_variable(const std::string& v) {
    return v == "X" || v == "Y" || v == "Z" || v == "W";
}

inline format_category category_of(syntax_kind k) {
    switch (k) {
    case syntax_kind::lowercase_variable: return format_category::lowercase_variable;
    case syntax_kind::arity_mismatch: return format_category::arity_drift;
    default: return format_category::syntax;
    }
}

}  // namespace detail

/// Parses LLM output into a program of the restricted shape
///
///   condI(X) :- rel(X,Y), type(Y,const).   (or a single unary/binary atom)
///   target(X) :- cond1(X), ..., condN(X).
///
/// `allowed_predicates`, when non-empty, lists the relation predicates the
/// rules may use. Throws format_error naming every violated check.
inline Program validate_rules(const std::string& text, const std::vector<std::string>& allowed_predicates = {}) {
    const auto lines = extract_rule_lines(text);
    if (lines.empty()) throw format_error({{format_category::no_rules, "no rule-like lines in the reply"}});
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";

    // Lowercase single letters in argument positions are variables written
    // in lowercase; report them even when the line still parses.
    static const std::regex lower_var(R"([(,]\s*([a-z])\s*[,)])");
    for (const auto& l : lines) {
        std::smatch m;
        if (std::regex_search(l, m, lower_var))
            throw format_error({{format_category::lowercase_variable,
                                 "'" + m[1].str() + "' in '" + l + "' must be a capitalized variable"}});
    }

    Program p;
    try {
        p = parse_program(joined);
    } catch (const syntax_error& e) {
        throw format_error({{detail::category_of(e.kind()), e.what()}});
    }

    std::vector<format_violation> v;
    std::set<std::string> allowed;
    for (const auto& a : allowed_predicates) allowed.insert(canonical_predicate(a));

    for (const auto& r : p.rules)
        for (const auto& var : r.variables())
            if (!detail::is_condition_variable(var))
                v.push_back({format_category::bad_variable, "variable " + var + " in '" + render_rule(r) +
                                                                 "' (use X, Y, Z, W)"});

    std::vector<const Rule*> targets;
    for (const auto& r : p.rules)
        if (r.head.predicate == "target") targets.push_back(&r);
    if (targets.empty()) v.push_back({format_category::missing_target, "no rule defines target/1"});
    if (targets.size() > 1)
        v.push_back({format_category::multiple_targets, std::to_string(targets.size()) + " rules define target"});

    std::set<std::string> used_conditions;
    if (targets.size() == 1) {
        const Rule& t = *targets.front();
        if (t.head.arity() != 1 || !t.head.args[0].is_variable())
            v.push_back({format_category::condition_shape, "target head must be target(X)"});
        for (const auto& b : t.body) {
            std::size_t defs = 0;
            for (const auto& r : p.rules) defs += r.head.predicate == b.predicate;
            if (defs == 0)
                v.push_back({format_category::undefined_condition, "condition " + b.predicate + " is never defined"});
            else if (defs > 1)
                v.push_back({format_category::duplicate_condition,
                             "condition " + b.predicate + " is defined " + std::to_string(defs) + " times"});
            if (b.arity() != 1 || b.args != t.head.args)
                v.push_back({format_category::condition_shape, "target body atom " + b.str() + " must share target's variable"});
            used_conditions.insert(b.predicate);
        }
    }

    for (const auto& r : p.rules) {
        if (r.head.predicate == "target") continue;
        const std::string rr = render_rule(r);
        if (!used_conditions.count(r.head.predicate)) {
            v.push_back({format_category::condition_shape, "rule '" + rr + "' is not used by target"});
            continue;
        }
        if (r.head.arity() != 1 || !r.head.args[0].is_variable()) {
            v.push_back({format_category::condition_shape, "condition head in '" + rr + "' must be unary with a variable"});
            continue;
        }
        const Term& x = r.head.args[0];
        const Atom* relation = nullptr;
        if (r.body.size() == 2) {
            const Atom& rel = r.body[0];
            const Atom& ty = r.body[1];
            const bool ok = rel.arity() == 2 && rel.args[0] == x && rel.args[1].is_variable() && rel.args[1] != x &&
                            ty.predicate == "type" && ty.arity() == 2 && ty.args[0] == rel.args[1] &&
                            ty.args[1].is_constant();
            if (!ok)
                v.push_back({format_category::condition_shape, "'" + rr + "' must read cond(X):-rel(X,Y),type(Y,const)"});
            relation = &rel;
        } else if (r.body.size() == 1) {
            const Atom& a = r.body[0];
            if ((a.arity() != 1 && a.arity() != 2) || a.args[0] != x)
                v.push_back({format_category::condition_shape, "'" + rr + "' must use a unary or binary atom on X"});
            relation = &a;
        } else {
            v.push_back({format_category::condition_shape,
                         "'" + rr + "' has " + std::to_string(r.body.size()) + " body atoms (expected 1 or 2)"});
        }
        if (relation && !allowed.empty() && relation->predicate != "type" && !allowed.count(relation->predicate))
            v.push_back({format_category::unknown_predicate,
                         "predicate " + relation->predicate + " is not among the available predicates"});
    }
    if (!v.empty()) throw format_error(std::move(v));
    return p;
}

struct GenerateOptions {
    bool cot = false;
    int repair_rounds = 1;
};

/// build_prompt -> request_rules -> validate_rules, re-prompting with the
/// validator's message on failure.
inline Program generate_rules(const std::string& deictic, const std::vector<std::string>& predicates,
                              ChatClient& client, const GenerateOptions& opts = {}) {
    PromptBundle bundle = build_prompt(deictic, predicates, opts.cot);
    std::string reply = request_rules(bundle, client);
    for (int round = 0;; ++round) {
        try {
            return validate_rules(reply, predicates);
        } catch (const format_error& e) {
            if (round >= opts.repair_rounds) throw;
            auto msgs = chat_messages(bundle);
            msgs.push_back({"assistant", reply});
            msgs.push_back({"user", std::string("The rules are not in the required format. ") + e.what() +
                                        "\nPlease output corrected rules only."});
            reply = client.complete(msgs);
        }
    }
}

// ---------------------------------------------------------------------------
// Template generator

struct Condition {
    std::string relation;   // surface phrase or predicate ("parked on", "parked_on")
    std::string attribute;  // object name ("white line")

    friend bool operator==(const Condition&, const Condition&) = default;
    friend auto operator<=>(const Condition&, const Condition&) = default;
};

/// condI(X):-relI(X,Y),type(Y,attrI). for each condition, then the target rule.
inline Program template_rulegen(const std::vector<Condition>& structured) {
    if (structured.empty()) throw input_error("template_rulegen needs at least one condition");
    Program p;
    Rule target;
    target.head = Atom("target", {Term::var("X")});
    for (std::size_t i = 0; i < structured.size(); ++i) {
        const std::string cond = "cond" + std::to_string(i + 1);
        Rule r;
        r.head = Atom(cond, {Term::var("X")});
        r.body.push_back(Atom(canonical_predicate(structured[i].relation), {Term::var("X"), Term::var("Y")}));
        r.body.push_back(Atom("type", {Term::var("Y"), Term::constant(canonical_constant(structured[i].attribute))}));
        p.rules.push_back(std::move(r));
        target.body.push_back(Atom(cond, {Term::var("X")}));
    }
    p.rules.push_back(std::move(target));
    return p;
}

/// "on:boat;holding:umbrella" -> [(on, boat), (holding, umbrella)].
inline std::vector<Condition> parse_structured(const std::string& spec) {
    std::vector<Condition> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        std::size_t end = spec.find(';', start);
        if (end == std::string::npos) end = spec.size();
        const std::string item = spec.substr(start, end - start);
        start = end + 1;
        if (item.find_first_not_of(" \t") == std::string::npos) {
            if (end == spec.size()) break;
            continue;
        }
        const auto colon = item.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == item.size())
            throw input_error("structured condition '" + item + "' must read relation:attribute");
        out.push_back({item.substr(0, colon), item.substr(colon + 1)});
        if (end == spec.size()) break;
    }
    if (out.empty()) throw input_error("empty structured prompt");
    return out;
}

}  // namespace deisam
