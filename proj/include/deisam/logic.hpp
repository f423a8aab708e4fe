#pragma once

// First-order language of definite clauses: terms, atoms, rules, programs,
// plus the line-oriented rule text format
//
//     [weight:] head(Args) [:- body1(Args), body2(Args), ...].
//
// Blank lines and lines starting with '%' are ignored.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deisam/error.hpp"

namespace deisam {

// ---------------------------------------------------------------------------
// Lexical helpers

inline bool is_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

inline bool is_variable_name(std::string_view s) {
    if (s.empty() || !std::isupper(static_cast<unsigned char>(s.front()))) return false;
    for (char c : s)
        if (!is_name_char(c)) return false;
    return true;
}

inline bool is_constant_name(std::string_view s) {
    if (s.empty()) return false;
    const auto f = static_cast<unsigned char>(s.front());
    if (!std::islower(f) && !std::isdigit(f)) return false;
    for (char c : s)
        if (!is_name_char(c)) return false;
    return true;
}

/// Object or attribute name -> constant: lowercase, drop everything outside
/// [a-z0-9_] (so "white line" -> "whiteline"). Idempotent.
inline std::string canonical_constant(std::string_view s) {
    std::string out;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) || c == '_') out.push_back(static_cast<char>(std::tolower(u)));
    }
    std::size_t lead = 0;
    while (lead < out.size() && out[lead] == '_') ++lead;
    out.erase(0, lead);
    if (out.empty()) return "unnamed";
    return out;
}

/// Relation phrase -> predicate: lowercase, whitespace/hyphen runs become one
/// underscore ("parked on" -> "parked_on"). Idempotent.
inline std::string canonical_predicate(std::string_view s) {
    std::string out;
    bool pending_sep = false;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            if (pending_sep && !out.empty()) out.push_back('_');
            pending_sep = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        } else if (c == '_' || c == '-' || std::isspace(u)) {
            pending_sep = true;
        }
    }
    if (out.empty()) return "related";
    return out;
}

// ---------------------------------------------------------------------------
// Terms and atoms

struct Term {
    enum class Kind { variable, constant };

    Kind kind = Kind::constant;
    std::string name;

    static Term var(std::string n) { return {Kind::variable, std::move(n)}; }
    static Term constant(std::string n) { return {Kind::constant, std::move(n)}; }

    bool is_variable() const noexcept { return kind == Kind::variable; }
    bool is_constant() const noexcept { return kind == Kind::constant; }

    friend bool operator==(const Term&, const Term&) = default;
    friend auto operator<=>(const Term&, const Term&) = default;
};

struct Predicate {
    std::string name;
    std::size_t arity = 0;

    friend bool operator==(const Predicate&, const Predicate&) = default;
    friend auto operator<=>(const Predicate&, const Predicate&) = default;
};

struct Atom {
    std::string predicate;
    std::vector<Term> args;

    Atom() = default;
    Atom(std::string pred, std::vector<Term> a) : predicate(std::move(pred)), args(std::move(a)) {}

    /// Ground atom from constant names.
    static Atom fact(std::string pred, std::initializer_list<std::string> consts) {
        Atom a;
        a.predicate = std::move(pred);
        for (const auto& c : consts) a.args.push_back(Term::constant(c));
        return a;
    }

    Predicate signature() const { return {predicate, args.size()}; }
    std::size_t arity() const noexcept { return args.size(); }

    bool ground() const noexcept {
        for (const auto& t : args)
            if (t.is_variable()) return false;
        return true;
    }

    std::string str() const {
        std::string out = predicate;
        out.push_back('(');
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (i) out.push_back(',');
            out += args[i].name;
        }
        out.push_back(')');
        return out;
    }

    friend bool operator==(const Atom&, const Atom&) = default;
    friend auto operator<=>(const Atom&, const Atom&) = default;
};

struct AtomHash {
    std::size_t operator()(const Atom& a) const noexcept {
        std::size_t h = std::hash<std::string>{}(a.predicate);
        for (const auto& t : a.args) {
            h ^= std::hash<std::string>{}(t.name) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            h += static_cast<std::size_t>(t.kind);
        }
        return h;
    }
};

struct Rule {
    Atom head;
    std::vector<Atom> body;
    double weight = 1.0;

    bool is_fact() const noexcept { return body.empty(); }

    /// Variables in order of first occurrence (head first, then body).
    std::vector<std::string> variables() const {
        std::vector<std::string> out;
        auto visit = [&](const Atom& a) {
            for (const auto& t : a.args)
                if (t.is_variable() && std::find(out.begin(), out.end(), t.name) == out.end())
                    out.push_back(t.name);
        };
        visit(head);
        for (const auto& b : body) visit(b);
        return out;
    }

    friend bool operator==(const Rule&, const Rule&) = default;
};

struct Program {
    std::vector<Rule> rules;

    bool empty() const noexcept { return rules.empty(); }
    std::size_t size() const noexcept { return rules.size(); }

    /// Predicates defined by some rule head.
    std::set<std::string> intensional_predicates() const {
        std::set<std::string> out;
        for (const auto& r : rules) out.insert(r.head.predicate);
        return out;
    }

    bool defines(std::string_view pred) const {
        for (const auto& r : rules)
            if (r.head.predicate == pred) return true;
        return false;
    }

    friend bool operator==(const Program&, const Program&) = default;
};

/// Renames variables to V0, V1, ... in order of first occurrence so rules
/// that differ only in variable names compare equal.
inline Rule normalize_variables(const Rule& r) {
    std::map<std::string, std::string> names;
    auto rename = [&](Atom a) {
        for (auto& t : a.args) {
            if (!t.is_variable()) continue;
            auto [it, inserted] = names.try_emplace(t.name, "V" + std::to_string(names.size()));
            t.name = it->second;
        }
        return a;
    };
    Rule out;
    out.weight = r.weight;
    out.head = rename(r.head);
    for (const auto& b : r.body) out.body.push_back(rename(b));
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string format_weight(double w) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, w);
    return std::string(buf, res.ptr);
}

inline std::string render_rule(const Rule& r) {
    std::string out;
    if (r.weight != 1.0) {
        out += format_weight(r.weight);
        out += ": ";
    }
    out += r.head.str();
    if (!r.body.empty()) {
        out += ":-";
        for (std::size_t i = 0; i < r.body.size(); ++i) {
            if (i) out.push_back(',');
            out += r.body[i].str();
        }
    }
    out.push_back('.');
    return out;
}

inline std::string render_program(const Program& p) {
    std::string out;
    for (const auto& r : p.rules) {
        out += render_rule(r);
        out.push_back('\n');
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class line_parser {
public:
    line_parser(std::string_view text, std::size_t line) : s_(text), line_(line) {}

    Rule parse() {
        Rule r;
        if (auto w = weight_prefix()) r.weight = *w;
        r.head = atom();
        skip_ws();
        if (consume(":-")) {
            r.body.push_back(atom());
            skip_ws();
            while (consume(",")) {
                r.body.push_back(atom());
                skip_ws();
            }
        } else if (peek() == ':') {
            fail(syntax_kind::generic, "expected ':-'");
        }
        skip_ws();
        consume(".");
        skip_ws();
        if (pos_ != s_.size()) {
            if (peek() == '(' || peek() == ')')
                fail(syntax_kind::unbalanced_parens, "unbalanced parentheses");
            fail(syntax_kind::generic, "unexpected trailing input '" + std::string(s_.substr(pos_)) + "'");
        }
        return r;
    }

private:
    [[noreturn]] void fail(syntax_kind k, const std::string& msg) const { throw syntax_error(line_, k, msg); }

    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    bool consume(std::string_view tok) {
        skip_ws();
        if (s_.substr(pos_, tok.size()) == tok) {
            pos_ += tok.size();
            return true;
        }
        return false;
    }

    std::optional<double> weight_prefix() {
        skip_ws();
        std::size_t end = pos_;
        while (end < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
                                   s_[end] == 'e' || s_[end] == 'E' || s_[end] == '+' || s_[end] == '-'))
            ++end;
        if (end == pos_) return std::nullopt;
        std::size_t colon = end;
        while (colon < s_.size() && std::isspace(static_cast<unsigned char>(s_[colon]))) ++colon;
        if (colon >= s_.size() || s_[colon] != ':' || (colon + 1 < s_.size() && s_[colon + 1] == '-'))
            return std::nullopt;
        double w = 0.0;
        auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + end, w);
        if (ec != std::errc{} || ptr != s_.data() + end) fail(syntax_kind::generic, "malformed rule weight");
        pos_ = colon + 1;
        return w;
    }

    std::string identifier() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && is_name_char(s_[pos_])) ++pos_;
        if (start == pos_) {
            if (pos_ >= s_.size()) fail(syntax_kind::unbalanced_parens, "unexpected end of line");
            fail(syntax_kind::bad_identifier, std::string("unexpected character '") + s_[pos_] + "'");
        }
        return std::string(s_.substr(start, pos_ - start));
    }

    Atom atom() {
        Atom a;
        a.predicate = identifier();
        if (!is_constant_name(a.predicate))
            fail(syntax_kind::bad_identifier, "predicate '" + a.predicate + "' must start with a lowercase letter");
        if (!consume("(")) {
            if (peek() == ')') fail(syntax_kind::unbalanced_parens, "unbalanced parentheses");
            fail(syntax_kind::generic, "expected '(' after predicate '" + a.predicate + "'");
        }
        do {
            std::string name = identifier();
            if (is_variable_name(name))
                a.args.push_back(Term::var(std::move(name)));
            else if (is_constant_name(name))
                a.args.push_back(Term::constant(std::move(name)));
            else
                fail(syntax_kind::bad_identifier, "invalid term '" + name + "'");
        } while (consume(","));
        if (!consume(")")) fail(syntax_kind::unbalanced_parens, "unbalanced parentheses in '" + a.predicate + "'");
        return a;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    std::size_t line_;
};

inline bool single_lowercase_letter(const std::string& s) {
    return s.size() == 1 && std::islower(static_cast<unsigned char>(s[0]));
}

}  // namespace detail

/// Parses one rule line; `line` is only used for error messages.
inline Rule parse_rule(std::string_view text, std::size_t line = 1) {
    Rule r = detail::line_parser(text, line).parse();

    if (r.body.empty()) {
        if (!r.head.ground())
            throw syntax_error(line, syntax_kind::missing_neck, "missing ':-' in non-ground rule '" + r.head.str() + "'");
        return r;
    }
    // A rule head whose argument is a single lowercase letter that also occurs
    // in the body is a variable written in lowercase ("target(x):-cond1(x).").
    for (const auto& t : r.head.args) {
        if (!t.is_constant() || !detail::single_lowercase_letter(t.name)) continue;
        for (const auto& b : r.body)
            for (const auto& bt : b.args)
                if (bt == t)
                    throw syntax_error(line, syntax_kind::lowercase_variable,
                                       "'" + t.name + "' looks like a variable; variables must be capitalized");
    }
    for (const auto& t : r.head.args) {
        if (!t.is_variable()) continue;
        bool bound = false;
        for (const auto& b : r.body)
            for (const auto& bt : b.args) bound = bound || bt == t;
        if (!bound)
            throw syntax_error(line, syntax_kind::unsafe_variable,
                               "head variable " + t.name + " does not occur in the body");
    }
    return r;
}

inline Program parse_program(std::string_view text) {
    Program p;
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> arity;  // name -> (arity, line)
    std::vector<Rule> normalized;

    auto check_arity = [&](const Atom& a, std::size_t line) {
        auto [it, inserted] = arity.try_emplace(a.predicate, a.arity(), line);
        if (!inserted && it->second.first != a.arity())
            throw syntax_error(line, syntax_kind::arity_mismatch,
                               "predicate '" + a.predicate + "' used with arity " + std::to_string(a.arity()) +
                                   " but arity " + std::to_string(it->second.first) + " on line " +
                                   std::to_string(it->second.second));
    };

    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        ++line_no;
        start = end + 1;

        std::size_t first = 0;
        while (first < line.size() && std::isspace(static_cast<unsigned char>(line[first]))) ++first;
        if (first == line.size() || line[first] == '%') {
            if (end == text.size()) break;
            continue;
        }

        Rule r = parse_rule(line, line_no);
        check_arity(r.head, line_no);
        for (const auto& b : r.body) check_arity(b, line_no);

        Rule norm = normalize_variables(r);
        if (std::find(normalized.begin(), normalized.end(), norm) != normalized.end())
            throw syntax_error(line_no, syntax_kind::duplicate_rule, "duplicate rule '" + render_rule(r) + "'");
        normalized.push_back(std::move(norm));
        p.rules.push_back(std::move(r));
        if (end == text.size()) break;
    }
    return p;
}

}  // namespace deisam
