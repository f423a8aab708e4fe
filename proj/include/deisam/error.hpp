#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deisam {

/// Coarse failure class; the CLI maps each one to a process exit code.
enum class error_class { input, service, internal };

class error : public std::runtime_error {
public:
    error(error_class cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
    error_class cls() const noexcept { return cls_; }

private:
    error_class cls_;
};

class input_error : public error {
public:
    explicit input_error(const std::string& what) : error(error_class::input, what) {}
};

class internal_error : public error {
public:
    explicit internal_error(const std::string& what) : error(error_class::internal, what) {}
};

class service_error : public error {
public:
    explicit service_error(const std::string& what) : error(error_class::service, what) {}
};

enum class syntax_kind {
    generic,
    missing_neck,       // non-ground line without ":-"
    unbalanced_parens,
    lowercase_variable,
    arity_mismatch,
    unsafe_variable,    // head variable not bound in the body
    duplicate_rule,
    bad_identifier,
};

class syntax_error : public input_error {
public:
    syntax_error(std::size_t line, syntax_kind kind, const std::string& msg)
        : input_error("line " + std::to_string(line) + ": " + msg), line_(line), kind_(kind) {}
    std::size_t line() const noexcept { return line_; }
    syntax_kind kind() const noexcept { return kind_; }

private:
    std::size_t line_;
    syntax_kind kind_;
};

/// JSON shape violations; `path` is a JSON-pointer-like location.
class schema_error : public input_error {
public:
    schema_error(std::string path, const std::string& msg)
        : input_error(path + ": " + msg), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class dangling_reference : public input_error {
public:
    using input_error::input_error;
};

class universe_too_large : public input_error {
public:
    using input_error::input_error;
};

class dimension_mismatch : public internal_error {
public:
    using internal_error::internal_error;
};

class tape_missing : public internal_error {
public:
    using internal_error::internal_error;
};

class no_target_atoms : public input_error {
public:
    using input_error::input_error;
};

class missing_embedding : public input_error {
public:
    explicit missing_embedding(std::string term)
        : input_error("no embedding for term '" + term + "'"), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

class empty_evaluation : public input_error {
public:
    using input_error::input_error;
};

class insufficient_candidates : public input_error {
public:
    insufficient_candidates(std::size_t wanted, std::size_t found)
        : input_error("requested " + std::to_string(wanted) + " instances but only " +
                      std::to_string(found) + " valid candidates exist"),
          wanted_(wanted), found_(found) {}
    std::size_t wanted() const noexcept { return wanted_; }
    std::size_t found() const noexcept { return found_; }

private:
    std::size_t wanted_;
    std::size_t found_;
};

enum class format_category {
    no_rules,
    syntax,
    lowercase_variable,
    missing_target,
    multiple_targets,
    undefined_condition,
    duplicate_condition,
    condition_shape,
    bad_variable,
    arity_drift,
    unknown_predicate,
};

inline const char* to_string(format_category c) {
    switch (c) {
    case format_category::no_rules: return "no_rules";
    case format_category::syntax: return "syntax";
    case format_category::lowercase_variable: return "lowercase_variable";
    case format_category::missing_target: return "missing_target";
    case format_category::multiple_targets: return "multiple_targets";
    case format_category::undefined_condition: return "undefined_condition";
    case format_category::duplicate_condition: return "duplicate_condition";
    case format_category::condition_shape: return "condition_shape";
    case format_category::bad_variable: return "bad_variable";
    case format_category::arity_drift: return "arity_drift";
    case format_category::unknown_predicate: return "unknown_predicate";
    }
    return "unknown";
}

struct format_violation {
    format_category category;
    std::string message;
};

/// Raised by the rule validator; lists every violated check.
class format_error : public input_error {
public:
    explicit format_error(std::vector<format_violation> violations)
        : input_error(render(violations)), violations_(std::move(violations)) {}

    const std::vector<format_violation>& violations() const noexcept { return violations_; }

    bool has(format_category c) const {
        for (const auto& v : violations_)
            if (v.category == c) return true;
        return false;
    }

private:
    static std::string render(const std::vector<format_violation>& vs) {
        std::string out = "invalid rules:";
        for (const auto& v : vs) {
            out += "\n  [";
            out += to_string(v.category);
            out += "] ";
            out += v.message;
        }
        return out;
    }

    std::vector<format_violation> violations_;
};

class auth_error : public service_error {
public:
    using service_error::service_error;
};

class timeout_error : public service_error {
public:
    using service_error::service_error;
};

/// Thrown when code tries to reach the network while offline mode is armed.
class offline_violation : public internal_error {
public:
    using internal_error::internal_error;
};

}  // namespace deisam
