#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "flowrisk/error.hpp"
#include "flowrisk/logistic.hpp"

namespace flowrisk {

// Surface syntax knobs for the emitted expression. CFD post-processors
// disagree on small things: some have no power operator, some name the
// natural log "log". Variable tokens map base column names to whatever the
// target solver calls them.
enum class PowerSyntax {
  multiply,  // x^2 emitted as (x*x)
  caret,     // x^2 emitted as x^2
};

struct ExpressionDialect {
  std::string exp_name = "exp";
  std::string ln_name = "ln";
  PowerSyntax power = PowerSyntax::multiply;
  std::map<std::string, std::string> variables;  // base column -> solver token

  static ExpressionDialect identity_for(const LogisticModel& model) {
    ExpressionDialect dialect;
    for (const FeatureSpec& spec : model.feature_specs) {
      dialect.variables[spec.name_a] = spec.name_a;
      if (spec.kind == SpecKind::interaction) dialect.variables[spec.name_b] = spec.name_b;
    }
    return dialect;
  }
};

namespace detail {

inline std::string expr_literal(double v) { return format_double(v); }

// The standardization of one materialized term, inlined:
//   ((term - mean)/std)    or    ((term + |mean|)/std) for negative means,
// so the emitted text never contains "--".
inline std::string standardized_term(const std::string& term, double mean, double sd) {
  std::string out = "((" + term;
  if (mean < 0.0) {
    out += "+" + expr_literal(-mean);
  } else {
    out += "-" + expr_literal(mean);
  }
  out += ")/" + expr_literal(sd) + ")";
  return out;
}

inline std::string spec_term(const FeatureSpec& spec, const ExpressionDialect& dialect) {
  const auto lookup = [&](const std::string& name) -> const std::string& {
    const auto it = dialect.variables.find(name);
    if (it == dialect.variables.end())
      fail("unmapped-variable", "no solver token for base column: " + name);
    return it->second;
  };
  switch (spec.kind) {
    case SpecKind::base:
      return lookup(spec.name_a);
    case SpecKind::square: {
      const std::string& v = lookup(spec.name_a);
      return dialect.power == PowerSyntax::caret ? v + "^2" : "(" + v + "*" + v + ")";
    }
    case SpecKind::log_shift:
      return dialect.ln_name + "(" + lookup(spec.name_a) + "+" + expr_literal(spec.shift) + ")";
    case SpecKind::interaction:
      return "(" + lookup(spec.name_a) + "*" + lookup(spec.name_b) + ")";
  }
  return {};
}

}  // namespace detail

// Rewrites the trained classifier as one closed-form expression over raw
// solver variables:
//   P = 1/(1+exp(-(b0 + b1*((t1-m1)/s1) + ...)))
// with each engineered term and its standardization inlined. All literals
// are shortest-round-trip decimals, so a correctly-rounding parser
// reconstructs the exact model constants; terms are joined sign-aware
// (coefficient magnitudes with +/- separators) to avoid "+-" sequences.
inline std::string emit_expression(const LogisticModel& model,
                                   const ExpressionDialect& dialect) {
  if (model.coefficients.size() != model.feature_specs.size() ||
      model.coefficients.size() != model.standardizer.width())
    fail("internal", "model term lists are inconsistent");
  std::string z = detail::expr_literal(model.intercept);
  for (std::size_t j = 0; j < model.feature_specs.size(); ++j) {
    const double beta = model.coefficients[j];
    const std::string term = detail::standardized_term(
        detail::spec_term(model.feature_specs[j], dialect), model.standardizer.means[j],
        model.standardizer.stds[j]);
    z += (beta < 0.0 ? "-" : "+") + detail::expr_literal(std::abs(beta)) + "*" + term;
  }
  return "1/(1+" + dialect.exp_name + "(-(" + z + ")))";
}

namespace detail {

// Recursive-descent evaluator for the emitted grammar (and a bit more):
//   expr   := term {('+'|'-') term}
//   term   := factor {('*'|'/') factor}
//   factor := {'+'|'-'} power
//   power  := primary ['^' factor]          (right-associative)
//   primary:= number | ident ['(' expr ')'] | '(' expr ')'
// Identifiers may contain dots (solver-style names like "Velocity.u").
class ExpressionParser {
 public:
  ExpressionParser(std::string_view text, const std::map<std::string, double>& bindings,
                   const ExpressionDialect& dialect)
      : text_(text), bindings_(bindings), dialect_(dialect) {}

  double run() {
    const double value = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) error("unexpected trailing input");
    return value;
  }

 private:
  [[noreturn]] void error(const std::string& what) const {
    fail("syntax-error", what + " at position " + std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  double parse_expr() {
    double value = parse_term();
    while (true) {
      if (eat('+')) {
        value += parse_term();
      } else if (eat('-')) {
        value -= parse_term();
      } else {
        return value;
      }
    }
  }

  double parse_term() {
    double value = parse_factor();
    while (true) {
      if (eat('*')) {
        value *= parse_factor();
      } else if (eat('/')) {
        value /= parse_factor();  // IEEE semantics; division by zero gives inf
      } else {
        return value;
      }
    }
  }

  double parse_factor() {
    bool negate = false;
    while (true) {
      if (eat('+')) continue;
      if (eat('-')) {
        negate = !negate;
        continue;
      }
      break;
    }
    const double value = parse_power();
    return negate ? -value : value;
  }

  double parse_power() {
    const double base = parse_primary();
    if (eat('^')) {
      const double exponent = parse_factor();  // right-assoc, may carry unary minus
      return std::pow(base, exponent);
    }
    return base;
  }

  double parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) error("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      const double value = parse_expr();
      if (!eat(')')) error("expected ')'");
      return value;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    error(std::string("unexpected character '") + c + "'");
  }

  double parse_number() {
    double value = 0.0;
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc()) error("malformed number");
    pos_ = static_cast<std::size_t>(res.ptr - text_.data());
    return value;
  }

  double parse_ident() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
        ++pos_;
      } else {
        break;
      }
    }
    const std::string name(text_.substr(start, pos_ - start));
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      const double arg = parse_expr();
      if (!eat(')')) error("expected ')' after function argument");
      if (name == dialect_.exp_name) return std::exp(arg);
      if (name == dialect_.ln_name) {
        if (!(arg > 0.0))
          fail("domain-error", dialect_.ln_name + " of non-positive value " +
                                   format_double(arg) + " at position " + std::to_string(start));
        return std::log(arg);
      }
      fail("syntax-error",
           "unknown function '" + name + "' at position " + std::to_string(start));
    }
    const auto it = bindings_.find(name);
    if (it == bindings_.end())
      fail("unbound-variable",
           "variable '" + name + "' has no binding (position " + std::to_string(start) + ")");
    return it->second;
  }

  std::string_view text_;
  const std::map<std::string, double>& bindings_;
  const ExpressionDialect& dialect_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Reference evaluator used to verify emitted expressions independently of
// the model code path. Binds variable tokens to values; honors the
// dialect's function names.
inline double evaluate_expression(std::string_view text,
                                  const std::map<std::string, double>& bindings,
                                  const ExpressionDialect& dialect = {}) {
  detail::ExpressionParser parser(text, bindings, dialect);
  return parser.run();
}

}  // namespace flowrisk
