#pragma once

#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace agediff {

/// Scalar parameters referenced from rate expressions as `param:<name>`.
using ParamSet = std::map<std::string, double>;

/// Syntax error with a 1-based column into the source text.
struct ParseError : std::runtime_error {
  int column;
  ParseError(const std::string& what, int col)
      : std::runtime_error(what + " (column " + std::to_string(col) + ")"), column(col) {}
};

/// Run-time evaluation failure (division by zero, log of a nonpositive value, ...).
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Construct for which no symbolic z-derivative is defined.
struct DerivativeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ExprKind { constant, var_z, var_a, var_x, param, neg, add, sub, mul, div, pow, call };
enum class ExprFunc { exp_fn, log_fn, sin_fn, cos_fn, sqrt_fn, max_fn, min_fn };

class ExprNode;
using Expr = std::shared_ptr<const ExprNode>;

/// Immutable expression tree over the variables {z, a, x}, constants and
/// named parameters. Shared subtrees are fine; nodes are never mutated.
class ExprNode {
 public:
  ExprKind kind;
  double value = 0.0;       // constant
  std::string param_name;   // param
  ExprFunc func = ExprFunc::exp_fn;
  std::vector<Expr> args;

  explicit ExprNode(ExprKind k) : kind(k) {}
};

inline Expr make_constant(double v) {
  auto n = std::make_shared<ExprNode>(ExprKind::constant);
  n->value = v;
  return n;
}

inline Expr make_variable(ExprKind k) { return std::make_shared<ExprNode>(k); }

inline Expr make_param(std::string name) {
  auto n = std::make_shared<ExprNode>(ExprKind::param);
  n->param_name = std::move(name);
  return n;
}

inline bool is_constant(const Expr& e, double v) {
  return e->kind == ExprKind::constant && e->value == v;
}

// Folding constructors keep derivative output readable and cheap to evaluate.
inline Expr make_neg(Expr e) {
  if (e->kind == ExprKind::constant) return make_constant(-e->value);
  auto n = std::make_shared<ExprNode>(ExprKind::neg);
  n->args = {std::move(e)};
  return n;
}

inline Expr make_binary(ExprKind k, Expr l, Expr r) {
  if (l->kind == ExprKind::constant && r->kind == ExprKind::constant) {
    switch (k) {
      case ExprKind::add: return make_constant(l->value + r->value);
      case ExprKind::sub: return make_constant(l->value - r->value);
      case ExprKind::mul: return make_constant(l->value * r->value);
      case ExprKind::div:
        if (r->value != 0.0) return make_constant(l->value / r->value);
        break;  // keep the node; evaluation reports the division by zero
      case ExprKind::pow: return make_constant(std::pow(l->value, r->value));
      default: break;
    }
  }
  switch (k) {
    case ExprKind::add:
      if (is_constant(l, 0.0)) return r;
      if (is_constant(r, 0.0)) return l;
      break;
    case ExprKind::sub:
      if (is_constant(r, 0.0)) return l;
      if (is_constant(l, 0.0)) return make_neg(r);
      break;
    case ExprKind::mul:
      if (is_constant(l, 0.0) || is_constant(r, 0.0)) return make_constant(0.0);
      if (is_constant(l, 1.0)) return r;
      if (is_constant(r, 1.0)) return l;
      break;
    case ExprKind::div:
      if (is_constant(l, 0.0)) return make_constant(0.0);
      if (is_constant(r, 1.0)) return l;
      break;
    case ExprKind::pow:
      if (is_constant(r, 1.0)) return l;
      if (is_constant(r, 0.0)) return make_constant(1.0);
      break;
    default: break;
  }
  auto n = std::make_shared<ExprNode>(k);
  n->args = {std::move(l), std::move(r)};
  return n;
}

inline Expr make_add(Expr l, Expr r) { return make_binary(ExprKind::add, std::move(l), std::move(r)); }
inline Expr make_sub(Expr l, Expr r) { return make_binary(ExprKind::sub, std::move(l), std::move(r)); }
inline Expr make_mul(Expr l, Expr r) { return make_binary(ExprKind::mul, std::move(l), std::move(r)); }
inline Expr make_div(Expr l, Expr r) { return make_binary(ExprKind::div, std::move(l), std::move(r)); }
inline Expr make_pow(Expr l, Expr r) { return make_binary(ExprKind::pow, std::move(l), std::move(r)); }

inline Expr make_call(ExprFunc f, std::vector<Expr> args) {
  auto n = std::make_shared<ExprNode>(ExprKind::call);
  n->func = f;
  n->args = std::move(args);
  return n;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
  enum Type { number, ident, plus, minus, star, slash, caret, lparen, rparen, comma, colon, end };
  Type type = end;
  double num = 0.0;
  std::string text;
  int column = 0;  // 1-based
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t')) ++pos_;
    tok_ = Token{};
    tok_.column = static_cast<int>(pos_) + 1;
    if (pos_ >= src_.size()) {
      tok_.type = Token::end;
      return;
    }
    char c = src_[pos_];
    if ((c >= '0' && c <= '9') || c == '.') {
      const char* begin = src_.data() + pos_;
      const char* last = src_.data() + src_.size();
      double v = 0.0;
      auto res = std::from_chars(begin, last, v);
      if (res.ec != std::errc{}) throw ParseError("malformed number", tok_.column);
      pos_ = static_cast<std::size_t>(res.ptr - src_.data());
      tok_.type = Token::number;
      tok_.num = v;
      return;
    }
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
      std::size_t start = pos_;
      while (pos_ < src_.size() &&
             ((src_[pos_] >= 'a' && src_[pos_] <= 'z') || (src_[pos_] >= 'A' && src_[pos_] <= 'Z') ||
              (src_[pos_] >= '0' && src_[pos_] <= '9') || src_[pos_] == '_'))
        ++pos_;
      tok_.type = Token::ident;
      tok_.text = src_.substr(start, pos_ - start);
      return;
    }
    ++pos_;
    switch (c) {
      case '+': tok_.type = Token::plus; return;
      case '-': tok_.type = Token::minus; return;
      case '*': tok_.type = Token::star; return;
      case '/': tok_.type = Token::slash; return;
      case '^': tok_.type = Token::caret; return;
      case '(': tok_.type = Token::lparen; return;
      case ')': tok_.type = Token::rparen; return;
      case ',': tok_.type = Token::comma; return;
      case ':': tok_.type = Token::colon; return;
      default: throw ParseError(std::string("unexpected character '") + c + "'", tok_.column);
    }
  }

  const std::string& src_;
  std::size_t pos_ = 0;
  Token tok_;
};

class Parser {
 public:
  explicit Parser(const std::string& src) : lex_(src) {}

  Expr parse() {
    Expr e = expression();
    const Token& t = lex_.peek();
    if (t.type != Token::end) throw ParseError("unexpected trailing input", t.column);
    return e;
  }

 private:
  // A binary or unary operator with nothing after it is reported at the
  // operator's own column.
  void require_operand(int op_column) const {
    if (lex_.peek().type == Token::end)
      throw ParseError("dangling operator: missing operand", op_column);
  }

  Expr expression() {
    Expr e = term();
    while (lex_.peek().type == Token::plus || lex_.peek().type == Token::minus) {
      Token op = lex_.take();
      require_operand(op.column);
      Expr rhs = term();
      e = op.type == Token::plus ? make_add(e, rhs) : make_sub(e, rhs);
    }
    return e;
  }

  Expr term() {
    Expr e = unary();
    while (lex_.peek().type == Token::star || lex_.peek().type == Token::slash) {
      Token op = lex_.take();
      require_operand(op.column);
      Expr rhs = unary();
      e = op.type == Token::star ? make_mul(e, rhs) : make_div(e, rhs);
    }
    return e;
  }

  Expr unary() {
    if (lex_.peek().type == Token::minus) {
      Token op = lex_.take();
      require_operand(op.column);
      return make_neg(unary());
    }
    if (lex_.peek().type == Token::plus) {
      Token op = lex_.take();
      require_operand(op.column);
      return unary();
    }
    return power();
  }

  Expr power() {
    Expr base = primary();
    if (lex_.peek().type == Token::caret) {
      Token op = lex_.take();
      require_operand(op.column);
      return make_pow(base, unary());  // right-associative, exponent may be signed
    }
    return base;
  }

  Expr primary() {
    Token t = lex_.take();
    switch (t.type) {
      case Token::number: return make_constant(t.num);
      case Token::lparen: {
        Expr e = expression();
        if (lex_.peek().type != Token::rparen)
          throw ParseError("unbalanced parentheses: expected ')'", lex_.peek().column);
        lex_.take();
        return e;
      }
      case Token::ident: return identifier(t);
      case Token::end: throw ParseError("unexpected end of expression", t.column);
      default: throw ParseError("unexpected token", t.column);
    }
  }

  Expr identifier(const Token& t) {
    if (t.text == "param") {
      if (lex_.peek().type != Token::colon)
        throw ParseError("expected ':' after 'param'", lex_.peek().column);
      lex_.take();
      if (lex_.peek().type != Token::ident)
        throw ParseError("expected parameter name after 'param:'", lex_.peek().column);
      return make_param(lex_.take().text);
    }
    if (t.text == "z") return make_variable(ExprKind::var_z);
    if (t.text == "a") return make_variable(ExprKind::var_a);
    if (t.text == "x") return make_variable(ExprKind::var_x);

    static const std::map<std::string, std::pair<ExprFunc, int>> functions = {
        {"exp", {ExprFunc::exp_fn, 1}},  {"log", {ExprFunc::log_fn, 1}},
        {"sin", {ExprFunc::sin_fn, 1}},  {"cos", {ExprFunc::cos_fn, 1}},
        {"sqrt", {ExprFunc::sqrt_fn, 1}}, {"max", {ExprFunc::max_fn, 2}},
        {"min", {ExprFunc::min_fn, 2}}};
    auto it = functions.find(t.text);
    if (it == functions.end()) {
      if (lex_.peek().type == Token::lparen)
        throw ParseError("unknown function '" + t.text + "'", t.column);
      throw ParseError("unknown identifier '" + t.text + "'", t.column);
    }
    if (lex_.peek().type != Token::lparen)
      throw ParseError("expected '(' after function '" + t.text + "'", lex_.peek().column);
    lex_.take();
    std::vector<Expr> args;
    args.push_back(expression());
    while (lex_.peek().type == Token::comma) {
      lex_.take();
      args.push_back(expression());
    }
    if (lex_.peek().type != Token::rparen)
      throw ParseError("unbalanced parentheses: expected ')'", lex_.peek().column);
    lex_.take();
    if (static_cast<int>(args.size()) != it->second.second)
      throw ParseError("function '" + t.text + "' expects " + std::to_string(it->second.second) +
                           " argument(s)",
                       t.column);
    return make_call(it->second.first, std::move(args));
  }

  Lexer lex_;
};

}  // namespace detail

/// Parse an arithmetic rate expression over {z, a, x}. Throws ParseError with
/// a 1-based column on malformed input.
inline Expr parse_rate_expression(const std::string& source) {
  return detail::Parser(source).parse();
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline double eval_node(const ExprNode& n, double z, double a, double x, const ParamSet* params) {
  switch (n.kind) {
    case ExprKind::constant: return n.value;
    case ExprKind::var_z: return z;
    case ExprKind::var_a: return a;
    case ExprKind::var_x: return x;
    case ExprKind::param: {
      if (params != nullptr) {
        auto it = params->find(n.param_name);
        if (it != params->end()) return it->second;
      }
      throw EvalError("undefined parameter '" + n.param_name + "'");
    }
    case ExprKind::neg: return -eval_node(*n.args[0], z, a, x, params);
    case ExprKind::add:
      return eval_node(*n.args[0], z, a, x, params) + eval_node(*n.args[1], z, a, x, params);
    case ExprKind::sub:
      return eval_node(*n.args[0], z, a, x, params) - eval_node(*n.args[1], z, a, x, params);
    case ExprKind::mul:
      return eval_node(*n.args[0], z, a, x, params) * eval_node(*n.args[1], z, a, x, params);
    case ExprKind::div: {
      double denom = eval_node(*n.args[1], z, a, x, params);
      if (denom == 0.0) throw EvalError("division by zero");
      return eval_node(*n.args[0], z, a, x, params) / denom;
    }
    case ExprKind::pow:
      return std::pow(eval_node(*n.args[0], z, a, x, params),
                      eval_node(*n.args[1], z, a, x, params));
    case ExprKind::call: {
      double u = eval_node(*n.args[0], z, a, x, params);
      switch (n.func) {
        case ExprFunc::exp_fn: return std::exp(u);
        case ExprFunc::log_fn:
          if (u <= 0.0) throw EvalError("log of a nonpositive value");
          return std::log(u);
        case ExprFunc::sin_fn: return std::sin(u);
        case ExprFunc::cos_fn: return std::cos(u);
        case ExprFunc::sqrt_fn:
          if (u < 0.0) throw EvalError("sqrt of a negative value");
          return std::sqrt(u);
        case ExprFunc::max_fn: return std::max(u, eval_node(*n.args[1], z, a, x, params));
        case ExprFunc::min_fn: return std::min(u, eval_node(*n.args[1], z, a, x, params));
      }
      throw EvalError("unreachable function kind");
    }
  }
  throw EvalError("unreachable expression kind");
}

}  // namespace detail

/// Evaluate at (z, a, x). Throws EvalError on domain violations or a
/// non-finite result.
inline double eval(const Expr& e, double z, double a, double x, const ParamSet& params = {}) {
  double v = detail::eval_node(*e, z, a, x, &params);
  if (!std::isfinite(v)) throw EvalError("non-finite result");
  return v;
}

/// True when any subtree reads the variable z.
inline bool depends_on_z(const Expr& e) {
  if (e->kind == ExprKind::var_z) return true;
  for (const auto& c : e->args)
    if (depends_on_z(c)) return true;
  return false;
}

/// True when any subtree references a `param:` placeholder.
inline void collect_params(const Expr& e, std::vector<std::string>& out) {
  if (e->kind == ExprKind::param) out.push_back(e->param_name);
  for (const auto& c : e->args) collect_params(c, out);
}

// ---------------------------------------------------------------------------
// Symbolic differentiation in z
// ---------------------------------------------------------------------------

/// Symbolic d/dz. Subtrees that do not read z differentiate to 0, so max/min
/// over z-free arguments are fine; max/min that depend on z are rejected.
inline Expr differentiate_in_z(const Expr& e) {
  if (!depends_on_z(e)) return make_constant(0.0);
  switch (e->kind) {
    case ExprKind::var_z: return make_constant(1.0);
    case ExprKind::neg: return make_neg(differentiate_in_z(e->args[0]));
    case ExprKind::add: return make_add(differentiate_in_z(e->args[0]), differentiate_in_z(e->args[1]));
    case ExprKind::sub: return make_sub(differentiate_in_z(e->args[0]), differentiate_in_z(e->args[1]));
    case ExprKind::mul:
      return make_add(make_mul(differentiate_in_z(e->args[0]), e->args[1]),
                      make_mul(e->args[0], differentiate_in_z(e->args[1])));
    case ExprKind::div: {
      // (u/v)' = u'/v - u v'/v^2
      Expr u = e->args[0], v = e->args[1];
      return make_sub(make_div(differentiate_in_z(u), v),
                      make_div(make_mul(u, differentiate_in_z(v)), make_mul(v, v)));
    }
    case ExprKind::pow: {
      Expr u = e->args[0], v = e->args[1];
      if (!depends_on_z(v)) {
        // (u^c)' = c * u^(c-1) * u'
        return make_mul(make_mul(v, make_pow(u, make_sub(v, make_constant(1.0)))),
                        differentiate_in_z(u));
      }
      // general: u^v * (v' log u + v u'/u)
      return make_mul(make_pow(u, v),
                      make_add(make_mul(differentiate_in_z(v), make_call(ExprFunc::log_fn, {u})),
                               make_div(make_mul(v, differentiate_in_z(u)), u)));
    }
    case ExprKind::call: {
      Expr u = e->args[0];
      Expr du = depends_on_z(u) ? differentiate_in_z(u) : make_constant(0.0);
      switch (e->func) {
        case ExprFunc::exp_fn: return make_mul(make_call(ExprFunc::exp_fn, {u}), du);
        case ExprFunc::log_fn: return make_div(du, u);
        case ExprFunc::sin_fn: return make_mul(make_call(ExprFunc::cos_fn, {u}), du);
        case ExprFunc::cos_fn: return make_neg(make_mul(make_call(ExprFunc::sin_fn, {u}), du));
        case ExprFunc::sqrt_fn:
          return make_div(du, make_mul(make_constant(2.0), make_call(ExprFunc::sqrt_fn, {u})));
        case ExprFunc::max_fn:
        case ExprFunc::min_fn:
          throw DerivativeError(
              "no symbolic z-derivative for max/min with z-dependent arguments; "
              "supply the derivative explicitly (dm_dz / db_dz)");
      }
      throw DerivativeError("unreachable function kind");
    }
    default: throw DerivativeError("unreachable expression kind");
  }
}

// ---------------------------------------------------------------------------
// Printing and structural equality
// ---------------------------------------------------------------------------

namespace detail {

inline int precedence(const ExprNode& n) {
  switch (n.kind) {
    case ExprKind::add:
    case ExprKind::sub: return 1;
    case ExprKind::mul:
    case ExprKind::div: return 2;
    case ExprKind::neg: return 3;
    case ExprKind::pow: return 4;
    default: return 5;
  }
}

inline void print_node(const ExprNode& n, std::string& out);

inline void print_child(const ExprNode& parent, const ExprNode& child, bool needs_paren_on_tie,
                        std::string& out) {
  bool paren = precedence(child) < precedence(parent) ||
               (needs_paren_on_tie && precedence(child) == precedence(parent));
  if (paren) out += '(';
  print_node(child, out);
  if (paren) out += ')';
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void print_node(const ExprNode& n, std::string& out) {
  switch (n.kind) {
    case ExprKind::constant:
      if (n.value < 0) {
        out += '(';
        out += format_double(n.value);
        out += ')';
      } else {
        out += format_double(n.value);
      }
      return;
    case ExprKind::var_z: out += 'z'; return;
    case ExprKind::var_a: out += 'a'; return;
    case ExprKind::var_x: out += 'x'; return;
    case ExprKind::param: out += "param:" + n.param_name; return;
    case ExprKind::neg:
      out += '-';
      print_child(n, *n.args[0], true, out);
      return;
    case ExprKind::add:
      print_child(n, *n.args[0], false, out);
      out += " + ";
      print_child(n, *n.args[1], true, out);
      return;
    case ExprKind::sub:
      print_child(n, *n.args[0], false, out);
      out += " - ";
      print_child(n, *n.args[1], true, out);
      return;
    case ExprKind::mul:
      print_child(n, *n.args[0], false, out);
      out += "*";
      print_child(n, *n.args[1], true, out);
      return;
    case ExprKind::div:
      print_child(n, *n.args[0], false, out);
      out += "/";
      print_child(n, *n.args[1], true, out);
      return;
    case ExprKind::pow:
      print_child(n, *n.args[0], true, out);
      out += "^";
      print_child(n, *n.args[1], false, out);
      return;
    case ExprKind::call: {
      static const char* names[] = {"exp", "log", "sin", "cos", "sqrt", "max", "min"};
      out += names[static_cast<int>(n.func)];
      out += '(';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i) out += ", ";
        print_node(*n.args[i], out);
      }
      out += ')';
      return;
    }
  }
}

}  // namespace detail

/// Canonical text form; parsing it back yields a structurally equal tree.
inline std::string pretty_print(const Expr& e) {
  std::string out;
  detail::print_node(*e, out);
  return out;
}

/// Structural equality of expression trees.
inline bool expr_equal(const Expr& a, const Expr& b) {
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case ExprKind::constant:
      return a->value == b->value;
    case ExprKind::param:
      return a->param_name == b->param_name;
    case ExprKind::call:
      if (a->func != b->func) return false;
      break;
    default: break;
  }
  if (a->args.size() != b->args.size()) return false;
  for (std::size_t i = 0; i < a->args.size(); ++i)
    if (!expr_equal(a->args[i], b->args[i])) return false;
  return true;
}

}  // namespace agediff
