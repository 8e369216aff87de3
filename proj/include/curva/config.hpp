#pragma once

#include <cctype>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "curva/error.hpp"
#include "curva/grid.hpp"
#include "curva/scenario_spec.hpp"

namespace curva {

// Arithmetic over x, y, r, theta with + - * / ^, unary minus, pi, e and
// exp, log, sin, cos, tanh, sqrt, abs, max, min.
class Expression {
 public:
  Expression() = default;
  explicit Expression(std::string source) : source_(std::move(source)) {
    pos_ = 0;
    text_ = normalize(source_);
    root_ = parse_sum();
    skip_space();
    if (pos_ != text_.size()) error("unexpected '" + std::string(1, text_[pos_]) + "'");
  }

  double operator()(double x, double y) const { return eval(*root_, x, y); }
  const std::string& source() const { return source_; }
  PointFn function() const {
    auto self = std::make_shared<Expression>(*this);
    return [self](double x, double y) { return (*self)(x, y); };
  }

 private:
  enum class Op { Num, X, Y, R, Theta, Add, Sub, Mul, Div, Pow, Neg, Exp, Log, Sin, Cos, Tanh, Sqrt, Abs, Max, Min };
  struct Node {
    Op op = Op::Num;
    double value = 0.0;
    std::shared_ptr<Node> lhs, rhs;
  };
  using Ptr = std::shared_ptr<Node>;

  static std::string normalize(const std::string& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
      const auto c = static_cast<unsigned char>(s[i]);
      if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x88 &&
          static_cast<unsigned char>(s[i + 2]) == 0x92) {
        out += '-';  // U+2212 minus sign
        i += 2;
      } else if (c == 0xCE && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xB8) {
        out += "theta";
        i += 1;
      } else if (c == 0xCF && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80) {
        out += "pi";
        i += 1;
      } else {
        out += s[i];
      }
    }
    return out;
  }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::ExpressionError, "parse_expression",
         "'" + source_ + "' at offset " + std::to_string(pos_) + ": " + what);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  static Ptr make(Op op, Ptr l = nullptr, Ptr r = nullptr, double v = 0.0) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->lhs = std::move(l);
    n->rhs = std::move(r);
    n->value = v;
    return n;
  }

  Ptr parse_sum() {
    Ptr lhs = parse_product();
    for (;;) {
      if (accept('+')) lhs = make(Op::Add, lhs, parse_product());
      else if (accept('-')) lhs = make(Op::Sub, lhs, parse_product());
      else return lhs;
    }
  }

  Ptr parse_product() {
    Ptr lhs = parse_unary();
    for (;;) {
      if (accept('*')) lhs = make(Op::Mul, lhs, parse_unary());
      else if (accept('/')) lhs = make(Op::Div, lhs, parse_unary());
      else return lhs;
    }
  }

  Ptr parse_unary() {
    if (accept('-')) return make(Op::Neg, parse_unary());
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  Ptr parse_power() {
    Ptr base = parse_primary();
    if (accept('^')) return make(Op::Pow, base, parse_unary());
    return base;
  }

  Ptr parse_primary() {
    skip_space();
    if (pos_ >= text_.size()) error("unexpected end of expression");
    if (accept('(')) {
      Ptr e = parse_sum();
      if (!accept(')')) error("expected ')'");
      return e;
    }
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(text_.substr(pos_), &used);
      } catch (const std::exception&) {
        error("malformed number");
      }
      pos_ += used;
      return make(Op::Num, nullptr, nullptr, v);
    }
    if (!std::isalpha(static_cast<unsigned char>(c))) error("unexpected '" + std::string(1, c) + "'");
    const size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    const std::string name = text_.substr(start, pos_ - start);
    if (name == "x") return make(Op::X);
    if (name == "y") return make(Op::Y);
    if (name == "r") return make(Op::R);
    if (name == "theta") return make(Op::Theta);
    if (name == "pi") return make(Op::Num, nullptr, nullptr, std::numbers::pi);
    if (name == "e") return make(Op::Num, nullptr, nullptr, std::numbers::e);
    static const std::pair<const char*, Op> functions[] = {{"exp", Op::Exp},   {"log", Op::Log},   {"sin", Op::Sin},
                                                           {"cos", Op::Cos},   {"tanh", Op::Tanh}, {"sqrt", Op::Sqrt},
                                                           {"abs", Op::Abs}};
    for (const auto& [fname, op] : functions) {
      if (name != fname) continue;
      if (!accept('(')) error("expected '(' after " + name);
      Ptr arg = parse_sum();
      if (!accept(')')) error("expected ')'");
      return make(op, arg);
    }
    if (name == "max" || name == "min") {
      if (!accept('(')) error("expected '(' after " + name);
      Ptr a = parse_sum();
      if (!accept(',')) error("expected ',' in " + name);
      Ptr b = parse_sum();
      if (!accept(')')) error("expected ')'");
      return make(name == "max" ? Op::Max : Op::Min, a, b);
    }
    pos_ = start;
    error("unknown identifier '" + name + "'");
  }

  static double eval(const Node& n, double x, double y) {
    switch (n.op) {
      case Op::Num: return n.value;
      case Op::X: return x;
      case Op::Y: return y;
      case Op::R: return std::hypot(x, y);
      case Op::Theta: return std::atan2(y, x);
      case Op::Add: return eval(*n.lhs, x, y) + eval(*n.rhs, x, y);
      case Op::Sub: return eval(*n.lhs, x, y) - eval(*n.rhs, x, y);
      case Op::Mul: return eval(*n.lhs, x, y) * eval(*n.rhs, x, y);
      case Op::Div: return eval(*n.lhs, x, y) / eval(*n.rhs, x, y);
      case Op::Pow: return std::pow(eval(*n.lhs, x, y), eval(*n.rhs, x, y));
      case Op::Neg: return -eval(*n.lhs, x, y);
      case Op::Exp: return std::exp(eval(*n.lhs, x, y));
      case Op::Log: return std::log(eval(*n.lhs, x, y));
      case Op::Sin: return std::sin(eval(*n.lhs, x, y));
      case Op::Cos: return std::cos(eval(*n.lhs, x, y));
      case Op::Tanh: return std::tanh(eval(*n.lhs, x, y));
      case Op::Sqrt: return std::sqrt(eval(*n.lhs, x, y));
      case Op::Abs: return std::abs(eval(*n.lhs, x, y));
      case Op::Max: return std::max(eval(*n.lhs, x, y), eval(*n.rhs, x, y));
      case Op::Min: return std::min(eval(*n.lhs, x, y), eval(*n.rhs, x, y));
    }
    return 0.0;
  }

  std::string source_;
  std::string text_;
  size_t pos_ = 0;
  Ptr root_;
};

struct OutputPaths {
  std::string trace;
  std::string report;
  std::string solution;
  std::string sweep;
  bool record_runtime = false;
};

struct RunConfig {
  ScenarioSpec spec;
  std::string interior_source;
  std::string boundary_source;
  std::string conformal_source;
  double c = 1.0;
  double c_hi = 1.0;
  std::vector<double> betas{0.0, 0.01, 0.05, 0.1};
  int sweep_levels = 3;
  OutputPaths output;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      fail(ErrorCode::UnknownKey, "parse_config", "unknown key '" + it.key() + "'" + (where.empty() ? "" : " in " + where));
}

inline const json& object_at(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_object()) fail(ErrorCode::ParseError, "parse_config", "key '" + where + key + "' must be an object");
  return v;
}

template <class T>
T value_at(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const json& v = obj.at(key);
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) fail(ErrorCode::ParseError, "parse_config", "key '" + where + key + "' must be a string");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) fail(ErrorCode::ParseError, "parse_config", "key '" + where + key + "' must be a boolean");
  } else {
    if (!v.is_number()) fail(ErrorCode::ParseError, "parse_config", "key '" + where + key + "' must be a number");
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer())
        fail(ErrorCode::ParseError, "parse_config", "key '" + where + key + "' must be an integer");
    }
  }
  return v.get<T>();
}

inline std::string expression_at(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) fail(ErrorCode::ParseError, "parse_config", "missing required key '" + where + key + "'");
  const json& v = obj.at(key);
  if (v.is_number()) return v.dump();
  if (!v.is_string()) fail(ErrorCode::ParseError, "parse_config", "key '" + where + key + "' must be an expression");
  return v.get<std::string>();
}

inline DomainKind domain_kind_from_string(const std::string& s) {
  for (DomainKind k : {DomainKind::Disk2D, DomainKind::Annulus2D, DomainKind::RadialBall, DomainKind::RadialAnnulus})
    if (s == to_string(k)) return k;
  fail(ErrorCode::ParseError, "parse_config", "unknown domain kind '" + s + "'");
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const size_t upto = std::min<size_t>(e.byte, text.size());
    int line = 1;
    for (size_t i = 0; i + 1 < upto; ++i) line += text[i] == '\n';
    fail(ErrorCode::ParseError, "parse_config", "line " + std::to_string(line) + ": " + e.what());
  }
  if (!root.is_object()) fail(ErrorCode::ParseError, "parse_config", "top level must be an object");
  detail::reject_unknown(root,
                         {"domain", "scenario", "interior", "boundary", "normal_form", "c", "c_hi", "tolerances", "beta",
                          "plateau_level", "gamma_probes", "seed", "subdomain", "report_floor", "eigen", "sweep",
                          "output"},
                         "");
  for (const char* key : {"domain", "scenario", "interior", "boundary"})
    if (!root.contains(key)) fail(ErrorCode::ParseError, "parse_config", std::string("missing required key '") + key + "'");

  RunConfig cfg;
  ScenarioSpec& s = cfg.spec;

  const json& dom = detail::object_at(root, "domain", "");
  detail::reject_unknown(dom, {"kind", "n", "r_in", "r_out", "n_r", "n_theta", "conformal_factor"}, "domain");
  if (!dom.contains("kind")) fail(ErrorCode::ParseError, "parse_config", "missing required key 'domain.kind'");
  s.domain.kind = detail::domain_kind_from_string(detail::value_at<std::string>(dom, "kind", "", "domain."));
  const bool polar = is_polar(s.domain.kind);
  s.domain.n = detail::value_at<int>(dom, "n", polar ? 2 : 3, "domain.");
  s.domain.r_in = detail::value_at<double>(dom, "r_in", has_inner_boundary(s.domain.kind) ? 0.5 : 0.0, "domain.");
  s.domain.r_out = detail::value_at<double>(dom, "r_out", 1.0, "domain.");
  s.domain.n_r = detail::value_at<int>(dom, "n_r", 65, "domain.");
  s.domain.n_theta = detail::value_at<int>(dom, "n_theta", polar ? 64 : 1, "domain.");
  if (dom.contains("conformal_factor")) {
    cfg.conformal_source = detail::expression_at(dom, "conformal_factor", "domain.");
    s.domain.conformal_factor = Expression(cfg.conformal_source).function();
  }

  s.tag = case_tag_from_string(detail::value_at<std::string>(root, "scenario", "", ""));
  cfg.interior_source = detail::expression_at(root, "interior", "");
  cfg.boundary_source = detail::expression_at(root, "boundary", "");
  s.interior = Expression(cfg.interior_source).function();
  s.boundary = Expression(cfg.boundary_source).function();

  if (root.contains("normal_form")) {
    const json& nf = detail::object_at(root, "normal_form", "");
    detail::reject_unknown(nf, {"interior", "boundary"}, "normal_form");
    s.normal_form.enabled = true;
    s.normal_form.interior = detail::value_at<double>(nf, "interior", -1.0, "normal_form.");
    s.normal_form.boundary = detail::value_at<double>(nf, "boundary", 0.0, "normal_form.");
  }

  cfg.c = detail::value_at<double>(root, "c", 1.0, "");
  cfg.c_hi = detail::value_at<double>(root, "c_hi", cfg.c, "");
  if (root.contains("tolerances")) {
    const json& tol = detail::object_at(root, "tolerances", "");
    detail::reject_unknown(tol, {"iteration", "certify"}, "tolerances");
    s.tol = detail::value_at<double>(tol, "iteration", s.tol, "tolerances.");
    s.certify_tol = detail::value_at<double>(tol, "certify", s.certify_tol, "tolerances.");
  }
  s.beta = detail::value_at<double>(root, "beta", s.beta, "");
  s.A = detail::value_at<double>(root, "plateau_level", s.A, "");
  s.gamma_probes = detail::value_at<int>(root, "gamma_probes", s.gamma_probes, "");
  s.seed = detail::value_at<std::uint64_t>(root, "seed", s.seed, "");
  s.report_floor = detail::value_at<double>(root, "report_floor", s.report_floor, "");
  if (root.contains("subdomain")) {
    const json& sub = detail::object_at(root, "subdomain", "");
    detail::reject_unknown(sub, {"r_in", "r_out"}, "subdomain");
    s.omega_r_in = detail::value_at<double>(sub, "r_in", s.omega_r_in, "subdomain.");
    s.omega_r_out = detail::value_at<double>(sub, "r_out", s.omega_r_out, "subdomain.");
  }
  if (root.contains("eigen")) {
    const json& eg = detail::object_at(root, "eigen", "");
    detail::reject_unknown(eg, {"betas"}, "eigen");
    if (eg.contains("betas")) {
      const json& b = eg.at("betas");
      if (!b.is_array()) fail(ErrorCode::ParseError, "parse_config", "key 'eigen.betas' must be an array");
      cfg.betas.clear();
      for (const json& v : b) {
        if (!v.is_number()) fail(ErrorCode::ParseError, "parse_config", "key 'eigen.betas' must hold numbers");
        cfg.betas.push_back(v.get<double>());
      }
    }
  }
  if (root.contains("sweep")) {
    const json& sw = detail::object_at(root, "sweep", "");
    detail::reject_unknown(sw, {"levels"}, "sweep");
    cfg.sweep_levels = detail::value_at<int>(sw, "levels", cfg.sweep_levels, "sweep.");
  }
  if (root.contains("output")) {
    const json& out = detail::object_at(root, "output", "");
    detail::reject_unknown(out, {"trace", "report", "solution", "sweep", "record_runtime"}, "output");
    cfg.output.trace = detail::value_at<std::string>(out, "trace", "", "output.");
    cfg.output.report = detail::value_at<std::string>(out, "report", "", "output.");
    cfg.output.solution = detail::value_at<std::string>(out, "solution", "", "output.");
    cfg.output.sweep = detail::value_at<std::string>(out, "sweep", "", "output.");
    cfg.output.record_runtime = detail::value_at<bool>(out, "record_runtime", false, "output.");
  }
  if (!(cfg.c > 0.0) || !(cfg.c_hi > 0.0))
    fail(ErrorCode::ParseError, "parse_config", "keys 'c' and 'c_hi' must be positive");
  if (cfg.sweep_levels < 1) fail(ErrorCode::ParseError, "parse_config", "key 'sweep.levels' must be at least 1");
  return cfg;
}

}  // namespace curva
