#pragma once

// Sparse multivariate polynomials over a fixed number of variables, with
// monomials kept in graded lexicographic order (variable 1 highest).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace wdro {

class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> exponents) : exps_(std::move(exponents)) {
    for (int e : exps_) {
      if (e < 0) throw std::invalid_argument("MultiIndex: negative exponent");
      degree_ += e;
    }
  }

  static MultiIndex zero(std::size_t nvars) { return MultiIndex(std::vector<int>(nvars, 0)); }
  static MultiIndex unit(std::size_t nvars, std::size_t var, int power = 1) {
    std::vector<int> e(nvars, 0);
    e.at(var) = power;
    return MultiIndex(std::move(e));
  }

  std::size_t nvars() const { return exps_.size(); }
  int degree() const { return degree_; }
  int operator[](std::size_t i) const { return exps_[i]; }
  const std::vector<int>& exponents() const { return exps_; }

  MultiIndex operator+(const MultiIndex& o) const {
    if (o.nvars() != nvars()) throw std::invalid_argument("MultiIndex: variable count mismatch");
    std::vector<int> e(exps_);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += o.exps_[i];
    return MultiIndex(std::move(e));
  }

  // Graded order: lower degree first; within a degree the larger exponent on
  // the earliest variable comes first (x1 > x2 > ...).
  friend std::strong_ordering operator<=>(const MultiIndex& a, const MultiIndex& b) {
    if (a.degree_ != b.degree_) return a.degree_ <=> b.degree_;
    for (std::size_t i = 0; i < a.exps_.size() && i < b.exps_.size(); ++i) {
      if (a.exps_[i] != b.exps_[i]) return b.exps_[i] <=> a.exps_[i];
    }
    return a.exps_.size() <=> b.exps_.size();
  }
  friend bool operator==(const MultiIndex& a, const MultiIndex& b) { return a.exps_ == b.exps_; }

  double evaluate(std::span<const double> z) const {
    double v = 1.0;
    for (std::size_t i = 0; i < exps_.size(); ++i) {
      for (int e = 0; e < exps_[i]; ++e) v *= z[i];
    }
    return v;
  }

 private:
  std::vector<int> exps_;
  int degree_ = 0;
};

struct MultiIndexHash {
  std::size_t operator()(const MultiIndex& a) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (int e : a.exponents()) {
      h ^= static_cast<std::uint64_t>(e) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

inline constexpr double kCoefficientDropTol = 1e-14;

class Polynomial {
 public:
  using Terms = std::map<MultiIndex, double>;

  explicit Polynomial(std::size_t nvars = 0) : nvars_(nvars) {}

  static Polynomial constant(std::size_t nvars, double c) {
    Polynomial p(nvars);
    p.add_term(MultiIndex::zero(nvars), c);
    return p;
  }
  static Polynomial variable(std::size_t nvars, std::size_t var) {
    Polynomial p(nvars);
    p.add_term(MultiIndex::unit(nvars, var), 1.0);
    return p;
  }
  static Polynomial monomial(const MultiIndex& a, double c = 1.0) {
    Polynomial p(a.nvars());
    p.add_term(a, c);
    return p;
  }

  std::size_t nvars() const { return nvars_; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }

  int degree() const {
    int d = 0;
    for (const auto& [a, c] : terms_) d = std::max(d, a.degree());
    return d;
  }

  double coefficient(const MultiIndex& a) const {
    auto it = terms_.find(a);
    return it == terms_.end() ? 0.0 : it->second;
  }

  void add_term(const MultiIndex& a, double c) {
    if (a.nvars() != nvars_) throw std::invalid_argument("Polynomial: variable count mismatch");
    auto [it, inserted] = terms_.try_emplace(a, c);
    if (!inserted) it->second += c;
    if (std::abs(it->second) < kCoefficientDropTol) terms_.erase(it);
  }

  double evaluate(std::span<const double> z) const {
    if (z.size() != nvars_) throw std::invalid_argument("evaluate: dimension mismatch");
    double v = 0.0;
    for (const auto& [a, c] : terms_) v += c * a.evaluate(z);
    return v;
  }
  double evaluate(const Eigen::VectorXd& z) const {
    return evaluate(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
  }

  Polynomial& operator+=(const Polynomial& q) {
    check_same(q);
    for (const auto& [a, c] : q.terms_) add_term(a, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& q) {
    check_same(q);
    for (const auto& [a, c] : q.terms_) add_term(a, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    Terms out;
    for (const auto& [a, c] : terms_) {
      double v = c * s;
      if (std::abs(v) >= kCoefficientDropTol) out.emplace(a, v);
    }
    terms_ = std::move(out);
    return *this;
  }

  friend Polynomial operator+(Polynomial p, const Polynomial& q) { return p += q; }
  friend Polynomial operator-(Polynomial p, const Polynomial& q) { return p -= q; }
  friend Polynomial operator*(Polynomial p, double s) { return p *= s; }
  friend Polynomial operator*(double s, Polynomial p) { return p *= s; }
  friend Polynomial operator-(Polynomial p) { return p *= -1.0; }

  friend Polynomial operator*(const Polynomial& p, const Polynomial& q) {
    p.check_same(q);
    Polynomial out(p.nvars_);
    for (const auto& [a, ca] : p.terms_) {
      for (const auto& [b, cb] : q.terms_) {
        auto [it, inserted] = out.terms_.try_emplace(a + b, ca * cb);
        if (!inserted) it->second += ca * cb;
      }
    }
    out.prune();
    return out;
  }

  friend bool operator==(const Polynomial& p, const Polynomial& q) {
    return p.nvars_ == q.nvars_ && p.terms_ == q.terms_;
  }

 private:
  void check_same(const Polynomial& q) const {
    if (q.nvars_ != nvars_) throw std::invalid_argument("Polynomial: variable count mismatch");
  }
  void prune() {
    std::erase_if(terms_, [](const auto& kv) { return std::abs(kv.second) < kCoefficientDropTol; });
  }

  std::size_t nvars_;
  Terms terms_;
};

inline Polynomial add(const Polynomial& p, const Polynomial& q) { return p + q; }
inline Polynomial scale(const Polynomial& p, double c) { return p * c; }
inline Polynomial mul(const Polynomial& p, const Polynomial& q) { return p * q; }

inline Polynomial pow(const Polynomial& p, int e) {
  if (e < 0) throw std::invalid_argument("pow: negative exponent");
  Polynomial out = Polynomial::constant(p.nvars(), 1.0);
  for (int i = 0; i < e; ++i) out = out * p;
  return out;
}

inline Polynomial partial_derivative(const Polynomial& p, std::size_t var) {
  if (var >= p.nvars()) throw std::invalid_argument("partial_derivative: variable out of range");
  Polynomial out(p.nvars());
  for (const auto& [a, c] : p.terms()) {
    int e = a[var];
    if (e == 0) continue;
    std::vector<int> exps = a.exponents();
    exps[var] -= 1;
    out.add_term(MultiIndex(std::move(exps)), c * e);
  }
  return out;
}

// p(z + shift), expanded.
inline Polynomial translate(const Polynomial& p, std::span<const double> shift) {
  const std::size_t n = p.nvars();
  if (shift.size() != n) throw std::invalid_argument("translate: dimension mismatch");
  std::vector<Polynomial> lin;
  lin.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    lin.push_back(Polynomial::variable(n, i) + Polynomial::constant(n, shift[i]));
  }
  // Cache powers of each shifted variable.
  std::vector<std::vector<Polynomial>> powers(n);
  Polynomial out(n);
  for (const auto& [a, c] : p.terms()) {
    Polynomial term = Polynomial::constant(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      int e = a[i];
      if (e == 0) continue;
      auto& cache = powers[i];
      if (cache.empty()) cache.push_back(Polynomial::constant(n, 1.0));
      while (static_cast<int>(cache.size()) <= e) cache.push_back(cache.back() * lin[i]);
      term = term * cache[e];
    }
    out += term;
  }
  return out;
}
inline Polynomial translate(const Polynomial& p, const Eigen::VectorXd& shift) {
  return translate(p, std::span<const double>(shift.data(), static_cast<std::size_t>(shift.size())));
}

// p(shift + scale .* z), expanded.
inline Polynomial affine_substitute(const Polynomial& p, std::span<const double> shift, std::span<const double> scale) {
  const std::size_t n = p.nvars();
  if (scale.size() != n) throw std::invalid_argument("affine_substitute: dimension mismatch");
  Polynomial t = translate(p, shift);
  Polynomial out(n);
  for (const auto& [a, c] : t.terms()) {
    double v = c;
    for (std::size_t i = 0; i < n; ++i) {
      for (int e = 0; e < a[i]; ++e) v *= scale[i];
    }
    out.add_term(a, v);
  }
  return out;
}

// ((xi - xi_hat)^T H (xi - xi_hat))^(p/2)
inline Polynomial distance_power(const Eigen::VectorXd& xi_hat, const Eigen::MatrixXd& H, int p) {
  const auto n = static_cast<std::size_t>(xi_hat.size());
  if (p < 2 || p % 2 != 0) throw std::invalid_argument("distance_power: p must be even and >= 2");
  if (H.rows() != xi_hat.size() || H.cols() != xi_hat.size()) {
    throw std::invalid_argument("distance_power: H dimension mismatch");
  }
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + H.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("distance_power: H is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("distance_power: H is not positive definite");

  std::vector<Polynomial> diff;
  for (std::size_t i = 0; i < n; ++i) {
    diff.push_back(Polynomial::variable(n, i) - Polynomial::constant(n, xi_hat(static_cast<Eigen::Index>(i))));
  }
  Polynomial q(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double h = H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (h != 0.0) q += (diff[i] * diff[j]) * h;
    }
  }
  return pow(q, p / 2);
}

// Partial evaluation: fixes the first values.size() variables and returns a
// polynomial in the remaining ones.
inline Polynomial substitute_prefix(const Polynomial& p, std::span<const double> values) {
  const std::size_t m = values.size();
  if (m > p.nvars()) throw std::invalid_argument("substitute_prefix: too many values");
  const std::size_t rest = p.nvars() - m;
  Polynomial out(rest);
  for (const auto& [a, c] : p.terms()) {
    double v = c;
    for (std::size_t i = 0; i < m; ++i) {
      for (int e = 0; e < a[i]; ++e) v *= values[i];
    }
    std::vector<int> exps(a.exponents().begin() + static_cast<std::ptrdiff_t>(m), a.exponents().end());
    out.add_term(MultiIndex(std::move(exps)), v);
  }
  return out;
}

// Maps p (in p.nvars() variables) into a space of total_nvars variables with
// its variable i placed at position offset + i.
inline Polynomial embed(const Polynomial& p, std::size_t total_nvars, std::size_t offset) {
  if (offset + p.nvars() > total_nvars) throw std::invalid_argument("embed: target space too small");
  Polynomial out(total_nvars);
  for (const auto& [a, c] : p.terms()) {
    std::vector<int> exps(total_nvars, 0);
    for (std::size_t i = 0; i < p.nvars(); ++i) exps[offset + i] = a[i];
    out.add_term(MultiIndex(std::move(exps)), c);
  }
  return out;
}

class MonomialBasis {
 public:
  MonomialBasis() = default;
  MonomialBasis(std::size_t nvars, int max_degree) : nvars_(nvars), max_degree_(max_degree) {
    if (nvars < 1) throw std::invalid_argument("enumerate_basis: nvars must be >= 1");
    if (max_degree < 0) throw std::invalid_argument("enumerate_basis: degree must be >= 0");
    std::vector<int> cur(nvars, 0);
    for (int d = 0; d <= max_degree; ++d) fill(cur, 0, d);
    index_.reserve(monos_.size());
    for (std::size_t i = 0; i < monos_.size(); ++i) index_.emplace(monos_[i], i);
  }

  std::size_t nvars() const { return nvars_; }
  int max_degree() const { return max_degree_; }
  std::size_t size() const { return monos_.size(); }
  const MultiIndex& operator[](std::size_t i) const { return monos_[i]; }
  const std::vector<MultiIndex>& monomials() const { return monos_; }
  auto begin() const { return monos_.begin(); }
  auto end() const { return monos_.end(); }

  bool contains(const MultiIndex& a) const { return index_.count(a) != 0; }
  std::size_t index_of(const MultiIndex& a) const {
    auto it = index_.find(a);
    if (it == index_.end()) throw std::out_of_range("MonomialBasis: monomial outside basis");
    return it->second;
  }
  // Number of leading entries with degree <= t.
  std::size_t prefix_size(int t) const {
    std::size_t n = 0;
    while (n < monos_.size() && monos_[n].degree() <= t) ++n;
    return n;
  }

 private:
  void fill(std::vector<int>& cur, std::size_t var, int remaining) {
    if (var + 1 == nvars_) {
      cur[var] = remaining;
      monos_.emplace_back(cur);
      cur[var] = 0;
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[var] = e;
      fill(cur, var + 1, remaining - e);
    }
    cur[var] = 0;
  }

  std::size_t nvars_ = 0;
  int max_degree_ = 0;
  std::vector<MultiIndex> monos_;
  std::unordered_map<MultiIndex, std::size_t, MultiIndexHash> index_;
};

inline MonomialBasis enumerate_basis(std::size_t nvars, int t) { return MonomialBasis(nvars, t); }

inline std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Variable naming for the text form: blocks such as {"x", 2}, {"xi", 3}
// give names x1 x2 xi1 xi2 xi3 in that order.
struct VariableBlock {
  std::string prefix;
  std::size_t count;
};

class VariableNames {
 public:
  VariableNames() = default;
  VariableNames(std::initializer_list<VariableBlock> blocks) : blocks_(blocks) {}
  explicit VariableNames(std::vector<VariableBlock> blocks) : blocks_(std::move(blocks)) {}

  std::size_t nvars() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.count;
    return n;
  }
  std::string name(std::size_t var) const {
    for (const auto& b : blocks_) {
      if (var < b.count) return b.prefix + std::to_string(var + 1);
      var -= b.count;
    }
    throw std::out_of_range("VariableNames: index out of range");
  }
  // Returns the variable index or -1.
  long lookup(const std::string& prefix, std::size_t one_based) const {
    std::size_t offset = 0;
    for (const auto& b : blocks_) {
      if (b.prefix == prefix) {
        if (one_based >= 1 && one_based <= b.count) return static_cast<long>(offset + one_based - 1);
        return -1;
      }
      offset += b.count;
    }
    return -1;
  }

 private:
  std::vector<VariableBlock> blocks_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t pos)
      : std::runtime_error(msg + " at position " + std::to_string(pos)), pos_(pos) {}
  std::size_t position() const { return pos_; }

 private:
  std::size_t pos_;
};

namespace detail {

class PolyParser {
 public:
  PolyParser(std::string text, const VariableNames& names) : s_(normalize(std::move(text))), names_(names) {}

  Polynomial parse() {
    Polynomial out(names_.nvars());
    skip_ws();
    if (at_end()) throw ParseError("empty polynomial", pos_);
    bool first = true;
    while (!at_end()) {
      double sign = 1.0;
      skip_ws();
      if (peek() == '+' || peek() == '-') {
        sign = peek() == '-' ? -1.0 : 1.0;
        ++pos_;
      } else if (!first) {
        throw ParseError("expected '+' or '-'", pos_);
      }
      first = false;
      auto [coef, mono] = term();
      out.add_term(mono, sign * coef);
      skip_ws();
    }
    return out;
  }

 private:
  static std::string normalize(std::string t) {
    // Accept the Greek letter as an alias of "xi".
    const std::string greek = "\xCE\xBE";
    std::size_t p = 0;
    while ((p = t.find(greek, p)) != std::string::npos) {
      t.replace(p, greek.size(), "xi");
      p += 2;
    }
    return t;
  }
  bool at_end() const { return pos_ >= s_.size(); }
  char peek() const { return at_end() ? '\0' : s_[pos_]; }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  std::pair<double, MultiIndex> term() {
    double coef = 1.0;
    std::vector<int> exps(names_.nvars(), 0);
    bool need_factor = true;
    while (true) {
      skip_ws();
      char c = peek();
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        coef *= number();
      } else if (std::isalpha(static_cast<unsigned char>(c))) {
        auto [var, e] = power();
        exps[var] += e;
      } else {
        throw ParseError(need_factor ? "expected number or variable" : "unexpected character", pos_);
      }
      need_factor = false;
      skip_ws();
      if (peek() == '*') {
        ++pos_;
        need_factor = true;
        continue;
      }
      break;
    }
    return {coef, MultiIndex(std::move(exps))};
  }

  double number() {
    std::size_t start = pos_;
    while (!at_end() && (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.')) ++pos_;
    if (!at_end() && (peek() == 'e' || peek() == 'E')) {
      std::size_t save = pos_;
      ++pos_;
      if (peek() == '+' || peek() == '-') ++pos_;
      if (!std::isdigit(static_cast<unsigned char>(peek()))) {
        pos_ = save;
      } else {
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
      }
    }
    std::string tok = s_.substr(start, pos_ - start);
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw ParseError("malformed number '" + tok + "'", start);
      return v;
    } catch (const std::logic_error&) {
      throw ParseError("malformed number '" + tok + "'", start);
    }
  }

  std::pair<std::size_t, int> power() {
    std::size_t start = pos_;
    std::string prefix;
    while (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) prefix.push_back(s_[pos_++]);
    std::string digits;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) digits.push_back(s_[pos_++]);
    if (digits.empty()) throw ParseError("variable '" + prefix + "' lacks an index", start);
    long var = names_.lookup(prefix, std::stoul(digits));
    if (var < 0) throw ParseError("unknown variable '" + prefix + digits + "'", start);
    int e = 1;
    skip_ws();
    if (peek() == '^') {
      ++pos_;
      skip_ws();
      std::string ed;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ed.push_back(s_[pos_++]);
      if (ed.empty()) throw ParseError("expected exponent", pos_);
      e = std::stoi(ed);
    }
    return {static_cast<std::size_t>(var), e};
  }

  std::string s_;
  const VariableNames& names_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Polynomial parse_polynomial(const std::string& text, const VariableNames& names) {
  return detail::PolyParser(text, names).parse();
}

inline std::string to_string(const Polynomial& p, const VariableNames& names) {
  if (names.nvars() != p.nvars()) throw std::invalid_argument("to_string: variable count mismatch");
  if (p.is_zero()) return "0";
  std::string out;
  char buf[64];
  for (const auto& [a, c] : p.terms()) {
    double mag = std::abs(c);
    out += out.empty() ? (c < 0 ? "-" : "") : (c < 0 ? " - " : " + ");
    std::snprintf(buf, sizeof buf, "%.17g", mag);
    out += buf;
    for (std::size_t i = 0; i < a.nvars(); ++i) {
      if (a[i] == 0) continue;
      out += "*" + names.name(i);
      if (a[i] > 1) out += "^" + std::to_string(a[i]);
    }
  }
  return out;
}

}  // namespace wdro
