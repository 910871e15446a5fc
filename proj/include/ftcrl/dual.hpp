#pragma once

#include <cmath>

namespace ftcrl::nn {

// First-order dual number: value plus a directional derivative. Running the
// analytic gradient computation on duals pushes a tangent direction through
// it (forward over reverse), which yields exact Hessian-vector products.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // constants carry a zero tangent
  Dual(double value, double tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(const Dual& a, const Dual& b) {
  double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

// Comparisons look at values only; branches taken on duals match the
// branches the plain double computation would take.
inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

inline Dual tanh(Dual x) {
  double t = std::tanh(x.v);
  return {t, (1.0 - t * t) * x.d};
}
inline Dual exp(Dual x) {
  double e = std::exp(x.v);
  return {e, e * x.d};
}
inline Dual log(Dual x) { return {std::log(x.v), x.d / x.v}; }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace ftcrl::nn
