#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace aqm {

/// Raised for invalid network descriptions (config-level problems).
class InvalidParams : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when the requested operating point does not exist.
class InfeasibleOperatingPoint : public std::domain_error {
 public:
  InfeasibleOperatingPoint() : std::domain_error("infeasible operating point") {}
};

/// Physical description of the bottleneck link and its TCP population.
struct NetworkParams {
  double sessions = 60;        // N
  double capacity = 3750;      // C, packets/s
  double propagation = 0.2;    // Tp, s
  double target_queue = 175;   // q0, packets
  double buffer = 800;         // packets

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(sessions) || !finite(capacity) || !finite(propagation) ||
        !finite(target_queue) || !finite(buffer))
      throw InvalidParams("network parameters must be finite");
    if (sessions <= 0 || capacity <= 0)
      throw InvalidParams("N and C must be strictly positive");
    if (propagation < 0 || target_queue < 0)
      throw InvalidParams("Tp and q0 must be nonnegative");
    if (target_queue >= buffer) throw InvalidParams("q0 must be below the buffer size");
  }
};

/// Operating point (W0, p0, R0).
struct Equilibrium {
  double window = 0;      // W0, packets
  double drop_prob = 0;   // p0
  double rtt = 0;         // R0, s
};

inline Equilibrium equilibrium(const NetworkParams& params) {
  params.validate();
  Equilibrium eq;
  eq.rtt = params.target_queue / params.capacity + params.propagation;
  eq.window = eq.rtt * params.capacity / params.sessions;
  if (!(eq.window > 0)) throw InfeasibleOperatingPoint();
  eq.drop_prob = 2.0 / (eq.window * eq.window);
  if (eq.drop_prob > 1.0) throw InfeasibleOperatingPoint();
  return eq;
}

/// Same operating point but with R0 forced to a given (e.g. rounded) value.
inline Equilibrium equilibrium_at_rtt(const NetworkParams& params, double rtt) {
  params.validate();
  if (!(rtt > 0) || !std::isfinite(rtt)) throw InvalidParams("R0 must be positive");
  Equilibrium eq;
  eq.rtt = rtt;
  eq.window = rtt * params.capacity / params.sessions;
  eq.drop_prob = 2.0 / (eq.window * eq.window);
  if (eq.drop_prob > 1.0) throw InfeasibleOperatingPoint();
  return eq;
}

/// x'(t) = A x(t) + Ad x(t-h) + B u(t-h)
template <typename Scalar>
struct LinearModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Matrix A;
  Matrix Ad;
  Matrix B;
  Scalar h = Scalar(0);

  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return B.cols(); }

  void validate() const {
    const auto n = A.rows();
    if (A.cols() != n || Ad.rows() != n || Ad.cols() != n || B.rows() != n)
      throw std::invalid_argument("LinearModel: inconsistent dimensions");
    if (!A.allFinite() || !Ad.allFinite() || !B.allFinite())
      throw std::invalid_argument("LinearModel: non-finite entries");
  }

  /// Delayed closed-loop matrix Ad + B K.
  template <typename Derived>
  Matrix closed_loop_delayed(const Eigen::MatrixBase<Derived>& K) const {
    return Ad + B * K;
  }
};

using LinearModeld = LinearModel<double>;

template <typename Scalar = double>
LinearModel<Scalar> linearize(const NetworkParams& params, const Equilibrium& eq) {
  params.validate();
  const Scalar N = params.sessions, C = params.capacity, R0 = eq.rtt;
  if (!(R0 > 0)) throw InvalidParams("R0 must be positive");
  LinearModel<Scalar> m;
  m.A.resize(2, 2);
  m.Ad.resize(2, 2);
  m.B.resize(2, 1);
  const Scalar r2c = R0 * R0 * C;
  m.A << -N / r2c, Scalar(-1) / r2c, N / R0, Scalar(-1) / R0;
  m.Ad << -N / r2c, Scalar(1) / r2c, Scalar(0), Scalar(0);
  m.B << -C * C * R0 / (Scalar(2) * N * N), Scalar(0);
  m.h = R0;
  return m;
}

/// Affine generators of the R0-dependent matrices:
///   A = rho1 A0 + rho2 A1,  Ad = rho2 Ad0,  B = rho3 B0
/// with rho1 = 1/R0, rho2 = 1/R0^2, rho3 = R0.
template <typename Scalar>
struct PolytopeGenerators {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix A0, A1, Ad0, B0;

  static PolytopeGenerators from(const NetworkParams& p) {
    const Scalar N = p.sessions, C = p.capacity;
    PolytopeGenerators g;
    g.A0.resize(2, 2);
    g.A1.resize(2, 2);
    g.Ad0.resize(2, 2);
    g.B0.resize(2, 1);
    g.A0 << Scalar(0), Scalar(0), N, Scalar(-1);
    g.A1 << -N / C, Scalar(-1) / C, Scalar(0), Scalar(0);
    g.Ad0 << -N / C, Scalar(1) / C, Scalar(0), Scalar(0);
    g.B0 << -C * C / (Scalar(2) * N * N), Scalar(0);
    return g;
  }

  LinearModel<Scalar> evaluate(Scalar rho1, Scalar rho2, Scalar rho3) const {
    LinearModel<Scalar> m;
    m.A = rho1 * A0 + rho2 * A1;
    m.Ad = rho2 * Ad0;
    m.B = rho3 * B0;
    m.h = rho3;
    return m;
  }
};

struct Interval {
  double lo = 0;
  double hi = 0;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

template <typename Scalar>
struct Polytope {
  NetworkParams params;
  double rtt_min = 0;
  double rtt_max = 0;
  std::array<Interval, 3> rho;  // bounds of 1/R0, 1/R0^2, R0
  /// Binary enumeration of the rho-box corners: rho1 outermost, rho3 innermost,
  /// low before high.
  std::vector<LinearModel<Scalar>> vertices;

  static constexpr std::size_t vertex_count = 8;
};

using Polytoped = Polytope<double>;

template <typename Scalar = double>
Polytope<Scalar> build_polytope(const NetworkParams& params, double rtt_min, double rtt_max) {
  params.validate();
  if (!(rtt_min > 0) || !(rtt_min <= rtt_max) || !std::isfinite(rtt_max))
    throw InvalidParams("invalid R0 interval");
  Polytope<Scalar> poly;
  poly.params = params;
  poly.rtt_min = rtt_min;
  poly.rtt_max = rtt_max;
  poly.rho = {Interval{1.0 / rtt_max, 1.0 / rtt_min},
              Interval{1.0 / (rtt_max * rtt_max), 1.0 / (rtt_min * rtt_min)},
              Interval{rtt_min, rtt_max}};
  const auto gen = PolytopeGenerators<Scalar>::from(params);
  poly.vertices.reserve(Polytope<Scalar>::vertex_count);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        const Scalar r1 = i ? poly.rho[0].hi : poly.rho[0].lo;
        const Scalar r2 = j ? poly.rho[1].hi : poly.rho[1].lo;
        const Scalar r3 = k ? poly.rho[2].hi : poly.rho[2].lo;
        poly.vertices.push_back(gen.evaluate(r1, r2, r3));
      }
  return poly;
}

/// Multilinear interpolation weights of a rho-point inside the box, in vertex
/// order. Weights are nonnegative and sum to one when the point is inside.
template <typename Scalar>
std::array<double, 8> vertex_weights(const Polytope<Scalar>& poly, double rho1, double rho2,
                                     double rho3) {
  auto frac = [](const Interval& iv, double v) {
    return iv.hi > iv.lo ? (v - iv.lo) / (iv.hi - iv.lo) : 0.0;
  };
  const std::array<double, 3> f = {frac(poly.rho[0], rho1), frac(poly.rho[1], rho2),
                                   frac(poly.rho[2], rho3)};
  std::array<double, 8> w{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        w[4 * i + 2 * j + k] = (i ? f[0] : 1 - f[0]) * (j ? f[1] : 1 - f[1]) * (k ? f[2] : 1 - f[2]);
  return w;
}

}  // namespace aqm
