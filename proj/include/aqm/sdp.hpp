#pragma once

// Small dense LMI feasibility engine.
//
// A problem is a set of matrix decision variables (stacked into one scalar
// vector x) and affine symmetric constraints F_k(x) < 0. The solver maximizes
// a uniform margin t with F_k(x) + t I <= 0, under the normalization V >= I
// for every variable flagged positive-definite and a loose ball |x| <= radius.
// It is a primal log-barrier path follower with damped Newton centering.

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace aqm::sdp {

using Eigen::Index;

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class VariableKind { symmetric, rectangular };
enum class Definiteness { none, positive_definite };
enum class Status { certified_feasible, no_certificate };

inline const char* to_string(Status s) {
  return s == Status::certified_feasible ? "certified-feasible" : "no-certificate";
}

/// M(x) = constant + sum_i x_i * coeff_i
template <typename Scalar>
class AffineMatrix {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Terms = std::map<Index, Matrix>;

  AffineMatrix() = default;
  AffineMatrix(Index rows, Index cols) : constant_(Matrix::Zero(rows, cols)) {}

  template <typename Derived>
  AffineMatrix(const Eigen::MatrixBase<Derived>& constant) : constant_(constant) {}

  static AffineMatrix zero(Index rows, Index cols) { return AffineMatrix(rows, cols); }

  Index rows() const { return constant_.rows(); }
  Index cols() const { return constant_.cols(); }
  const Matrix& constant() const { return constant_; }
  const Terms& terms() const { return terms_; }

  void add_term(Index scalar, const Matrix& coeff) {
    check_same_shape(coeff.rows(), coeff.cols());
    auto [it, inserted] = terms_.try_emplace(scalar, coeff);
    if (!inserted) it->second += coeff;
  }

  template <typename Derived>
  Matrix evaluate(const Eigen::MatrixBase<Derived>& x) const {
    Matrix out = constant_;
    for (const auto& [i, c] : terms_) out += x(i) * c;
    return out;
  }

  AffineMatrix transpose() const {
    AffineMatrix out(constant_.transpose());
    for (const auto& [i, c] : terms_) out.terms_.emplace(i, c.transpose());
    return out;
  }

  bool is_symmetric(Scalar tol) const {
    if (rows() != cols()) return false;
    auto sym = [tol](const Matrix& m) {
      return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * (Scalar(1) + m.cwiseAbs().maxCoeff());
    };
    if (rows() == 0) return true;
    if (!sym(constant_)) return false;
    for (const auto& [i, c] : terms_)
      if (!sym(c)) return false;
    return true;
  }

  AffineMatrix& operator+=(const AffineMatrix& o) {
    check_same_shape(o.rows(), o.cols());
    constant_ += o.constant_;
    for (const auto& [i, c] : o.terms_) add_term(i, c);
    return *this;
  }
  AffineMatrix& operator-=(const AffineMatrix& o) { return *this += -o; }
  AffineMatrix& operator*=(Scalar a) {
    constant_ *= a;
    for (auto& [i, c] : terms_) c *= a;
    return *this;
  }

  friend AffineMatrix operator+(AffineMatrix a, const AffineMatrix& b) { return a += b; }
  friend AffineMatrix operator-(AffineMatrix a, const AffineMatrix& b) { return a -= b; }
  friend AffineMatrix operator-(AffineMatrix a) { return a *= Scalar(-1); }
  friend AffineMatrix operator*(Scalar s, AffineMatrix a) { return a *= s; }
  friend AffineMatrix operator*(AffineMatrix a, Scalar s) { return a *= s; }

  template <typename Derived>
  friend AffineMatrix operator*(const Eigen::MatrixBase<Derived>& left, const AffineMatrix& m) {
    if (left.cols() != m.rows()) throw DimensionMismatch("AffineMatrix: left product dimension mismatch");
    AffineMatrix out(left * m.constant_);
    for (const auto& [i, c] : m.terms_) out.terms_.emplace(i, left * c);
    return out;
  }

  template <typename Derived>
  friend AffineMatrix operator*(const AffineMatrix& m, const Eigen::MatrixBase<Derived>& right) {
    if (m.cols() != right.rows()) throw DimensionMismatch("AffineMatrix: right product dimension mismatch");
    AffineMatrix out(m.constant_ * right);
    for (const auto& [i, c] : m.terms_) out.terms_.emplace(i, c * right);
    return out;
  }

 private:
  void check_same_shape(Index r, Index c) const {
    if (r != rows() || c != cols()) throw DimensionMismatch("AffineMatrix: shape mismatch");
  }

  Matrix constant_;
  Terms terms_;
};

/// <M> = M + M^T
template <typename Scalar>
AffineMatrix<Scalar> herm(const AffineMatrix<Scalar>& m) {
  return m + m.transpose();
}

/// Assemble a block matrix from a grid of affine blocks.
template <typename Scalar>
AffineMatrix<Scalar> block_matrix(const std::vector<std::vector<AffineMatrix<Scalar>>>& grid) {
  if (grid.empty()) return {};
  std::vector<Index> heights, widths;
  for (const auto& row : grid) {
    if (row.size() != grid.front().size()) throw DimensionMismatch("block_matrix: ragged grid");
    heights.push_back(row.front().rows());
  }
  for (const auto& b : grid.front()) widths.push_back(b.cols());
  Index total_r = 0, total_c = 0;
  for (auto h : heights) total_r += h;
  for (auto w : widths) total_c += w;

  using Matrix = typename AffineMatrix<Scalar>::Matrix;
  Matrix constant = Matrix::Zero(total_r, total_c);
  std::map<Index, Matrix> terms;
  Index r0 = 0;
  for (std::size_t bi = 0; bi < grid.size(); ++bi) {
    Index c0 = 0;
    for (std::size_t bj = 0; bj < grid[bi].size(); ++bj) {
      const auto& blk = grid[bi][bj];
      if (blk.rows() != heights[bi] || blk.cols() != widths[bj])
        throw DimensionMismatch("block_matrix: inconsistent block sizes");
      constant.block(r0, c0, blk.rows(), blk.cols()) = blk.constant();
      for (const auto& [i, c] : blk.terms()) {
        auto [it, inserted] = terms.try_emplace(i, Matrix::Zero(total_r, total_c));
        it->second.block(r0, c0, c.rows(), c.cols()) += c;
      }
      c0 += widths[bj];
    }
    r0 += heights[bi];
  }
  AffineMatrix<Scalar> out(constant);
  for (auto& [i, c] : terms) out.add_term(i, c);
  return out;
}

struct MatrixVariable {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  VariableKind kind = VariableKind::rectangular;
  Definiteness definiteness = Definiteness::none;
  Index offset = 0;  // first scalar index

  Index scalar_count() const {
    return kind == VariableKind::symmetric ? rows * (rows + 1) / 2 : rows * cols;
  }
};

struct VariableId {
  std::size_t index = 0;
};

template <typename Scalar>
struct LmiConstraint {
  std::string name;
  AffineMatrix<Scalar> F;  // required F(x) < 0
};

/// Decision variables plus constraints F_k(x) < 0.
template <typename Scalar>
class LmiProblem {
 public:
  using Matrix = typename AffineMatrix<Scalar>::Matrix;
  using Vector = typename AffineMatrix<Scalar>::Vector;

  VariableId add_symmetric(std::string name, Index order,
                           Definiteness def = Definiteness::positive_definite) {
    if (order <= 0) throw DimensionMismatch("symmetric variable needs positive order");
    return add({std::move(name), order, order, VariableKind::symmetric, def, scalars_});
  }

  VariableId add_rectangular(std::string name, Index rows, Index cols) {
    if (rows <= 0 || cols <= 0) throw DimensionMismatch("rectangular variable needs positive size");
    return add({std::move(name), rows, cols, VariableKind::rectangular, Definiteness::none, scalars_});
  }

  /// Affine expression of a variable: sum over its scalars of x_s * basis_s.
  AffineMatrix<Scalar> var(VariableId id) const {
    const auto& v = variables_.at(id.index);
    AffineMatrix<Scalar> out(v.rows, v.cols);
    Index s = v.offset;
    if (v.kind == VariableKind::symmetric) {
      for (Index j = 0; j < v.cols; ++j)
        for (Index i = j; i < v.rows; ++i) {
          Matrix basis = Matrix::Zero(v.rows, v.cols);
          basis(i, j) = 1;
          basis(j, i) = 1;
          out.add_term(s++, basis);
        }
    } else {
      for (Index j = 0; j < v.cols; ++j)
        for (Index i = 0; i < v.rows; ++i) {
          Matrix basis = Matrix::Zero(v.rows, v.cols);
          basis(i, j) = 1;
          out.add_term(s++, basis);
        }
    }
    return out;
  }

  void add_lmi(AffineMatrix<Scalar> F, std::string name = {}) {
    if (F.rows() != F.cols()) throw DimensionMismatch("LMI must be square");
    if (!F.is_symmetric(Scalar(1e-10)))
      throw std::invalid_argument("non-symmetric assembly in constraint '" + name + "'");
    for (const auto& [i, c] : F.terms())
      if (i < 0 || i >= scalars_) throw DimensionMismatch("LMI references unknown scalar");
    if (name.empty()) name = "lmi" + std::to_string(constraints_.size());
    constraints_.push_back({std::move(name), std::move(F)});
  }

  Matrix value(VariableId id, const Vector& x) const { return var(id).evaluate(x); }

  const std::vector<MatrixVariable>& variables() const { return variables_; }
  const std::vector<LmiConstraint<Scalar>>& constraints() const { return constraints_; }
  Index scalar_count() const { return scalars_; }

 private:
  VariableId add(MatrixVariable v) {
    for (const auto& existing : variables_)
      if (existing.name == v.name) throw std::invalid_argument("duplicate variable '" + v.name + "'");
    scalars_ += v.scalar_count();
    variables_.push_back(std::move(v));
    return {variables_.size() - 1};
  }

  std::vector<MatrixVariable> variables_;
  std::vector<LmiConstraint<Scalar>> constraints_;
  Index scalars_ = 0;
};

struct SolverOptions {
  double feas_tol = 1e-7;
  int max_iterations = 500;  // Newton steps, all outer rounds together
  /// Stop as soon as the margin reaches this value. Homogeneous problems
  /// have unbounded margin; past this cap it carries no information.
  double margin_cap = 1.0;
  double radius = 1e6;
  double barrier_growth = 20.0;
  double gap_tol = 1e-9;
};

template <typename Scalar>
struct SdpSolution {
  using Matrix = typename AffineMatrix<Scalar>::Matrix;
  using Vector = typename AffineMatrix<Scalar>::Vector;

  Status status = Status::no_certificate;
  Vector x;
  std::map<std::string, Matrix> assignment;
  double margin = -std::numeric_limits<double>::infinity();
  int iterations = 0;

  bool certified() const { return status == Status::certified_feasible; }
  const Matrix& operator[](const std::string& name) const { return assignment.at(name); }
};

template <typename Derived>
typename Derived::Scalar min_eig(const Eigen::MatrixBase<Derived>& M) {
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (M.rows() == 0) return typename Derived::Scalar(0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

template <typename Derived>
typename Derived::Scalar max_eig(const Eigen::MatrixBase<Derived>& M) {
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (M.rows() == 0) return typename Derived::Scalar(0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

struct ConstraintVerdict {
  std::string name;
  double lambda_max = 0;
  bool pass = false;
};

/// Independent re-evaluation of every constraint at x.
template <typename Scalar, typename Derived>
std::vector<ConstraintVerdict> verify_assignment(const LmiProblem<Scalar>& problem,
                                                 const Eigen::MatrixBase<Derived>& x, double tol) {
  if (x.size() != problem.scalar_count()) throw DimensionMismatch("assignment size mismatch");
  std::vector<ConstraintVerdict> out;
  for (const auto& c : problem.constraints()) {
    const double lmax = static_cast<double>(max_eig(c.F.evaluate(x)));
    out.push_back({c.name, lmax, lmax <= -tol});
  }
  return out;
}

/// Overload taking per-variable values; missing variables are an error.
template <typename Scalar>
std::vector<ConstraintVerdict> verify_assignment(
    const LmiProblem<Scalar>& problem,
    const std::map<std::string, typename LmiProblem<Scalar>::Matrix>& assignment, double tol) {
  typename LmiProblem<Scalar>::Vector x =
      LmiProblem<Scalar>::Vector::Zero(problem.scalar_count());
  for (const auto& v : problem.variables()) {
    auto it = assignment.find(v.name);
    if (it == assignment.end()) throw std::invalid_argument("assignment misses variable '" + v.name + "'");
    const auto& M = it->second;
    if (M.rows() != v.rows || M.cols() != v.cols) throw DimensionMismatch("assignment shape for '" + v.name + "'");
    Index s = v.offset;
    if (v.kind == VariableKind::symmetric) {
      for (Index j = 0; j < v.cols; ++j)
        for (Index i = j; i < v.rows; ++i) x(s++) = (i == j) ? M(i, j) : Scalar(0.5) * (M(i, j) + M(j, i));
    } else {
      for (Index j = 0; j < v.cols; ++j)
        for (Index i = 0; i < v.rows; ++i) x(s++) = M(i, j);
    }
  }
  return verify_assignment(problem, x, tol);
}

template <typename Scalar>
class BarrierSolver {
 public:
  using Matrix = typename AffineMatrix<Scalar>::Matrix;
  using Vector = typename AffineMatrix<Scalar>::Vector;

  explicit BarrierSolver(SolverOptions options = {}) : opt_(options) {}

  SdpSolution<Scalar> solve(const LmiProblem<Scalar>& problem) {
    setup(problem);
    Vector y = initial_point(problem);
    double s = initial_weight(static_cast<double>(y(m_)));
    int iterations = 0;
    Vector best_x = y.head(m_);
    double best_margin = margin_at(best_x);

    auto finish = [&](const Vector& x, double margin) {
      SdpSolution<Scalar> sol;
      sol.x = x;
      sol.margin = margin;
      sol.iterations = iterations;
      sol.status = margin >= opt_.feas_tol ? Status::certified_feasible : Status::no_certificate;
      for (std::size_t v = 0; v < problem.variables().size(); ++v)
        sol.assignment.emplace(problem.variables()[v].name, problem.value(VariableId{v}, x));
      return sol;
    };

    while (true) {
      const Centering c = center(y, s, iterations);
      const Vector x = y.head(m_);
      const double margin = margin_at(x);
      if (margin > best_margin) {
        best_margin = margin;
        best_x = x;
      }
      if (best_margin >= opt_.margin_cap) break;
      if (c == Centering::budget) break;
      const double gap = nu_ / s;
      const double t = static_cast<double>(y(m_));
      if (c == Centering::centered) {
        // A centered point bounds the optimum: t* <= t + nu/s.
        if (t + gap < opt_.feas_tol) break;
        if (gap <= opt_.gap_tol * std::max(1.0, std::abs(t))) break;
      } else if (s > 1e15) {
        break;
      }
      s *= opt_.barrier_growth;
    }
    return finish(best_x, best_margin);
  }

 private:
  struct Block {
    Matrix G0;
    std::vector<std::pair<Index, Matrix>> coeffs;  // over y = (x, t)
  };

  void setup(const LmiProblem<Scalar>& problem) {
    m_ = problem.scalar_count();
    blocks_.clear();
    lmis_.clear();
    nu_ = 1.0;  // ball
    for (const auto& c : problem.constraints()) {
      const Index k = c.F.rows();
      Block b;
      b.G0 = -c.F.constant();
      for (const auto& [i, coeff] : c.F.terms()) b.coeffs.emplace_back(i, -coeff);
      b.coeffs.emplace_back(m_, -Matrix::Identity(k, k));
      blocks_.push_back(std::move(b));
      lmis_.push_back(&c.F);
      nu_ += static_cast<double>(k);
    }
    for (std::size_t v = 0; v < problem.variables().size(); ++v) {
      const auto& var = problem.variables()[v];
      if (var.definiteness != Definiteness::positive_definite) continue;
      if (var.kind != VariableKind::symmetric)
        throw DimensionMismatch("positive-definite variable must be symmetric");
      auto expr = problem.var(VariableId{v});
      Block b;
      b.G0 = -Matrix::Identity(var.rows, var.rows);
      for (const auto& [i, coeff] : expr.terms()) b.coeffs.emplace_back(i, coeff);
      blocks_.push_back(std::move(b));
      nu_ += static_cast<double>(var.rows);
    }
  }

  Vector initial_point(const LmiProblem<Scalar>& problem) const {
    Vector y = Vector::Zero(m_ + 1);
    for (const auto& var : problem.variables()) {
      if (var.definiteness != Definiteness::positive_definite) continue;
      Index s = var.offset;
      for (Index j = 0; j < var.cols; ++j)
        for (Index i = j; i < var.rows; ++i) y(s++) = (i == j) ? Scalar(2) : Scalar(0);
    }
    if (y.head(m_).norm() >= Scalar(0.5) * opt_.radius)
      throw std::invalid_argument("solver radius too small for the normalization");
    double worst = 0;
    for (const auto* F : lmis_) worst = std::max(worst, static_cast<double>(max_eig(F->evaluate(y.head(m_)))));
    y(m_) = Scalar(-worst - 1.0 - 0.1 * std::abs(worst));
    return y;
  }

  // Puts the first center near the starting t.
  double initial_weight(double t0) const { return std::min(1.0, nu_ / (1.0 + std::abs(t0))); }

  double margin_at(const Vector& x) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto* F : lmis_) worst = std::max(worst, static_cast<double>(max_eig(F->evaluate(x))));
    return lmis_.empty() ? std::numeric_limits<double>::infinity() : -worst;
  }

  Matrix block_value(const Block& b, const Vector& y) const {
    Matrix G = b.G0;
    for (const auto& [i, c] : b.coeffs) G += y(i) * c;
    return G;
  }

  /// Barrier objective s*(-t) + phi(y); +inf outside the domain.
  double objective(const Vector& y, double s) const {
    double f = -s * static_cast<double>(y(m_));
    for (const auto& b : blocks_) {
      Eigen::LLT<Matrix> llt(block_value(b, y));
      if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
      const auto d = llt.matrixL().toDenseMatrix().diagonal();
      for (Index i = 0; i < d.size(); ++i) {
        if (!(d(i) > 0)) return std::numeric_limits<double>::infinity();
        f -= 2.0 * std::log(static_cast<double>(d(i)));
      }
    }
    const double slack = opt_.radius * opt_.radius - static_cast<double>(y.head(m_).squaredNorm());
    if (!(slack > 0)) return std::numeric_limits<double>::infinity();
    return f - std::log(slack);
  }

  enum class Centering { centered, stalled, budget };

  /// Damped Newton centering.
  Centering center(Vector& y, double s, int& iterations) {
    const Index dim = m_ + 1;
    for (int inner = 0; inner < 100; ++inner) {
      if (iterations >= opt_.max_iterations) return Centering::budget;
      ++iterations;
      Vector g = Vector::Zero(dim);
      Matrix H = Matrix::Zero(dim, dim);
      g(m_) = Scalar(-s);
      for (const auto& b : blocks_) {
        Eigen::LLT<Matrix> llt(block_value(b, y));
        std::vector<Matrix> W;
        W.reserve(b.coeffs.size());
        for (const auto& [i, c] : b.coeffs) {
          Matrix Wi = llt.matrixL().solve(c);
          Wi = llt.matrixL().solve(Matrix(Wi.transpose()));
          W.push_back(std::move(Wi));
        }
        // scalar indices are unique within a block
        for (std::size_t a = 0; a < b.coeffs.size(); ++a) {
          const Index ia = b.coeffs[a].first;
          g(ia) -= W[a].trace();
          for (std::size_t c = 0; c < a; ++c) {
            const Index ic = b.coeffs[c].first;
            const Scalar h = (W[a].array() * W[c].array()).sum();
            H(ia, ic) += h;
            H(ic, ia) += h;
          }
          H(ia, ia) += W[a].squaredNorm();
        }
      }
      const Scalar slack = Scalar(opt_.radius * opt_.radius) - y.head(m_).squaredNorm();
      g.head(m_) += Scalar(2) * y.head(m_) / slack;
      H.topLeftCorner(m_, m_) += Scalar(2) / slack * Matrix::Identity(m_, m_) +
                                 Scalar(4) / (slack * slack) * y.head(m_) * y.head(m_).transpose();

      // Jacobi scaling; coefficient magnitudes differ by many decades
      const Vector d = H.diagonal().cwiseMax(Scalar(1e-300)).cwiseSqrt().cwiseInverse();
      Matrix Hs = d.asDiagonal() * H * d.asDiagonal();
      Eigen::LDLT<Matrix> ldlt(Hs);
      Vector step = d.asDiagonal() * ldlt.solve(Vector(-(d.asDiagonal() * g)));
      if (!step.allFinite() || ldlt.info() != Eigen::Success) {
        Hs.diagonal().array() += Scalar(1e-12);
        step = d.asDiagonal() * Hs.ldlt().solve(Vector(-(d.asDiagonal() * g)));
      }
      const double decrement = -static_cast<double>(g.dot(step));
      if (!(decrement >= 0) || !std::isfinite(decrement)) return Centering::stalled;
      if (decrement * 0.5 <= 1e-10) return Centering::centered;

      const double f0 = objective(y, s);
      const double slope = static_cast<double>(g.dot(step));
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        Vector trial = y + Scalar(alpha) * step;
        const double f1 = objective(trial, s);
        if (std::isfinite(f1) && f1 <= f0 + 0.25 * alpha * slope) {
          y = std::move(trial);
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) return decrement < 1e-4 ? Centering::centered : Centering::stalled;
      if (margin_at(y.head(m_)) >= opt_.margin_cap) return Centering::centered;
      // round-off floor
      if (std::abs(f0 - objective(y, s)) <= 1e-13 * (1.0 + std::abs(f0)))
        return decrement < 1e-4 ? Centering::centered : Centering::stalled;
    }
    return Centering::stalled;
  }

  SolverOptions opt_;
  Index m_ = 0;
  double nu_ = 1.0;
  std::vector<Block> blocks_;
  std::vector<const AffineMatrix<Scalar>*> lmis_;
};

template <typename Scalar>
SdpSolution<Scalar> solve_feasibility(const LmiProblem<Scalar>& problem, const SolverOptions& options = {}) {
  return BarrierSolver<Scalar>(options).solve(problem);
}

}  // namespace aqm::sdp
