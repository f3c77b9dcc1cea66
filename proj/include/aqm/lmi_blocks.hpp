#pragma once

// Block layouts shared by the delay-dependent conditions. The extended vector
// is xi = [x'(t); x(t); x(t-h/r); ...; x(t-(r-1)h/r); x(t-h)], i.e. r+2 blocks
// of size n. Positions below are 0-based.

#include <stdexcept>
#include <type_traits>

#include <Eigen/Dense>

#include "aqm/model.hpp"
#include "aqm/sdp.hpp"

namespace aqm {

/// Rows [count*n] x [(r+2)n] picking `count` consecutive blocks from `first`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> block_selector(Eigen::Index first, Eigen::Index count,
                                                                     Eigen::Index n, int r) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix E = Matrix::Zero(count * n, (r + 2) * n);
  E.block(0, first * n, count * n, count * n).setIdentity();
  return E;
}

namespace detail {

template <typename T>
struct scalar_of {
  using type = typename T::Scalar;
};
template <typename S>
struct scalar_of<sdp::AffineMatrix<S>> {
  using type = S;
};

}  // namespace detail

/// Gamma(P, Q, R; h, r). Works on numeric matrices and on affine expressions of
/// decision variables alike.
///
///   (h/r) R at (0,0); P at (0,1)/(1,0);
///   -(r/h) R at (1,1) and (2,2), +(r/h) R at (1,2)/(2,1);
///   +Q over blocks 1..r, -Q over blocks 2..r+1.
template <typename Mat>
auto gamma_expression(const Mat& P, const Mat& Q, const Mat& R, double h, int r, Eigen::Index n) {
  using Scalar = typename detail::scalar_of<Mat>::type;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Result = std::conditional_t<std::is_same_v<Mat, sdp::AffineMatrix<Scalar>>, sdp::AffineMatrix<Scalar>, Matrix>;
  if (!(h > 0)) throw std::invalid_argument("Gamma: delay must be positive");
  if (r < 1) throw std::invalid_argument("Gamma: r must be >= 1");
  if (P.rows() != n || P.cols() != n || R.rows() != n || R.cols() != n || Q.rows() != r * n || Q.cols() != r * n)
    throw sdp::DimensionMismatch("Gamma: dimension mismatch");

  const Matrix e0 = block_selector<Scalar>(0, 1, n, r);
  const Matrix e1 = block_selector<Scalar>(1, 1, n, r);
  const Matrix jensen = e1 - block_selector<Scalar>(2, 1, n, r);
  const Matrix head = block_selector<Scalar>(1, r, n, r);
  const Matrix tail = block_selector<Scalar>(2, r, n, r);
  const Scalar step = Scalar(h / r);

  Result G = Result(e0.transpose() * R * e0) * step;
  G = G + Result(e0.transpose() * P * e1) + Result(e1.transpose() * P * e0);
  G = G - Result(jensen.transpose() * R * jensen) * (Scalar(1) / step);
  G = G + Result(head.transpose() * Q * head) - Result(tail.transpose() * Q * tail);
  return G;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> build_gamma(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& P,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& Q,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& R, double h, int r, Eigen::Index n) {
  return gamma_expression(P, Q, R, h, r, n);
}

/// S = [-I, A, 0, ..., 0, Ad + B K], an n x (r+2)n matrix.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> build_S(const LinearModel<Scalar>& model,
                                                              const Eigen::MatrixBase<Derived>& K, int r) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  model.validate();
  if (r < 1) throw std::invalid_argument("S: r must be >= 1");
  const auto n = model.states();
  if (K.rows() != model.inputs() || K.cols() != n) throw sdp::DimensionMismatch("S: gain dimension mismatch");
  Matrix S = Matrix::Zero(n, (r + 2) * n);
  S.leftCols(n) = -Matrix::Identity(n, n);
  S.block(0, n, n, n) = model.A;
  S.rightCols(n) = model.Ad + model.B * K;
  return S;
}

}  // namespace aqm
