#pragma once

#include "pmesii/types.hpp"

namespace pmesii {

/// Linear-with-saturation dynamics around the 0.5 reference point.
///
/// One weekly step maps x to
///   clamp01( x + coupling (x - 0.5) + effects u + drift + shock )
/// where u holds the 0/1 activation flags of the action catalog.
template <typename Scalar>
struct LinearDynamics {
  MatrixX<Scalar> coupling; // n x n, index/week per unit deviation
  MatrixX<Scalar> effects;  // n x m, index/week per active action
  VectorX<Scalar> drift;    // n, index/week

  Index size() const { return coupling.rows(); }
  Index action_count() const { return effects.cols(); }

  bool operator==(const LinearDynamics &other) const {
    return coupling.rows() == other.coupling.rows() && coupling.cols() == other.coupling.cols() &&
           effects.rows() == other.effects.rows() && effects.cols() == other.effects.cols() &&
           drift.size() == other.drift.size() && coupling == other.coupling &&
           effects == other.effects && drift == other.drift;
  }
};

/// Unclamped increment of one step. Shared by the plant and every forecast so
/// that zero-noise runs agree bit for bit.
template <typename Scalar, typename DerivedX, typename DerivedU>
VectorX<Scalar> increment(const LinearDynamics<Scalar> &dyn, const Eigen::MatrixBase<DerivedX> &x,
                          const Eigen::MatrixBase<DerivedU> &u) {
  VectorX<Scalar> centered = x.array() - Scalar(0.5);
  VectorX<Scalar> dx = dyn.coupling * centered;
  dx.noalias() += dyn.effects * u;
  dx += dyn.drift;
  return dx;
}

template <typename Scalar, typename DerivedX, typename DerivedU>
VectorX<Scalar> propagate(const LinearDynamics<Scalar> &dyn, const Eigen::MatrixBase<DerivedX> &x,
                          const Eigen::MatrixBase<DerivedU> &u, const VectorX<Scalar> &shock) {
  VectorX<Scalar> next = x + increment(dyn, x, u);
  next += shock;
  return next.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

/// Largest absolute row sum of the coupling matrix (per-week stability proxy).
template <typename Scalar>
Scalar coupling_row_norm(const LinearDynamics<Scalar> &dyn) {
  if (dyn.coupling.size() == 0)
    return Scalar(0);
  return dyn.coupling.cwiseAbs().rowwise().sum().maxCoeff();
}

} // namespace pmesii
