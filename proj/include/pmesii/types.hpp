#pragma once

#include <Eigen/Core>

namespace pmesii {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using Index = Eigen::Index;

// Planning is monthly, simulation weekly. A month is exactly four weeks.
inline constexpr int kWeeksPerMonth = 4;
inline constexpr int kWeeksPerYear = 52;

constexpr int month_of_week(int week) { return week / kWeeksPerMonth; }
constexpr int first_week_of_month(int month) { return month * kWeeksPerMonth; }

} // namespace pmesii
