#pragma once

#include <Eigen/Core>

namespace mgs {

#ifdef MGS_REAL32
using real = float;
#else
using real = double;
#endif

using Vec2 = Eigen::Matrix<real, 2, 1>;
using Vec3 = Eigen::Matrix<real, 3, 1>;
using Mat2 = Eigen::Matrix<real, 2, 2>;
using Mat3 = Eigen::Matrix<real, 3, 3>;
using Mat23 = Eigen::Matrix<real, 2, 3>;
using VecX = Eigen::Matrix<real, Eigen::Dynamic, 1>;
using MatX = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr real kPi = real(3.14159265358979323846L);

inline real sigmoid(real x) { return real(1) / (real(1) + std::exp(-x)); }
inline real logit(real p) { return std::log(p / (real(1) - p)); }

}  // namespace mgs
