#pragma once

#include "cityprior/geometry.hpp"

namespace cityprior {

// Real spherical harmonics of a unit direction, all bands l < degree,
// standard orthonormal normalization; degree in [1, 4], output size degree^2.
void sh_encode(const Vec3& d, int degree, double* out);

inline int sh_dim(int degree) { return degree * degree; }

}  // namespace cityprior
