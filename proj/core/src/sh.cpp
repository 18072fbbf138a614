#include "cityprior/sh.hpp"

#include "cityprior/errors.hpp"

namespace cityprior {

void sh_encode(const Vec3& d, int degree, double* out) {
  if (degree < 1 || degree > 4) throw DataError("sh_encode: degree must be in [1, 4]");
  const double x = d[0], y = d[1], z = d[2];
  const double xx = x * x, yy = y * y, zz = z * z;

  out[0] = 0.28209479177387814;  // 1/(2 sqrt(pi))
  if (degree < 2) return;

  out[1] = -0.48860251190291987 * y;
  out[2] = 0.48860251190291987 * z;
  out[3] = -0.48860251190291987 * x;
  if (degree < 3) return;

  out[4] = 1.0925484305920792 * x * y;
  out[5] = -1.0925484305920792 * y * z;
  out[6] = 0.31539156525252005 * (2.0 * zz - xx - yy);
  out[7] = -1.0925484305920792 * x * z;
  out[8] = 0.5462742152960396 * (xx - yy);
  if (degree < 4) return;

  out[9] = -0.5900435899266435 * y * (3.0 * xx - yy);
  out[10] = 2.890611442640554 * x * y * z;
  out[11] = -0.4570457994644658 * y * (4.0 * zz - xx - yy);
  out[12] = 0.3731763325901154 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  out[13] = -0.4570457994644658 * x * (4.0 * zz - xx - yy);
  out[14] = 1.445305721320277 * z * (xx - yy);
  out[15] = -0.5900435899266435 * x * (xx - 3.0 * yy);
}

}  // namespace cityprior
