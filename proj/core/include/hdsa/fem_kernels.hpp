#pragma once

// Matrix-free element loops over quadrature-point fields. A quadrature
// field stores one value per (element, point), element-major, matching the
// layout of QuadVelocity.

#include <vector>

#include "hdsa/grid_fem.hpp"

namespace hdsa::fem {

using QuadField = std::vector<double>;

QuadField values_at_quadrature(const StructuredMesh& mesh, const QuadratureTable& quad,
                               const Vector& u);

void gradient_at_quadrature(const StructuredMesh& mesh, const QuadratureTable& quad,
                            const Vector& u, QuadField& gx, QuadField& gy);

/// out[a] += sum_q N_a(q) * s_q over every element (no quadrature weight).
void scatter_shape(const StructuredMesh& mesh, const QuadratureTable& quad, const QuadField& s,
                   Vector& out);

/// out[a] += sum_q (fx_q dN_a/dx + fy_q dN_a/dy) (no quadrature weight).
void scatter_gradient(const StructuredMesh& mesh, const QuadratureTable& quad,
                      const QuadField& fx, const QuadField& fy, Vector& out);

/// K(coeff) u for a nodal coefficient of any sign.
Vector apply_diffusion(const StructuredMesh& mesh, const QuadratureTable& quad,
                       const Vector& coeff, const Vector& u);

/// A(v) c, where A(v)_ij = (N_i, v . grad N_j).
Vector apply_advection(const StructuredMesh& mesh, const QuadratureTable& quad,
                       const QuadVelocity& v, const Vector& c);

/// A(v)^T w.
Vector apply_advection_transpose(const StructuredMesh& mesh, const QuadratureTable& quad,
                                 const QuadVelocity& v, const Vector& w);

}  // namespace hdsa::fem
