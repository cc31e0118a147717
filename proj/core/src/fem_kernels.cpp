#include "hdsa/fem_kernels.hpp"

namespace hdsa::fem {

namespace {
constexpr int kQ = QuadratureTable::kPoints;

inline std::size_t slot(int e, int q) { return static_cast<std::size_t>(e) * kQ + q; }

std::size_t field_size(const StructuredMesh& mesh) {
  return static_cast<std::size_t>(mesh.num_elements()) * kQ;
}
}  // namespace

QuadField values_at_quadrature(const StructuredMesh& mesh, const QuadratureTable& quad,
                               const Vector& u) {
  QuadField out(field_size(mesh), 0.0);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    const double u0 = u[nodes[0]], u1 = u[nodes[1]], u2 = u[nodes[2]], u3 = u[nodes[3]];
    for (int q = 0; q < kQ; ++q) {
      const auto& n = quad.shape[q];
      out[slot(e, q)] = n[0] * u0 + n[1] * u1 + n[2] * u2 + n[3] * u3;
    }
  }
  return out;
}

void gradient_at_quadrature(const StructuredMesh& mesh, const QuadratureTable& quad,
                            const Vector& u, QuadField& gx, QuadField& gy) {
  gx.assign(field_size(mesh), 0.0);
  gy.assign(field_size(mesh), 0.0);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    const double u0 = u[nodes[0]], u1 = u[nodes[1]], u2 = u[nodes[2]], u3 = u[nodes[3]];
    for (int q = 0; q < kQ; ++q) {
      const auto& dx = quad.dshape_dx[q];
      const auto& dy = quad.dshape_dy[q];
      gx[slot(e, q)] = dx[0] * u0 + dx[1] * u1 + dx[2] * u2 + dx[3] * u3;
      gy[slot(e, q)] = dy[0] * u0 + dy[1] * u1 + dy[2] * u2 + dy[3] * u3;
    }
  }
}

void scatter_shape(const StructuredMesh& mesh, const QuadratureTable& quad, const QuadField& s,
                   Vector& out) {
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < kQ; ++q) {
      const double v = s[slot(e, q)];
      for (int a = 0; a < 4; ++a) out[nodes[a]] += quad.shape[q][a] * v;
    }
  }
}

void scatter_gradient(const StructuredMesh& mesh, const QuadratureTable& quad,
                      const QuadField& fx, const QuadField& fy, Vector& out) {
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < kQ; ++q) {
      const double ax = fx[slot(e, q)];
      const double ay = fy[slot(e, q)];
      for (int a = 0; a < 4; ++a) {
        out[nodes[a]] += ax * quad.dshape_dx[q][a] + ay * quad.dshape_dy[q][a];
      }
    }
  }
}

Vector apply_diffusion(const StructuredMesh& mesh, const QuadratureTable& quad,
                       const Vector& coeff, const Vector& u) {
  Vector out = Vector::Zero(mesh.num_nodes());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < kQ; ++q) {
      double k = 0.0, gx = 0.0, gy = 0.0;
      for (int a = 0; a < 4; ++a) {
        k += quad.shape[q][a] * coeff[nodes[a]];
        gx += quad.dshape_dx[q][a] * u[nodes[a]];
        gy += quad.dshape_dy[q][a] * u[nodes[a]];
      }
      const double w = quad.weight * k;
      for (int a = 0; a < 4; ++a) {
        out[nodes[a]] += w * (quad.dshape_dx[q][a] * gx + quad.dshape_dy[q][a] * gy);
      }
    }
  }
  return out;
}

Vector apply_advection(const StructuredMesh& mesh, const QuadratureTable& quad,
                       const QuadVelocity& v, const Vector& c) {
  Vector out = Vector::Zero(mesh.num_nodes());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < kQ; ++q) {
      double gx = 0.0, gy = 0.0;
      for (int a = 0; a < 4; ++a) {
        gx += quad.dshape_dx[q][a] * c[nodes[a]];
        gy += quad.dshape_dy[q][a] * c[nodes[a]];
      }
      const double flux = quad.weight * (v.vx[slot(e, q)] * gx + v.vy[slot(e, q)] * gy);
      for (int a = 0; a < 4; ++a) out[nodes[a]] += quad.shape[q][a] * flux;
    }
  }
  return out;
}

Vector apply_advection_transpose(const StructuredMesh& mesh, const QuadratureTable& quad,
                                 const QuadVelocity& v, const Vector& w) {
  Vector out = Vector::Zero(mesh.num_nodes());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < kQ; ++q) {
      double wq = 0.0;
      for (int a = 0; a < 4; ++a) wq += quad.shape[q][a] * w[nodes[a]];
      const double sx = quad.weight * wq * v.vx[slot(e, q)];
      const double sy = quad.weight * wq * v.vy[slot(e, q)];
      for (int a = 0; a < 4; ++a) {
        out[nodes[a]] += sx * quad.dshape_dx[q][a] + sy * quad.dshape_dy[q][a];
      }
    }
  }
  return out;
}

}  // namespace hdsa::fem
