#ifndef HMX_GEOMETRY_HPP
#define HMX_GEOMETRY_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace hmx {

using Index = Eigen::Index;
using Point3 = Eigen::Vector3d;

inline constexpr int max_mesh_level = 9;
inline constexpr Index max_dense_size = 6144;

/// Axis-aligned square on one face of the cube [-1,1]^3, in face coordinates.
struct CubeQuad {
    int face = 0; // 0:+x 1:-x 2:+y 3:-y 4:+z 5:-z
    double u0 = -1.0;
    double v0 = -1.0;
    double width = 2.0;
};

/// Quasi-uniform panelization of the unit sphere: cube faces subdivided
/// uniformly and projected radially.
struct PanelSet {
    std::vector<Point3> centers;
    std::vector<double> areas;
    std::vector<CubeQuad> quads;
    int level = 0;

    Index size() const { return static_cast<Index>(centers.size()); }
};

enum class KernelKind { Exponential, ScaledExponential, SingleLayer };

inline std::string_view to_string(KernelKind kind)
{
    switch (kind) {
    case KernelKind::Exponential: return "exponential";
    case KernelKind::ScaledExponential: return "scaled-exponential";
    case KernelKind::SingleLayer: return "single-layer";
    }
    return "unknown";
}

namespace detail {

inline Point3 cube_point(int face, double u, double v)
{
    const int axis = face / 2;
    const double sign = (face % 2 == 0) ? 1.0 : -1.0;
    Point3 p;
    p[axis] = sign;
    p[(axis + 1) % 3] = u;
    p[(axis + 2) % 3] = v;
    return p;
}

inline Point3 sphere_point(int face, double u, double v)
{
    return cube_point(face, u, v).normalized();
}

// Van Oosterom-Strackee: tan(E/2) = |a.(b x c)| / (1 + a.b + b.c + c.a)
inline double spherical_triangle_area(const Point3& a, const Point3& b, const Point3& c)
{
    const double triple = a.dot(b.cross(c));
    const double denom = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    return std::abs(2.0 * std::atan2(triple, denom));
}

inline double spherical_quad_area(const CubeQuad& q)
{
    const double u1 = q.u0 + q.width;
    const double v1 = q.v0 + q.width;
    const Point3 p00 = sphere_point(q.face, q.u0, q.v0);
    const Point3 p10 = sphere_point(q.face, u1, q.v0);
    const Point3 p11 = sphere_point(q.face, u1, v1);
    const Point3 p01 = sphere_point(q.face, q.u0, v1);
    return spherical_triangle_area(p00, p10, p11) + spherical_triangle_area(p00, p11, p01);
}

inline Point3 quad_center(const CubeQuad& q)
{
    return sphere_point(q.face, q.u0 + 0.5 * q.width, q.v0 + 0.5 * q.width);
}

inline std::vector<CubeQuad> subdivide(const CubeQuad& q, int depth)
{
    const int per_side = 1 << depth;
    const double h = q.width / per_side;
    std::vector<CubeQuad> out;
    out.reserve(static_cast<std::size_t>(per_side) * per_side);
    for (int r = 0; r < per_side; ++r)
        for (int c = 0; c < per_side; ++c)
            out.push_back({q.face, q.u0 + c * h, q.v0 + r * h, h});
    return out;
}

inline double kernel_value(KernelKind kind, const Point3& x, const Point3& y)
{
    const double r = (x - y).norm();
    switch (kind) {
    case KernelKind::Exponential: return std::exp(-r);
    case KernelKind::ScaledExponential: return x[0] * std::exp(-r);
    case KernelKind::SingleLayer: return 1.0 / r;
    }
    return 0.0;
}

// Self-interaction of the 1/r kernel: depth-3 subdivision with midpoint rule,
// coincident sub-panel pairs dropped.
inline double single_layer_self_term(const CubeQuad& q)
{
    constexpr int depth = 3;
    const auto parts = subdivide(q, depth);
    std::vector<Point3> c(parts.size());
    std::vector<double> a(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        c[i] = quad_center(parts[i]);
        a[i] = spherical_quad_area(parts[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i)
        for (std::size_t j = 0; j < parts.size(); ++j)
            if (i != j)
                sum += a[i] * a[j] / (c[i] - c[j]).norm();
    return sum;
}

} // namespace detail

/// Panels of the unit sphere at the given refinement level: 6 * 4^level
/// panels, ordered face-major then row-major within a face.
inline PanelSet build_sphere_mesh(int level)
{
    if (level < 0)
        throw precondition_error("build_sphere_mesh: negative level");
    if (level > max_mesh_level)
        throw capacity_error("build_sphere_mesh: level " + std::to_string(level) +
                             " exceeds maximum " + std::to_string(max_mesh_level));
    const int per_side = 1 << level;
    const double h = 2.0 / per_side;
    PanelSet set;
    set.level = level;
    const std::size_t count = 6u * static_cast<std::size_t>(per_side) * per_side;
    set.centers.reserve(count);
    set.areas.reserve(count);
    set.quads.reserve(count);
    for (int face = 0; face < 6; ++face) {
        for (int r = 0; r < per_side; ++r) {
            for (int c = 0; c < per_side; ++c) {
                const CubeQuad q{face, -1.0 + c * h, -1.0 + r * h, h};
                set.quads.push_back(q);
                set.centers.push_back(detail::quad_center(q));
                set.areas.push_back(detail::spherical_quad_area(q));
            }
        }
    }
    return set;
}

/// One-point Galerkin entry area_i * area_j * k(x_i, x_j), indices in mesh order.
/// For ScaledExponential the factor x_1 is taken from the row panel.
inline double kernel_entry(KernelKind kind, Index i, Index j, const PanelSet& panels)
{
    if (kind == KernelKind::SingleLayer && i == j)
        return detail::single_layer_self_term(panels.quads[static_cast<std::size_t>(i)]);
    const auto si = static_cast<std::size_t>(i);
    const auto sj = static_cast<std::size_t>(j);
    return panels.areas[si] * panels.areas[sj] *
           detail::kernel_value(kind, panels.centers[si], panels.centers[sj]);
}

/// Full kernel matrix in mesh order.
inline Eigen::MatrixXd assemble_dense(KernelKind kind, const PanelSet& panels)
{
    const Index n = panels.size();
    if (n > max_dense_size)
        throw capacity_error("assemble_dense: " + std::to_string(n) + " panels exceed guard " +
                             std::to_string(max_dense_size));
    Eigen::MatrixXd m(n, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
            m(i, j) = kernel_entry(kind, i, j, panels);
    return m;
}

} // namespace hmx

#endif // HMX_GEOMETRY_HPP
