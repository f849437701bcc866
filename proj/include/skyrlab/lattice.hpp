#pragma once

#include "skyrlab/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace skyrlab {

enum class Boundary { PBC, OBC };

inline std::string to_string(Boundary b) { return b == Boundary::PBC ? "PBC" : "OBC"; }

inline Boundary parse_boundary(const std::string& s) {
    if (s == "PBC" || s == "pbc") return Boundary::PBC;
    if (s == "OBC" || s == "obc") return Boundary::OBC;
    throw ContractError("unknown boundary condition '" + s + "'");
}

struct Bond {
    int i = 0;
    int j = 0;
    Vec2 direction{};  // unit vector from i to j
    Vec3 dmi{};        // unit DMI axis, z x direction
};

// Counterclockwise elementary triangle.
struct Triangle {
    int a = 0;
    int b = 0;
    int c = 0;
};

// Neel-type DMI axis for a bond: d = z x r.
inline Vec3 dmi_vector(const Vec2& bond_direction) {
    return {-bond_direction[1], bond_direction[0], 0.0};
}

struct SpinLattice {
    int n_sites = 0;
    int n_shells = 0;
    std::vector<Vec2> positions;
    std::vector<Bond> bonds;
    std::vector<Triangle> triangles;
    Boundary boundary = Boundary::OBC;
    int center_index = 0;

    int coordination(int site) const {
        return static_cast<int>(std::count_if(bonds.begin(), bonds.end(), [site](const Bond& b) {
            return b.i == site || b.j == site;
        }));
    }
};

namespace detail {

// Axial coordinates (q, r): cartesian x = q + r/2, y = r*sqrt(3)/2.
struct Axial {
    int q = 0;
    int r = 0;
    friend bool operator<(const Axial& a, const Axial& b) {
        return std::pair(a.r, a.q) < std::pair(b.r, b.q);
    }
    friend bool operator==(const Axial& a, const Axial& b) { return a.q == b.q && a.r == b.r; }
};

inline int hex_radius(const Axial& a) {
    return (std::abs(a.q) + std::abs(a.r) + std::abs(a.q + a.r)) / 2;
}

inline Vec2 to_cartesian(const Axial& a) {
    return {a.q + 0.5 * a.r, a.r * std::sqrt(3.0) / 2.0};
}

// Bond orientation convention: +x, +60deg, +120deg.
inline constexpr std::array<Axial, 3> kForward{{{1, 0}, {0, 1}, {-1, 1}}};

// Maps an axial point back into the radius-n patch using the torus
// translations (n+1, n) and (-n, 2n+1). The hexagon tiles the plane under
// these, so the image is unique.
inline std::optional<Axial> wrap_into_patch(Axial p, int n) {
    const Axial w1{n + 1, n};
    const Axial w2{-n, 2 * n + 1};
    for (int a = -2; a <= 2; ++a)
        for (int b = -2; b <= 2; ++b) {
            Axial t{p.q + a * w1.q + b * w2.q, p.r + a * w1.r + b * w2.r};
            if (hex_radius(t) <= n) return t;
        }
    return std::nullopt;
}

}  // namespace detail

// Hexagon-shaped triangular patch with 1 + 3 n (n + 1) sites, indexed row by
// row (bottom row first, left to right). For n_shells = 2 the center is
// site 9. Under PBC the patch is identified with the matching triangular torus
// so every site has six neighbours.
inline SpinLattice build_triangular(int n_shells, Boundary boundary) {
    if (n_shells < 0) throw ContractError("build_triangular: n_shells must be >= 0");
    using detail::Axial;

    SpinLattice lat;
    lat.n_shells = n_shells;
    lat.boundary = boundary;

    std::map<Axial, int> index_of;
    std::vector<Axial> coords;
    for (int r = -n_shells; r <= n_shells; ++r) {
        const int q_lo = std::max(-n_shells, -n_shells - r);
        const int q_hi = std::min(n_shells, n_shells - r);
        for (int q = q_lo; q <= q_hi; ++q) {
            index_of[{q, r}] = static_cast<int>(coords.size());
            coords.push_back({q, r});
        }
    }
    lat.n_sites = static_cast<int>(coords.size());
    lat.center_index = index_of.at({0, 0});
    for (const auto& c : coords)
        lat.positions.push_back(detail::to_cartesian(c));

    auto neighbour = [&](const Axial& a, const Axial& step) -> std::optional<int> {
        Axial t{a.q + step.q, a.r + step.r};
        if (detail::hex_radius(t) <= n_shells) return index_of.at(t);
        if (boundary == Boundary::OBC) return std::nullopt;
        auto w = detail::wrap_into_patch(t, n_shells);
        if (!w) return std::nullopt;
        return index_of.at(*w);
    };

    for (int s = 0; s < lat.n_sites; ++s) {
        for (const auto& step : detail::kForward) {
            auto j = neighbour(coords[s], step);
            if (!j || *j == s) continue;
            Bond b;
            b.i = s;
            b.j = *j;
            const Vec2 d = detail::to_cartesian(step);
            const double len = std::hypot(d[0], d[1]);
            b.direction = {d[0] / len, d[1] / len};
            b.dmi = dmi_vector(b.direction);
            lat.bonds.push_back(b);
        }
        // up triangle (0,0),(1,0),(0,1); down triangle (0,0),(1,-1),(1,0)
        auto up1 = neighbour(coords[s], {1, 0});
        auto up2 = neighbour(coords[s], {0, 1});
        if (up1 && up2 && *up1 != s && *up2 != s && *up1 != *up2)
            lat.triangles.push_back({s, *up1, *up2});
        auto dn1 = neighbour(coords[s], {1, -1});
        auto dn2 = neighbour(coords[s], {1, 0});
        if (dn1 && dn2 && *dn1 != s && *dn2 != s && *dn1 != *dn2)
            lat.triangles.push_back({s, *dn1, *dn2});
    }
    return lat;
}

// Open parallelogram of lx * ly sites spanned by the +x and +60deg lattice
// vectors. Used for cluster sizes the hexagon family does not reach.
inline SpinLattice build_parallelogram(int lx, int ly) {
    if (lx < 1 || ly < 1) throw ContractError("build_parallelogram: extents must be positive");
    using detail::Axial;
    SpinLattice lat;
    lat.boundary = Boundary::OBC;
    lat.n_sites = lx * ly;
    auto index = [lx](int q, int r) { return r * lx + q; };
    for (int r = 0; r < ly; ++r)
        for (int q = 0; q < lx; ++q)
            lat.positions.push_back(detail::to_cartesian({q, r}));
    auto inside = [&](int q, int r) { return q >= 0 && q < lx && r >= 0 && r < ly; };
    for (int r = 0; r < ly; ++r)
        for (int q = 0; q < lx; ++q) {
            for (const auto& step : detail::kForward) {
                if (!inside(q + step.q, r + step.r)) continue;
                const Vec2 d = detail::to_cartesian(step);
                const double len = std::hypot(d[0], d[1]);
                Bond b{index(q, r), index(q + step.q, r + step.r), {d[0] / len, d[1] / len}, {}};
                b.dmi = dmi_vector(b.direction);
                lat.bonds.push_back(b);
            }
            if (inside(q + 1, r) && inside(q, r + 1))
                lat.triangles.push_back({index(q, r), index(q + 1, r), index(q, r + 1)});
            if (inside(q + 1, r - 1) && inside(q + 1, r))
                lat.triangles.push_back({index(q, r), index(q + 1, r - 1), index(q + 1, r)});
        }
    Vec2 mean{0.0, 0.0};
    for (const auto& p : lat.positions) {
        mean[0] += p[0] / lat.n_sites;
        mean[1] += p[1] / lat.n_sites;
    }
    double best = 1e300;
    for (int s = 0; s < lat.n_sites; ++s) {
        const double d = std::hypot(lat.positions[s][0] - mean[0], lat.positions[s][1] - mean[1]);
        if (d < best - 1e-12) {
            best = d;
            lat.center_index = s;
        }
    }
    return lat;
}

// Diagonal path through the center used for the topological charge. For the
// 19-site patch this is 1-4-9-14-18; otherwise the straight +60deg line.
inline std::vector<int> default_charge_path(const SpinLattice& lat) {
    if (lat.n_shells == 2) return {1, 4, 9, 14, 18};
    std::vector<int> path;
    if (lat.n_shells == 0) return {lat.center_index};
    const int n = lat.n_shells;
    // site (0, r) sits in row r at offset q - q_lo = -max(-n, -n - r)
    int row_start = 0;
    for (int r = -n; r <= n; ++r) {
        const int q_lo = std::max(-n, -n - r);
        const int q_hi = std::min(n, n - r);
        path.push_back(row_start - q_lo);
        row_start += q_hi - q_lo + 1;
    }
    return path;
}

// Named subsystem presets for entanglement entropy.
enum class PartitionPreset { Half, Central };

inline std::vector<int> partition_sites(const SpinLattice& lat, PartitionPreset preset) {
    std::vector<int> a;
    if (preset == PartitionPreset::Central) {
        a.push_back(lat.center_index);
    } else {
        for (int s = 0; s <= lat.center_index; ++s)
            a.push_back(s);
    }
    return a;
}

inline PartitionPreset parse_partition(const std::string& s) {
    if (s == "half") return PartitionPreset::Half;
    if (s == "central") return PartitionPreset::Central;
    throw ContractError("unknown partition preset '" + s + "'");
}

inline nlohmann::json lattice_to_json(const SpinLattice& lat) {
    nlohmann::json j;
    j["boundary"] = to_string(lat.boundary);
    j["center_index"] = lat.center_index;
    auto& sites = j["sites"] = nlohmann::json::array();
    for (const auto& p : lat.positions)
        sites.push_back({p[0], p[1]});
    auto& bonds = j["bonds"] = nlohmann::json::array();
    for (const auto& b : lat.bonds)
        bonds.push_back({{"i", b.i},
                         {"j", b.j},
                         {"dir", {b.direction[0], b.direction[1]}},
                         {"dmi", {b.dmi[0], b.dmi[1], b.dmi[2]}}});
    return j;
}

}  // namespace skyrlab
