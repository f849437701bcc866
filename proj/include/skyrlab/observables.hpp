#pragma once

#include "skyrlab/core.hpp"
#include "skyrlab/lattice.hpp"
#include "skyrlab/operators.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

namespace skyrlab {

// Per-site <S^x>, <S^y>, <S^z>, each in [-1/2, 1/2].
struct SpinField {
    std::vector<Vec3> spins;

    std::size_t size() const { return spins.size(); }
    const Vec3& operator[](std::size_t i) const { return spins[i]; }

    double mean_sz() const {
        double s = 0.0;
        for (const auto& v : spins)
            s += v[2];
        return spins.empty() ? 0.0 : s / static_cast<double>(spins.size());
    }
};

struct PauliFactor {
    int site;
    Axis axis;
};

// <psi| sigma_{a1}^{s1} sigma_{a2}^{s2} ... |psi> for distinct sites.
inline cplx pauli_string_expectation(const StateVector& psi, const std::vector<PauliFactor>& factors) {
    std::size_t mask = 0;
    std::size_t signmask = 0;
    int n_y = 0;
    for (const auto& f : factors) {
        const std::size_t m = std::size_t{1} << f.site;
        if (f.axis != Axis::Z) mask |= m;
        if (f.axis != Axis::X) signmask |= m;
        if (f.axis == Axis::Y) ++n_y;
    }
    // sigma^y|b> = i (1-2b)|~b>, sigma^z|b> = (1-2b)|b>
    static const std::array<cplx, 4> ipow{cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}, cplx{0, -1}};
    const cplx phase = ipow[n_y % 4];
    cplx acc = 0.0;
    const auto dim = static_cast<std::size_t>(psi.size());
    for (std::size_t s = 0; s < dim; ++s) {
        const cplx term = std::conj(psi(s ^ mask)) * psi(s);
        acc += (__builtin_popcountll(s & signmask) & 1) ? -term : term;
    }
    return phase * acc;
}

inline SpinField onsite_spin_expectation(const StateVector& psi, const SpinLattice& lat) {
    require_normalized(psi, "onsite_spin_expectation");
    if (static_cast<std::size_t>(psi.size()) != hilbert_dim(lat.n_sites))
        throw ContractError("onsite_spin_expectation: state dimension does not match lattice");
    SpinField f;
    f.spins.resize(lat.n_sites);
    for (int i = 0; i < lat.n_sites; ++i)
        for (int a = 0; a < 3; ++a)
            f.spins[i][a] = 0.5 * pauli_string_expectation(psi, {{i, static_cast<Axis>(a)}}).real();
    return f;
}

// Mean over counterclockwise elementary triangles of <sigma_a . (sigma_b x sigma_c)>.
inline double scalar_chirality(const StateVector& psi, const SpinLattice& lat) {
    require_normalized(psi, "scalar_chirality");
    if (lat.triangles.empty()) throw ContractError("scalar_chirality: lattice has no triangles");
    static constexpr std::array<std::array<int, 3>, 3> kEven{{{0, 1, 2}, {1, 2, 0}, {2, 0, 1}}};
    double total = 0.0;
    for (const auto& t : lat.triangles) {
        double q = 0.0;
        for (const auto& p : kEven) {
            q += pauli_string_expectation(psi, {{t.a, Axis(p[0])}, {t.b, Axis(p[1])}, {t.c, Axis(p[2])}}).real();
            q -= pauli_string_expectation(psi, {{t.a, Axis(p[0])}, {t.b, Axis(p[2])}, {t.c, Axis(p[1])}}).real();
        }
        total += q;
    }
    return total / static_cast<double>(lat.triangles.size());
}

enum class ChargeMode { Path, Endpoints };

inline ChargeMode parse_charge_mode(const std::string& s) {
    if (s == "path") return ChargeMode::Path;
    if (s == "endpoints") return ChargeMode::Endpoints;
    throw ContractError("unknown topological charge mode '" + s + "'");
}

namespace detail {

inline double spin_angle(const Vec3& a, const Vec3& b, int ia, int ib) {
    const double na = norm(a), nb = norm(b);
    if (na < 1e-12 || nb < 1e-12)
        throw DegenerateInputError("topological_charge: zero-length spin on path at site " +
                                   std::to_string(na < 1e-12 ? ia : ib));
    return std::acos(std::clamp(dot(a, b) / (na * nb), -1.0, 1.0));
}

}  // namespace detail

// Accumulated rotation angle of the spin field along the path, over 2 pi.
// Endpoints mode uses only the first and last site: 2 arccos(...) / 2 pi.
inline double topological_charge(const SpinField& field, const std::vector<int>& path,
                                 ChargeMode mode = ChargeMode::Path) {
    if (path.size() < 2) throw ContractError("topological_charge: path needs at least 2 sites");
    for (int s : path)
        if (s < 0 || static_cast<std::size_t>(s) >= field.size())
            throw IndexError("topological_charge: path site " + std::to_string(s) + " out of range");
    if (mode == ChargeMode::Endpoints)
        return detail::spin_angle(field[path.front()], field[path.back()], path.front(), path.back()) / kPi;
    double angle = 0.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
        angle += detail::spin_angle(field[path[k]], field[path[k + 1]], path[k], path[k + 1]);
    return angle / (2.0 * kPi);
}

// Symmetrized equal-time correlations C[r][r'](a, b) = <{S_a^r, S_b^r'}>/2.
// These are real; the on-site block is delta_ab / 4.
struct SpinCorrelations {
    int n_sites = 0;
    std::vector<Eigen::Matrix3d> c;  // row-major over (r, r')

    const Eigen::Matrix3d& operator()(int r, int rp) const { return c[static_cast<std::size_t>(r) * n_sites + rp]; }
};

inline SpinCorrelations spin_correlations(const StateVector& psi, int n_sites) {
    SpinCorrelations out;
    out.n_sites = n_sites;
    out.c.assign(static_cast<std::size_t>(n_sites) * n_sites, Eigen::Matrix3d::Zero());
    for (int r = 0; r < n_sites; ++r) {
        out.c[static_cast<std::size_t>(r) * n_sites + r] = 0.25 * Eigen::Matrix3d::Identity();
        for (int rp = r + 1; rp < n_sites; ++rp) {
            Eigen::Matrix3d m;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    m(a, b) = 0.25 * pauli_string_expectation(psi, {{r, Axis(a)}, {rp, Axis(b)}}).real();
            out.c[static_cast<std::size_t>(r) * n_sites + rp] = m;
            out.c[static_cast<std::size_t>(rp) * n_sites + r] = m.transpose();
        }
    }
    return out;
}

struct StructureFactorGrid {
    int resolution = 0;
    std::vector<double> q_over_pi;               // axis values, shared by qx and qy
    std::vector<std::array<cplx, 9>> s;          // S_ab at (ix, iy), index iy * m + ix, ab = 3a + b
    std::vector<double> cross_section;           // filled by neutron_cross_section

    double qx(int ix) const { return q_over_pi[ix]; }
    double qy(int iy) const { return q_over_pi[iy]; }
    const std::array<cplx, 9>& at(int ix, int iy) const { return s[static_cast<std::size_t>(iy) * resolution + ix]; }
    int index_of(int ix, int iy) const { return iy * resolution + ix; }
};

inline std::vector<double> q_axis(int resolution) {
    std::vector<double> axis(resolution);
    for (int k = 0; k < resolution; ++k)
        axis[k] = -1.0 + 2.0 * k / (resolution - 1);
    return axis;
}

// S_ab(q) = sum_{r,r'} exp(i q.(r' - r)) C_ab(r, r') over q/pi in [-1, 1]^2.
inline StructureFactorGrid structure_factor(const StateVector& psi, const SpinLattice& lat, int resolution) {
    require_normalized(psi, "structure_factor");
    if (resolution < 8) throw ContractError("structure_factor: resolution must be >= 8");
    const SpinCorrelations corr = spin_correlations(psi, lat.n_sites);
    StructureFactorGrid g;
    g.resolution = resolution;
    g.q_over_pi = q_axis(resolution);
    g.s.assign(static_cast<std::size_t>(resolution) * resolution, {});
    const int n = lat.n_sites;
    for (int iy = 0; iy < resolution; ++iy)
        for (int ix = 0; ix < resolution; ++ix) {
            const double qx = kPi * g.q_over_pi[ix], qy = kPi * g.q_over_pi[iy];
            std::vector<cplx> phase(n);
            for (int r = 0; r < n; ++r)
                phase[r] = std::polar(1.0, qx * lat.positions[r][0] + qy * lat.positions[r][1]);
            std::array<cplx, 9> acc{};
            for (int r = 0; r < n; ++r)
                for (int rp = 0; rp < n; ++rp) {
                    const cplx e = std::conj(phase[r]) * phase[rp];
                    const Eigen::Matrix3d& c = corr(r, rp);
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b)
                            acc[3 * a + b] += e * c(a, b);
                }
            g.s[g.index_of(ix, iy)] = acc;
        }
    return g;
}

// Transverse projection sum_ab (delta_ab - qhat_a qhat_b) S_ab with q_z = 0 and
// the identity projector at q = 0; clamped non-negative and scaled to peak 1.
inline std::vector<double> neutron_cross_section(StructureFactorGrid& grid) {
    const int m = grid.resolution;
    std::vector<double> out(static_cast<std::size_t>(m) * m, 0.0);
    double peak = 0.0;
    for (int iy = 0; iy < m; ++iy)
        for (int ix = 0; ix < m; ++ix) {
            const double qx = grid.qx(ix), qy = grid.qy(iy);
            const double qn = std::hypot(qx, qy);
            std::array<double, 3> qh{0.0, 0.0, 0.0};
            if (qn > 1e-12) qh = {qx / qn, qy / qn, 0.0};
            const auto& s = grid.at(ix, iy);
            cplx acc = 0.0;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    acc += ((a == b ? 1.0 : 0.0) - qh[a] * qh[b]) * s[3 * a + b];
            const double v = std::max(acc.real(), 0.0);
            out[grid.index_of(ix, iy)] = v;
            peak = std::max(peak, v);
        }
    if (peak > 0.0)
        for (auto& v : out)
            v /= peak;
    grid.cross_section = out;
    return out;
}

namespace detail {

// Amplitudes arranged as M(a, b): a indexes the bits of `sites`, b the rest.
inline DenseMatrix bipartite_matrix(const StateVector& psi, const std::vector<int>& sites, int n_sites) {
    std::vector<int> rest;
    for (int s = 0; s < n_sites; ++s)
        if (std::find(sites.begin(), sites.end(), s) == sites.end()) rest.push_back(s);
    const auto da = static_cast<Eigen::Index>(std::size_t{1} << sites.size());
    const auto db = static_cast<Eigen::Index>(std::size_t{1} << rest.size());
    DenseMatrix m(da, db);
    const auto dim = static_cast<std::size_t>(psi.size());
    for (std::size_t s = 0; s < dim; ++s) {
        std::size_t a = 0, b = 0;
        for (std::size_t k = 0; k < sites.size(); ++k)
            a |= static_cast<std::size_t>(bit(s, sites[k])) << k;
        for (std::size_t k = 0; k < rest.size(); ++k)
            b |= static_cast<std::size_t>(bit(s, rest[k])) << k;
        m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = psi(s);
    }
    return m;
}

inline void check_subsystem(const std::vector<int>& sites, int n_sites) {
    if (sites.empty() || static_cast<int>(sites.size()) >= n_sites)
        throw ContractError("subsystem must be a nonempty proper subset of the sites");
    std::vector<int> sorted = sites;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ContractError("subsystem has repeated sites");
    if (sorted.front() < 0 || sorted.back() >= n_sites) throw IndexError("subsystem site out of range");
}

}  // namespace detail

// rho_A = Tr_{A^c} |psi><psi|, basis bit k of the result is sites[k].
inline DenseMatrix reduced_density_matrix(const StateVector& psi, const std::vector<int>& sites) {
    const int n = sites_from_dim(static_cast<std::size_t>(psi.size()));
    detail::check_subsystem(sites, n);
    const DenseMatrix m = detail::bipartite_matrix(psi, sites, n);
    return m * m.adjoint();
}

// Von Neumann entropy (natural log) of the reduced state of `sites`.
inline double entanglement_entropy(const StateVector& psi, const std::vector<int>& sites) {
    require_normalized(psi, "entanglement_entropy");
    const int n = sites_from_dim(static_cast<std::size_t>(psi.size()));
    detail::check_subsystem(sites, n);
    const DenseMatrix m = detail::bipartite_matrix(psi, sites, n);
    // the smaller Gram matrix carries the same nonzero spectrum
    const DenseMatrix rho = m.rows() <= m.cols() ? DenseMatrix(m * m.adjoint()) : DenseMatrix(m.adjoint() * m);
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(rho, Eigen::EigenvaluesOnly);
    double s = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double p = es.eigenvalues()(i);
        if (p > 1e-15) s -= p * std::log(p);
    }
    return s;
}

inline double entanglement_entropy_density(const StateVector& psi, const std::vector<int>& sites) {
    return entanglement_entropy(psi, sites) / static_cast<double>(sites.size());
}

// e_i = <Zeeman_i> + <anisotropy_i> + half of every bond touching i.
inline std::vector<double> onsite_energy_density(const StateVector& psi, const SpinLattice& lat,
                                                 const CouplingParams& p) {
    require_normalized(psi, "onsite_energy_density");
    const SpinField f = onsite_spin_expectation(psi, lat);
    std::vector<double> e(lat.n_sites, 0.0);
    for (int i = 0; i < lat.n_sites; ++i) {
        e[i] -= dot(p.B, f[i]);
        if (p.anisotropy == AnisotropyMode::Onsite) e[i] += 0.25 * p.K;
    }
    for (const auto& b : lat.bonds) {
        const Matrix3 m = bond_coupling_matrix(b, p);
        double eb = 0.0;
        for (int a = 0; a < 3; ++a)
            for (int c = 0; c < 3; ++c)
                if (m[a][c] != 0.0)
                    eb += m[a][c] * 0.25 * pauli_string_expectation(psi, {{b.i, Axis(a)}, {b.j, Axis(c)}}).real();
        e[b.i] += 0.5 * eb;
        e[b.j] += 0.5 * eb;
    }
    return e;
}

// Smallest radius where the angle-averaged <S_z>(r) crosses zero, by linear
// interpolation between radial shells. None when <S_z> never changes sign.
inline std::optional<double> skyrmion_radius(const SpinField& field, const SpinLattice& lat) {
    if (lat.boundary != Boundary::OBC) throw ContractError("skyrmion_radius: requires an OBC lattice");
    if (field.size() != static_cast<std::size_t>(lat.n_sites))
        throw ContractError("skyrmion_radius: field size does not match lattice");
    const Vec2 c = lat.positions[lat.center_index];
    std::map<long long, std::pair<double, int>> bins;  // keyed by radius in 1e-6 units
    std::map<long long, double> radius_of;
    for (int s = 0; s < lat.n_sites; ++s) {
        const double r = std::hypot(lat.positions[s][0] - c[0], lat.positions[s][1] - c[1]);
        const auto key = static_cast<long long>(std::llround(r * 1e6));
        auto& bin = bins[key];
        bin.first += field[s][2];
        bin.second += 1;
        radius_of[key] = r;
    }
    std::vector<std::pair<double, double>> profile;
    for (const auto& [key, bin] : bins)
        profile.emplace_back(radius_of[key], bin.first / bin.second);
    if (profile.front().second == 0.0) return profile.front().first;
    for (std::size_t k = 0; k + 1 < profile.size(); ++k) {
        const auto [r0, s0] = profile[k];
        const auto [r1, s1] = profile[k + 1];
        if (s1 == 0.0) return r1;
        if ((s0 < 0.0) != (s1 < 0.0)) return r0 + (0.0 - s0) * (r1 - r0) / (s1 - s0);
    }
    return std::nullopt;
}

inline void write_spin_field_csv(std::ostream& os, const SpinField& f, const SpinLattice& lat) {
    os << "site,x,y,Sx,Sy,Sz\n";
    os.precision(12);
    for (int s = 0; s < lat.n_sites; ++s)
        os << s << ',' << lat.positions[s][0] << ',' << lat.positions[s][1] << ',' << f[s][0] << ',' << f[s][1]
           << ',' << f[s][2] << '\n';
}

inline void write_structure_factor_csv(std::ostream& os, const StructureFactorGrid& g) {
    static const char* names[] = {"xx", "xy", "xz", "yx", "yy", "yz", "zx", "zy", "zz"};
    os << "qx_over_pi,qy_over_pi";
    for (const char* n : names)
        os << ",Re(S_" << n << ')';
    os << ",cross_section\n";
    os.precision(12);
    for (int iy = 0; iy < g.resolution; ++iy)
        for (int ix = 0; ix < g.resolution; ++ix) {
            os << g.qx(ix) << ',' << g.qy(iy);
            for (const auto& v : g.at(ix, iy))
                os << ',' << v.real();
            os << ',' << (g.cross_section.empty() ? 0.0 : g.cross_section[g.index_of(ix, iy)]) << '\n';
        }
}

}  // namespace skyrlab
