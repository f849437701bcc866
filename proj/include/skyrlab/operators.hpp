#pragma once

#include "skyrlab/core.hpp"
#include "skyrlab/lattice.hpp"

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

namespace skyrlab {

enum class AnisotropyMode {
    Onsite,  // K sum_i (S_i^z)^2, a constant shift for spin-1/2
    Bond,    // K sum_<ij> S_i^z S_j^z
};

inline AnisotropyMode parse_anisotropy_mode(const std::string& s) {
    if (s == "onsite") return AnisotropyMode::Onsite;
    if (s == "bond") return AnisotropyMode::Bond;
    throw ContractError("unknown anisotropy_mode '" + s + "'");
}

inline std::string to_string(AnisotropyMode m) { return m == AnisotropyMode::Onsite ? "onsite" : "bond"; }

// Couplings in units of the DMI strength.
struct CouplingParams {
    double J = 0.0;
    double D = 1.0;
    Vec3 B{0.0, 0.0, 0.0};
    double K = 0.0;
    AnisotropyMode anisotropy = AnisotropyMode::Onsite;
};

using Matrix3 = std::array<std::array<double, 3>, 3>;

// M_ab such that the bond Hamiltonian is sum_ab M_ab S_i^a S_j^b.
inline Matrix3 bond_coupling_matrix(const Bond& bond, const CouplingParams& p) {
    Matrix3 m{};
    for (int a = 0; a < 3; ++a)
        m[a][a] = p.J;
    // d . (S_i x S_j) = sum_abc eps_abc d_c S_i^a S_j^b
    const Vec3& d = bond.dmi;
    m[0][1] += p.D * d[2];
    m[1][0] -= p.D * d[2];
    m[1][2] += p.D * d[0];
    m[2][1] -= p.D * d[0];
    m[2][0] += p.D * d[1];
    m[0][2] -= p.D * d[1];
    if (p.anisotropy == AnisotropyMode::Bond) m[2][2] += p.K;
    return m;
}

namespace detail {

// S^a |b> = spin_factor(a, b) |b xor flips(a)>
inline cplx spin_factor(int axis, int b) {
    const double sign = b ? -1.0 : 1.0;
    switch (axis) {
        case 0: return {0.5, 0.0};
        case 1: return {0.0, 0.5 * sign};
        default: return {0.5 * sign, 0.0};
    }
}

inline bool spin_flips(int axis) { return axis != 2; }

// a * b without the IEEE inf/nan recovery path of std::complex multiplication.
inline cplx mul(const cplx& a, const cplx& b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

// Spreads k so that bit position `pos` is a zero.
inline std::size_t insert_zero_bit(std::size_t k, int pos) {
    const std::size_t low = k & ((std::size_t{1} << pos) - 1);
    return ((k >> pos) << (pos + 1)) | low;
}

}  // namespace detail

// Operator on the 2^n space applied without materializing a matrix. It is a
// sum of
//   - a diagonal in the computational basis,
//   - off-diagonal one-site (2x2) and two-site (4x4) blocks,
//   - rank-one pieces c |ket><bra|,
//   - a multiple of the identity.
// Local block indices are b_lo + 2 b_hi for a pair with sites lo < hi.
class SparseOperator {
public:
    struct PairTerm {
        int lo = 0;
        int hi = 0;
        std::array<cplx, 16> local{};  // local[out * 4 + in], zero diagonal
    };

    struct SiteTerm {
        int site = 0;
        std::array<cplx, 4> local{};  // local[out * 2 + in], zero diagonal
    };

    struct RankOne {
        StateVector ket;
        StateVector bra;
        cplx coef;
    };

    SparseOperator() = default;
    explicit SparseOperator(int n_sites, bool hermitian = true)
        : n_sites_(n_sites), dim_(hilbert_dim(n_sites)), hermitian_(hermitian) {}

    static SparseOperator identity(int n_sites) {
        SparseOperator op(n_sites);
        op.shift_ = 1.0;
        return op;
    }

    std::size_t dim() const { return dim_; }
    int n_sites() const { return n_sites_; }
    bool hermitian() const { return hermitian_; }
    void set_hermitian(bool h) { hermitian_ = h; }

    void add_identity(cplx c) { shift_ += c; }

    // sum_ab m_ab S_i^a S_j^b
    void add_two_site(int i, int j, const Matrix3& m) {
        check_site(i);
        check_site(j);
        if (i == j) throw ContractError("add_two_site: sites must differ");
        std::array<cplx, 16> local{};  // indexed with b_i + 2 b_j
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                if (m[a][b] == 0.0) continue;
                const int flip = (detail::spin_flips(a) ? 1 : 0) | (detail::spin_flips(b) ? 2 : 0);
                for (int in = 0; in < 4; ++in) {
                    const int out = in ^ flip;
                    local[out * 4 + in] +=
                        m[a][b] * detail::spin_factor(a, in & 1) * detail::spin_factor(b, (in >> 1) & 1);
                }
            }
        if (i > j) {
            // relabel so bit 0 of the local index belongs to the lower site
            auto swap_bits = [](int x) { return ((x & 1) << 1) | ((x >> 1) & 1); };
            std::array<cplx, 16> swapped{};
            for (int out = 0; out < 4; ++out)
                for (int in = 0; in < 4; ++in)
                    swapped[swap_bits(out) * 4 + swap_bits(in)] = local[out * 4 + in];
            local = swapped;
            std::swap(i, j);
        }
        add_pair_block(i, j, local);
    }

    // h . S_i
    void add_site(int i, const Vec3& h) {
        check_site(i);
        std::array<cplx, 4> local{};
        for (int a = 0; a < 3; ++a) {
            if (h[a] == 0.0) continue;
            for (int in = 0; in < 2; ++in) {
                const int out = detail::spin_flips(a) ? in ^ 1 : in;
                local[out * 2 + in] += h[a] * detail::spin_factor(a, in);
            }
        }
        add_site_block(i, local);
    }

    // c |ket><bra|
    void add_rank_one(const StateVector& ket, const StateVector& bra, cplx c) {
        if (static_cast<std::size_t>(ket.size()) != dim_ || static_cast<std::size_t>(bra.size()) != dim_)
            throw ContractError("add_rank_one: vector dimension mismatch");
        rank_one_.push_back({ket, bra, c});
    }

    // out += alpha * A in
    void apply_add(const StateVector& in, StateVector& out, cplx alpha = 1.0) const {
        if (static_cast<std::size_t>(in.size()) != dim_ || static_cast<std::size_t>(out.size()) != dim_)
            throw ContractError("SparseOperator::apply: dimension mismatch (operator " +
                                std::to_string(dim_) + ", state " + std::to_string(in.size()) + ")");
        const cplx* x = in.data();
        cplx* y = out.data();
        if (!diag_.empty() || shift_ != 0.0) {
            const cplx c = alpha * shift_;
            if (diag_.empty()) {
                for (std::size_t s = 0; s < dim_; ++s)
                    y[s] += detail::mul(c, x[s]);
            } else {
                for (std::size_t s = 0; s < dim_; ++s)
                    y[s] += detail::mul(detail::mul(alpha, diag_[s]) + c, x[s]);
            }
        }
        for (const auto& t : sites_) {
            const std::size_t m = std::size_t{1} << t.site;
            const cplx c01 = alpha * t.local[1], c10 = alpha * t.local[2];
            for (std::size_t k = 0; k < dim_ / 2; ++k) {
                const std::size_t s0 = detail::insert_zero_bit(k, t.site);
                const std::size_t s1 = s0 | m;
                y[s0] += detail::mul(c01, x[s1]);
                y[s1] += detail::mul(c10, x[s0]);
            }
        }
        for (const auto& t : pairs_) {
            std::array<cplx, 16> c;
            for (int e = 0; e < 16; ++e)
                c[e] = alpha * t.local[e];
            const std::size_t mlo = std::size_t{1} << t.lo, mhi = std::size_t{1} << t.hi;
            for (std::size_t k = 0; k < dim_ / 4; ++k) {
                const std::size_t s0 = detail::insert_zero_bit(detail::insert_zero_bit(k, t.lo), t.hi);
                const std::size_t s1 = s0 | mlo, s2 = s0 | mhi, s3 = s0 | mlo | mhi;
                const cplx x0 = x[s0], x1 = x[s1], x2 = x[s2], x3 = x[s3];
                using detail::mul;
                y[s0] += mul(c[1], x1) + mul(c[2], x2) + mul(c[3], x3);
                y[s1] += mul(c[4], x0) + mul(c[6], x2) + mul(c[7], x3);
                y[s2] += mul(c[8], x0) + mul(c[9], x1) + mul(c[11], x3);
                y[s3] += mul(c[12], x0) + mul(c[13], x1) + mul(c[14], x2);
            }
        }
        for (const auto& r : rank_one_) {
            const cplx overlap = r.bra.dot(in);  // <bra|in>
            out += (alpha * r.coef * overlap) * r.ket;
        }
    }

    StateVector apply(const StateVector& in) const {
        StateVector out = StateVector::Zero(in.size());
        apply_add(in, out);
        return out;
    }

    // Upper bound on the spectral norm: sum of per-term row-sum norms.
    double norm_bound() const {
        double bound = 0.0;
        {
            double m = diag_.empty() ? std::abs(shift_) : 0.0;
            for (const auto& d : diag_)
                m = std::max(m, std::abs(d + shift_));
            bound += m;
        }
        for (const auto& t : sites_)
            bound += std::max(std::abs(t.local[1]), std::abs(t.local[2]));
        for (const auto& t : pairs_) {
            double m = 0.0;
            for (int out = 0; out < 4; ++out) {
                double row = 0.0;
                for (int in = 0; in < 4; ++in)
                    row += std::abs(t.local[out * 4 + in]);
                m = std::max(m, row);
            }
            bound += m;
        }
        for (const auto& r : rank_one_)
            bound += std::abs(r.coef) * r.ket.norm() * r.bra.norm();
        return bound;
    }

    // Explicit matrix, assembled term by term.
    DenseMatrix to_dense() const {
        const auto n = static_cast<Eigen::Index>(dim_);
        DenseMatrix m = DenseMatrix::Zero(n, n);
        for (std::size_t s = 0; s < dim_; ++s) {
            m(s, s) += shift_;
            if (!diag_.empty()) m(s, s) += diag_[s];
        }
        for (const auto& t : sites_)
            for (std::size_t s = 0; s < dim_; ++s) {
                const int in = bit(s, t.site);
                m(s ^ (std::size_t{1} << t.site), s) += t.local[(in ^ 1) * 2 + in];
            }
        for (const auto& t : pairs_)
            for (std::size_t s = 0; s < dim_; ++s) {
                const int in = static_cast<int>(bit(s, t.lo)) | (static_cast<int>(bit(s, t.hi)) << 1);
                const std::size_t base = s & ~((std::size_t{1} << t.lo) | (std::size_t{1} << t.hi));
                for (int out = 0; out < 4; ++out) {
                    if (out == in) continue;
                    const std::size_t so =
                        base | (static_cast<std::size_t>(out & 1) << t.lo) | (static_cast<std::size_t>(out >> 1) << t.hi);
                    m(so, s) += t.local[out * 4 + in];
                }
            }
        for (const auto& r : rank_one_)
            m += r.coef * r.ket * r.bra.adjoint();
        return m;
    }

    SparseOperator& operator+=(const SparseOperator& other) {
        if (other.dim_ != dim_) throw ContractError("SparseOperator +=: dimension mismatch");
        shift_ += other.shift_;
        if (!other.diag_.empty()) {
            if (diag_.empty()) diag_.assign(dim_, 0.0);
            for (std::size_t s = 0; s < dim_; ++s)
                diag_[s] += other.diag_[s];
        }
        for (const auto& t : other.sites_)
            add_site_block(t.site, t.local);
        for (const auto& t : other.pairs_)
            add_pair_block(t.lo, t.hi, t.local);
        rank_one_.insert(rank_one_.end(), other.rank_one_.begin(), other.rank_one_.end());
        hermitian_ = hermitian_ && other.hermitian_;
        return *this;
    }

    SparseOperator& operator*=(cplx c) {
        shift_ *= c;
        for (auto& d : diag_)
            d *= c;
        for (auto& t : sites_)
            for (auto& x : t.local)
                x *= c;
        for (auto& t : pairs_)
            for (auto& x : t.local)
                x *= c;
        for (auto& r : rank_one_)
            r.coef *= c;
        if (c.imag() != 0.0) hermitian_ = false;
        return *this;
    }

    friend SparseOperator operator+(SparseOperator a, const SparseOperator& b) { return a += b; }
    friend SparseOperator operator*(cplx c, SparseOperator a) { return a *= c; }

    const std::vector<PairTerm>& pair_terms() const { return pairs_; }
    const std::vector<SiteTerm>& site_terms() const { return sites_; }
    const std::vector<RankOne>& rank_one_terms() const { return rank_one_; }

private:
    void check_site(int i) const {
        if (i < 0 || i >= n_sites_)
            throw IndexError("site " + std::to_string(i) + " out of range [0, " + std::to_string(n_sites_) + ")");
    }

    void add_diag_entry(std::size_t s, cplx v) {
        if (v == 0.0) return;
        if (diag_.empty()) diag_.assign(dim_, 0.0);
        diag_[s] += v;
    }

    void add_site_block(int i, std::array<cplx, 4> local) {
        if (local[0] != 0.0 || local[3] != 0.0)
            for (std::size_t s = 0; s < dim_; ++s) {
                const int b = bit(s, i);
                add_diag_entry(s, local[b * 3]);
            }
        local[0] = local[3] = 0.0;
        if (local[1] == 0.0 && local[2] == 0.0) return;
        for (auto& t : sites_)
            if (t.site == i) {
                t.local[1] += local[1];
                t.local[2] += local[2];
                return;
            }
        sites_.push_back({i, local});
    }

    void add_pair_block(int lo, int hi, std::array<cplx, 16> local) {
        bool any_diag = false;
        for (int d = 0; d < 4; ++d)
            any_diag = any_diag || local[d * 5] != 0.0;
        if (any_diag)
            for (std::size_t s = 0; s < dim_; ++s) {
                const int idx = static_cast<int>(bit(s, lo)) | (static_cast<int>(bit(s, hi)) << 1);
                add_diag_entry(s, local[idx * 5]);
            }
        for (int d = 0; d < 4; ++d)
            local[d * 5] = 0.0;
        if (std::all_of(local.begin(), local.end(), [](const cplx& c) { return c == 0.0; })) return;
        for (auto& t : pairs_)
            if (t.lo == lo && t.hi == hi) {
                for (int e = 0; e < 16; ++e)
                    t.local[e] += local[e];
                return;
            }
        pairs_.push_back({lo, hi, local});
    }

    int n_sites_ = 0;
    std::size_t dim_ = 0;
    bool hermitian_ = true;
    cplx shift_ = 0.0;
    std::vector<cplx> diag_;
    std::vector<SiteTerm> sites_;
    std::vector<PairTerm> pairs_;
    std::vector<RankOne> rank_one_;
};

// S_axis on one site (eigenvalues +-1/2), identity elsewhere.
inline SparseOperator site_spin_operator(int n_sites, int site, Axis axis) {
    if (site < 0 || site >= n_sites)
        throw IndexError("site_spin_operator: site " + std::to_string(site) + " out of range");
    SparseOperator op(n_sites);
    Vec3 h{};
    h[static_cast<int>(axis)] = 1.0;
    op.add_site(site, h);
    return op;
}

// sum_i S_i^axis
inline SparseOperator total_spin_operator(int n_sites, Axis axis) {
    SparseOperator op(n_sites);
    Vec3 h{};
    h[static_cast<int>(axis)] = 1.0;
    for (int i = 0; i < n_sites; ++i)
        op.add_site(i, h);
    return op;
}

// sum_i h . S_i for a uniform field vector h
inline SparseOperator uniform_field_operator(int n_sites, const Vec3& h) {
    SparseOperator op(n_sites);
    for (int i = 0; i < n_sites; ++i)
        op.add_site(i, h);
    return op;
}

// H = sum_<ij> J S_i.S_j + D d_ij.(S_i x S_j) - sum_i B.S_i + anisotropy
inline SparseOperator build_hamiltonian(const SpinLattice& lat, const CouplingParams& p) {
    if (!(p.D >= 0.0)) throw ContractError("build_hamiltonian: D must be non-negative");
    for (double v : {p.J, p.D, p.K, p.B[0], p.B[1], p.B[2]})
        if (!std::isfinite(v)) throw ContractError("build_hamiltonian: non-finite coupling");
    SparseOperator h(lat.n_sites);
    for (const auto& b : lat.bonds)
        h.add_two_site(b.i, b.j, bond_coupling_matrix(b, p));
    const Vec3 field{-p.B[0], -p.B[1], -p.B[2]};
    for (int i = 0; i < lat.n_sites; ++i)
        h.add_site(i, field);
    if (p.anisotropy == AnisotropyMode::Onsite && p.K != 0.0)
        h.add_identity(p.K * 0.25 * lat.n_sites);
    return h;
}

inline StateVector apply(const SparseOperator& op, const StateVector& state) { return op.apply(state); }

inline double expectation(const SparseOperator& op, const StateVector& psi) {
    return psi.dot(op.apply(psi)).real();
}

}  // namespace skyrlab
