#pragma once

#include "skyrlab/core.hpp"
#include "skyrlab/io.hpp"
#include "skyrlab/lattice.hpp"
#include "skyrlab/observables.hpp"
#include "skyrlab/operators.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace skyrlab {

enum class DriveKind { StaticField, PeriodicField, Rank2Gate };

inline DriveKind parse_drive_kind(const std::string& s) {
    if (s == "static_field") return DriveKind::StaticField;
    if (s == "periodic_field") return DriveKind::PeriodicField;
    if (s == "rank2_gate") return DriveKind::Rank2Gate;
    throw ContractError("unknown drive kind '" + s + "'");
}

// Field drives couple as -gamma sum_i B(t).S_i, with B(t) = field_vector for
// static drives and field_vector cos(omega t) for periodic ones. Rank-2 drives
// add amplitude cos(omega t) G with G built on (psi1, psi2).
struct DriveSpec {
    DriveKind kind = DriveKind::StaticField;
    Vec3 field_vector{0.0, 0.0, 0.0};
    double amplitude = 0.0;
    double frequency = 0.0;
    double gyromagnetic = 1.0;
    Gate gate = Gate::X;
    StateVector psi1;
    StateVector psi2;

    static DriveSpec static_field(const Vec3& b, double gamma = 1.0) {
        DriveSpec d;
        d.kind = DriveKind::StaticField;
        d.field_vector = b;
        d.gyromagnetic = gamma;
        return d;
    }

    static DriveSpec periodic_field(const Vec3& b, double omega, double gamma = 1.0) {
        DriveSpec d;
        d.kind = DriveKind::PeriodicField;
        d.field_vector = b;
        d.frequency = omega;
        d.gyromagnetic = gamma;
        return d;
    }

    static DriveSpec rank2_gate(Gate g, double amplitude, double omega, StateVector psi1, StateVector psi2) {
        DriveSpec d;
        d.kind = DriveKind::Rank2Gate;
        d.gate = g;
        d.amplitude = amplitude;
        d.frequency = omega;
        d.psi1 = std::move(psi1);
        d.psi2 = std::move(psi2);
        return d;
    }

    bool periodic() const { return kind != DriveKind::StaticField; }

    double envelope(double t) const { return periodic() ? std::cos(frequency * t) : 1.0; }
};

inline Vec3 gate_axis(Gate g) {
    switch (g) {
        case Gate::X: return {1.0, 0.0, 0.0};
        case Gate::Y: return {0.0, 1.0, 0.0};
        case Gate::Z: return {0.0, 0.0, 1.0};
        case Gate::Hadamard: return {1.0 / std::sqrt(2.0), 0.0, 1.0 / std::sqrt(2.0)};
    }
    throw ContractError("gate_axis: unknown gate");
}

// Periodic gate field B(t) = -(2A / gamma) cos(omega t) n, n set by the gate.
inline DriveSpec gate_field(Gate g, double amplitude, double omega, double gamma = 1.0) {
    if (amplitude == 0.0) throw ContractError("gate_field: amplitude must be nonzero");
    if (gamma == 0.0) throw ContractError("gate_field: gyromagnetic ratio must be nonzero");
    const Vec3 n = gate_axis(g);
    const double scale = -2.0 * amplitude / gamma;
    DriveSpec d = DriveSpec::periodic_field({scale * n[0], scale * n[1], scale * n[2]}, omega, gamma);
    d.gate = g;
    d.amplitude = amplitude;
    return d;
}

inline void require_orthonormal_pair(const StateVector& a, const StateVector& b, const char* where) {
    if (a.size() != b.size()) throw ContractError(std::string(where) + ": basis dimension mismatch");
    if (std::abs(a.norm() - 1.0) > 1e-8 || std::abs(b.norm() - 1.0) > 1e-8)
        throw ContractError(std::string(where) + ": basis states must be normalized");
    if (std::abs(a.dot(b)) > 1e-8) throw ContractError(std::string(where) + ": basis states are not orthogonal");
}

// Logical gate on span{psi1, psi2} as a rank-2 operator:
// X = |1><2| + |2><1|, Y = -i|1><2| + i|2><1|, Z = |1><1| - |2><2|,
// H = (X + Z)/sqrt 2.
inline SparseOperator full_gate_operator(Gate g, const StateVector& psi1, const StateVector& psi2) {
    require_orthonormal_pair(psi1, psi2, "full_gate_operator");
    const int n = sites_from_dim(static_cast<std::size_t>(psi1.size()));
    SparseOperator op(n);
    const cplx i{0.0, 1.0};
    switch (g) {
        case Gate::X:
            op.add_rank_one(psi1, psi2, 1.0);
            op.add_rank_one(psi2, psi1, 1.0);
            break;
        case Gate::Y:
            op.add_rank_one(psi1, psi2, -i);
            op.add_rank_one(psi2, psi1, i);
            break;
        case Gate::Z:
            op.add_rank_one(psi1, psi1, 1.0);
            op.add_rank_one(psi2, psi2, -1.0);
            break;
        case Gate::Hadamard: {
            const double r = 1.0 / std::sqrt(2.0);
            op.add_rank_one(psi1, psi2, r);
            op.add_rank_one(psi2, psi1, r);
            op.add_rank_one(psi1, psi1, r);
            op.add_rank_one(psi2, psi2, -r);
            break;
        }
    }
    op.set_hermitian(true);
    return op;
}

// (<sigma_x>, <sigma_y>, <sigma_z>) on the logical pair from c_k = <psi_k|psi>.
inline Vec3 logical_bloch_vector(const StateVector& psi, const StateVector& psi1, const StateVector& psi2) {
    if (psi.size() != psi1.size() || psi.size() != psi2.size())
        throw ContractError("logical_bloch_vector: dimension mismatch");
    if (std::abs(psi1.dot(psi2)) > 1e-8) throw ContractError("logical_bloch_vector: basis not orthogonal");
    const cplx c1 = psi1.dot(psi), c2 = psi2.dot(psi);
    const cplx x = std::conj(c1) * c2;
    return {2.0 * x.real(), 2.0 * x.imag(), std::norm(c1) - std::norm(c2)};
}

// Time-dependent generator H(t) = H0 + f(t) V.
struct DrivenHamiltonian {
    const SparseOperator* h0 = nullptr;
    SparseOperator v;
    DriveSpec drive;
    double h0_bound = 0.0;
    double v_bound = 0.0;

    double f(double t) const { return drive.envelope(t); }
};

inline DrivenHamiltonian make_driven_hamiltonian(const SparseOperator& h0, const DriveSpec& drive) {
    DrivenHamiltonian dh;
    dh.h0 = &h0;
    dh.drive = drive;
    const int n = h0.n_sites();
    if (drive.kind == DriveKind::Rank2Gate) {
        if (drive.psi1.size() != static_cast<Eigen::Index>(h0.dim()))
            throw ContractError("rank2 drive basis does not match the Hamiltonian dimension");
        dh.v = full_gate_operator(drive.gate, drive.psi1, drive.psi2);
        dh.v *= drive.amplitude;
    } else {
        const double g = drive.gyromagnetic;
        const Vec3& b = drive.field_vector;
        dh.v = uniform_field_operator(n, {-g * b[0], -g * b[1], -g * b[2]});
    }
    dh.h0_bound = h0.norm_bound();
    dh.v_bound = dh.v.norm_bound();
    return dh;
}

namespace detail {

// psi <- exp(-i tau X) psi for Hermitian X with ||X|| <= bound, by Chebyshev
// expansion: J0(z) + 2 sum_k (-i)^k J_k(z) T_k(X / bound), z = tau * bound.
class ChebyshevExp {
public:
    template <class ApplyX>
    void apply(ApplyX&& apply_x, double bound, double tau, StateVector& psi) {
        if (bound <= 0.0 || tau == 0.0) return;
        const double z = tau * bound;
        if (z != cached_z_) build_coefficients(z);
        const auto dim = psi.size();
        t_prev_ = psi;
        acc_ = coef_[0] * psi;
        if (coef_.size() == 1) {
            psi = acc_;
            return;
        }
        t_cur_.setZero(dim);
        apply_x(t_prev_, t_cur_);
        t_cur_ /= bound;
        acc_ += coef_[1] * t_cur_;
        for (std::size_t k = 2; k < coef_.size(); ++k) {
            t_next_.setZero(dim);
            apply_x(t_cur_, t_next_);
            t_next_ *= 2.0 / bound;
            t_next_ -= t_prev_;
            acc_ += coef_[k] * t_next_;
            t_prev_.swap(t_cur_);
            t_cur_.swap(t_next_);
        }
        psi = acc_;
    }

private:
    void build_coefficients(double z) {
        cached_z_ = z;
        coef_.clear();
        const cplx minus_i{0.0, -1.0};
        cplx phase = 1.0;
        for (int k = 0;; ++k) {
            const double jk = std::cyl_bessel_j(static_cast<double>(k), std::abs(z));
            const double sign = (z < 0.0 && (k & 1)) ? -1.0 : 1.0;
            coef_.push_back((k == 0 ? 1.0 : 2.0) * phase * (sign * jk));
            phase *= minus_i;
            if (k > std::abs(z) + 4 && std::abs(jk) < 1e-17) break;
        }
    }

    double cached_z_ = std::numeric_limits<double>::quiet_NaN();
    std::vector<cplx> coef_;
    StateVector t_prev_, t_cur_, t_next_, acc_;
};

}  // namespace detail

// Commutator-free fourth-order Magnus propagator with Gauss-node sampling:
// U(t+h, t) = exp(-i h (a- H1 + a+ H2)) exp(-i h (a+ H1 + a- H2)),
// H_k = H(t + c_k h), c = 1/2 -+ sqrt 3/6, a+- = 1/4 +- sqrt 3/6.
class MagnusStepper {
public:
    explicit MagnusStepper(const DrivenHamiltonian& dh) : dh_(dh) {}

    void step(StateVector& psi, double t, double h) {
        static const double s3 = std::sqrt(3.0);
        const double c1 = 0.5 - s3 / 6.0, c2 = 0.5 + s3 / 6.0;
        const double ap = 0.25 + s3 / 6.0, am = 0.25 - s3 / 6.0;
        const double f1 = dh_.f(t + c1 * h), f2 = dh_.f(t + c2 * h);
        exponential(psi, h, ap * f1 + am * f2);
        exponential(psi, h, am * f1 + ap * f2);
    }

private:
    // psi <- exp(-i h (H0 / 2 + g V)) psi; the two weights of H0 sum to 1/2.
    void exponential(StateVector& psi, double h, double g) {
        const double bound = 0.5 * dh_.h0_bound + std::abs(g) * dh_.v_bound;
        auto apply_x = [this, g](const StateVector& in, StateVector& out) {
            dh_.h0->apply_add(in, out, 0.5);
            if (g != 0.0) dh_.v.apply_add(in, out, g);
        };
        cheb_.apply(apply_x, bound, h, psi);
    }

    const DrivenHamiltonian& dh_;
    detail::ChebyshevExp cheb_;
};

enum class ChargeRecord { None, Chirality, Topological };

struct RecordOptions {
    int record_every = 1;
    const SpinLattice* lattice = nullptr;  // enables central spin and charge
    std::vector<int> entropy_sites;         // empty: entropy not recorded
    ChargeRecord charge = ChargeRecord::None;
    std::vector<int> charge_path;
    ChargeMode charge_mode = ChargeMode::Path;
    const StateVector* basis1 = nullptr;  // logical pair for Bloch vector and populations
    const StateVector* basis2 = nullptr;
    bool energy = true;
    // checkpointing of long runs
    std::string checkpoint_prefix;
    double checkpoint_seconds = 600.0;
    double t_start = 0.0;
};

// Observable time series; unrecorded quantities are NaN.
struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<Vec3> bloch_logical;
    std::vector<Vec3> central_spin;
    std::vector<double> energy;
    std::vector<double> entropy;
    std::vector<double> charge;
    std::vector<double> p1;
    std::vector<double> p2;
    std::vector<double> leakage;
    std::vector<double> norm;

    std::size_t size() const { return times.size(); }
};

inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& r) {
    os << "t,rx,ry,rz,Sx_c,Sy_c,Sz_c,energy,entropy,Q,p1,p2,leakage\n";
    os.precision(12);
    for (std::size_t k = 0; k < r.size(); ++k) {
        os << r.times[k];
        for (double v : r.bloch_logical[k])
            os << ',' << v;
        for (double v : r.central_spin[k])
            os << ',' << v;
        os << ',' << r.energy[k] << ',' << r.entropy[k] << ',' << r.charge[k] << ',' << r.p1[k] << ',' << r.p2[k]
           << ',' << r.leakage[k] << '\n';
    }
}

namespace detail {

inline void record_point(TrajectoryRecord& rec, double t, const StateVector& psi, const SparseOperator& h0,
                         const RecordOptions& opt) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    rec.times.push_back(t);
    const double nrm = psi.norm();
    rec.norm.push_back(nrm);
    const StateVector unit = psi / nrm;
    if (opt.basis1 && opt.basis2) {
        const cplx c1 = opt.basis1->dot(unit), c2 = opt.basis2->dot(unit);
        rec.bloch_logical.push_back(logical_bloch_vector(unit, *opt.basis1, *opt.basis2));
        rec.p1.push_back(std::norm(c1));
        rec.p2.push_back(std::norm(c2));
        rec.leakage.push_back(1.0 - std::norm(c1) - std::norm(c2));
    } else {
        rec.bloch_logical.push_back({nan, nan, nan});
        rec.p1.push_back(nan);
        rec.p2.push_back(nan);
        rec.leakage.push_back(nan);
    }
    if (opt.lattice) {
        const int c = opt.lattice->center_index;
        Vec3 s{};
        for (int a = 0; a < 3; ++a)
            s[a] = 0.5 * pauli_string_expectation(unit, {{c, Axis(a)}}).real();
        rec.central_spin.push_back(s);
    } else {
        rec.central_spin.push_back({nan, nan, nan});
    }
    rec.energy.push_back(opt.energy ? expectation(h0, unit) : nan);
    rec.entropy.push_back(opt.entropy_sites.empty() ? nan : entanglement_entropy_density(unit, opt.entropy_sites));
    double q = nan;
    if (opt.lattice && opt.charge == ChargeRecord::Chirality) {
        q = scalar_chirality(unit, *opt.lattice);
    } else if (opt.lattice && opt.charge == ChargeRecord::Topological) {
        try {
            const auto path = opt.charge_path.empty() ? default_charge_path(*opt.lattice) : opt.charge_path;
            q = topological_charge(onsite_spin_expectation(unit, *opt.lattice), path, opt.charge_mode);
        } catch (const DegenerateInputError&) {
            q = nan;
        }
    }
    rec.charge.push_back(q);
}

inline void write_checkpoint(const std::string& prefix, const StateVector& psi, double t, long step) {
    write_state(prefix + ".state", psi);
    std::ofstream js(prefix + ".json", std::ios::trunc);
    js << nlohmann::json{{"t", t}, {"step", step}, {"dim", psi.size()}}.dump() << '\n';
}

}  // namespace detail

// Integrates i d/dt psi = [H0 + H_drive(t)] psi from opt.t_start to t_final
// on a uniform grid whose step is the largest value <= dt that divides the
// interval. psi0 is left untouched; the final state is returned through
// final_state when given.
inline TrajectoryRecord evolve_schrodinger(const SparseOperator& h0, const DriveSpec& drive, const StateVector& psi0,
                                           double t_final, double dt, const RecordOptions& opt = {},
                                           StateVector* final_state = nullptr) {
    require_normalized(psi0, "evolve_schrodinger");
    if (static_cast<std::size_t>(psi0.size()) != h0.dim())
        throw ContractError("evolve_schrodinger: state dimension does not match the Hamiltonian");
    if (!(dt > 0.0)) throw ContractError("evolve_schrodinger: dt must be positive");
    if (!(t_final >= opt.t_start)) throw ContractError("evolve_schrodinger: t_final before t_start");
    if (opt.record_every < 1) throw ContractError("evolve_schrodinger: record_every must be >= 1");
    if (drive.periodic()) {
        if (!(drive.frequency > 0.0)) throw ContractError("evolve_schrodinger: periodic drive needs omega > 0");
        const double period = 2.0 * kPi / drive.frequency;
        if (period / dt < 40.0 - 1e-9)
            throw ContractError("evolve_schrodinger: dt must resolve the drive with >= 40 steps per period");
    }
    if (drive.kind == DriveKind::Rank2Gate) require_orthonormal_pair(drive.psi1, drive.psi2, "evolve_schrodinger");

    const DrivenHamiltonian dh = make_driven_hamiltonian(h0, drive);
    MagnusStepper stepper(dh);
    const double span = t_final - opt.t_start;
    const long n_steps = span == 0.0 ? 0 : static_cast<long>(std::ceil(span / dt - 1e-9));
    const double h = n_steps == 0 ? 0.0 : span / static_cast<double>(n_steps);

    TrajectoryRecord rec;
    StateVector psi = psi0;
    detail::record_point(rec, opt.t_start, psi, h0, opt);
    auto last_checkpoint = std::chrono::steady_clock::now();
    for (long k = 0; k < n_steps; ++k) {
        const double t = opt.t_start + static_cast<double>(k) * h;
        stepper.step(psi, t, h);
        const double drift = std::abs(psi.norm() - 1.0);
        if (drift > 1e-6)
            throw IntegratorError("evolve_schrodinger: norm drift " + std::to_string(drift) + " at t = " +
                                  std::to_string(t + h) + "; reduce dt");
        const long done = k + 1;
        if (done % opt.record_every == 0 || done == n_steps)
            detail::record_point(rec, opt.t_start + static_cast<double>(done) * h, psi, h0, opt);
        if (!opt.checkpoint_prefix.empty()) {
            const auto now = std::chrono::steady_clock::now();
            if (std::chrono::duration<double>(now - last_checkpoint).count() >= opt.checkpoint_seconds) {
                detail::write_checkpoint(opt.checkpoint_prefix, psi, opt.t_start + done * h, done);
                last_checkpoint = now;
            }
        }
    }
    if (!opt.checkpoint_prefix.empty()) detail::write_checkpoint(opt.checkpoint_prefix, psi, t_final, n_steps);
    if (final_state) *final_state = psi;
    return rec;
}

}  // namespace skyrlab
