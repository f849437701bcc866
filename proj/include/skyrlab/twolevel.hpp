#pragma once

#include "skyrlab/core.hpp"
#include "skyrlab/dynamics.hpp"
#include "skyrlab/eigensolver.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace skyrlab {

using Matrix2 = Eigen::Matrix2cd;
using Qubit = Eigen::Vector2cd;
using DensityMatrix2 = Eigen::Matrix2cd;

// The lowest pair is not separated by a gap.
class RejectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct QubitSystem {
    double E1 = 0.0;  // ground
    double E2 = 0.0;  // first excited
    double omega0 = 0.0;
    std::optional<double> E3;  // second excited, when known
    std::string provenance;

    // (E2 - E1) - (E3 - E2)
    std::optional<double> anharmonicity() const {
        if (!E3) return std::nullopt;
        return (E2 - E1) - (*E3 - E2);
    }
};

inline QubitSystem project_two_level(const EigenResult& eigs, double tol_degeneracy = 1e-6,
                                     std::string provenance = {}) {
    if (eigs.size() < 2) throw ContractError("project_two_level: need at least two eigenpairs");
    const double gap = eigs.eigenvalues[1] - eigs.eigenvalues[0];
    if (!(gap > tol_degeneracy))
        throw RejectionError("no isolated qubit at this parameter point (gap " + std::to_string(gap) + ")");
    QubitSystem q;
    q.E1 = eigs.eigenvalues[0];
    q.E2 = eigs.eigenvalues[1];
    q.omega0 = gap;
    if (eigs.size() >= 3) q.E3 = eigs.eigenvalues[2];
    q.provenance = std::move(provenance);
    return q;
}

inline Matrix2 pauli(Axis a) {
    Matrix2 m;
    const cplx i{0.0, 1.0};
    switch (a) {
        case Axis::X: m << 0.0, 1.0, 1.0, 0.0; break;
        case Axis::Y: m << 0.0, -i, i, 0.0; break;
        case Axis::Z: m << 1.0, 0.0, 0.0, -1.0; break;
    }
    return m;
}

inline Matrix2 gate_matrix(Gate g) {
    switch (g) {
        case Gate::X: return pauli(Axis::X);
        case Gate::Y: return pauli(Axis::Y);
        case Gate::Z: return pauli(Axis::Z);
        case Gate::Hadamard: return (pauli(Axis::X) + pauli(Axis::Z)) / std::sqrt(2.0);
    }
    throw ContractError("gate_matrix: unknown gate");
}

// R_a(theta) = exp(-i theta sigma_a / 2)
inline Matrix2 rotation(Axis a, double theta) {
    return std::cos(theta / 2.0) * Matrix2::Identity() - cplx{0.0, std::sin(theta / 2.0)} * pauli(a);
}

// Pulse program R_z(pi/2) R_x(pi/2) R_z(pi/2) = -i H.
inline Matrix2 composite_hadamard() {
    return rotation(Axis::Z, kPi / 2) * rotation(Axis::X, kPi / 2) * rotation(Axis::Z, kPi / 2);
}

// Smallest |phase distance| between two unitaries: min over phi of ||A - e^{i phi} B||.
inline double distance_up_to_phase(const Matrix2& a, const Matrix2& b) {
    const cplx overlap = (b.adjoint() * a).trace();
    const cplx phase = std::abs(overlap) > 0.0 ? overlap / std::abs(overlap) : cplx{1.0, 0.0};
    return (a - phase * b).norm();
}

inline Vec3 bloch_vector(const Qubit& psi) {
    const cplx x = std::conj(psi(0)) * psi(1);
    return {2.0 * x.real(), 2.0 * x.imag(), std::norm(psi(0)) - std::norm(psi(1))};
}

inline Vec3 bloch_vector(const DensityMatrix2& rho) {
    return {2.0 * rho(0, 1).real(), -2.0 * rho(0, 1).imag(), (rho(0, 0) - rho(1, 1)).real()};
}

namespace detail {

// exp(-i tau M) for Hermitian 2x2 M = a I + b.sigma.
inline Matrix2 expm_hermitian2(const Matrix2& m, double tau) {
    const double a = 0.5 * (m(0, 0) + m(1, 1)).real();
    const Vec3 b{m(0, 1).real(), -m(0, 1).imag(), 0.5 * (m(0, 0) - m(1, 1)).real()};
    const double nb = norm(b);
    Matrix2 u = std::cos(tau * nb) * Matrix2::Identity();
    if (nb > 0.0) {
        const Matrix2 n = (b[0] * pauli(Axis::X) + b[1] * pauli(Axis::Y) + b[2] * pauli(Axis::Z)) / nb;
        u -= cplx{0.0, std::sin(tau * nb)} * n;
    }
    return std::polar(1.0, -tau * a) * u;
}

inline Matrix2 qubit_h0(const QubitSystem& q) {
    Matrix2 h = Matrix2::Zero();
    h(0, 0) = -0.5 * q.omega0;
    h(1, 1) = 0.5 * q.omega0;
    return h;
}

inline void push_qubit_record(TrajectoryRecord& rec, double t, const Vec3& r, double p1, double p2, double energy,
                              double nrm) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    rec.times.push_back(t);
    rec.bloch_logical.push_back(r);
    rec.central_spin.push_back({nan, nan, nan});
    rec.energy.push_back(energy);
    rec.entropy.push_back(nan);
    rec.charge.push_back(nan);
    rec.p1.push_back(p1);
    rec.p2.push_back(p2);
    rec.leakage.push_back(1.0 - p1 - p2);
    rec.norm.push_back(nrm);
}

}  // namespace detail

// Coherent two-level evolution under diag(E1, E2) + A cos(omega t) G with the
// same fourth-order Magnus scheme as the full lattice, exact 2x2 exponentials.
inline TrajectoryRecord evolve_two_level(const QubitSystem& q, Gate g, double amplitude, double omega,
                                         const Qubit& psi0, double t_final, double dt, int record_every = 1,
                                         Qubit* final_state = nullptr) {
    if (std::abs(psi0.norm() - 1.0) > 1e-9) throw ContractError("evolve_two_level: psi0 is not normalized");
    if (!(dt > 0.0) || !(t_final >= 0.0)) throw ContractError("evolve_two_level: bad time grid");
    if (record_every < 1) throw ContractError("evolve_two_level: record_every must be >= 1");
    if (amplitude != 0.0 && !(omega >= 0.0)) throw ContractError("evolve_two_level: omega must be >= 0");
    const Matrix2 h0 = detail::qubit_h0(q);
    const Matrix2 gm = gate_matrix(g);
    const long n = t_final == 0.0 ? 0 : static_cast<long>(std::ceil(t_final / dt - 1e-9));
    const double h = n == 0 ? 0.0 : t_final / static_cast<double>(n);
    static const double s3 = std::sqrt(3.0);
    const double c1 = 0.5 - s3 / 6.0, c2 = 0.5 + s3 / 6.0;
    const double ap = 0.25 + s3 / 6.0, am = 0.25 - s3 / 6.0;

    TrajectoryRecord rec;
    Qubit psi = psi0;
    auto record = [&](double t) {
        const double e = (psi.adjoint() * h0 * psi)(0).real() + 0.5 * (q.E1 + q.E2);
        detail::push_qubit_record(rec, t, bloch_vector(psi), std::norm(psi(0)), std::norm(psi(1)), e, psi.norm());
    };
    record(0.0);
    for (long k = 0; k < n; ++k) {
        const double t = k * h;
        const double f1 = amplitude * std::cos(omega * (t + c1 * h));
        const double f2 = amplitude * std::cos(omega * (t + c2 * h));
        psi = detail::expm_hermitian2(0.5 * h0 + (ap * f1 + am * f2) * gm, h) * psi;
        psi = detail::expm_hermitian2(0.5 * h0 + (am * f1 + ap * f2) * gm, h) * psi;
        if ((k + 1) % record_every == 0 || k + 1 == n) record((k + 1) * h);
    }
    if (final_state) *final_state = psi;
    return rec;
}

enum class DephasingConvention {
    Rate,     // L2 = sqrt(gamma_phi / 2) sigma_z: coherence decays as exp(-t / T2)
    Literal,  // L2 = sqrt(gamma_phi) sigma_z
};

inline DephasingConvention parse_dephasing(const std::string& s) {
    if (s == "rate") return DephasingConvention::Rate;
    if (s == "literal") return DephasingConvention::Literal;
    throw ContractError("unknown dephasing convention '" + s + "'");
}

struct LindbladTrajectory {
    TrajectoryRecord record;
    std::vector<DensityMatrix2> rho;
};

inline void require_density_matrix(const DensityMatrix2& rho, const char* where) {
    if ((rho - rho.adjoint()).norm() > 1e-10) throw ContractError(std::string(where) + ": rho is not Hermitian");
    if (std::abs(rho.trace() - 1.0) > 1e-10) throw ContractError(std::string(where) + ": trace of rho is not 1");
    Eigen::SelfAdjointEigenSolver<Matrix2> es(rho);
    if (es.eigenvalues().minCoeff() < -1e-10) throw ContractError(std::string(where) + ": rho is not positive");
}

// drho/dt = -i[H(t), rho] + sum_k L_k rho L_k^+ - {L_k^+ L_k, rho}/2 with
// L1 = sqrt(1/T1)|0><1| and a sigma_z dephasing channel for
// gamma_phi = 1/T2 - 1/(2 T1). Fixed-step RK4 with internal substeps.
inline LindbladTrajectory evolve_lindblad(const QubitSystem& q, Gate g, double amplitude, double omega,
                                          const DensityMatrix2& rho0, double T1, double T2, double t_final,
                                          double dt, int record_every = 1,
                                          DephasingConvention conv = DephasingConvention::Rate) {
    if (!(T1 > 0.0) || !(T2 > 0.0)) throw ContractError("evolve_lindblad: T1 and T2 must be positive");
    if (T2 > 2.0 * T1 * (1.0 + 1e-12))
        throw ContractError("evolve_lindblad: T2 > 2 T1 gives a negative dephasing rate");
    require_density_matrix(rho0, "evolve_lindblad");
    if (!(dt > 0.0) || !(t_final >= 0.0)) throw ContractError("evolve_lindblad: bad time grid");
    if (record_every < 1) throw ContractError("evolve_lindblad: record_every must be >= 1");

    const double gamma1 = std::isinf(T1) ? 0.0 : 1.0 / T1;
    const double gamma_phi = std::max(0.0, (std::isinf(T2) ? 0.0 : 1.0 / T2) - 0.5 * gamma1);
    const double kappa = conv == DephasingConvention::Rate ? 0.5 * gamma_phi : gamma_phi;
    Matrix2 l1 = Matrix2::Zero();
    l1(0, 1) = std::sqrt(gamma1);
    const Matrix2 l2 = std::sqrt(kappa) * pauli(Axis::Z);
    const Matrix2 l1d = l1.adjoint(), l2d = l2.adjoint();
    const Matrix2 l1dl1 = l1d * l1, l2dl2 = l2d * l2;
    const Matrix2 h0 = detail::qubit_h0(q);
    const Matrix2 gm = gate_matrix(g);
    const cplx i{0.0, 1.0};

    auto rhs = [&](double t, const DensityMatrix2& rho) -> DensityMatrix2 {
        const Matrix2 h = h0 + amplitude * std::cos(omega * t) * gm;
        DensityMatrix2 d = -i * (h * rho - rho * h);
        d += l1 * rho * l1d - 0.5 * (l1dl1 * rho + rho * l1dl1);
        d += l2 * rho * l2d - 0.5 * (l2dl2 * rho + rho * l2dl2);
        return d;
    };

    const long n = t_final == 0.0 ? 0 : static_cast<long>(std::ceil(t_final / dt - 1e-9));
    const double h = n == 0 ? 0.0 : t_final / static_cast<double>(n);
    const double fastest = std::max({std::abs(q.omega0) + std::abs(amplitude), omega, gamma1 + gamma_phi, 1e-300});
    const int sub = std::max(1, static_cast<int>(std::ceil(h * fastest / 0.01)));
    const double hs = h / sub;

    LindbladTrajectory out;
    DensityMatrix2 rho = rho0;
    auto record = [&](double t) {
        const Vec3 r = bloch_vector(rho);
        const double e = (rho * h0).trace().real() + 0.5 * (q.E1 + q.E2);
        detail::push_qubit_record(out.record, t, r, rho(0, 0).real(), rho(1, 1).real(), e, rho.trace().real());
        out.rho.push_back(rho);
    };
    record(0.0);
    for (long k = 0; k < n; ++k) {
        for (int s = 0; s < sub; ++s) {
            const double t = k * h + s * hs;
            const DensityMatrix2 k1 = rhs(t, rho);
            const DensityMatrix2 k2 = rhs(t + 0.5 * hs, rho + 0.5 * hs * k1);
            const DensityMatrix2 k3 = rhs(t + 0.5 * hs, rho + 0.5 * hs * k2);
            const DensityMatrix2 k4 = rhs(t + hs, rho + hs * k3);
            rho += (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            rho = 0.5 * (rho + rho.adjoint()).eval();
        }
        if ((k + 1) % record_every == 0 || k + 1 == n) record((k + 1) * h);
    }
    return out;
}

// Rotating-frame Hamiltonian (Delta/2) sigma_z + (Omega_R/2) G.
inline Matrix2 rwa_hamiltonian(double detuning, double rabi, Gate g) {
    return 0.5 * detuning * pauli(Axis::Z) + 0.5 * rabi * gate_matrix(g);
}

// Pulse duration for field amplitude B0: tau = 2 pi / (gamma B0).
inline double pi_pulse_duration(double b0, double gamma = 1.0) {
    if (b0 == 0.0 || gamma == 0.0) throw ContractError("pi_pulse_duration: amplitude and gamma must be nonzero");
    return 2.0 * kPi / std::abs(gamma * b0);
}

// RWA Rabi period 2 pi / Omega_R with Omega_R = A.
inline double rabi_period(double amplitude) {
    if (amplitude == 0.0) throw ContractError("rabi_period: amplitude must be nonzero");
    return 2.0 * kPi / std::abs(amplitude);
}

// Time of the first maximum of the excited population under a resonant drive,
// i.e. half the numerically refined Rabi period.
inline double refined_half_rabi_period(const QubitSystem& q, Gate g, double amplitude, double dt) {
    const double guess = rabi_period(amplitude);
    const auto rec = evolve_two_level(q, g, amplitude, q.omega0, Qubit(1.0, 0.0), 0.75 * guess, dt);
    std::size_t best = 0;
    for (std::size_t k = 0; k < rec.size(); ++k)
        if (rec.p2[k] > rec.p2[best]) best = k;
    return rec.times[best];
}

enum class ReadoutBasis { X, Y };

struct ReadoutResult {
    Qubit rotated;
    std::array<double, 2> populations{};
};

// X basis: Hadamard. Y basis: exp(-i pi sigma_x / 4) = (1/sqrt 2)((1, -i), (-i, 1)),
// which sends |+i> to |0> and |-i> to |1>.
inline Matrix2 readout_matrix(ReadoutBasis b) {
    if (b == ReadoutBasis::X) return gate_matrix(Gate::Hadamard);
    return rotation(Axis::X, kPi / 2);
}

inline ReadoutResult readout_rotation(ReadoutBasis b, const Qubit& psi) {
    if (std::abs(psi.norm() - 1.0) > 1e-9) throw ContractError("readout_rotation: state is not normalized");
    ReadoutResult r;
    r.rotated = readout_matrix(b) * psi;
    r.populations = {std::norm(r.rotated(0)), std::norm(r.rotated(1))};
    return r;
}

// Ideal two-qubit circuit: (H x I) then CNOT (control = first qubit) on |00>.
// Basis order |q0 q1> -> index 2 q0 + q1.
inline Eigen::Matrix4cd cnot() {
    Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
    m(0, 0) = m(1, 1) = 1.0;
    m(2, 3) = m(3, 2) = 1.0;
    return m;
}

inline Eigen::Matrix4cd kron(const Matrix2& a, const Matrix2& b) {
    Eigen::Matrix4cd m;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            m.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
    return m;
}

inline Eigen::Vector4cd bell_circuit() {
    Eigen::Vector4cd psi = Eigen::Vector4cd::Zero();
    psi(0) = 1.0;
    psi = kron(gate_matrix(Gate::Hadamard), Matrix2::Identity()) * psi;
    return cnot() * psi;
}

// Entropy of the first qubit of a two-qubit pure state.
inline double two_qubit_entropy(const Eigen::Vector4cd& psi) {
    Matrix2 m;
    m << psi(0), psi(1), psi(2), psi(3);
    const Matrix2 rho = m * m.adjoint();
    Eigen::SelfAdjointEigenSolver<Matrix2> es(rho);
    double s = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double p = es.eigenvalues()(i);
        if (p > 1e-15) s -= p * std::log(p);
    }
    return s;
}

}  // namespace skyrlab
