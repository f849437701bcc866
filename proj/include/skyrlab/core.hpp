#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace skyrlab {

using cplx = std::complex<double>;
using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

// Full many-body state. Site i lives on bit i of the basis index; bit value 0
// is spin-up (+z).
using StateVector = Eigen::VectorXcd;
using DenseMatrix = Eigen::MatrixXcd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLn2 = 0.69314718055994530942;

enum class Axis { X = 0, Y = 1, Z = 2 };

enum class Gate { X, Y, Z, Hadamard };

// Precondition / invariant violated by the caller.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Iterative method ran out of iterations.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> best_residuals)
        : std::runtime_error(what), best_residuals_(std::move(best_residuals)) {}

    const std::vector<double>& best_residuals() const noexcept { return best_residuals_; }

private:
    std::vector<double> best_residuals_;
};

// Request refused because it would exceed a resource limit (e.g. dense solve
// on too large a Hilbert space).
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Observable undefined for the given input (e.g. zero-length spin on a path).
class DegenerateInputError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class IntegratorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Gate parse_gate(const std::string& s) {
    if (s == "X" || s == "x") return Gate::X;
    if (s == "Y" || s == "y") return Gate::Y;
    if (s == "Z" || s == "z") return Gate::Z;
    if (s == "H" || s == "Hadamard" || s == "hadamard") return Gate::Hadamard;
    throw ContractError("unknown gate '" + s + "'");
}

inline std::string to_string(Gate g) {
    switch (g) {
        case Gate::X: return "X";
        case Gate::Y: return "Y";
        case Gate::Z: return "Z";
        case Gate::Hadamard: return "Hadamard";
    }
    throw ContractError("unknown gate");
}

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline bool bit(std::size_t state, int site) { return (state >> site) & 1U; }

inline std::size_t hilbert_dim(int n_sites) {
    if (n_sites < 0 || n_sites > 30)
        throw ContractError("hilbert_dim: unsupported site count " + std::to_string(n_sites));
    return std::size_t{1} << n_sites;
}

inline int sites_from_dim(std::size_t dim) {
    int n = 0;
    while ((std::size_t{1} << n) < dim)
        ++n;
    if ((std::size_t{1} << n) != dim)
        throw ContractError("dimension " + std::to_string(dim) + " is not a power of two");
    return n;
}

// Product state with every spin along +z.
inline StateVector all_up_state(int n_sites) {
    StateVector psi = StateVector::Zero(static_cast<Eigen::Index>(hilbert_dim(n_sites)));
    psi(0) = 1.0;
    return psi;
}

inline void require_normalized(const StateVector& psi, const char* where, double tol = 1e-9) {
    const double nrm = psi.norm();
    if (std::abs(nrm - 1.0) > tol)
        throw ContractError(std::string(where) + ": state is not normalized (norm " +
                            std::to_string(nrm) + ")");
}

}  // namespace skyrlab
