#pragma once

#include "skyrlab/core.hpp"
#include "skyrlab/operators.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace skyrlab {

struct EigenResult {
    std::vector<double> eigenvalues;  // ascending
    std::vector<StateVector> eigenvectors;
    std::vector<double> residuals;
    std::vector<std::vector<int>> degeneracy_groups;
    long matvecs = 0;

    std::size_t size() const { return eigenvalues.size(); }

    int ground_degeneracy() const {
        return degeneracy_groups.empty() ? 0 : static_cast<int>(degeneracy_groups.front().size());
    }
};

struct LanczosOptions {
    int max_krylov = 300;
    int max_restarts = 60;
    double tol_degeneracy = 1e-6;
    // Cap on the Krylov basis memory; lowers max_krylov on large spaces.
    std::size_t memory_budget_bytes = std::size_t{1} << 30;
    int check_every = 4;
};

// Chains pairs whose consecutive eigenvalues differ by less than tol.
inline std::vector<std::vector<int>> degeneracy_groups(const std::vector<double>& sorted, double tol) {
    std::vector<std::vector<int>> groups;
    for (int i = 0; i < static_cast<int>(sorted.size()); ++i) {
        if (i > 0 && std::abs(sorted[i] - sorted[i - 1]) < tol)
            groups.back().push_back(i);
        else
            groups.push_back({i});
    }
    return groups;
}

namespace detail {

// Fixes the global phase so the largest-magnitude amplitude is real positive.
inline void canonical_phase(StateVector& v) {
    Eigen::Index imax = 0;
    v.cwiseAbs2().maxCoeff(&imax);
    const cplx a = v(imax);
    if (std::abs(a) > 0.0) v *= std::conj(a) / std::abs(a);
}

inline StateVector random_state(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    StateVector v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double re = g(rng);
        const double im = g(rng);
        v(i) = {re, im};
    }
    return v;
}

inline void project_out(StateVector& w, const std::vector<StateVector>& basis) {
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& b : basis)
            w -= b.dot(w) * b;
}

inline EigenResult finish(std::vector<double> values, std::vector<StateVector> vectors,
                          std::vector<double> residuals, double tol_degeneracy) {
    std::vector<int> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    EigenResult r;
    for (int i : order) {
        r.eigenvalues.push_back(values[i]);
        r.eigenvectors.push_back(std::move(vectors[i]));
        r.residuals.push_back(residuals[i]);
    }
    r.degeneracy_groups = degeneracy_groups(r.eigenvalues, tol_degeneracy);
    return r;
}

}  // namespace detail

// Lowest k eigenpairs by Lanczos. Each pair is found by a thick-restarted,
// fully reorthogonalized run in the orthogonal complement of the pairs
// already locked, starting from a fresh seeded random vector, so degenerate
// partners are recovered one at a time.
inline EigenResult lanczos_lowest(const SparseOperator& op, int k, double tol = 1e-8, std::uint64_t seed = 0,
                                  const LanczosOptions& opt = {}) {
    if (!op.hermitian()) throw ContractError("lanczos_lowest: operator is not Hermitian");
    if (!(tol > 0.0)) throw ContractError("lanczos_lowest: tol must be positive");
    const std::size_t dim = op.dim();
    if (k < 1 || static_cast<std::size_t>(k) > dim)
        throw ContractError("lanczos_lowest: k must be in [1, dim]");

    const std::size_t bytes_per_vector = dim * sizeof(cplx);
    const int budget_cap = static_cast<int>(std::max<std::size_t>(8, opt.memory_budget_bytes / bytes_per_vector));
    std::mt19937_64 rng(seed);

    std::vector<StateVector> locked;
    std::vector<double> values, residuals;
    std::vector<double> best(k, std::numeric_limits<double>::infinity());
    long matvecs = 0;

    for (int target = 0; target < k; ++target) {
        const int room = static_cast<int>(dim) - static_cast<int>(locked.size());
        const int m_max = std::max(1, std::min({opt.max_krylov, budget_cap, room}));
        const int keep = std::max(1, std::min(m_max / 4, 20));
        const double breakdown_tol = 1e-13 * std::max(1.0, op.norm_bound());

        std::vector<StateVector> V;
        V.reserve(m_max + 1);
        Eigen::MatrixXcd T = Eigen::MatrixXcd::Zero(m_max, m_max);

        StateVector v0 = detail::random_state(dim, rng);
        detail::project_out(v0, locked);
        v0.normalize();
        V.push_back(std::move(v0));

        bool done = false;
        int restarts = 0;
        int j = 0;  // index of the vector whose image is computed next
        StateVector w(static_cast<Eigen::Index>(dim));
        while (!done) {
            w.setZero();
            op.apply_add(V[j], w);
            ++matvecs;
            detail::project_out(w, locked);
            Eigen::VectorXcd h(j + 1);
            for (int i = 0; i <= j; ++i)
                h(i) = V[i].dot(w);
            const double norm_before = w.norm();
            for (int i = 0; i <= j; ++i)
                w -= h(i) * V[i];
            if (w.norm() < 0.7 * norm_before) {  // second Gram-Schmidt pass
                for (int i = 0; i <= j; ++i) {
                    const cplx c = V[i].dot(w);
                    w -= c * V[i];
                    h(i) += c;
                }
            }
            for (int i = 0; i <= j; ++i) {
                T(i, j) = h(i);
                T(j, i) = std::conj(h(i));
            }
            T(j, j) = T(j, j).real();
            const double beta = w.norm();
            const int m = j + 1;
            const bool breakdown = beta < breakdown_tol;
            const bool full = m == m_max;
            if (!(breakdown || full || m % opt.check_every == 0)) {
                V.push_back(w / beta);
                ++j;
                continue;
            }

            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(T.topLeftCorner(m, m));
            const double est = breakdown ? 0.0 : beta * std::abs(es.eigenvectors()(m - 1, 0));
            if (est < tol) {
                StateVector x = StateVector::Zero(static_cast<Eigen::Index>(dim));
                for (int i = 0; i < m; ++i)
                    x += es.eigenvectors()(i, 0) * V[i];
                detail::project_out(x, locked);
                x.normalize();
                StateVector r = op.apply(x);
                const double lambda = x.dot(r).real();
                r -= lambda * x;
                const double res = r.norm();
                best[target] = std::min(best[target], res);
                if (res < tol) {
                    detail::canonical_phase(x);
                    values.push_back(lambda);
                    residuals.push_back(res);
                    locked.push_back(std::move(x));
                    done = true;
                    break;
                }
            } else {
                best[target] = std::min(best[target], est);
            }

            if (breakdown) {
                // invariant subspace exhausted without a converged pair: restart fresh
                StateVector v = detail::random_state(dim, rng);
                detail::project_out(v, locked);
                for (int pass = 0; pass < 2; ++pass)
                    for (const auto& b : V)
                        v -= b.dot(v) * b;
                if (m >= m_max || v.norm() < 1e-10) {
                    // whole complement spanned: lowest Ritz pair is exact
                    StateVector x = StateVector::Zero(static_cast<Eigen::Index>(dim));
                    for (int i = 0; i < m; ++i)
                        x += es.eigenvectors()(i, 0) * V[i];
                    x.normalize();
                    StateVector r = op.apply(x);
                    const double lambda = x.dot(r).real();
                    r -= lambda * x;
                    detail::canonical_phase(x);
                    values.push_back(lambda);
                    residuals.push_back(r.norm());
                    locked.push_back(std::move(x));
                    done = true;
                    break;
                }
                V.push_back(v.normalized());
                ++j;
                continue;
            }

            if (full) {
                if (++restarts > opt.max_restarts)
                    throw ConvergenceError("lanczos_lowest: no convergence for pair " + std::to_string(target) +
                                               " after " + std::to_string(opt.max_restarts) + " restarts",
                                           best);
                const int kk = std::min(keep, m - 1);
                std::vector<StateVector> U;
                U.reserve(m_max + 1);
                for (int c = 0; c < kk; ++c) {
                    StateVector u = StateVector::Zero(static_cast<Eigen::Index>(dim));
                    for (int i = 0; i < m; ++i)
                        u += es.eigenvectors()(i, c) * V[i];
                    U.push_back(std::move(u));
                }
                V.swap(U);
                U.clear();
                T.setZero();
                for (int c = 0; c < kk; ++c)
                    T(c, c) = es.eigenvalues()(c);
                StateVector next = w / beta;
                for (int pass = 0; pass < 2; ++pass)
                    for (const auto& b : V)
                        next -= b.dot(next) * b;
                V.push_back(next.normalized());
                j = kk;
                continue;
            }

            V.push_back(w / beta);
            ++j;
        }
    }
    EigenResult result = detail::finish(std::move(values), std::move(locked), std::move(residuals), opt.tol_degeneracy);
    result.matvecs = matvecs;
    return result;
}

// Full spectrum by dense diagonalization; reference oracle for small spaces.
inline EigenResult dense_spectrum(const SparseOperator& op, bool with_vectors = true, double tol_degeneracy = 1e-6,
                                  std::size_t max_dim = 4096) {
    if (!op.hermitian()) throw ContractError("dense_spectrum: operator is not Hermitian");
    if (op.dim() > max_dim)
        throw ResourceError("dense_spectrum: dimension " + std::to_string(op.dim()) + " exceeds limit " +
                            std::to_string(max_dim));
    const DenseMatrix m = op.to_dense();
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m, with_vectors ? Eigen::ComputeEigenvectors
                                                                  : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw ConvergenceError("dense_spectrum: eigensolver failed", {});
    EigenResult r;
    const auto n = es.eigenvalues().size();
    for (Eigen::Index i = 0; i < n; ++i) {
        r.eigenvalues.push_back(es.eigenvalues()(i));
        if (with_vectors) {
            StateVector v = es.eigenvectors().col(i);
            detail::canonical_phase(v);
            r.residuals.push_back((m * v - es.eigenvalues()(i) * v).norm());
            r.eigenvectors.push_back(std::move(v));
        } else {
            r.residuals.push_back(0.0);
        }
    }
    r.degeneracy_groups = degeneracy_groups(r.eigenvalues, tol_degeneracy);
    return r;
}

// Lowest k pairs: dense below the oracle limit, Lanczos above it.
inline EigenResult lowest_eigenpairs(const SparseOperator& op, int k, double tol, std::uint64_t seed,
                                     const LanczosOptions& opt = {}) {
    if (op.dim() <= 256) {
        EigenResult full = dense_spectrum(op, true, opt.tol_degeneracy);
        const int kk = std::min<int>(k, static_cast<int>(full.size()));
        full.eigenvalues.resize(kk);
        full.eigenvectors.resize(kk);
        full.residuals.resize(kk);
        full.degeneracy_groups = degeneracy_groups(full.eigenvalues, opt.tol_degeneracy);
        return full;
    }
    return lanczos_lowest(op, k, tol, seed, opt);
}

}  // namespace skyrlab
