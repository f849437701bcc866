#include "oracle.hpp"
#include "skyrlab/eigensolver.hpp"
#include "skyrlab/observables.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

using namespace skyrlab;

namespace {

StateVector singlet() {
    StateVector psi = StateVector::Zero(4);
    psi(1) = 1.0 / std::sqrt(2.0);
    psi(2) = -1.0 / std::sqrt(2.0);
    return psi;
}

StateVector bell_pair() {
    StateVector psi = StateVector::Zero(4);
    psi(0) = psi(3) = 1.0 / std::sqrt(2.0);
    return psi;
}

// Product state with every spin along its own direction (theta, phi).
StateVector product_state(const std::vector<std::pair<double, double>>& angles) {
    StateVector psi = StateVector::Ones(1);
    for (auto it = angles.rbegin(); it != angles.rend(); ++it) {
        const auto [theta, phi] = *it;
        Eigen::Vector2cd s(std::cos(theta / 2), std::polar(std::sin(theta / 2), phi));
        StateVector next(psi.size() * 2);
        for (Eigen::Index k = 0; k < psi.size(); ++k) {
            next(2 * k) = psi(k) * s(0);
            next(2 * k + 1) = psi(k) * s(1);
        }
        psi = next;
    }
    return psi;
}

SpinField field_of(std::vector<Vec3> v) { return SpinField{std::move(v)}; }

SpinLattice two_sites() { return build_parallelogram(2, 1); }

// Time reversal prod_i (i sigma_y^i) K, which maps <sigma> to -<sigma> on every site.
StateVector flip_all(const StateVector& psi) {
    const int n = sites_from_dim(psi.size());
    StateVector out = psi.conjugate();
    for (int i = 0; i < n; ++i)
        out = oracle::embed(n, {{i, oracle::pauli(1)}}) * out;
    return out;
}

}  // namespace

TEST(OnsiteSpin, AllUpAndSinglet) {
    const auto lat = build_triangular(1, Boundary::OBC);
    const auto f = onsite_spin_expectation(all_up_state(7), lat);
    for (const auto& s : f.spins) {
        EXPECT_EQ(s[0], 0.0);
        EXPECT_EQ(s[1], 0.0);
        EXPECT_DOUBLE_EQ(s[2], 0.5);
    }
    const auto g = onsite_spin_expectation(singlet(), two_sites());
    for (const auto& s : g.spins)
        EXPECT_LT(norm(s), 1e-15);
}

TEST(OnsiteSpin, MatchesDenseOperatorsAndBlochBound) {
    std::mt19937_64 rng(31);
    const auto lat = build_triangular(1, Boundary::OBC);
    const auto psi = oracle::random_state(128, rng);
    const auto f = onsite_spin_expectation(psi, lat);
    for (int i = 0; i < 7; ++i) {
        for (int a = 0; a < 3; ++a)
            EXPECT_NEAR(f[i][a], psi.dot(oracle::spin(7, i, a) * psi).real(), 1e-13);
        EXPECT_LE(norm(f[i]), 0.5 + 1e-9);
    }
}

TEST(OnsiteSpin, RejectsUnnormalizedState) {
    EXPECT_THROW(onsite_spin_expectation(StateVector::Ones(4), two_sites()), ContractError);
}

TEST(Chirality, FullyPolarizedIsZero) {
    const auto lat = build_triangular(2, Boundary::OBC);
    EXPECT_NEAR(scalar_chirality(all_up_state(19), lat), 0.0, 1e-14);
}

TEST(Chirality, MatchesDenseTripleProduct) {
    std::mt19937_64 rng(37);
    const auto lat = build_triangular(1, Boundary::OBC);
    const auto psi = oracle::random_state(128, rng);
    double total = 0.0;
    for (const auto& t : lat.triangles) {
        // sigma_a . (sigma_b x sigma_c) = 8 S_a . (S_b x S_c)
        DenseMatrix op = DenseMatrix::Zero(128, 128);
        for (int x = 0; x < 3; ++x) {
            const int y = (x + 1) % 3, z = (x + 2) % 3;
            const DenseMatrix cross = oracle::spin_spin(7, t.b, y, t.c, z) - oracle::spin_spin(7, t.b, z, t.c, y);
            op += 8.0 * oracle::spin(7, t.a, x) * cross;
        }
        total += psi.dot(op * psi).real();
    }
    EXPECT_NEAR(scalar_chirality(psi, lat), total / lat.triangles.size(), 1e-12);
}

TEST(Chirality, ProductStateTripleProduct) {
    // three spins along x, y, z on one triangle: sigma_x . (sigma_y x sigma_z) = 1
    SpinLattice lat = build_parallelogram(2, 2);
    lat.triangles = {{0, 1, 2}};
    const auto psi = product_state({{kPi / 2, 0.0}, {kPi / 2, kPi / 2}, {0.0, 0.0}, {0.0, 0.0}});
    EXPECT_NEAR(scalar_chirality(psi, lat), 1.0, 1e-12);
}

TEST(Chirality, SignFlipsUnderGlobalInversion) {
    const auto lat = build_triangular(1, Boundary::OBC);
    CouplingParams p;
    p.J = 0.3;
    p.B = {0.0, 0.0, 0.2};
    const auto psi = dense_spectrum(build_hamiltonian(lat, p)).eigenvectors[0];
    const double q = scalar_chirality(psi, lat);
    EXPECT_GT(std::abs(q), 1e-3);
    EXPECT_NEAR(scalar_chirality(flip_all(psi), lat), -q, 1e-9);
}

TEST(Chirality, NeedsTriangles) {
    EXPECT_THROW(scalar_chirality(all_up_state(1), build_triangular(0, Boundary::OBC)), ContractError);
}

TEST(TopologicalCharge, Examples) {
    EXPECT_EQ(topological_charge(field_of({{0, 0, 0.5}, {0, 0, 0.5}, {0, 0, 0.5}}), {0, 1, 2}), 0.0);
    const auto f = field_of({{0, 0, 0.5}, {0.5, 0, 0}, {0, 0, -0.5}});
    EXPECT_NEAR(topological_charge(f, {0, 1, 2}), 0.5, 1e-15);
    EXPECT_NEAR(topological_charge(f, {0, 1, 2}, ChargeMode::Endpoints), 1.0, 1e-15);
}

TEST(TopologicalCharge, FullWindingAlongFivePointPath) {
    // up -> x -> down -> -x -> up: four quarter turns
    const auto f = field_of({{0, 0, 0.5}, {0.5, 0, 0}, {0, 0, -0.5}, {-0.5, 0, 0}, {0, 0, 0.5}});
    EXPECT_NEAR(topological_charge(f, {0, 1, 2, 3, 4}), 1.0, 1e-15);
    EXPECT_NEAR(topological_charge(f, {0, 1, 2, 3, 4}, ChargeMode::Endpoints), 0.0, 1e-15);
}

TEST(TopologicalCharge, HalfSpaceBound) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        // start vector +z; a monotone tilt away from it stays in the upper half-space
        std::vector<Vec3> path_field = {{0.0, 0.0, 0.5}};
        const double step = (kPi / 2 - 1e-3) / 3.0;
        const double phi = kPi * u(rng);
        for (int k = 1; k < 4; ++k)
            path_field.push_back({std::sin(k * step) * std::cos(phi), std::sin(k * step) * std::sin(phi), std::cos(k * step)});
        EXPECT_LT(topological_charge(field_of(path_field), {0, 1, 2, 3}), 0.5);
    }
}

TEST(TopologicalCharge, Errors) {
    const auto f = field_of({{0, 0, 0.5}, {0, 0, 0}});
    EXPECT_THROW(topological_charge(f, {0, 1}), DegenerateInputError);
    EXPECT_THROW(topological_charge(f, {0}), ContractError);
    EXPECT_THROW(parse_charge_mode("loop"), ContractError);
}

TEST(StructureFactor, FullyPolarizedPeak) {
    const auto lat = build_triangular(1, Boundary::OBC);
    auto g = structure_factor(all_up_state(7), lat, 9);
    const int mid = 4;  // q = 0
    EXPECT_NEAR(g.at(mid, mid)[8].real(), 49.0 / 4.0, 1e-12);
    for (int iy = 0; iy < 9; ++iy)
        for (int ix = 0; ix < 9; ++ix)
            EXPECT_LE(g.at(ix, iy)[8].real(), 49.0 / 4.0 + 1e-12);
    const auto cs = neutron_cross_section(g);
    EXPECT_NEAR(cs[g.index_of(mid, mid)], 1.0, 1e-12);
}

TEST(StructureFactor, MatchesBruteForceDoubleLoop) {
    std::mt19937_64 rng(43);
    const auto lat = build_triangular(1, Boundary::OBC);
    const auto psi = oracle::random_state(128, rng);
    const auto g = structure_factor(psi, lat, 8);
    for (int iy : {0, 3, 7})
        for (int ix : {1, 4, 6}) {
            const double qx = kPi * g.qx(ix), qy = kPi * g.qy(iy);
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) {
                    cplx ref = 0.0;
                    for (int r = 0; r < 7; ++r)
                        for (int rp = 0; rp < 7; ++rp) {
                            const double dx = lat.positions[rp][0] - lat.positions[r][0];
                            const double dy = lat.positions[rp][1] - lat.positions[r][1];
                            const DenseMatrix ab = oracle::spin(7, r, a) * oracle::spin(7, rp, b);
                            const DenseMatrix ba = oracle::spin(7, rp, b) * oracle::spin(7, r, a);
                            const cplx c = 0.5 * psi.dot((ab + ba) * psi);
                            ref += std::polar(1.0, qx * dx + qy * dy) * c;
                        }
                    EXPECT_LT(std::abs(g.at(ix, iy)[3 * a + b] - ref), 1e-10);
                }
        }
}

TEST(StructureFactor, GridInvariants) {
    std::mt19937_64 rng(47);
    const auto lat = build_triangular(1, Boundary::PBC);
    const auto psi = oracle::random_state(128, rng);
    auto g = structure_factor(psi, lat, 11);
    const int m = g.resolution;
    for (int iy = 0; iy < m; ++iy)
        for (int ix = 0; ix < m; ++ix) {
            const auto& s = g.at(ix, iy);
            const auto& sm = g.at(m - 1 - ix, m - 1 - iy);  // -q
            for (int a = 0; a < 3; ++a) {
                EXPECT_NEAR(s[4 * a].imag(), 0.0, 1e-9);
                EXPECT_GE(s[4 * a].real(), -1e-9);
            }
            for (int k = 0; k < 9; ++k)
                EXPECT_LT(std::abs(sm[k] - std::conj(s[k])), 1e-9);
        }
    const auto cs = neutron_cross_section(g);
    for (double v : cs) {
        EXPECT_GE(v, -1e-9);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
    EXPECT_THROW(structure_factor(psi, lat, 7), ContractError);
}

TEST(StructureFactor, CsvLayout) {
    auto g = structure_factor(all_up_state(7), build_triangular(1, Boundary::OBC), 8);
    neutron_cross_section(g);
    std::ostringstream os;
    write_structure_factor_csv(os, g);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header.rfind("qx_over_pi,qy_over_pi,Re(S_xx)", 0), 0u);
    int rows = 0;
    for (std::string line; std::getline(is, line);)
        ++rows;
    EXPECT_EQ(rows, 64);
}

TEST(Entropy, ProductAndBell) {
    const auto lat = build_triangular(1, Boundary::OBC);
    EXPECT_NEAR(entanglement_entropy_density(all_up_state(7), {0, 3}), 0.0, 1e-14);
    EXPECT_NEAR(entanglement_entropy_density(bell_pair(), {0}), kLn2, 1e-14);
    EXPECT_NEAR(entanglement_entropy_density(bell_pair(), {1}), kLn2, 1e-14);
}

TEST(Entropy, ReducedDensityMatrixProperties) {
    std::mt19937_64 rng(53);
    const auto psi = oracle::random_state(256, rng);
    for (const std::vector<int>& a : {std::vector<int>{0}, {2, 5}, {7, 1, 3}, {0, 1, 2, 3, 4, 5, 6}}) {
        const DenseMatrix rho = reduced_density_matrix(psi, a);
        EXPECT_NEAR(std::abs(rho.trace() - 1.0), 0.0, 1e-10);
        EXPECT_LT((rho - rho.adjoint()).norm(), 1e-12);
        Eigen::SelfAdjointEigenSolver<DenseMatrix> es(rho);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(Entropy, ComplementaryPartitionsAgree) {
    std::mt19937_64 rng(59);
    const auto psi = oracle::random_state(256, rng);
    const std::vector<int> a{1, 4, 6};
    const std::vector<int> b{0, 2, 3, 5, 7};
    EXPECT_NEAR(entanglement_entropy_density(psi, a) * 3, entanglement_entropy_density(psi, b) * 5, 1e-8);
}

TEST(Entropy, ReducedStateMatchesPartialTraceOracle) {
    std::mt19937_64 rng(61);
    const auto psi = oracle::random_state(16, rng);
    const DenseMatrix rho = reduced_density_matrix(psi, {1});
    // <S^a_1> from rho_A against the full-space expectation
    for (int a = 0; a < 3; ++a) {
        const cplx from_rho = (rho * 0.5 * oracle::pauli(a)).trace();
        EXPECT_NEAR(from_rho.real(), psi.dot(oracle::spin(4, 1, a) * psi).real(), 1e-13);
    }
}

TEST(Entropy, Errors) {
    EXPECT_THROW(entanglement_entropy_density(all_up_state(3), {}), ContractError);
    EXPECT_THROW(entanglement_entropy_density(all_up_state(3), {0, 1, 2}), ContractError);
    EXPECT_THROW(entanglement_entropy_density(all_up_state(3), {0, 0}), ContractError);
}

TEST(EnergyDensity, SumRuleOnRandomStates) {
    std::mt19937_64 rng(67);
    for (auto mode : {AnisotropyMode::Onsite, AnisotropyMode::Bond}) {
        const auto lat = build_triangular(1, Boundary::PBC);
        CouplingParams p;
        p.J = 0.4;
        p.B = {0.1, -0.3, 0.6};
        p.K = 0.2;
        p.anisotropy = mode;
        const auto h = build_hamiltonian(lat, p);
        for (int t = 0; t < 3; ++t) {
            const auto psi = oracle::random_state(128, rng);
            const auto e = onsite_energy_density(psi, lat, p);
            EXPECT_NEAR(std::accumulate(e.begin(), e.end(), 0.0), expectation(h, psi), 1e-9);
        }
    }
}

TEST(EnergyDensity, FlatForPolarizedPbcState) {
    const auto lat = build_triangular(2, Boundary::PBC);
    CouplingParams p;
    p.J = 0.5;
    p.B = {0.0, 0.0, 2.0};
    const auto e = onsite_energy_density(all_up_state(19), lat, p);
    for (double v : e)
        EXPECT_NEAR(v, e[0], 1e-12);
    // J/4 per bond, three bonds per site, minus B/2
    EXPECT_NEAR(e[0], 3 * 0.5 / 4 - 1.0, 1e-12);
}

TEST(SkyrmionRadius, Examples) {
    const auto lat = build_triangular(1, Boundary::OBC);
    EXPECT_FALSE(skyrmion_radius(onsite_spin_expectation(all_up_state(7), lat), lat).has_value());
    std::vector<Vec3> v(7, Vec3{0, 0, 0.5});
    v[lat.center_index] = {0, 0, -0.5};
    const auto r = skyrmion_radius(field_of(v), lat);
    ASSERT_TRUE(r.has_value());
    EXPECT_NEAR(*r, 0.5, 1e-12);
    EXPECT_THROW(skyrmion_radius(field_of(v), build_triangular(1, Boundary::PBC)), ContractError);
}

TEST(SpinFieldCsv, Layout) {
    const auto lat = build_triangular(1, Boundary::OBC);
    std::ostringstream os;
    write_spin_field_csv(os, onsite_spin_expectation(all_up_state(7), lat), lat);
    EXPECT_EQ(os.str().rfind("site,x,y,Sx,Sy,Sz\n0,", 0), 0u);
}
