#include "oracle.hpp"
#include "skyrlab/sweep.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace skyrlab;

namespace {

PhasePoint synthetic(Boundary bc, double q_chir, double q_topo, double mean_sz, int deg = 1) {
    PhasePoint p;
    p.boundary = bc;
    p.Q_chirality = q_chir;
    p.Q_topological = q_topo;
    p.mean_Sz = mean_sz;
    p.degeneracy = deg;
    return p;
}

std::string dump(const PhaseDiagram& d) {
    std::ostringstream os;
    write_phase_diagram_csv(os, d);
    return os.str();
}

}  // namespace

TEST(Classify, PbcRules) {
    EXPECT_EQ(classify_phase(synthetic(Boundary::PBC, 0.01, 0, 0.48)), Phase::FullyPolarized);
    EXPECT_EQ(classify_phase(synthetic(Boundary::PBC, 0.52, 0, 0.2)), Phase::Skyrmion);
    EXPECT_EQ(classify_phase(synthetic(Boundary::PBC, 0.2, 0, 0.1, 6)), Phase::Helical);
    EXPECT_EQ(classify_phase(synthetic(Boundary::PBC, 0.2, 0, 0.1, 1)), Phase::Unclassified);
    EXPECT_EQ(classify_phase(synthetic(Boundary::PBC, 0.2, 0, 0.1, 1), {}, true), Phase::Helical);
    EXPECT_EQ(classify_phase(synthetic(Boundary::PBC, 0.7, 0, 0.1, 1)), Phase::Unclassified);
    auto bad = synthetic(Boundary::PBC, 0.5, 0, 0.2);
    bad.error = "no convergence";
    EXPECT_EQ(classify_phase(bad), Phase::Unclassified);
}

TEST(Classify, ObcRules) {
    EXPECT_EQ(classify_phase(synthetic(Boundary::OBC, 0.0, 1.1, 0.1)), Phase::Skyrmion);
    EXPECT_EQ(classify_phase(synthetic(Boundary::OBC, 0.0, 0.1, 0.47)), Phase::FullyPolarized);
    EXPECT_EQ(classify_phase(synthetic(Boundary::OBC, 0.0, 0.5, 0.2)), Phase::Unclassified);
    PhaseThresholds th;
    th.topo_lo = 0.4;
    EXPECT_EQ(classify_phase(synthetic(Boundary::OBC, 0.0, 0.5, 0.2), th), Phase::Skyrmion);
}

TEST(Classify, RowContextMarksFieldsBelowThePlateau) {
    PhaseDiagram d;
    d.J_grid = {0.5};
    d.B_grid = {0.1, 0.2, 0.3, 0.4};
    d.points = {synthetic(Boundary::PBC, 0.1, 0, 0.05), synthetic(Boundary::PBC, 0.45, 0, 0.1),
                synthetic(Boundary::PBC, 0.5, 0, 0.2), synthetic(Boundary::PBC, 0.0, 0, 0.49)};
    for (std::size_t i = 0; i < 4; ++i)
        d.points[i].B = d.B_grid[i];
    apply_row_classification(d, {});
    EXPECT_EQ(d.points[0].phase, Phase::Helical);
    EXPECT_EQ(d.points[1].phase, Phase::Skyrmion);
    EXPECT_EQ(d.points[2].phase, Phase::Skyrmion);
    EXPECT_EQ(d.points[3].phase, Phase::FullyPolarized);
}

TEST(Classify, PhaseNamesRoundTrip) {
    for (auto p : {Phase::Helical, Phase::Skyrmion, Phase::FullyPolarized, Phase::Unclassified})
        EXPECT_EQ(parse_phase(to_string(p)), p);
    EXPECT_THROW(parse_phase("ferro"), ContractError);
}

TEST(PhasePoint, HighFieldIsFullyPolarized) {
    const auto lat = build_triangular(1, Boundary::PBC);
    SweepOptions opt;
    const auto p = compute_phase_point(lat, 0.5, 6.0, 0.0, opt, 0);
    EXPECT_TRUE(p.ok());
    EXPECT_EQ(p.phase, Phase::FullyPolarized);
    EXPECT_GT(p.mean_Sz, 0.45);
    EXPECT_LT(std::abs(p.Q_chirality), 0.05);
    EXPECT_EQ(p.degeneracy, 1);
    EXPECT_GT(p.gap, 0.0);
}

TEST(PhasePoint, MatchesDenseOracle) {
    const auto lat = build_triangular(1, Boundary::OBC);
    SweepOptions opt;
    opt.k = 3;
    const auto p = compute_phase_point(lat, 0.3, 0.4, 0.1, opt, 0);
    CouplingParams c;
    c.J = 0.3;
    c.B = {0.0, 0.0, 0.4};
    c.K = 0.1;
    const DenseMatrix h = oracle::hamiltonian(lat, c);
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(h);
    EXPECT_NEAR(p.ground_energy, es.eigenvalues()(0), 1e-9);
    const StateVector g = es.eigenvectors().col(0);
    double sz = 0.0;
    for (int i = 0; i < 7; ++i)
        sz += g.dot(oracle::spin(7, i, 2) * g).real() / 7;
    EXPECT_NEAR(p.mean_Sz, sz, 1e-8);
    EXPECT_NEAR(p.central_Sz, g.dot(oracle::spin(7, lat.center_index, 2) * g).real(), 1e-8);
}

TEST(PhasePoint, VariationalBound) {
    const auto lat = build_triangular(1, Boundary::PBC);
    SweepOptions opt;
    const auto p = compute_phase_point(lat, 0.5, 0.4, 0.0, opt, 0);
    CouplingParams c;
    c.J = 0.5;
    c.B = {0.0, 0.0, 0.4};
    const auto h = build_hamiltonian(lat, c);
    EXPECT_LE(p.ground_energy, expectation(h, all_up_state(7)) + 1e-12);
    std::mt19937_64 rng(7);
    for (int t = 0; t < 3; ++t)
        EXPECT_LE(p.ground_energy, expectation(h, oracle::random_state(h.dim(), rng)) + 1e-12);
}

TEST(PhasePoint, JsonRoundTrip) {
    auto p = synthetic(Boundary::OBC, 0.3, std::numeric_limits<double>::quiet_NaN(), 0.2, 2);
    p.J = 0.1;
    p.B = 0.2;
    p.phase = Phase::Helical;
    const auto q = phase_point_from_json(nlohmann::json::parse(to_json(p).dump()));
    EXPECT_EQ(q.J, p.J);
    EXPECT_EQ(q.boundary, Boundary::OBC);
    EXPECT_TRUE(std::isnan(q.Q_topological));
    EXPECT_EQ(q.degeneracy, 2);
    EXPECT_EQ(q.phase, Phase::Helical);
}

TEST(Grid, LinspaceAndParse) {
    EXPECT_EQ(linspace(0.0, 1.0, 3), (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(linspace(2.0, 3.0, 1), std::vector<double>{2.0});
    EXPECT_THROW(linspace(0.0, 1.0, 0), ContractError);
    EXPECT_EQ(parse_grid(nlohmann::json::parse("[0.1, 0.2]")), (std::vector<double>{0.1, 0.2}));
    EXPECT_EQ(parse_grid(nlohmann::json::parse(R"({"min": 0, "max": 2, "n": 5})")).size(), 5u);
}

TEST(Sweep, ResultIndependentOfWorkerCount) {
    const auto lat = build_triangular(1, Boundary::PBC);
    const std::vector<double> Jg = {0.2, 0.5}, Bg = {0.1, 0.8, 3.0};
    SweepOptions opt;
    opt.workers = 1;
    const auto a = run_phase_diagram(lat, Jg, Bg, 0.0, opt);
    opt.workers = 3;
    const auto b = run_phase_diagram(lat, Jg, Bg, 0.0, opt);
    EXPECT_EQ(dump(a), dump(b));
    EXPECT_EQ(a.at(1, 2).J, 0.5);
    EXPECT_EQ(a.at(1, 2).B, 3.0);
}

TEST(Sweep, ResumesFromCheckpoint) {
    const auto lat = build_triangular(1, Boundary::OBC);
    const std::vector<double> Jg = {0.1, 0.3}, Bg = {0.05, 0.5};
    const auto path = (std::filesystem::temp_directory_path() / "skyrlab_sweep_ck.jsonl").string();
    std::filesystem::remove(path);
    SweepOptions opt;
    opt.checkpoint_path = path;
    const auto full = run_phase_diagram(lat, Jg, Bg, 0.0, opt);

    // keep two finished lines plus a torn one, as after an interruption
    std::vector<std::string> lines;
    {
        std::ifstream in(path);
        for (std::string l; std::getline(in, l);)
            lines.push_back(l);
    }
    ASSERT_EQ(lines.size(), 4u);
    {
        std::ofstream out(path, std::ios::trunc);
        out << lines[0] << '\n' << lines[2] << '\n' << lines[1].substr(0, 20);
    }
    std::size_t computed = 0;
    opt.progress = [&](std::size_t, std::size_t) { ++computed; };
    const auto resumed = run_phase_diagram(lat, Jg, Bg, 0.0, opt);
    EXPECT_EQ(computed, 2u);
    EXPECT_EQ(dump(full), dump(resumed));

    EXPECT_THROW(run_phase_diagram(lat, {0.7, 0.9}, Bg, 0.0, opt), ContractError);
    std::filesystem::remove(path);
}

TEST(Sweep, RejectsBadGrids) {
    const auto lat = build_triangular(1, Boundary::PBC);
    EXPECT_THROW(run_phase_diagram(lat, {}, {0.1}, 0.0), ContractError);
    EXPECT_THROW(run_phase_diagram(lat, {0.5, 0.1}, {0.1}, 0.0), ContractError);
}

TEST(Sweep, CsvLayout) {
    PhaseDiagram d;
    d.J_grid = {0.1};
    d.B_grid = {0.2};
    d.points = {synthetic(Boundary::PBC, 0.0, 0.0, 0.5)};
    const auto s = dump(d);
    EXPECT_EQ(s.substr(0, s.find('\n')), "J,B,K,boundary,Q_chir,Q_topo,mean_Sz,central_Sz,S_ent,E0,degeneracy,phase");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
}

TEST(DmiSeries, EachPointIsIndependentOfTheOthers) {
    const auto lat = build_triangular(1, Boundary::OBC);
    CouplingParams base;
    base.J = 0.04;
    base.B = {0.0, 0.0, 0.01};
    base.K = 0.02;
    const auto all = dmi_series(lat, base, {0.5, 1.0, 2.0}, SeriesTask::Static);
    const auto one = dmi_series(lat, base, {1.0}, SeriesTask::Static);
    ASSERT_EQ(all.size(), 3u);
    EXPECT_TRUE(all[1].error.empty());
    EXPECT_NEAR(all[1].ground_energy, one[0].ground_energy, 1e-12);
    EXPECT_NEAR(all[1].central_Sz, one[0].central_Sz, 1e-9);
    EXPECT_NEAR(all[1].Q_topological, one[0].Q_topological, 1e-9);
    // a stronger DMI lowers the ground energy
    EXPECT_LT(all[2].ground_energy, all[0].ground_energy);
    EXPECT_THROW(dmi_series(lat, base, {1.0, 0.5}, SeriesTask::Static), ContractError);
    EXPECT_THROW(dmi_series(lat, base, {0.0}, SeriesTask::Static), ContractError);
}

TEST(DmiSeries, DynamicsProducesEnvelopeAndRates) {
    const auto lat = build_triangular(1, Boundary::OBC);
    CouplingParams base;
    base.J = 0.04;
    base.B = {0.0, 0.0, 0.01};
    DmiDynamicsOptions dyn;
    dyn.drive_field = {1.0, 0.0, 0.0};
    dyn.periods = 4;
    dyn.fit_periods = 4;
    dyn.steps_per_period = 48;
    const auto r = dmi_series(lat, base, {1.0}, SeriesTask::Dynamics, dyn);
    ASSERT_TRUE(r[0].error.empty()) << r[0].error;
    EXPECT_EQ(r[0].envelope.size(), 4u);
    EXPECT_TRUE(std::isfinite(r[0].sz_decay_per_period));
    EXPECT_TRUE(std::isfinite(r[0].entropy_growth_rate));
    EXPECT_FALSE(r[0].trajectory.entropy.empty());
    for (double e : r[0].envelope)
        EXPECT_LE(e, 0.5 + 1e-12);
}
