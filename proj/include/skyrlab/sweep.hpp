#pragma once

#include "skyrlab/core.hpp"
#include "skyrlab/dynamics.hpp"
#include "skyrlab/eigensolver.hpp"
#include "skyrlab/lattice.hpp"
#include "skyrlab/observables.hpp"
#include "skyrlab/operators.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace skyrlab {

enum class Phase { Helical, Skyrmion, FullyPolarized, Unclassified };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::Helical: return "Helical";
        case Phase::Skyrmion: return "Skyrmion";
        case Phase::FullyPolarized: return "FullyPolarized";
        case Phase::Unclassified: return "Unclassified";
    }
    return "Unclassified";
}

inline Phase parse_phase(const std::string& s) {
    if (s == "Helical") return Phase::Helical;
    if (s == "Skyrmion") return Phase::Skyrmion;
    if (s == "FullyPolarized") return Phase::FullyPolarized;
    if (s == "Unclassified") return Phase::Unclassified;
    throw ContractError("unknown phase '" + s + "'");
}

struct PhaseThresholds {
    double eps_fp = 0.05;
    double eps_sk = 0.1;
    double topo_lo = 0.8;
    double topo_hi = 1.2;
};

struct PhasePoint {
    double J = 0.0;
    double B = 0.0;
    double K = 0.0;
    Boundary boundary = Boundary::PBC;
    double Q_chirality = 0.0;
    double Q_topological = 0.0;
    double mean_Sz = 0.0;
    double central_Sz = 0.0;
    double entropy_density = 0.0;
    double ground_energy = 0.0;
    int degeneracy = 1;
    double gap = 0.0;  // distance from the ground manifold to the next level found
    Phase phase = Phase::Unclassified;
    std::string error;

    bool ok() const { return error.empty(); }
};

// Point-local rule. below_plateau marks PBC points at fields below the row's
// chirality plateau.
inline Phase classify_phase(const PhasePoint& p, const PhaseThresholds& th = {}, bool below_plateau = false) {
    if (!p.ok()) return Phase::Unclassified;
    if (p.boundary == Boundary::OBC) {
        if (p.Q_topological >= th.topo_lo && p.Q_topological <= th.topo_hi) return Phase::Skyrmion;
        if (p.mean_Sz > 0.5 - th.eps_fp) return Phase::FullyPolarized;
        return Phase::Unclassified;
    }
    if (p.mean_Sz > 0.5 - th.eps_fp && std::abs(p.Q_chirality) < th.eps_fp) return Phase::FullyPolarized;
    if (std::abs(p.Q_chirality - 0.5) < th.eps_sk) return Phase::Skyrmion;
    if (p.Q_chirality < 0.5 - th.eps_sk && (p.degeneracy > 1 || below_plateau)) return Phase::Helical;
    return Phase::Unclassified;
}

struct SweepOptions {
    int k = 7;
    double tol = 1e-8;
    double tol_degeneracy = 1e-6;
    std::uint64_t seed = 0;
    int workers = 1;
    double D = 1.0;
    AnisotropyMode anisotropy = AnisotropyMode::Onsite;
    PartitionPreset partition = PartitionPreset::Half;
    ChargeMode charge_mode = ChargeMode::Path;
    std::vector<int> charge_path;  // empty: lattice default
    PhaseThresholds thresholds;
    std::string checkpoint_path;  // JSON lines, one per finished point
    std::function<void(std::size_t done, std::size_t total)> progress;
};

struct PhaseDiagram {
    std::vector<double> J_grid;
    std::vector<double> B_grid;
    std::vector<PhasePoint> points;  // row-major: J outer, B inner

    const PhasePoint& at(std::size_t iJ, std::size_t iB) const { return points[iJ * B_grid.size() + iB]; }
};

// Ground-state observables. Linear observables use the equal mixture of the
// degenerate ground manifold (independent of the basis the solver returns);
// the entropy is the mean over the returned manifold vectors.
inline PhasePoint compute_phase_point(const SpinLattice& lat, double J, double B, double K, const SweepOptions& opt,
                                      std::uint64_t seed) {
    PhasePoint p;
    p.J = J;
    p.B = B;
    p.K = K;
    p.boundary = lat.boundary;
    CouplingParams c;
    c.J = J;
    c.D = opt.D;
    c.B = {0.0, 0.0, B};
    c.K = K;
    c.anisotropy = opt.anisotropy;
    const SparseOperator h = build_hamiltonian(lat, c);
    LanczosOptions lo;
    lo.tol_degeneracy = opt.tol_degeneracy;
    const int k = std::min<int>(opt.k, static_cast<int>(h.dim()));
    const EigenResult eig = lowest_eigenpairs(h, k, opt.tol, seed, lo);
    p.ground_energy = eig.eigenvalues[0];
    p.degeneracy = eig.ground_degeneracy();
    p.gap = static_cast<std::size_t>(p.degeneracy) < eig.size()
                ? eig.eigenvalues[p.degeneracy] - eig.eigenvalues[0]
                : std::numeric_limits<double>::quiet_NaN();
    const std::vector<int> part = partition_sites(lat, opt.partition);
    SpinField mean_field;
    mean_field.spins.assign(lat.n_sites, Vec3{0.0, 0.0, 0.0});
    double q = 0.0, s = 0.0;
    for (int d = 0; d < p.degeneracy; ++d) {
        const StateVector& v = eig.eigenvectors[d];
        const SpinField f = onsite_spin_expectation(v, lat);
        for (int i = 0; i < lat.n_sites; ++i)
            for (int a = 0; a < 3; ++a)
                mean_field.spins[i][a] += f[i][a] / p.degeneracy;
        if (!lat.triangles.empty()) q += scalar_chirality(v, lat) / p.degeneracy;
        if (lat.n_sites > 1) s += entanglement_entropy_density(v, part) / p.degeneracy;
    }
    p.Q_chirality = q;
    p.entropy_density = s;
    p.mean_Sz = mean_field.mean_sz();
    p.central_Sz = mean_field[lat.center_index][2];
    const std::vector<int> path = opt.charge_path.empty() ? default_charge_path(lat) : opt.charge_path;
    try {
        p.Q_topological = path.size() >= 2 ? topological_charge(mean_field, path, opt.charge_mode) : 0.0;
    } catch (const DegenerateInputError&) {
        p.Q_topological = std::numeric_limits<double>::quiet_NaN();
    }
    p.phase = classify_phase(p, opt.thresholds);
    return p;
}

inline nlohmann::json to_json(const PhasePoint& p) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        return nullptr;
    };
    return {{"J", p.J},
            {"B", p.B},
            {"K", p.K},
            {"boundary", to_string(p.boundary)},
            {"Q_chir", num(p.Q_chirality)},
            {"Q_topo", num(p.Q_topological)},
            {"mean_Sz", num(p.mean_Sz)},
            {"central_Sz", num(p.central_Sz)},
            {"S_ent", num(p.entropy_density)},
            {"E0", num(p.ground_energy)},
            {"degeneracy", p.degeneracy},
            {"gap", num(p.gap)},
            {"phase", to_string(p.phase)},
            {"error", p.error}};
}

inline PhasePoint phase_point_from_json(const nlohmann::json& j) {
    auto num = [&j](const char* key) {
        const auto& v = j.at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    PhasePoint p;
    p.J = j.at("J").get<double>();
    p.B = j.at("B").get<double>();
    p.K = j.at("K").get<double>();
    p.boundary = parse_boundary(j.at("boundary").get<std::string>());
    p.Q_chirality = num("Q_chir");
    p.Q_topological = num("Q_topo");
    p.mean_Sz = num("mean_Sz");
    p.central_Sz = num("central_Sz");
    p.entropy_density = num("S_ent");
    p.ground_energy = num("E0");
    p.degeneracy = j.at("degeneracy").get<int>();
    p.gap = num("gap");
    p.phase = parse_phase(j.at("phase").get<std::string>());
    p.error = j.value("error", std::string{});
    return p;
}

// Row context: PBC points below the first Skyrmion-classified field of their
// J row and with Q under the plateau band are Helical.
inline void apply_row_classification(PhaseDiagram& d, const PhaseThresholds& th) {
    const std::size_t nb = d.B_grid.size();
    for (std::size_t iJ = 0; iJ < d.J_grid.size(); ++iJ) {
        std::optional<double> plateau;
        for (std::size_t iB = 0; iB < nb; ++iB) {
            auto& p = d.points[iJ * nb + iB];
            p.phase = classify_phase(p, th);
            if (!plateau && p.phase == Phase::Skyrmion && p.boundary == Boundary::PBC) plateau = p.B;
        }
        if (!plateau) continue;
        for (std::size_t iB = 0; iB < nb; ++iB) {
            auto& p = d.points[iJ * nb + iB];
            if (p.B < *plateau) p.phase = classify_phase(p, th, true);
        }
    }
}

inline std::vector<double> linspace(double lo, double hi, int n) {
    if (n < 1) throw ContractError("linspace: need at least one point");
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i)
        v[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return v;
}

inline std::vector<double> parse_grid(const nlohmann::json& j) {
    if (j.is_array()) return j.get<std::vector<double>>();
    return linspace(j.at("min").get<double>(), j.at("max").get<double>(), j.at("n").get<int>());
}

// One eigensolve per (J, B) point. Points are distributed over `workers`
// threads but placed by grid index; each point's seed depends only on its
// index, so results do not depend on the worker count. Finished points are
// appended to the checkpoint file and skipped when the sweep is resumed.
inline PhaseDiagram run_phase_diagram(const SpinLattice& lat, const std::vector<double>& J_grid,
                                      const std::vector<double>& B_grid, double K, const SweepOptions& opt = {}) {
    if (J_grid.empty() || B_grid.empty()) throw ContractError("run_phase_diagram: grids must be nonempty");
    if (!std::is_sorted(J_grid.begin(), J_grid.end()) || !std::is_sorted(B_grid.begin(), B_grid.end()))
        throw ContractError("run_phase_diagram: grids must be sorted");
    PhaseDiagram d;
    d.J_grid = J_grid;
    d.B_grid = B_grid;
    const std::size_t total = J_grid.size() * B_grid.size();
    d.points.resize(total);
    std::vector<char> have(total, 0);

    if (!opt.checkpoint_path.empty() && std::filesystem::exists(opt.checkpoint_path)) {
        std::ifstream in(opt.checkpoint_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                continue;  // torn final line from an interrupted run
            }
            const std::size_t idx = j.at("index").get<std::size_t>();
            if (idx >= total) continue;
            PhasePoint p = phase_point_from_json(j);
            if (p.J != J_grid[idx / B_grid.size()] || p.B != B_grid[idx % B_grid.size()] || p.K != K ||
                p.boundary != lat.boundary)
                throw ContractError("run_phase_diagram: checkpoint does not match this grid");
            d.points[idx] = p;
            have[idx] = 1;
        }
    }

    std::mutex mu;
    std::ofstream ck;
    if (!opt.checkpoint_path.empty()) ck.open(opt.checkpoint_path, std::ios::app);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{static_cast<std::size_t>(std::count(have.begin(), have.end(), 1))};

    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= total) return;
            if (have[idx]) continue;
            const double J = J_grid[idx / B_grid.size()];
            const double B = B_grid[idx % B_grid.size()];
            PhasePoint p;
            try {
                p = compute_phase_point(lat, J, B, K, opt, opt.seed + idx);
            } catch (const std::exception& e) {
                p = PhasePoint{};
                p.J = J;
                p.B = B;
                p.K = K;
                p.boundary = lat.boundary;
                p.error = e.what();
                constexpr double nan = std::numeric_limits<double>::quiet_NaN();
                p.Q_chirality = p.Q_topological = p.mean_Sz = p.central_Sz = nan;
                p.entropy_density = p.ground_energy = p.gap = nan;
                p.degeneracy = 0;
            }
            d.points[idx] = p;
            const std::size_t finished = ++done;
            std::lock_guard<std::mutex> lock(mu);
            if (ck.is_open()) {
                nlohmann::json j = to_json(p);
                j["index"] = idx;
                ck << j.dump() << '\n';
                ck.flush();
            }
            if (opt.progress) opt.progress(finished, total);
        }
    };
    const int n_workers = std::max(1, opt.workers);
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    apply_row_classification(d, opt.thresholds);
    return d;
}

inline void write_phase_diagram_csv(std::ostream& os, const PhaseDiagram& d) {
    os << "J,B,K,boundary,Q_chir,Q_topo,mean_Sz,central_Sz,S_ent,E0,degeneracy,phase\n";
    os.precision(12);
    for (const auto& p : d.points)
        os << p.J << ',' << p.B << ',' << p.K << ',' << to_string(p.boundary) << ',' << p.Q_chirality << ','
           << p.Q_topological << ',' << p.mean_Sz << ',' << p.central_Sz << ',' << p.entropy_density << ','
           << p.ground_energy << ',' << p.degeneracy << ',' << to_string(p.phase) << '\n';
}

// ---------------------------------------------------------------------------
// DMI comparative series

enum class SeriesTask { Static, Dynamics };

struct DmiDynamicsOptions {
    Vec3 drive_field{100.0, 0.0, 0.0};  // precessional X field
    double periods = 20.0;
    int steps_per_period = 64;
    int fit_periods = 10;  // periods used for the decay and entropy fits
};

struct DmiSeriesPoint {
    double D = 0.0;
    double ground_energy = 0.0;
    std::optional<double> radius;
    double Q_topological = 0.0;
    double central_Sz = 0.0;
    // dynamics only
    double sz_decay_per_period = std::numeric_limits<double>::quiet_NaN();
    double entropy_growth_rate = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> envelope;  // per-period max |<S_z>| of the central spin
    TrajectoryRecord trajectory;
    std::string error;
};

namespace detail {

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = std::min(x.size(), y.size());
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace detail

// Repeats a static solve (radius, charge, E0) or a precessional-drive run
// (Sz envelope decay per period, initial entropy growth rate) for each D with
// J, B, K fixed in absolute units.
inline std::vector<DmiSeriesPoint> dmi_series(const SpinLattice& lat, const CouplingParams& base,
                                              const std::vector<double>& D_values, SeriesTask task,
                                              const DmiDynamicsOptions& dyn = {}, std::uint64_t seed = 0,
                                              double tol = 1e-8) {
    for (std::size_t i = 0; i < D_values.size(); ++i) {
        if (!(D_values[i] > 0.0)) throw ContractError("dmi_series: D values must be positive");
        if (i > 0 && !(D_values[i] > D_values[i - 1])) throw ContractError("dmi_series: D values must ascend");
    }
    std::vector<DmiSeriesPoint> out;
    for (double D : D_values) {
        DmiSeriesPoint r;
        r.D = D;
        try {
            CouplingParams p = base;
            p.D = D;
            const SparseOperator h = build_hamiltonian(lat, p);
            const EigenResult eig = lowest_eigenpairs(h, 1, tol, seed);
            const StateVector& g = eig.eigenvectors[0];
            r.ground_energy = eig.eigenvalues[0];
            const SpinField f = onsite_spin_expectation(g, lat);
            r.central_Sz = f[lat.center_index][2];
            if (lat.boundary == Boundary::OBC) r.radius = skyrmion_radius(f, lat);
            try {
                r.Q_topological = topological_charge(f, default_charge_path(lat));
            } catch (const DegenerateInputError&) {
                r.Q_topological = std::numeric_limits<double>::quiet_NaN();
            }
            if (task == SeriesTask::Dynamics) {
                const double bmag = norm(dyn.drive_field);
                if (!(bmag > 0.0)) throw ContractError("dmi_series: drive field must be nonzero");
                const double period = 2.0 * kPi / bmag;
                const double dt = period / dyn.steps_per_period;
                RecordOptions rec;
                rec.lattice = &lat;
                rec.entropy_sites = {lat.center_index};
                rec.energy = false;
                r.trajectory = evolve_schrodinger(h, DriveSpec::static_field(dyn.drive_field), g,
                                                  dyn.periods * period, dt, rec);
                const auto& tr = r.trajectory;
                const int n_periods = static_cast<int>(std::floor(dyn.periods + 1e-9));
                r.envelope.assign(n_periods, 0.0);
                for (std::size_t k = 0; k < tr.size(); ++k) {
                    const int per = std::min(n_periods - 1, static_cast<int>(tr.times[k] / period));
                    r.envelope[per] = std::max(r.envelope[per], std::abs(tr.central_spin[k][2]));
                }
                const int nf = std::min(dyn.fit_periods, n_periods);
                std::vector<double> x, y;
                for (int k = 0; k < nf; ++k) {
                    x.push_back(k);
                    y.push_back(std::log(std::max(r.envelope[k], 1e-300)));
                }
                r.sz_decay_per_period = 1.0 - std::exp(detail::fit_slope(x, y));
                std::vector<double> tx, sy;
                for (std::size_t k = 0; k < tr.size(); ++k)
                    if (tr.times[k] <= nf * period + 1e-12) {
                        tx.push_back(tr.times[k]);
                        sy.push_back(tr.entropy[k]);
                    }
                r.entropy_growth_rate = detail::fit_slope(tx, sy);
            }
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace skyrlab
