#pragma once

// Config-driven task runner behind the skyrlab command line.

#include "skyrlab/dynamics.hpp"
#include "skyrlab/eigensolver.hpp"
#include "skyrlab/io.hpp"
#include "skyrlab/lattice.hpp"
#include "skyrlab/observables.hpp"
#include "skyrlab/operators.hpp"
#include "skyrlab/sweep.hpp"
#include "skyrlab/twolevel.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace skyrlab::app {

enum ExitCode : int { kOk = 0, kFatal = 1, kConfigInvalid = 2, kNoConvergence = 3, kResourceRefused = 4 };

class ConfigError : public ContractError {
public:
    using ContractError::ContractError;
};

inline const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names = {"diagonalize", "sweep",  "evolve",    "gate",
                                                   "lindblad",    "readout", "dmi_series"};
    return names;
}

// JSON object with key bookkeeping: every key must be consumed or the block
// is rejected. Keys starting with '_' are annotations and ignored.
class Block {
public:
    Block(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) fail("", "must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return require<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        used_.insert(key);
        if (!has(key)) fail(key, "is required");
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(key, "has the wrong type");
        }
        return T{};
    }

    double positive(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key) && fallback) return *fallback;
        const double v = require<double>(key);
        if (!(v > 0.0) || !std::isfinite(v)) fail(key, "must be a positive number");
        return v;
    }

    Vec3 vec3(const std::string& key, Vec3 fallback) {
        if (!has(key)) return fallback;
        const auto v = require<std::vector<double>>(key);
        if (v.size() != 3) fail(key, "must be a list of three numbers");
        return {v[0], v[1], v[2]};
    }

    const nlohmann::json& raw(const std::string& key) {
        used_.insert(key);
        if (!has(key)) fail(key, "is required");
        return j_.at(key);
    }

    Block child(const std::string& key) {
        const auto& r = raw(key);
        return Block(r, where_.empty() ? key : where_ + "." + key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!used_.count(key) && (key.empty() || key[0] != '_')) fail(key, "is not a recognized key");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        std::string at = where_;
        if (!key.empty()) at += (at.empty() ? "" : ".") + key;
        throw ConfigError("config: " + (at.empty() ? std::string("<root>") : at) + " " + what);
    }

    const std::string& where() const { return where_; }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> used_;
};

struct LatticeConfig {
    std::string shape = "hexagon";
    int n_shells = 1;
    Boundary boundary = Boundary::OBC;
    int lx = 0, ly = 0;
};

struct OutputConfig {
    std::string directory = "out";
    std::set<std::string> formats{"csv", "json"};
};

struct RunConfig {
    std::string task;
    LatticeConfig lattice;
    CouplingParams params;
    std::uint64_t seed = 0;
    int workers = 1;
    bool dump_lattice = false;
    OutputConfig output;
    nlohmann::json task_block = nlohmann::json::object();
    std::string description;
};

// Command-line values that take precedence over the file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out;
    bool dump_lattice = false;
};

inline std::string canonical_task(std::string t) {
    for (auto& c : t)
        if (c == '-') c = '_';
    return t;
}

inline RunConfig parse_config(const nlohmann::json& j) {
    RunConfig c;
    Block root(j, "");
    c.task = canonical_task(root.require<std::string>("task"));
    if (std::find(task_names().begin(), task_names().end(), c.task) == task_names().end())
        root.fail("task", "must be one of diagonalize, sweep, evolve, gate, lindblad, readout, dmi_series");
    c.description = root.get<std::string>("description", "");
    c.seed = root.get<std::uint64_t>("seed", 0);
    c.workers = root.get<int>("workers", 1);
    if (c.workers < 1) root.fail("workers", "must be >= 1");

    if (root.has("lattice")) {
        Block lb = root.child("lattice");
        c.lattice.shape = lb.get<std::string>("shape", "hexagon");
        if (c.lattice.shape == "hexagon") {
            c.lattice.n_shells = lb.get<int>("n_shells", 1);
            if (c.lattice.n_shells < 0) lb.fail("n_shells", "must be >= 0");
            try {
                c.lattice.boundary = parse_boundary(lb.get<std::string>("boundary", "OBC"));
            } catch (const ContractError&) {
                lb.fail("boundary", "must be PBC or OBC");
            }
        } else if (c.lattice.shape == "parallelogram") {
            c.lattice.lx = lb.require<int>("lx");
            c.lattice.ly = lb.require<int>("ly");
            if (c.lattice.lx < 1 || c.lattice.ly < 1) lb.fail("lx", "and ly must be >= 1");
            if (lb.get<std::string>("boundary", "OBC") != "OBC") lb.fail("boundary", "must be OBC for parallelograms");
        } else {
            lb.fail("shape", "must be hexagon or parallelogram");
        }
        lb.finish();
    }

    if (root.has("params")) {
        Block pb = root.child("params");
        c.params.J = pb.get<double>("J", 0.0);
        c.params.D = pb.get<double>("D", 1.0);
        c.params.B = pb.vec3("B", {0.0, 0.0, 0.0});
        c.params.K = pb.get<double>("K", 0.0);
        try {
            c.params.anisotropy = parse_anisotropy_mode(pb.get<std::string>("anisotropy_mode", "onsite"));
        } catch (const ContractError&) {
            pb.fail("anisotropy_mode", "must be onsite or bond");
        }
        if (!(c.params.D >= 0.0)) pb.fail("D", "must be >= 0");
        pb.finish();
    }

    if (root.has("output")) {
        Block ob = root.child("output");
        c.output.directory = ob.get<std::string>("directory", "out");
        if (ob.has("formats")) {
            const auto f = ob.require<std::vector<std::string>>("formats");
            c.output.formats = {f.begin(), f.end()};
            for (const auto& s : c.output.formats)
                if (s != "csv" && s != "json" && s != "state") ob.fail("formats", "entries must be csv, json or state");
        }
        ob.finish();
    }

    // exactly one task block, matching the task
    int blocks = 0;
    for (const auto& t : task_names())
        if (j.contains(t)) {
            ++blocks;
            if (t != c.task) root.fail(t, "is a block for a different task than '" + c.task + "'");
        }
    if (blocks == 0 && c.task != "readout") root.fail(c.task, "block is required");
    if (j.contains(c.task)) c.task_block = root.raw(c.task);
    root.finish();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + path + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

inline SpinLattice build_lattice(const LatticeConfig& c) {
    const int n = c.shape == "hexagon" ? 1 + 3 * c.n_shells * (c.n_shells + 1) : c.lx * c.ly;
    if (n > 24) throw ResourceError("lattice with " + std::to_string(n) + " sites exceeds the 24-site limit");
    return c.shape == "hexagon" ? build_triangular(c.n_shells, c.boundary) : build_parallelogram(c.lx, c.ly);
}

class Output {
public:
    Output(const OutputConfig& c) : dir_(c.directory), formats_(c.formats) {
        std::filesystem::create_directories(dir_);
    }

    bool csv() const { return formats_.count("csv") > 0; }
    bool json() const { return formats_.count("json") > 0; }
    bool states() const { return formats_.count("state") > 0; }

    std::ofstream open(const std::string& name) {
        const auto path = dir_ / name;
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        written_.push_back(name);
        return os;
    }

    void write_json(const std::string& name, const nlohmann::json& j) {
        auto os = open(name);
        os << j.dump(2) << '\n';
    }

    void write_state(const std::string& name, const StateVector& psi) {
        skyrlab::write_state((dir_ / name).string(), psi);
        written_.push_back(name);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    const std::vector<std::string>& written() const { return written_; }

private:
    std::filesystem::path dir_;
    std::set<std::string> formats_;
    std::vector<std::string> written_;
};

struct Context {
    RunConfig cfg;
    SpinLattice lat;
    Output out;
    std::ostream& log;
};

inline nlohmann::json num(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

inline nlohmann::json num(const std::optional<double>& v) { return v ? num(*v) : nlohmann::json(nullptr); }

// ---------------------------------------------------------------------------
// shared helpers

inline EigenResult solve(const SparseOperator& h, int k, double tol, double tol_degeneracy, std::uint64_t seed,
                         const std::string& solver, LanczosOptions lo = {}) {
    lo.tol_degeneracy = tol_degeneracy;
    const int kk = std::min<int>(k, static_cast<int>(h.dim()));
    if (solver == "lanczos") return lanczos_lowest(h, kk, tol, seed, lo);
    if (solver == "dense") {
        EigenResult r = dense_spectrum(h, true, tol_degeneracy);
        r.eigenvalues.resize(kk);
        r.eigenvectors.resize(kk);
        r.residuals.resize(kk);
        r.degeneracy_groups = degeneracy_groups(r.eigenvalues, tol_degeneracy);
        return r;
    }
    return lowest_eigenpairs(h, kk, tol, seed, lo);
}

inline std::string read_solver(Block& b) {
    const auto s = b.get<std::string>("solver", "auto");
    if (s != "auto" && s != "dense" && s != "lanczos") b.fail("solver", "must be auto, dense or lanczos");
    return s;
}

inline Gate read_gate(Block& b, const std::string& key, const std::string& fallback) {
    try {
        return parse_gate(b.get<std::string>(key, fallback));
    } catch (const ContractError&) {
        b.fail(key, "must be X, Y, Z or H");
    }
}

inline std::vector<int> read_sites(Block& b, const std::string& key, const SpinLattice& lat,
                                   std::vector<int> fallback) {
    if (!b.has(key)) return fallback;
    const auto v = b.require<std::vector<int>>(key);
    for (int s : v)
        if (s < 0 || s >= lat.n_sites) b.fail(key, "references a site outside the lattice");
    return v;
}

inline ChargeMode read_charge_mode(Block& b) {
    try {
        return parse_charge_mode(b.get<std::string>("charge_mode", "path"));
    } catch (const ContractError&) {
        b.fail("charge_mode", "must be path or endpoints");
    }
}

inline PartitionPreset read_partition(Block& b, const std::string& fallback) {
    try {
        return parse_partition(b.get<std::string>("partition", fallback));
    } catch (const ContractError&) {
        b.fail("partition", "must be half or central");
    }
}

// Logical amplitudes (a, b) of the named basis state.
inline Qubit logical_state(const std::string& name) {
    const double r = 1.0 / std::sqrt(2.0);
    const cplx i{0.0, 1.0};
    if (name == "0") return {1.0, 0.0};
    if (name == "1") return {0.0, 1.0};
    if (name == "+") return {r, r};
    if (name == "-") return {r, -r};
    if (name == "+i") return {r, i * r};
    if (name == "-i") return {r, -i * r};
    throw ConfigError("config: unknown logical state '" + name + "' (use 0, 1, +, -, +i, -i)");
}

inline bool is_logical_state_name(const std::string& s) {
    return s == "0" || s == "1" || s == "+" || s == "-" || s == "+i" || s == "-i";
}

struct QubitPair {
    EigenResult eig;
    QubitSystem q;
};

inline QubitPair lattice_qubit(Context& ctx, Block& b, int k_default = 3) {
    const int k = b.get<int>("k", k_default);
    if (k < 2) b.fail("k", "must be >= 2 for a qubit");
    const double tol = b.positive("tol", 1e-9);
    const double tol_deg = b.positive("tol_degeneracy", 1e-6);
    const auto solver = read_solver(b);
    const auto h = build_hamiltonian(ctx.lat, ctx.cfg.params);
    QubitPair p;
    p.eig = solve(h, k, tol, tol_deg, ctx.cfg.seed, solver);
    p.q = project_two_level(p.eig, tol_deg, "lattice eigenpairs");
    return p;
}

inline double read_amplitude(Block& b, double omega0) {
    const bool abs = b.has("amplitude"), rel = b.has("amplitude_ratio");
    if (abs && rel) b.fail("amplitude", "and amplitude_ratio are mutually exclusive");
    if (rel) return b.positive("amplitude_ratio") * omega0;
    const double a = b.get<double>("amplitude", 0.05 * omega0);
    if (a == 0.0 || !std::isfinite(a)) b.fail("amplitude", "must be a nonzero number");
    return a;
}

inline double read_frequency(Block& b, double omega0) {
    if (!b.has("frequency")) return omega0;
    const auto& f = b.raw("frequency");
    if (f.is_string()) {
        if (f.get<std::string>() != "resonant") b.fail("frequency", "must be a number or \"resonant\"");
        return omega0;
    }
    return b.positive("frequency");
}

inline void write_trajectory(Context& ctx, const std::string& name, const TrajectoryRecord& r) {
    if (!ctx.out.csv()) return;
    auto os = ctx.out.open(name);
    write_trajectory_csv(os, r);
}

inline double rms_bloch_difference(const TrajectoryRecord& a, const TrajectoryRecord& b) {
    const std::size_t n = std::min(a.size(), b.size());
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) {
            const double d = a.bloch_logical[k][c] - b.bloch_logical[k][c];
            acc += d * d;
        }
    return std::sqrt(acc / n);
}

inline double max_of(const std::vector<double>& v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v)
        if (std::isfinite(x)) m = std::max(m, x);
    return std::isfinite(m) ? m : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// tasks

inline nlohmann::json run_diagonalize(Context& ctx) {
    Block b(ctx.cfg.task_block, "diagonalize");
    const int k = b.get<int>("k", 4);
    if (k < 1) b.fail("k", "must be >= 1");
    const double tol = b.positive("tol", 1e-9);
    const double tol_deg = b.positive("tol_degeneracy", 1e-6);
    const auto solver = read_solver(b);
    const auto part = partition_sites(ctx.lat, read_partition(b, "half"));
    const auto mode = read_charge_mode(b);
    const auto path = read_sites(b, "charge_path", ctx.lat, default_charge_path(ctx.lat));
    const int sf_res = b.get<int>("structure_factor_resolution", 0);
    if (sf_res != 0 && sf_res < 8) b.fail("structure_factor_resolution", "must be 0 or >= 8");
    const bool corr = b.get<bool>("correlations", false);
    const int n_fields = b.get<int>("fields", 1);
    LanczosOptions lo;
    lo.max_krylov = b.get<int>("max_krylov", lo.max_krylov);
    lo.max_restarts = b.get<int>("max_restarts", lo.max_restarts);
    if (lo.max_krylov < 2 || lo.max_restarts < 1) b.fail("max_krylov", "must be >= 2 and max_restarts >= 1");
    b.finish();

    const auto h = build_hamiltonian(ctx.lat, ctx.cfg.params);
    const EigenResult eig = solve(h, k, tol, tol_deg, ctx.cfg.seed, solver, lo);
    const int deg = eig.ground_degeneracy();

    if (ctx.out.csv()) {
        auto os = ctx.out.open("spectrum.csv");
        os << "index,energy,residual,group\n";
        os.precision(15);
        for (std::size_t g = 0; g < eig.degeneracy_groups.size(); ++g)
            for (int i : eig.degeneracy_groups[g])
                os << i << ',' << eig.eigenvalues[i] << ',' << eig.residuals[i] << ',' << g << '\n';
    }

    nlohmann::json states = nlohmann::json::array();
    for (std::size_t i = 0; i < eig.size(); ++i) {
        const StateVector& v = eig.eigenvectors[i];
        const SpinField f = onsite_spin_expectation(v, ctx.lat);
        nlohmann::json s;
        s["index"] = i;
        s["energy"] = eig.eigenvalues[i];
        s["mean_Sz"] = f.mean_sz();
        s["central_Sz"] = f[ctx.lat.center_index][2];
        s["Q_chir"] = ctx.lat.triangles.empty() ? nlohmann::json(nullptr) : num(scalar_chirality(v, ctx.lat));
        try {
            s["Q_topo"] = path.size() >= 2 ? num(topological_charge(f, path, mode)) : nlohmann::json(nullptr);
        } catch (const DegenerateInputError&) {
            s["Q_topo"] = nullptr;
        }
        s["S_ent"] = ctx.lat.n_sites > 1 ? num(entanglement_entropy_density(v, part)) : nlohmann::json(nullptr);
        s["radius"] = ctx.lat.boundary == Boundary::OBC ? num(skyrmion_radius(f, ctx.lat)) : nlohmann::json(nullptr);
        states.push_back(s);
        if (static_cast<int>(i) < n_fields && ctx.out.csv()) {
            auto os = ctx.out.open("state_" + std::to_string(i) + "_field.csv");
            write_spin_field_csv(os, f, ctx.lat);
            const auto e = onsite_energy_density(v, ctx.lat, ctx.cfg.params);
            auto es = ctx.out.open("state_" + std::to_string(i) + "_energy_density.csv");
            es << "site,x,y,energy\n";
            es.precision(12);
            for (int site = 0; site < ctx.lat.n_sites; ++site)
                es << site << ',' << ctx.lat.positions[site][0] << ',' << ctx.lat.positions[site][1] << ','
                   << e[site] << '\n';
        }
        if (static_cast<int>(i) < n_fields && ctx.out.states())
            ctx.out.write_state("state_" + std::to_string(i) + ".bin", v);
    }

    if (sf_res > 0 && ctx.out.csv()) {
        auto grid = structure_factor(eig.eigenvectors[0], ctx.lat, sf_res);
        grid.cross_section = neutron_cross_section(grid);
        auto os = ctx.out.open("structure_factor.csv");
        write_structure_factor_csv(os, grid);
    }
    if (corr && ctx.out.csv()) {
        const auto c = spin_correlations(eig.eigenvectors[0], ctx.lat.n_sites);
        auto os = ctx.out.open("correlations.csv");
        os << "i,j,xx,xy,xz,yx,yy,yz,zx,zy,zz\n";
        os.precision(12);
        for (int i = 0; i < ctx.lat.n_sites; ++i)
            for (int j = 0; j < ctx.lat.n_sites; ++j) {
                os << i << ',' << j;
                const Eigen::Matrix3d& m = c(i, j);
                for (int a = 0; a < 3; ++a)
                    for (int bb = 0; bb < 3; ++bb)
                        os << ',' << m(a, bb);
                os << '\n';
            }
    }

    nlohmann::json summary;
    summary["E0"] = eig.eigenvalues[0];
    summary["degeneracy"] = deg;
    summary["gap"] = static_cast<std::size_t>(deg) < eig.size()
                         ? num(eig.eigenvalues[deg] - eig.eigenvalues[0])
                         : nlohmann::json(nullptr);
    summary["Q"] = ctx.lat.boundary == Boundary::OBC ? states[0]["Q_topo"] : states[0]["Q_chir"];
    summary["mean_Sz"] = states[0]["mean_Sz"];
    summary["central_Sz"] = states[0]["central_Sz"];
    if (eig.size() >= 3)
        summary["anharmonicity"] =
            (eig.eigenvalues[1] - eig.eigenvalues[0]) - (eig.eigenvalues[2] - eig.eigenvalues[1]);
    if (ctx.out.json()) ctx.out.write_json("observables.json", {{"states", states}, {"summary", summary}});
    return summary;
}

inline nlohmann::json run_sweep(Context& ctx) {
    Block b(ctx.cfg.task_block, "sweep");
    std::vector<double> Jg, Bg;
    try {
        Jg = parse_grid(b.raw("J"));
        Bg = parse_grid(b.raw("B"));
    } catch (const std::exception&) {
        b.fail("J", "and B must be lists or {min, max, n} ranges");
    }
    SweepOptions opt;
    const double K = b.get<double>("K", ctx.cfg.params.K);
    opt.k = b.get<int>("k", 7);
    opt.tol = b.positive("tol", 1e-8);
    opt.tol_degeneracy = b.positive("tol_degeneracy", 1e-6);
    opt.seed = ctx.cfg.seed;
    opt.workers = ctx.cfg.workers;
    opt.D = ctx.cfg.params.D;
    opt.anisotropy = ctx.cfg.params.anisotropy;
    opt.partition = read_partition(b, "half");
    opt.charge_mode = read_charge_mode(b);
    opt.charge_path = read_sites(b, "charge_path", ctx.lat, {});
    if (b.has("thresholds")) {
        Block tb = b.child("thresholds");
        opt.thresholds.eps_fp = tb.get<double>("eps_fp", opt.thresholds.eps_fp);
        opt.thresholds.eps_sk = tb.get<double>("eps_sk", opt.thresholds.eps_sk);
        opt.thresholds.topo_lo = tb.get<double>("topo_lo", opt.thresholds.topo_lo);
        opt.thresholds.topo_hi = tb.get<double>("topo_hi", opt.thresholds.topo_hi);
        tb.finish();
    }
    if (b.get<bool>("checkpoint", true)) opt.checkpoint_path = ctx.out.path("sweep_checkpoint.jsonl");
    b.finish();
    auto& log = ctx.log;
    opt.progress = [&log](std::size_t done, std::size_t total) {
        log << "sweep: " << done << '/' << total << " points\n" << std::flush;
    };

    const auto d = run_phase_diagram(ctx.lat, Jg, Bg, K, opt);
    if (ctx.out.csv()) {
        auto os = ctx.out.open("phase_diagram.csv");
        write_phase_diagram_csv(os, d);
    }
    nlohmann::json counts = nlohmann::json::object();
    int errors = 0;
    for (const auto& p : d.points) {
        counts[to_string(p.phase)] = counts.value(to_string(p.phase), 0) + 1;
        if (!p.ok()) ++errors;
    }
    if (ctx.out.json()) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : d.points)
            pts.push_back(to_json(p));
        ctx.out.write_json("phase_diagram.json", {{"J", Jg}, {"B", Bg}, {"K", K}, {"points", pts}});
    }
    nlohmann::json summary{{"points", d.points.size()}, {"phases", counts}, {"failed_points", errors}};
    const auto& first = d.points.front();
    summary["E0"] = num(first.ground_energy);
    summary["gap"] = num(first.gap);
    summary["Q"] = num(ctx.lat.boundary == Boundary::OBC ? first.Q_topological : first.Q_chirality);
    if (errors > 0) {
        summary["exit_code"] = static_cast<int>(kNoConvergence);
        summary["error"] = first.ok() ? "some sweep points failed" : first.error;
    }
    return summary;
}

inline nlohmann::json run_evolve(Context& ctx) {
    Block b(ctx.cfg.task_block, "evolve");
    const auto h0 = build_hamiltonian(ctx.lat, ctx.cfg.params);
    const bool need_basis = b.get<bool>("logical_basis", true);
    const double tol = b.positive("tol", 1e-9);
    const double tol_deg = b.positive("tol_degeneracy", 1e-6);
    const auto solver = read_solver(b);
    const int k = b.get<int>("k", 2);
    if (k < 1) b.fail("k", "must be >= 1");

    const auto init = b.get<std::string>("initial_state", "ground");
    const bool init_needs_eig = init == "ground" || init == "excited" || is_logical_state_name(init);
    EigenResult eig;
    if (need_basis || init_needs_eig) eig = solve(h0, std::max(k, 2), tol, tol_deg, ctx.cfg.seed, solver);
    const double omega0 = eig.size() >= 2 ? eig.eigenvalues[1] - eig.eigenvalues[0] : 0.0;

    StateVector psi0;
    if (init == "ground") {
        psi0 = eig.eigenvectors[0];
    } else if (init == "excited") {
        psi0 = eig.eigenvectors[1];
    } else if (init == "all_up") {
        psi0 = all_up_state(ctx.lat.n_sites);
    } else if (is_logical_state_name(init)) {
        const Qubit c = logical_state(init);
        psi0 = c(0) * eig.eigenvectors[0] + c(1) * eig.eigenvectors[1];
    } else if (init.rfind("file:", 0) == 0) {
        psi0 = read_state(init.substr(5));
        if (psi0.size() != static_cast<Eigen::Index>(h0.dim())) b.fail("initial_state", "file has the wrong dimension");
    } else {
        b.fail("initial_state", "must be ground, excited, all_up, a logical state name or file:<path>");
    }

    Block db = b.child("drive");
    const auto kind = db.get<std::string>("kind", "none");
    DriveSpec drive;
    double period = 0.0;  // natural time unit of the drive
    if (kind == "none") {
        drive = DriveSpec::static_field({0.0, 0.0, 0.0});
    } else if (kind == "static") {
        const double gamma = db.get<double>("gamma", 1.0);
        drive = DriveSpec::static_field(db.vec3("field", {0.0, 0.0, 0.0}), gamma);
        const double bn = norm(drive.field_vector) * std::abs(gamma);
        if (bn > 0.0) period = 2.0 * kPi / bn;
    } else if (kind == "periodic") {
        const double gamma = db.get<double>("gamma", 1.0);
        if (db.has("gate")) {
            if (db.has("field")) db.fail("gate", "and field are mutually exclusive");
            drive = gate_field(read_gate(db, "gate", "X"), read_amplitude(db, omega0), read_frequency(db, omega0),
                               gamma);
        } else {
            drive = DriveSpec::periodic_field(db.vec3("field", {0.0, 0.0, 0.0}), read_frequency(db, omega0), gamma);
        }
        period = 2.0 * kPi / drive.frequency;
    } else if (kind == "rank2") {
        if (eig.size() < 2) db.fail("kind", "rank2 needs the logical basis");
        drive = DriveSpec::rank2_gate(read_gate(db, "gate", "X"), read_amplitude(db, omega0),
                                      read_frequency(db, omega0), eig.eigenvectors[0], eig.eigenvectors[1]);
        period = 2.0 * kPi / drive.frequency;
    } else {
        db.fail("kind", "must be none, static, periodic or rank2");
    }
    db.finish();

    double t_final = 0.0;
    if (b.has("t_final")) {
        if (b.has("periods")) b.fail("t_final", "and periods are mutually exclusive");
        t_final = b.positive("t_final");
    } else {
        if (!(period > 0.0)) b.fail("t_final", "is required when the drive has no period");
        t_final = b.positive("periods", 1.0) * period;
    }
    double dt = 0.0;
    if (b.has("dt")) {
        if (b.has("steps_per_period")) b.fail("dt", "and steps_per_period are mutually exclusive");
        dt = b.positive("dt");
    } else {
        if (!(period > 0.0)) b.fail("dt", "is required when the drive has no period");
        dt = period / b.get<int>("steps_per_period", 64);
    }

    RecordOptions rec;
    rec.lattice = &ctx.lat;
    rec.record_every = b.get<int>("record_every", 1);
    const auto ent = b.get<std::string>("entropy", "central");
    if (ent == "central")
        rec.entropy_sites = {ctx.lat.center_index};
    else if (ent == "half")
        rec.entropy_sites = partition_sites(ctx.lat, PartitionPreset::Half);
    else if (ent != "none")
        b.fail("entropy", "must be central, half or none");
    const auto charge =
        b.get<std::string>("charge", ctx.lat.boundary == Boundary::OBC ? "topological" : "chirality");
    if (charge == "chirality")
        rec.charge = ChargeRecord::Chirality;
    else if (charge == "topological")
        rec.charge = ChargeRecord::Topological;
    else if (charge != "none")
        b.fail("charge", "must be chirality, topological or none");
    rec.charge_mode = read_charge_mode(b);
    rec.charge_path = read_sites(b, "charge_path", ctx.lat, {});
    if (need_basis && eig.size() >= 2) {
        rec.basis1 = &eig.eigenvectors[0];
        rec.basis2 = &eig.eigenvectors[1];
    }
    rec.checkpoint_seconds = b.positive("checkpoint_seconds", 600.0);
    if (b.get<bool>("checkpoint", false)) rec.checkpoint_prefix = ctx.out.path("evolve_checkpoint");
    b.finish();

    StateVector final_state;
    const auto traj = evolve_schrodinger(h0, drive, psi0, t_final, dt, rec, &final_state);
    write_trajectory(ctx, "trajectory.csv", traj);
    if (ctx.out.states()) ctx.out.write_state("final_state.bin", final_state);

    nlohmann::json summary;
    summary["steps"] = static_cast<long>(std::ceil(t_final / dt - 1e-9));
    summary["t_final"] = t_final;
    summary["E0"] = eig.size() ? num(eig.eigenvalues[0]) : nlohmann::json(nullptr);
    summary["gap"] = eig.size() >= 2 ? num(omega0) : nlohmann::json(nullptr);
    summary["energy_final"] = traj.energy.empty() ? nlohmann::json(nullptr) : num(traj.energy.back());
    summary["entropy_max"] = num(max_of(traj.entropy));
    summary["Q"] = traj.charge.empty() ? nlohmann::json(nullptr) : num(traj.charge.back());
    summary["p2_max"] = num(max_of(traj.p2));
    summary["norm_final"] = num(traj.norm.back());
    return summary;
}

inline nlohmann::json run_gate(Context& ctx) {
    Block b(ctx.cfg.task_block, "gate");
    const QubitPair qp = lattice_qubit(ctx, b);
    const QubitSystem& q = qp.q;
    const Gate g = read_gate(b, "gate", "X");
    const double A = read_amplitude(b, q.omega0);
    const double w = read_frequency(b, q.omega0);
    const double t_final = b.positive("rabi_periods", 1.0) * rabi_period(A);
    const int spp = b.get<int>("steps_per_period", 64);
    const double dt = 2.0 * kPi / w / spp;
    const int every = b.get<int>("record_every", 4);
    const auto init = b.get<std::string>("initial_state", "0");
    const Qubit c0 = logical_state(init);
    std::vector<std::string> modes = b.get<std::vector<std::string>>("modes", {"two_level", "full_rank2"});
    for (const auto& m : modes)
        if (m != "two_level" && m != "full_rank2" && m != "full_field")
            b.fail("modes", "entries must be two_level, full_rank2 or full_field");
    b.finish();

    const auto& v1 = qp.eig.eigenvectors[0];
    const auto& v2 = qp.eig.eigenvectors[1];
    const TrajectoryRecord ref = evolve_two_level(q, g, A, w, c0, t_final, dt, every);
    nlohmann::json summary;
    summary["E0"] = q.E1;
    summary["gap"] = q.omega0;
    summary["anharmonicity"] = num(q.anharmonicity().value_or(std::numeric_limits<double>::quiet_NaN()));
    summary["amplitude"] = A;
    summary["frequency"] = w;
    summary["t_final"] = t_final;

    const auto h0 = build_hamiltonian(ctx.lat, ctx.cfg.params);
    const StateVector psi0 = c0(0) * v1 + c0(1) * v2;
    for (const auto& m : modes) {
        if (m == "two_level") {
            write_trajectory(ctx, "gate_two_level.csv", ref);
            summary["p2_max_two_level"] = max_of(ref.p2);
            continue;
        }
        RecordOptions rec;
        rec.lattice = &ctx.lat;
        rec.record_every = every;
        rec.entropy_sites = {ctx.lat.center_index};
        rec.charge = ctx.lat.boundary == Boundary::OBC ? ChargeRecord::Topological : ChargeRecord::Chirality;
        rec.basis1 = &v1;
        rec.basis2 = &v2;
        const DriveSpec drive = m == "full_rank2" ? DriveSpec::rank2_gate(g, A, w, v1, v2) : gate_field(g, A, w);
        const auto traj = evolve_schrodinger(h0, drive, psi0, t_final, dt, rec);
        write_trajectory(ctx, "gate_" + m + ".csv", traj);
        summary["p2_max_" + m] = num(max_of(traj.p2));
        summary["leakage_max_" + m] = num(max_of(traj.leakage));
        summary["rms_bloch_vs_two_level_" + m] = num(rms_bloch_difference(traj, ref));
        summary["entropy_max_" + m] = num(max_of(traj.entropy));
        if (!traj.charge.empty()) summary["Q"] = num(traj.charge.front());
    }
    return summary;
}

inline nlohmann::json run_lindblad(Context& ctx) {
    Block b(ctx.cfg.task_block, "lindblad");
    QubitSystem q;
    if (b.has("omega0")) {
        q.omega0 = b.positive("omega0");
        q.E1 = -0.5 * q.omega0;
        q.E2 = 0.5 * q.omega0;
        q.provenance = "config";
    } else {
        q = lattice_qubit(ctx, b).q;
    }
    const Gate g = read_gate(b, "gate", "X");
    const double A = b.has("amplitude") || b.has("amplitude_ratio") ? read_amplitude(b, q.omega0) : 0.0;
    const double w = read_frequency(b, q.omega0);
    const double T1 = b.positive("T1");
    const double T2 = b.positive("T2");
    double t_final = 0.0;
    if (b.has("t_final")) {
        if (b.has("T1_multiples")) b.fail("t_final", "and T1_multiples are mutually exclusive");
        t_final = b.positive("t_final");
    } else {
        t_final = b.positive("T1_multiples", 5.0) * T1;
    }
    const double dt = b.has("dt") ? b.positive("dt") : 2.0 * kPi / w / b.get<int>("steps_per_period", 40);
    const int every = b.get<int>("record_every", 1);
    const Qubit c0 = logical_state(b.get<std::string>("initial_state", "0"));
    DephasingConvention conv;
    try {
        conv = parse_dephasing(b.get<std::string>("dephasing", "rate"));
    } catch (const ContractError&) {
        b.fail("dephasing", "must be rate or literal");
    }
    b.finish();

    const auto out = evolve_lindblad(q, g, A, w, c0 * c0.adjoint(), T1, T2, t_final, dt, every, conv);
    if (ctx.out.csv()) {
        auto os = ctx.out.open("lindblad.csv");
        os << "t,rx,ry,rz,p1,p2,abs_rho01,purity\n";
        os.precision(12);
        for (std::size_t k = 0; k < out.rho.size(); ++k) {
            const auto& r = out.record.bloch_logical[k];
            const auto& rho = out.rho[k];
            os << out.record.times[k] << ',' << r[0] << ',' << r[1] << ',' << r[2] << ',' << out.record.p1[k] << ','
               << out.record.p2[k] << ',' << std::abs(rho(0, 1)) << ',' << (rho * rho).trace().real() << '\n';
        }
    }
    const auto& last = out.rho.back();
    return {{"gap", q.omega0},
            {"amplitude", A},
            {"t_final", t_final},
            {"p1_final", last(0, 0).real()},
            {"p2_final", last(1, 1).real()},
            {"abs_rho01_final", std::abs(last(0, 1))},
            {"p2_max", max_of(out.record.p2)}};
}

inline nlohmann::json run_readout(Context& ctx) {
    Block b(ctx.cfg.task_block, "readout");
    const auto basis = b.get<std::string>("basis", "both");
    if (basis != "X" && basis != "Y" && basis != "both") b.fail("basis", "must be X, Y or both");
    const auto names = b.get<std::vector<std::string>>("states", {"+", "-", "+i", "-i"});
    for (const auto& n : names)
        if (!is_logical_state_name(n)) b.fail("states", "entries must be 0, 1, +, -, +i or -i");
    const bool bell = b.get<bool>("bell", true);
    b.finish();

    nlohmann::json rows = nlohmann::json::array();
    std::vector<std::pair<std::string, ReadoutBasis>> bases;
    if (basis != "Y") bases.push_back({"X", ReadoutBasis::X});
    if (basis != "X") bases.push_back({"Y", ReadoutBasis::Y});
    std::ostringstream csv;
    csv << "basis,state,p0,p1\n";
    csv.precision(15);
    for (const auto& [bn, bb] : bases)
        for (const auto& n : names) {
            const auto r = readout_rotation(bb, logical_state(n));
            csv << bn << ',' << n << ',' << r.populations[0] << ',' << r.populations[1] << '\n';
            rows.push_back({{"basis", bn}, {"state", n}, {"p0", r.populations[0]}, {"p1", r.populations[1]}});
        }
    if (ctx.out.csv()) ctx.out.open("readout.csv") << csv.str();
    nlohmann::json summary{{"readout", rows}};
    if (bell) {
        const auto psi = bell_circuit();
        const double s = two_qubit_entropy(psi);
        if (ctx.out.csv()) {
            auto os = ctx.out.open("bell.csv");
            os << "index,re,im\n";
            os.precision(15);
            for (int i = 0; i < 4; ++i)
                os << i << ',' << psi(i).real() << ',' << psi(i).imag() << '\n';
        }
        summary["bell_amplitudes"] = {psi(0).real(), psi(1).real(), psi(2).real(), psi(3).real()};
        summary["bell_entropy"] = s;
    }
    return summary;
}

inline nlohmann::json run_dmi_series(Context& ctx) {
    Block b(ctx.cfg.task_block, "dmi_series");
    const auto Ds = b.require<std::vector<double>>("D");
    const auto mode = b.get<std::string>("mode", "static");
    if (mode != "static" && mode != "dynamics") b.fail("mode", "must be static or dynamics");
    DmiDynamicsOptions dyn;
    dyn.drive_field = b.vec3("drive_field", dyn.drive_field);
    dyn.periods = b.positive("periods", dyn.periods);
    dyn.steps_per_period = b.get<int>("steps_per_period", dyn.steps_per_period);
    dyn.fit_periods = b.get<int>("fit_periods", dyn.fit_periods);
    const double tol = b.positive("tol", 1e-9);
    b.finish();
    if (ctx.lat.boundary != Boundary::OBC) throw ConfigError("config: dmi_series needs an OBC lattice");

    const auto series = dmi_series(ctx.lat, ctx.cfg.params, Ds,
                                   mode == "dynamics" ? SeriesTask::Dynamics : SeriesTask::Static, dyn, ctx.cfg.seed,
                                   tol);
    nlohmann::json radius = nlohmann::json::array(), decay = nlohmann::json::array(),
                   growth = nlohmann::json::array(), charge = nlohmann::json::array();
    std::string first_error;
    if (ctx.out.csv()) {
        auto os = ctx.out.open("dmi_series.csv");
        os << "D,E0,radius,Q_topo,central_Sz,sz_decay_per_period,entropy_growth_rate\n";
        os.precision(12);
        for (const auto& p : series)
            os << p.D << ',' << p.ground_energy << ',' << (p.radius ? *p.radius : std::nan("")) << ','
               << p.Q_topological << ',' << p.central_Sz << ',' << p.sz_decay_per_period << ','
               << p.entropy_growth_rate << '\n';
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& p = series[i];
        radius.push_back(num(p.radius));
        decay.push_back(num(p.sz_decay_per_period));
        growth.push_back(num(p.entropy_growth_rate));
        charge.push_back(num(p.Q_topological));
        if (!p.error.empty() && first_error.empty()) first_error = p.error;
        if (mode == "dynamics") write_trajectory(ctx, "dmi_" + std::to_string(i) + "_trajectory.csv", p.trajectory);
    }
    nlohmann::json summary{{"D", Ds},
                           {"radius", radius},
                           {"Q_topo", charge},
                           {"sz_decay_per_period", decay},
                           {"entropy_growth_rate", growth}};
    summary["E0"] = num(series.front().ground_energy);
    summary["Q"] = charge.front();
    if (!first_error.empty()) {
        summary["exit_code"] = static_cast<int>(kNoConvergence);
        summary["error"] = first_error;
    }
    return summary;
}

// Executes the configured task and returns the summary object. Errors
// propagate as exceptions; see exit_code_for.
inline nlohmann::json run(const RunConfig& cfg, std::ostream& log) {
    Context ctx{cfg, build_lattice(cfg.lattice), Output(cfg.output), log};
    if (cfg.dump_lattice) ctx.out.write_json("lattice.json", lattice_to_json(ctx.lat));
    nlohmann::json s;
    if (cfg.task == "diagonalize") s = run_diagonalize(ctx);
    else if (cfg.task == "sweep") s = run_sweep(ctx);
    else if (cfg.task == "evolve") s = run_evolve(ctx);
    else if (cfg.task == "gate") s = run_gate(ctx);
    else if (cfg.task == "lindblad") s = run_lindblad(ctx);
    else if (cfg.task == "readout") s = run_readout(ctx);
    else s = run_dmi_series(ctx);
    s["n_sites"] = ctx.lat.n_sites;
    s["outputs"] = ctx.out.written();
    if (ctx.out.json()) {
        nlohmann::json stable = s;
        stable["task"] = cfg.task;
        stable["seed"] = cfg.seed;
        ctx.out.write_json("summary.json", stable);
    }
    return s;
}

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ContractError*>(&e) || dynamic_cast<const IndexError*>(&e) ||
        dynamic_cast<const nlohmann::json::exception*>(&e))
        return kConfigInvalid;
    if (dynamic_cast<const ConvergenceError*>(&e) || dynamic_cast<const IntegratorError*>(&e)) return kNoConvergence;
    if (dynamic_cast<const ResourceError*>(&e)) return kResourceRefused;
    return kFatal;
}

// Loads, applies overrides, runs, and prints one JSON summary line on `out`.
inline int main_entry(const std::string& subcommand, const std::string& config_path, const Overrides& ov,
                      std::ostream& out, std::ostream& err) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string task = canonical_task(subcommand);
    auto emit = [&](nlohmann::json s, int code) {
        s["task"] = task;
        s["status"] = code == 0 ? "ok" : "error";
        s["exit_code"] = code;
        s["runtime_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << s.dump() << std::endl;
        return code;
    };
    try {
        RunConfig cfg = load_config(config_path);
        if (cfg.task != task)
            throw ConfigError("config: task '" + cfg.task + "' does not match subcommand '" + subcommand + "'");
        if (ov.seed) cfg.seed = *ov.seed;
        if (ov.workers) {
            if (*ov.workers < 1) throw ConfigError("--workers must be >= 1");
            cfg.workers = *ov.workers;
        }
        if (ov.out) cfg.output.directory = *ov.out;
        cfg.dump_lattice = cfg.dump_lattice || ov.dump_lattice;
        nlohmann::json s = run(cfg, err);
        const int code = s.contains("exit_code") ? s["exit_code"].get<int>() : 0;
        if (code != 0) err << "skyrlab: " << s.value("error", std::string("task reported failures")) << '\n';
        return emit(std::move(s), code);
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        err << "skyrlab: " << e.what() << '\n';
        return emit({{"error", e.what()}}, code);
    }
}

}  // namespace skyrlab::app
