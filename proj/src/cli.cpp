#include "obsnet/cli.hpp"

#include "obsnet/decomposition.hpp"
#include "obsnet/graph.hpp"
#include "obsnet/numerics.hpp"
#include "obsnet/simulation.hpp"
#include "obsnet/spectral.hpp"
#include "obsnet/synthesis.hpp"
#include "obsnet/sysmodel.hpp"
#include "obsnet/textio.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace obsnet::cli {

namespace {

constexpr int kExitPass = 0;
constexpr int kExitCertifiedFail = 1;
constexpr int kExitInputError = 2;
constexpr int kExitBudgetFail = 3;

struct ProblemConfig {
    std::string plant_path;
    std::string graph_path;
    std::string design_path;
    std::string trace_path;
    std::string out_dir;
    double alpha = 0.0;        // 0 means unset
    double target_radius = 0.0;
    int horizon = 100;
    std::uint64_t seed = 1;
    int mu_cap = -1;
    int max_restarts = 20;
};

std::string fmt_complex(const Complex& c) {
    std::ostringstream os;
    os << fmt_g17(c.real());
    if (c.imag() != 0.0) os << (c.imag() > 0 ? " + " : " - ") << fmt_g17(std::abs(c.imag())) << "i";
    return os.str();
}

void write_kv_file(const std::string& out_dir, const std::string& name,
                   const std::vector<std::pair<std::string, std::string>>& kv) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / name);
    for (const auto& [k, v] : kv) out << k << ' ' << v << '\n';
}

struct Loaded {
    CommGraph g;
    LtiSystem sys;
};

Loaded load_inputs(const ProblemConfig& cfg) {
    Loaded in{read_graph_file(cfg.graph_path), read_plant_file(cfg.plant_path)};
    if (in.sys.blocks() != in.g.m) {
        throw std::runtime_error("plant has " + std::to_string(in.sys.blocks()) +
                                 " output blocks but the graph has " + std::to_string(in.g.m) +
                                 " nodes");
    }
    return in;
}

// Alpha used for the lifted checks: explicit flag first, then the optimized
// pick when the interval is feasible, then a diagnostic fallback so the
// Example-1 style failure reports can still be produced.
double resolve_alpha(const ProblemConfig& cfg, const CommGraph& g, const AlphaInterval& iv,
                     double rho_a, std::string* how) {
    if (cfg.alpha > 0.0) {
        *how = "given";
        return cfg.alpha;
    }
    if (iv.feasible && g.lambda(1) > ToleranceConfig{}.unit_circle_tol && iv.upper_bounded) {
        *how = "pick_alpha";
        return pick_alpha(iv, g, rho_a);
    }
    *how = "diagnostic";
    const double lm = g.lambda(g.m - 1);
    return lm > 1e-12 ? 1.0 / lm : 0.1;
}

int cmd_check(const ProblemConfig& cfg) {
    const ToleranceConfig tol;
    const Loaded in = load_inputs(cfg);
    const auto& g = in.g;
    const auto& sys = in.sys;

    const bool connected = is_connected(g, tol);
    const auto [l2, lm] = spectral_gap(g);
    const double rho_a = eig(sys.A, tol).spectral_radius();
    const RhoThreshold th = rho_threshold(l2, lm, tol);

    // Strict inequality with a guard band; a marginal instance fails.
    const double guard = th.finite ? 1e-9 * std::max(1.0, th.value) : 0.0;
    const bool marginal = th.finite && std::abs(rho_a - th.value) <= guard;
    const bool rho_ok = !th.finite || (rho_a < th.value - guard);

    const AlphaInterval iv = alpha_interval(rho_a, l2, lm, tol);
    std::string alpha_how;
    const double alpha = resolve_alpha(cfg, g, iv, rho_a, &alpha_how);
    const WeightMatrix w = make_weight(g, alpha);

    const auto detect = is_detectable(sys.A, sys.stacked_C(), tol);
    const auto lifted = lifted_detectability(w, sys, tol);
    const auto triples = all_channel_triples(g, sys);
    const FixedModeReport fm = fixed_mode_scan(w, sys, triples, tol);

    std::cout << "graph: m = " << g.m << ", edges = " << g.edges.size() << ", "
              << (connected ? "connected" : "NOT connected") << "\n";
    std::cout << "lambda_2 = " << fmt_g17(l2) << ", lambda_m = " << fmt_g17(lm) << "\n";
    std::cout << "rho(A) = " << fmt_g17(rho_a) << "\n";
    std::cout << "threshold (lambda_m+lambda_2)/(lambda_m-lambda_2) = "
              << (th.finite ? fmt_g17(th.value) : std::string("inf"))
              << (th.vacuous ? " (vacuous: edgeless graph)" : "") << "\n";
    std::cout << "spectral condition rho(A) < threshold: "
              << (rho_ok ? "holds" : (marginal ? "MARGINAL (within guard band)" : "FAILS")) << "\n";
    std::cout << "alpha interval: ";
    if (iv.feasible) {
        std::cout << "(" << fmt_g17(iv.lower) << ", "
                  << (iv.upper_bounded ? fmt_g17(iv.upper) : std::string("inf")) << ")";
    } else {
        std::cout << "infeasible";
    }
    if (!iv.diagnosis.empty()) std::cout << " [" << iv.diagnosis << "]";
    std::cout << "\n";
    std::cout << "alpha = " << fmt_g17(alpha) << " (" << alpha_how << ")\n";
    std::cout << "lambda_bar(alpha) = " << fmt_g17(lambda_bar(g, alpha, rho_a)) << "\n";
    std::cout << "detectable (A, C): " << (detect.detectable ? "yes" : "NO") << "\n";
    for (const auto& f : detect.failures) {
        std::cout << "  undetectable mode lambda = " << fmt_complex(f.lambda) << "\n";
    }
    std::cout << "lifted detectable (W (x) A, Cbar): " << (lifted.detectable ? "yes" : "NO") << "\n";
    for (const auto& f : lifted.failures) {
        std::cout << "  undetectable mode lambda = " << fmt_complex(f.lambda) << ", witness [";
        for (Eigen::Index i = 0; i < f.witness.size(); ++i) {
            if (i) std::cout << ", ";
            std::cout << fmt_complex(f.witness(i));
        }
        std::cout << "]\n";
    }
    std::cout << "fixed modes: " << (fm.clean() ? "none" : "PRESENT") << " (" << fm.tested_modes.size()
              << " unstable mode(s) scanned over " << (1u << g.m) << " partitions, rank bound "
              << fm.required_rank << ")\n";
    for (const auto& lam : fm.fixed_modes) {
        std::cout << "  fixed mode at lambda = " << fmt_complex(lam) << "\n";
    }

    const bool pass =
        connected && rho_ok && iv.feasible && detect.detectable && lifted.detectable && fm.clean();
    std::cout << "verdict: " << (pass ? "PASS" : "FAIL") << "\n";

    write_kv_file(cfg.out_dir, "check.kv",
                  {{"m", std::to_string(g.m)},
                   {"connected", connected ? "1" : "0"},
                   {"lambda2", fmt_g17(l2)},
                   {"lambda_m", fmt_g17(lm)},
                   {"rho_a", fmt_g17(rho_a)},
                   {"threshold", th.finite ? fmt_g17(th.value) : "inf"},
                   {"rho_condition", rho_ok ? "1" : "0"},
                   {"marginal", marginal ? "1" : "0"},
                   {"alpha_feasible", iv.feasible ? "1" : "0"},
                   {"alpha", fmt_g17(alpha)},
                   {"detectable", detect.detectable ? "1" : "0"},
                   {"lifted_detectable", lifted.detectable ? "1" : "0"},
                   {"fixed_modes", std::to_string(fm.fixed_modes.size())},
                   {"verdict", pass ? "pass" : "fail"}});
    if (!cfg.out_dir.empty()) {
        std::ofstream fmout(std::filesystem::path(cfg.out_dir) / "fixed_modes.txt");
        fmout << fm.to_text();
    }
    return pass ? kExitPass : kExitCertifiedFail;
}

int cmd_design(const ProblemConfig& cfg) {
    const ToleranceConfig tol;
    const Loaded in = load_inputs(cfg);
    const auto& g = in.g;
    const auto& sys = in.sys;

    const double rho_a = eig(sys.A, tol).spectral_radius();
    const auto [l2, lm] = spectral_gap(g);
    const AlphaInterval iv = alpha_interval(rho_a, l2, lm, tol);

    double alpha;
    if (cfg.alpha > 0.0) {
        alpha = cfg.alpha;
    } else if (iv.feasible && g.lambda(1) > tol.unit_circle_tol && iv.upper_bounded) {
        alpha = pick_alpha(iv, g, rho_a);
    } else if (iv.feasible && rho_a < 1.0) {
        alpha = iv.upper_bounded ? 0.5 * iv.upper : 0.1;
    } else {
        std::cout << "infeasible (certified): alpha interval is empty";
        if (!iv.diagnosis.empty()) std::cout << " [" << iv.diagnosis << "]";
        std::cout << "\n";
        return kExitCertifiedFail;
    }

    const WeightMatrix w = make_weight(g, alpha);
    SynthesisOptions opts;
    opts.target_radius = cfg.target_radius;
    opts.mu_cap = cfg.mu_cap;
    opts.max_restarts = cfg.max_restarts;
    opts.rng_seed = cfg.seed;

    ObserverDesign design;
    try {
        design = synthesize(g, w, sys, opts);
    } catch (const InfeasibleError& e) {
        std::cout << "infeasible (certified): " << e.what() << "\n";
        return kExitCertifiedFail;
    } catch (const SearchBudgetError& e) {
        std::cout << "search failed (not a nonexistence proof): " << e.what() << "\n";
        return kExitBudgetFail;
    }

    const double lbar = lambda_bar(g, alpha, rho_a);
    std::cout << "alpha = " << fmt_g17(alpha) << "\n";
    std::cout << "lambda_bar = " << fmt_g17(lbar) << "\n";
    std::cout << "achieved_radius = " << fmt_g17(design.achieved_radius) << "\n";
    std::cout << "synthesis path = " << design.path << "\n";
    std::cout << "mu =";
    for (int v : design.mu) std::cout << ' ' << v;
    std::cout << "\n";

    std::string design_path = cfg.design_path;
    if (design_path.empty()) {
        const std::string dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
        std::filesystem::create_directories(dir);
        design_path = (std::filesystem::path(dir) / "design.txt").string();
    }
    write_design_file(design, design_path);
    std::cout << "design written to " << design_path << "\n";

    write_kv_file(cfg.out_dir, "design.kv",
                  {{"alpha", fmt_g17(alpha)},
                   {"lambda_bar", fmt_g17(lbar)},
                   {"achieved_radius", fmt_g17(design.achieved_radius)},
                   {"path", design.path}});
    return kExitPass;
}

int cmd_simulate(const ProblemConfig& cfg) {
    const Loaded in = load_inputs(cfg);
    if (cfg.design_path.empty()) throw std::runtime_error("simulate needs --design <file>");
    const ObserverDesign design = read_design_file(cfg.design_path, in.g, in.sys);

    SimTrace trace;
    try {
        trace = simulate_seeded(in.sys, design, in.g, cfg.seed, cfg.horizon);
    } catch (const DivergenceError& e) {
        std::cout << "diverged at step " << e.step() << "\n";
        return kExitCertifiedFail;
    }

    double rel = 0.0;
    for (int i = 0; i < trace.m; ++i) {
        const double e0 = trace.err_norms(i, 0);
        if (e0 > 0.0) rel = std::max(rel, trace.err_norms(i, trace.K) / e0);
    }
    const DecayEstimate decay = decay_rate(trace, trace.K / 5);

    std::cout << "horizon K = " << trace.K << "\n";
    std::cout << "final max relative error = " << fmt_g17(rel) << "\n";
    std::cout << "decay_rate = " << fmt_g17(decay.rate)
              << (decay.degenerate ? " (degenerate: zero trace)" : "") << "\n";

    std::string trace_path = cfg.trace_path;
    if (trace_path.empty()) {
        const std::string dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
        std::filesystem::create_directories(dir);
        trace_path = (std::filesystem::path(dir) / "trace.csv").string();
    }
    write_trace_csv_file(trace, trace_path);
    std::cout << "trace written to " << trace_path << "\n";

    write_kv_file(cfg.out_dir, "simulate.kv",
                  {{"K", std::to_string(trace.K)},
                   {"final_max_relative_error", fmt_g17(rel)},
                   {"decay_rate", fmt_g17(decay.rate)},
                   {"x0_seed", std::to_string(trace.x0_seed)}});

    return rel < 1e-6 ? kExitPass : kExitCertifiedFail;
}

int cmd_report(const ProblemConfig& cfg) {
    const Loaded in = load_inputs(cfg);
    if (cfg.design_path.empty()) throw std::runtime_error("report needs --design <file>");
    const ObserverDesign design = read_design_file(cfg.design_path, in.g, in.sys);

    const DesignCheck check = verify_design(design, in.g, in.sys);
    const double rho_a = eig(in.sys.A).spectral_radius();
    std::cout << "design: alpha = " << fmt_g17(design.w.alpha) << ", path = " << design.path
              << ", mu =";
    for (int v : design.mu) std::cout << ' ' << v;
    std::cout << "\n";
    std::cout << "lambda_bar = " << fmt_g17(lambda_bar(in.g, design.w.alpha, rho_a)) << "\n";
    std::cout << "stored achieved_radius = " << fmt_g17(design.achieved_radius) << "\n";
    std::cout << "verify: " << check.summary() << "\n";

    write_kv_file(cfg.out_dir, "report.kv",
                  {{"achieved_radius", fmt_g17(design.achieved_radius)},
                   {"recomputed_radius", fmt_g17(check.recomputed_radius)},
                   {"verify", check.pass() ? "pass" : "fail"}});
    return check.pass() ? kExitPass : kExitCertifiedFail;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"design and verification toolkit for sparsity-constrained observer networks"};
    app.require_subcommand(1);

    ProblemConfig cfg;

    auto add_common = [&](CLI::App* sub, bool needs_plant = true) {
        sub->add_option("--plant", cfg.plant_path, "plant text file")->required(needs_plant);
        sub->add_option("--graph", cfg.graph_path, "communication graph text file")->required();
        sub->add_option("--out", cfg.out_dir, "output directory for artifacts");
    };

    CLI::App* check = app.add_subcommand("check", "verify the existence-condition hypotheses");
    add_common(check);
    check->add_option("--alpha", cfg.alpha, "weight parameter alpha (default: pick automatically)");

    CLI::App* design = app.add_subcommand("design", "synthesize sparsity-constrained gains");
    add_common(design);
    design->add_option("--alpha", cfg.alpha, "weight parameter alpha (default: pick automatically)");
    design->add_option("--target-radius", cfg.target_radius,
                       "target spectral radius in (0,1); default (1+lambda_bar)/2");
    design->add_option("--seed", cfg.seed, "rng seed for the synthesis search");
    design->add_option("--mu-cap", cfg.mu_cap, "cap on per-node compensator order (default n*m)");
    design->add_option("--max-restarts", cfg.max_restarts, "stage-B restart budget");
    design->add_option("--design", cfg.design_path, "design output file (default <out>/design.txt)");

    CLI::App* simulate = app.add_subcommand("simulate", "run the observer network on the plant");
    add_common(simulate);
    simulate->add_option("--design", cfg.design_path, "design artifact file")->required();
    simulate->add_option("--horizon", cfg.horizon, "number of steps K");
    simulate->add_option("--seed", cfg.seed, "seed for the initial plant state");
    simulate->add_option("--trace", cfg.trace_path, "trace output file (default <out>/trace.csv)");

    CLI::App* report = app.add_subcommand("report", "re-verify a design artifact");
    add_common(report);
    report->add_option("--design", cfg.design_path, "design artifact file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message / help text
        return e.get_exit_code() == 0 ? kExitPass : kExitInputError;
    }

    try {
        if (check->parsed()) return cmd_check(cfg);
        if (design->parsed()) return cmd_design(cfg);
        if (simulate->parsed()) return cmd_simulate(cfg);
        return cmd_report(cfg);
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace obsnet::cli
