// Command-line front end: simulate, classify, roc, model-vs-sim, calibrate-dthr, run.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cranra/harness.hpp"

namespace fs = std::filesystem;
using namespace cranra;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

// Flags shared by most subcommands; each overrides the config file.
struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> set;  // key=value overrides

    void add(CLI::App* app) {
        app->add_option("--config", config_path, "flat key = value config file");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--out", out, "output directory (relative paths resolve under $" +
                                          std::string(kOutputRootEnv) + ")");
        app->add_option("--set", set, "override a config key, key=value (repeatable)");
    }

    ExperimentConfig load() const {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        for (const auto& kv : set) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
        }
        if (seed) cfg.seed = *seed;
        if (out) cfg.output_dir = *out;
        return cfg;
    }
};

struct McFlags {
    std::optional<double> lambda_reg, step, eps_stop;
    std::optional<int> rank, max_iters;
    std::optional<std::string> solver;

    void add(CLI::App* app) {
        app->add_option("--lambda-reg", lambda_reg);
        app->add_option("--rank", rank);
        app->add_option("--step", step);
        app->add_option("--max-iters", max_iters);
        app->add_option("--eps-stop", eps_stop);
        app->add_option("--solver", solver, "als or gradient");
    }

    void apply(McParams& m) const {
        if (lambda_reg) m.lambda_reg = *lambda_reg;
        if (rank) m.rank = *rank;
        if (step) m.step = *step;
        if (max_iters) m.max_iters = *max_iters;
        if (eps_stop) m.eps_stop = *eps_stop;
        if (solver) m.mode = parse_solver(*solver);
    }
};

fs::path prepare_dir(const std::string& dir) {
    const auto p = resolve_output_dir(dir);
    fs::create_directories(p);
    return p;
}

std::map<DeviceId, std::vector<double>> as_columns(const std::vector<DeviceId>& ids,
                                                   const std::vector<std::vector<double>>& cols) {
    std::map<DeviceId, std::vector<double>> m;
    for (std::size_t k = 0; k < ids.size(); ++k) m[ids[k]] = cols[k];
    return m;
}

// --- simulate ---------------------------------------------------------------------------

struct SimulateCmd {
    Common common;
    std::optional<int> frames, warmup;
    std::optional<double> theta, rho, lambda_in, p;
    std::string mode = "gscm";
    int views = 2;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("simulate", "run a random-access campaign");
        common.add(app);
        app->add_option("--frames", frames, "measured frames");
        app->add_option("--warmup", warmup);
        app->add_option("--theta", theta);
        app->add_option("--rho", rho);
        app->add_option("--lambda-in", lambda_in);
        app->add_option("--p", p, "access probability (default p*)");
        app->add_option("--mode", mode, "gscm or abstract-q");
        app->add_option("--views", views, "write view/gains files for the last N frames");
        app->callback([this] { run(); });
    }

    void run() const {
        auto cfg = common.load();
        if (frames) cfg.frames = *frames;
        if (warmup) cfg.warmup = *warmup;
        if (rho) cfg.rho = *rho;
        if (lambda_in) cfg.lambda_in = *lambda_in;
        if (p) cfg.p = *p;
        cfg.validate();
        const double th = theta ? *theta : cfg.thetas.front();
        CampaignConfig cc;
        cc.ra = cfg.ra(th);
        cc.mode = parse_mode(mode);
        const auto dir = prepare_dir(cfg.output_dir);

        cc.frames = cfg.frames;
        cc.warmup = cfg.warmup;

        std::optional<Network> net;
        std::optional<ChannelModel> model;
        if (cc.mode == DetectionMode::gscm) {
            net = build_network(cfg);
            model.emplace(net->layout, net->params);
            write_layout_csv(net->layout, dir / "layout.csv");
        }
        const std::size_t total = static_cast<std::size_t>(cfg.frames + cfg.warmup);
        const std::size_t first_view = total > static_cast<std::size_t>(views) ? total - views : 0;
        const auto stats = run_campaign(cc, model ? &*model : nullptr, substream_seed(cfg.seed, "campaign"),
                                        [&](const FrameResult& r, const FrameState&) {
                                            if (!r.report || r.frame < first_view) return;
                                            const auto f = std::to_string(r.frame);
                                            write_view_csv(*r.report, dir / ("view_" + f + ".csv"));
                                            write_gains_csv(dir / ("gains_" + f + ".csv"),
                                                            as_columns(r.detected, r.detected_gains));
                                        });
        write_campaign_csv(stats, dir / "campaign.csv");
        std::cout << "theta " << th << " slots " << cc.ra.slots << " p " << cc.ra.p << "\n"
                  << "lambda_out " << stats.lambda_out << " +- " << stats.lambda_out_stderr << "  lambda_ra "
                  << stats.lambda_ra << "  lambda_in " << stats.lambda_in << "  uncovered " << stats.uncovered
                  << "\n";
    }
};

// --- classify ---------------------------------------------------------------------------

struct ClassifyCmd {
    Common common;
    McFlags mcf;
    std::vector<std::string> views;
    std::vector<std::string> gains;
    std::string layout;
    std::string method = "mc";
    double alpha = 0.5;
    std::optional<double> beta;
    int window = 1;
    std::string d_thr = "inf";
    bool unknown_only = false;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("classify", "classify links of one frame from its view");
        common.add(app);
        mcf.add(app);
        app->add_option("--view", views, "view_f.csv files, oldest first; the last one is classified")->required();
        app->add_option("--gains", gains, "ground-truth gains per view, same order (enables rates)");
        app->add_option("--layout", layout, "layout.csv (needed for finite --d-thr)");
        app->add_option("--method", method, "baseline or mc");
        app->add_option("--alpha", alpha, "baseline probability of calling an unknown cell strong");
        app->add_option("--beta", beta, "mc threshold in dB (default gamma_db)");
        app->add_option("--window", window, "frames in the completion window");
        app->add_option("--d-thr", d_thr, "RRH distance threshold in m, or inf");
        app->add_flag("--unknown-only", unknown_only, "report rates over unknown cells only");
        app->callback([this] { run(); });
    }

    void run() const {
        auto cfg = common.load();
        mcf.apply(cfg.mc);
        if (method != "baseline" && method != "mc") throw ConfigError("--method must be baseline or mc");
        if (window < 1) throw ConfigError("--window must be >= 1");
        if (!gains.empty() && gains.size() != views.size())
            throw ConfigError("--gains must be given once per --view");
        const double dt = d_thr == "inf" ? INFINITY : csv::parse_double(d_thr);
        Eigen::MatrixXd rrh_dist;
        int sectors = cfg.channel.sectors;
        if (std::isfinite(dt)) {
            if (layout.empty()) throw ConfigError("--d-thr needs --layout");
            const auto lay = read_layout_csv(layout);
            rrh_dist = lay.rrh_distances();
            sectors = lay.sectors_per_rrh;
        }
        const auto dir = prepare_dir(cfg.output_dir);

        const std::size_t used = std::min<std::size_t>(static_cast<std::size_t>(window), views.size());
        std::vector<FrameObservations> frames;
        std::vector<CentralView> cviews;
        for (std::size_t k = views.size() - used; k < views.size(); ++k) {
            auto report = read_view_csv(views[k]);
            auto view = merge_reports(report);
            if (std::isfinite(dt) && report.sectors() != rrh_dist.rows() * sectors)
                throw ConfigError("view sector count does not match the layout");
            FrameObservations fo;
            fo.devices = view.detected;
            fo.omega = build_observations(view, rrh_dist, sectors, dt);
            frames.push_back(std::move(fo));
            cviews.push_back(std::move(view));
        }
        const auto& current = frames.back();

        HypothesisMatrix chat;
        if (method == "baseline") {
            auto rng = make_rng(cfg.seed, "baseline", 0);
            chat = baseline_classify(current.omega, alpha, rng);
        } else {
            const auto stacked = window_stack(frames);
            auto rng = make_rng(cfg.seed, "mc-init", 0);
            const auto fit = mc_fit(stacked.omega, cfg.mc_params(), rng);
            write_fit_trace_csv(fit.trace, dir / "fit_trace.csv");
            const Eigen::MatrixXd pred = select_columns(fit.factors.product(), stacked.current_columns);
            const double b = beta ? *beta : cfg.gamma_db;
            chat = HypothesisMatrix(current.omega.rows(), current.omega.cols());
            for (int j = 0; j < current.omega.cols(); ++j)
                for (int i = 0; i < current.omega.rows(); ++i) {
                    const auto s = current.omega.state(i, j);
                    chat(i, j) = s == CellState::strong ? 1 : s == CellState::weak ? 0 : (pred(i, j) >= b ? 1 : 0);
                }
            if (stacked.gain_conflicts) std::cerr << "warning: " << stacked.gain_conflicts << " gain conflicts\n";
        }

        csv::Writer w(dir / "chat_f.csv");
        w.header({"sector", "device", "predicted", "known_flag"});
        for (int j = 0; j < chat.cols(); ++j)
            for (int i = 0; i < chat.rows(); ++i)
                w.row(i, current.devices[static_cast<std::size_t>(j)], static_cast<int>(chat(i, j)),
                      current.omega.known(i, j) ? 1 : 0);

        std::cout << "devices " << chat.cols() << " strong " << current.omega.count(CellState::strong) << " weak "
                  << current.omega.count(CellState::weak) << " unknown " << current.omega.count(CellState::unknown)
                  << "\n";
        if (!gains.empty()) {
            const auto truth_cols = read_gains_csv(gains.back());
            std::vector<std::vector<double>> cols;
            for (DeviceId id : current.devices) {
                auto it = truth_cols.find(id);
                if (it == truth_cols.end()) throw ConfigError("gains file lacks device " + std::to_string(id));
                cols.push_back(it->second);
            }
            const auto c = hypothesis_matrix(cols, cfg.gamma_db, current.omega.rows());
            const auto r = unknown_only ? unknown_only_rates(chat, c, current.omega) : rates(chat, c);
            std::cout << "p_d " << r.p_d << " p_f " << r.p_f << "\n";
        }
    }
};

// --- roc --------------------------------------------------------------------------------

struct RocCmd {
    Common common;
    McFlags mcf;
    std::optional<double> theta;
    std::vector<int> windows{1};
    std::optional<int> frames, warmup;
    std::optional<std::string> d_thr;
    bool unknown_only = false;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("roc", "baseline and matrix-completion ROC at one theta");
        common.add(app);
        mcf.add(app);
        app->add_option("--theta", theta);
        app->add_option("--window", windows, "completion window sizes (repeatable)");
        app->add_option("--frames", frames, "measured frames");
        app->add_option("--warmup", warmup);
        app->add_option("--d-thr", d_thr, "RRH distance threshold in m, inf, or auto");
        app->add_flag("--unknown-only", unknown_only, "also report rates over unknown cells only");
        app->callback([this] { run(); });
    }

    void run() const {
        auto cfg = common.load();
        mcf.apply(cfg.mc);
        if (frames) cfg.frames = *frames;
        if (warmup) cfg.warmup = *warmup;
        if (d_thr) set_config_value(cfg, "d_thr", *d_thr == "inf" ? "inf" : *d_thr);
        cfg.unknown_only = cfg.unknown_only || unknown_only;
        for (int w : windows)
            if (w < 1) throw ConfigError("--window must be >= 1");
        cfg.validate();
        const double th = theta ? *theta : cfg.thetas.front();
        const auto dir = prepare_dir(cfg.output_dir);

        auto net = build_network(cfg);
        if (net.calibration.warning && !cfg.d_thr) std::cerr << "warning: d_thr calibration found no shared device\n";
        const auto exp = run_roc_experiment(cfg, net, th, windows, substream_seed(cfg.seed, "roc", 0));

        std::vector<SummaryRow> rows;
        write_roc_csv(exp.baseline, dir / "roc_baseline.csv");
        rows.push_back({"baseline", th, 1, exp.baseline.auc, p_d_at(exp.baseline, 0.05)});
        for (const auto& [w, curve] : exp.mc) {
            write_roc_csv(curve, dir / (windows.size() == 1 ? std::string("roc_mc.csv")
                                                            : "roc_mc_w" + std::to_string(w) + ".csv"));
            rows.push_back({"mc", th, w, curve.auc, p_d_at(curve, 0.05)});
        }
        if (cfg.unknown_only) {
            rows.push_back({"baseline@unknown", th, 1, exp.baseline_unknown.auc, p_d_at(exp.baseline_unknown, 0.05)});
            for (const auto& [w, curve] : exp.mc_unknown)
                rows.push_back({"mc@unknown", th, w, curve.auc, p_d_at(curve, 0.05)});
        }
        write_summary_csv(rows, dir / "summary.csv");
        write_fit_trace_csv(exp.last_trace, dir / "fit_trace.csv");
        std::cout << "d_thr " << exp.d_thr << "\n";
        for (const auto& r : rows)
            std::cout << r.method << " w" << r.window << " auc " << r.auc << " p_d@0.05 " << r.p_d_at_pf_005 << "\n";
    }
};

// --- model-vs-sim -----------------------------------------------------------------------

struct ModelVsSimCmd {
    Common common;
    std::vector<double> thetas, ps, p_factors;
    std::optional<int> frames, forced_active;
    std::string mode = "abstract-q";

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("model-vs-sim", "simulated vs closed-form detections per frame");
        common.add(app);
        app->add_option("--theta", thetas, "theta grid (default: config list)");
        app->add_option("--p", ps, "absolute p grid, shared by every theta");
        app->add_option("--p-factor", p_factors, "p grid as multiples of p*(theta)");
        app->add_option("--frames", frames);
        app->add_option("--forced-active", forced_active, "active devices per frame, 0 for Poisson arrivals");
        app->add_option("--mode", mode, "abstract-q, gscm or both");
        app->callback([this] { run(); });
    }

    void run() const {
        auto cfg = common.load();
        if (frames) cfg.mvs_frames = *frames;
        if (forced_active) cfg.mvs_forced_active = *forced_active;
        if (!p_factors.empty()) cfg.mvs_p_factors = p_factors;
        if (mode != "abstract-q" && mode != "gscm" && mode != "both")
            throw ConfigError("--mode must be abstract-q, gscm or both");
        cfg.validate();
        const auto th = thetas.empty() ? cfg.thetas : thetas;
        const auto dir = prepare_dir(cfg.output_dir);

        ModelVsSimConfig mv;
        mv.frames = cfg.mvs_frames;
        mv.warmup = cfg.warmup;
        if (cfg.mvs_forced_active > 0) mv.forced_active = cfg.mvs_forced_active;
        else mv.forced_active.reset();
        mv.abstract_q = mode != "gscm";
        mv.gscm = mode != "abstract-q";

        std::optional<Network> net;
        std::optional<ChannelModel> model;
        if (mv.gscm) {
            net = build_network(cfg);
            model.emplace(net->layout, net->params);
        }
        std::vector<ThroughputRow> rows;
        for (std::size_t k = 0; k < th.size(); ++k) {
            mv.ra = cfg.ra(th[k]);
            std::vector<double> grid = ps;
            if (grid.empty())
                for (double f : cfg.mvs_p_factors) grid.push_back(std::min(1.0, f * mv.ra.p));
            const double one[] = {th[k]};
            auto r = model_vs_sim(one, grid, mv, model ? &*model : nullptr, substream_seed(cfg.seed, "mvs", k));
            rows.insert(rows.end(), r.begin(), r.end());
        }
        write_throughput_csv(rows, dir / "throughput.csv");
        for (const auto& r : rows) {
            const double z = r.stderr_ > 0 ? (r.lambda_out_sim - r.lambda_out_model) / r.stderr_ : 0.0;
            std::cout << "theta " << r.theta << " p " << r.p << " sim " << r.lambda_out_sim << " model "
                      << r.lambda_out_model << " z " << z << "\n";
        }
    }
};

// --- calibrate-dthr ---------------------------------------------------------------------

struct CalibrateCmd {
    Common common;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("calibrate-dthr", "drop a layout and calibrate the RRH distance threshold");
        common.add(app);
        app->callback([this] { run(); });
    }

    void run() const {
        auto cfg = common.load();
        cfg.d_thr.reset();
        cfg.validate();
        const auto dir = prepare_dir(cfg.output_dir);
        const auto net = build_network(cfg);
        write_layout_csv(net.layout, dir / "layout.csv");
        std::map<DeviceId, std::vector<double>> cols;
        for (int k = 0; k < net.calibration_gains.devices(); ++k) {
            const auto c = net.calibration_gains.values_db.col(k);
            cols[static_cast<DeviceId>(k)] = std::vector<double>(c.data(), c.data() + c.size());
        }
        write_gains_csv(dir / "gains.csv", cols);
        std::cout << "d_thr " << csv::format_double(net.calibration.d_thr) << "\n";
        if (net.calibration.warning) std::cerr << "warning: no device is strong to two distinct RRHs\n";
    }
};

// --- run --------------------------------------------------------------------------------

struct RunCmd {
    Common common;
    bool print = false;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("run", "full pipeline: layout, campaigns, ROCs, throughput");
        common.add(app);
        app->add_flag("--print-defaults", print, "print every config key with its default and exit");
        app->callback([this] { run(); });
    }

    void run() const {
        if (print) {
            std::cout << print_defaults();
            return;
        }
        const auto cfg = common.load();
        const auto res = run_experiment(cfg);
        std::cout << "output " << res.output_dir.string() << "\nconfig_hash " << res.config_hash << "\nd_thr "
                  << res.d_thr << "\n";
        for (const auto& r : res.summary)
            std::cout << r.method << " theta " << r.theta << " w" << r.window << " auc " << r.auc << "\n";
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"C-RAN random access and link classification"};
    app.require_subcommand(1);
    SimulateCmd simulate;
    ClassifyCmd classify;
    RocCmd roc;
    ModelVsSimCmd mvs;
    CalibrateCmd calibrate;
    RunCmd run;
    simulate.add(app);
    classify.add(app);
    roc.add(app);
    mvs.add(app);
    calibrate.add(app);
    run.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const MalformedReport& e) {
        std::cerr << "malformed report: " << e.what() << "\n";
        return kExitConfig;
    } catch (const SolverDivergence& e) {
        std::cerr << "solver diverged: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
