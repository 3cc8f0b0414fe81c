#pragma once

// Experiment configuration and orchestration:
// drop layout -> calibrate d_thr -> simulate RA -> classify -> evaluate.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cranra/evalkit.hpp"
#include "cranra/gscm_channel.hpp"
#include "cranra/link_classify.hpp"
#include "cranra/ra_sim.hpp"
#include "cranra/rng.hpp"

namespace cranra {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kOutputRootEnv = "CRANRA_OUTPUT_ROOT";

struct ExperimentConfig {
    ChannelParams channel;
    GeometryConfig geometry;

    double lambda_in = 500.0;
    double rho = 0.99;
    double gamma_db = -18.0;
    std::vector<double> thetas{0.2, 0.5, 1.0};
    std::optional<double> p;  // unset: p*(theta)

    int frames = 5;   // measured frames per theta
    int warmup = 20;

    int mvs_frames = 500;
    int mvs_gscm_frames = 0;
    std::vector<double> mvs_p_factors{0.5, 1.0, 2.0};
    int mvs_forced_active = 506;  // 0: Poisson arrivals

    McParams mc;
    int alpha_points = 21;
    int beta_points = 400;
    std::optional<double> d_thr;  // unset: calibrate on the calibration draw
    int window = 1;
    bool unknown_only = false;

    std::uint64_t seed = 1;
    std::string output_dir = "out";

    void validate() const {
        channel.validate();
        geometry.validate();
        if (!(lambda_in > 0.0)) throw ConfigError("lambda_in must be > 0");
        if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
        if (thetas.empty()) throw ConfigError("theta list is empty");
        for (double t : thetas)
            if (!(t * lambda_in >= 1.0)) throw ConfigError("theta * lambda_in must be >= 1");
        if (p && !(*p >= 0.0 && *p <= 1.0)) throw ConfigError("p must lie in [0, 1]");
        if (frames < 1) throw ConfigError("frames must be >= 1");
        if (warmup < 0) throw ConfigError("warmup must be >= 0");
        if (mvs_frames < 2) throw ConfigError("mvs_frames must be >= 2");
        if (mvs_gscm_frames < 0) throw ConfigError("mvs_gscm_frames must be >= 0");
        if (mvs_forced_active < 0) throw ConfigError("mvs_forced_active must be >= 0");
        mc.validate();
        if (alpha_points < 2) throw ConfigError("alpha_points must be >= 2");
        if (beta_points < 2) throw ConfigError("beta_points must be >= 2");
        if (d_thr && !(*d_thr >= 0.0)) throw ConfigError("d_thr must be >= 0");
        if (window < 1) throw ConfigError("window must be >= 1");
    }

    double access_probability(double theta) const { return p ? *p : p_star(rho, lambda_in, theta); }

    RAConfig ra(double theta) const {
        RAConfig r;
        r.slots = slots_for(theta, lambda_in);
        r.p = access_probability(theta);
        r.lambda_in = lambda_in;
        r.gamma_db = gamma_db;
        r.rho = rho;
        return r;
    }

    McParams mc_params() const {
        McParams m = mc;
        m.gamma_minus = gamma_db;
        return m;
    }
};

// --- Config file ----------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool quoted(const std::string& v) { return v.size() >= 2 && v.front() == '"' && v.back() == '"'; }

inline double number_for(const std::string& key, const std::string& v) {
    if (quoted(v)) throw ConfigError("config key '" + key + "': expected a number, got string " + v);
    try {
        return csv::parse_double(v);
    } catch (const ConfigError&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline long long integer_for(const std::string& key, const std::string& v) {
    const double d = number_for(key, v);
    if (d != std::floor(d) || std::abs(d) > 9.0e15)
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    return static_cast<long long>(d);
}

inline bool bool_for(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::string string_for(const std::string&, const std::string& v) {
    return quoted(v) ? v.substr(1, v.size() - 2) : v;
}

inline std::vector<double> list_for(const std::string& key, const std::string& v) {
    if (quoted(v)) throw ConfigError("config key '" + key + "': expected a number list, got string " + v);
    std::vector<double> out;
    for (auto& item : csv::split(v)) out.push_back(number_for(key, trim(item)));
    return out;
}

inline std::string fmt(double v) { return csv::format_double(v); }

inline std::string fmt_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
    return s;
}

struct ConfigKey {
    const char* name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define CRANRA_NUM(key, field)                                                              \
    ConfigKey{key, [](ExperimentConfig& c, const std::string& v) { c.field = number_for(key, v); }, \
              [](const ExperimentConfig& c) { return fmt(c.field); }}
#define CRANRA_INT(key, field)                                                                       \
    ConfigKey{key,                                                                                  \
              [](ExperimentConfig& c, const std::string& v) {                                       \
                  c.field = static_cast<decltype(c.field)>(integer_for(key, v));                    \
              },                                                                                    \
              [](const ExperimentConfig& c) { return std::to_string(c.field); }}

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys{
        CRANRA_INT("antennas", channel.antennas),
        CRANRA_INT("sectors", channel.sectors),
        CRANRA_NUM("d_ant_over_lambda", channel.d_ant_over_lambda),
        CRANRA_NUM("eps_bp", channel.eps_bp),
        CRANRA_NUM("alpha_pl", channel.alpha_pl),
        CRANRA_NUM("a_nlos", channel.a_nlos),
        CRANRA_NUM("gamma_path", channel.gamma_path),
        CRANRA_NUM("linear_floor", channel.linear_floor),
        CRANRA_NUM("area_side", geometry.area_side),
        CRANRA_INT("rrhs", geometry.rrhs),
        CRANRA_INT("devices", geometry.devices),
        CRANRA_INT("scatterers", geometry.scatterers),
        CRANRA_INT("blockers", geometry.blockers),
        CRANRA_NUM("blocker_radius", geometry.blocker_radius),
        ConfigKey{"ppp", [](ExperimentConfig& c, const std::string& v) { c.geometry.ppp = bool_for("ppp", v); },
                  [](const ExperimentConfig& c) { return std::string(c.geometry.ppp ? "true" : "false"); }},
        CRANRA_NUM("lambda_in", lambda_in),
        CRANRA_NUM("rho", rho),
        CRANRA_NUM("gamma_db", gamma_db),
        ConfigKey{"theta", [](ExperimentConfig& c, const std::string& v) { c.thetas = list_for("theta", v); },
                  [](const ExperimentConfig& c) { return fmt_list(c.thetas); }},
        ConfigKey{"p",
                  [](ExperimentConfig& c, const std::string& v) {
                      if (v == "auto") c.p.reset();
                      else c.p = number_for("p", v);
                  },
                  [](const ExperimentConfig& c) { return c.p ? fmt(*c.p) : std::string("auto"); }},
        CRANRA_INT("frames", frames),
        CRANRA_INT("warmup", warmup),
        CRANRA_INT("mvs_frames", mvs_frames),
        CRANRA_INT("mvs_gscm_frames", mvs_gscm_frames),
        ConfigKey{"mvs_p_factors",
                  [](ExperimentConfig& c, const std::string& v) { c.mvs_p_factors = list_for("mvs_p_factors", v); },
                  [](const ExperimentConfig& c) { return fmt_list(c.mvs_p_factors); }},
        CRANRA_INT("mvs_forced_active", mvs_forced_active),
        CRANRA_NUM("lambda_reg", mc.lambda_reg),
        CRANRA_INT("rank", mc.rank),
        CRANRA_NUM("step", mc.step),
        CRANRA_INT("max_iters", mc.max_iters),
        CRANRA_NUM("eps_stop", mc.eps_stop),
        ConfigKey{"solver",
                  [](ExperimentConfig& c, const std::string& v) {
                      try {
                          c.mc.mode = parse_solver(string_for("solver", v));
                      } catch (const ConfigError& e) {
                          throw ConfigError(std::string("config key 'solver': ") + e.what());
                      }
                  },
                  [](const ExperimentConfig& c) { return std::string(to_string(c.mc.mode)); }},
        CRANRA_INT("alpha_points", alpha_points),
        CRANRA_INT("beta_points", beta_points),
        ConfigKey{"d_thr",
                  [](ExperimentConfig& c, const std::string& v) {
                      if (v == "auto") c.d_thr.reset();
                      else c.d_thr = number_for("d_thr", v);
                  },
                  [](const ExperimentConfig& c) { return c.d_thr ? fmt(*c.d_thr) : std::string("auto"); }},
        CRANRA_INT("window", window),
        ConfigKey{"unknown_only",
                  [](ExperimentConfig& c, const std::string& v) { c.unknown_only = bool_for("unknown_only", v); },
                  [](const ExperimentConfig& c) { return std::string(c.unknown_only ? "true" : "false"); }},
        CRANRA_INT("seed", seed),
        ConfigKey{"output_dir",
                  [](ExperimentConfig& c, const std::string& v) { c.output_dir = string_for("output_dir", v); },
                  [](const ExperimentConfig& c) { return c.output_dir; }},
    };
    return keys;
}

#undef CRANRA_NUM
#undef CRANRA_INT

}  // namespace detail

/// Applies one `key = value` setting.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : detail::config_keys()) {
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// Parses flat `key = value` text; '#' starts a comment. Unset keys keep their
/// defaults, so an empty text yields the default configuration.
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config") {
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path.string());
    return parse_config(in, path.string());
}

/// Canonical `key = value` listing of every setting.
inline std::string dump_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : detail::config_keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return out;
}

inline std::string print_defaults() { return dump_config(ExperimentConfig{}); }

/// FNV-1a of the canonical listing. The output directory is not part of the
/// experiment, so it is left out.
inline std::string config_hash(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.output_dir.clear();
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << detail::fnv1a(dump_config(c));
    return s.str();
}

// --- Pipeline pieces -----------------------------------------------------------------------

/// Layout, channel model and d_thr shared by every theta of an experiment.
struct Network {
    NetworkLayout layout;
    ChannelParams params;
    SectorGainMatrix calibration_gains;
    DthrCalibration calibration;
    double d_thr = INFINITY;
    Eigen::MatrixXd rrh_distances;
};

inline Network build_network(const ExperimentConfig& cfg) {
    Network net;
    net.params = cfg.channel;
    net.layout = drop_entities(cfg.channel, cfg.geometry, substream_seed(cfg.seed, "network"));
    net.calibration_gains = gain_matrix(net.layout, cfg.channel);
    net.calibration = calibrate_d_thr(net.calibration_gains, net.layout, cfg.gamma_db);
    net.d_thr = cfg.d_thr ? *cfg.d_thr : net.calibration.d_thr;
    net.rrh_distances = net.layout.rrh_distances();
    return net;
}

/// Stored per measured frame for classification and evaluation.
struct EvaluatedFrame {
    std::size_t frame = 0;
    FrameObservations obs;
    HypothesisMatrix truth;
    const RAReport* report = nullptr;
};

struct RocExperiment {
    double theta = 0.0;
    double d_thr = INFINITY;
    CampaignStats campaign;
    RocCurve baseline;
    std::map<int, RocCurve> mc;  // by window
    RocCurve baseline_unknown;
    std::map<int, RocCurve> mc_unknown;
    std::vector<FitTraceRow> last_trace;
    std::size_t gain_conflicts = 0;
};

inline std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v;
    for (int k = 0; k < n; ++k) v.push_back(n == 1 ? lo : lo + (hi - lo) * k / (n - 1));
    return v;
}

/// Campaign at one theta followed by baseline and matrix-completion ROCs over
/// the measured frames. Each window in `windows` gets its own mc curve.
inline RocExperiment run_roc_experiment(const ExperimentConfig& cfg, Network& net, double theta,
                                        const std::vector<int>& windows, std::uint64_t seed) {
    RocExperiment out;
    out.theta = theta;
    out.d_thr = net.d_thr;
    const int max_w = windows.empty() ? 1 : *std::max_element(windows.begin(), windows.end());

    ChannelModel model(net.layout, net.params);
    CampaignConfig cc;
    cc.ra = cfg.ra(theta);
    cc.frames = cfg.frames;
    cc.warmup = cfg.warmup;

    std::vector<EvaluatedFrame> frames;
    const auto first_kept = static_cast<std::size_t>(std::max(0, cfg.warmup - (max_w - 1)));
    out.campaign = run_campaign(cc, &model, substream_seed(seed, "campaign"),
                                [&](const FrameResult& res, const FrameState&) {
                                    if (res.frame < first_kept) return;
                                    EvaluatedFrame ef;
                                    ef.frame = res.frame;
                                    ef.obs.devices = res.detected;
                                    ef.obs.omega = build_observations(*res.view, net.rrh_distances,
                                                                      net.params.sectors, net.d_thr);
                                    ef.truth = hypothesis_matrix(res.detected_gains, cfg.gamma_db, net.layout.sector_count());
                                    frames.push_back(std::move(ef));
                                });

    const auto measured_begin = static_cast<std::size_t>(cfg.warmup) - first_kept;

    // Baseline: one coin per unknown cell, reused across alpha.
    const auto alphas = linspace(0.0, 1.0, cfg.alpha_points);
    auto baseline_curve = [&](bool unknown_only) {
        return roc_sweep(
            [&](double alpha) {
                std::vector<FrameRates> per;
                for (std::size_t f = measured_begin; f < frames.size(); ++f) {
                    auto rng = make_rng(seed, "baseline", frames[f].frame);
                    const auto chat = baseline_classify(frames[f].obs.omega, alpha, rng);
                    per.push_back(unknown_only ? unknown_only_rates(chat, frames[f].truth, frames[f].obs.omega)
                                               : rates(chat, frames[f].truth));
                }
                return average_rates(per);
            },
            alphas);
    };
    out.baseline = baseline_curve(false);
    if (cfg.unknown_only) out.baseline_unknown = baseline_curve(true);

    const McParams mp = cfg.mc_params();
    for (int w : windows) {
        std::vector<ScoredFrame> scored, scored_unknown;
        for (std::size_t f = measured_begin; f < frames.size(); ++f) {
            if (frames[f].obs.devices.empty()) continue;  // nothing to classify
            const std::size_t lo = f + 1 >= static_cast<std::size_t>(w) ? f + 1 - static_cast<std::size_t>(w) : 0;
            std::vector<FrameObservations> win;
            for (std::size_t k = lo; k <= f; ++k) win.push_back(frames[k].obs);
            const auto stacked = window_stack(win);
            out.gain_conflicts += stacked.gain_conflicts;
            auto rng = make_rng(seed, "mc-init", frames[f].frame * 16 + static_cast<std::uint64_t>(w));
            const auto fit = mc_fit(stacked.omega, mp, rng);
            out.last_trace = fit.trace;
            const Eigen::MatrixXd pred = select_columns(fit.factors.product(), stacked.current_columns);
            auto score = [&](int i, int j) { return pred(i, j); };
            scored.emplace_back(frames[f].obs.omega, frames[f].truth, score);
            if (cfg.unknown_only) scored_unknown.emplace_back(frames[f].obs.omega, frames[f].truth, score, true);
        }
        const auto grid = quantile_grid(scored, static_cast<std::size_t>(cfg.beta_points));
        out.mc[w] = threshold_roc(scored, grid);
        if (cfg.unknown_only) out.mc_unknown[w] = threshold_roc(scored_unknown, grid);
    }
    return out;
}

struct SummaryRow {
    std::string method;
    double theta = 0.0;
    int window = 1;
    double auc = 0.0;
    double p_d_at_pf_005 = 0.0;
};

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"method", "theta", "window", "auc", "p_d_at_pf_0.05"});
    for (const auto& r : rows) w.row(r.method, r.theta, r.window, r.auc, r.p_d_at_pf_005);
}

inline void write_fit_trace_csv(const std::vector<FitTraceRow>& trace, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"iter", "objective", "normalized_error"});
    for (const auto& r : trace) w.row(r.iter, r.objective, r.normalized_error);
}

inline std::string theta_tag(double theta) { return "theta" + csv::format_double(theta); }

/// Resolves a relative output directory against $CRANRA_OUTPUT_ROOT when set.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / p;
    }
    return p;
}

struct RunSummary {
    std::filesystem::path output_dir;
    std::string config_hash;
    double d_thr = 0.0;
    std::vector<SummaryRow> summary;
};

/// Full pipeline. Outputs go to a staging directory that replaces
/// `output_dir` only when every stage succeeded.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path out = resolve_output_dir(cfg.output_dir);
    const fs::path staging = out.string() + ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging);

    RunSummary result;
    result.output_dir = out;
    result.config_hash = config_hash(cfg);
    try {
        Network net = build_network(cfg);
        result.d_thr = net.d_thr;
        write_layout_csv(net.layout, staging / "layout.csv");
        {
            std::map<DeviceId, std::vector<double>> cols;
            for (int k = 0; k < net.calibration_gains.devices(); ++k) {
                const auto c = net.calibration_gains.values_db.col(k);
                cols[static_cast<DeviceId>(k)] = std::vector<double>(c.data(), c.data() + c.size());
            }
            write_gains_csv(staging / "gains.csv", cols);
        }

        std::vector<int> windows{1};
        if (cfg.window != 1) windows.push_back(cfg.window);
        std::vector<ThroughputRow> throughput;
        for (std::size_t ti = 0; ti < cfg.thetas.size(); ++ti) {
            const double theta = cfg.thetas[ti];
            const auto exp = run_roc_experiment(cfg, net, theta, windows, substream_seed(cfg.seed, "roc", ti));
            const auto tag = theta_tag(theta);
            write_campaign_csv(exp.campaign, staging / ("campaign_" + tag + ".csv"));
            write_roc_csv(exp.baseline, staging / ("roc_baseline_" + tag + ".csv"));
            result.summary.push_back({"baseline", theta, 1, exp.baseline.auc, p_d_at(exp.baseline, 0.05)});
            for (const auto& [w, curve] : exp.mc) {
                write_roc_csv(curve, staging / ("roc_mc_" + tag + "_w" + std::to_string(w) + ".csv"));
                result.summary.push_back({"mc", theta, w, curve.auc, p_d_at(curve, 0.05)});
            }
            if (cfg.unknown_only) {
                result.summary.push_back(
                    {"baseline@unknown", theta, 1, exp.baseline_unknown.auc, p_d_at(exp.baseline_unknown, 0.05)});
                for (const auto& [w, curve] : exp.mc_unknown)
                    result.summary.push_back({"mc@unknown", theta, w, curve.auc, p_d_at(curve, 0.05)});
            }
            write_fit_trace_csv(exp.last_trace, staging / ("fit_trace_" + tag + ".csv"));

            ModelVsSimConfig mv;
            mv.ra = cfg.ra(theta);
            mv.frames = cfg.mvs_frames;
            mv.warmup = cfg.warmup;
            if (cfg.mvs_forced_active > 0) mv.forced_active = cfg.mvs_forced_active;
            else mv.forced_active.reset();
            std::vector<double> ps;
            const double pstar = cfg.access_probability(theta);
            for (double fct : cfg.mvs_p_factors) ps.push_back(std::min(1.0, fct * pstar));
            const double th[] = {theta};
            auto rows = model_vs_sim(th, ps, mv, nullptr, substream_seed(cfg.seed, "mvs", ti));
            throughput.insert(throughput.end(), rows.begin(), rows.end());
            if (cfg.mvs_gscm_frames > 0) {
                ChannelModel model(net.layout, net.params);
                mv.abstract_q = false;
                mv.gscm = true;
                mv.frames = cfg.mvs_gscm_frames;
                auto grows = model_vs_sim(th, ps, mv, &model, substream_seed(cfg.seed, "mvs-gscm", ti));
                throughput.insert(throughput.end(), grows.begin(), grows.end());
            }
        }
        write_summary_csv(result.summary, staging / "summary.csv");
        write_throughput_csv(throughput, staging / "throughput.csv");

        std::ofstream manifest(staging / "manifest.txt", std::ios::binary);
        manifest << "# cranra " << kVersion << "\n"
                 << "# config_hash: " << result.config_hash << "\n"
                 << "# seed: " << cfg.seed << "\n"
                 << "# d_thr: " << csv::format_double(net.d_thr)
                 << (cfg.d_thr ? " (configured)" : " (calibrated)") << "\n"
                 << "# eigen: " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION
                 << "\n"
                 << dump_config(cfg);
        if (!manifest) throw std::runtime_error("failed to write manifest");
    } catch (...) {
        fs::remove_all(staging);
        throw;
    }
    fs::remove_all(out);
    fs::rename(staging, out);
    return result;
}

}  // namespace cranra
