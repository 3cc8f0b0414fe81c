// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cranra/harness.hpp"

using namespace cranra;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1. closed-form operating point
Verdict formulas() {
    const double p = p_star(0.99, 500.0, 0.2);
    const double out = model_lambda_out(p, 100, 506.0);
    const bool ok = std::abs(p - 0.045007) <= 1e-5 && std::abs(out - 500.9) <= 0.1;
    return {ok, "p*=" + fmt(p, 8) + " lambda_out=" + fmt(out, 8)};
}

// 2. abstract-q simulation against the model on a 3 x 3 grid
Verdict model_vs_simulation() {
    ExperimentConfig cfg;
    ModelVsSimConfig mv;
    mv.frames = 500;
    mv.warmup = 20;
    mv.forced_active = 506;
    double worst = 0.0;
    int rows = 0;
    for (double theta : {0.2, 0.5, 1.0}) {
        mv.ra = cfg.ra(theta);
        const double ps[] = {0.5 * mv.ra.p, mv.ra.p, 2.0 * mv.ra.p};
        const double th[] = {theta};
        for (const auto& r : model_vs_sim(th, ps, mv, nullptr, substream_seed(cfg.seed, "acceptance.mvs"))) {
            worst = std::max(worst, std::abs(r.lambda_out_sim - r.lambda_out_model) / r.stderr_);
            ++rows;
        }
    }
    return {rows == 9 && worst <= 3.0, "max |z| over " + std::to_string(rows) + " points = " + fmt(worst, 4)};
}

// 3. queue stability on the geometric channel
Verdict queue_stability() {
    ExperimentConfig cfg;
    Network net = build_network(cfg);
    ChannelModel model(net.layout, net.params);
    CampaignConfig cc;
    cc.ra = cfg.ra(1.0);
    cc.frames = 200;
    cc.warmup = 20;
    const auto stats = run_campaign(cc, &model, substream_seed(cfg.seed, "acceptance.stability"));
    const auto q = stats.queue_series();
    const auto trend = linear_trend(q);
    const double ratio = stats.lambda_out / stats.lambda_in;
    const bool ok = trend.slope <= trend.slope_stderr && ratio >= 0.9 && ratio <= 1.1;
    return {ok, "slope=" + fmt(trend.slope, 4) + " se=" + fmt(trend.slope_stderr, 4) +
                    " lambda_out/lambda_in=" + fmt(ratio, 5) + " lambda_ra=" + fmt(stats.lambda_ra, 5) +
                    " uncovered=" + std::to_string(stats.uncovered)};
}

// 4. no false observations
Verdict inference_soundness() {
    ExperimentConfig cfg;
    Network net = build_network(cfg);
    ChannelModel model(net.layout, net.params);
    CampaignConfig cc;
    cc.ra = cfg.ra(0.2);
    cc.frames = 10;
    cc.warmup = 0;
    std::size_t false_strong = 0, false_weak_pilot = 0, cells1 = 0, cells0 = 0;
    run_campaign(cc, &model, substream_seed(cfg.seed, "acceptance.soundness"),
                 [&](const FrameResult& r, const FrameState&) {
                     const auto truth = hypothesis_matrix(r.detected_gains, cfg.gamma_db, net.layout.sector_count());
                     for (auto [i, j] : known_strong(*r.view).omega1()) {
                         ++cells1;
                         false_strong += truth(i, j) == 0;
                     }
                     for (auto [i, j] : infer_zeros_pilot(*r.view)) {
                         ++cells0;
                         false_weak_pilot += truth(i, j) != 0;
                     }
                 });
    // Distance zeros on the calibration draw: pretend each strong sector detected the device.
    const auto& G = net.calibration_gains;
    const int S = net.layout.sectors_per_rrh;
    std::size_t false_weak_dist = 0, cells_dist = 0;
    for (int k = 0; k < G.devices(); ++k) {
        std::vector<std::uint8_t> far(static_cast<std::size_t>(net.layout.rrh_count()), 0);
        for (int v = 0; v < G.sectors(); ++v) {
            if (G.values_db(v, k) < cfg.gamma_db) continue;
            for (int b = 0; b < net.layout.rrh_count(); ++b)
                if (net.rrh_distances(v / S, b) > net.d_thr) far[static_cast<std::size_t>(b)] = 1;
        }
        for (int v = 0; v < G.sectors(); ++v) {
            if (!far[static_cast<std::size_t>(v / S)]) continue;
            ++cells_dist;
            false_weak_dist += G.values_db(v, k) >= cfg.gamma_db;
        }
    }
    const bool ok = false_strong == 0 && false_weak_pilot == 0 && false_weak_dist == 0 && cells1 > 0 && cells0 > 0 &&
                    cells_dist > 0;
    return {ok, "omega1 " + std::to_string(false_strong) + "/" + std::to_string(cells1) + ", pilot zeros " +
                    std::to_string(false_weak_pilot) + "/" + std::to_string(cells0) + ", distance zeros " +
                    std::to_string(false_weak_dist) + "/" + std::to_string(cells_dist) + " (d_thr=" +
                    fmt(net.d_thr, 5) + ")"};
}

// 5. baseline ROC endpoints
Verdict baseline_endpoints() {
    ExperimentConfig cfg;
    Network net = build_network(cfg);
    ChannelModel model(net.layout, net.params);

    // d_thr calibrated on a different device draw over the same layout
    NetworkLayout other = net.layout;
    {
        auto rng = make_rng(cfg.seed, "acceptance.other-draw");
        other.device_positions = detail::uniform_points(rng, cfg.geometry.devices, cfg.geometry.area_side);
    }
    const double d_other = calibrate_d_thr(gain_matrix(other, net.params), other, cfg.gamma_db).d_thr;

    CampaignConfig cc;
    cc.ra = cfg.ra(0.2);
    cc.frames = 10;
    cc.warmup = 0;
    std::vector<FrameRates> a0, a1_inf, a1_fin;
    std::uint64_t f = 0;
    run_campaign(cc, &model, substream_seed(cfg.seed, "acceptance.baseline"),
                 [&](const FrameResult& r, const FrameState&) {
                     const auto truth = hypothesis_matrix(r.detected_gains, cfg.gamma_db, net.layout.sector_count());
                     const auto omega_inf = build_observations(*r.view, net.rrh_distances, 4, INFINITY);
                     const auto omega_fin = build_observations(*r.view, net.rrh_distances, 4, d_other);
                     auto rng0 = make_rng(cfg.seed, "acceptance.baseline.coins", f);
                     a0.push_back(rates(baseline_classify(omega_fin, 0.0, rng0), truth));
                     auto rng1 = make_rng(cfg.seed, "acceptance.baseline.coins", f);
                     a1_inf.push_back(rates(baseline_classify(omega_inf, 1.0, rng1), truth));
                     auto rng2 = make_rng(cfg.seed, "acceptance.baseline.coins", f);
                     a1_fin.push_back(rates(baseline_classify(omega_fin, 1.0, rng2), truth));
                     ++f;
                 });
    const auto r0 = average_rates(a0);
    const auto r1 = average_rates(a1_inf);
    const auto rf = average_rates(a1_fin);
    const bool ok = r0.p_f == 0.0 && r1.p_d == 1.0 && rf.p_d < 1.0;
    return {ok, "alpha=0 P_F=" + fmt(r0.p_f) + "; alpha=1 P_D=" + fmt(r1.p_d, 10) + " (d_thr=inf), " +
                    fmt(rf.p_d, 10) + " (d_thr=" + fmt(d_other, 5) + " from another draw)"};
}

// 6. rank-2 recovery
Verdict completion_oracle() {
    const int rows = 400, cols = 500;
    auto rng = make_rng(6, "acceptance.rank2");
    std::normal_distribution<double> n01;
    Eigen::MatrixXd u(rows, 2), v(cols, 2);
    for (int i = 0; i < rows; ++i) u.row(i) << 1.0, n01(rng);
    for (int j = 0; j < cols; ++j) v.row(j) << -25.0 + 5.0 * n01(rng), 5.0 * n01(rng);
    const Eigen::MatrixXd g = u * v.transpose();
    ObservationSets omega(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
            if (uniform01(rng) < 0.6) omega.add_strong(i, j, g(i, j));
    McParams p;
    p.lambda_reg = 1e-6;
    p.rank = 2;
    p.mode = SolverMode::als;
    p.eps_stop = 1e-12;
    p.max_iters = 1000;
    auto init = make_rng(6, "acceptance.rank2.init");
    const auto fit = mc_fit(omega, p, init);
    const Eigen::MatrixXd est = fit.factors.product();
    double num = 0.0, den = 0.0;
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
            if (!omega.known(i, j)) {
                num += std::pow(est(i, j) - g(i, j), 2);
                den += g(i, j) * g(i, j);
            }
    const double err = std::sqrt(num / den);
    return {err <= 1e-2, "held-out relative error " + fmt(err, 3) + " after " +
                             std::to_string(fit.trace.back().iter) + " iterations"};
}

// 7. analytic vs central-difference gradient
Verdict gradient_check() {
    auto rng = make_rng(7, "acceptance.grad");
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        ObservationSets omega(8, 6);
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 8; ++i) {
                const double w = uniform01(rng);
                if (w < 0.4) omega.add_strong(i, j, -18.0 + 15.0 * uniform01(rng));
                else if (w < 0.7) omega.add_weak(i, j);
            }
        const auto data = TrainingData::from(omega, -18.0);
        FactorPair f{Eigen::MatrixXd(8, 3), Eigen::MatrixXd(6, 3)};
        std::normal_distribution<double> n01;
        for (Eigen::Index k = 0; k < f.theta.size(); ++k) f.theta.data()[k] = n01(rng);
        for (Eigen::Index k = 0; k < f.x.size(); ++k) f.x.data()[k] = n01(rng);
        const double lambda = 20.0;
        const auto [gt, gx] = objective_gradient(data, f, lambda);
        auto fd = [&](Eigen::MatrixXd& m) {
            Eigen::MatrixXd out(m.rows(), m.cols());
            const double h = 1e-5;
            for (Eigen::Index k = 0; k < m.size(); ++k) {
                const double keep = m.data()[k];
                m.data()[k] = keep + h;
                const double up = objective(data, f, lambda).total;
                m.data()[k] = keep - h;
                const double dn = objective(data, f, lambda).total;
                m.data()[k] = keep;
                out.data()[k] = (up - dn) / (2.0 * h);
            }
            return out;
        };
        const Eigen::MatrixXd ft = fd(f.theta);
        const Eigen::MatrixXd fx = fd(f.x);
        worst = std::max(worst, (gt - ft).norm() / ft.norm());
        worst = std::max(worst, (gx - fx).norm() / fx.norm());
    }
    return {worst <= 1e-5, "max relative error " + fmt(worst, 3)};
}

// 8. ROC dominance at theta = 0.2
Verdict roc_dominance() {
    double base = 0.0, w1 = 0.0, w2 = 0.0;
    std::string per_seed;
    const int seeds = 5;
    for (int s = 1; s <= seeds; ++s) {
        ExperimentConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(s);
        Network net = build_network(cfg);
        const auto exp = run_roc_experiment(cfg, net, 0.2, {1, 2}, substream_seed(cfg.seed, "roc", 0));
        base += exp.baseline.auc;
        w1 += exp.mc.at(1).auc;
        w2 += exp.mc.at(2).auc;
        per_seed += " [" + fmt(exp.baseline.auc, 4) + " " + fmt(exp.mc.at(1).auc, 4) + " " +
                    fmt(exp.mc.at(2).auc, 4) + "]";
    }
    base /= seeds;
    w1 /= seeds;
    w2 /= seeds;
    const bool ok = w1 - base >= 0.02 && w2 >= w1 - 0.01 && w2 - w1 >= 0.0;
    return {ok, "mean AUC baseline=" + fmt(base, 4) + " mc(W=1)=" + fmt(w1, 4) + " mc(W=2)=" + fmt(w2, 4) +
                    "; per seed [baseline W1 W2]" + per_seed};
}

// 9. byte-identical reruns
Verdict determinism() {
    ExperimentConfig cfg;
    cfg.output_dir = (fs::temp_directory_path() / "cranra_acceptance_determinism").string();
    auto snapshot = [&] {
        std::map<std::string, std::string> files;
        for (const auto& e : fs::directory_iterator(cfg.output_dir)) {
            std::ifstream in(e.path(), std::ios::binary);
            std::ostringstream s;
            s << in.rdbuf();
            files[e.path().filename().string()] = s.str();
        }
        return files;
    };
    const auto a = run_experiment(cfg);
    const auto first = snapshot();
    const auto b = run_experiment(cfg);
    const auto second = snapshot();
    fs::remove_all(cfg.output_dir);
    const bool ok = first == second && a.config_hash == b.config_hash && first.count("summary.csv") &&
                    first.count("manifest.txt");
    return {ok, std::to_string(first.size()) + " files compared, config hash " + a.config_hash};
}

// 10. sector partition identity
Verdict partition_identity() {
    ChannelParams params;
    GeometryConfig geo;
    geo.rrhs = 20;
    geo.devices = 3000;
    geo.scatterers = 20;
    geo.blockers = 50;
    const auto layout = drop_entities(params, geo, 10);
    auto rng = make_rng(10, "acceptance.partition");
    BeamResponse beams(params.antennas, params.d_ant_over_lambda);
    double worst = 0.0;
    int links = 0;
    for (int k = 0; k < layout.device_count() && links < 1000; ++k) {
        const int b = static_cast<int>(rng() % static_cast<std::uint64_t>(layout.rrh_count()));
        const auto paths = enumerate_paths(layout, b, k, params);
        if (paths.empty()) continue;
        const double rot = layout.sector_orientations[static_cast<std::size_t>(b)];
        const auto K = covariance(paths, params.antennas, params.d_ant_over_lambda, rot);
        const double tr = K.trace().real();
        double sum = 0.0;
        for (int s = 0; s < params.sectors; ++s) sum += sector_gain(K, s, params.antennas, params.sectors);
        std::vector<double> fast(static_cast<std::size_t>(params.sectors), 0.0);
        accumulate_sector_gains(paths, rot, params.sectors, beams, fast);
        double fast_sum = 0.0;
        for (double x : fast) fast_sum += x;
        worst = std::max({worst, std::abs(sum - tr) / tr, std::abs(fast_sum - tr) / tr});
        ++links;
    }
    return {links == 1000 && worst <= 1e-9,
            std::to_string(links) + " links, max relative deviation " + fmt(worst, 3)};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "operating-point formulas", 1.0, formulas},
        {2, "model vs simulation (abstract-q)", 120.0, model_vs_simulation},
        {3, "queue stability (GSCM, theta=1)", 600.0, queue_stability},
        {4, "inference soundness", 300.0, inference_soundness},
        {5, "baseline ROC endpoints", 300.0, baseline_endpoints},
        {6, "matrix-completion rank-2 oracle", 120.0, completion_oracle},
        {7, "gradient check", 1.0, gradient_check},
        {8, "ROC dominance (theta=0.2, 5 seeds)", 1800.0, roc_dominance},
        {9, "determinism of run", 1800.0, determinism},
        {10, "partition identity", 1.0, partition_identity},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double dt = seconds_since(t0);
        const bool in_time = dt <= c.budget_s;
        const bool pass = v.pass && in_time;
        failed += !pass;
        std::printf("%s criterion %d: %s: %s [%.2fs of %.0fs budget%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    v.detail.c_str(), dt, c.budget_s, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
