#include <gtest/gtest.h>

#include "cranra/link_classify.hpp"

using namespace cranra;

namespace {

// Sector 0, 1 strong to device 7; sector 2 strong to device 9.
// Slot 0: both transmit. Slot 1: only 9 transmits.
CentralView consistent_view() {
    RAReport r(3, 2);
    r.set(0, 0, SlotOutcome::detection(7, -6.0));
    r.set(1, 0, SlotOutcome::detection(7, -11.0));
    r.set(2, 0, SlotOutcome::detection(9, -3.0));
    r.set(0, 1, SlotOutcome::silence());
    r.set(1, 1, SlotOutcome::silence());
    r.set(2, 1, SlotOutcome::detection(9, -3.0));
    return merge_reports(r);
}

ObservationSets random_omega(Rng& rng, int rows, int cols, double p_strong, double p_weak) {
    ObservationSets o(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) {
            const double u = uniform01(rng);
            if (u < p_strong) o.add_strong(i, j, -18.0 + 20.0 * uniform01(rng));
            else if (u < p_strong + p_weak) o.add_weak(i, j);
        }
    return o;
}

}  // namespace

TEST(Hypothesis, ThresholdIsInclusive) {
    const auto c = hypothesis_matrix({{-18.0, -18.0001, 0.0}, {-40.0, -17.9, -120.0}}, -18.0);
    ASSERT_EQ(c.rows(), 3);
    ASSERT_EQ(c.cols(), 2);
    EXPECT_EQ(c(0, 0), 1);
    EXPECT_EQ(c(1, 0), 0);
    EXPECT_EQ(c(2, 0), 1);
    EXPECT_EQ(c(0, 1), 0);
    EXPECT_EQ(c(1, 1), 1);
    EXPECT_EQ(c(2, 1), 0);
}

TEST(Observations, StrongTakesPrecedence) {
    ObservationSets o(2, 2);
    o.add_weak(0, 0);
    o.add_strong(0, 0, -5.0);
    o.add_strong(1, 1, -7.0);
    o.add_weak(1, 1);
    EXPECT_EQ(o.state(0, 0), CellState::strong);
    EXPECT_EQ(o.state(1, 1), CellState::strong);
    EXPECT_EQ(o.gain(1, 1), -7.0);
    EXPECT_EQ(o.count(CellState::strong), 2u);
    EXPECT_EQ(o.count(CellState::unknown), 2u);
    EXPECT_TRUE(o.omega0().empty());
}

TEST(Observations, PilotInferenceOnFixture) {
    const auto view = consistent_view();
    ASSERT_EQ(view.detected, (std::vector<DeviceId>{7, 9}));
    const auto omega1 = known_strong(view);
    EXPECT_EQ(omega1.omega1(), (std::vector<Cell>{{0, 0}, {1, 0}, {2, 1}}));
    EXPECT_EQ(omega1.gain(1, 0), -11.0);
    auto zeros = infer_zeros_pilot(view);
    std::sort(zeros.begin(), zeros.end());
    EXPECT_EQ(zeros, (std::vector<Cell>{{0, 1}, {1, 1}, {2, 0}}));
    const auto omega = build_observations(view, Eigen::MatrixXd::Zero(3, 3), 1, INFINITY);
    EXPECT_EQ(omega.count(CellState::unknown), 0u);
}

TEST(Observations, DistanceInference) {
    const auto view = consistent_view();
    Eigen::MatrixXd d(3, 3);
    d << 0, 10, 100,
         10, 0, 95,
         100, 95, 0;
    auto z = infer_zeros_distance(view, d, 1, 50.0);
    std::sort(z.begin(), z.end());
    EXPECT_EQ(z, (std::vector<Cell>{{0, 1}, {1, 1}, {2, 0}}));
    EXPECT_TRUE(infer_zeros_distance(view, d, 1, 100.0).empty());  // strictly farther only
    EXPECT_THROW(infer_zeros_distance(view, d, 1, -1.0), ConfigError);
}

TEST(Observations, DistanceInferenceGroupsSectorsByRrh) {
    // 2 RRHs x 2 sectors; device detected by sector 1 (RRH 0) only
    RAReport r(4, 1);
    r.set(0, 0, SlotOutcome::collision());
    r.set(1, 0, SlotOutcome::detection(3, -2.0));
    r.set(2, 0, SlotOutcome::collision());
    r.set(3, 0, SlotOutcome::collision());
    const auto view = merge_reports(r);
    Eigen::MatrixXd d(2, 2);
    d << 0, 80, 80, 0;
    const auto omega = build_observations(view, d, 2, 40.0);
    EXPECT_EQ(omega.state(0, 0), CellState::unknown);
    EXPECT_EQ(omega.state(1, 0), CellState::strong);
    EXPECT_EQ(omega.state(2, 0), CellState::weak);
    EXPECT_EQ(omega.state(3, 0), CellState::weak);
}

TEST(Baseline, EndpointsPassThroughAndStatistics) {
    auto rng0 = make_rng(1, "omega");
    const auto omega = random_omega(rng0, 60, 80, 0.1, 0.3);
    auto r0 = make_rng(2, "b");
    const auto c0 = baseline_classify(omega, 0.0, r0);
    auto r1 = make_rng(2, "b");
    const auto c1 = baseline_classify(omega, 1.0, r1);
    auto rh = make_rng(2, "b");
    const auto ch = baseline_classify(omega, 0.3, rh);
    std::size_t unknown = 0, ones = 0;
    for (int j = 0; j < omega.cols(); ++j)
        for (int i = 0; i < omega.rows(); ++i) {
            const auto s = omega.state(i, j);
            if (s == CellState::strong) {
                EXPECT_EQ(c0(i, j), 1);
                EXPECT_EQ(ch(i, j), 1);
            } else if (s == CellState::weak) {
                EXPECT_EQ(c1(i, j), 0);
                EXPECT_EQ(ch(i, j), 0);
            } else {
                EXPECT_EQ(c0(i, j), 0);
                EXPECT_EQ(c1(i, j), 1);
                EXPECT_LE(ch(i, j), c1(i, j));
                ++unknown;
                ones += ch(i, j);
            }
        }
    const double n = static_cast<double>(unknown);
    EXPECT_NEAR(ones / n, 0.3, 5.0 * std::sqrt(0.3 * 0.7 / n));
    auto bad = make_rng(0, "x");
    EXPECT_THROW(baseline_classify(omega, 1.5, bad), ConfigError);
}

TEST(Baseline, CoupledAcrossAlpha) {
    auto rng0 = make_rng(3, "omega");
    const auto omega = random_omega(rng0, 20, 30, 0.1, 0.3);
    HypothesisMatrix prev;
    for (double a : {0.0, 0.2, 0.5, 0.8, 1.0}) {
        auto rng = make_rng(9, "b");
        const auto c = baseline_classify(omega, a, rng);
        if (prev.size()) {
            EXPECT_TRUE((c.array() >= prev.array()).all());
        }
        prev = c;
    }
}

TEST(Completion, DefaultsFollowParameterTable) {
    McParams p;
    EXPECT_EQ(p.lambda_reg, 20.0);
    EXPECT_EQ(p.rank, 200);
    EXPECT_EQ(p.step, 5e-5);
    EXPECT_EQ(p.max_iters, 1000);
    EXPECT_EQ(p.eps_stop, 1e-2);
    EXPECT_EQ(p.gamma_minus, -18.0);
    EXPECT_EQ(parse_solver("gradient"), SolverMode::gradient);
    EXPECT_THROW(parse_solver("sgd"), ConfigError);
    p.rank = 0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Completion, GradientMatchesCentralDifferences) {
    auto rng = make_rng(4, "grad");
    for (int trial = 0; trial < 5; ++trial) {
        const auto omega = random_omega(rng, 8, 6, 0.4, 0.3);
        const auto data = TrainingData::from(omega, -18.0);
        FactorPair f{Eigen::MatrixXd::Random(8, 3), Eigen::MatrixXd::Random(6, 3)};
        const double lambda = 0.7;
        const auto [gt, gx] = objective_gradient(data, f, lambda);
        const double h = 1e-5;
        auto check = [&](Eigen::MatrixXd& m, const Eigen::MatrixXd& g) {
            for (Eigen::Index k = 0; k < m.size(); ++k) {
                const double keep = m.data()[k];
                m.data()[k] = keep + h;
                const double up = objective(data, f, lambda).total;
                m.data()[k] = keep - h;
                const double dn = objective(data, f, lambda).total;
                m.data()[k] = keep;
                const double fd = (up - dn) / (2.0 * h);
                EXPECT_NEAR(g.data()[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
            }
        };
        check(f.theta, gt);
        check(f.x, gx);
    }
}

TEST(Completion, AlsObjectiveNonIncreasing) {
    auto rng = make_rng(5, "als");
    const auto omega = random_omega(rng, 40, 50, 0.2, 0.4);
    McParams p;
    p.rank = 6;
    p.lambda_reg = 0.5;
    p.max_iters = 40;
    p.eps_stop = 1e-12;
    auto init = make_rng(6, "init");
    const auto fit = mc_fit(omega, p, init);
    ASSERT_EQ(fit.trace.size(), 41u);
    EXPECT_FALSE(fit.converged);
    for (std::size_t k = 1; k < fit.trace.size(); ++k)
        EXPECT_LE(fit.trace[k].objective, fit.trace[k - 1].objective * (1.0 + 1e-12));
}

TEST(Completion, RecoversRankOneMatrix) {
    auto rng = make_rng(7, "r1");
    const int rows = 30, cols = 40;
    Eigen::VectorXd u(rows), v(cols);
    for (int i = 0; i < rows; ++i) u(i) = -2.0 - 3.0 * uniform01(rng);
    for (int j = 0; j < cols; ++j) v(j) = 2.0 + 3.0 * uniform01(rng);
    const Eigen::MatrixXd g = u * v.transpose();
    ObservationSets omega(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
            if (uniform01(rng) < 0.6) omega.add_strong(i, j, g(i, j));
    McParams p;
    p.rank = 1;
    p.lambda_reg = 1e-6;
    p.eps_stop = 1e-14;
    p.max_iters = 200;
    auto init = make_rng(8, "init");
    const auto fit = mc_fit(omega, p, init);
    const Eigen::MatrixXd est = fit.factors.product();
    double num = 0.0, den = 0.0;
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
            if (!omega.known(i, j)) {
                num += std::pow(est(i, j) - g(i, j), 2);
                den += g(i, j) * g(i, j);
            }
    EXPECT_LT(std::sqrt(num / den), 1e-4);
}

TEST(Completion, GradientModeDescendsAndConverges) {
    auto rng = make_rng(9, "gd");
    const auto omega = random_omega(rng, 20, 25, 0.3, 0.3);
    McParams p;
    p.mode = SolverMode::gradient;
    p.rank = 4;
    p.lambda_reg = 1.0;
    p.step = 1e-4;
    p.max_iters = 300;
    p.eps_stop = 1e-12;
    auto init = make_rng(10, "init");
    const auto fit = mc_fit(omega, p, init);
    EXPECT_LT(fit.trace.back().objective, 0.5 * fit.trace.front().objective);
    for (std::size_t k = 1; k < fit.trace.size(); ++k)
        EXPECT_LE(fit.trace[k].objective, fit.trace[k - 1].objective * (1.0 + 1e-9));
}

TEST(Completion, DivergenceNamesStepSize) {
    auto rng = make_rng(11, "div");
    const auto omega = random_omega(rng, 20, 25, 0.3, 0.3);
    McParams p;
    p.mode = SolverMode::gradient;
    p.rank = 4;
    p.step = 10.0;
    p.max_iters = 500;
    auto init = make_rng(12, "init");
    try {
        mc_fit(omega, p, init);
        FAIL() << "expected divergence";
    } catch (const SolverDivergence& e) {
        EXPECT_NE(std::string(e.what()).find("step size 10"), std::string::npos) << e.what();
    }
}

TEST(Completion, EmptyInputsRejected) {
    McParams p;
    auto rng = make_rng(0, "e");
    EXPECT_THROW(mc_fit(ObservationSets(0, 0), p, rng), ConfigError);
    EXPECT_THROW(mc_fit(ObservationSets(3, 3), p, rng), ConfigError);
}

TEST(Completion, ClassifyPassesKnownCellsThrough) {
    auto rng = make_rng(13, "cls");
    const auto omega = random_omega(rng, 10, 12, 0.2, 0.3);
    FactorPair f{Eigen::MatrixXd::Random(10, 2) * 10.0, Eigen::MatrixXd::Random(12, 2)};
    const Eigen::MatrixXd g = f.product();
    for (double beta : {-1e9, -18.0, 0.0, 1e9}) {
        const auto c = mc_classify(f, omega, beta);
        for (int j = 0; j < 12; ++j)
            for (int i = 0; i < 10; ++i) {
                const auto s = omega.state(i, j);
                if (s == CellState::strong) EXPECT_EQ(c(i, j), 1);
                else if (s == CellState::weak) EXPECT_EQ(c(i, j), 0);
                else EXPECT_EQ(c(i, j), g(i, j) >= beta ? 1 : 0);
            }
    }
}

TEST(Window, StacksFramesAndPrefersStrong) {
    FrameObservations older{{5, 6}, ObservationSets(3, 2)};
    older.omega.add_strong(0, 0, -4.0);
    older.omega.add_weak(1, 0);
    older.omega.add_weak(2, 1);
    FrameObservations current{{8, 5}, ObservationSets(3, 2)};
    current.omega.add_weak(0, 1);          // device 5: weak here, strong earlier
    current.omega.add_strong(1, 1, -9.0);  // device 5: strong here, weak earlier
    current.omega.add_strong(2, 0, -1.0);
    const FrameObservations frames[] = {older, current};
    const auto w = window_stack(frames);
    EXPECT_EQ(w.columns, (std::vector<DeviceId>{5, 6, 8}));
    EXPECT_EQ(w.current_columns, (std::vector<int>{2, 0}));
    EXPECT_EQ(w.omega.state(0, 0), CellState::strong);
    EXPECT_EQ(w.omega.state(1, 0), CellState::strong);
    EXPECT_EQ(w.omega.gain(1, 0), -9.0);
    EXPECT_EQ(w.omega.state(2, 1), CellState::weak);
    EXPECT_EQ(w.omega.state(2, 2), CellState::strong);
    EXPECT_EQ(w.gain_conflicts, 0u);

    FrameObservations again{{5}, ObservationSets(3, 1)};
    again.omega.add_strong(0, 0, -3.0);
    const FrameObservations conflict[] = {older, again};
    EXPECT_EQ(window_stack(conflict).gain_conflicts, 1u);

    const auto sel = select_columns(w.omega, w.current_columns);
    EXPECT_EQ(sel.cols(), 2);
    EXPECT_EQ(sel.state(2, 0), CellState::strong);
    EXPECT_EQ(sel.state(0, 1), CellState::strong);
    const Eigen::MatrixXd m = Eigen::MatrixXd::Random(3, 3);
    const Eigen::MatrixXd s = select_columns(m, w.current_columns);
    EXPECT_EQ(s.col(0), m.col(2));
    EXPECT_EQ(s.col(1), m.col(0));
}

TEST(Window, SingleFrameIsIdentity) {
    auto rng = make_rng(14, "w1");
    FrameObservations f{{10, 11, 12}, random_omega(rng, 5, 3, 0.3, 0.3)};
    const FrameObservations frames[] = {f};
    const auto w = window_stack(frames);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 5; ++i) EXPECT_EQ(w.omega.state(i, j), f.omega.state(i, j));
    EXPECT_EQ(w.current_columns, (std::vector<int>{0, 1, 2}));
    EXPECT_THROW(window_stack(std::span<const FrameObservations>()), ConfigError);
}
