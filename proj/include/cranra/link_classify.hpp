#pragma once

// Sector-device link classification from RA reports.
//
// Observation sets over the V x |D| grid: Omega1 holds links seen strong (with
// their reported gain), Omega0 holds links proven weak either by the pilot
// reports or by inter-RRH distance. The baseline classifier fills the rest with
// alpha-biased coin flips; the matrix-completion classifier fits a rank-r factor
// model Theta X^T to the known cells and thresholds its prediction at beta.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cranra/common.hpp"
#include "cranra/ra_sim.hpp"
#include "cranra/rng.hpp"

namespace cranra {

using HypothesisMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Cell = std::pair<int, int>;  // (sector, device column)

/// C(i, j) = 1 iff G(i, j) >= Gamma, for the given gain columns (dB). `rows`
/// fixes the height when there may be no columns.
inline HypothesisMatrix hypothesis_matrix(const std::vector<std::vector<double>>& columns, double gamma_db,
                                          Eigen::Index rows = -1) {
    if (rows < 0) rows = columns.empty() ? 0 : static_cast<Eigen::Index>(columns.front().size());
    HypothesisMatrix c(rows, static_cast<Eigen::Index>(columns.size()));
    for (Eigen::Index j = 0; j < c.cols(); ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            c(i, j) = columns[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] >= gamma_db ? 1 : 0;
    return c;
}

enum class CellState : std::uint8_t { unknown = 0, strong = 1, weak = 2 };

/// Omega1 and Omega0 on a rows x cols grid. Omega1 wins whenever a cell is
/// added to both.
class ObservationSets {
public:
    ObservationSets() = default;
    ObservationSets(int rows, int cols)
        : rows_(rows), cols_(cols), state_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)),
          gain_(state_.size(), std::numeric_limits<double>::quiet_NaN()) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    void add_strong(int i, int j, double gain_db) {
        const auto k = index(i, j);
        state_[k] = CellState::strong;
        gain_[k] = gain_db;
    }

    void add_weak(int i, int j) {
        const auto k = index(i, j);
        if (state_[k] == CellState::unknown) state_[k] = CellState::weak;
    }

    CellState state(int i, int j) const { return state_[index(i, j)]; }
    double gain(int i, int j) const { return gain_[index(i, j)]; }
    bool known(int i, int j) const { return state(i, j) != CellState::unknown; }

    std::vector<Cell> omega1() const { return cells(CellState::strong); }
    std::vector<Cell> omega0() const { return cells(CellState::weak); }
    std::vector<Cell> unknown() const { return cells(CellState::unknown); }

    std::size_t count(CellState s) const {
        return static_cast<std::size_t>(std::count(state_.begin(), state_.end(), s));
    }

private:
    std::size_t index(int i, int j) const {
        if (i < 0 || i >= rows_ || j < 0 || j >= cols_) throw std::out_of_range("observation cell out of range");
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(rows_) + static_cast<std::size_t>(i);
    }

    std::vector<Cell> cells(CellState s) const {
        std::vector<Cell> out;
        for (int j = 0; j < cols_; ++j)
            for (int i = 0; i < rows_; ++i)
                if (state_[index(i, j)] == s) out.emplace_back(i, j);
        return out;
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<CellState> state_;
    std::vector<double> gain_;
};

/// Omega1: every (sector, device) pair where the sector detected the device.
inline ObservationSets known_strong(const CentralView& view) {
    ObservationSets omega(view.sectors, view.detected_count());
    for (const auto& [cell, g] : view.known_gains) omega.add_strong(cell.first, cell.second, g);
    return omega;
}

/// Weak links implied by the pilot reports: in every slot where device j was
/// detected somewhere, each silent sector and each sector that detected another
/// device has a weak link to j.
inline std::vector<Cell> infer_zeros_pilot(const CentralView& view) {
    std::vector<Cell> out;
    std::vector<std::uint8_t> mark(static_cast<std::size_t>(view.sectors));
    for (int j = 0; j < view.detected_count(); ++j) {
        std::fill(mark.begin(), mark.end(), 0);
        for (int t : view.detection_slots[static_cast<std::size_t>(j)]) {
            for (int v : view.silence[static_cast<std::size_t>(t)]) mark[static_cast<std::size_t>(v)] = 1;
            for (auto [v, jj] : view.slot_detections[static_cast<std::size_t>(t)])
                if (jj != j) mark[static_cast<std::size_t>(v)] = 1;
        }
        for (int v = 0; v < view.sectors; ++v)
            if (mark[static_cast<std::size_t>(v)]) out.emplace_back(v, j);
    }
    return out;
}

/// Weak links implied by geometry: no device is strong to two RRHs more than
/// d_thr apart, so every sector whose RRH is farther than d_thr from the RRH of
/// a detecting sector is weak. Sectors of one RRH are at distance zero.
inline std::vector<Cell> infer_zeros_distance(const CentralView& view, const Eigen::MatrixXd& rrh_distances,
                                              int sectors_per_rrh, double d_thr) {
    if (!(d_thr >= 0.0)) throw ConfigError("d_thr must be >= 0");
    std::vector<Cell> out;
    const auto n_rrh = rrh_distances.rows();
    std::vector<std::uint8_t> far(static_cast<std::size_t>(n_rrh));
    for (int j = 0; j < view.detected_count(); ++j) {
        std::fill(far.begin(), far.end(), 0);
        for (int v : view.detectors[static_cast<std::size_t>(j)]) {
            const int b = v / sectors_per_rrh;
            for (Eigen::Index b2 = 0; b2 < n_rrh; ++b2)
                if (rrh_distances(b, b2) > d_thr) far[static_cast<std::size_t>(b2)] = 1;
        }
        for (int v = 0; v < view.sectors; ++v)
            if (far[static_cast<std::size_t>(v / sectors_per_rrh)]) out.emplace_back(v, j);
    }
    return out;
}

/// Omega1 from the detections plus Omega0 from pilots and, when d_thr is
/// finite, from RRH distances.
inline ObservationSets build_observations(const CentralView& view, const Eigen::MatrixXd& rrh_distances,
                                          int sectors_per_rrh, double d_thr) {
    ObservationSets omega = known_strong(view);
    for (auto [i, j] : infer_zeros_pilot(view)) omega.add_weak(i, j);
    if (std::isfinite(d_thr))
        for (auto [i, j] : infer_zeros_distance(view, rrh_distances, sectors_per_rrh, d_thr)) omega.add_weak(i, j);
    return omega;
}

/// C-hat = 1 on Omega1, 0 on Omega0 and an alpha-biased coin elsewhere. Coins
/// are drawn in column-major cell order, one uniform per unknown cell, so two
/// calls with equal rng state differ only through alpha.
inline HypothesisMatrix baseline_classify(const ObservationSets& omega, double alpha, Rng& rng) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    HypothesisMatrix c(omega.rows(), omega.cols());
    for (int j = 0; j < omega.cols(); ++j) {
        for (int i = 0; i < omega.rows(); ++i) {
            switch (omega.state(i, j)) {
                case CellState::strong: c(i, j) = 1; break;
                case CellState::weak: c(i, j) = 0; break;
                case CellState::unknown: c(i, j) = uniform01(rng) < alpha ? 1 : 0; break;
            }
        }
    }
    return c;
}

// --- Matrix completion -----------------------------------------------------------

enum class SolverMode { gradient, als };

inline SolverMode parse_solver(const std::string& s) {
    if (s == "gradient") return SolverMode::gradient;
    if (s == "als") return SolverMode::als;
    throw ConfigError("solver must be gradient or als, got '" + s + "'");
}

inline const char* to_string(SolverMode m) { return m == SolverMode::gradient ? "gradient" : "als"; }

struct McParams {
    double lambda_reg = 20.0;
    int rank = 200;
    double step = 5e-5;
    int max_iters = 1000;
    double eps_stop = 1e-2;
    double gamma_minus = -18.0;  // target for Omega0 cells (dB)
    SolverMode mode = SolverMode::als;

    void validate() const {
        if (!(lambda_reg > 0.0)) throw ConfigError("lambda_reg must be > 0");
        if (rank < 1) throw ConfigError("rank must be >= 1");
        if (!(step > 0.0)) throw ConfigError("step must be > 0");
        if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
        if (!(eps_stop > 0.0)) throw ConfigError("eps_stop must be > 0");
        if (!std::isfinite(gamma_minus)) throw ConfigError("gamma_minus must be finite");
    }
};

struct FactorPair {
    Eigen::MatrixXd theta;  // V x r
    Eigen::MatrixXd x;      // |D| x r

    Eigen::MatrixXd product() const { return theta * x.transpose(); }
};

/// Dense training data: targets Y and 0/1 weights W over the grid.
struct TrainingData {
    Eigen::MatrixXd target;
    Eigen::MatrixXd weight;
    double denominator = 0.0;  // sum of squared targets over the known cells

    static TrainingData from(const ObservationSets& omega, double gamma_minus) {
        TrainingData d;
        d.target = Eigen::MatrixXd::Zero(omega.rows(), omega.cols());
        d.weight = Eigen::MatrixXd::Zero(omega.rows(), omega.cols());
        for (int j = 0; j < omega.cols(); ++j) {
            for (int i = 0; i < omega.rows(); ++i) {
                const auto s = omega.state(i, j);
                if (s == CellState::unknown) continue;
                const double y = s == CellState::strong ? omega.gain(i, j) : gamma_minus;
                d.target(i, j) = y;
                d.weight(i, j) = 1.0;
                d.denominator += y * y;
            }
        }
        return d;
    }

    std::size_t known() const { return static_cast<std::size_t>(weight.sum()); }
};

struct ObjectiveValue {
    double data = 0.0;  // squared error over known cells
    double total = 0.0; // data + lambda (|Theta|^2 + |X|^2)
};

inline ObjectiveValue objective(const TrainingData& d, const FactorPair& f, double lambda_reg) {
    ObjectiveValue v;
    v.data = (d.weight.array() * (d.target - f.product()).array().square()).sum();
    v.total = v.data + lambda_reg * (f.theta.squaredNorm() + f.x.squaredNorm());
    return v;
}

/// Analytic gradient of the regularized objective: with R = W o (Y - Theta X^T),
/// dTheta = -2 R X + 2 lambda Theta and dX = -2 R^T Theta + 2 lambda X.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> objective_gradient(const TrainingData& d, const FactorPair& f,
                                                                      double lambda_reg) {
    const Eigen::MatrixXd r = (d.weight.array() * (d.target - f.product()).array()).matrix();
    Eigen::MatrixXd g_theta = -2.0 * r * f.x + 2.0 * lambda_reg * f.theta;
    Eigen::MatrixXd g_x = -2.0 * r.transpose() * f.theta + 2.0 * lambda_reg * f.x;
    return {std::move(g_theta), std::move(g_x)};
}

struct FitTraceRow {
    int iter = 0;
    double objective = 0.0;
    double normalized_error = 0.0;
};

struct FitResult {
    FactorPair factors;
    std::vector<FitTraceRow> trace;  // row 0 is the initial point
    bool converged = false;
};

namespace detail {

/// Solves every row of `out` (rows x r) from its own ridge system
///   (lambda I + sum_{j in obs(i)} f_j f_j^T) out_i = sum_j w_ij y_ij f_j.
/// `w`, `y` are rows x n; `f` is n x r.
inline void ridge_rows(const Eigen::MatrixXd& w, const Eigen::MatrixXd& y, const Eigen::MatrixXd& f,
                       double lambda_reg, Eigen::MatrixXd& out) {
    const auto n = f.rows();
    const auto r = f.cols();
    const Eigen::MatrixXd full_gram = f.transpose() * f;
    const Eigen::MatrixXd rhs = f.transpose() * (w.array() * y.array()).matrix().transpose();  // r x rows
    Eigen::MatrixXd a(r, r);
    Eigen::MatrixXd picked;
    std::vector<Eigen::Index> idx;
    idx.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        Eigen::Index observed = 0;
        for (Eigen::Index j = 0; j < n; ++j) observed += w(i, j) != 0.0;
        // Build from whichever side of the mask is smaller.
        const bool from_full = observed * 2 > n;
        idx.clear();
        for (Eigen::Index j = 0; j < n; ++j)
            if ((w(i, j) != 0.0) != from_full) idx.push_back(j);
        picked.resize(static_cast<Eigen::Index>(idx.size()), r);
        for (std::size_t k = 0; k < idx.size(); ++k) picked.row(static_cast<Eigen::Index>(k)) = f.row(idx[k]);
        if (from_full) {
            a = full_gram;
            if (!idx.empty()) a.selfadjointView<Eigen::Lower>().rankUpdate(picked.transpose(), -1.0);
        } else {
            a.setZero();
            if (!idx.empty()) a.selfadjointView<Eigen::Lower>().rankUpdate(picked.transpose(), 1.0);
        }
        a.diagonal().array() += lambda_reg;
        Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(a);
        out.row(i) = llt.solve(rhs.col(i)).transpose();
    }
}

}  // namespace detail

/// Fits Theta X^T to the known cells:
///   min sum_{Omega1} (G - Theta X^T)^2 + sum_{Omega0} (gamma_minus - Theta X^T)^2
///       + lambda (|Theta|_F^2 + |X|_F^2).
/// Stops once the normalized training error drops to eps_stop or after
/// max_iters iterations.
inline FitResult mc_fit(const ObservationSets& omega, const McParams& params, Rng& rng) {
    params.validate();
    if (omega.rows() < 1 || omega.cols() < 1) throw ConfigError("cannot fit an empty matrix");
    const TrainingData data = TrainingData::from(omega, params.gamma_minus);
    if (data.known() == 0) throw ConfigError("cannot fit: no observed cells");

    FitResult res;
    auto& f = res.factors;
    std::normal_distribution<double> init(0.0, 0.1 / std::sqrt(static_cast<double>(params.rank)));
    f.theta.resize(omega.rows(), params.rank);
    f.x.resize(omega.cols(), params.rank);
    for (Eigen::Index k = 0; k < f.theta.size(); ++k) f.theta.data()[k] = init(rng);
    for (Eigen::Index k = 0; k < f.x.size(); ++k) f.x.data()[k] = init(rng);

    const double denom = data.denominator > 0.0 ? data.denominator : 1.0;
    auto record = [&](int iter) {
        const auto obj = objective(data, f, params.lambda_reg);
        if (!std::isfinite(obj.total)) {
            std::ostringstream msg;
            msg << "matrix completion diverged at iteration " << iter << " (step size " << params.step << ")";
            throw SolverDivergence(msg.str());
        }
        res.trace.push_back({iter, obj.total, obj.data / denom});
        return obj.data / denom;
    };

    if (record(0) <= params.eps_stop) {
        res.converged = true;
        return res;
    }
    const Eigen::MatrixXd wt = data.weight.transpose();
    const Eigen::MatrixXd yt = data.target.transpose();
    for (int it = 1; it <= params.max_iters; ++it) {
        if (params.mode == SolverMode::als) {
            detail::ridge_rows(data.weight, data.target, f.x, params.lambda_reg, f.theta);
            detail::ridge_rows(wt, yt, f.theta, params.lambda_reg, f.x);
        } else {
            {
                const Eigen::MatrixXd r = (data.weight.array() * (data.target - f.product()).array()).matrix();
                f.theta -= params.step * (-2.0 * r * f.x + 2.0 * params.lambda_reg * f.theta);
            }
            {
                const Eigen::MatrixXd r = (data.weight.array() * (data.target - f.product()).array()).matrix();
                f.x -= params.step * (-2.0 * r.transpose() * f.theta + 2.0 * params.lambda_reg * f.x);
            }
        }
        if (record(it) <= params.eps_stop) {
            res.converged = true;
            break;
        }
    }
    return res;
}

/// Known cells pass through; unknown cells are strong iff (Theta X^T)(i, j) >= beta.
inline HypothesisMatrix mc_classify(const FactorPair& factors, const ObservationSets& omega, double beta) {
    const Eigen::MatrixXd g = factors.product();
    HypothesisMatrix c(omega.rows(), omega.cols());
    for (int j = 0; j < omega.cols(); ++j) {
        for (int i = 0; i < omega.rows(); ++i) {
            switch (omega.state(i, j)) {
                case CellState::strong: c(i, j) = 1; break;
                case CellState::weak: c(i, j) = 0; break;
                case CellState::unknown: c(i, j) = g(i, j) >= beta ? 1 : 0; break;
            }
        }
    }
    return c;
}

// --- Windowing ---------------------------------------------------------------------

/// One frame's contribution to a window: its detected devices (column order)
/// and its observation sets.
struct FrameObservations {
    std::vector<DeviceId> devices;
    ObservationSets omega;
};

struct WindowedObservations {
    ObservationSets omega;
    std::vector<DeviceId> columns;        // device ID of each merged column
    std::vector<int> current_columns;     // merged column of each current-frame device
    std::size_t gain_conflicts = 0;       // Omega1 cells reported with different gains
};

/// Merges the frames of a window (oldest first, current frame last). A device
/// seen in several frames gets one column; Omega1 wins over Omega0 across frames.
inline WindowedObservations window_stack(std::span<const FrameObservations> frames) {
    if (frames.empty()) throw ConfigError("window needs at least one frame");
    WindowedObservations out;
    std::unordered_map<DeviceId, int> column;
    for (const auto& fr : frames)
        for (DeviceId id : fr.devices)
            if (column.try_emplace(id, static_cast<int>(out.columns.size())).second) out.columns.push_back(id);

    const int rows = frames.back().omega.rows();
    out.omega = ObservationSets(rows, static_cast<int>(out.columns.size()));
    for (const auto& fr : frames) {
        if (fr.omega.rows() != rows) throw ConfigError("window frames disagree on sector count");
        for (int j = 0; j < fr.omega.cols(); ++j) {
            const int c = column.at(fr.devices[static_cast<std::size_t>(j)]);
            for (int i = 0; i < rows; ++i) {
                switch (fr.omega.state(i, j)) {
                    case CellState::strong:
                        if (out.omega.state(i, c) == CellState::strong && out.omega.gain(i, c) != fr.omega.gain(i, j))
                            ++out.gain_conflicts;
                        out.omega.add_strong(i, c, fr.omega.gain(i, j));
                        break;
                    case CellState::weak: out.omega.add_weak(i, c); break;
                    case CellState::unknown: break;
                }
            }
        }
    }
    for (DeviceId id : frames.back().devices) out.current_columns.push_back(column.at(id));
    return out;
}

/// Columns `cols` of m, in that order.
template <class Derived>
auto select_columns(const Eigen::MatrixBase<Derived>& m, std::span<const int> cols) {
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(m.rows(),
                                                                                static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
    return out;
}

/// Observation sets restricted to the given columns.
inline ObservationSets select_columns(const ObservationSets& omega, std::span<const int> cols) {
    ObservationSets out(omega.rows(), static_cast<int>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        for (int i = 0; i < omega.rows(); ++i) {
            const auto s = omega.state(i, cols[k]);
            if (s == CellState::strong) out.add_strong(i, static_cast<int>(k), omega.gain(i, cols[k]));
            else if (s == CellState::weak) out.add_weak(i, static_cast<int>(k));
        }
    }
    return out;
}

}  // namespace cranra
