#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cranra/csv.hpp"
#include "cranra/link_classify.hpp"
#include "cranra/ra_sim.hpp"

namespace cranra {

/// Detection and false-alarm ratios of one frame.
struct FrameRates {
    double p_d = 0.0;
    double p_f = 0.0;
    bool has_pos = false;  // frame has at least one true-strong cell
    bool has_neg = false;  // frame has at least one true-weak cell
};

struct RateCounts {
    std::size_t tp = 0, pos = 0, fp = 0, neg = 0;

    FrameRates ratios() const {
        FrameRates r;
        r.has_pos = pos > 0;
        r.has_neg = neg > 0;
        r.p_d = r.has_pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
        r.p_f = r.has_neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0;
        return r;
    }
};

/// P_D = #{C-hat=1, C=1} / #{C=1} and P_F = #{C-hat=1, C=0} / #{C=0} over all
/// cells; with `only` set, over the cells for which only(i, j) is true.
template <class Pred = std::nullptr_t>
FrameRates rates(const HypothesisMatrix& chat, const HypothesisMatrix& c, Pred only = nullptr) {
    if (chat.rows() != c.rows() || chat.cols() != c.cols())
        throw ConfigError("rates: estimated and true hypothesis matrices differ in shape");
    RateCounts n;
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        for (Eigen::Index i = 0; i < c.rows(); ++i) {
            if constexpr (!std::is_same_v<Pred, std::nullptr_t>) {
                if (!only(static_cast<int>(i), static_cast<int>(j))) continue;
            }
            if (c(i, j)) {
                ++n.pos;
                n.tp += chat(i, j) != 0;
            } else {
                ++n.neg;
                n.fp += chat(i, j) != 0;
            }
        }
    }
    return n.ratios();
}

/// Rates restricted to the cells left unknown by the observation sets.
inline FrameRates unknown_only_rates(const HypothesisMatrix& chat, const HypothesisMatrix& c,
                                     const ObservationSets& omega) {
    return rates(chat, c, [&](int i, int j) { return !omega.known(i, j); });
}

struct CampaignRates {
    double p_d = 0.0;
    double p_f = 0.0;
    std::size_t frames_d = 0;    // frames averaged into p_d
    std::size_t frames_f = 0;
    std::size_t excluded_d = 0;  // frames without a true-strong cell
    std::size_t excluded_f = 0;
};

/// Averages per-frame ratios; frames with an empty denominator are excluded
/// from the corresponding average.
inline CampaignRates average_rates(std::span<const FrameRates> frames) {
    CampaignRates out;
    for (const auto& f : frames) {
        if (f.has_pos) {
            out.p_d += f.p_d;
            ++out.frames_d;
        } else {
            ++out.excluded_d;
        }
        if (f.has_neg) {
            out.p_f += f.p_f;
            ++out.frames_f;
        } else {
            ++out.excluded_f;
        }
    }
    if (out.frames_d) out.p_d /= static_cast<double>(out.frames_d);
    if (out.frames_f) out.p_f /= static_cast<double>(out.frames_f);
    return out;
}

// --- ROC ------------------------------------------------------------------------

struct RocPoint {
    double p_f = 0.0;
    double p_d = 0.0;
    double control = 0.0;  // alpha or beta
};

struct RocCurve {
    std::vector<RocPoint> points;  // sorted by p_f, then p_d
    double auc = 0.0;
};

/// Trapezoid area under sorted points. The curve starts at p_f = 0 with the
/// p_d of its leftmost point and ends at its rightmost point.
inline double trapezoid_auc(std::span<const RocPoint> sorted) {
    if (sorted.empty()) return 0.0;
    double area = sorted.front().p_f * sorted.front().p_d;
    for (std::size_t k = 1; k < sorted.size(); ++k)
        area += (sorted[k].p_f - sorted[k - 1].p_f) * 0.5 * (sorted[k].p_d + sorted[k - 1].p_d);
    return area;
}

inline RocCurve make_curve(std::vector<RocPoint> points) {
    std::stable_sort(points.begin(), points.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.p_f < b.p_f || (a.p_f == b.p_f && a.p_d < b.p_d);
    });
    RocCurve curve;
    curve.auc = trapezoid_auc(points);
    curve.points = std::move(points);
    return curve;
}

/// Evaluates `rates_at(control) -> CampaignRates` for every control value.
template <class RatesAt>
RocCurve roc_sweep(RatesAt&& rates_at, std::span<const double> controls) {
    if (controls.size() < 2) throw ConfigError("roc_sweep needs at least two control values");
    std::vector<RocPoint> pts;
    pts.reserve(controls.size());
    for (double c : controls) {
        const CampaignRates r = rates_at(c);
        pts.push_back({r.p_f, r.p_d, c});
    }
    return make_curve(std::move(pts));
}

/// Interpolated p_d at a target false-alarm rate on a sorted curve.
inline double p_d_at(const RocCurve& curve, double p_f) {
    const auto& pts = curve.points;
    if (pts.empty()) return 0.0;
    if (p_f <= pts.front().p_f) return pts.front().p_d;
    for (std::size_t k = 1; k < pts.size(); ++k) {
        if (pts[k].p_f >= p_f) {
            const double span = pts[k].p_f - pts[k - 1].p_f;
            if (span <= 0.0) return pts[k].p_d;
            const double w = (p_f - pts[k - 1].p_f) / span;
            return pts[k - 1].p_d + w * (pts[k].p_d - pts[k - 1].p_d);
        }
    }
    return pts.back().p_d;
}

/// Per-frame data for threshold classifiers (known cells fixed, unknown cells
/// strong iff score >= control), so a whole ROC costs one sort per frame.
class ScoredFrame {
public:
    /// Scores are read from `score(i, j)` for the unknown cells of `omega`.
    template <class Score>
    ScoredFrame(const ObservationSets& omega, const HypothesisMatrix& c, Score&& score, bool unknown_only = false) {
        std::vector<std::pair<double, std::uint8_t>> s;
        for (int j = 0; j < omega.cols(); ++j) {
            for (int i = 0; i < omega.rows(); ++i) {
                const bool truth = c(i, j) != 0;
                const auto st = omega.state(i, j);
                if (st == CellState::unknown) {
                    s.emplace_back(score(i, j), truth ? 1 : 0);
                } else if (unknown_only) {
                    continue;
                } else if (st == CellState::strong) {
                    (truth ? known_tp_ : known_fp_) += 1;
                }
                (truth ? pos_ : neg_) += 1;
            }
        }
        std::sort(s.begin(), s.end());
        scores_.reserve(s.size());
        pos_above_.assign(s.size() + 1, 0);
        for (const auto& e : s) scores_.push_back(e.first);
        for (std::size_t k = s.size(); k-- > 0;) pos_above_[k] = pos_above_[k + 1] + s[k].second;
    }

    FrameRates at(double threshold) const {
        const auto k = static_cast<std::size_t>(std::lower_bound(scores_.begin(), scores_.end(), threshold) - scores_.begin());
        const std::size_t above = scores_.size() - k;
        RateCounts n;
        n.pos = pos_;
        n.neg = neg_;
        n.tp = known_tp_ + pos_above_[k];
        n.fp = known_fp_ + (above - pos_above_[k]);
        return n.ratios();
    }

    std::span<const double> scores() const { return scores_; }

private:
    std::vector<double> scores_;          // ascending
    std::vector<std::size_t> pos_above_;  // true-strong count among scores_[k..]
    std::size_t known_tp_ = 0, known_fp_ = 0, pos_ = 0, neg_ = 0;
};

/// Threshold grid spanning [min, max] of the pooled scores at `count` evenly
/// spaced quantiles, plus one value above the maximum.
inline std::vector<double> quantile_grid(std::span<const ScoredFrame> frames, std::size_t count) {
    std::vector<double> pooled;
    for (const auto& f : frames) pooled.insert(pooled.end(), f.scores().begin(), f.scores().end());
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> grid;
    if (pooled.empty()) return {0.0, 1.0};
    count = std::max<std::size_t>(count, 2);
    for (std::size_t k = 0; k < count; ++k) {
        const auto idx = static_cast<std::size_t>(
            std::llround(static_cast<double>(k) * static_cast<double>(pooled.size() - 1) / static_cast<double>(count - 1)));
        grid.push_back(pooled[idx]);
    }
    grid.push_back(std::nextafter(pooled.back(), INFINITY));
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.size() < 2) grid.push_back(grid.back() + 1.0);
    return grid;
}

inline RocCurve threshold_roc(std::span<const ScoredFrame> frames, std::span<const double> grid) {
    return roc_sweep(
        [&](double beta) {
            std::vector<FrameRates> per;
            per.reserve(frames.size());
            for (const auto& f : frames) per.push_back(f.at(beta));
            return average_rates(per);
        },
        grid);
}

inline void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"control", "p_f", "p_d"});
    for (const auto& p : curve.points) w.row(p.control, p.p_f, p.p_d);
}

// --- Throughput vs. model -------------------------------------------------------------

struct ThroughputRow {
    double theta = 0.0;
    double p = 0.0;
    double lambda_out_sim = 0.0;
    double lambda_out_model = 0.0;
    double stderr_ = 0.0;
    double lambda_ra = 0.0;
    DetectionMode mode = DetectionMode::abstract_q;
};

struct ModelVsSimConfig {
    RAConfig ra;                 // slots and p are overridden per grid point
    int frames = 500;
    int warmup = 20;
    std::optional<int> forced_active = 506;
    bool abstract_q = true;
    bool gscm = false;
};

/// Simulated detections per frame against lambda_ra (1 - (1 - p)^T) for every
/// (theta, p) pair; the model uses the simulated lambda_ra.
inline std::vector<ThroughputRow> model_vs_sim(std::span<const double> thetas, std::span<const double> ps,
                                               const ModelVsSimConfig& cfg, ChannelModel* model,
                                               std::uint64_t seed) {
    if (thetas.empty() || ps.empty()) throw ConfigError("model_vs_sim needs nonempty theta and p grids");
    std::vector<ThroughputRow> rows;
    std::vector<DetectionMode> modes;
    if (cfg.abstract_q) modes.push_back(DetectionMode::abstract_q);
    if (cfg.gscm) modes.push_back(DetectionMode::gscm);
    std::uint64_t cell = 0;
    for (double theta : thetas) {
        for (double p : ps) {
            for (auto mode : modes) {
                CampaignConfig c;
                c.ra = cfg.ra;
                c.ra.slots = slots_for(theta, cfg.ra.lambda_in);
                c.ra.p = p;
                c.mode = mode;
                c.frames = cfg.frames;
                c.warmup = cfg.warmup;
                c.forced_active = cfg.forced_active;
                const auto stats = run_campaign(c, model, substream_seed(seed, "model-vs-sim", cell));
                ThroughputRow row;
                row.theta = theta;
                row.p = p;
                row.mode = mode;
                row.lambda_out_sim = stats.lambda_out;
                row.stderr_ = stats.lambda_out_stderr;
                row.lambda_ra = stats.lambda_ra;
                row.lambda_out_model = model_lambda_out(p, c.ra.slots, stats.lambda_ra);
                rows.push_back(row);
            }
            ++cell;
        }
    }
    return rows;
}

inline void write_throughput_csv(std::span<const ThroughputRow> rows, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"theta", "p", "lambda_out_sim", "lambda_out_model", "stderr", "mode"});
    for (const auto& r : rows)
        w.row(r.theta, r.p, r.lambda_out_sim, r.lambda_out_model, r.stderr_,
              r.mode == DetectionMode::gscm ? "gscm" : "abstract-q");
}

}  // namespace cranra
