#pragma once

// Slotted C-RAN random access: Poisson arrivals, Bernoulli pilot activity,
// per-sector strong/weak detection, central-unit report merging and queue
// evolution across frames.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cranra/common.hpp"
#include "cranra/csv.hpp"
#include "cranra/gscm_channel.hpp"
#include "cranra/rng.hpp"

namespace cranra {

struct RAConfig {
    int slots = 100;          // T
    double p = 0.045;         // per-slot access probability
    double lambda_in = 500.0; // mean arrivals per frame
    double gamma_db = -18.0;  // strong-link threshold
    double rho = 0.99;

    void validate() const {
        if (slots < 1) throw ConfigError("slots (T) must be >= 1");
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p must lie in [0, 1]");
        if (!(lambda_in > 0.0)) throw ConfigError("lambda_in must be > 0");
        if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
    }
};

/// Rule-of-thumb detections per frame when every active device is detected in a
/// slot with probability q independently: lambda_ra * (1 - (1 - q)^T).
inline double model_lambda_out(double q, int slots, double lambda_ra) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("q must lie in [0, 1]");
    if (slots < 1) throw ConfigError("T must be >= 1");
    return lambda_ra * (1.0 - std::pow(1.0 - q, slots));
}

/// Access probability meeting a 1/rho delay target at overhead theta:
/// 1 - (1 - rho)^(1 / (theta * lambda_in)).
inline double p_star(double rho, double lambda_in, double theta) {
    if (rho >= 1.0) throw ConfigError("rho = 1 has no finite access probability");
    if (!(rho > 0.0)) throw ConfigError("rho must be > 0");
    if (!(theta * lambda_in >= 1.0)) throw ConfigError("theta * lambda_in must be >= 1");
    return 1.0 - std::pow(1.0 - rho, 1.0 / (theta * lambda_in));
}

/// T = theta * lambda_in, rounded to the nearest slot.
inline int slots_for(double theta, double lambda_in) {
    return std::max(1, static_cast<int>(std::lround(theta * lambda_in)));
}

// --- Reports -----------------------------------------------------------------

enum class Outcome : std::uint8_t { silence, collision, detection };

inline const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::silence: return "silence";
        case Outcome::collision: return "collision";
        case Outcome::detection: return "detection";
    }
    return "?";
}

struct SlotOutcome {
    Outcome kind = Outcome::silence;
    DeviceId device = 0;
    double gain_db = std::numeric_limits<double>::quiet_NaN();

    static SlotOutcome silence() { return {}; }
    static SlotOutcome collision() { return {Outcome::collision, 0, std::numeric_limits<double>::quiet_NaN()}; }
    static SlotOutcome detection(DeviceId id, double g) { return {Outcome::detection, id, g}; }
};

/// One outcome per (sector, slot); assigning a cell twice is a malformed report.
class RAReport {
public:
    RAReport(int sectors, int slots)
        : sectors_(sectors), slots_(slots),
          cells_(static_cast<std::size_t>(sectors) * static_cast<std::size_t>(slots)),
          filled_(cells_.size(), 0) {}

    int sectors() const { return sectors_; }
    int slots() const { return slots_; }

    void set(int sector, int slot, SlotOutcome o) {
        const auto i = index(sector, slot);
        if (filled_[i])
            throw MalformedReport("sector " + std::to_string(sector) + " reported two outcomes for slot " +
                                  std::to_string(slot));
        filled_[i] = 1;
        cells_[i] = o;
    }

    const SlotOutcome& at(int sector, int slot) const { return cells_[index(sector, slot)]; }
    bool has(int sector, int slot) const { return filled_[index(sector, slot)] != 0; }

    bool complete() const { return std::all_of(filled_.begin(), filled_.end(), [](auto f) { return f != 0; }); }

private:
    std::size_t index(int sector, int slot) const {
        if (sector < 0 || sector >= sectors_ || slot < 0 || slot >= slots_)
            throw MalformedReport("report cell (" + std::to_string(sector) + ", " + std::to_string(slot) +
                                  ") out of range");
        return static_cast<std::size_t>(sector) * static_cast<std::size_t>(slots_) + static_cast<std::size_t>(slot);
    }

    int sectors_;
    int slots_;
    std::vector<SlotOutcome> cells_;
    std::vector<std::uint8_t> filled_;
};

/// What the central unit knows after merging every sector's report.
struct CentralView {
    int sectors = 0;
    int slots = 0;
    std::vector<DeviceId> detected;                               // o_j, j = 0..|D|-1
    std::vector<std::vector<int>> silence;                        // per slot: silent sectors
    std::vector<std::vector<int>> detectors;                      // per device j: sectors (sorted)
    std::vector<std::vector<int>> detection_slots;                // per device j: T_j (sorted)
    std::vector<std::vector<std::pair<int, int>>> slot_detections;  // per slot: (sector, j)
    std::map<std::pair<int, int>, double> known_gains;            // (sector, j) -> dB

    int detected_count() const { return static_cast<int>(detected.size()); }

    /// Sectors that detected a device other than j in slot t.
    std::vector<int> other_detections(int slot, int j) const {
        std::vector<int> out;
        for (auto [v, jj] : slot_detections[static_cast<std::size_t>(slot)])
            if (jj != j) out.push_back(v);
        return out;
    }

    std::optional<int> index_of(DeviceId id) const {
        auto it = std::find(detected.begin(), detected.end(), id);
        if (it == detected.end()) return std::nullopt;
        return static_cast<int>(it - detected.begin());
    }
};

/// Builds the central view. Devices are indexed by first detection slot, then
/// by the lowest detecting sector in that slot.
inline CentralView merge_reports(const RAReport& report) {
    if (!report.complete()) throw MalformedReport("report has (sector, slot) cells without an outcome");
    CentralView view;
    view.sectors = report.sectors();
    view.slots = report.slots();
    view.silence.resize(static_cast<std::size_t>(report.slots()));
    view.slot_detections.resize(static_cast<std::size_t>(report.slots()));
    std::unordered_map<DeviceId, int> index;
    for (int t = 0; t < report.slots(); ++t) {
        for (int v = 0; v < report.sectors(); ++v) {
            const auto& o = report.at(v, t);
            if (o.kind == Outcome::silence) {
                view.silence[static_cast<std::size_t>(t)].push_back(v);
            } else if (o.kind == Outcome::detection) {
                auto [it, fresh] = index.try_emplace(o.device, view.detected_count());
                if (fresh) {
                    view.detected.push_back(o.device);
                    view.detectors.emplace_back();
                    view.detection_slots.emplace_back();
                }
                const int j = it->second;
                view.slot_detections[static_cast<std::size_t>(t)].emplace_back(v, j);
                auto& dets = view.detectors[static_cast<std::size_t>(j)];
                if (std::find(dets.begin(), dets.end(), v) == dets.end()) dets.push_back(v);
                auto& ts = view.detection_slots[static_cast<std::size_t>(j)];
                if (ts.empty() || ts.back() != t) ts.push_back(t);
                view.known_gains.try_emplace({v, j}, o.gain_db);
            }
        }
    }
    for (auto& d : view.detectors) std::sort(d.begin(), d.end());
    return view;
}

/// Outcome at sector v given the transmitters in the slot: silence with no
/// strong transmitter, detection with exactly one, collision otherwise.
/// `gain(id, v)` returns the dB gain between sector v and device id.
template <class GainFn>
SlotOutcome simulate_slot(std::span<const DeviceId> transmitters, GainFn&& gain, double gamma_db, int v) {
    int strong = 0;
    DeviceId who = 0;
    double g = 0.0;
    for (DeviceId id : transmitters) {
        const double gv = gain(id, v);
        if (gv >= gamma_db) {
            if (++strong > 1) return SlotOutcome::collision();
            who = id;
            g = gv;
        }
    }
    return strong == 0 ? SlotOutcome::silence() : SlotOutcome::detection(who, g);
}

// --- Devices and frame state ---------------------------------------------------

struct Device {
    DeviceId id = 0;
    Point2 position;
    std::vector<double> gains_db;  // length V in gscm mode, empty in abstract-q mode
    std::vector<int> strong;       // sectors with gain >= Gamma
};

struct FrameState {
    std::size_t frame = 0;
    std::vector<DeviceId> active;  // R_f, ascending
    DeviceId next_id = 0;
    std::unordered_map<DeviceId, Device> devices;  // every active device
};

/// Creates fresh devices: uniform position and, with a channel model, the
/// gain column of that position.
class DeviceFactory {
public:
    DeviceFactory(ChannelModel* model, double area_side, double gamma_db)
        : model_(model), area_side_(area_side), gamma_db_(gamma_db) {}

    Device make(DeviceId id, Rng& rng) const {
        Device d;
        d.id = id;
        d.position = detail::uniform_point(rng, area_side_);
        if (model_) {
            d.gains_db = model_->gain_column(d.position);
            for (int v = 0; v < static_cast<int>(d.gains_db.size()); ++v)
                if (d.gains_db[static_cast<std::size_t>(v)] >= gamma_db_) d.strong.push_back(v);
        }
        return d;
    }

    bool geometric() const { return model_ != nullptr; }

private:
    ChannelModel* model_;
    double area_side_;
    double gamma_db_;
};

/// Adds `count` new devices with fresh IDs to the state (not yet to the active set).
inline std::vector<DeviceId> add_devices(FrameState& state, int count, const DeviceFactory& factory, Rng& rng) {
    std::vector<DeviceId> ids;
    ids.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const DeviceId id = state.next_id++;
        state.devices.emplace(id, factory.make(id, rng));
        ids.push_back(id);
    }
    return ids;
}

/// Poisson(lambda_in) new devices with globally unique IDs.
inline std::vector<DeviceId> poisson_arrivals(double lambda_in, Rng& rng, FrameState& state,
                                              const DeviceFactory& factory) {
    if (!(lambda_in > 0.0)) throw ConfigError("lambda_in must be > 0");
    std::poisson_distribution<int> count(lambda_in);
    return add_devices(state, count(rng), factory, rng);
}

struct FrameResult {
    std::size_t frame = 0;
    std::size_t active = 0;                 // |R_f|
    std::vector<DeviceId> detected;         // D_f, in central-view order when geometric
    std::vector<DeviceId> arrivals;         // join R_{f+1}
    std::optional<RAReport> report;         // geometric mode only
    std::optional<CentralView> view;        // geometric mode only
    std::vector<std::vector<double>> detected_gains;  // columns of G for D_f, view order
};

namespace detail {

/// Applies R_{f+1} = (R_f \ D_f) u arrivals and drops detected devices.
inline void advance(FrameState& state, const std::vector<DeviceId>& detected,
                    const std::vector<DeviceId>& arrivals) {
    std::vector<DeviceId> gone(detected);
    std::sort(gone.begin(), gone.end());
    std::vector<DeviceId> next;
    next.reserve(state.active.size() - gone.size() + arrivals.size());
    std::set_difference(state.active.begin(), state.active.end(), gone.begin(), gone.end(),
                        std::back_inserter(next));
    next.insert(next.end(), arrivals.begin(), arrivals.end());
    std::sort(next.begin(), next.end());
    for (DeviceId id : gone) state.devices.erase(id);
    state.active = std::move(next);
    ++state.frame;
}

}  // namespace detail

/// Runs one RA block over the current active set with the geometric channel.
/// Fills report, view and the detected set; does not touch the state.
inline FrameResult run_ra_block(const FrameState& state, const RAConfig& config, int sectors, Rng& pilot_rng) {
    const auto& devices = state.devices;
    FrameResult res;
    res.frame = state.frame;
    res.active = state.active.size();

    RAReport report(sectors, config.slots);
    std::vector<int> count(static_cast<std::size_t>(sectors));
    std::vector<const Device*> last(static_cast<std::size_t>(sectors), nullptr);
    std::vector<const Device*> tx;
    for (int t = 0; t < config.slots; ++t) {
        tx.clear();
        for (DeviceId id : state.active)
            if (bernoulli(pilot_rng, config.p)) tx.push_back(&devices.at(id));
        std::fill(count.begin(), count.end(), 0);
        for (const Device* d : tx) {
            for (int v : d->strong) {
                ++count[static_cast<std::size_t>(v)];
                last[static_cast<std::size_t>(v)] = d;
            }
        }
        for (int v = 0; v < sectors; ++v) {
            const int c = count[static_cast<std::size_t>(v)];
            if (c == 0) {
                report.set(v, t, SlotOutcome::silence());
            } else if (c == 1) {
                const Device* d = last[static_cast<std::size_t>(v)];
                report.set(v, t, SlotOutcome::detection(d->id, d->gains_db[static_cast<std::size_t>(v)]));
            } else {
                report.set(v, t, SlotOutcome::collision());
            }
        }
    }
    res.view = merge_reports(report);
    res.detected = res.view->detected;
    res.detected_gains.reserve(res.detected.size());
    for (DeviceId id : res.detected) res.detected_gains.push_back(devices.at(id).gains_db);
    res.report = std::move(report);
    return res;
}

/// One geometric frame: RA block, then queue update with `arrivals` (already
/// registered in the state via add_devices/poisson_arrivals).
inline FrameResult simulate_frame(FrameState& state, const RAConfig& config, int sectors, Rng& pilot_rng,
                                  const std::vector<DeviceId>& arrivals) {
    FrameResult res = run_ra_block(state, config, sectors, pilot_rng);
    res.arrivals = arrivals;
    detail::advance(state, res.detected, arrivals);
    return res;
}

/// Devices of the active set detected under the abstract model: each is
/// detected in every slot with probability q, independently of the channel.
inline std::vector<DeviceId> abstract_detections(const FrameState& state, double q, int slots, Rng& rng) {
    std::vector<DeviceId> detected;
    for (DeviceId id : state.active) {
        for (int t = 0; t < slots; ++t) {
            if (bernoulli(rng, q)) {
                detected.push_back(id);
                break;
            }
        }
    }
    return detected;
}

inline FrameResult simulate_frame_abstract(FrameState& state, double q, int slots, Rng& rng,
                                           const std::vector<DeviceId>& arrivals) {
    FrameResult res;
    res.frame = state.frame;
    res.active = state.active.size();
    res.detected = abstract_detections(state, q, slots, rng);
    res.arrivals = arrivals;
    detail::advance(state, res.detected, arrivals);
    return res;
}

// --- Campaigns ----------------------------------------------------------------

enum class DetectionMode { gscm, abstract_q };

inline DetectionMode parse_mode(const std::string& s) {
    if (s == "gscm") return DetectionMode::gscm;
    if (s == "abstract-q") return DetectionMode::abstract_q;
    throw ConfigError("mode must be gscm or abstract-q, got '" + s + "'");
}

struct CampaignConfig {
    RAConfig ra;
    DetectionMode mode = DetectionMode::gscm;
    int frames = 200;  // measured frames, after warm-up
    int warmup = 20;
    /// When set, arrivals refill the active set to exactly this size every frame
    /// instead of following the Poisson process.
    std::optional<int> forced_active;
};

struct FrameRecord {
    std::size_t frame = 0;
    std::size_t arrivals = 0;
    std::size_t active = 0;
    std::size_t detected = 0;
    std::size_t queue = 0;  // |R_{f+1}|
};

struct CampaignStats {
    std::vector<FrameRecord> frames;  // includes warm-up frames
    int warmup = 0;
    double lambda_out = 0.0;
    double lambda_out_stderr = 0.0;
    double lambda_ra = 0.0;
    double lambda_in = 0.0;
    std::size_t uncovered = 0;  // arrived devices with no strong sector

    /// Queue sizes of the measured (post-warm-up) frames.
    std::vector<double> queue_series() const {
        std::vector<double> q;
        for (std::size_t f = static_cast<std::size_t>(warmup); f < frames.size(); ++f)
            q.push_back(static_cast<double>(frames[f].queue));
        return q;
    }
};

struct LinearTrend {
    double slope = 0.0;
    double slope_stderr = 0.0;
    double intercept = 0.0;
};

/// Ordinary least-squares line through (i, y_i).
inline LinearTrend linear_trend(std::span<const double> y) {
    LinearTrend out;
    const auto n = static_cast<double>(y.size());
    if (y.size() < 3) return out;
    const double xbar = (n - 1.0) / 2.0;
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double dx = static_cast<double>(i) - xbar;
        sxx += dx * dx;
        sxy += dx * (y[i] - ybar);
    }
    out.slope = sxy / sxx;
    out.intercept = ybar - out.slope * xbar;
    double sse = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - (out.intercept + out.slope * static_cast<double>(i));
        sse += r * r;
    }
    out.slope_stderr = std::sqrt(sse / (n - 2.0) / sxx);
    return out;
}

using FrameCallback = std::function<void(const FrameResult&, const FrameState&)>;

/// Runs warm-up + measured frames. `model` may be null in abstract-q mode.
/// Every frame draws from its own substreams of `seed`. The callback sees each
/// frame's result and the state after the queue update.
inline CampaignStats run_campaign(const CampaignConfig& config, ChannelModel* model, std::uint64_t seed,
                                  const FrameCallback& on_frame = {}) {
    config.ra.validate();
    if (config.frames < 1) throw ConfigError("frames must be >= 1");
    if (config.warmup < 0) throw ConfigError("warmup must be >= 0");
    if (config.mode == DetectionMode::gscm && model == nullptr)
        throw ConfigError("gscm mode needs a channel model");

    ChannelModel* m = config.mode == DetectionMode::gscm ? model : nullptr;
    const double side = model ? model->layout().area_side : 1.0;
    DeviceFactory factory(m, side, config.ra.gamma_db);

    CampaignStats stats;
    stats.warmup = config.warmup;
    FrameState state;

    auto count_uncovered = [&](const std::vector<DeviceId>& ids) {
        if (!factory.geometric()) return;
        for (DeviceId id : ids)
            if (state.devices.at(id).strong.empty()) ++stats.uncovered;
    };
    auto draw_arrivals = [&](Rng& rng, std::size_t remaining) {
        std::vector<DeviceId> ids;
        if (config.forced_active) {
            const auto target = static_cast<std::size_t>(*config.forced_active);
            ids = add_devices(state, remaining < target ? static_cast<int>(target - remaining) : 0, factory, rng);
        } else {
            ids = poisson_arrivals(config.ra.lambda_in, rng, state, factory);
        }
        count_uncovered(ids);
        return ids;
    };

    {
        auto rng = make_rng(seed, "arrivals.initial");
        auto ids = draw_arrivals(rng, 0);
        state.active = ids;
    }

    const int total = config.warmup + config.frames;
    for (int f = 0; f < total; ++f) {
        auto pilot_rng = make_rng(seed, "pilot", static_cast<std::uint64_t>(f));
        auto arrival_rng = make_rng(seed, "arrivals", static_cast<std::uint64_t>(f));
        FrameResult res;
        if (config.mode == DetectionMode::gscm) {
            res = run_ra_block(state, config.ra, model->sector_count(), pilot_rng);
        } else {
            res.frame = state.frame;
            res.active = state.active.size();
            res.detected = abstract_detections(state, config.ra.p, config.ra.slots, pilot_rng);
        }
        res.arrivals = draw_arrivals(arrival_rng, state.active.size() - res.detected.size());
        detail::advance(state, res.detected, res.arrivals);

        stats.frames.push_back({res.frame, res.arrivals.size(), res.active, res.detected.size(), state.active.size()});
        if (on_frame) on_frame(res, state);
    }

    double sum_out = 0.0, sum_out2 = 0.0, sum_ra = 0.0, sum_in = 0.0;
    for (int f = config.warmup; f < total; ++f) {
        const auto& r = stats.frames[static_cast<std::size_t>(f)];
        sum_out += static_cast<double>(r.detected);
        sum_out2 += static_cast<double>(r.detected) * static_cast<double>(r.detected);
        sum_ra += static_cast<double>(r.active);
        sum_in += static_cast<double>(r.arrivals);
    }
    const double n = config.frames;
    stats.lambda_out = sum_out / n;
    stats.lambda_ra = sum_ra / n;
    stats.lambda_in = sum_in / n;
    if (config.frames > 1) {
        const double var = std::max(0.0, (sum_out2 - n * stats.lambda_out * stats.lambda_out) / (n - 1.0));
        stats.lambda_out_stderr = std::sqrt(var / n);
    }
    return stats;
}

// --- CSV ------------------------------------------------------------------------

inline void write_campaign_csv(const CampaignStats& stats, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"frame", "arrivals", "active", "detected", "queue"});
    for (const auto& r : stats.frames) w.row(r.frame, r.arrivals, r.active, r.detected, r.queue);
}

/// Rows (slot, sector, outcome, device, gain_db); device is -1 and gain_db is
/// empty unless the outcome is a detection.
inline void write_view_csv(const RAReport& report, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"slot", "sector", "outcome", "device", "gain_db"});
    for (int t = 0; t < report.slots(); ++t) {
        for (int v = 0; v < report.sectors(); ++v) {
            const auto& o = report.at(v, t);
            if (o.kind == Outcome::detection)
                w.row(t, v, to_string(o.kind), o.device, o.gain_db);
            else
                w.row(t, v, to_string(o.kind), -1, "");
        }
    }
}

inline RAReport read_view_csv(const std::filesystem::path& path) {
    const auto rows = csv::read(path);
    int sectors = 0, slots = 0;
    for (const auto& r : rows) {
        if (r.size() != 5) throw MalformedReport(path.string() + ": expected 5 columns");
        slots = std::max(slots, static_cast<int>(csv::parse_int(r[0])) + 1);
        sectors = std::max(sectors, static_cast<int>(csv::parse_int(r[1])) + 1);
    }
    RAReport report(sectors, slots);
    for (const auto& r : rows) {
        const int t = static_cast<int>(csv::parse_int(r[0]));
        const int v = static_cast<int>(csv::parse_int(r[1]));
        if (r[2] == "silence") {
            report.set(v, t, SlotOutcome::silence());
        } else if (r[2] == "collision") {
            report.set(v, t, SlotOutcome::collision());
        } else if (r[2] == "detection") {
            report.set(v, t, SlotOutcome::detection(static_cast<DeviceId>(csv::parse_int(r[3])),
                                                     csv::parse_double(r[4])));
        } else {
            throw MalformedReport(path.string() + ": unknown outcome '" + r[2] + "'");
        }
    }
    return report;
}

}  // namespace cranra
