#pragma once

// One-bounce geometric stochastic channel model and the sector-device gain
// matrix built on top of it.
//
// Sector v = S*b + s belongs to RRH b. Every RRH carries an M-element ULA whose
// DFT beams are split into S contiguous groups of M/S beams; a sector's gain to
// a device is the energy of the device's channel covariance captured by that
// group of beams.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cranra/common.hpp"
#include "cranra/csv.hpp"
#include "cranra/rng.hpp"

namespace cranra {

struct ChannelParams {
    int antennas = 64;               // M
    int sectors = 4;                 // S
    double d_ant_over_lambda = 0.5;  // ULA spacing in wavelengths
    double eps_bp = 10.0;            // breakpoint distance [m]
    double alpha_pl = 3.5;           // pathloss exponent
    double a_nlos = 0.6;             // reflected-path attenuation, in (0, 1]
    double gamma_path = 1e-6;        // weakest retained path (linear)
    double linear_floor = 1e-12;     // clamp applied before dB conversion

    void validate() const {
        if (antennas < 1) throw ConfigError("antennas must be >= 1");
        if (sectors < 1) throw ConfigError("sectors must be >= 1");
        if (antennas % sectors != 0)
            throw ConfigError("antennas (" + std::to_string(antennas) +
                              ") must be divisible by sectors (" + std::to_string(sectors) + ")");
        if (!(eps_bp > 0.0)) throw ConfigError("eps_bp must be > 0");
        if (!(alpha_pl > 0.0)) throw ConfigError("alpha_pl must be > 0");
        if (!(a_nlos > 0.0 && a_nlos <= 1.0)) throw ConfigError("a_nlos must lie in (0, 1]");
        if (!(gamma_path >= 0.0)) throw ConfigError("gamma_path must be >= 0");
        if (!(linear_floor > 0.0)) throw ConfigError("linear_floor must be > 0");
    }

    double floor_db() const { return to_db(linear_floor); }
};

/// Entity counts for a drop. In PPP mode each count is the mean of a Poisson draw.
struct GeometryConfig {
    double area_side = 316.0;
    int rrhs = 100;
    int devices = 500;
    int scatterers = 1000;
    int blockers = 200;
    double blocker_radius = 2.0;
    bool ppp = false;

    void validate() const {
        if (!(area_side > 0.0)) throw ConfigError("area_side must be > 0");
        if (rrhs < 1) throw ConfigError("configuration needs at least one RRH");
        if (devices < 1) throw ConfigError("configuration needs at least one device");
        if (scatterers < 0 || blockers < 0)
            throw ConfigError("scatterer/blocker counts must be nonnegative");
        if (blockers > 0 && !(blocker_radius > 0.0))
            throw ConfigError("blocker_radius must be > 0");
    }
};

struct Blocker {
    Point2 center;
    double radius = 0.0;
};

struct NetworkLayout {
    double area_side = 0.0;
    int sectors_per_rrh = 1;
    std::vector<Point2> rrh_positions;
    std::vector<double> sector_orientations;  // one rotation per RRH [rad]
    std::vector<Point2> device_positions;
    std::vector<Point2> scatterer_positions;
    std::vector<Blocker> blockers;

    int rrh_count() const { return static_cast<int>(rrh_positions.size()); }
    int sector_count() const { return sectors_per_rrh * rrh_count(); }
    int device_count() const { return static_cast<int>(device_positions.size()); }
    int rrh_of_sector(int v) const { return v / sectors_per_rrh; }

    /// B x B matrix of inter-RRH distances.
    Eigen::MatrixXd rrh_distances() const {
        const int b = rrh_count();
        Eigen::MatrixXd d(b, b);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < b; ++j) d(i, j) = distance(rrh_positions[i], rrh_positions[j]);
        return d;
    }
};

namespace detail {

inline Point2 uniform_point(Rng& rng, double side) {
    const double x = uniform01(rng) * side;
    const double y = uniform01(rng) * side;
    return {x, y};
}

inline int draw_count(Rng& rng, int mean, bool ppp) {
    if (!ppp) return mean;
    if (mean <= 0) return 0;
    std::poisson_distribution<int> dist(static_cast<double>(mean));
    return dist(rng);
}

inline std::vector<Point2> uniform_points(Rng& rng, int n, double side) {
    std::vector<Point2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pts.push_back(uniform_point(rng, side));
    return pts;
}

}  // namespace detail

/// Drops RRHs, devices, scatterers and blockers uniformly over the square area.
/// Each entity class draws from its own substream of `seed`.
inline NetworkLayout drop_entities(const ChannelParams& params, const GeometryConfig& geo,
                                   std::uint64_t seed) {
    params.validate();
    geo.validate();

    NetworkLayout layout;
    layout.area_side = geo.area_side;
    layout.sectors_per_rrh = params.sectors;

    auto rrh_rng = make_rng(seed, "layout.rrh");
    const int n_rrh = detail::draw_count(rrh_rng, geo.rrhs, geo.ppp);
    if (n_rrh < 1) throw ConfigError("drop produced zero RRHs");
    layout.rrh_positions = detail::uniform_points(rrh_rng, n_rrh, geo.area_side);

    auto orient_rng = make_rng(seed, "layout.orientation");
    layout.sector_orientations.reserve(static_cast<std::size_t>(n_rrh));
    for (int b = 0; b < n_rrh; ++b) layout.sector_orientations.push_back(2.0 * kPi * uniform01(orient_rng));

    auto dev_rng = make_rng(seed, "layout.device");
    const int n_dev = detail::draw_count(dev_rng, geo.devices, geo.ppp);
    if (n_dev < 1) throw ConfigError("drop produced zero devices");
    layout.device_positions = detail::uniform_points(dev_rng, n_dev, geo.area_side);

    auto sc_rng = make_rng(seed, "layout.scatterer");
    const int n_sc = detail::draw_count(sc_rng, geo.scatterers, geo.ppp);
    layout.scatterer_positions = detail::uniform_points(sc_rng, n_sc, geo.area_side);

    auto bl_rng = make_rng(seed, "layout.blocker");
    const int n_bl = detail::draw_count(bl_rng, geo.blockers, geo.ppp);
    layout.blockers.reserve(static_cast<std::size_t>(n_bl));
    for (int i = 0; i < n_bl; ++i)
        layout.blockers.push_back({detail::uniform_point(bl_rng, geo.area_side), geo.blocker_radius});
    return layout;
}

/// Distance from point p to the closed segment [a, b].
inline double point_segment_distance(Point2 p, Point2 a, Point2 b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
    return distance(p, {a.x + t * dx, a.y + t * dy});
}

/// True iff the segment tx-rx touches any blocker disk. Tangency counts as blocked.
inline bool los_blocked(Point2 tx, Point2 rx, std::span<const Blocker> blockers) {
    for (const auto& blk : blockers)
        if (point_segment_distance(blk.center, tx, rx) <= blk.radius) return true;
    return false;
}

/// Smooth-transition pathloss (1 + d/eps)^(-alpha).
inline double direct_path_gain(double d, const ChannelParams& params) {
    return std::pow(1.0 + d / params.eps_bp, -params.alpha_pl);
}

inline double reflected_path_gain(double d_uz, double d_zr, const ChannelParams& params) {
    return params.a_nlos * direct_path_gain(d_uz, params) * direct_path_gain(d_zr, params);
}

struct Path {
    double loss = 0.0;  // linear large-scale loss L
    double dod = 0.0;   // departure angle in the global frame [rad]
    bool direct = false;
};

using PathList = std::vector<Path>;

inline double angle_from(Point2 origin, Point2 target) {
    return std::atan2(target.y - origin.y, target.x - origin.x);
}

/// LOS path (if unblocked) plus one single-bounce path per scatterer, with every
/// path weaker than gamma_path removed.
inline PathList enumerate_paths(const NetworkLayout& layout, int rrh, Point2 device,
                                const ChannelParams& params) {
    PathList paths;
    const Point2 r = layout.rrh_positions.at(static_cast<std::size_t>(rrh));
    if (!los_blocked(r, device, layout.blockers)) {
        const double loss = direct_path_gain(distance(r, device), params);
        if (loss >= params.gamma_path) paths.push_back({loss, angle_from(r, device), true});
    }
    for (const auto& z : layout.scatterer_positions) {
        const double loss = reflected_path_gain(distance(device, z), distance(z, r), params);
        if (loss >= params.gamma_path) paths.push_back({loss, angle_from(r, z), false});
    }
    return paths;
}

inline PathList enumerate_paths(const NetworkLayout& layout, int rrh, int device,
                                const ChannelParams& params) {
    return enumerate_paths(layout, rrh, layout.device_positions.at(static_cast<std::size_t>(device)),
                           params);
}

/// a(theta)_m = exp(-i 2 pi m d cos(theta)).
inline Eigen::VectorXcd steering_vector(double theta, int antennas, double d_ant_over_lambda) {
    Eigen::VectorXcd a(antennas);
    const double u = d_ant_over_lambda * std::cos(theta);
    for (int m = 0; m < antennas; ++m) a(m) = std::polar(1.0, -2.0 * kPi * m * u);
    return a;
}

/// K = sum_n L_n a(theta_n) a(theta_n)^H. `rotation` is subtracted from every DOD.
inline Eigen::MatrixXcd covariance(const PathList& paths, int antennas, double d_ant_over_lambda,
                                   double rotation = 0.0) {
    Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(antennas, antennas);
    for (const auto& p : paths) {
        const Eigen::VectorXcd a = steering_vector(p.dod - rotation, antennas, d_ant_over_lambda);
        k.noalias() += p.loss * (a * a.adjoint());
    }
    return k;
}

/// Columns [first, first + count) of the unitary DFT matrix, column b = exp(-i 2 pi m b / M) / sqrt(M).
inline Eigen::MatrixXcd dft_columns(int antennas, int first, int count) {
    Eigen::MatrixXcd f(antennas, count);
    const double scale = 1.0 / std::sqrt(static_cast<double>(antennas));
    for (int m = 0; m < antennas; ++m)
        for (int c = 0; c < count; ++c)
            f(m, c) = scale * std::polar(1.0, -2.0 * kPi * static_cast<double>((m * (first + c)) % antennas) / antennas);
    return f;
}

inline Eigen::MatrixXcd dft_matrix(int antennas) { return dft_columns(antennas, 0, antennas); }

/// tr(F^H K F) for the M/S DFT beams of sector `sector` (0-based).
inline double sector_gain(const Eigen::MatrixXcd& k, int sector, int antennas, int sectors) {
    if (sectors < 1 || antennas % sectors != 0)
        throw ConfigError("antennas must be divisible by sectors");
    if (sector < 0 || sector >= sectors) throw ConfigError("sector index out of range");
    const int width = antennas / sectors;
    const Eigen::MatrixXcd f = dft_columns(antennas, sector * width, width);
    return (f.adjoint() * k * f).trace().real();
}

/// Per-beam energy |f_b^H a(theta)|^2 for every DFT beam, in closed form.
///
/// With u = d cos(theta), f_b^H a = M^{-1/2} sum_m exp(i 2 pi m (b/M - u)), a
/// Dirichlet kernel whose squared magnitude is sin^2(pi M u) / (M sin^2(pi (b/M - u))).
/// The beams sum to M for every theta.
class BeamResponse {
public:
    BeamResponse(int antennas, double d_ant_over_lambda)
        : m_(antennas), d_(d_ant_over_lambda), cos_(antennas), sin_(antennas), out_(antennas) {
        for (int b = 0; b < m_; ++b) {
            cos_[b] = std::cos(kPi * b / m_);
            sin_[b] = std::sin(kPi * b / m_);
        }
    }

    std::span<const double> operator()(double theta) {
        const double u = d_ * std::cos(theta);
        const double su = std::sin(kPi * u);
        const double cu = std::cos(kPi * u);
        const double num = std::pow(std::sin(kPi * m_ * u), 2);
        for (int b = 0; b < m_; ++b) {
            const double s = sin_[b] * cu - cos_[b] * su;  // sin(pi (b/M - u))
            out_[b] = std::abs(s) < 1e-9 ? static_cast<double>(m_) : num / (m_ * s * s);
        }
        return out_;
    }

    int antennas() const { return m_; }

private:
    int m_;
    double d_;
    std::vector<double> cos_, sin_, out_;
};

/// Adds each path's per-sector energy into `out` (length S), closed-form route.
inline void accumulate_sector_gains(const PathList& paths, double rotation, int sectors,
                                    BeamResponse& beams, std::span<double> out) {
    const int width = beams.antennas() / sectors;
    for (const auto& p : paths) {
        auto resp = beams(p.dod - rotation);
        for (int s = 0; s < sectors; ++s) {
            double acc = 0.0;
            for (int b = s * width; b < (s + 1) * width; ++b) acc += resp[b];
            out[s] += p.loss * acc;
        }
    }
}

/// Ground-truth V x K gains, stored in dB with the linear floor applied.
struct SectorGainMatrix {
    Eigen::MatrixXd values_db;
    double floor_db = -120.0;

    int sectors() const { return static_cast<int>(values_db.rows()); }
    int devices() const { return static_cast<int>(values_db.cols()); }
};

/// Fast per-device gain evaluator for a fixed RRH/scatterer/blocker layout.
/// Scatterer-to-RRH losses and angles are computed once, so a new device costs
/// one pass over (RRH, scatterer) pairs plus the blocker test per RRH.
class ChannelModel {
public:
    ChannelModel(const NetworkLayout& layout, ChannelParams params)
        : layout_(&layout), params_(params), beams_(params.antennas, params.d_ant_over_lambda) {
        params_.validate();
        if (layout.sectors_per_rrh != params_.sectors)
            throw ConfigError("layout sector count does not match channel params");
        const auto nz = layout.scatterer_positions.size();
        const auto nb = static_cast<std::size_t>(layout.rrh_count());
        zr_loss_.resize(nb * nz);
        zr_angle_.resize(nb * nz);
        for (std::size_t b = 0; b < nb; ++b) {
            for (std::size_t z = 0; z < nz; ++z) {
                const Point2 r = layout.rrh_positions[b];
                const Point2 s = layout.scatterer_positions[z];
                zr_loss_[b * nz + z] = params_.a_nlos * direct_path_gain(distance(s, r), params_);
                zr_angle_[b * nz + z] = angle_from(r, s);
            }
        }
    }

    const NetworkLayout& layout() const { return *layout_; }
    const ChannelParams& params() const { return params_; }
    int sector_count() const { return layout_->sector_count(); }

    /// Paths between RRH `rrh` and a device at `device`; same result as
    /// enumerate_paths but reusing the cached scatterer-RRH terms.
    PathList paths(int rrh, Point2 device) {
        PathList out;
        gather_paths(rrh, device, scatter_losses(device), out);
        return out;
    }

    /// Linear sector gains (length V) of a device at `device`, before flooring.
    std::vector<double> linear_gain_column(Point2 device) {
        const int nb = layout_->rrh_count();
        const int s = params_.sectors;
        std::vector<double> col(static_cast<std::size_t>(nb * s), 0.0);
        const auto& uz = scatter_losses(device);
        PathList paths;
        for (int b = 0; b < nb; ++b) {
            paths.clear();
            gather_paths(b, device, uz, paths);
            accumulate_sector_gains(paths, layout_->sector_orientations[static_cast<std::size_t>(b)], s,
                                    beams_, std::span<double>(col).subspan(static_cast<std::size_t>(b * s), s));
        }
        return col;
    }

    /// Sector gains in dB with the floor applied.
    std::vector<double> gain_column(Point2 device) {
        auto col = linear_gain_column(device);
        for (auto& g : col) g = to_db(std::max(g, params_.linear_floor));
        return col;
    }

private:
    const std::vector<double>& scatter_losses(Point2 device) {
        const auto& sc = layout_->scatterer_positions;
        uz_.resize(sc.size());
        for (std::size_t z = 0; z < sc.size(); ++z) uz_[z] = direct_path_gain(distance(device, sc[z]), params_);
        return uz_;
    }

    void gather_paths(int rrh, Point2 device, const std::vector<double>& uz, PathList& out) const {
        const auto b = static_cast<std::size_t>(rrh);
        const Point2 r = layout_->rrh_positions[b];
        if (!los_blocked(r, device, layout_->blockers)) {
            const double loss = direct_path_gain(distance(r, device), params_);
            if (loss >= params_.gamma_path) out.push_back({loss, angle_from(r, device), true});
        }
        const auto nz = uz.size();
        for (std::size_t z = 0; z < nz; ++z) {
            const double loss = uz[z] * zr_loss_[b * nz + z];
            if (loss >= params_.gamma_path) out.push_back({loss, zr_angle_[b * nz + z], false});
        }
    }

    const NetworkLayout* layout_;
    ChannelParams params_;
    BeamResponse beams_;
    std::vector<double> zr_loss_, zr_angle_, uz_;
};

/// Gains of every layout device, computed independently per column.
inline SectorGainMatrix gain_matrix(const NetworkLayout& layout, const ChannelParams& params) {
    ChannelModel model(layout, params);
    SectorGainMatrix g;
    g.floor_db = params.floor_db();
    g.values_db.resize(layout.sector_count(), layout.device_count());
    for (int k = 0; k < layout.device_count(); ++k) {
        const auto col = model.gain_column(layout.device_positions[static_cast<std::size_t>(k)]);
        g.values_db.col(k) = Eigen::Map<const Eigen::VectorXd>(col.data(), static_cast<Eigen::Index>(col.size()));
    }
    return g;
}

/// Linear sector gains of one (RRH, device) link through the explicit covariance
/// and DFT projection. Slow; used to cross-check the closed-form route.
inline std::vector<double> reference_sector_gains(const NetworkLayout& layout, int rrh, Point2 device,
                                                  const ChannelParams& params) {
    const auto paths = enumerate_paths(layout, rrh, device, params);
    const auto k = covariance(paths, params.antennas, params.d_ant_over_lambda,
                              layout.sector_orientations.at(static_cast<std::size_t>(rrh)));
    std::vector<double> out;
    for (int s = 0; s < params.sectors; ++s) out.push_back(sector_gain(k, s, params.antennas, params.sectors));
    return out;
}

struct DthrCalibration {
    double d_thr = 0.0;
    bool warning = false;  // no device was strong to two distinct RRHs
};

/// Largest inter-RRH distance between two RRHs that both own a strong sector to
/// the same device: the smallest d_thr with no misinferred zero on this draw.
inline DthrCalibration calibrate_d_thr(const SectorGainMatrix& g, const NetworkLayout& layout,
                                       double gamma_db) {
    DthrCalibration out;
    bool any_pair = false;
    std::vector<int> strong_rrhs;
    for (int k = 0; k < g.devices(); ++k) {
        strong_rrhs.clear();
        for (int v = 0; v < g.sectors(); ++v) {
            if (g.values_db(v, k) >= gamma_db) {
                const int b = layout.rrh_of_sector(v);
                if (strong_rrhs.empty() || strong_rrhs.back() != b) strong_rrhs.push_back(b);
            }
        }
        for (std::size_t a = 0; a < strong_rrhs.size(); ++a) {
            for (std::size_t b = a + 1; b < strong_rrhs.size(); ++b) {
                any_pair = true;
                out.d_thr = std::max(out.d_thr, distance(layout.rrh_positions[strong_rrhs[a]],
                                                         layout.rrh_positions[strong_rrhs[b]]));
            }
        }
    }
    out.warning = !any_pair;
    return out;
}

// --- CSV ---------------------------------------------------------------------

inline void write_layout_csv(const NetworkLayout& layout, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"entity", "id", "x", "y", "extra"});
    w.row("area", 0, layout.area_side, layout.area_side, layout.sectors_per_rrh);
    for (std::size_t i = 0; i < layout.rrh_positions.size(); ++i)
        w.row("rrh", i, layout.rrh_positions[i].x, layout.rrh_positions[i].y, layout.sector_orientations[i]);
    for (std::size_t i = 0; i < layout.device_positions.size(); ++i)
        w.row("device", i, layout.device_positions[i].x, layout.device_positions[i].y, 0);
    for (std::size_t i = 0; i < layout.scatterer_positions.size(); ++i)
        w.row("scatterer", i, layout.scatterer_positions[i].x, layout.scatterer_positions[i].y, 0);
    for (std::size_t i = 0; i < layout.blockers.size(); ++i)
        w.row("blocker", i, layout.blockers[i].center.x, layout.blockers[i].center.y, layout.blockers[i].radius);
}

inline NetworkLayout read_layout_csv(const std::filesystem::path& path) {
    NetworkLayout layout;
    for (const auto& row : csv::read(path)) {
        if (row.size() != 5) throw ConfigError(path.string() + ": expected 5 columns");
        const Point2 p{csv::parse_double(row[2]), csv::parse_double(row[3])};
        const double extra = csv::parse_double(row[4]);
        const auto& kind = row[0];
        if (kind == "area") {
            layout.area_side = p.x;
            layout.sectors_per_rrh = static_cast<int>(extra);
        } else if (kind == "rrh") {
            layout.rrh_positions.push_back(p);
            layout.sector_orientations.push_back(extra);
        } else if (kind == "device") {
            layout.device_positions.push_back(p);
        } else if (kind == "scatterer") {
            layout.scatterer_positions.push_back(p);
        } else if (kind == "blocker") {
            layout.blockers.push_back({p, extra});
        } else {
            throw ConfigError(path.string() + ": unknown entity '" + kind + "'");
        }
    }
    return layout;
}

/// Rows (sector_id, device_id, gain_db) for the given gain columns.
inline void write_gains_csv(const std::filesystem::path& path,
                            const std::map<DeviceId, std::vector<double>>& columns) {
    csv::Writer w(path);
    w.header({"sector_id", "device_id", "gain_db"});
    for (const auto& [id, col] : columns)
        for (std::size_t v = 0; v < col.size(); ++v) w.row(v, id, col[v]);
}

inline std::map<DeviceId, std::vector<double>> read_gains_csv(const std::filesystem::path& path) {
    std::map<DeviceId, std::vector<double>> out;
    for (const auto& row : csv::read(path)) {
        if (row.size() != 3) throw ConfigError(path.string() + ": expected 3 columns");
        const auto v = static_cast<std::size_t>(csv::parse_int(row[0]));
        auto& col = out[static_cast<DeviceId>(csv::parse_int(row[1]))];
        if (col.size() <= v) col.resize(v + 1, std::nan(""));
        col[v] = csv::parse_double(row[2]);
    }
    return out;
}

}  // namespace cranra
