#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibra_sr/common.hpp"

namespace vibra_sr {

struct RatePowerPoint {
    int sample_rate_hz = 0;
    double data_rate_kbps = 0.0;
    double power_mw = 0.0;
};

// Measured wearable power while sampling and streaming at 16-bit depth;
// embedded as the reference dataset for the affine radio-cost model.
inline const std::vector<RatePowerPoint>& reference_power_table() {
    static const std::vector<RatePowerPoint> table = {
        {500, 8.0, 2.49},   {1000, 16.0, 2.58},  {2000, 32.0, 2.75},
        {4000, 64.0, 3.21}, {8000, 128.0, 4.09}, {16000, 256.0, 6.48},
    };
    return table;
}

inline double data_rate_kbps(int sample_rate_hz, int bits_per_sample = 16) {
    if (sample_rate_hz <= 0 || bits_per_sample <= 0)
        throw ConfigError("budget: rate and bit depth must be positive");
    return static_cast<double>(sample_rate_hz) * bits_per_sample / 1000.0;
}

struct PowerFit {
    double slope_mw_per_kbps = 0.0;
    double intercept_mw = 0.0;
    std::vector<double> residuals_mw;  // per input point

    double predict(double kbps) const { return slope_mw_per_kbps * kbps + intercept_mw; }
};

// Least-squares affine fit of power against data rate.
inline PowerFit fit_power_model(const std::vector<RatePowerPoint>& points) {
    if (points.size() < 2) throw ConfigError("budget: need at least two points to fit");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const auto& p : points) {
        sx += p.data_rate_kbps;
        sy += p.power_mw;
        sxx += p.data_rate_kbps * p.data_rate_kbps;
        sxy += p.data_rate_kbps * p.power_mw;
    }
    double n = static_cast<double>(points.size());
    double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw ConfigError("budget: degenerate fit (all points share one data rate)");
    PowerFit fit;
    fit.slope_mw_per_kbps = (n * sxy - sx * sy) / denom;
    fit.intercept_mw = (sy - fit.slope_mw_per_kbps * sx) / n;
    for (const auto& p : points)
        fit.residuals_mw.push_back(p.power_mw - fit.predict(p.data_rate_kbps));
    return fit;
}

inline const RatePowerPoint& table_point(int sample_rate_hz,
                                         const std::vector<RatePowerPoint>& table) {
    for (const auto& p : table)
        if (p.sample_rate_hz == sample_rate_hz) return p;
    throw ConfigError("budget: rate " + std::to_string(sample_rate_hz) + " Hz not in table");
}

// 100 * (P_ref - P_low) / P_low, both rates looked up in the table.
inline double battery_improvement_pct(int low_rate_hz, int ref_rate_hz,
                                      const std::vector<RatePowerPoint>& table) {
    const RatePowerPoint& low = table_point(low_rate_hz, table);
    const RatePowerPoint& ref = table_point(ref_rate_hz, table);
    return 100.0 * (ref.power_mw - low.power_mw) / low.power_mw;
}

inline double battery_improvement_pct(int low_rate_hz, int ref_rate_hz = 16000) {
    return battery_improvement_pct(low_rate_hz, ref_rate_hz, reference_power_table());
}

struct BudgetReport {
    std::vector<RatePowerPoint> points;
    PowerFit fitted_model;
    double battery_improvement_pct = 0.0;
    std::optional<double> inference_ms_per_window;
    std::optional<bool> real_time;
    int operating_rate_hz = 4000;
};

inline BudgetReport make_budget_report(int operating_rate_hz = 4000) {
    BudgetReport r;
    r.points = reference_power_table();
    r.fitted_model = fit_power_model(r.points);
    r.operating_rate_hz = operating_rate_hz;
    r.battery_improvement_pct = battery_improvement_pct(operating_rate_hz, 16000, r.points);
    return r;
}

inline void to_json(nlohmann::json& j, const BudgetReport& r) {
    j = nlohmann::json::object();
    j["operating_rate_hz"] = r.operating_rate_hz;
    j["battery_improvement_pct"] = r.battery_improvement_pct;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.points)
        pts.push_back({{"sample_rate_hz", p.sample_rate_hz},
                       {"data_rate_kbps", p.data_rate_kbps},
                       {"power_mw", p.power_mw}});
    j["points"] = pts;
    j["fit"] = {{"slope_mw_per_kbps", r.fitted_model.slope_mw_per_kbps},
                {"intercept_mw", r.fitted_model.intercept_mw},
                {"residuals_mw", r.fitted_model.residuals_mw}};
    if (r.inference_ms_per_window) j["inference_ms_per_window"] = *r.inference_ms_per_window;
    if (r.real_time) j["real_time"] = *r.real_time;
}

}  // namespace vibra_sr
