#pragma once

// Seeded synthetic stand-in for a mobile-sensing daily behaviour table:
// 66 named feature columns across the bluetooth / call / location / screen /
// steps / sleep families plus a sleep-efficiency target on the [0, 1] scale.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "somnus/error.hpp"
#include "somnus/rng.hpp"
#include "somnus/tabular.hpp"

namespace somnus {

inline constexpr const char* kTargetColumn = "sleep_efficiency";
inline constexpr const char* kLagFeature = "prev_day_efficiency";

struct PlantedSignal {
  std::map<std::string, double> coefficients;
  double noise_std = 0.025;
  double missing_fraction = 0.05;
  double outlier_fraction = 0.01;
  // Expected target at the population feature means; the intercept is
  // derived from it.
  double target_mean = 0.87;
  // Per-participant random intercept.
  double participant_offset_std = 0.015;

  void validate() const {
    if (!(noise_std >= 0)) throw Error(Errc::kInvalidConfig, "noise_std must be >= 0");
    if (!(missing_fraction >= 0 && missing_fraction < 1)) {
      throw Error(Errc::kInvalidConfig, "missing_fraction must be in [0, 1)");
    }
    if (!(outlier_fraction >= 0 && outlier_fraction < 1)) {
      throw Error(Errc::kInvalidConfig, "outlier_fraction must be in [0, 1)");
    }
    if (!(participant_offset_std >= 0)) {
      throw Error(Errc::kInvalidConfig, "participant_offset_std must be >= 0");
    }
  }
};

namespace fixture_detail {

struct ColumnGen {
  FeatureDomain domain;
  double mean_lo;      // participant mean ~ U(mean_lo, mean_hi)
  double mean_hi;
  double half_width;   // daily value = participant mean + U(-h, h)
  int decimals;
  double extra_missing = 0.0;
  bool outlier_prone = false;  // receives planted outlier cells
};

inline const std::vector<ColumnGen>& columns() {
  using C = FeatureCategory;
  static const std::vector<ColumnGen> kColumns = {
      // bluetooth
      {{"bt_unique_devices_allday", C::kBluetooth, 0, 200, false}, 10, 60, 10, 0},
      {{"bt_unique_devices_morning", C::kBluetooth, 0, 100, false}, 3, 25, 5, 0},
      {{"bt_unique_devices_afternoon", C::kBluetooth, 0, 100, false}, 5, 30, 6, 0},
      {{"bt_unique_devices_evening", C::kBluetooth, 0, 100, false}, 3, 25, 5, 0},
      {{"bt_unique_devices_night", C::kBluetooth, 0, 60, false}, 2, 20, 4, 0},
      {{"bt_scans_allday", C::kBluetooth, 0, 2000, false}, 100, 600, 100, 0},
      {{"bt_own_devices", C::kBluetooth, 0, 10, false}, 1, 4, 1, 0},
      {{"bt_others_devices", C::kBluetooth, 0, 200, false}, 5, 50, 10, 0},
      {{"bt_most_frequent_device_scans", C::kBluetooth, 0, 500, false}, 20, 150, 30, 0, 0.45},
      {{"bt_least_frequent_device_scans", C::kBluetooth, 0, 50, false}, 1, 5, 1, 0, 0.45},
      // call
      {{"call_incoming_count", C::kCall, 0, 50, false}, 0.5, 6, 2, 0},
      {{"call_outgoing_count", C::kCall, 0, 50, false}, 0.5, 6, 2, 0},
      {{"call_missed_count", C::kCall, 0, 30, false}, 0, 3, 1.5, 0},
      {{"call_incoming_minutes", C::kCall, 0, 300, false}, 2, 40, 10, 1},
      {{"call_outgoing_minutes", C::kCall, 0, 300, false}, 2, 40, 10, 1},
      {{"call_night_minutes", C::kCall, 0, 180, true}, 5, 35, 5, 1},
      {{"call_evening_minutes", C::kCall, 0, 180, true}, 2, 25, 6, 1},
      {{"call_unique_contacts", C::kCall, 0, 40, false}, 1, 8, 2, 0},
      {{"call_mean_duration_minutes", C::kCall, 0, 60, false}, 1, 6, 1.5, 2},
      {{"call_max_duration_minutes", C::kCall, 0, 240, false}, 5, 30, 8, 1, 0.45},
      {{"call_emergency_count", C::kCall, 0, 5, false}, 0, 0, 0, 0},
      // location
      {{"loc_time_at_home_minutes", C::kLocation, 0, 1440, true}, 600, 1000, 120, 0},
      {{"loc_time_at_work_minutes", C::kLocation, 0, 1440, false}, 0, 480, 90, 0},
      {{"loc_green_space_minutes", C::kLocation, 0, 600, true}, 10, 90, 30, 0},
      {{"loc_distance_traveled_km", C::kLocation, 0, 500, false}, 3, 40, 8, 2},
      {{"loc_radius_of_gyration_km", C::kLocation, 0, 200, false}, 1, 15, 3, 2},
      {{"loc_unique_places", C::kLocation, 0, 50, false}, 2, 10, 2, 0},
      {{"loc_location_entropy", C::kLocation, 0, 5, false}, 0.5, 2.5, 0.4, 3},
      {{"loc_normalized_entropy", C::kLocation, 0, 1, false}, 0.2, 0.8, 0.1, 3},
      {{"loc_moving_minutes", C::kLocation, 0, 1440, false}, 30, 150, 30, 0},
      {{"loc_static_minutes", C::kLocation, 0, 1440, false}, 900, 1300, 60, 0},
      {{"loc_night_time_away_minutes", C::kLocation, 0, 600, true}, 0, 60, 20, 0},
      {{"loc_evening_time_away_minutes", C::kLocation, 0, 600, false}, 20, 150, 40, 0},
      {{"loc_significant_places", C::kLocation, 0, 30, false}, 2, 8, 1, 0},
      {{"loc_max_distance_from_home_km", C::kLocation, 0, 1000, false}, 5, 60, 15, 2, 0.45},
      {{"loc_variance_log", C::kLocation, 0, 15, false}, 4, 10, 1, 3},
      // screen
      {{"screen_minutes", C::kScreen, 0, 900, true}, 120, 360, 90, 0, 0.0, true},
      {{"screen_unlock_count", C::kScreen, 0, 400, true}, 30, 120, 25, 0},
      {{"screen_night_minutes", C::kScreen, 0, 600, true}, 10, 90, 30, 0},
      {{"screen_morning_minutes", C::kScreen, 0, 600, false}, 20, 100, 30, 0},
      {{"screen_afternoon_minutes", C::kScreen, 0, 600, false}, 40, 140, 40, 0},
      {{"screen_evening_minutes", C::kScreen, 0, 600, true}, 40, 140, 40, 0},
      {{"screen_first_unlock_hour", C::kScreen, 0, 24, false}, 6, 9, 1, 2},
      {{"screen_last_lock_hour", C::kScreen, 0, 24, false}, 21, 23.5, 0.5, 2},
      {{"screen_mean_session_minutes", C::kScreen, 0, 120, false}, 2, 8, 2, 2},
      {{"screen_max_session_minutes", C::kScreen, 0, 600, false}, 20, 90, 20, 1},
      {{"screen_sessions_count", C::kScreen, 0, 400, false}, 30, 120, 25, 0},
      {{"screen_std_session_minutes", C::kScreen, 0, 120, false}, 3, 15, 3, 2, 0.45},
      // steps
      {{"steps_total", C::kSteps, 0, 40000, true}, 3000, 11000, 3000, 0, 0.0, true},
      {{"steps_morning", C::kSteps, 0, 20000, false}, 500, 3000, 800, 0},
      {{"steps_afternoon", C::kSteps, 0, 20000, false}, 1000, 4000, 1000, 0},
      {{"steps_evening", C::kSteps, 0, 20000, true}, 800, 3500, 900, 0},
      {{"steps_night", C::kSteps, 0, 10000, false}, 0, 400, 150, 0},
      {{"steps_max_bout", C::kSteps, 0, 20000, false}, 500, 3000, 600, 0},
      {{"steps_active_bouts", C::kSteps, 0, 50, false}, 2, 12, 3, 0},
      {{"steps_sedentary_bouts", C::kSteps, 0, 50, false}, 5, 20, 4, 0},
      {{"steps_active_minutes", C::kSteps, 0, 600, true}, 30, 150, 30, 0},
      {{"steps_sedentary_minutes", C::kSteps, 0, 1440, false}, 500, 900, 90, 0},
      // sleep
      {{"sleep_duration_minutes", C::kSleep, 0, 900, false}, 360, 480, 60, 0, 0.0, true},
      {{"sleep_onset_offset_minutes", C::kSleep, -240, 240, false}, -60, 90, 45, 0},
      {{"sleep_wake_hour", C::kSleep, 0, 24, false}, 6, 9, 0.75, 2},
      {{"sleep_awake_count", C::kSleep, 0, 50, false}, 1, 6, 2, 0},
      {{"sleep_restless_count", C::kSleep, 0, 50, false}, 2, 10, 3, 0},
      {{"sleep_minutes_to_fall_asleep", C::kSleep, 0, 120, false}, 2, 15, 5, 0},
      {{"sleep_minutes_after_wakeup", C::kSleep, 0, 120, false}, 0, 10, 4, 0},
      {{"sleep_main_episode_count", C::kSleep, 0, 5, false}, 1, 1.4, 0.4, 0},
  };
  return kColumns;
}

inline double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

}  // namespace fixture_detail

// The 66 fixture feature domains, in column order.
inline std::vector<FeatureDomain> fixture_schema() {
  std::vector<FeatureDomain> out;
  for (const auto& c : fixture_detail::columns()) out.push_back(c.domain);
  return out;
}

inline FeatureDomain lag_feature_domain() {
  return {kLagFeature, FeatureCategory::kSleep, 0.0, 1.0, false};
}

// Fixture analogs of "screen time, sleep duration, step count".
inline std::vector<std::string> fixture_tukey_columns() {
  return {"screen_minutes", "sleep_duration_minutes", "steps_total"};
}

inline PlantedSignal default_planted_signal() {
  PlantedSignal s;
  s.coefficients = {
      {"screen_minutes", -0.00025},       {"steps_total", 0.000007},
      {"call_night_minutes", -0.002},     {"loc_green_space_minutes", 0.0006},
      {"bt_unique_devices_night", -0.003}, {"sleep_duration_minutes", 0.0003},
  };
  return s;
}

inline BehaviorTable generate_fixture(std::uint64_t seed, int participants, int days_per_participant,
                                      const PlantedSignal& planted) {
  if (participants < 1) throw Error(Errc::kInvalidConfig, "participants must be >= 1");
  if (days_per_participant < 16) {
    throw Error(Errc::kInvalidConfig, "days_per_participant must be >= 16");
  }
  planted.validate();
  const auto& gens = fixture_detail::columns();

  std::vector<std::string> names;
  for (const auto& g : gens) names.push_back(g.domain.column);
  for (const auto& [name, coef] : planted.coefficients) {
    (void)coef;
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw Error(Errc::kInvalidConfig, "planted coefficient on unknown column", name);
    }
  }
  names.push_back(kTargetColumn);
  const std::size_t target_idx = names.size() - 1;

  // Intercept so that E[target] == target_mean at the population means.
  double intercept = planted.target_mean;
  std::vector<double> coef(gens.size(), 0.0);
  for (std::size_t j = 0; j < gens.size(); ++j) {
    auto it = planted.coefficients.find(gens[j].domain.column);
    if (it == planted.coefficients.end()) continue;
    coef[j] = it->second;
    intercept -= coef[j] * 0.5 * (gens[j].mean_lo + gens[j].mean_hi);
  }

  const Date start = Date{std::chrono::year{2018} / std::chrono::April / std::chrono::day{2}};
  std::vector<BehaviorRow> rows;
  rows.reserve(static_cast<std::size_t>(participants) * days_per_participant);
  for (int p = 0; p < participants; ++p) {
    Rng rng = make_rng(seed, "fixture.participant", static_cast<std::uint64_t>(p));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> stdnorm(0.0, 1.0);

    char pid[32];
    std::snprintf(pid, sizeof pid, "INS-W_%03d", p + 1);
    const Date first = start + std::chrono::days{static_cast<int>(unit(rng) * 14)};

    std::vector<double> pmean(gens.size());
    for (std::size_t j = 0; j < gens.size(); ++j) {
      pmean[j] = gens[j].mean_lo + unit(rng) * (gens[j].mean_hi - gens[j].mean_lo);
    }
    const double offset = planted.participant_offset_std * stdnorm(rng);

    for (int d = 0; d < days_per_participant; ++d) {
      BehaviorRow row;
      row.pid = pid;
      row.date = first + std::chrono::days{d};
      row.values.resize(names.size());
      double target = intercept + offset;
      for (std::size_t j = 0; j < gens.size(); ++j) {
        const auto& g = gens[j];
        double v = pmean[j] + (2.0 * unit(rng) - 1.0) * g.half_width;
        v = fixture_detail::round_to(std::clamp(v, g.domain.lo, g.domain.hi), g.decimals);
        target += coef[j] * v;
        row.values[j] = v;
      }
      target += planted.noise_std * stdnorm(rng);
      row.values[target_idx] = fixture_detail::round_to(std::clamp(target, 0.0, 1.0), 6);

      // Corrupt observations after the target has been computed from clean values.
      for (std::size_t j = 0; j < gens.size(); ++j) {
        const auto& g = gens[j];
        if (g.outlier_prone && unit(rng) < planted.outlier_fraction) {
          row.values[j] = fixture_detail::round_to(g.domain.hi * (1.5 + 1.5 * unit(rng)), g.decimals);
        }
        if (unit(rng) < planted.missing_fraction + g.extra_missing) row.values[j].reset();
      }
      if (unit(rng) < planted.missing_fraction) row.values[target_idx].reset();
      rows.push_back(std::move(row));
    }
  }
  return BehaviorTable(std::move(names), kTargetColumn, std::move(rows));
}

}  // namespace somnus
