#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qlink::sim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DetectorConfig {
  double efficiency = 1.0;
  double dark_cps = 0.0;
  double dead_time_ps = 0.0;
  double jitter_fwhm_ps = 0.0;
};

struct ClockConfig {
  std::int64_t offset_ps = 0;
  double drift_ppm = 0.0;
  std::uint64_t resolution_ps = 1;
};

// One analyzer-setting interval: both stations hold fixed polariser angles
// for duration_s starting at start_s (run-local time).
struct ScheduleEntry {
  double start_s = 0.0;
  double malta_angle_rad = 0.0;
  double sicily_angle_rad = 0.0;
  double duration_s = 0.0;
  double end_s() const { return start_s + duration_s; }
};

struct LinkConfig {
  double pair_rate_hz = 0.0;
  double malta_arm_efficiency = 1.0;   // heralding path, local arm
  double sicily_arm_efficiency = 1.0;  // coupling/filtering on the far arm
  double fibre_loss_db = 0.0;
  double fibre_delay_ps = 0.0;
  double fibre_dispersion_fwhm_ps = 0.0;  // extra Gaussian spread on the far arm

  double v_werner = 1.0;
  double hv_dephasing = 0.0;

  // Residual channel rotation on the sicily side, Rz(z1)*Ry(y)*Rz(z2).
  double channel_euler_z1_rad = 0.0;
  double channel_euler_y_rad = 0.0;
  double channel_euler_z2_rad = 0.0;

  std::array<DetectorConfig, 2> malta_det{};
  std::array<DetectorConfig, 2> sicily_det{};
  ClockConfig malta_clock{};
  ClockConfig sicily_clock{};

  std::vector<ScheduleEntry> schedule;

  // Carried as metadata only; not used by the state math.
  double signal_wavelength_nm = 0.0;
  double idler_wavelength_nm = 0.0;

  double duration_s() const;         // end of the last schedule entry
  double fibre_transmission() const; // 10^(-loss_db/10)
  void validate() const;             // throws ConfigError

  // Stable key=value rendering of every parameter; basis of the digest.
  std::string canonical_text() const;
  std::array<std::uint8_t, 32> digest() const;  // SHA-256 of canonical_text()
};

// Parses the flat `key = value` grammar ('#' comments, blank lines ignored,
// unknown keys are errors). Schedule rows are
//   schedule_<n> = <start_s> <malta_deg> <sicily_deg> <duration_s>
LinkConfig parse_config(std::string_view text);
LinkConfig load_config(const std::filesystem::path& path);

// Same grammar restricted to schedule_<n> keys.
std::vector<ScheduleEntry> parse_schedule(std::string_view text);
std::vector<ScheduleEntry> load_schedule(const std::filesystem::path& path);

std::array<std::uint8_t, 32> sha256_bytes(std::string_view data);

}  // namespace qlink::sim
