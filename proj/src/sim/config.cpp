#include "qlink/sim/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

namespace qlink::sim {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view value, std::string_view key, std::size_t line_no) {
  const std::string v(value);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("bad numeric value for '" + std::string(key) + "' on line " +
                      std::to_string(line_no));
  return out;
}

ScheduleEntry parse_schedule_value(std::string_view value, std::size_t line_no) {
  std::istringstream in{std::string(value)};
  double start_s, malta_deg, sicily_deg, duration_s;
  if (!(in >> start_s >> malta_deg >> sicily_deg >> duration_s))
    throw ConfigError("schedule entry needs <start_s> <malta_deg> <sicily_deg> <duration_s>"
                      " on line " + std::to_string(line_no));
  std::string rest;
  if (in >> rest)
    throw ConfigError("trailing tokens in schedule entry on line " + std::to_string(line_no));
  return {start_s, malta_deg * kDegToRad, sicily_deg * kDegToRad, duration_s};
}

// Walks `key = value` lines and hands each pair to the sink.
void for_each_pair(std::string_view text,
                   const std::function<void(std::string_view, std::string_view, std::size_t)>& sink) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, eol == std::string_view::npos ? text.npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    const std::size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("missing '=' on line " + std::to_string(line_no));
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key on line " + std::to_string(line_no));
    sink(key, value, line_no);
  }
}

bool parse_schedule_key(std::string_view key, std::size_t& index) {
  constexpr std::string_view prefix = "schedule_";
  if (!key.starts_with(prefix)) return false;
  const std::string_view num = key.substr(prefix.size());
  if (num.empty()) return false;
  std::size_t n = 0;
  for (char c : num) {
    if (c < '0' || c > '9') return false;
    n = n * 10 + static_cast<std::size_t>(c - '0');
  }
  index = n;
  return true;
}

void append_kv(std::string& out, const char* key, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += key;
  out += " = ";
  out += buf;
  out.push_back('\n');
}

}  // namespace

double LinkConfig::duration_s() const {
  double end = 0.0;
  for (const auto& e : schedule) end = std::max(end, e.end_s());
  return end;
}

double LinkConfig::fibre_transmission() const { return std::pow(10.0, -fibre_loss_db / 10.0); }

void LinkConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (!(pair_rate_hz >= 0.0) || !std::isfinite(pair_rate_hz)) fail("pair_rate_hz must be >= 0");
  for (auto [name, eff] : {std::pair{"malta_arm_efficiency", malta_arm_efficiency},
                           std::pair{"sicily_arm_efficiency", sicily_arm_efficiency}})
    if (!(eff >= 0.0 && eff <= 1.0)) fail(std::string(name) + " must be in [0, 1]");
  if (!(fibre_loss_db >= 0.0)) fail("fibre_loss_db must be >= 0");
  if (!(fibre_delay_ps >= 0.0)) fail("fibre_delay_ps must be >= 0");
  if (!(fibre_dispersion_fwhm_ps >= 0.0)) fail("fibre_dispersion_fwhm_ps must be >= 0");
  if (!(v_werner >= 0.0 && v_werner <= 1.0)) fail("v_werner must be in [0, 1]");
  if (!(hv_dephasing >= 0.0 && hv_dephasing <= 0.5)) fail("hv_dephasing must be in [0, 0.5]");
  for (const auto* dets : {&malta_det, &sicily_det})
    for (const auto& d : *dets) {
      if (!(d.efficiency >= 0.0 && d.efficiency <= 1.0)) fail("detector efficiency must be in [0, 1]");
      if (!(d.dark_cps >= 0.0)) fail("dark_cps must be >= 0");
      if (!(d.dead_time_ps >= 0.0)) fail("dead_time_ps must be >= 0");
      if (!(d.jitter_fwhm_ps >= 0.0)) fail("jitter_fwhm_ps must be >= 0");
    }
  for (const auto* clk : {&malta_clock, &sicily_clock})
    if (clk->resolution_ps < 1) fail("clock resolution_ps must be >= 1");

  if (schedule.empty()) fail("schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& e = schedule[i];
    if (!(e.duration_s > 0.0)) fail("schedule duration_s must be > 0");
    if (!(e.start_s >= 0.0)) fail("schedule start_s must be >= 0");
    if (i > 0 && e.start_s < schedule[i - 1].end_s() - 1e-12)
      fail("schedule intervals must be sorted and non-overlapping");
  }
}

std::string LinkConfig::canonical_text() const {
  std::string out;
  append_kv(out, "pair_rate_hz", pair_rate_hz);
  append_kv(out, "malta_arm_efficiency", malta_arm_efficiency);
  append_kv(out, "sicily_arm_efficiency", sicily_arm_efficiency);
  append_kv(out, "fibre_loss_db", fibre_loss_db);
  append_kv(out, "fibre_delay_ps", fibre_delay_ps);
  append_kv(out, "fibre_dispersion_fwhm_ps", fibre_dispersion_fwhm_ps);
  append_kv(out, "v_werner", v_werner);
  append_kv(out, "hv_dephasing", hv_dephasing);
  append_kv(out, "channel_euler_z1_deg", channel_euler_z1_rad / kDegToRad);
  append_kv(out, "channel_euler_y_deg", channel_euler_y_rad / kDegToRad);
  append_kv(out, "channel_euler_z2_deg", channel_euler_z2_rad / kDegToRad);
  append_kv(out, "signal_wavelength_nm", signal_wavelength_nm);
  append_kv(out, "idler_wavelength_nm", idler_wavelength_nm);
  const char* station[2] = {"malta", "sicily"};
  const std::array<DetectorConfig, 2>* dets[2] = {&malta_det, &sicily_det};
  const ClockConfig* clocks[2] = {&malta_clock, &sicily_clock};
  for (int s = 0; s < 2; ++s) {
    for (int ch = 0; ch < 2; ++ch) {
      const DetectorConfig& d = (*dets[s])[static_cast<std::size_t>(ch)];
      const std::string p = std::string(station[s]);
      append_kv(out, (p + "_efficiency_ch" + std::to_string(ch)).c_str(), d.efficiency);
      append_kv(out, (p + "_dark_cps_ch" + std::to_string(ch)).c_str(), d.dark_cps);
      append_kv(out, (p + "_dead_time_ps_ch" + std::to_string(ch)).c_str(), d.dead_time_ps);
      append_kv(out, (p + "_jitter_fwhm_ps_ch" + std::to_string(ch)).c_str(), d.jitter_fwhm_ps);
    }
    const std::string p = std::string(station[s]);
    append_kv(out, (p + "_clock_offset_ps").c_str(), static_cast<double>(clocks[s]->offset_ps));
    append_kv(out, (p + "_clock_drift_ppm").c_str(), clocks[s]->drift_ppm);
    append_kv(out, (p + "_clock_resolution_ps").c_str(),
              static_cast<double>(clocks[s]->resolution_ps));
  }
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "schedule_%zu = %.17g %.17g %.17g %.17g\n", i,
                  schedule[i].start_s, schedule[i].malta_angle_rad / kDegToRad,
                  schedule[i].sicily_angle_rad / kDegToRad, schedule[i].duration_s);
    out += buf;
  }
  return out;
}

std::array<std::uint8_t, 32> LinkConfig::digest() const { return sha256_bytes(canonical_text()); }

LinkConfig parse_config(std::string_view text) {
  LinkConfig cfg;
  std::map<std::size_t, ScheduleEntry> schedule;

  for_each_pair(text, [&](std::string_view key, std::string_view value, std::size_t line_no) {
    std::size_t sched_index = 0;
    if (parse_schedule_key(key, sched_index)) {
      if (schedule.count(sched_index))
        throw ConfigError("duplicate schedule index on line " + std::to_string(line_no));
      schedule[sched_index] = parse_schedule_value(value, line_no);
      return;
    }

    auto num = [&] { return parse_number(value, key, line_no); };
    auto det_field = [&](std::string_view k, std::array<DetectorConfig, 2>& dets,
                         std::string_view station) -> bool {
      for (int ch = 0; ch < 2; ++ch) {
        const std::string suffix = "_ch" + std::to_string(ch);
        DetectorConfig& d = dets[static_cast<std::size_t>(ch)];
        if (k == std::string(station) + "_efficiency" + suffix) { d.efficiency = num(); return true; }
        if (k == std::string(station) + "_dark_cps" + suffix) { d.dark_cps = num(); return true; }
        if (k == std::string(station) + "_dead_time_ps" + suffix) { d.dead_time_ps = num(); return true; }
        if (k == std::string(station) + "_jitter_fwhm_ps" + suffix) { d.jitter_fwhm_ps = num(); return true; }
      }
      return false;
    };
    auto clock_field = [&](std::string_view k, ClockConfig& clk, std::string_view station) -> bool {
      if (k == std::string(station) + "_clock_offset_ps") {
        clk.offset_ps = static_cast<std::int64_t>(std::llround(num()));
        return true;
      }
      if (k == std::string(station) + "_clock_drift_ppm") { clk.drift_ppm = num(); return true; }
      if (k == std::string(station) + "_clock_resolution_ps") {
        const double v = num();
        if (v < 1.0) throw ConfigError("clock resolution_ps must be >= 1");
        clk.resolution_ps = static_cast<std::uint64_t>(std::llround(v));
        return true;
      }
      return false;
    };

    if (key == "pair_rate_hz") cfg.pair_rate_hz = num();
    else if (key == "malta_arm_efficiency") cfg.malta_arm_efficiency = num();
    else if (key == "sicily_arm_efficiency") cfg.sicily_arm_efficiency = num();
    else if (key == "fibre_loss_db") cfg.fibre_loss_db = num();
    else if (key == "fibre_delay_ps") cfg.fibre_delay_ps = num();
    else if (key == "fibre_dispersion_fwhm_ps") cfg.fibre_dispersion_fwhm_ps = num();
    else if (key == "v_werner") cfg.v_werner = num();
    else if (key == "hv_dephasing") cfg.hv_dephasing = num();
    else if (key == "channel_euler_z1_deg") cfg.channel_euler_z1_rad = num() * kDegToRad;
    else if (key == "channel_euler_y_deg") cfg.channel_euler_y_rad = num() * kDegToRad;
    else if (key == "channel_euler_z2_deg") cfg.channel_euler_z2_rad = num() * kDegToRad;
    else if (key == "signal_wavelength_nm") cfg.signal_wavelength_nm = num();
    else if (key == "idler_wavelength_nm") cfg.idler_wavelength_nm = num();
    else if (det_field(key, cfg.malta_det, "malta")) {}
    else if (det_field(key, cfg.sicily_det, "sicily")) {}
    else if (clock_field(key, cfg.malta_clock, "malta")) {}
    else if (clock_field(key, cfg.sicily_clock, "sicily")) {}
    else
      throw ConfigError("unknown key '" + std::string(key) + "' on line " +
                        std::to_string(line_no));
  });

  cfg.schedule.reserve(schedule.size());
  for (auto& [index, entry] : schedule) cfg.schedule.push_back(entry);
  std::sort(cfg.schedule.begin(), cfg.schedule.end(),
            [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.start_s < b.start_s; });
  return cfg;
}

LinkConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<ScheduleEntry> parse_schedule(std::string_view text) {
  std::map<std::size_t, ScheduleEntry> schedule;
  for_each_pair(text, [&](std::string_view key, std::string_view value, std::size_t line_no) {
    std::size_t index = 0;
    if (!parse_schedule_key(key, index))
      throw ConfigError("unknown key '" + std::string(key) + "' on line " +
                        std::to_string(line_no) + " (expected schedule_<n>)");
    if (schedule.count(index))
      throw ConfigError("duplicate schedule index on line " + std::to_string(line_no));
    schedule[index] = parse_schedule_value(value, line_no);
  });
  std::vector<ScheduleEntry> out;
  out.reserve(schedule.size());
  for (auto& [index, entry] : schedule) out.push_back(entry);
  std::sort(out.begin(), out.end(),
            [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.start_s < b.start_s; });
  return out;
}

std::vector<ScheduleEntry> load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schedule: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_schedule(ss.str());
}

std::array<std::uint8_t, 32> sha256_bytes(std::string_view data) {
  std::array<std::uint8_t, 32> out{};
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx) {
    unsigned int len = 0;
    if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
        EVP_DigestUpdate(ctx, data.data(), data.size()) == 1)
      EVP_DigestFinal_ex(ctx, out.data(), &len);
    EVP_MD_CTX_free(ctx);
  }
  return out;
}

}  // namespace qlink::sim
