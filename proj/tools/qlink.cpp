#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "qlink/analysis/statistics.hpp"
#include "qlink/corr/correlate.hpp"
#include "qlink/io/report.hpp"
#include "qlink/io/tags.hpp"
#include "qlink/sim/config.hpp"
#include "qlink/sim/link.hpp"
#include "qlink/sim/rng.hpp"
#include "qlink/version.hpp"

namespace {

using qlink::io::Json;

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNoCorrelation = 3;

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CommonFlags {
  bool json = false;
  bool deterministic = false;
  std::string out_path;

  void attach(CLI::App* cmd) {
    cmd->add_flag("--json", json, "emit the JSON report on stdout instead of the table");
    cmd->add_flag("--deterministic", deterministic, "omit the wall-clock timestamp from reports");
    cmd->add_option("--out", out_path, "write the JSON report to this file");
  }
};

Json make_manifest(const std::string& subcommand, std::uint64_t seed,
                   const std::string& config_path, const std::string& config_digest,
                   const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                   const CommonFlags& flags) {
  Json m;
  m["tool"] = std::string(qlink::kToolName);
  m["version"] = std::string(qlink::kToolVersion);
  m["subcommand"] = subcommand;
  m["seed"] = seed;
  m["config"] = config_path;
  m["config_digest"] = config_digest;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  if (!flags.deterministic) m["timestamp"] = iso_timestamp();
  return m;
}

void print_table(const Json& j, const std::string& prefix = "") {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const Json& v = it.value();
    if (v.is_object()) {
      print_table(v, key);
    } else if (v.is_array()) {
      std::printf("%-36s [%zu entries]\n", key.c_str(), v.size());
    } else {
      std::string rendered;
      if (v.is_string()) rendered = v.get<std::string>();
      else rendered = v.dump();
      std::printf("%-36s %s\n", key.c_str(), rendered.c_str());
    }
  }
}

void emit_report(const Json& report, const CommonFlags& flags) {
  if (!flags.out_path.empty()) qlink::io::write_report(report, flags.out_path);
  if (flags.json) std::fputs(qlink::io::dump_report(report).c_str(), stdout);
  else print_table(report);
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_a, out_b;
  double duration_override_s = 0.0;
  double malta_deg = 0.0, sicily_deg = 0.0;
  CommonFlags flags;
};

int run_simulate(const SimulateArgs& args) {
  qlink::sim::LinkConfig cfg = qlink::sim::load_config(args.config_path);
  if (args.duration_override_s > 0.0) {
    cfg.schedule = {{0.0, args.malta_deg * kDegToRad, args.sicily_deg * kDegToRad,
                     args.duration_override_s}};
  }
  cfg.validate();

  const qlink::sim::SimResult result = qlink::sim::simulate_run(cfg, args.seed);
  const std::uint64_t bytes_a = qlink::io::write_tags(result.malta, args.out_a);
  const std::uint64_t bytes_b = qlink::io::write_tags(result.sicily, args.out_b);

  Json report;
  report["manifest"] =
      make_manifest("simulate", args.seed, args.config_path,
                    qlink::io::digest_hex(cfg.digest()), {}, {args.out_a, args.out_b}, args.flags);
  report["duration_s"] = cfg.duration_s();
  report["tags_malta"] = result.malta.size();
  report["tags_sicily"] = result.sicily.size();
  report["bytes_malta"] = bytes_a;
  report["bytes_sicily"] = bytes_b;
  report["analytic_coincidence_rate_cps"] = qlink::sim::analytic_coincidence_rate(cfg);
  emit_report(report, args.flags);
  return 0;
}

// ---------------------------------------------------------------- correlate

struct CorrelateArgs {
  std::string path_a, path_b;
  double span_s = 1.0;
  std::uint64_t fine_bin_ps = 100;
  CommonFlags flags;
};

int run_correlate(const CorrelateArgs& args) {
  const qlink::io::TagStream a = qlink::io::read_tags(args.path_a);
  const qlink::io::TagStream b = qlink::io::read_tags(args.path_b);
  const auto span_ps = static_cast<std::uint64_t>(args.span_s * 1e12);
  const qlink::corr::PeakStats peak =
      qlink::corr::coarse_to_fine_delay(a.t_ps, b.t_ps, span_ps, args.fine_bin_ps);

  Json report;
  report["manifest"] = make_manifest("correlate", 0, "", "", {args.path_a, args.path_b}, {},
                                     args.flags);
  report["delay_ps"] = peak.delay_ps;
  report["fwhm_ps"] = peak.fwhm_ps;
  report["peak_height"] = peak.peak_height;
  report["background_mean"] = peak.background_mean;
  report["significance"] = peak.significance;
  report["search_span_s"] = args.span_s;
  report["final_bin_ps"] = args.fine_bin_ps;
  emit_report(report, args.flags);
  return 0;
}

// ---------------------------------------------------------------- coincide

struct CoincideArgs {
  std::string path_a, path_b;
  std::optional<std::int64_t> delay_ps;
  std::uint64_t window_ps = 1000;
  double span_s = 1.0;
  std::uint64_t fine_bin_ps = 100;
  double drift_block_s = 0.0;
  CommonFlags flags;
};

int run_coincide(const CoincideArgs& args) {
  const qlink::io::TagStream a = qlink::io::read_tags(args.path_a);
  const qlink::io::TagStream b = qlink::io::read_tags(args.path_b);
  std::int64_t delay = 0;
  if (args.delay_ps) {
    delay = *args.delay_ps;
  } else {
    const auto span_ps = static_cast<std::uint64_t>(args.span_s * 1e12);
    delay = qlink::corr::coarse_to_fine_delay(a.t_ps, b.t_ps, span_ps, args.fine_bin_ps).delay_ps;
  }

  qlink::corr::CoincidenceSet set;
  Json drift_json;
  if (args.drift_block_s > 0.0) {
    const qlink::corr::DriftModel drift =
        qlink::corr::track_drift(a.t_ps, b.t_ps, args.drift_block_s, delay);
    set = qlink::corr::match_coincidences(a, b, drift, args.window_ps);
    drift_json["n_knots"] = drift.knots.size();
    drift_json["fitted_slope_ppm"] = drift.fitted_slope_ppm();
  } else {
    set = qlink::corr::match_coincidences(a, b, delay, args.window_ps);
  }

  const double duration = std::max(a.duration_s(), 1e-12);
  Json report;
  report["manifest"] = make_manifest("coincide", 0, "", "", {args.path_a, args.path_b}, {},
                                     args.flags);
  report["delay_ps"] = delay;
  report["window_ps"] = args.window_ps;
  report["n_coincidences"] = set.size();
  report["coincidence_rate_cps"] = static_cast<double>(set.size()) / duration;
  report["counts"] = {{"tt", set.count(0, 0)}, {"tr", set.count(0, 1)},
                      {"rt", set.count(1, 0)}, {"rr", set.count(1, 1)}};
  const double r_a = static_cast<double>(a.size()) / std::max(a.duration_s(), 1e-12);
  const double r_b = static_cast<double>(b.size()) / std::max(b.duration_s(), 1e-12);
  report["accidental_rate_estimate_cps"] = r_a * r_b * static_cast<double>(args.window_ps) * 1e-12;
  if (!drift_json.is_null()) report["drift"] = drift_json;
  emit_report(report, args.flags);
  return 0;
}

// ---------------------------------------------------------------- scan

struct ScanArgs {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string basis = "hv";  // sets the sicily analyzer: hv -> 0 deg, da -> 45 deg
  double start_deg = 0.0;
  double step_deg = 20.0;
  int points = 18;
  double point_duration_s = 60.0;
  std::uint64_t window_ps = 1000;
  double span_s = 1.0;
  std::uint64_t fine_bin_ps = 100;
  std::string out_csv;
  CommonFlags flags;
};

int run_scan(const ScanArgs& args) {
  qlink::sim::LinkConfig base = qlink::sim::load_config(args.config_path);
  if (args.basis != "hv" && args.basis != "da")
    throw CLI::ValidationError("--basis must be hv or da");
  if (args.points < 1) throw CLI::ValidationError("--points must be >= 1");
  const double sicily_deg = args.basis == "da" ? 45.0 : 0.0;

  struct Point {
    double angle_deg = 0.0;
    std::array<std::array<std::uint64_t, 2>, 2> counts{};
  };
  std::vector<Point> results(static_cast<std::size_t>(args.points));
  std::optional<std::int64_t> delay;

  for (int i = 0; i < args.points; ++i) {
    const double malta_deg = args.start_deg + i * args.step_deg;
    qlink::sim::LinkConfig cfg = base;
    cfg.schedule = {{0.0, malta_deg * kDegToRad, sicily_deg * kDegToRad, args.point_duration_s}};
    const std::uint64_t point_seed =
        qlink::sim::Rng(args.seed, {0x5CA9, static_cast<std::uint64_t>(i)}).next_u64();
    const qlink::sim::SimResult sim = qlink::sim::simulate_run(cfg, point_seed);
    if (!delay) {
      const auto span_ps = static_cast<std::uint64_t>(args.span_s * 1e12);
      delay = qlink::corr::coarse_to_fine_delay(sim.malta.t_ps, sim.sicily.t_ps, span_ps,
                                                args.fine_bin_ps)
                  .delay_ps;
    }
    const qlink::corr::CoincidenceSet set =
        qlink::corr::match_coincidences(sim.malta, sim.sicily, *delay, args.window_ps);
    results[static_cast<std::size_t>(i)] = {malta_deg,
                                            {{{set.count(0, 0), set.count(0, 1)},
                                              {set.count(1, 0), set.count(1, 1)}}}};
  }

  std::vector<std::pair<double, double>> fit_points;
  fit_points.reserve(results.size());
  for (const Point& p : results)
    fit_points.emplace_back(p.angle_deg * kDegToRad, static_cast<double>(p.counts[0][0]));
  const qlink::analysis::VisibilityFit fit = qlink::analysis::fit_visibility(fit_points);

  if (!args.out_csv.empty()) {
    std::ofstream csv(args.out_csv, std::ios::trunc);
    if (!csv) throw qlink::io::IoError("cannot open for writing: " + args.out_csv);
    csv << "malta_angle_deg,c_tt,c_tr,c_rt,c_rr,fit_c_tt\n";
    for (const Point& p : results) {
      const double model =
          fit.amplitude *
          (1.0 + fit.visibility * std::cos(2.0 * (p.angle_deg * kDegToRad - fit.phase_rad)));
      csv << p.angle_deg << ',' << p.counts[0][0] << ',' << p.counts[0][1] << ','
          << p.counts[1][0] << ',' << p.counts[1][1] << ',' << model << '\n';
    }
  }

  Json report;
  report["manifest"] = make_manifest("scan", args.seed, args.config_path,
                                     qlink::io::digest_hex(base.digest()), {},
                                     args.out_csv.empty()
                                         ? std::vector<std::string>{}
                                         : std::vector<std::string>{args.out_csv},
                                     args.flags);
  report["basis"] = args.basis;
  report["sicily_angle_deg"] = sicily_deg;
  report["window_ps"] = args.window_ps;
  report["delay_ps"] = *delay;
  Json pts = Json::array();
  for (const Point& p : results) {
    Json row;
    row["malta_angle_deg"] = round6(p.angle_deg);
    row["c_tt"] = p.counts[0][0];
    row["c_tr"] = p.counts[0][1];
    row["c_rt"] = p.counts[1][0];
    row["c_rr"] = p.counts[1][1];
    pts.push_back(row);
  }
  report["points"] = pts;
  Json fit_json;
  fit_json["amplitude"] = fit.amplitude;
  fit_json["amplitude_err"] = fit.amplitude_err;
  fit_json["visibility"] = fit.visibility;
  fit_json["visibility_err"] = fit.visibility_err;
  fit_json["phase_deg"] = fit.phase_rad / kDegToRad;
  fit_json["phase_err_deg"] = fit.phase_err / kDegToRad;
  fit_json["residual_rms"] = fit.residual_rms;
  report["fit"] = fit_json;
  emit_report(report, args.flags);
  return 0;
}

// ---------------------------------------------------------------- bell

struct BellArgs {
  std::string path_a, path_b, schedule_path;
  int blocks = 39;
  std::uint64_t window_ps = 1000;
  double span_s = 1.0;
  std::uint64_t fine_bin_ps = 100;
  double drift_block_s = 0.0;
  double ec_inefficiency = 1.1;
  CommonFlags flags;
};

struct SettingAccum {
  double malta_rad = 0.0, sicily_rad = 0.0;
  double duration_s = 0.0;
  std::array<std::array<double, 2>, 2> counts{};
  std::vector<std::array<std::array<double, 2>, 2>> blocks;
  bool key_basis = false;
};

bool angles_match(double x, double y) {
  const double d = std::remainder(x - y, std::numbers::pi);
  return std::abs(d) < 1e-9;
}

qlink::analysis::SettingCounts to_setting_counts(const SettingAccum& s,
                                                 const std::array<std::array<double, 2>, 2>& c) {
  qlink::analysis::SettingCounts sc;
  sc.malta_angle_rad = s.malta_rad;
  sc.sicily_angle_rad = s.sicily_rad;
  sc.counts = c;
  sc.duration_s = std::max(s.duration_s, 1e-12);
  return sc;
}

int run_bell(const BellArgs& args) {
  const qlink::io::TagStream a = qlink::io::read_tags(args.path_a);
  const qlink::io::TagStream b = qlink::io::read_tags(args.path_b);
  const std::vector<qlink::sim::ScheduleEntry> schedule =
      qlink::sim::load_schedule(args.schedule_path);
  if (schedule.empty()) throw qlink::sim::ConfigError("schedule is empty");
  if (args.blocks < 1) throw CLI::ValidationError("--blocks must be >= 1");

  const auto span_ps = static_cast<std::uint64_t>(args.span_s * 1e12);
  const std::int64_t delay =
      qlink::corr::coarse_to_fine_delay(a.t_ps, b.t_ps, span_ps, args.fine_bin_ps).delay_ps;

  qlink::corr::CoincidenceSet set;
  std::optional<double> drift_slope;
  if (args.drift_block_s > 0.0) {
    const qlink::corr::DriftModel drift =
        qlink::corr::track_drift(a.t_ps, b.t_ps, args.drift_block_s, delay);
    set = qlink::corr::match_coincidences(a, b, drift, args.window_ps);
    drift_slope = drift.fitted_slope_ppm();
  } else {
    set = qlink::corr::match_coincidences(a, b, delay, args.window_ps);
  }

  // Group schedule intervals into unique settings and bucket coincidences
  // by the malta-side arrival time.
  std::vector<SettingAccum> settings;
  std::vector<std::size_t> interval_setting(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& e = schedule[i];
    std::size_t found = settings.size();
    for (std::size_t s = 0; s < settings.size(); ++s)
      if (angles_match(settings[s].malta_rad, e.malta_angle_rad) &&
          angles_match(settings[s].sicily_rad, e.sicily_angle_rad)) {
        found = s;
        break;
      }
    if (found == settings.size()) {
      SettingAccum acc;
      acc.malta_rad = e.malta_angle_rad;
      acc.sicily_rad = e.sicily_angle_rad;
      acc.blocks.resize(static_cast<std::size_t>(args.blocks));
      acc.key_basis = angles_match(
          std::remainder(e.malta_angle_rad - e.sicily_angle_rad, std::numbers::pi / 2), 0.0);
      settings.push_back(acc);
    }
    settings[found].duration_s += e.duration_s;
    interval_setting[i] = found;
  }

  for (const auto& rec : set.records) {
    if (rec.channel_a > 1 || rec.channel_b > 1) continue;
    const double t_s = static_cast<double>(rec.t_a) * 1e-12;
    std::size_t idx = schedule.size();
    for (std::size_t i = 0; i < schedule.size(); ++i)
      if (t_s >= schedule[i].start_s && t_s < schedule[i].end_s()) {
        idx = i;
        break;
      }
    if (idx == schedule.size()) continue;
    SettingAccum& acc = settings[interval_setting[idx]];
    const double frac = (t_s - schedule[idx].start_s) / schedule[idx].duration_s;
    const auto block = std::min<std::size_t>(static_cast<std::size_t>(args.blocks) - 1,
                                             static_cast<std::size_t>(frac * args.blocks));
    acc.counts[rec.channel_a][rec.channel_b] += 1.0;
    acc.blocks[block][rec.channel_a][rec.channel_b] += 1.0;
  }

  Json report;
  report["manifest"] = make_manifest("bell", 0, args.schedule_path, "",
                                     {args.path_a, args.path_b}, {}, args.flags);
  report["window_ps"] = args.window_ps;
  report["delay_ps"] = delay;
  report["n_coincidences"] = set.size();
  if (drift_slope) report["drift_slope_ppm"] = *drift_slope;

  Json settings_json = Json::array();
  for (const auto& s : settings) {
    Json row;
    row["malta_angle_deg"] = round6(s.malta_rad / kDegToRad);
    row["sicily_angle_deg"] = round6(s.sicily_rad / kDegToRad);
    row["duration_s"] = s.duration_s;
    row["key_basis"] = s.key_basis;
    row["counts"] = {{"tt", s.counts[0][0]}, {"tr", s.counts[0][1]},
                     {"rt", s.counts[1][0]}, {"rr", s.counts[1][1]}};
    settings_json.push_back(row);
  }
  report["settings"] = settings_json;

  // CHSH quad: the four non-key settings spanning {a1,a2} x {b1,b2}.
  std::vector<std::size_t> chsh;
  for (std::size_t s = 0; s < settings.size(); ++s)
    if (!settings[s].key_basis) chsh.push_back(s);
  if (chsh.size() == 4) {
    std::vector<double> malta_angles, sicily_angles;
    for (std::size_t s : chsh) {
      bool found_m = false, found_s = false;
      for (double m : malta_angles) found_m |= angles_match(m, settings[s].malta_rad);
      for (double v : sicily_angles) found_s |= angles_match(v, settings[s].sicily_rad);
      if (!found_m) malta_angles.push_back(settings[s].malta_rad);
      if (!found_s) sicily_angles.push_back(settings[s].sicily_rad);
    }
    if (malta_angles.size() == 2 && sicily_angles.size() == 2) {
      auto find_setting = [&](double m, double v) -> const SettingAccum* {
        for (std::size_t s : chsh)
          if (angles_match(settings[s].malta_rad, m) && angles_match(settings[s].sicily_rad, v))
            return &settings[s];
        return nullptr;
      };
      // The CHSH combination is labeling-dependent; evaluate the four
      // relabelings and keep the one with the largest |S|.
      qlink::analysis::ChshResult best;
      std::array<double, 2> best_a{}, best_b{};
      bool have = false;
      for (int swap_a = 0; swap_a < 2; ++swap_a)
        for (int swap_b = 0; swap_b < 2; ++swap_b) {
          const double a1 = malta_angles[static_cast<std::size_t>(swap_a)];
          const double a2 = malta_angles[static_cast<std::size_t>(1 - swap_a)];
          const double b1 = sicily_angles[static_cast<std::size_t>(swap_b)];
          const double b2 = sicily_angles[static_cast<std::size_t>(1 - swap_b)];
          const SettingAccum* s11 = find_setting(a1, b1);
          const SettingAccum* s12 = find_setting(a1, b2);
          const SettingAccum* s21 = find_setting(a2, b1);
          const SettingAccum* s22 = find_setting(a2, b2);
          if (!s11 || !s12 || !s21 || !s22) continue;
          const qlink::analysis::ChshResult r = qlink::analysis::S_from_counts(
              to_setting_counts(*s11, s11->counts), to_setting_counts(*s12, s12->counts),
              to_setting_counts(*s21, s21->counts), to_setting_counts(*s22, s22->counts));
          if (!have || std::abs(r.s.value) > std::abs(best.s.value)) {
            best = r;
            best_a = {a1, a2};
            best_b = {b1, b2};
            have = true;
          }
        }
      if (have) {
        Json chsh_json;
        chsh_json["a1_deg"] = round6(best_a[0] / kDegToRad);
        chsh_json["a2_deg"] = round6(best_a[1] / kDegToRad);
        chsh_json["b1_deg"] = round6(best_b[0] / kDegToRad);
        chsh_json["b2_deg"] = round6(best_b[1] / kDegToRad);
        Json evals = Json::array();
        for (const auto& e : best.e) evals.push_back({{"value", e.value}, {"error", e.error}});
        chsh_json["E"] = evals;
        chsh_json["S"] = best.s.value;
        chsh_json["S_abs"] = std::abs(best.s.value);
        chsh_json["S_err_poisson"] = best.s.error;
        chsh_json["angle_warning"] = best.angle_warning;

        // Per-block statistics with the winning labeling.
        const SettingAccum* s11 = find_setting(best_a[0], best_b[0]);
        const SettingAccum* s12 = find_setting(best_a[0], best_b[1]);
        const SettingAccum* s21 = find_setting(best_a[1], best_b[0]);
        const SettingAccum* s22 = find_setting(best_a[1], best_b[1]);
        std::vector<double> block_s;
        for (std::size_t k = 0; k < static_cast<std::size_t>(args.blocks); ++k) {
          const std::array<const SettingAccum*, 4> quad{s11, s12, s21, s22};
          bool ok = true;
          for (const SettingAccum* s : quad) {
            const auto& c = s->blocks[k];
            if (c[0][0] + c[0][1] + c[1][0] + c[1][1] <= 0.0) ok = false;
          }
          if (!ok) continue;
          const qlink::analysis::ChshResult r = qlink::analysis::S_from_counts(
              to_setting_counts(*s11, s11->blocks[k]), to_setting_counts(*s12, s12->blocks[k]),
              to_setting_counts(*s21, s21->blocks[k]), to_setting_counts(*s22, s22->blocks[k]));
          block_s.push_back(r.s.value);
        }
        if (!block_s.empty()) {
          const qlink::analysis::BlockStats bs = qlink::analysis::block_stats(block_s);
          chsh_json["blocks"] = {{"n_blocks", bs.n_blocks},
                                 {"mean", bs.mean},
                                 {"std_of_mean", bs.std_of_mean}};
        }
        report["chsh"] = chsh_json;
      }
    }
  }

  // Key-basis settings: QBER per basis, combined QBER, key rate.
  double key_coincidences = 0.0, key_duration = 0.0;
  double qber_weighted = 0.0, qber_var_weighted = 0.0;
  Json qber_json = Json::array();
  for (const auto& s : settings) {
    if (!s.key_basis) continue;
    const qlink::analysis::SettingCounts sc = to_setting_counts(s, s.counts);
    if (!(sc.total() > 0.0)) continue;
    const qlink::analysis::ValueWithError e = qlink::analysis::E_from_counts(sc);
    const bool anticorrelated = e.value < 0.0;
    const qlink::analysis::ValueWithError q =
        qlink::analysis::qber_from_counts(sc, anticorrelated);
    Json row;
    row["malta_angle_deg"] = round6(s.malta_rad / kDegToRad);
    row["sicily_angle_deg"] = round6(s.sicily_rad / kDegToRad);
    row["convention"] = anticorrelated ? "anticorrelated" : "correlated";
    row["qber"] = q.value;
    row["qber_err"] = q.error;
    row["coincidence_rate_cps"] = sc.total() / sc.duration_s;
    qber_json.push_back(row);
    key_coincidences += sc.total();
    key_duration += s.duration_s;
    qber_weighted += q.value * sc.total();
    qber_var_weighted += q.error * q.error * sc.total() * sc.total();
  }
  if (key_duration > 0.0 && key_coincidences > 0.0) {
    const double q_combined = qber_weighted / key_coincidences;
    const double q_err = std::sqrt(qber_var_weighted) / key_coincidences;
    const double rate = key_coincidences / key_duration;
    Json key_json;
    key_json["per_setting"] = qber_json;
    key_json["qber_combined"] = q_combined;
    key_json["qber_combined_err"] = q_err;
    key_json["coincidence_rate_cps"] = rate;
    key_json["error_correction_inefficiency"] = args.ec_inefficiency;
    key_json["secure_key_rate_bps"] =
        qlink::analysis::secure_key_rate(rate, std::min(q_combined, 0.5), args.ec_inefficiency);
    key_json["formula"] = "R = rate * 1/2 * max(0, 1 - (1 + f) * H2(Q))";
    report["key"] = key_json;
  }

  emit_report(report, args.flags);
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string in_path;
  std::string bell_path, scan_hv_path, scan_da_path;
  CommonFlags flags;
};

Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw qlink::io::IoError("cannot open: " + path);
  Json j;
  in >> j;
  return j;
}

int run_report(const ReportArgs& args) {
  if (!args.in_path.empty()) {
    const Json j = load_json(args.in_path);
    if (args.flags.json) std::fputs(qlink::io::dump_report(j).c_str(), stdout);
    else print_table(j);
    return 0;
  }
  if (args.bell_path.empty() && (args.scan_hv_path.empty() || args.scan_da_path.empty()))
    throw CLI::ValidationError("report needs --in, or --bell and/or both --scan-hv/--scan-da");

  Json combined;
  combined["manifest"] = make_manifest("report", 0, "", "", {}, {}, args.flags);
  if (!args.scan_hv_path.empty() && !args.scan_da_path.empty()) {
    const Json hv = load_json(args.scan_hv_path);
    const Json da = load_json(args.scan_da_path);
    qlink::analysis::VisibilityFit hv_fit, da_fit;
    hv_fit.visibility = hv["fit"]["visibility"].get<double>();
    hv_fit.phase_rad = hv["fit"]["phase_deg"].get<double>() * kDegToRad;
    da_fit.visibility = da["fit"]["visibility"].get<double>();
    da_fit.phase_rad = da["fit"]["phase_deg"].get<double>() * kDegToRad;
    combined["visibility_hv"] = hv_fit.visibility;
    combined["visibility_hv_err"] = hv["fit"]["visibility_err"].get<double>();
    combined["visibility_da"] = da_fit.visibility;
    combined["visibility_da_err"] = da["fit"]["visibility_err"].get<double>();

    double best_phi = 0.0, best_s = 0.0;
    Json curve = Json::array();
    for (int i = 0; i < 360; ++i) {
      const double phi = i * 0.5 * kDegToRad;
      const double s = qlink::analysis::s_curve_at(hv_fit, da_fit, phi);
      curve.push_back({{"phi_deg", i * 0.5}, {"S", s}});
      if (std::abs(s) > std::abs(best_s)) {
        best_s = s;
        best_phi = i * 0.5;
      }
    }
    combined["s_curve"] = curve;
    combined["s_fit_max_abs"] = std::abs(best_s);
    combined["s_fit_argmax_deg"] = best_phi;
  }
  if (!args.bell_path.empty()) {
    const Json bell = load_json(args.bell_path);
    if (bell.contains("chsh")) combined["s_direct"] = bell["chsh"];
    if (bell.contains("key")) combined["key"] = bell["key"];
    combined["window_ps"] = bell["window_ps"];
  }
  emit_report(combined, args.flags);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entangled-photon link simulator and time-tag analysis toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "generate two time-tag streams from a config");
  sim->add_option("--config", sim_args.config_path, "link config file")->required();
  sim->add_option("--seed", sim_args.seed, "master RNG seed");
  sim->add_option("--out-a", sim_args.out_a, "malta output .qtags")->required();
  sim->add_option("--out-b", sim_args.out_b, "sicily output .qtags")->required();
  sim->add_option("--duration-s", sim_args.duration_override_s,
                  "replace the schedule with one interval of this duration");
  sim->add_option("--malta-deg", sim_args.malta_deg, "analyzer angle for --duration-s runs");
  sim->add_option("--sicily-deg", sim_args.sicily_deg, "analyzer angle for --duration-s runs");
  sim_args.flags.attach(sim);

  CorrelateArgs corr_args;
  CLI::App* corr = app.add_subcommand("correlate", "find the inter-stream delay");
  corr->add_option("--a", corr_args.path_a, "stream A (.qtags)")->required();
  corr->add_option("--b", corr_args.path_b, "stream B (.qtags)")->required();
  corr->add_option("--span-s", corr_args.span_s, "search +-span in seconds");
  corr->add_option("--fine-bin-ps", corr_args.fine_bin_ps, "final histogram bin");
  corr_args.flags.attach(corr);

  CoincideArgs coin_args;
  CLI::App* coin = app.add_subcommand("coincide", "match coincidences at a delay");
  coin->add_option("--a", coin_args.path_a)->required();
  coin->add_option("--b", coin_args.path_b)->required();
  std::int64_t delay_opt = 0;
  CLI::Option* delay_flag =
      coin->add_option("--delay-ps", delay_opt, "known delay; omit to search");
  coin->add_option("--window-ps", coin_args.window_ps, "coincidence window");
  coin->add_option("--span-s", coin_args.span_s);
  coin->add_option("--fine-bin-ps", coin_args.fine_bin_ps);
  coin->add_option("--drift-block-s", coin_args.drift_block_s,
                   "track clock drift with this block length (0 = off)");
  coin_args.flags.attach(coin);

  ScanArgs scan_args;
  CLI::App* scan = app.add_subcommand("scan", "simulate a visibility scan and fit it");
  scan->add_option("--config", scan_args.config_path)->required();
  scan->add_option("--seed", scan_args.seed);
  scan->add_option("--basis", scan_args.basis, "sicily basis: hv or da");
  scan->add_option("--start-deg", scan_args.start_deg);
  scan->add_option("--step-deg", scan_args.step_deg);
  scan->add_option("--points", scan_args.points);
  scan->add_option("--point-duration-s", scan_args.point_duration_s);
  scan->add_option("--window-ps", scan_args.window_ps);
  scan->add_option("--span-s", scan_args.span_s);
  scan->add_option("--fine-bin-ps", scan_args.fine_bin_ps);
  scan->add_option("--out-csv", scan_args.out_csv, "per-angle counts and fit curve");
  scan_args.flags.attach(scan);

  BellArgs bell_args;
  CLI::App* bell = app.add_subcommand("bell", "CHSH / QBER / key-rate analysis of tag streams");
  bell->add_option("--a", bell_args.path_a)->required();
  bell->add_option("--b", bell_args.path_b)->required();
  bell->add_option("--schedule", bell_args.schedule_path, "analyzer schedule file")->required();
  bell->add_option("--blocks", bell_args.blocks, "blocks per setting for the statistics");
  bell->add_option("--window-ps", bell_args.window_ps);
  bell->add_option("--span-s", bell_args.span_s);
  bell->add_option("--fine-bin-ps", bell_args.fine_bin_ps);
  bell->add_option("--drift-block-s", bell_args.drift_block_s);
  bell->add_option("--ec-inefficiency", bell_args.ec_inefficiency,
                   "error-correction inefficiency f in the key-rate formula");
  bell_args.flags.attach(bell);

  ReportArgs report_args;
  CLI::App* rep = app.add_subcommand("report", "render or combine JSON reports");
  rep->add_option("--in", report_args.in_path, "render an existing report");
  rep->add_option("--bell", report_args.bell_path, "bell report to fold in");
  rep->add_option("--scan-hv", report_args.scan_hv_path, "HV-basis scan report");
  rep->add_option("--scan-da", report_args.scan_da_path, "DA-basis scan report");
  report_args.flags.attach(rep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (sim->parsed()) return run_simulate(sim_args);
    if (corr->parsed()) return run_correlate(corr_args);
    if (coin->parsed()) {
      if (delay_flag->count() > 0) coin_args.delay_ps = delay_opt;
      return run_coincide(coin_args);
    }
    if (scan->parsed()) return run_scan(scan_args);
    if (bell->parsed()) return run_bell(bell_args);
    if (rep->parsed()) return run_report(report_args);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const qlink::corr::NoCorrelationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNoCorrelation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
