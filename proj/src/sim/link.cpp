#include "qlink/sim/link.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace qlink::sim {

namespace {

// Stage ids for the splittable seeding scheme.
enum : std::uint64_t { kStageInterval = 1, kStageDetector = 2 };

constexpr double kPsPerSecond = 1e12;

}  // namespace

std::vector<double> emit_pairs(double rate_hz, double duration_s, std::uint64_t seed) {
  if (rate_hz < 0.0 || duration_s < 0.0)
    throw std::invalid_argument("emit_pairs: rate and duration must be >= 0");
  std::vector<double> times;
  if (rate_hz == 0.0 || duration_s == 0.0) return times;
  times.reserve(static_cast<std::size_t>(rate_hz * duration_s * 1.1) + 16);
  Rng rng(seed);
  const double end_ps = duration_s * kPsPerSecond;
  double t = 0.0;
  while (true) {
    t += rng.exponential(rate_hz) * kPsPerSecond;
    if (t >= end_ps) break;
    times.push_back(t);
  }
  return times;
}

PairOutcome detect_pair(const core::JointProbs& probs, const std::array<double, 2>& malta_survival,
                        const std::array<double, 2>& sicily_survival, Rng& rng) {
  const int outcome = rng.pick4(probs.cumulative());
  const int malta_port = outcome >> 1;   // tt, tr -> 0; rt, rr -> 1
  const int sicily_port = outcome & 1;   // tt, rt -> 0; tr, rr -> 1
  PairOutcome result;
  if (rng.bernoulli(malta_survival[static_cast<std::size_t>(malta_port)]))
    result.malta_port = malta_port;
  if (rng.bernoulli(sicily_survival[static_cast<std::size_t>(sicily_port)]))
    result.sicily_port = sicily_port;
  return result;
}

namespace {

// Sorts times that are already nearly sorted (small jitter on top of an
// ordered emission process) in a single linear pass; falls back to
// std::sort when displacements are potentially large.
void sort_times(std::vector<double>& t, double max_displacement, double typical_gap) {
  if (t.size() < 2) return;
  if (typical_gap <= 0.0 || max_displacement > 0.25 * typical_gap) {
    std::sort(t.begin(), t.end());
    return;
  }
  for (std::size_t i = 1; i < t.size(); ++i) {
    double v = t[i];
    std::size_t j = i;
    while (j > 0 && t[j - 1] > v) {
      t[j] = t[j - 1];
      --j;
    }
    t[j] = v;
  }
}

}  // namespace

std::vector<double> apply_detector(std::vector<double> photon_times_ps, const DetectorConfig& cfg,
                                   double duration_s, Rng& rng) {
  const double sigma = cfg.jitter_fwhm_ps / Rng::kFwhmPerSigma;
  if (cfg.jitter_fwhm_ps > 0.0)
    for (double& t : photon_times_ps) t += rng.normal() * sigma;

  const double n = static_cast<double>(photon_times_ps.size());
  const double typical_gap = n > 1 ? duration_s * kPsPerSecond / n : 0.0;
  sort_times(photon_times_ps, 6.0 * sigma, typical_gap);

  if (cfg.dark_cps > 0.0 && duration_s > 0.0) {
    std::vector<double> darks;
    darks.reserve(static_cast<std::size_t>(cfg.dark_cps * duration_s * 1.2) + 16);
    const double end_ps = duration_s * kPsPerSecond;
    double t = 0.0;
    while (true) {
      t += rng.exponential(cfg.dark_cps) * kPsPerSecond;
      if (t >= end_ps) break;
      darks.push_back(t);
    }
    const std::size_t mid = photon_times_ps.size();
    photon_times_ps.insert(photon_times_ps.end(), darks.begin(), darks.end());
    std::inplace_merge(photon_times_ps.begin(), photon_times_ps.begin() + static_cast<std::ptrdiff_t>(mid),
                       photon_times_ps.end());
  }

  std::vector<double> accepted;
  accepted.reserve(photon_times_ps.size());
  double last = -1.0;
  for (double t : photon_times_ps) {
    if (t < 0.0) continue;  // jitter pushed the event before the run start
    if (last >= 0.0 && t - last < cfg.dead_time_ps) continue;
    accepted.push_back(t);
    last = t;
  }
  return accepted;
}

std::uint64_t apply_clock_ps(double t_ps, const ClockConfig& cfg) {
  const double scaled = t_ps * (1.0 + cfg.drift_ppm * 1e-6) + static_cast<double>(cfg.offset_ps);
  if (!(scaled >= 0.0) || scaled >= 1.8446744073709552e19)
    throw ClockRangeError("clock-transformed timestamp leaves the 64-bit range");
  const double res = static_cast<double>(cfg.resolution_ps);
  const double quantized = std::floor(scaled / res + 0.5) * res;  // half rounds up
  return static_cast<std::uint64_t>(quantized);
}

io::TagStream apply_clock(const io::TagStream& tags, const ClockConfig& cfg) {
  io::TagStream out = tags;
  out.resolution_ps = cfg.resolution_ps;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.t_ps[i] = apply_clock_ps(static_cast<double>(tags.t_ps[i]), cfg);
  return out;
}

unsigned thread_cap() {
  if (const char* env = std::getenv("QLINK_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {

struct IntervalResult {
  std::array<std::vector<double>, 2> malta;
  std::array<std::vector<double>, 2> sicily;
};

IntervalResult run_interval(const LinkConfig& cfg, const core::TwoQubitState& state,
                            std::size_t index, std::uint64_t seed) {
  const ScheduleEntry& entry = cfg.schedule[index];
  const core::JointProbs probs =
      core::joint_outcome_probs(state, entry.malta_angle_rad, entry.sicily_angle_rad);
  const std::array<double, 4> cumulative = probs.cumulative();

  const double transmission = cfg.fibre_transmission();
  const std::array<double, 2> malta_survival = {
      cfg.malta_arm_efficiency * cfg.malta_det[0].efficiency,
      cfg.malta_arm_efficiency * cfg.malta_det[1].efficiency};
  const std::array<double, 2> sicily_survival = {
      cfg.sicily_arm_efficiency * transmission * cfg.sicily_det[0].efficiency,
      cfg.sicily_arm_efficiency * transmission * cfg.sicily_det[1].efficiency};

  IntervalResult out;
  if (cfg.pair_rate_hz <= 0.0) return out;
  const double expected = cfg.pair_rate_hz * entry.duration_s;
  for (int ch = 0; ch < 2; ++ch) {
    out.malta[static_cast<std::size_t>(ch)].reserve(
        static_cast<std::size_t>(expected * malta_survival[static_cast<std::size_t>(ch)] * 0.55) + 16);
    out.sicily[static_cast<std::size_t>(ch)].reserve(
        static_cast<std::size_t>(expected * sicily_survival[static_cast<std::size_t>(ch)] * 0.55) + 16);
  }

  Rng rng(seed, {kStageInterval, index});
  const double start_ps = entry.start_s * kPsPerSecond;
  const double end_ps = entry.end_s() * kPsPerSecond;
  const double rate = cfg.pair_rate_hz;
  const double dispersion = cfg.fibre_dispersion_fwhm_ps;
  double t = start_ps;
  while (true) {
    t += rng.exponential(rate) * kPsPerSecond;
    if (t >= end_ps) break;
    const int outcome = rng.pick4(cumulative);
    const int malta_port = outcome >> 1;
    const int sicily_port = outcome & 1;
    if (rng.bernoulli(malta_survival[static_cast<std::size_t>(malta_port)]))
      out.malta[static_cast<std::size_t>(malta_port)].push_back(t);
    if (rng.bernoulli(sicily_survival[static_cast<std::size_t>(sicily_port)])) {
      double arrival = t + cfg.fibre_delay_ps;
      if (dispersion > 0.0) arrival += rng.gaussian_fwhm(dispersion);
      out.sicily[static_cast<std::size_t>(sicily_port)].push_back(arrival);
    }
  }
  return out;
}

io::TagStream assemble_station(std::array<std::vector<double>, 2> photons,
                               const std::array<DetectorConfig, 2>& dets, const ClockConfig& clock,
                               double duration_s, std::uint64_t seed, int station,
                               const std::string& label,
                               const std::array<std::uint8_t, 32>& digest) {
  std::array<std::vector<std::uint64_t>, 2> per_channel;
  for (int ch = 0; ch < 2; ++ch) {
    const auto chu = static_cast<std::size_t>(ch);
    Rng rng(seed, {kStageDetector, static_cast<std::uint64_t>(station * 2 + ch)});
    std::vector<double> accepted =
        apply_detector(std::move(photons[chu]), dets[chu], duration_s, rng);
    auto& ticks = per_channel[chu];
    ticks.reserve(accepted.size());
    for (double t : accepted) ticks.push_back(apply_clock_ps(t, clock));
    // Clock quantization cannot reorder (positive rate), but make it explicit.
    std::sort(ticks.begin(), ticks.end());
  }

  io::TagStream stream;
  stream.resolution_ps = clock.resolution_ps;
  stream.channel_count = 2;
  stream.station_label = label;
  stream.config_digest = digest;
  stream.t_ps.reserve(per_channel[0].size() + per_channel[1].size());
  stream.channel.reserve(stream.t_ps.capacity());
  std::size_t i = 0, j = 0;
  while (i < per_channel[0].size() || j < per_channel[1].size()) {
    const bool take0 = j >= per_channel[1].size() ||
                       (i < per_channel[0].size() && per_channel[0][i] <= per_channel[1][j]);
    if (take0) stream.push_back(0, per_channel[0][i++]);
    else stream.push_back(1, per_channel[1][j++]);
  }
  return stream;
}

}  // namespace

SimResult simulate_run(const LinkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const core::TwoQubitState noisy = core::noisy_pair_state(cfg.v_werner, cfg.hv_dephasing);
  const core::LocalUnitary channel =
      core::LocalUnitary::from_euler(cfg.channel_euler_z1_rad, cfg.channel_euler_y_rad,
                                     cfg.channel_euler_z2_rad, core::Side::sicily);
  const core::TwoQubitState state = core::apply_local_unitary(noisy, channel);

  const std::size_t n_intervals = cfg.schedule.size();
  std::vector<IntervalResult> results(n_intervals);

  const unsigned workers = std::min<unsigned>(thread_cap(), static_cast<unsigned>(n_intervals));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n_intervals; ++k) results[k] = run_interval(cfg, state, k, seed);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      while (true) {
        const std::size_t k = next.fetch_add(1);
        if (k >= n_intervals) return;
        results[k] = run_interval(cfg, state, k, seed);
      }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::array<std::vector<double>, 2> malta_photons, sicily_photons;
  for (auto& r : results) {
    for (int ch = 0; ch < 2; ++ch) {
      const auto chu = static_cast<std::size_t>(ch);
      auto append = [](std::vector<double>& dst, std::vector<double>& src) {
        dst.insert(dst.end(), src.begin(), src.end());
        src.clear();
        src.shrink_to_fit();
      };
      append(malta_photons[chu], r.malta[chu]);
      append(sicily_photons[chu], r.sicily[chu]);
    }
  }
  results.clear();
  results.shrink_to_fit();

  const double duration = cfg.duration_s();
  const auto digest = cfg.digest();
  SimResult out;
  out.malta = assemble_station(std::move(malta_photons), cfg.malta_det, cfg.malta_clock, duration,
                               seed, 0, "malta", digest);
  out.sicily = assemble_station(std::move(sicily_photons), cfg.sicily_det, cfg.sicily_clock,
                                duration, seed, 1, "sicily", digest);
  return out;
}

double analytic_coincidence_rate(const LinkConfig& cfg) {
  if (cfg.schedule.empty()) return 0.0;
  const core::TwoQubitState noisy = core::noisy_pair_state(cfg.v_werner, cfg.hv_dephasing);
  const core::LocalUnitary channel =
      core::LocalUnitary::from_euler(cfg.channel_euler_z1_rad, cfg.channel_euler_y_rad,
                                     cfg.channel_euler_z2_rad, core::Side::sicily);
  const core::TwoQubitState state = core::apply_local_unitary(noisy, channel);
  const ScheduleEntry& entry = cfg.schedule.front();
  const core::JointProbs p =
      core::joint_outcome_probs(state, entry.malta_angle_rad, entry.sicily_angle_rad);
  const double transmission = cfg.fibre_transmission();
  double rate = 0.0;
  const std::array<double, 4> probs = p.as_array();
  for (int outcome = 0; outcome < 4; ++outcome) {
    const auto malta_port = static_cast<std::size_t>(outcome >> 1);
    const auto sicily_port = static_cast<std::size_t>(outcome & 1);
    rate += probs[static_cast<std::size_t>(outcome)] *
            cfg.malta_arm_efficiency * cfg.malta_det[malta_port].efficiency *
            cfg.sicily_arm_efficiency * transmission * cfg.sicily_det[sicily_port].efficiency;
  }
  return cfg.pair_rate_hz * rate;
}

}  // namespace qlink::sim
