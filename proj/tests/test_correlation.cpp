#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "qlink/corr/correlate.hpp"

using namespace qlink::corr;
using qlink::io::TagStream;

namespace {

std::vector<std::uint64_t> poisson_times(double rate_hz, double duration_s, std::uint64_t seed,
                                         std::uint64_t offset_ps = 0) {
  std::mt19937_64 gen(seed);
  std::exponential_distribution<double> exp_dist(rate_hz);
  std::vector<std::uint64_t> times;
  double t = 0.0;
  while (true) {
    t += exp_dist(gen);
    if (t >= duration_s) break;
    times.push_back(offset_ps + static_cast<std::uint64_t>(t * 1e12));
  }
  return times;
}

TagStream to_stream(std::vector<std::uint64_t> times, std::uint64_t seed = 0) {
  std::mt19937_64 gen(seed);
  TagStream s;
  for (std::uint64_t t : times) s.push_back(static_cast<std::uint8_t>(gen() & 1), t);
  return s;
}

// All-pairs counting oracle for the correlogram mass.
std::uint64_t brute_force_pairs(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                std::int64_t min_off, std::int64_t max_off) {
  std::uint64_t n = 0;
  for (std::uint64_t tb : b)
    for (std::uint64_t ta : a) {
      const std::int64_t d = static_cast<std::int64_t>(tb) - static_cast<std::int64_t>(ta);
      if (d >= min_off && d < max_off) ++n;
    }
  return n;
}

// All-pairs plus earliest-first greedy matching oracle.
CoincidenceSet brute_force_match(const TagStream& a, const TagStream& b, std::int64_t delay,
                                 std::uint64_t window) {
  const std::int64_t half = static_cast<std::int64_t>(window) / 2;
  struct Pair {
    std::size_t i, j;
  };
  std::vector<Pair> candidates;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const std::int64_t d = static_cast<std::int64_t>(b.t_ps[j]) - delay -
                             static_cast<std::int64_t>(a.t_ps[i]);
      if (d >= -half && d <= half) candidates.push_back({i, j});
    }
  std::sort(candidates.begin(), candidates.end(), [&](const Pair& x, const Pair& y) {
    if (a.t_ps[x.i] != a.t_ps[y.i]) return a.t_ps[x.i] < a.t_ps[y.i];
    if (b.t_ps[x.j] != b.t_ps[y.j]) return b.t_ps[x.j] < b.t_ps[y.j];
    if (x.i != y.i) return x.i < y.i;
    return x.j < y.j;
  });
  std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
  CoincidenceSet set;
  for (const Pair& p : candidates) {
    if (used_a[p.i] || used_b[p.j]) continue;
    used_a[p.i] = used_b[p.j] = true;
    set.records.push_back({a.t_ps[p.i], b.t_ps[p.j], a.channel[p.i], b.channel[p.j]});
    if (a.channel[p.i] < 2 && b.channel[p.j] < 2) ++set.counts[a.channel[p.i]][b.channel[p.j]];
  }
  std::sort(set.records.begin(), set.records.end(),
            [](const CoincidenceRecord& x, const CoincidenceRecord& y) { return x.t_a < y.t_a; });
  return set;
}

}  // namespace

TEST_CASE("identical streams put all mass in the zero-offset bin") {
  std::vector<std::uint64_t> t;
  for (int i = 0; i < 200; ++i) t.push_back(1000 + 100'000 * static_cast<std::uint64_t>(i));
  const Correlogram hist = cross_correlogram(t, t, 100, -500, 500);
  const std::size_t zero_bin = static_cast<std::size_t>((0 - hist.start_offset_ps)) / 100;
  CHECK(hist.counts[zero_bin] == t.size());
  CHECK(hist.total() == t.size());
}

TEST_CASE("a pure shift lands in a single bin at the configured delay") {
  const std::int64_t delay = 532'281'000'000;  // the preset link delay
  std::vector<std::uint64_t> a, b;
  for (int i = 0; i < 500; ++i) {
    const std::uint64_t t = 10'000 + 2'000'000 * static_cast<std::uint64_t>(i);
    a.push_back(t);
    b.push_back(t + static_cast<std::uint64_t>(delay));
  }
  const Correlogram hist = cross_correlogram(a, b, 1000, delay - 500'000, delay + 500'000);
  std::size_t occupied = 0, hit = 0;
  for (std::size_t k = 0; k < hist.counts.size(); ++k)
    if (hist.counts[k] > 0) {
      ++occupied;
      hit = k;
    }
  CHECK(occupied == 1);
  CHECK(hist.counts[hit] == a.size());
  CHECK(std::abs(hist.bin_center(hit) - delay) <= 500);
}

TEST_CASE("independent streams give a flat histogram at the accidental level") {
  const auto a = poisson_times(10'000, 10.0, 1);
  const auto b = poisson_times(10'000, 10.0, 2);
  const Correlogram hist = cross_correlogram(a, b, 1000, -1'000'000, 1'000'000);
  const double expected = 10'000.0 * 10'000.0 * 1e-9 * 10.0;  // r_a * r_b * w * T
  for (const auto c : hist.counts)
    CHECK(std::abs(static_cast<double>(c) - expected) <= 5.0 * std::sqrt(expected));
}

TEST_CASE("correlogram argument validation") {
  std::vector<std::uint64_t> t = {1, 2, 3};
  CHECK_THROWS_AS(cross_correlogram(t, t, 0, -10, 10), std::invalid_argument);
  CHECK_THROWS_AS(cross_correlogram(t, t, 10, 10, 10), std::invalid_argument);
  std::vector<std::uint64_t> unsorted = {5, 1};
  CHECK_THROWS_AS(cross_correlogram(unsorted, t, 10, -10, 10), std::invalid_argument);
}

TEST_CASE("correlogram mass equals the all-pairs oracle") {
  std::mt19937_64 gen(9);
  std::uniform_int_distribution<std::uint64_t> gap(0, 5000);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint64_t> a, b;
    std::uint64_t ta = 0, tb = 0;
    for (int i = 0; i < 200; ++i) {
      ta += gap(gen);
      a.push_back(ta);
      tb += gap(gen);
      b.push_back(tb);
    }
    const std::int64_t min_off = -40'000 + static_cast<std::int64_t>(gen() % 1000);
    const std::int64_t max_off = 40'000 + static_cast<std::int64_t>(gen() % 1000);
    const std::uint64_t w = 1 + gen() % 700;
    const Correlogram hist = cross_correlogram(a, b, w, min_off, max_off);
    CHECK(hist.total() == brute_force_pairs(a, b, min_off, max_off));
  }
}

TEST_CASE("peak statistics on a synthetic Gaussian") {
  Correlogram hist;
  hist.bin_width_ps = 50;
  hist.start_offset_ps = -25'000;
  const double sigma = 300.0, amplitude = 5000.0, background = 100.0;
  const std::size_t n = 1000;
  hist.counts.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = static_cast<double>(hist.bin_center(k));
    hist.counts[k] = static_cast<std::uint64_t>(
        std::llround(background + amplitude * std::exp(-x * x / (2 * sigma * sigma))));
  }
  const PeakStats stats = peak_stats(hist);
  CHECK(stats.fwhm_ps == doctest::Approx(2.3548 * sigma).epsilon(0.05));
  CHECK(std::abs(stats.delay_ps) <= 50);
  CHECK(stats.background_mean == doctest::Approx(background).epsilon(0.05));
  CHECK(stats.significance > 100.0);
}

TEST_CASE("a delta peak has FWHM at most one bin") {
  Correlogram hist;
  hist.bin_width_ps = 200;
  hist.start_offset_ps = 0;
  hist.counts.assign(101, 2);
  hist.counts[60] = 1000;
  const PeakStats stats = peak_stats(hist);
  CHECK(stats.fwhm_ps <= 200.0);
  CHECK(stats.delay_ps == hist.bin_center(60));
}

TEST_CASE("coarse_to_fine_delay recovers an embedded link delay over a +-1 s span") {
  const std::int64_t delay = 532'281'000'000;
  const auto a = poisson_times(10'000, 20.0, 11);
  // Sicily side: 10% of the pairs survive, 300 ps jitter, plus background.
  std::mt19937_64 gen(12);
  std::normal_distribution<double> jitter(0.0, 300.0 / 2.3548);
  std::vector<std::uint64_t> b;
  for (std::uint64_t t : a)
    if (gen() % 10 == 0)
      b.push_back(static_cast<std::uint64_t>(static_cast<double>(t + delay) + jitter(gen)));
  const auto noise = poisson_times(500, 20.0, 13, static_cast<std::uint64_t>(delay) / 2);
  b.insert(b.end(), noise.begin(), noise.end());
  std::sort(b.begin(), b.end());

  const PeakStats peak = coarse_to_fine_delay(a, b, 1'000'000'000'000ULL, 100);
  CHECK(std::abs(peak.delay_ps - delay) <= 500);
  CHECK(peak.significance >= 5.0);
}

TEST_CASE("coarse_to_fine_delay on identical streams returns zero") {
  const auto a = poisson_times(5'000, 5.0, 21);
  const PeakStats peak = coarse_to_fine_delay(a, a, 1'000'000'000, 100);
  CHECK(std::abs(peak.delay_ps) <= 100);
}

TEST_CASE("unrelated streams raise no-correlation") {
  const auto a = poisson_times(1'000, 5.0, 31);
  const auto b = poisson_times(1'000, 5.0, 32);
  CHECK_THROWS_AS(coarse_to_fine_delay(a, b, 1'000'000'000'000ULL, 100), NoCorrelationError);
}

TEST_CASE("match_coincidences basics") {
  const std::int64_t delay = 5000;
  TagStream a, b;
  a.push_back(0, 100);
  b.push_back(1, static_cast<std::uint64_t>(100 + delay));
  CHECK(match_coincidences(a, b, delay, 1000).size() == 1);

  TagStream b_far;
  b_far.push_back(1, static_cast<std::uint64_t>(100 + delay + 600));
  CHECK(match_coincidences(a, b_far, delay, 1000).empty());  // outside half-window

  // each tag participates at most once
  TagStream a2, b2;
  a2.push_back(0, 100);
  b2.push_back(0, 100);
  b2.push_back(1, 200);
  const CoincidenceSet set = match_coincidences(a2, b2, 0, 1000);
  CHECK(set.size() == 1);
  CHECK(set.records[0].t_b == 100);  // earliest-first
}

TEST_CASE("match_coincidences equals the brute-force greedy oracle") {
  std::mt19937_64 gen(101);
  std::uniform_int_distribution<std::uint64_t> gap(0, 2000);
  for (int trial = 0; trial < 20; ++trial) {
    TagStream a, b;
    std::uint64_t ta = 0, tb = 500;
    const std::size_t n = trial < 18 ? 500 : 10'000;
    for (std::size_t i = 0; i < n; ++i) {
      ta += gap(gen);
      a.push_back(static_cast<std::uint8_t>(gen() & 1), ta);
      tb += gap(gen);
      b.push_back(static_cast<std::uint8_t>(gen() & 1), tb);
    }
    const std::int64_t delay = static_cast<std::int64_t>(gen() % 3000) - 1500;
    const std::uint64_t window = 200 + gen() % 3000;

    const CoincidenceSet fast = match_coincidences(a, b, delay, window);
    const CoincidenceSet slow = brute_force_match(a, b, delay, window);
    REQUIRE(fast.size() == slow.size());
    CHECK(fast.counts == slow.counts);
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast.records[i].t_a == slow.records[i].t_a);
      CHECK(fast.records[i].t_b == slow.records[i].t_b);
    }
  }
}

TEST_CASE("matching is symmetric under stream swap with delay negation") {
  std::mt19937_64 gen(202);
  std::uniform_int_distribution<std::uint64_t> gap(0, 2000);
  TagStream a, b;
  std::uint64_t ta = 1000, tb = 1500;
  for (int i = 0; i < 2000; ++i) {
    ta += gap(gen);
    a.push_back(static_cast<std::uint8_t>(gen() & 1), ta);
    tb += gap(gen);
    b.push_back(static_cast<std::uint8_t>(gen() & 1), tb);
  }
  const std::int64_t delay = 700;
  const CoincidenceSet fwd = match_coincidences(a, b, delay, 1500);
  const CoincidenceSet rev = match_coincidences(b, a, -delay, 1500);
  REQUIRE(fwd.size() == rev.size());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(fwd.count(i, j) == rev.count(j, i));
  for (std::size_t k = 0; k < fwd.size(); ++k) {
    CHECK(fwd.records[k].t_a == rev.records[k].t_b);
    CHECK(fwd.records[k].t_b == rev.records[k].t_a);
  }
}

namespace {

struct DriftFixture {
  TagStream a, b_drifted, b_clean;
  std::int64_t base_delay = 1'000'000'000;
  double drift_ppm = 10.0;

  explicit DriftFixture(double duration_s = 100.0) {
    const auto ta = poisson_times(20'000, duration_s, 41);
    std::mt19937_64 gen(42);
    std::normal_distribution<double> jitter(0.0, 500.0 / 2.3548);
    for (std::uint64_t t : ta) a.push_back(0, t);
    std::vector<std::uint64_t> clean, drifted;
    for (std::uint64_t t : ta) {
      if (gen() % 4 != 0) continue;  // 25% arrive at the far side
      const double arrival = static_cast<double>(t) + static_cast<double>(base_delay) + jitter(gen);
      clean.push_back(static_cast<std::uint64_t>(arrival));
      drifted.push_back(static_cast<std::uint64_t>(arrival * (1.0 + drift_ppm * 1e-6)));
    }
    std::sort(clean.begin(), clean.end());
    std::sort(drifted.begin(), drifted.end());
    for (std::uint64_t t : clean) b_clean.push_back(0, t);
    for (std::uint64_t t : drifted) b_drifted.push_back(0, t);
  }
};

}  // namespace

TEST_CASE("track_drift on a drift-free link gives flat knots") {
  DriftFixture fx(50.0);
  const DriftModel model = track_drift(fx.a.t_ps, fx.b_clean.t_ps, 10.0, fx.base_delay);
  REQUIRE(model.knots.size() >= 4);
  for (const auto& k : model.knots)
    CHECK(std::abs(k.delay_ps - model.knots.front().delay_ps) <= 1000);
  CHECK(std::abs(model.fitted_slope_ppm()) < 0.05);
}

TEST_CASE("track_drift recovers an injected 10 ppm drift within 2 percent") {
  DriftFixture fx(100.0);
  const DriftModel model = track_drift(fx.a.t_ps, fx.b_drifted.t_ps, 10.0, fx.base_delay);
  REQUIRE(model.knots.size() >= 8);
  CHECK(model.fitted_slope_ppm() == doctest::Approx(10.0).epsilon(0.02));
}

TEST_CASE("drift-compensated matching recovers the drift-free coincidences") {
  DriftFixture fx(100.0);
  const CoincidenceSet control = match_coincidences(fx.a, fx.b_clean, fx.base_delay, 4000);
  const DriftModel model = track_drift(fx.a.t_ps, fx.b_drifted.t_ps, 10.0, fx.base_delay);
  const CoincidenceSet compensated = match_coincidences(fx.a, fx.b_drifted, model, 4000);
  CHECK(static_cast<double>(compensated.size()) >= 0.95 * static_cast<double>(control.size()));
}

TEST_CASE("drift model interpolates inside and extrapolates beyond the knots") {
  DriftModel m{{{1000, 100}, {2000, 200}}};
  CHECK(m.delay_at(1000) == 100);
  CHECK(m.delay_at(1500) == 150);
  CHECK(m.delay_at(2000) == 200);
  CHECK(m.delay_at(500) == 50);    // boundary segment extended backwards
  CHECK(m.delay_at(3000) == 300);  // and forwards
  DriftModel single{{{1000, 42}}};
  CHECK(single.delay_at(5) == 42);
  CHECK(single.delay_at(5000) == 42);
}
