#include "qlink/corr/correlate.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <optional>

namespace qlink::corr {

namespace {

constexpr double kPeakSignificance = 5.0;

std::int64_t to_i64(std::uint64_t t) { return static_cast<std::int64_t>(t); }

void require_sorted(std::span<const std::uint64_t> v, const char* name) {
  if (!std::is_sorted(v.begin(), v.end()))
    throw std::invalid_argument(std::string(name) + " stream is not sorted");
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

// Half-maximum crossing positions by linear interpolation between bin centers.
double interpolate_fwhm(const Correlogram& hist, std::size_t peak, double background) {
  const double peak_height = static_cast<double>(hist.counts[peak]);
  if (peak_height <= background) return 0.0;
  const double half = background + 0.5 * (peak_height - background);
  const double w = static_cast<double>(hist.bin_width_ps);

  double right = static_cast<double>(hist.bin_center(hist.counts.size() - 1)) + 0.5 * w;
  for (std::size_t i = peak + 1; i < hist.counts.size(); ++i) {
    const double c = static_cast<double>(hist.counts[i]);
    if (c < half) {
      const double prev = static_cast<double>(hist.counts[i - 1]);
      const double frac = (prev - half) / std::max(prev - c, 1e-300);
      right = static_cast<double>(hist.bin_center(i - 1)) + frac * w;
      break;
    }
  }
  double left = static_cast<double>(hist.bin_center(0)) - 0.5 * w;
  for (std::size_t i = peak; i-- > 0;) {
    const double c = static_cast<double>(hist.counts[i]);
    if (c < half) {
      const double next = static_cast<double>(hist.counts[i + 1]);
      const double frac = (next - half) / std::max(next - c, 1e-300);
      left = static_cast<double>(hist.bin_center(i + 1)) - frac * w;
      break;
    }
  }
  return std::max(right - left, 0.0);
}

}  // namespace

std::uint64_t Correlogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

Correlogram cross_correlogram(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                              std::uint64_t bin_width_ps, std::int64_t min_offset_ps,
                              std::int64_t max_offset_ps) {
  if (bin_width_ps == 0) throw std::invalid_argument("bin width must be >= 1 ps");
  if (max_offset_ps <= min_offset_ps) throw std::invalid_argument("empty offset range");
  require_sorted(a, "A");
  require_sorted(b, "B");

  const std::uint64_t span = static_cast<std::uint64_t>(max_offset_ps - min_offset_ps);
  const std::size_t n_bins = static_cast<std::size_t>((span + bin_width_ps - 1) / bin_width_ps);
  Correlogram hist{min_offset_ps, bin_width_ps, std::vector<std::uint64_t>(n_bins, 0)};
  if (a.empty() || b.empty()) return hist;

  // d = t_b - t_a lands in [min, max)  <=>  t_a in (t_b - max, t_b - min].
  // Both pointers only ever advance: O(n_a + n_b + pairs) and sequential.
  std::size_t lo = 0, hi = 0;
  const std::size_t na = a.size();
  for (const std::uint64_t tbu : b) {
    const std::int64_t tb = to_i64(tbu);
    const std::int64_t ta_min = tb - max_offset_ps + 1;
    const std::int64_t ta_max = tb - min_offset_ps;
    while (lo < na && to_i64(a[lo]) < ta_min) ++lo;
    if (hi < lo) hi = lo;
    while (hi < na && to_i64(a[hi]) <= ta_max) ++hi;
    for (std::size_t i = lo; i < hi; ++i) {
      const std::uint64_t k =
          static_cast<std::uint64_t>(tb - to_i64(a[i]) - min_offset_ps) / bin_width_ps;
      ++hist.counts[static_cast<std::size_t>(k)];
    }
  }
  return hist;
}

PeakStats peak_stats(const Correlogram& hist) {
  if (hist.counts.empty()) throw std::invalid_argument("empty correlogram");
  const std::size_t peak =
      static_cast<std::size_t>(std::max_element(hist.counts.begin(), hist.counts.end()) -
                               hist.counts.begin());
  const double peak_height = static_cast<double>(hist.counts[peak]);

  std::vector<double> all(hist.counts.size());
  for (std::size_t i = 0; i < hist.counts.size(); ++i) all[i] = static_cast<double>(hist.counts[i]);
  double background = median_of(all);

  // Re-estimate from bins farther than 10 FWHM once the width is known.
  double fwhm = interpolate_fwhm(hist, peak, background);
  if (fwhm > 0.0) {
    const double peak_center = static_cast<double>(hist.bin_center(peak));
    std::vector<double> far;
    far.reserve(hist.counts.size());
    for (std::size_t i = 0; i < hist.counts.size(); ++i)
      if (std::abs(static_cast<double>(hist.bin_center(i)) - peak_center) > 10.0 * fwhm)
        far.push_back(static_cast<double>(hist.counts[i]));
    if (far.size() >= 8) {
      background = median_of(std::move(far));
      fwhm = interpolate_fwhm(hist, peak, background);
    }
  }

  PeakStats stats;
  stats.peak_height = peak_height;
  stats.background_mean = background;
  stats.fwhm_ps = fwhm;
  stats.significance = (peak_height - background) / std::sqrt(std::max(background, 1.0));

  // Peak center: count-weighted centroid of the contiguous above-half region.
  const double half = background + 0.5 * (peak_height - background);
  double num = 0.0, den = 0.0;
  for (std::size_t i = peak; i < hist.counts.size(); ++i) {
    const double c = static_cast<double>(hist.counts[i]);
    if (c < half) break;
    num += (c - background) * static_cast<double>(hist.bin_center(i));
    den += c - background;
  }
  for (std::size_t i = peak; i-- > 0;) {
    const double c = static_cast<double>(hist.counts[i]);
    if (c < half) break;
    num += (c - background) * static_cast<double>(hist.bin_center(i));
    den += c - background;
  }
  stats.delay_ps = den > 0.0 ? static_cast<std::int64_t>(std::llround(num / den))
                             : hist.bin_center(peak);
  return stats;
}

namespace {

// Direct correlation of count arrays, used for the wide-span acquisition
// levels where per-pair sweeping would touch every one of the r_a*r_b*T*span
// pair combinations. Cost is (#nonzero B cells) x (#offsets) fused
// multiply-adds instead, independent of how many tag pairs the span holds.
Correlogram binned_correlogram(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                               std::uint64_t bin_w, std::int64_t min_off, std::int64_t max_off,
                               std::uint64_t t_limit) {
  const std::int64_t dmin = min_off / to_i64(bin_w) - 1;
  const std::int64_t dmax = max_off / to_i64(bin_w) + 1;
  const std::size_t n_off = static_cast<std::size_t>(dmax - dmin + 1);

  auto cell_count = [&](std::span<const std::uint64_t> v) {
    std::uint64_t last = 0;
    for (std::uint64_t t : v) {
      if (t > t_limit) break;
      last = t;
    }
    return static_cast<std::size_t>(last / bin_w) + 1;
  };
  const std::size_t cells_a = cell_count(a);
  const std::size_t cells_b = cell_count(b);

  // A padded so every (b cell) - (offset) lands inside the array.
  const std::int64_t lo_index = std::min<std::int64_t>(0, -dmax);
  const std::int64_t hi_index =
      std::max<std::int64_t>(static_cast<std::int64_t>(cells_a),
                             static_cast<std::int64_t>(cells_b) - dmin);
  const std::size_t shift = static_cast<std::size_t>(-lo_index);
  std::vector<double> acc(static_cast<std::size_t>(hi_index - lo_index), 0.0);
  for (std::uint64_t t : a) {
    if (t > t_limit) break;
    acc[shift + static_cast<std::size_t>(t / bin_w)] += 1.0;
  }

  std::vector<std::pair<std::size_t, double>> b_cells;
  {
    std::size_t current = SIZE_MAX;
    for (std::uint64_t t : b) {
      if (t > t_limit) break;
      const std::size_t cell = static_cast<std::size_t>(t / bin_w);
      if (cell == current) b_cells.back().second += 1.0;
      else {
        b_cells.emplace_back(cell, 1.0);
        current = cell;
      }
    }
  }

  std::vector<double> corr(n_off, 0.0);  // index k corresponds to d = dmax - k
  for (const auto& [j, bj] : b_cells) {
    const double* ap = acc.data() + (shift + j - static_cast<std::size_t>(dmax));
    double* cp = corr.data();
    for (std::size_t k = 0; k < n_off; ++k) cp[k] += bj * ap[k];
  }

  Correlogram hist;
  hist.bin_width_ps = bin_w;
  hist.start_offset_ps = dmin * to_i64(bin_w);
  hist.counts.resize(n_off);
  for (std::size_t k = 0; k < n_off; ++k)
    hist.counts[k] = static_cast<std::uint64_t>(corr[n_off - 1 - k]);
  return hist;
}

// Argmax-recentering refinement from a detected coarse peak down to
// final_bin, 32 bins per level, then a wide final histogram for the stats.
PeakStats refine_peak(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                      std::int64_t center, std::uint64_t w_start, std::uint64_t final_bin) {
  std::uint64_t w = w_start;
  while (w > final_bin) {
    const std::uint64_t w_next = std::max(final_bin, w / 2);
    const std::int64_t half_range = to_i64(16 * w);
    const Correlogram hist =
        cross_correlogram(a, b, w_next, center - half_range, center + half_range);
    const std::size_t peak =
        static_cast<std::size_t>(std::max_element(hist.counts.begin(), hist.counts.end()) -
                                 hist.counts.begin());
    center = hist.bin_center(peak);
    w = w_next;
  }

  // Characterize with enough background bins around the peak; widen if the
  // peak turns out broad relative to the window.
  std::uint64_t half_bins = 512;
  for (int attempt = 0; attempt < 4; ++attempt) {
    const std::int64_t half_range = to_i64(half_bins * final_bin);
    const Correlogram hist =
        cross_correlogram(a, b, final_bin, center - half_range, center + half_range);
    PeakStats stats = peak_stats(hist);
    if (stats.fwhm_ps < 0.1 * static_cast<double>(half_range) || attempt == 3) {
      if (stats.significance < kPeakSignificance)
        throw NoCorrelationError("no correlation found: refined peak below 5 sigma");
      return stats;
    }
    half_bins *= 4;
  }
  throw NoCorrelationError("no correlation found");  // unreachable
}

}  // namespace

namespace {

// The raw pair histogram over a wide span has a triangular envelope: a bin
// at offset d only collects pairs from the stretch where both streams
// overlap once shifted by d. Rescaling every bin to the maximum overlap
// flattens the envelope so that a flat-background peak test is sound.
void flatten_overlap(Correlogram& hist, std::span<const std::uint64_t> a,
                     std::span<const std::uint64_t> b, std::uint64_t t_limit) {
  const double a0 = static_cast<double>(a.front());
  const double a1 = static_cast<double>(std::min(a.back(), t_limit));
  const double b0 = static_cast<double>(b.front());
  const double b1 = static_cast<double>(std::min(b.back(), t_limit));
  auto overlap = [&](double d) {
    return std::max(0.0, std::min(a1, b1 - d) - std::max(a0, b0 - d));
  };
  double l_ref = 0.0;
  for (std::size_t k = 0; k < hist.counts.size(); ++k)
    l_ref = std::max(l_ref, overlap(static_cast<double>(hist.bin_center(k))));
  if (l_ref <= 0.0) return;
  for (std::size_t k = 0; k < hist.counts.size(); ++k) {
    const double l = overlap(static_cast<double>(hist.bin_center(k)));
    if (l < 0.05 * l_ref) {
      hist.counts[k] = 0;  // too little overlap to assess
    } else {
      hist.counts[k] = static_cast<std::uint64_t>(
          std::llround(static_cast<double>(hist.counts[k]) * l_ref / l));
    }
  }
}

}  // namespace

namespace {

// Robust spread estimate for acquisition histograms. Wide offset bins are
// super-Poissonian (every tag contributes to many pairs per bin, inflating
// the variance far beyond sqrt(count)), so the 5-sigma gate has to be
// calibrated against the empirical scatter rather than Poisson counting.
template <class T>
double robust_sigma(std::span<const T> counts) {
  std::vector<T> v(counts.begin(), counts.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double med = static_cast<double>(v[mid]);
  for (T& x : v)
    x = static_cast<T>(std::abs(static_cast<double>(x) - med));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double mad = static_cast<double>(v[mid]);
  return std::max(1.4826 * mad, std::sqrt(std::max(med, 1.0)));
}

template <class T>
double median_of_span(std::span<const T> counts) {
  std::vector<T> v(counts.begin(), counts.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return static_cast<double>(v[mid]);
}

struct Candidate {
  std::int64_t center_ps = 0;
  std::uint64_t scale_ps = 1;  // bin width the candidate was seen at
  double significance = 0.0;
};

// Fine-bin acquisition over a prefix of stream B against the full span of
// A, blocked by delay range so the histogram stays cache-resident. Fine
// bins keep each bin in the near-Poisson regime where a 5-sigma excess is
// meaningful; the prefix keeps the pair enumeration affordable.
std::vector<Candidate> fine_scan(std::span<const std::uint64_t> a,
                                 std::span<const std::uint64_t> b_prefix, std::uint64_t bin_w,
                                 std::int64_t span) {
  // bin_w is a power of two so the per-pair binning is a shift, not a
  // 64-bit division; the pair enumeration below is the hot loop.
  const int bin_shift = std::countr_zero(bin_w);
  const std::size_t n_bins = static_cast<std::size_t>((2 * span) >> bin_shift) + 2;
  std::vector<std::uint32_t> counts(n_bins, 0);

  constexpr std::size_t kBlockBins = 1u << 17;  // 512 KiB of counters per block
  for (std::size_t bin0 = 0; bin0 < n_bins; bin0 += kBlockBins) {
    const std::int64_t d_lo = -span + to_i64(bin0 << bin_shift);
    const std::int64_t d_hi =
        -span + to_i64(std::min(n_bins, bin0 + kBlockBins) << bin_shift);
    std::size_t lo = 0;
    for (const std::uint64_t tbu : b_prefix) {
      const std::int64_t tb = to_i64(tbu);
      lo = static_cast<std::size_t>(
          std::lower_bound(a.begin() + static_cast<std::ptrdiff_t>(lo), a.end(),
                           static_cast<std::uint64_t>(std::max<std::int64_t>(tb - d_hi + 1, 0))) -
          a.begin());
      for (std::size_t i = lo; i < a.size() && to_i64(a[i]) > tb - d_hi; ++i) {
        const std::int64_t d = tb - to_i64(a[i]);
        if (d < d_lo) break;  // a ascending means d descending; done with this b
        ++counts[static_cast<std::size_t>(d + span) >> bin_shift];
      }
    }
  }

  // Sliding two-bin sums so a peak straddling a bin edge keeps its mass.
  std::vector<std::uint32_t> sum2(n_bins - 1);
  for (std::size_t k = 0; k + 1 < n_bins; ++k) sum2[k] = counts[k] + counts[k + 1];
  const double sigma = robust_sigma(std::span<const std::uint32_t>(sum2));
  const double med = median_of_span(std::span<const std::uint32_t>(sum2));

  // Keep the strongest few disjoint excesses as candidates.
  std::vector<Candidate> out;
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t k = 0; k + 1 < n_bins; ++k) {
    const double sig = (static_cast<double>(sum2[k]) - med) / sigma;
    if (sig >= kPeakSignificance) ranked.emplace_back(sig, k);
  }
  std::sort(ranked.rbegin(), ranked.rend());
  for (const auto& [sig, k] : ranked) {
    const std::int64_t center = -span + to_i64(k * bin_w) + to_i64(bin_w);
    bool clash = false;
    for (const Candidate& c : out)
      if (std::llabs(c.center_ps - center) < 16 * to_i64(bin_w)) clash = true;
    if (clash) continue;
    out.push_back({center, bin_w, sig});
    if (out.size() == 3) break;
  }
  return out;
}

}  // namespace

PeakStats coarse_to_fine_delay(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                               std::uint64_t search_span_ps, std::uint64_t final_bin_ps) {
  if (search_span_ps == 0) throw std::invalid_argument("search span must be > 0");
  if (final_bin_ps == 0) throw std::invalid_argument("final bin must be >= 1 ps");
  if (a.empty() || b.empty()) throw NoCorrelationError("no correlation found: empty stream");
  require_sorted(a, "A");
  require_sorted(b, "B");

  const std::int64_t span = to_i64(search_span_ps);
  const std::uint64_t t_end = std::max(a.back(), b.back());

  // A candidate only counts once a full-data refinement confirms a 5-sigma
  // peak; fine scans over millions of bins produce occasional flukes.
  int failed_verifications = 0;
  auto verify = [&](std::int64_t center, std::uint64_t scale) -> std::optional<PeakStats> {
    const auto tv = std::chrono::steady_clock::now();
    try {
      auto r = refine_peak(a, b, center, std::max(scale, 4 * final_bin_ps), final_bin_ps);
      if (std::getenv("QT")) std::fprintf(stderr, "[v] ok center=%lld %.2f s\n", (long long)center,
        std::chrono::duration<double>(std::chrono::steady_clock::now()-tv).count());
      return r;
    } catch (const NoCorrelationError&) {
      ++failed_verifications;
      if (std::getenv("QT")) std::fprintf(stderr, "[v] fail center=%lld %.2f s\n", (long long)center,
        std::chrono::duration<double>(std::chrono::steady_clock::now()-tv).count());
      return std::nullopt;
    }
  };
  const auto tstage = std::chrono::steady_clock::now();

  // Stage 1: wide binned levels over the whole data. Cheap, and catches
  // clean or strongly correlated streams immediately.
  {
    std::uint64_t w = std::max<std::uint64_t>(final_bin_ps, search_span_ps / 512);
    for (int level = 0; level < 4 && w > 4 * final_bin_ps; ++level, w /= 2) {
      const double cells = static_cast<double>(t_end) / static_cast<double>(w);
      const double n_off = 2.0 * static_cast<double>(span) / static_cast<double>(w) + 3.0;
      if (cells + std::min(static_cast<double>(b.size()), cells) * n_off > 2e9) break;
      Correlogram hist = binned_correlogram(a, b, w, -span, span, t_end);
      flatten_overlap(hist, a, b, t_end);
      const std::size_t peak =
          static_cast<std::size_t>(std::max_element(hist.counts.begin(), hist.counts.end()) -
                                   hist.counts.begin());
      std::vector<double> med_src(hist.counts.begin(), hist.counts.end());
      const double med = median_of(std::move(med_src));
      const double sig = (static_cast<double>(hist.counts[peak]) - med) /
                         robust_sigma(std::span<const std::uint64_t>(hist.counts));
      if (sig >= kPeakSignificance)
        if (auto stats = verify(hist.bin_center(peak), w)) return *stats;
      if (failed_verifications > 4) break;
    }
  }

  if (std::getenv("QT")) std::fprintf(stderr, "[s1] done %.2f s\n",
      std::chrono::duration<double>(std::chrono::steady_clock::now()-tstage).count());
  // Stage 2: fine bins over a growing prefix of B. Bin width targets the
  // Poisson regime (well under one A tag per bin) while bounding memory.
  const double duration_s = static_cast<double>(t_end - std::min(a.front(), b.front())) * 1e-12;
  const double rate_a = static_cast<double>(a.size()) / std::max(duration_s, 1e-9);
  std::uint64_t fine_bin = static_cast<std::uint64_t>(
      std::clamp(0.1 / std::max(rate_a, 1.0) * 1e12, static_cast<double>(final_bin_ps), 1e6));
  fine_bin = std::max<std::uint64_t>(fine_bin, static_cast<std::uint64_t>(2 * span) >> 26);
  fine_bin = std::bit_floor(std::max<std::uint64_t>(fine_bin, 1));

  const double rate_b = static_cast<double>(b.size()) / std::max(duration_s, 1e-9);
  const double pair_rate = rate_a * rate_b * 2.0 * static_cast<double>(span) * 1e-12;
  double prefix_s = std::clamp(4e8 / std::max(pair_rate, 1.0), 1e-3, duration_s);

  constexpr double kPairBudget = 1.2e10;
  double spent = 0.0;
  const std::uint64_t b_span = b.back() - b.front();
  while (true) {
    // Scan a window of B whose tags all have the full +-span of A
    // available: a window at the stream head would leave the large-offset
    // bins underfilled and the scan background strongly sloped.
    const std::uint64_t window_ps =
        static_cast<std::uint64_t>(std::min(prefix_s, duration_s) * 1e12);
    const std::uint64_t offset =
        std::min<std::uint64_t>(search_span_ps, b_span > window_ps ? b_span - window_ps : 0);
    const std::uint64_t w_begin = b.front() + offset;
    const auto begin_it = std::lower_bound(b.begin(), b.end(), w_begin);
    const auto end_it = std::upper_bound(begin_it, b.end(), w_begin + window_ps);
    const std::span<const std::uint64_t> b_window(&*begin_it,
                                                  static_cast<std::size_t>(end_it - begin_it));
    const bool exhausted = offset + window_ps >= b_span || spent > kPairBudget;

    if (!b_window.empty()) {
      const auto tf = std::chrono::steady_clock::now();
      const auto candidates = fine_scan(a, b_window, fine_bin, span);
      if (std::getenv("QT")) std::fprintf(stderr, "[s2] nb=%zu bin=%llu cands=%zu %.2f s\n",
        b_window.size(), (unsigned long long)fine_bin, candidates.size(),
        std::chrono::duration<double>(std::chrono::steady_clock::now()-tf).count());
      spent +=
          static_cast<double>(b_window.size()) * rate_a * 2.0 * static_cast<double>(span) * 1e-12;
      for (const Candidate& c : candidates)
        if (auto stats = verify(c.center_ps, 4 * c.scale_ps)) return *stats;
    }

    if (exhausted || failed_verifications > 8)
      throw NoCorrelationError("no correlation found: no 5-sigma peak within the search budget");
    prefix_s *= 4.0;
  }
}

CoincidenceSet match_coincidences(const io::TagStream& a, const io::TagStream& b,
                                  std::int64_t delay_ps, std::uint64_t window_ps) {
  const std::int64_t half = to_i64(window_ps) / 2;
  CoincidenceSet set;
  std::size_t i = 0, j = 0;
  const std::size_t na = a.size(), nb = b.size();
  while (i < na && j < nb) {
    const std::int64_t d = to_i64(b.t_ps[j]) - delay_ps - to_i64(a.t_ps[i]);
    if (d < -half) ++j;
    else if (d > half) ++i;
    else {
      const std::uint8_t ca = a.channel[i], cb = b.channel[j];
      set.records.push_back({a.t_ps[i], b.t_ps[j], ca, cb});
      if (ca < 2 && cb < 2) ++set.counts[ca][cb];
      ++i;
      ++j;
    }
  }
  return set;
}

CoincidenceSet match_coincidences(const io::TagStream& a, const io::TagStream& b,
                                  const DriftModel& drift, std::uint64_t window_ps) {
  const std::int64_t half = to_i64(window_ps) / 2;
  CoincidenceSet set;
  std::size_t i = 0, j = 0;
  const std::size_t na = a.size(), nb = b.size();
  while (i < na && j < nb) {
    const std::int64_t d =
        to_i64(b.t_ps[j]) - drift.delay_at(b.t_ps[j]) - to_i64(a.t_ps[i]);
    if (d < -half) ++j;
    else if (d > half) ++i;
    else {
      const std::uint8_t ca = a.channel[i], cb = b.channel[j];
      set.records.push_back({a.t_ps[i], b.t_ps[j], ca, cb});
      if (ca < 2 && cb < 2) ++set.counts[ca][cb];
      ++i;
      ++j;
    }
  }
  return set;
}

std::int64_t DriftModel::delay_at(std::uint64_t t_ps) const {
  if (knots.empty()) throw std::logic_error("drift model has no knots");
  if (knots.size() == 1) return knots.front().delay_ps;
  // Interpolate inside the knot range, extrapolate on the boundary
  // segments beyond it (the ends of a run still drift).
  std::size_t hi_idx;
  if (t_ps <= knots.front().t_ps) hi_idx = 1;
  else if (t_ps >= knots.back().t_ps) hi_idx = knots.size() - 1;
  else
    hi_idx = static_cast<std::size_t>(
        std::upper_bound(knots.begin(), knots.end(), t_ps,
                         [](std::uint64_t t, const DriftKnot& k) { return t < k.t_ps; }) -
        knots.begin());
  const DriftKnot& lo = knots[hi_idx - 1];
  const DriftKnot& hi = knots[hi_idx];
  const double f = (static_cast<double>(t_ps) - static_cast<double>(lo.t_ps)) /
                   static_cast<double>(hi.t_ps - lo.t_ps);
  return lo.delay_ps +
         static_cast<std::int64_t>(std::llround(f * static_cast<double>(hi.delay_ps - lo.delay_ps)));
}

double DriftModel::fitted_slope_ppm() const {
  if (knots.size() < 2) return 0.0;
  double mt = 0.0, md = 0.0;
  for (const auto& k : knots) {
    mt += static_cast<double>(k.t_ps);
    md += static_cast<double>(k.delay_ps);
  }
  mt /= static_cast<double>(knots.size());
  md /= static_cast<double>(knots.size());
  double num = 0.0, den = 0.0;
  for (const auto& k : knots) {
    const double dt = static_cast<double>(k.t_ps) - mt;
    num += dt * (static_cast<double>(k.delay_ps) - md);
    den += dt * dt;
  }
  return den > 0.0 ? num / den * 1e6 : 0.0;
}

namespace {

// Residual histogram of (t_b - model(t_b)) - t_a for one block, over
// +-range around zero. Subtracting the running model per tag deskews the
// block, so each tracking pass sees a narrower peak than the one before.
Correlogram residual_correlogram(std::span<const std::uint64_t> a,
                                 std::span<const std::uint64_t> b_slice, const DriftModel& model,
                                 std::uint64_t bin_w, std::int64_t range) {
  const std::size_t n_bins = static_cast<std::size_t>(2 * range / to_i64(bin_w)) + 1;
  Correlogram hist{-range, bin_w, std::vector<std::uint64_t>(n_bins, 0)};
  std::size_t lo = 0;
  for (const std::uint64_t tb : b_slice) {
    const std::int64_t shifted = to_i64(tb) - model.delay_at(tb);
    const std::int64_t ta_min = shifted - range;
    const std::int64_t ta_max = shifted + range;
    lo = static_cast<std::size_t>(
        std::lower_bound(a.begin() + static_cast<std::ptrdiff_t>(lo), a.end(),
                         static_cast<std::uint64_t>(std::max<std::int64_t>(ta_min, 0))) -
        a.begin());
    for (std::size_t i = lo; i < a.size() && to_i64(a[i]) <= ta_max; ++i) {
      const std::size_t k =
          static_cast<std::size_t>(shifted - to_i64(a[i]) + range) / bin_w;
      if (k < n_bins) ++hist.counts[k];
    }
  }
  return hist;
}

}  // namespace

DriftModel track_drift(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                       double block_duration_s, std::int64_t coarse_delay_ps,
                       DriftOptions options) {
  if (block_duration_s <= 0.0) throw std::invalid_argument("block duration must be > 0");
  if (a.empty() || b.empty()) throw NoCorrelationError("no correlation found: empty stream");
  require_sorted(a, "A");
  require_sorted(b, "B");

  const std::uint64_t block_ps = static_cast<std::uint64_t>(block_duration_s * 1e12);
  const std::uint64_t b_start = b.front(), b_end = b.back();
  const std::size_t n_blocks =
      std::max<std::size_t>(1, (b_end - b_start) / std::max<std::uint64_t>(block_ps, 1));
  const std::int64_t margin = to_i64(options.search_margin_ps);

  DriftModel model{{DriftKnot{b_start + (b_end - b_start) / 2, coarse_delay_ps}}};
  bool any_valid_ever = false;

  // A clock running fast by epsilon smears a block's delay peak over
  // epsilon * block_duration, far beyond the final precision. Each pass
  // re-estimates the knots against the residuals of the previous model, so
  // the smear shrinks geometrically until the peaks are jitter-limited.
  constexpr int kMaxPasses = 6;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    std::vector<DriftKnot> knots(n_blocks);
    std::vector<bool> valid(n_blocks, false);
    std::int64_t max_move = 0;

    for (std::size_t k = 0; k < n_blocks; ++k) {
      const std::uint64_t t0 = b_start + k * block_ps;
      const std::uint64_t t1 = (k + 1 == n_blocks) ? b_end + 1 : t0 + block_ps;
      knots[k].t_ps = t0 + (t1 - t0) / 2;
      const std::int64_t prior = model.delay_at(knots[k].t_ps);
      knots[k].delay_ps = prior;

      const auto b_lo = std::lower_bound(b.begin(), b.end(), t0);
      const auto b_hi = std::lower_bound(b.begin(), b.end(), t1);
      if (b_hi - b_lo < 8) continue;
      std::span<const std::uint64_t> b_slice(&*b_lo, static_cast<std::size_t>(b_hi - b_lo));

      const std::int64_t model_lo = std::min(model.delay_at(t0), model.delay_at(t1));
      const std::int64_t model_hi = std::max(model.delay_at(t0), model.delay_at(t1));
      const auto a_lo = std::lower_bound(
          a.begin(), a.end(),
          static_cast<std::uint64_t>(std::max<std::int64_t>(to_i64(t0) - model_hi - 2 * margin, 0)));
      const auto a_hi = std::lower_bound(
          a.begin(), a.end(),
          static_cast<std::uint64_t>(std::max<std::int64_t>(to_i64(t1) - model_lo + 2 * margin, 0)));
      if (a_hi - a_lo < 8) continue;
      std::span<const std::uint64_t> a_slice(&*a_lo, static_cast<std::size_t>(a_hi - a_lo));

      const std::uint64_t w1 =
          std::max<std::uint64_t>(options.fine_bin_ps, options.search_margin_ps / 256);
      const Correlogram hist = residual_correlogram(a_slice, b_slice, model, w1, margin);
      const PeakStats coarse = peak_stats(hist);
      if (coarse.significance < kPeakSignificance) continue;

      std::int64_t residual;
      if (coarse.fwhm_ps > 6.0 * static_cast<double>(w1)) {
        // Still smeared by drift: the centroid of the plateau estimates the
        // delay at the block center; the next pass narrows it.
        residual = coarse.delay_ps;
      } else {
        // Jitter-limited: refine against the deskewed b tags.
        std::vector<std::uint64_t> b_shifted;
        b_shifted.reserve(b_slice.size());
        for (const std::uint64_t tb : b_slice) {
          const std::int64_t s = to_i64(tb) - model.delay_at(tb);
          if (s >= 0) b_shifted.push_back(static_cast<std::uint64_t>(s));
        }
        try {
          residual =
              refine_peak(a_slice, b_shifted, coarse.delay_ps, w1, options.fine_bin_ps).delay_ps;
        } catch (const NoCorrelationError&) {
          continue;
        }
      }
      knots[k].delay_ps = prior + residual;
      valid[k] = true;
      max_move = std::max<std::int64_t>(max_move, std::llabs(residual));
    }

    const bool any_valid = std::any_of(valid.begin(), valid.end(), [](bool v) { return v; });
    if (!any_valid) {
      if (!any_valid_ever)
        throw NoCorrelationError("no correlation found: no block has a significant peak");
      break;
    }
    any_valid_ever = true;

    // Blocks without a significant peak inherit the nearest valid neighbour.
    for (std::size_t k = 0; k < n_blocks; ++k) {
      if (valid[k]) continue;
      std::size_t best = 0;
      std::size_t best_dist = n_blocks + 1;
      for (std::size_t m = 0; m < n_blocks; ++m) {
        if (!valid[m]) continue;
        const std::size_t dist = m > k ? m - k : k - m;
        if (dist < best_dist) {
          best_dist = dist;
          best = m;
        }
      }
      knots[k].delay_ps = knots[best].delay_ps;
    }

    model.knots = std::move(knots);
    if (max_move <= to_i64(4 * options.fine_bin_ps)) break;
  }

  return model;
}

}  // namespace qlink::corr
