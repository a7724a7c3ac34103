// One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <list>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "pbdetect/pbdetect.hpp"

using namespace pbdetect;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
  std::fflush(stdout);
  failures += !v.pass;
}

std::string num(double v, int digits = 2) { return detail::fixed(v, digits); }

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// Independent oracles

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double ncc_oracle(std::vector<double> a, std::vector<double> b) {
  if (a.size() > b.size()) std::swap(a, b);
  double best = -2;
  for (std::size_t k = 0; k + a.size() <= b.size(); ++k)
    best = std::max(best, pearson(a, std::span<const double>(b).subspan(k, a.size())));
  return best;
}

std::vector<double> derivative_oracle(const std::vector<double>& a) {
  std::vector<double> d(a.size());
  for (std::size_t i = 1; i + 1 < a.size(); ++i)
    d[i] = ((a[i] - a[i - 1]) + ((a[i + 1] - a[i - 1]) / 2)) / 2;
  d[0] = d[1];
  d[a.size() - 1] = d[a.size() - 2];
  return d;
}

double full_dtw_cost(const std::vector<double>& x, const std::vector<double>& y) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> D(x.size() + 1, std::vector<double>(y.size() + 1, inf));
  D[0][0] = 0;
  for (std::size_t i = 1; i <= x.size(); ++i)
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const double c = (x[i - 1] - y[j - 1]) * (x[i - 1] - y[j - 1]);
      D[i][j] = c + std::min({D[i - 1][j - 1], D[i - 1][j], D[i][j - 1]});
    }
  return D[x.size()][y.size()];
}

std::pair<double, double> batch_mean_sd(const std::vector<double>& xs) {
  double acc = 0;
  for (std::size_t n = 1; n <= xs.size(); ++n) {
    double m = 0;
    for (std::size_t k = 0; k < n; ++k) m += xs[k];
    m /= static_cast<double>(n);
    acc += (xs[n - 1] - m) * (xs[n - 1] - m);
  }
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  return {mean, std::sqrt(acc / static_cast<double>(xs.size()))};
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

/// r-domain wavelet: neg negative lobe, gap zeros, pos positive lobe.
std::vector<double> lobes(std::size_t neg, std::size_t gap, std::size_t pos, double depth) {
  std::vector<double> r;
  for (std::size_t i = 0; i < neg; ++i)
    r.push_back(-depth * (0.5 + 0.5 * std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) /
                                                static_cast<double>(neg))));
  r.insert(r.end(), gap, 0.0);
  for (std::size_t i = 0; i < pos; ++i)
    r.push_back(depth * (0.5 + 0.5 * std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) /
                                               static_cast<double>(pos))));
  return r;
}

Wavelet as_wavelet(std::vector<double> s, std::size_t start = 0) {
  Wavelet w;
  w.start_index = start;
  w.end_index = start + s.size() - 1;
  w.samples = std::move(s);
  return w;
}

// ---------------------------------------------------------------------------
// Criteria

EvalReport g_eval;

Verdict eval_protocol() {
  const auto profiles = default_profiles();
  const auto t0 = std::chrono::steady_clock::now();
  g_eval = run_eval(profiles, PipelineConfig{}, worker_count());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double min_acc = 100;
  std::string min_id;
  std::size_t movements_min = std::numeric_limits<std::size_t>::max();
  for (const auto& r : g_eval.rows) {
    if (r.failed) return {false, "profile " + r.profile + " failed: " + r.failure};
    if (r.accuracy_pct < min_acc) min_acc = r.accuracy_pct, min_id = r.profile;
    movements_min = std::min(movements_min, r.total_readings);
  }
  const bool ok = g_eval.rows.size() == 15 && secs < 300 && g_eval.aggregate.accuracy_pct >= 80 &&
                  min_acc >= 65 && movements_min >= 300;
  return {ok, "15 profiles, " + std::to_string(movements_min) + "+ movements each, " + num(secs) +
                  " s, mean " + num(g_eval.aggregate.accuracy_pct) + "% (>= 80), min " + min_id + " " +
                  num(min_acc) + "% (>= 65)"};
}

Verdict false_positive_control() {
  if (g_eval.rows.empty()) return {false, "evaluation did not run"};
  const auto profiles = default_profiles();
  std::string worst;
  double worst_pct = 0;
  bool ok = g_eval.pooled.upward_fp_pct() <= 15.0;
  for (const auto& r : g_eval.rows) {
    const bool hard = std::any_of(profiles.begin(), profiles.end(),
                                  [&](const auto& p) { return p.id == r.profile && p.hard; });
    if (hard) continue;
    if (r.upward_fp_pct() > 15.0) ok = false;
    if (r.upward_fp_pct() >= worst_pct) worst_pct = r.upward_fp_pct(), worst = r.profile;
  }
  return {ok, "aggregate " + std::to_string(g_eval.pooled.upward_false_positives) + "/" +
                  std::to_string(g_eval.pooled.upward_gazes) + " = " +
                  num(g_eval.pooled.upward_fp_pct()) + "% (<= 15), worst non-hard " + worst + " " +
                  num(worst_pct) + "%"};
}

Verdict oracle_suite() {
  std::mt19937_64 eng(2024);
  auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); };
  auto index = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng);
  };
  auto reals = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = real(-1, 1);
    return v;
  };
  std::vector<std::string> bad;

  double stats_worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> xs(index(1, 60));
    for (auto& x : xs) x = real(-50, 50);
    RunningStats s;
    for (double x : xs) s = stats_update(s, FeatureVector::from_values({x, x, x, x, x, x}));
    const auto [mean, sd] = batch_mean_sd(xs);
    stats_worst = std::max({stats_worst, rel_err(s.mean[0], mean), rel_err(s.sd(0), sd)});
  }
  if (stats_worst > 1e-9) bad.push_back("stats");

  std::size_t dtw_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    auto a = reals(index(3, 50)), b = reals(index(3, 50));
    auto x = a, y = b;
    if (!(x.size() > y.size() ||
          (x.size() == y.size() && !std::lexicographical_compare(x.begin(), x.end(), y.begin(), y.end()))))
      std::swap(x, y);
    const double want = full_dtw_cost(derivative_oracle(x), derivative_oracle(y));
    dtw_mismatch += ddtw_alignment(a, b, 64).cost != want;
  }
  if (dtw_mismatch) bad.push_back("ddtw");

  double ncc_worst = 0;
  for (int t = 0; t < 300; ++t) {
    const auto a = reals(index(2, 80)), b = reals(index(2, 80));
    ncc_worst = std::max(ncc_worst, std::abs(ncc_max(a, b) - ncc_oracle(a, b)));
  }
  if (ncc_worst > 1e-12) bad.push_back("ncc");

  std::size_t medoid_mismatch = 0;
  for (auto backend : {SimilarityBackend::ncc_max, SimilarityBackend::ddtw_sakoe_chiba}) {
    PipelineConfig cfg;
    cfg.similarity_backend = backend;
    for (int t = 0; t < 10; ++t) {
      std::vector<std::vector<double>> m;
      for (std::size_t i = index(1, 10); i > 0; --i)
        m.push_back(lobes(index(20, 80), index(0, 10), index(20, 80), real(0.1, 0.5)));
      std::size_t best = 0;
      double best_sum = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m.size(); ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < m.size(); ++j)
          if (i != j) sum += distance_of(m[i], m[j], cfg);
        if (sum < best_sum) best_sum = sum, best = i;
      }
      medoid_mismatch += medoid_index(m, cfg) != best;
    }
  }
  if (medoid_mismatch) bad.push_back("medoid");

  std::size_t ring_mismatch = 0;
  {
    CircularBuffer<int> ring(7);
    std::list<int> model;
    for (int op = 0; op < 1000; ++op) {
      const int v = static_cast<int>(index(0, 1 << 20));
      const auto ev = ring.push(v);
      model.push_back(v);
      std::optional<int> want;
      if (model.size() > 7) want = model.front(), model.pop_front();
      ring_mismatch += ev != want;
      std::size_t i = 0;
      for (int m : model) ring_mismatch += ring.get(i++) != m;
    }
  }
  if (ring_mismatch) bad.push_back("circular buffer");

  std::string detail = "stats rel " + detail::format_double(stats_worst) + ", ddtw mismatches " +
                       std::to_string(dtw_mismatch) + ", ncc abs " + detail::format_double(ncc_worst) +
                       ", medoid mismatches " + std::to_string(medoid_mismatch) +
                       ", ring mismatches " + std::to_string(ring_mismatch);
  return {bad.empty(), detail};
}

Verdict threshold_arithmetic() {
  auto stats = [](double mean, double sd) {
    RunningStats s;
    s.count = 10;
    s.mean.fill(mean);
    s.acc.fill(sd * sd * 10);
    return s;
  };
  const auto plain = compute_thresholds(stats(10, 2), stats(40, 2)).bands[0];
  const auto merged = compute_thresholds(stats(10, 2), stats(5, 2)).bands[0];
  const auto disjoint = compute_thresholds(stats(10, 2), stats(22, 4.0 / 3.0)).bands[0];
  const bool ok = plain.lt == 7 && plain.ut == 13 && merged.lt == 7.5 && merged.ut == 13 &&
                  merged.merged_lower && disjoint.lt == 7 && disjoint.ut == 13 &&
                  disjoint.lat == 20 && disjoint.uat == 24 && !disjoint.merged_lower &&
                  !disjoint.merged_upper;
  return {ok, "[" + detail::format_double(plain.lt) + "," + detail::format_double(plain.ut) +
                  "], merged lt " + detail::format_double(merged.lt) + ", disjoint [" +
                  detail::format_double(disjoint.lt) + "," + detail::format_double(disjoint.ut) + "]"};
}

Verdict fuzzy_checks() {
  const double centre = fuzzy_membership(10, 7, 13);
  const double edge = fuzzy_membership(13, 7, 13);
  ThresholdSet unit;
  for (auto& b : unit.bands) b = {-1, 1, -5, -4};
  std::optional<DetectionEvent> boundary;
  const double v0 = std::sqrt(-2.0 * std::log(0.6));
  double lo = v0, hi = v0;
  for (int step = 0; step < 100000 && !boundary; ++step) {
    for (double v : {lo, hi}) {
      auto ev = classify(FeatureVector::from_values({0, 0, 0, v, 1e3, 1e3}), unit, PipelineConfig{});
      if (ev.pass_sum == 3.6) {
        boundary = ev;
        break;
      }
    }
    lo = std::nextafter(lo, 0.0);
    hi = std::nextafter(hi, 10.0);
  }
  const bool ok = centre == 1.0 && std::abs(edge - std::exp(-0.5)) <= 1e-12 && boundary &&
                  boundary->is_pb;
  return {ok, "centre " + detail::format_double(centre) + ", edge " + detail::format_double(edge) +
                  ", pass_sum " + (boundary ? detail::format_double(boundary->pass_sum) : "n/a") +
                  " -> " + (boundary && boundary->is_pb ? "TRUE" : "FALSE")};
}

Verdict shape_suite() {
  const PipelineConfig cfg;
  const std::size_t per_kind = 100;
  std::size_t want_hit = 0, got_hit = 0, want_quiet = 0, got_quiet = 0;
  std::string miss;
  for (const auto& p : default_profiles()) {
    for (auto kind : {MovementKind::prolonged_blink, MovementKind::upward_gaze, MovementKind::saccade_left,
                      MovementKind::saccade_right}) {
      const auto trace =
          generate_session(p, repeated_schedule(kind, per_kind, 2.0), cfg, mix_seed(p.seed, 0xacc));
      std::vector<bool> hit(trace.labels.size(), false);
      for (const auto& ev : isolate_trace(trace, cfg)) {
        if (!ev.is_candidate()) continue;
        for (std::size_t i = 0; i < trace.labels.size(); ++i)
          if (ev.wavelet().start_index <= trace.labels[i].end &&
              ev.wavelet().end_index >= trace.labels[i].start)
            hit[i] = true;
      }
      const auto hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
      const bool expect = kind == MovementKind::prolonged_blink || kind == MovementKind::upward_gaze;
      if (expect) want_hit += hit.size(), got_hit += hits;
      else want_quiet += hit.size(), got_quiet += hit.size() - hits;
      if ((expect && hits != hit.size()) || (!expect && hits != 0))
        if (miss.empty()) miss = ", first miss " + p.id + "/" + std::string(to_string(kind));
    }
  }
  return {got_hit == want_hit && got_quiet == want_quiet,
          "PB+UP candidates " + std::to_string(got_hit) + "/" + std::to_string(want_hit) +
              ", saccades without candidate " + std::to_string(got_quiet) + "/" +
              std::to_string(want_quiet) + miss};
}

Verdict memory_discipline() {
  std::mt19937_64 eng(77);
  auto index = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng);
  };

  PipelineConfig off;
  off.eviction_enabled = false;
  auto acct = make_accountant(off);
  std::size_t stored = 0;
  {
    WaveletBuffer buf(off, acct.get());
    try {
      for (;;) {
        const std::size_t neg = index(230, 250);
        buf.append(as_wavelet(lobes(neg, 20, 480 - neg, 0.2), stored * 1000));
        ++stored;
      }
    } catch (const CapacityError&) {
    }
  }
  const bool failure_band = stored >= 8 && stored <= 15;

  PipelineConfig on;
  auto acct2 = make_accountant(on);
  WaveletBuffer buf(on, acct2.get());
  long peak = 0;
  std::size_t slack_violations = 0;
  for (std::size_t reading = 0; reading < 1000; ++reading) {
    const std::size_t neg = index(40, 400), pos = index(40, 400);
    buf.append(as_wavelet(lobes(neg, index(0, 60), pos, 0.1 + 0.001 * static_cast<double>(reading % 100)),
                          reading * 1000));
    peak = std::max(peak, acct2->live_bytes());
    slack_violations += buf.store().slack_elements() > buf.size() * 99;
  }
  const bool ok = failure_band && acct2->high_water_bytes() <= on.memory_budget_bytes &&
                  slack_violations == 0 && buf.evictions() > 0;
  return {ok, "eviction off: retention failed after " + std::to_string(stored) +
                  " waves (8-15); eviction on: 1000 readings, high water " +
                  std::to_string(acct2->high_water_bytes()) + "/" + std::to_string(on.memory_budget_bytes) +
                  " B, " + std::to_string(buf.evictions()) + " evictions, slack violations " +
                  std::to_string(slack_violations)};
}

Verdict realtime_margin() {
  const auto rep = run_bench(default_profiles()[3], PipelineConfig{}, 1.0);
  return {rep.realtime_factor >= 100 && rep.detections > 0,
          num(rep.realtime_factor, 0) + "x real time over " + num(rep.stream_seconds, 0) +
              " s of stream, mean decision latency " + num(rep.mean_detect_ms, 4) + " ms over " +
              std::to_string(rep.detections) + " detections, high water " +
              std::to_string(rep.high_water_bytes) + " B"};
}

Verdict episode_monitor() {
  EpisodeMonitor a(PipelineConfig{});
  std::size_t alerts_a = 0;
  double alert_t = -1;
  for (double t : {1.0, 8.0})
    if (auto al = a.step(true, t)) ++alerts_a, alert_t = al->t_s;
  EpisodeMonitor b(PipelineConfig{});
  std::size_t alerts_b = 0;
  for (double t : {0.0, 11.0}) alerts_b += b.step(true, t).has_value();
  return {alerts_a == 1 && alert_t == 8.0 && alerts_b == 0,
          "{1 s, 8 s} -> " + std::to_string(alerts_a) + " alert at " + detail::format_double(alert_t) +
              " s; {0 s, 11 s} -> " + std::to_string(alerts_b) + " alerts"};
}

Verdict determinism() {
  ::setenv("PBDETECT_SEED", "20240601", 1);
  const auto profiles = default_profiles(seed_from_env());
  const auto serial = format_eval_csv(run_eval(profiles, PipelineConfig{}, 1));
  const auto parallel = format_eval_csv(run_eval(profiles, PipelineConfig{}, 4));
  const auto again = format_eval_csv(run_eval(profiles, PipelineConfig{}, 4));
  ::unsetenv("PBDETECT_SEED");
  return {serial == parallel && parallel == again,
          "PBDETECT_SEED=20240601, jobs 1 vs 4 vs 4: " + std::to_string(serial.size()) + " bytes, " +
              (serial == parallel && parallel == again ? "identical" : "different")};
}

}  // namespace

int main() {
  report("eval-protocol", eval_protocol);
  report("false-positive-control", false_positive_control);
  report("oracle-equivalence", oracle_suite);
  report("threshold-arithmetic", threshold_arithmetic);
  report("fuzzy-decision", fuzzy_checks);
  report("state-machine-shapes", shape_suite);
  report("memory-discipline", memory_discipline);
  report("realtime-margin", realtime_margin);
  report("episode-monitor", episode_monitor);
  report("determinism", determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures ? 1 : 0;
}
