#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "pbdetect/harness.hpp"

using namespace pbdetect;

namespace {

DetectionEvent detection(std::size_t start, std::size_t end, bool is_pb, std::size_t confirm) {
  DetectionEvent d;
  d.start_index = start;
  d.end_index = end;
  d.is_pb = is_pb;
  d.confirm_index = confirm;
  return d;
}

const std::vector<Label> kLabels{
    {MovementKind::prolonged_blink, 0, 100},   {MovementKind::prolonged_blink, 200, 300},
    {MovementKind::prolonged_blink, 400, 500}, {MovementKind::upward_gaze, 600, 700},
    {MovementKind::saccade_left, 800, 900},    {MovementKind::upward_gaze, 1000, 1100},
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Scoring, OneOutcomePerLabel) {
  const std::vector<DetectionEvent> ds{
      detection(5, 90, true, 150),      // PB detected
      detection(210, 290, false, 350),  // PB seen but rejected
      detection(610, 690, true, 750),   // upward gaze misread as PB
      detection(1010, 1090, false, 1150),
  };
  const auto t = score_session(ds, kLabels, 250);
  EXPECT_EQ(t.total_readings, 6u);
  EXPECT_EQ(t.correct_detections, 3u);  // PB 1, saccade, second upward gaze
  EXPECT_EQ(t.true_negatives, 1u);
  EXPECT_EQ(t.unclassified, 1u);
  EXPECT_EQ(t.false_positives, 1u);
  EXPECT_EQ(t.wrong_detections, 3u);
  EXPECT_EQ(t.upward_gazes, 2u);
  EXPECT_EQ(t.upward_false_positives, 1u);
  EXPECT_DOUBLE_EQ(t.accuracy_pct, 50.0);
  EXPECT_DOUBLE_EQ(t.upward_fp_pct(), 50.0);
  // delays 50, 50, 50, 50 samples
  EXPECT_DOUBLE_EQ(t.avg_detection_ms, 200.0);
}

TEST(Scoring, InjectedFalsePositivesAreCounted) {
  std::vector<DetectionEvent> ds{detection(5, 90, true, 150), detection(205, 295, true, 350),
                                 detection(405, 495, true, 550)};
  const auto clean = score_session(ds, kLabels, 250);
  EXPECT_EQ(clean.false_positives, 0u);
  ds.push_back(detection(610, 690, true, 750));
  ds.push_back(detection(810, 890, true, 950));
  ds.push_back(detection(1010, 1090, true, 1150));
  const auto t = score_session(ds, kLabels, 250);
  EXPECT_EQ(t.false_positives, clean.false_positives + 3);
  EXPECT_EQ(t.correct_detections, clean.correct_detections - 3);
  EXPECT_EQ(t.upward_false_positives, 2u);
}

TEST(Scoring, SeveralDetectionsOnOneLabelCountOnce) {
  const std::vector<DetectionEvent> ds{detection(5, 40, false, 60), detection(50, 90, true, 150)};
  const auto t = score_session(ds, kLabels, 250);
  EXPECT_EQ(t.correct_detections, 1u + 3u);
  EXPECT_EQ(t.total_readings, 6u);
}

TEST(Scoring, DetectionOutsideEveryLabelIsAnError) {
  const std::vector<DetectionEvent> ds{detection(120, 180, true, 230)};
  EXPECT_THROW(score_session(ds, kLabels, 250), ScoringError);
}

TEST(Scoring, LargestOverlapWins) {
  EXPECT_EQ(assign_label(90, 250, kLabels), 1u);
  EXPECT_EQ(assign_label(50, 230, kLabels), 0u);
}

TEST(Eval, ReportIsIndependentOfParallelism) {
  const auto all = default_profiles();
  const std::vector<SubjectProfile> some(all.begin(), all.begin() + 4);
  const auto a = format_eval_csv(run_eval(some, PipelineConfig{}, 1));
  const auto b = format_eval_csv(run_eval(some, PipelineConfig{}, 3));
  EXPECT_EQ(a, b);
}

TEST(Eval, CsvHasHeaderRowsSummariesAndFingerprint) {
  const auto all = default_profiles();
  const std::vector<SubjectProfile> some{all[2], all[1]};
  const auto rep = run_eval(some, PipelineConfig{}, 2);
  const auto csv = format_eval_csv(rep);
  EXPECT_EQ(count_lines(csv), 1u + 2u + 2u + 1u);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, eval_csv_header());
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 13);
  std::getline(in, line);
  EXPECT_EQ(line.rfind(all[1].id + ",", 0), 0u);  // sorted by id
  EXPECT_NE(line.find(",ncc_max,corrected,ok"), std::string::npos);
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("AGGREGATE,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("POOLED,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line, "# config " + config_fingerprint(PipelineConfig{}));
  EXPECT_EQ(rep.aggregate.total_readings, rep.rows[0].total_readings + rep.rows[1].total_readings);
  EXPECT_DOUBLE_EQ(rep.aggregate.accuracy_pct, (rep.rows[0].accuracy_pct + rep.rows[1].accuracy_pct) / 2);
}

TEST(Eval, TrainingFailureLandsInTheRowAndExitCode) {
  auto p = default_profiles()[1];
  p.amplitude_jitter = p.duration_jitter = p.noise_rms = p.wander_amplitude = 0;
  const std::vector<SubjectProfile> ps{p};
  const auto rep = run_eval(ps, PipelineConfig{}, 1);
  ASSERT_TRUE(rep.rows[0].failed);
  EXPECT_TRUE(rep.any_failed());
  EXPECT_EQ(eval_exit_code(rep, ps), 2);
  EXPECT_NE(format_eval_csv(rep).find("FAILED: "), std::string::npos);
}

TEST(Eval, MissedBandGivesExitThree) {
  const auto all = default_profiles();
  const std::vector<SubjectProfile> ps{all[1]};
  const auto rep = run_eval(ps, PipelineConfig{}, 1);
  EXPECT_TRUE(acceptance_misses(rep, ps).empty());
  AcceptanceBands strict;
  strict.min_mean_accuracy_pct = 100.1;
  EXPECT_FALSE(acceptance_misses(rep, ps, strict).empty());
}

TEST(Eval, SeedFromEnvironment) {
  ::setenv("PBDETECT_SEED", "123", 1);
  EXPECT_EQ(seed_from_env(), 123u);
  ::setenv("PBDETECT_SEED", "abc", 1);
  EXPECT_THROW(seed_from_env(), ConfigError);
  ::unsetenv("PBDETECT_SEED");
  EXPECT_FALSE(seed_from_env());
}

TEST(Bench, StaysWithinBudgetAndReportsLatency) {
  const auto rep = run_bench(default_profiles()[3], PipelineConfig{}, 5.0);
  EXPECT_GT(rep.detections, 0u);
  EXPECT_LE(rep.high_water_bytes, rep.budget_bytes);
  EXPECT_GE(rep.high_water_bytes, 20480);
  EXPECT_GT(rep.realtime_factor, 0.0);
  EXPECT_LE(rep.mean_detect_ms, rep.max_detect_ms);
  EXPECT_FALSE(rep.snapshots.empty());
  const auto csv = format_bench_csv(rep);
  EXPECT_NE(csv.find("mean_detect_ms,"), std::string::npos);
  EXPECT_NE(csv.find("realtime_factor,"), std::string::npos);
}
