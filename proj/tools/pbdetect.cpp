#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pbdetect/pbdetect.hpp"

using namespace pbdetect;

namespace {

struct ConfigOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string formula_mode;
  std::string backend;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "Pipeline config file (key = value)");
    app->add_option("--set", overrides, "Config override key=value (repeatable)");
    app->add_option("--formula-mode", formula_mode, "corrected | strict")
        ->check(CLI::IsMember({"corrected", "strict", "strict_paper"}));
    app->add_option("--backend", backend, "Similarity backend: ncc | ddtw");
  }

  /// base -> --formula-mode -> config file -> --backend -> --set.
  PipelineConfig resolve(PipelineConfig base = {}) const {
    PipelineConfig cfg = base;
    if (!formula_mode.empty()) cfg = apply_mode(cfg, parse_formula_mode(formula_mode));
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw Error("cannot open config file '" + config_file + "'");
      cfg = read_config(in, cfg);
    }
    if (!backend.empty()) cfg.similarity_backend = parse_backend(backend);
    std::string text;
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      text += kv.substr(0, eq) + " = " + kv.substr(eq + 1) + '\n';
    }
    if (!text.empty()) cfg = parse_config(text, cfg);
    cfg.validate();
    return cfg;
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

/// Writes to `path`, or stdout when it is empty or "-".
template <typename F>
void emit(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
  } else {
    auto out = open_out(path);
    write(out);
  }
}

std::vector<SubjectProfile> resolve_profiles(const std::vector<std::string>& ids,
                                             const std::string& profile_file) {
  if (!profile_file.empty()) {
    auto in = open_in(profile_file);
    std::stringstream ss;
    ss << in.rdbuf();
    return {parse_profile(ss.str())};
  }
  auto all = default_profiles(seed_from_env());
  if (ids.empty()) return all;
  std::vector<SubjectProfile> out;
  for (const auto& id : ids) {
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& p) { return p.id == id; });
    if (it == all.end()) throw ConfigError("unknown profile '" + id + "' (expected A..O)");
    out.push_back(*it);
  }
  return out;
}

EogTrace read_trace(const std::string& path, const std::string& format) {
  auto in = open_in(path);
  return load_trace(in, parse_trace_format(format));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prolonged-blink detection engine: simulate, train, detect, eval, bench"};
  app.require_subcommand(1);

  // simulate ---------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Generate a labeled synthetic EOG session");
  ConfigOptions sim_cfg;
  sim_cfg.add_to(sim);
  std::string sim_profile = "A", sim_profile_file, sim_out, sim_labels, sim_format = "csv",
              sim_schedule = "eval", sim_kind = "PROLONGED_BLINK", sim_dump_profile;
  std::size_t sim_count = 10;
  double sim_gap = 2.0;
  std::optional<std::uint64_t> sim_seed;
  sim->add_option("--profile", sim_profile, "Default profile id A..O");
  sim->add_option("--profile-file", sim_profile_file, "Profile file (key = value)");
  sim->add_option("--schedule", sim_schedule, "eval | training-pb | training-up | repeat")
      ->check(CLI::IsMember({"eval", "training-pb", "training-up", "repeat"}));
  sim->add_option("--kind", sim_kind, "Movement kind for --schedule repeat");
  sim->add_option("--count", sim_count, "Movement count for --schedule repeat");
  sim->add_option("--gap", sim_gap, "Gap in seconds for --schedule repeat");
  sim->add_option("--seed", sim_seed, "Session seed (default: derived from the profile)");
  sim->add_option("--out", sim_out, "Trace output (default stdout)");
  sim->add_option("--labels", sim_labels, "Labels CSV output");
  sim->add_option("--format", sim_format, "csv | raw_f32");
  sim->add_option("--dump-profile", sim_dump_profile, "Write the resolved profile here");

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Run the learning period and write a model");
  ConfigOptions train_cfg;
  train_cfg.add_to(train);
  std::string train_pb, train_up, train_format = "csv", train_profile, train_out;
  train->add_option("--pb-trace", train_pb, "Trace holding the PB repetitions");
  train->add_option("--up-trace", train_up, "Trace holding the upward-gaze repetitions");
  train->add_option("--format", train_format, "Trace format: csv | raw_f32");
  train->add_option("--profile", train_profile, "Simulate the learning traces from this profile instead");
  train->add_option("--out", train_out, "Model output (default stdout)");

  // detect -----------------------------------------------------------------
  auto* detect = app.add_subcommand("detect", "Classify a trace with a trained model");
  ConfigOptions detect_cfg;
  detect_cfg.add_to(detect);
  std::string det_model, det_trace, det_format = "csv", det_out, det_events, det_dump_r;
  detect->add_option("--model", det_model, "Model file")->required();
  detect->add_option("--trace", det_trace, "Input trace")->required();
  detect->add_option("--format", det_format, "Trace format: csv | raw_f32");
  detect->add_option("--out", det_out, "Event CSV output (default stdout)");
  detect->add_option("--trace-events", det_events, "Write isolator events (index,event,reason)");
  detect->add_option("--dump-r", det_dump_r, "Write the preprocessed r stream as trace CSV");

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Train and score simulated subjects");
  ConfigOptions eval_cfg;
  eval_cfg.add_to(eval);
  std::vector<std::string> eval_profiles;
  std::string eval_profile_file, eval_out;
  unsigned eval_jobs = 1;
  bool eval_both = false;
  eval->add_option("--profile", eval_profiles, "Profile ids (default: all 15)");
  eval->add_option("--profile-file", eval_profile_file, "Evaluate a single profile file");
  eval->add_option("--jobs,-j", eval_jobs, "Parallel profiles");
  eval->add_flag("--both-backends", eval_both, "Run NCC and DDTW, reports concatenated");
  eval->add_option("--out", eval_out, "Report CSV output (default stdout)");

  // bench ------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Latency, throughput and memory benchmark");
  ConfigOptions bench_cfg;
  bench_cfg.add_to(bench);
  std::string bench_profile = "D", bench_out, bench_snapshots;
  double bench_every = 1.0;
  bench->add_option("--profile", bench_profile, "Default profile id");
  bench->add_option("--out", bench_out, "metric,value CSV output (default stdout)");
  bench->add_option("--snapshots", bench_snapshots, "Accountant snapshot CSV output");
  bench->add_option("--snapshot-every", bench_every, "Snapshot period in stream seconds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      const auto cfg = sim_cfg.resolve();
      const auto profile = resolve_profiles({sim_profile}, sim_profile_file).front();
      if (!sim_dump_profile.empty()) open_out(sim_dump_profile) << format_profile(profile);
      EogTrace trace;
      if (sim_schedule == "eval") {
        trace = sim_seed ? generate_session(profile, evaluation_schedule(*sim_seed), cfg, *sim_seed)
                         : generate_evaluation(profile, cfg);
      } else if (sim_schedule == "training-pb" || sim_schedule == "training-up") {
        auto t = generate_training(profile, cfg);
        trace = sim_schedule == "training-pb" ? t.pb : t.up;
      } else {
        trace = generate_session(profile,
                                 repeated_schedule(parse_movement_kind(sim_kind), sim_count, sim_gap),
                                 cfg, sim_seed.value_or(profile.seed));
      }
      emit(sim_out, [&](std::ostream& o) { save_trace(o, trace, parse_trace_format(sim_format)); });
      if (!sim_labels.empty()) {
        auto out = open_out(sim_labels);
        save_labels(out, trace.labels);
      }
      return 0;
    }

    if (train->parsed()) {
      const auto cfg = train_cfg.resolve();
      TrainedModel model;
      if (!train_profile.empty()) {
        const auto profile = resolve_profiles({train_profile}, "").front();
        const auto t = generate_training(profile, cfg);
        model = train_from_traces(t.pb, t.up, cfg);
      } else {
        if (train_pb.empty() || train_up.empty())
          throw ConfigError("train needs --pb-trace and --up-trace, or --profile");
        model = train_from_traces(read_trace(train_pb, train_format), read_trace(train_up, train_format), cfg);
      }
      emit(train_out, [&](std::ostream& o) { save_model(o, model); });
      return 0;
    }

    if (detect->parsed()) {
      auto in = open_in(det_model);
      const auto model = load_model(in);
      const auto cfg = detect_cfg.resolve(model.config);
      const auto trace = read_trace(det_trace, det_format);
      if (!det_dump_r.empty()) {
        EogTrace r;
        r.amplitudes = preprocess(trace.amplitudes, cfg);
        auto out = open_out(det_dump_r);
        save_trace(out, r, TraceFormat::csv);
      }
      const auto result = run_operational(trace.amplitudes, model, cfg, nullptr, !det_events.empty());
      if (!det_events.empty()) {
        auto out = open_out(det_events);
        out << "index,event,reason\n";
        for (const auto& e : result.isolator_events) {
          if (e.is_candidate()) out << e.index << ",CANDIDATE,\n";
          else out << e.index << ",REJECTED," << to_string(e.rejection().reason) << '\n';
        }
      }
      emit(det_out, [&](std::ostream& o) {
        o << "t_s,start_idx,end_idx,pass_sum,is_pb\n";
        std::size_t a = 0;
        for (const auto& d : result.detections) {
          o << detail::format_double(d.t_s) << ',' << d.start_index << ',' << d.end_index << ','
            << detail::format_double(d.pass_sum) << ',' << (d.is_pb ? "TRUE" : "FALSE") << '\n';
          for (; a < result.alerts.size() && result.alerts[a].t_s <= d.t_s; ++a)
            o << "ALERT," << detail::format_double(result.alerts[a].t_s) << ','
              << result.alerts[a].count() << '\n';
        }
      });
      return 0;
    }

    if (eval->parsed()) {
      const auto cfg = eval_cfg.resolve();
      const auto profiles = resolve_profiles(eval_profiles, eval_profile_file);
      std::vector<EvalReport> reports;
      if (eval_both) {
        for (auto b : {SimilarityBackend::ncc_max, SimilarityBackend::ddtw_sakoe_chiba}) {
          auto c = cfg;
          c.similarity_backend = b;
          reports.push_back(run_eval(profiles, c, eval_jobs));
        }
      } else {
        reports.push_back(run_eval(profiles, cfg, eval_jobs));
      }
      emit(eval_out, [&](std::ostream& o) {
        for (const auto& r : reports) o << format_eval_csv(r);
      });
      int code = 0;
      for (const auto& r : reports) {
        for (const auto& m : acceptance_misses(r, profiles))
          std::cerr << "pbdetect: " << r.backend << ": " << m << '\n';
        code = std::max(code, eval_exit_code(r, profiles));
      }
      return code;
    }

    if (bench->parsed()) {
      const auto cfg = bench_cfg.resolve();
      const auto profile = resolve_profiles({bench_profile}, "").front();
      const auto rep = run_bench(profile, cfg, bench_every);
      emit(bench_out, [&](std::ostream& o) { o << format_bench_csv(rep); });
      if (!bench_snapshots.empty()) open_out(bench_snapshots) << format_snapshots_csv(rep);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "pbdetect: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
