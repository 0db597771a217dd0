#include "qprobe/cli.hpp"

#include "qprobe/curation.hpp"
#include "qprobe/service.hpp"
#include "qprobe/session.hpp"

#include "CLI11.hpp"
#include "httplib.h"

#include <iostream>
#include <sstream>

namespace qprobe {
namespace {

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(method_from_string(item));
  }
  if (out.empty()) throw ValidationError("no aggregation method given");
  return out;
}

std::vector<double> parse_bounds(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("bad interval bound '" + item + "'");
    }
  }
  return out;
}

void emit(const std::string& text, const std::string& dest, std::ostream& out) {
  if (dest.empty() || dest == "-") {
    out << text;
  } else {
    write_file(dest, text);
  }
}

std::filesystem::path default_image_root(const std::string& manifest_path, const std::string& given) {
  if (!given.empty()) return given;
  return std::filesystem::path(manifest_path).parent_path();
}

PairingPlan make_plan(const DatasetManifest& manifest, const std::string& kind, int rounds, std::uint64_t seed,
                      const std::string& bounds, std::optional<std::size_t> cap) {
  switch (plan_kind_from_string(kind)) {
    case PlanKind::CoarseRounds: return coarse_rounds(manifest, rounds, seed);
    case PlanKind::FineSameContentType: return fine_same_content_type(manifest);
    case PlanKind::FineSameContentLevel: return fine_same_content_level(manifest);
    case PlanKind::FineMosInterval: return fine_mos_interval(manifest, parse_bounds(bounds), cap, seed);
  }
  throw ValidationError("unknown plan kind");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"qprobe: 2AFC image-quality probing"};
  app.require_subcommand(1);

  // validate
  std::string manifest_path;
  auto* validate = app.add_subcommand("validate", "Check a dataset manifest");
  validate->add_option("--manifest,-m", manifest_path, "manifest (.csv or .json)")->required();

  // pair
  std::string kind = "coarse", plan_out, bounds = "0,25,50,75,100";
  int rounds = 12;
  std::uint64_t seed = 0;
  std::optional<std::size_t> cap;
  auto* pair = app.add_subcommand("pair", "Emit a pairing plan as JSONL");
  pair->add_option("--manifest,-m", manifest_path)->required();
  pair->add_option("--kind", kind, "coarse|fine-type|fine-level|fine-mos")->capture_default_str();
  pair->add_option("--rounds", rounds)->capture_default_str()->check(CLI::PositiveNumber);
  pair->add_option("--seed", seed)->capture_default_str();
  pair->add_option("--bounds", bounds, "MOS interval bounds for fine-mos")->capture_default_str();
  pair->add_option("--cap", cap, "max pairs per MOS interval");
  pair->add_option("--out,-o", plan_out, "output file (default stdout)");

  // run
  std::string judge_spec = "oracle", methods = "map", out_dir, plan_in;
  int max_in_flight = 1;
  double max_failure_rate = 0.5;
  bool resume = false;
  std::optional<std::size_t> stop_after;
  auto* run = app.add_subcommand("run", "Run a probing session");
  run->add_option("--manifest,-m", manifest_path);
  run->add_option("--judge", judge_spec,
                  "oracle | thurstone:SIGMA | biased:P | scored:FILE[:lower] | replay:FILE | http:CONFIG")
      ->capture_default_str();
  run->add_option("--rounds", rounds)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--seed", seed)->capture_default_str();
  run->add_option("--methods", methods, "comma list of map,mle,perron,trueskill")->capture_default_str();
  run->add_option("--plan", plan_in, "plan JSONL (default: coarse rounds)");
  run->add_option("--out,-o", out_dir, "session directory")->required();
  run->add_option("--max-in-flight", max_in_flight)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--max-failure-rate", max_failure_rate)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  run->add_flag("--resume", resume, "continue the session in --out");
  run->add_option("--stop-after", stop_after, "stop after this many trials")->group("");

  // aggregate
  std::string trials_path, method_single;
  auto* agg = app.add_subcommand("aggregate", "Re-aggregate scores from a trial log");
  agg->add_option("--manifest,-m", manifest_path)->required();
  agg->add_option("--trials,-t", trials_path)->required();
  agg->add_option("--methods,--method", methods)->capture_default_str();
  agg->add_option("--out,-o", out_dir, "directory for matrix.csv and scores.csv")->required();

  // eval
  std::string report_out;
  auto* eval = app.add_subcommand("eval", "Consistency/accuracy/correlation report from a trial log");
  eval->add_option("--manifest,-m", manifest_path)->required();
  eval->add_option("--trials,-t", trials_path)->required();
  eval->add_option("--method", method_single, "ranking used for correlation")->default_val("map");
  eval->add_option("--out,-o", report_out, "report.csv path (default stdout)");

  // simulate
  std::size_t n_items = 160;
  int m_max = 12, repeats = 5;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "Convergence curve of MAP scores over rounds");
  sim->add_option("--n", n_items)->capture_default_str();
  sim->add_option("--mmax", m_max)->capture_default_str();
  sim->add_option("--repeats", repeats)->capture_default_str();
  sim->add_option("--judge", judge_spec, "oracle | thurstone:SIGMA | biased:P")->capture_default_str();
  sim->add_option("--seed", seed)->capture_default_str();
  sim->add_option("--out,-o", sim_out, "CSV path (default stdout)");

  // serve
  int port = 8080;
  std::string host = "127.0.0.1", session_id = "default", image_root;
  auto* serve = app.add_subcommand("serve", "Serve a human 2AFC session over HTTP");
  serve->add_option("--manifest,-m", manifest_path)->required();
  serve->add_option("--plan", plan_in, "plan JSONL (default: coarse rounds)");
  serve->add_option("--rounds", rounds)->capture_default_str()->check(CLI::PositiveNumber);
  serve->add_option("--seed", seed)->capture_default_str();
  serve->add_option("--methods", methods)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--session-id", session_id)->capture_default_str();
  serve->add_option("--image-root", image_root, "base for relative image paths (default: manifest dir)");
  serve->add_option("--out,-o", out_dir, "session directory")->required();

  // curate
  auto* curate = app.add_subcommand("curate", "Dataset curation tools");
  curate->require_subcommand(1);
  std::string curate_out;
  auto* attrs = curate->add_subcommand("attrs", "SI, CF and MOS band per image (PGM/PPM)");
  attrs->add_option("--manifest,-m", manifest_path)->required();
  attrs->add_option("--image-root", image_root);
  attrs->add_option("--out,-o", curate_out);
  std::size_t k_per_band = 10;
  auto* sample = curate->add_subcommand("sample", "Seeded uniform-MOS subset");
  sample->add_option("--manifest,-m", manifest_path)->required();
  sample->add_option("--k", k_per_band, "images per MOS band")->capture_default_str();
  sample->add_option("--seed", seed)->capture_default_str();
  sample->add_option("--out,-o", curate_out, "subset manifest (.csv or .json)")->required();
  std::string score_path;
  auto* screen = curate->add_subcommand("bt500", "Subject outlier screening of a subjects x conditions CSV");
  screen->add_option("--scores", score_path)->required();
  screen->add_option("--out,-o", curate_out, "per-condition MOS CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*validate) {
      const auto m = load_manifest(manifest_path);
      std::size_t with_mos = 0;
      for (const auto& r : m.images()) with_mos += r.mos.has_value();
      out << "ok: " << m.name() << ", " << m.size() << " images, " << with_mos << " with mos\n";
      return 0;
    }
    if (*pair) {
      const auto m = load_manifest(manifest_path);
      const auto plan = make_plan(m, kind, rounds, seed, bounds, cap);
      for (const auto& note : plan.notes) err << "note: " << note << "\n";
      emit(plan_to_jsonl(plan), plan_out, out);
      return 0;
    }
    if (*run) {
      SessionResult res;
      if (resume) {
        res = resume_session(out_dir, nullptr, stop_after);
      } else {
        if (manifest_path.empty()) throw ValidationError("--manifest is required unless --resume is given");
        const auto m = load_manifest(manifest_path);
        PairingPlan plan = plan_in.empty() ? coarse_rounds(m, rounds, seed) : plan_from_jsonl(read_file(plan_in));
        auto judge = make_judge(judge_spec, m, seed);
        SessionConfig cfg;
        cfg.rounds = rounds;
        cfg.seed = seed;
        cfg.judge_spec = judge_spec;
        cfg.methods = parse_methods(methods);
        cfg.max_in_flight = max_in_flight;
        cfg.max_failure_rate = max_failure_rate;
        cfg.output_dir = out_dir;
        cfg.manifest_path = manifest_path;
        cfg.stop_after_trials = stop_after;
        res = run_session(m, plan, *judge, cfg);
      }
      if (!res.complete) {
        out << "stopped after " << res.trials.size() << " trials; continue with --resume\n";
        return 0;
      }
      out << reports_to_table(res.analysis->reports);
      return 0;
    }
    if (*agg) {
      const auto m = load_manifest(manifest_path);
      const auto trials = load_trial_log(trials_path);
      const auto a = analyze(trials, m, parse_methods(methods));
      write_file(std::filesystem::path(out_dir) / "matrix.csv", matrix_to_csv(a.matrix));
      write_file(std::filesystem::path(out_dir) / "scores.csv", scores_to_csv(a.rankings));
      return 0;
    }
    if (*eval) {
      const auto m = load_manifest(manifest_path);
      const auto trials = load_trial_log(trials_path);
      const auto a = analyze(trials, m, {method_from_string(method_single)});
      if (report_out.empty() || report_out == "-") {
        out << reports_to_table(a.reports);
      } else {
        write_file(report_out, reports_to_csv(a.reports));
      }
      return 0;
    }
    if (*sim) {
      const auto curve = simulate_convergence(n_items, judge_spec, m_max, repeats, seed);
      emit(convergence_to_csv(curve), sim_out, out);
      return 0;
    }
    if (*serve) {
      const auto m = load_manifest(manifest_path);
      PairingPlan plan = plan_in.empty() ? coarse_rounds(m, rounds, seed) : plan_from_jsonl(read_file(plan_in));
      SessionConfig cfg;
      cfg.rounds = rounds;
      cfg.seed = seed;
      cfg.methods = parse_methods(methods);
      cfg.output_dir = out_dir;
      cfg.judge_spec = "human";
      HumanSession session(m, std::move(plan), cfg, session_id);
      auto server = make_session_server(session, default_image_root(manifest_path, image_root));
      out << "serving session '" << session_id << "' (" << session.total() << " trials) on http://" << host << ":"
          << port << "\n"
          << std::flush;
      if (!server->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
      return 0;
    }
    if (*attrs) {
      const auto m = load_manifest(manifest_path);
      const auto rows = curation_report(m, default_image_root(manifest_path, image_root));
      emit(curation_to_csv(rows), curate_out, out);
      return 0;
    }
    if (*sample) {
      const auto m = load_manifest(manifest_path);
      const auto s = uniform_mos_sample(m, k_per_band, seed);
      if (s.ids.empty()) throw ValidationError("sample is empty");
      save_manifest(s.subset(m), curate_out);
      for (int b = 0; b < 5; ++b) {
        out << mos_band_name(b) << ": " << s.per_band[b] << (s.shortfall[b] ? " (shortfall)" : "") << "\n";
      }
      return 0;
    }
    if (*screen) {
      std::vector<std::string> labels;
      const auto scores = parse_score_matrix(read_file(score_path), &labels);
      const auto res = bt500_outlier_reject(scores);
      for (auto s : res.rejected) {
        err << "rejected subject " << labels[static_cast<std::size_t>(s)] << " (P=" << res.p(s) << ", Q=" << res.q(s)
            << ")\n";
      }
      std::string csv = "condition,mos\n";
      for (Eigen::Index c = 0; c < res.mos.size(); ++c) {
        csv += std::to_string(c + 1) + "," + format_double(res.mos(c)) + "\n";
      }
      emit(csv, curate_out, out);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace qprobe
