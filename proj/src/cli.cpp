#include "mmsynth/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmsynth/dataset_writer.hpp"
#include "mmsynth/error.hpp"
#include "mmsynth/eval_kit.hpp"
#include "mmsynth/pipeline.hpp"

namespace mmsynth {
namespace {

using ojson = nlohmann::ordered_json;

class UsageError : public Error {
 public:
  using Error::Error;
};

// Shortest round-trip form, shared by human and JSON output.
std::string num(double v) { return nlohmann::json(v).dump(); }

void emit(std::ostream& out, bool json, const ojson& j, const std::vector<std::pair<std::string, std::string>>& human) {
  if (json) {
    out << j.dump() << '\n';
    return;
  }
  for (const auto& [k, v] : human) out << k << ": " << v << '\n';
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    lines.push_back(line.substr(b, e - b + 1));
  }
  return lines;
}

ojson stats_json(const DatasetStats& s) { return s.to_json(); }

std::vector<std::pair<std::string, std::string>> stats_human(const DatasetStats& s) {
  std::vector<std::pair<std::string, std::string>> h;
  h.emplace_back("total", std::to_string(s.total));
  for (const auto& [k, v] : s.by_task) h.emplace_back("task " + k, std::to_string(v));
  for (const auto& [k, v] : s.by_modality) h.emplace_back("row " + k, std::to_string(v));
  for (const auto& [k, v] : s.by_language) h.emplace_back("language " + k, std::to_string(v));
  h.emplace_back("rejected", std::to_string(s.rejected));
  for (const auto& [k, v] : s.rejects_by_rule) h.emplace_back("rejected " + k, std::to_string(v));
  h.emplace_back("failures", std::to_string(s.failures));
  h.emplace_back("length_checked", std::to_string(s.length_checked));
  h.emplace_back("length_met", std::to_string(s.length_met));
  for (const auto& sh : s.shards) h.emplace_back("shard " + sh.name, std::to_string(sh.lines) + " " + sh.sha256);
  return h;
}

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> n;
  std::optional<std::uint64_t> seed;
  bool mock = false;
  std::optional<int> concurrency;
  std::optional<std::size_t> shard_size;
  std::optional<int> regenerations;
  std::optional<std::string> api_base;
  std::optional<std::string> model;
};

int cmd_synth(const SynthArgs& a, bool json, std::ostream& out, std::ostream& err) {
  RunSpec spec;
  if (!a.config.empty()) {
    spec = load_run_spec(a.config);
  } else if (!a.mock) {
    throw UsageError("synth needs --config unless --mock is given");
  } else if (!a.n) {
    throw UsageError("synth --mock without --config needs --n");
  }
  if (a.mock) spec.mock = true;
  if (auto base = env("MMSYNTH_API_BASE")) spec.endpoint.base_url = *base;
  if (auto key = env("MMSYNTH_API_KEY")) spec.endpoint.api_key = *key;
  if (a.api_base) spec.endpoint.base_url = *a.api_base;
  if (a.model) spec.endpoint.model_name = *a.model;
  if (a.n) spec.n_samples = *a.n;
  if (a.seed) spec.master_seed = *a.seed;
  if (a.concurrency) spec.concurrency = *a.concurrency;
  if (a.shard_size) spec.shard_size = *a.shard_size;
  if (a.regenerations) spec.regenerations = *a.regenerations;
  if (!a.out.empty()) spec.out_dir = a.out;
  if (spec.out_dir.empty()) throw UsageError("synth needs --out or out_dir in the config");
  if (!spec.mock && spec.endpoint.api_key.empty()) {
    throw ConfigError("endpoint.api_key", "set MMSYNTH_API_KEY for non-mock runs");
  }

  RunHooks hooks;
  hooks.cancel = &interrupt_flag();
  const RunReport report = run(spec, hooks);

  emit(out, json, report.to_json(),
       {{"accepted", std::to_string(report.accepted)},
        {"rejected", std::to_string(report.rejected)},
        {"failures", std::to_string(report.failures)},
        {"wall_time_s", num(report.wall_time_s)},
        {"resumed", report.resumed ? "true" : "false"},
        {"complete", report.complete ? "true" : "false"},
        {"shards", std::to_string(report.stats.shards.size())}});
  if (!report.complete) {
    err << "interrupted; rerun the same command to resume\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_validate(const std::string& in_dir, bool json, std::ostream& out, std::ostream& err) {
  const auto shards = list_shards(in_dir);
  if (shards.empty()) throw InputError("no shards in " + in_dir);
  std::uint64_t samples = 0;
  std::uint64_t invalid = 0;
  std::map<std::string, std::uint64_t> by_rule;
  for (const auto& path : shards) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      ++samples;
      ValidationReport report;
      try {
        report = validate_sample(parse_sample(line));
      } catch (const ParseError& e) {
        report.violations.push_back({std::string(rule::kParse), e.what()});
      }
      if (report.accepted()) continue;
      ++invalid;
      for (const auto& v : report.violations) {
        ++by_rule[v.rule_id];
        err << path.filename().string() << ':' << line_no << ": " << v.rule_id << ": " << v.message << '\n';
      }
    }
  }
  ojson j;
  j["samples"] = samples;
  j["valid"] = samples - invalid;
  j["invalid"] = invalid;
  j["violations_by_rule"] = by_rule;
  std::vector<std::pair<std::string, std::string>> h = {{"samples", std::to_string(samples)},
                                                         {"valid", std::to_string(samples - invalid)},
                                                         {"invalid", std::to_string(invalid)}};
  for (const auto& [k, v] : by_rule) h.emplace_back("violations " + k, std::to_string(v));
  emit(out, json, j, h);
  return invalid == 0 ? kExitOk : kExitFailure;
}

int cmd_stats(const std::string& in_dir, bool json, std::ostream& out) {
  const std::filesystem::path dir(in_dir);
  const DatasetStats stats = std::filesystem::exists(dir / kStatsFile) ? read_stats(dir) : scan_shards(dir);
  emit(out, json, stats_json(stats), stats_human(stats));
  return kExitOk;
}

int cmd_mine(const std::string& ranking_file, const std::string& positive, std::size_t rank, bool json,
             std::ostream& out) {
  if (rank < 1) throw UsageError("--rank must be >= 1");
  const auto ranking = read_lines(ranking_file);
  const std::string id = mine_hard_negative(ranking, positive, rank);
  ojson j;
  j["id"] = id;
  j["rank"] = rank;
  if (json) {
    out << j.dump() << '\n';
  } else {
    out << id << '\n';
  }
  return kExitOk;
}

struct EvalArgs {
  std::string queries;
  std::string docs;
  std::string gold;
  std::string metric;
  std::size_t k = 10;
  std::optional<double> tau;
  bool loss = false;
};

int cmd_eval(const EvalArgs& a, bool json, std::ostream& out) {
  if (a.loss && !a.tau) throw UsageError("--loss needs --tau");
  if (a.tau && !a.loss) throw UsageError("--tau is only used with --loss");
  if (a.tau && !(*a.tau > 0.0)) throw UsageError("--tau must be > 0");
  if (a.k < 1) throw UsageError("--k must be >= 1");

  EvalInputs inputs{load_embeddings_any(a.queries), load_embeddings_any(a.docs), {}};
  inputs.gold = load_relevance(a.gold, inputs.queries, inputs.docs);
  const ScoreMatrix scores = score_matrix(inputs.queries, inputs.docs);

  ojson j;
  std::vector<std::pair<std::string, std::string>> h;
  j["metric"] = a.metric;
  double value = 0.0;
  if (a.metric == "p@1") {
    value = precision_at_1(scores, inputs.gold);
    h.emplace_back("p@1", num(value));
  } else {
    j["k"] = a.k;
    value = recall_at_k(scores, inputs.gold, a.k);
    h.emplace_back("r@" + std::to_string(a.k), num(value));
  }
  j["value"] = value;
  j["queries"] = scores.rows();
  if (a.loss) {
    const double loss = mean_info_nce(inputs, LossParams{*a.tau});
    j["tau"] = *a.tau;
    j["info_nce"] = loss;
    h.emplace_back("info_nce", num(loss));
  }
  if (json) {
    out << j.dump() << '\n';
  } else if (h.size() == 1) {
    out << h.front().second << '\n';
  } else {
    emit(out, false, j, h);
  }
  return kExitOk;
}

int cmd_fit(const std::string& points_file, bool json, std::ostream& out) {
  std::ifstream in(points_file);
  if (!in) throw InputError("cannot open " + points_file);
  std::vector<ScalingPoint> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    ScalingPoint p{};
    std::string extra;
    if (!(ss >> p.n >> p.y) || (ss >> extra)) {
      throw InputError(points_file + ":" + std::to_string(line_no) + ": expected '<n> <y>'");
    }
    if (!(p.n > 0.0)) throw InputError(points_file + ":" + std::to_string(line_no) + ": n must be > 0");
    points.push_back(p);
  }
  const LinearLogFit fit = fit_linear_log(points);
  ojson j;
  j["slope"] = fit.slope;
  j["intercept"] = fit.intercept;
  j["r_squared"] = fit.r_squared;
  j["points"] = points.size();
  emit(out, json, j,
       {{"slope", num(fit.slope)},
        {"intercept", num(fit.intercept)},
        {"r_squared", num(fit.r_squared)},
        {"points", std::to_string(points.size())}});
  return kExitOk;
}

}  // namespace

std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal embedding data synthesis and evaluation", "mmsynth"};
  app.require_subcommand(1);
  std::string format = "text";
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Synthesize a sharded dataset");
  s->add_option("--config", synth.config, "Run spec JSON")->check(CLI::ExistingFile);
  s->add_option("--out", synth.out, "Output directory");
  s->add_option("--n", synth.n, "Number of samples")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Master seed");
  s->add_flag("--mock", synth.mock, "Use the offline mock generator");
  s->add_option("--concurrency", synth.concurrency, "Worker count")->check(CLI::PositiveNumber);
  s->add_option("--shard-size", synth.shard_size, "Samples per shard")->check(CLI::PositiveNumber);
  s->add_option("--regenerate", synth.regenerations, "Regenerations after a reject (0 or 1)")
      ->check(CLI::Range(0, 1));
  s->add_option("--api-base", synth.api_base, "Endpoint base URL");
  s->add_option("--model", synth.model, "Endpoint model name");

  std::string in_dir;
  auto* v = app.add_subcommand("validate", "Re-check every sample in a shard directory");
  v->add_option("--in", in_dir, "Shard directory")->required()->check(CLI::ExistingDirectory);

  std::string stats_dir;
  auto* st = app.add_subcommand("stats", "Print dataset statistics");
  st->add_option("--in", stats_dir, "Shard directory")->required()->check(CLI::ExistingDirectory);

  std::string ranking;
  std::string positive;
  std::size_t rank = kDefaultHardNegativeRank;
  auto* m = app.add_subcommand("mine", "Pick a hard negative from a ranking");
  m->add_option("--ranking", ranking, "One id per line, best first")->required()->check(CLI::ExistingFile);
  m->add_option("--positive", positive, "Positive id")->required();
  m->add_option("--rank", rank, "1-based rank to take");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score embeddings against relevance labels");
  e->add_option("--queries", ev.queries, "Query embeddings")->required()->check(CLI::ExistingPath);
  e->add_option("--docs", ev.docs, "Document embeddings")->required()->check(CLI::ExistingPath);
  e->add_option("--gold", ev.gold, "Relevance JSONL")->required()->check(CLI::ExistingFile);
  e->add_option("--metric", ev.metric, "p@1 or r@k")->required()->check(CLI::IsMember({"p@1", "r@k"}));
  e->add_option("--k", ev.k, "Cutoff for r@k");
  e->add_option("--tau", ev.tau, "InfoNCE temperature");
  e->add_flag("--loss", ev.loss, "Also report mean InfoNCE");

  std::string points;
  auto* f = app.add_subcommand("fit-scaling", "Fit y = a log10(n) + b");
  f->add_option("--points", points, "Lines of '<n> <y>'")->required()->check(CLI::ExistingFile);

  for (auto* sub : {s, v, st, m, e, f}) {
    sub->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kExitUsage;
  }

  const bool json = format == "json";
  try {
    if (s->parsed()) return cmd_synth(synth, json, out, err);
    if (v->parsed()) return cmd_validate(in_dir, json, out, err);
    if (st->parsed()) return cmd_stats(stats_dir, json, out);
    if (m->parsed()) return cmd_mine(ranking, positive, rank, json, out);
    if (e->parsed()) return cmd_eval(ev, json, out);
    if (f->parsed()) return cmd_fit(points, json, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mmsynth
