#include "selind_cli/cli.h"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "selind/chains.h"
#include "selind/constructions.h"
#include "selind/error.h"
#include "selind/estimators.h"
#include "selind/experiments.h"
#include "selind/io.h"

namespace selind::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kSubcommands[] = {"gen", "construct", "eval", "attmaps", "claim", "lemmas"};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNonContiguousLags: return kNonContiguous;
    case ErrorKind::kUnsupportedLagSet: return kUnsupportedLagSet;
    case ErrorKind::kSequenceTooShort: return kSequenceTooShort;
    case ErrorKind::kIo: return kIoError;
    default: return kInvalidConfig;
  }
}

fs::path output_dir(const RunConfig& config) {
  if (!config.out_dir.empty()) return config.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
  return "selind_out";
}

ConstructionConfig construction_config(const RunConfig& rc) {
  ConstructionConfig c;
  c.lags = LagSet(rc.lags);
  c.length = rc.length;
  c.lambda = rc.lambda;
  c.beta = rc.beta;
  c.heads_layer2 = rc.heads;
  c.variant = parse_variant(rc.variant);
  if (rc.beta_scaling == "calibrated") {
    c.beta_scaling = BetaScaling::kCalibrated;
  } else if (rc.beta_scaling == "raw") {
    c.beta_scaling = BetaScaling::kRaw;
  } else {
    throw Error(ErrorKind::kInvalidConfig, "unknown beta scaling '" + rc.beta_scaling + "'");
  }
  return c;
}

json manifest_for(const RunConfig& rc) {
  json m;
  m["config"] = provenance(rc);
  m["config_hash"] = config_hash(m["config"]);
  m["seed"] = rc.seed;
  return m;
}

TransitionMatrix matrix_for(const RunConfig& rc) {
  return sample_transition_matrix(rc.seed, rc.alphabet_size);
}

void report(std::ostream& out, const fs::path& path) { out << "wrote " << path.string() << '\n'; }

void run_gen(const RunConfig& rc, std::ostream& out) {
  const LagSet lags(rc.lags);
  const TransitionMatrix P = matrix_for(rc);
  const SequenceBatch batch = sample_batch(P, lags, rc.num_sequences, rc.length, rc.seed, rc.threads);
  const fs::path dir = output_dir(rc);
  json header = manifest_for(rc);
  header["batch"] = batch_header(batch, P, lags);
  write_text_file(dir / "batch.csv", batch_to_csv(batch));
  write_text_file(dir / "batch.json", dump_json(header));
  report(out, dir / "batch.csv");
  report(out, dir / "batch.json");
}

void run_construct(const RunConfig& rc, std::ostream& out) {
  const TransitionMatrix P = matrix_for(rc);
  const ConstructedModel cm = build_construction(P, construction_config(rc));
  json dump = manifest_for(rc);
  dump["transition_matrix"] = matrix_to_json(P.entries());
  dump["model"] = weight_dump(cm);
  const fs::path dir = output_dir(rc);
  write_text_file(dir / "weights.json", dump_json(dump));
  report(out, dir / "weights.json");
}

void run_eval(const RunConfig& rc, std::ostream& out) {
  const LagSet lags(rc.lags);
  const TransitionMatrix P = matrix_for(rc);
  ConstructionConfig cc = construction_config(rc);
  build_construction(P, cc);  // fail fast on an invalid variant
  KlCurveOptions opts;
  opts.beta = rc.beta;
  opts.threads = rc.threads;
  opts.constructed.emplace_back("constructed", cc);
  if (rc.beta_sweep) {
    opts.hardmax = true;
    opts.beta_sweep = kBetaSweepGrid;
  }
  const auto curves = kl_curve(P, lags, rc.num_sequences, rc.length, rc.seed, opts);
  const fs::path dir = output_dir(rc);
  json manifest = manifest_for(rc);
  manifest["transition_matrix"] = matrix_to_json(P.entries());
  json summary = json::array();
  for (const KlCurve& c : curves) {
    summary.push_back({{"method", c.method},
                       {"first_position", c.first_position},
                       {"final_mean_kl", c.mean_kl.back()}});
  }
  manifest["methods"] = std::move(summary);
  write_text_file(dir / "kl_curve.csv", kl_curves_to_csv(curves));
  write_text_file(dir / "kl_curve.json", dump_json(manifest));
  report(out, dir / "kl_curve.csv");
  report(out, dir / "kl_curve.json");
}

void run_attmaps(const RunConfig& rc, std::ostream& out) {
  const LagSet lags(rc.lags);
  const TransitionMatrix P = matrix_for(rc);
  const ConstructedModel cm = build_construction(P, construction_config(rc));
  Rng rng(derive_seed(rc.seed, stream::kExport, 0));
  int lag = rc.true_lag;
  if (lag == 0) {
    lag = lags[static_cast<int>(rng.below(lags.size()))];
  } else if (!lags.contains(lag)) {
    throw Error(ErrorKind::kInvalidConfig, "--true-lag must belong to --lags");
  }
  const Sequence seq = sample_sequence(P, lag, lags.k_hat(), rc.length, rng);
  json manifest = manifest_for(rc);
  manifest["true_lag"] = lag;
  const Eigen::VectorXd pred = predict_distribution(cm.model, seq);
  manifest["prediction"] = std::vector<double>(pred.data(), pred.data() + pred.size());
  const auto files = export_attention_maps(cm.model, seq, output_dir(rc), manifest);
  for (const auto& f : files) report(out, f);
}

void run_claim(const RunConfig& rc, std::ostream& out) {
  ClaimCheckOptions opts;
  opts.num_matrices = rc.matrices;
  opts.num_lags = rc.num_lags;
  opts.max_lag = rc.max_lag;
  opts.alphabet_size = rc.alphabet_size;
  opts.num_sequences = rc.num_sequences;
  opts.length = rc.length;
  opts.seed = rc.seed;
  opts.threads = rc.threads;
  opts.exact = rc.exact;
  const ClaimCheckResult result = claim_check(opts);
  int confident = 0;
  double min_gap = result.samples.empty() ? 0.0 : result.samples.front().gap;
  for (const ClaimGapSample& s : result.samples) {
    if (s.gap > 3.0 * s.stderr_gap) ++confident;
    min_gap = std::min(min_gap, s.gap);
  }
  json manifest = manifest_for(rc);
  manifest["lags"] = result.lags;
  manifest["num_samples"] = result.samples.size();
  manifest["num_positive_3se"] = confident;
  manifest["min_gap"] = min_gap;
  const fs::path dir = output_dir(rc);
  write_text_file(dir / "claim_gaps.csv", claim_gaps_to_csv(result));
  write_text_file(dir / "claim_gaps.json", dump_json(manifest));
  report(out, dir / "claim_gaps.csv");
  report(out, dir / "claim_gaps.json");
}

void run_lemmas(const RunConfig& rc, std::ostream& out) {
  LemmaSuiteOptions opts;
  opts.alphabet_size = rc.alphabet_size;
  opts.num_pairs = rc.pairs;
  opts.num_matrices = rc.matrices;
  opts.lags = LagSet(rc.lags);
  opts.num_samples = rc.samples;
  opts.seed = rc.seed;
  opts.threads = rc.threads;
  const auto rows = lemma_suite(opts);
  double min_two = 0.0;
  double min_uno_exact = 0.0;
  bool first_two = true, first_uno = true;
  for (const LemmaRow& r : rows) {
    if (r.lemma == "two") {
      min_two = first_two ? r.gap : std::min(min_two, r.gap);
      first_two = false;
    } else if (r.mode == "exact") {
      min_uno_exact = first_uno ? r.gap : std::min(min_uno_exact, r.gap);
      first_uno = false;
    }
  }
  json manifest = manifest_for(rc);
  manifest["num_rows"] = rows.size();
  manifest["min_gap_two"] = min_two;
  manifest["min_gap_uno_exact"] = min_uno_exact;
  const fs::path dir = output_dir(rc);
  write_text_file(dir / "lemma_gaps.csv", lemma_rows_to_csv(rows));
  write_text_file(dir / "lemma_gaps.json", dump_json(manifest));
  report(out, dir / "lemma_gaps.csv");
  report(out, dir / "lemma_gaps.json");
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
  j = provenance(c);
  j["out_dir"] = c.out_dir;
  j["threads"] = c.threads;
}

void from_json(const json& j, RunConfig& c) {
  c.subcommand = j.at("subcommand").get<std::string>();
  c.alphabet_size = j.at("S").get<int>();
  c.length = j.at("T").get<int>();
  c.num_sequences = j.at("N").get<int>();
  c.lags = j.at("lags").get<std::vector<int>>();
  c.variant = j.at("variant").get<std::string>();
  c.lambda = j.at("lambda").get<double>();
  c.beta = j.at("beta").get<double>();
  c.beta_scaling = j.at("beta_scaling").get<std::string>();
  c.heads = j.at("heads").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.matrices = j.at("matrices").get<int>();
  c.num_lags = j.at("num_lags").get<int>();
  c.max_lag = j.at("max_lag").get<int>();
  c.exact = j.at("exact").get<bool>();
  c.beta_sweep = j.at("beta_sweep").get<bool>();
  c.true_lag = j.at("true_lag").get<int>();
  c.pairs = j.at("pairs").get<int>();
  c.samples = j.at("samples").get<int>();
  c.out_dir = j.value("out_dir", std::string());
  c.threads = j.value("threads", 0);
}

json provenance(const RunConfig& c) {
  json j;
  j["subcommand"] = c.subcommand;
  j["S"] = c.alphabet_size;
  j["T"] = c.length;
  j["N"] = c.num_sequences;
  j["lags"] = c.lags;
  j["variant"] = c.variant;
  j["lambda"] = c.lambda;
  j["beta"] = c.beta;
  j["beta_scaling"] = c.beta_scaling;
  j["heads"] = c.heads;
  j["seed"] = c.seed;
  j["matrices"] = c.matrices;
  j["num_lags"] = c.num_lags;
  j["max_lag"] = c.max_lag;
  j["exact"] = c.exact;
  j["beta_sweep"] = c.beta_sweep;
  j["true_lag"] = c.true_lag;
  j["pairs"] = c.pairs;
  j["samples"] = c.samples;
  return j;
}

int parse_args(const std::vector<std::string>& args, RunConfig& config, std::ostream& out,
               std::ostream& err, bool& handled) {
  handled = false;
  RunConfig c;
  std::string lags = "1,2,3";

  CLI::App app{"Interleaved Markov chains, selective induction heads and their reference estimators",
               "selind"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(36);

  auto* opt_S = app.add_option("--S", c.alphabet_size, "Alphabet size (claim: 10 unless given)")
                    ->capture_default_str();
  auto* opt_T = app.add_option("--T", c.length, "Sequence length (claim: 500 unless given)")
                    ->capture_default_str();
  auto* opt_N = app.add_option("--N", c.num_sequences,
                               "Sequences per batch, or per (matrix, lag) for claim "
                               "(claim: 500 unless given)")
                    ->capture_default_str();
  app.add_option("--lags", lags, "Comma-separated increasing lags")->capture_default_str();
  app.add_option("--variant", c.variant, "Construction variant")
      ->capture_default_str()
      ->check(CLI::IsMember({"contiguous", "alt-third", "noncontig-13", "noncontig-134",
                             "two-lag-single-head"}));
  app.add_option("--lambda", c.lambda, "Saturation scale")->capture_default_str();
  app.add_option("--beta", c.beta, "Selection temperature")->capture_default_str();
  app.add_option("--beta-scaling", c.beta_scaling,
                 "Split of beta across second-layer heads")
      ->capture_default_str()
      ->check(CLI::IsMember({"calibrated", "raw"}));
  app.add_option("--heads", c.heads, "Second-layer heads (0 = variant default)")
      ->capture_default_str();
  app.add_option("--seed", c.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--out", c.out_dir,
                 std::string("Output directory (default: $") + kOutDirEnv + " or ./selind_out)");
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--matrices", c.matrices, "claim/lemmas: number of transition matrices")
      ->capture_default_str();
  app.add_option("--num-lags", c.num_lags, "claim: lags drawn per run")->capture_default_str();
  app.add_option("--max-lag", c.max_lag, "claim: lags are drawn from [1, max-lag]")
      ->capture_default_str();
  app.add_flag("--exact", c.exact, "claim: exact expectations instead of Monte-Carlo");
  app.add_flag("--beta-sweep", c.beta_sweep,
               "eval: add hardmax and estimator curves for beta in {1,3,10,30,100,300}");
  app.add_option("--true-lag", c.true_lag, "attmaps: lag of the exported sequence (0 = random)")
      ->capture_default_str();
  app.add_option("--pairs", c.pairs, "lemmas: random distribution pairs")->capture_default_str();
  app.add_option("--samples", c.samples, "lemmas: Monte-Carlo samples per check")
      ->capture_default_str();

  const std::pair<const char*, const char*> descriptions[] = {
      {"gen", "Sample a batch of sequences"},
      {"construct", "Build a constructed transformer and dump its weights"},
      {"eval", "KL curves for bma, mle, oracle and the constructed model"},
      {"attmaps", "Export attention maps of a constructed model"},
      {"claim", "Evidence-gap check on normalized transition probabilities"},
      {"lemmas", "Inequality checks on random instances"},
  };
  for (const auto& [name, desc] : descriptions) app.add_subcommand(name, desc)->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    handled = true;
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    handled = true;
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "selind: " << e.what() << '\n';
    return kUsage;
  }

  for (const char* name : kSubcommands) {
    if (app.got_subcommand(name)) c.subcommand = name;
  }
  if (c.subcommand == "claim") {
    if (opt_S->count() == 0) c.alphabet_size = 10;
    if (opt_T->count() == 0) c.length = 500;
    if (opt_N->count() == 0) c.num_sequences = 500;
  }
  try {
    c.lags = LagSet::parse(lags).lags();
  } catch (const Error& e) {
    err << "selind: " << e.what() << '\n';
    return kInvalidConfig;
  }
  config = c;
  return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  bool handled = false;
  const int parsed = parse_args(args, rc, out, err, handled);
  if (parsed != kOk || handled) return parsed;
  try {
    if (rc.subcommand == "gen") run_gen(rc, out);
    else if (rc.subcommand == "construct") run_construct(rc, out);
    else if (rc.subcommand == "eval") run_eval(rc, out);
    else if (rc.subcommand == "attmaps") run_attmaps(rc, out);
    else if (rc.subcommand == "claim") run_claim(rc, out);
    else if (rc.subcommand == "lemmas") run_lemmas(rc, out);
  } catch (const Error& e) {
    err << "selind: " << error_kind_name(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "selind: " << e.what() << '\n';
    return kUnexpected;
  }
  return kOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace selind::cli
