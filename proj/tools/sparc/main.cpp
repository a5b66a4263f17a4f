// sparc: attribution-guided pruning toolkit for a built-in toy transformer.
//
// The subcommands chain into full experiment pipelines:
//   init -> train -> score -> prune / curve / discover / correct -> eval-*
// Every artifact embeds provenance (tool version, seed, config hash over the
// resolved settings), and nothing here writes timestamps, so re-running a
// command with identical flags reproduces every output byte for byte.
//
// Exit codes: 0 success, 1 usage error (bad flags or flag values), 2 runtime
// error (IO, shape, eval failures from the library).

#include "sparc/attribution.hpp"
#include "sparc/checkpoint.hpp"
#include "sparc/circuits.hpp"
#include "sparc/common.hpp"
#include "sparc/correction.hpp"
#include "sparc/metrics.hpp"
#include "sparc/model.hpp"
#include "sparc/pruning.hpp"
#include "sparc/tasks.hpp"
#include "sparc/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace {

using nlohmann::ordered_json;
using namespace sparc;

// ---- shared plumbing -------------------------------------------------------

Provenance provenance_for(uint64_t seed, const ordered_json& config,
                          std::vector<std::string> notes = {}) {
  Provenance p;
  p.seed = seed;
  p.config_hash = hex64(fnv1a(config.dump()));
  p.notes = std::move(notes);
  return p;
}

ordered_json provenance_object(const Provenance& p) {
  return ordered_json::parse(provenance_json(p));
}

void emit_report(const ordered_json& report, const std::string& out_path) {
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path);
    out << text;
    if (!out) throw IoError("failed writing " + out_path);
  }
}

int effective_threads(int threads, bool deterministic) {
  return deterministic ? 1 : threads;
}

void ensure_output_is_not_input(const std::string& model_dir, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(out_dir, ec) && fs::equivalent(model_dir, out_dir, ec)) {
    throw CLI::ValidationError("--out", "refuses to overwrite the input checkpoint " + model_dir);
  }
}

Vocabulary load_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(words);
}

ReferenceSet refset_from_corpus(const Corpus& corpus, const std::string& tag) {
  ReferenceSet r;
  r.id = corpus.id;
  r.sequences = corpus.sequences;
  r.tag = tag;
  return r;
}

// One "position token" pair per line, aligned with the refset sequences.
std::vector<Target> load_targets_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open targets file " + path);
  std::vector<Target> targets;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream iss(line);
    Target t{};
    if (!(iss >> t.position >> t.token)) {
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 'position token'");
    }
    targets.push_back(t);
  }
  return targets;
}

// Scope spec: "all" (every prunable layer), or a comma list of shorthands
// (mlp, fc1, fc2, attn, attn.q/k/v/o expand across blocks; lm_head; anything
// else is taken as a full tensor name).
std::vector<std::string> parse_scope(const Model& model, const std::string& spec) {
  if (spec.empty() || spec == "all") return {};
  std::vector<std::string> out;
  auto add = [&](const std::string& name) {
    for (const auto& existing : out) {
      if (existing == name) return;
    }
    out.push_back(name);
  };
  std::istringstream iss(spec);
  std::string item;
  while (std::getline(iss, item, ',')) {
    if (item.empty()) continue;
    const int blocks = model.config.n_layers;
    if (item == "mlp") {
      for (int b = 0; b < blocks; ++b) add(fc1_name(b)), add(fc2_name(b));
    } else if (item == "fc1") {
      for (int b = 0; b < blocks; ++b) add(fc1_name(b));
    } else if (item == "fc2") {
      for (int b = 0; b < blocks; ++b) add(fc2_name(b));
    } else if (item == "attn") {
      for (int b = 0; b < blocks; ++b) {
        add(attn_q_name(b)), add(attn_k_name(b)), add(attn_v_name(b)), add(attn_o_name(b));
      }
    } else if (item == "attn.q" || item == "attn.k" || item == "attn.v" || item == "attn.o") {
      for (int b = 0; b < blocks; ++b) {
        if (item == "attn.q") add(attn_q_name(b));
        if (item == "attn.k") add(attn_k_name(b));
        if (item == "attn.v") add(attn_v_name(b));
        if (item == "attn.o") add(attn_o_name(b));
      }
    } else {
      add(item);
    }
  }
  return out;
}

Granularity scorer_granularity_for(PruneGranularity g) {
  switch (g) {
    case PruneGranularity::StructuredNeuron: return Granularity::Neuron;
    case PruneGranularity::StructuredHead: return Granularity::Head;
    default: return Granularity::Weight;
  }
}

ToxicityScorer toxicity_from_flags(const std::string& lexicon_path,
                                   const std::string& endpoint) {
  ToxicityScorer tox;
  if (!endpoint.empty()) {
    tox.kind = ToxicityScorer::Kind::Remote;
    tox.endpoint = endpoint;
    return tox;
  }
  if (!lexicon_path.empty()) {
    std::ifstream in(lexicon_path);
    if (!in) throw IoError("cannot open lexicon file " + lexicon_path);
    std::string word;
    while (in >> word) tox.lexicon.push_back(word);
  }
  return tox;
}

// IOI prompts plus gold (answer position, answer token) targets for
// task-conditioned attribution.
struct IoiScoringData {
  std::vector<IoiExample> examples;
  ReferenceSet refset;
  std::vector<Target> targets;
};

IoiScoringData make_ioi_scoring_data(const Vocabulary& vocab, uint64_t seed, int n) {
  IoiScoringData data;
  data.examples = generate_ioi(seed, n, vocab);
  data.refset.id = "ioi-" + std::to_string(seed) + "-" + std::to_string(n);
  data.refset.tag = "task:ioi";
  data.refset.selection_rule = "generated";
  for (const auto& ex : data.examples) {
    data.refset.sequences.push_back(ex.tokens);
    data.targets.push_back(Target{ex.answer_position, ex.indirect_object_id});
  }
  return data;
}

const CLI::Validator UnitRate{
    [](std::string& s) -> std::string {
      double v = 0.0;
      try {
        v = std::stod(s);
      } catch (...) {
        return "not a number: " + s;
      }
      if (v < 0.0 || v >= 1.0) return "must lie in [0, 1): " + s;
      return {};
    },
    "FLOAT in [0,1)"};

const CLI::Validator UnitInterval{
    [](std::string& s) -> std::string {
      double v = 0.0;
      try {
        v = std::stod(s);
      } catch (...) {
        return "not a number: " + s;
      }
      if (v < 0.0 || v > 1.0) return "must lie in [0, 1]: " + s;
      return {};
    },
    "FLOAT in [0,1]"};

// ---- init ------------------------------------------------------------------

struct InitOpts {
  std::string out;
  std::string vocab_path;
  uint64_t seed = 7;
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq = 64;
  bool tie_embeddings = false;
  std::string report_out;
};

void cmd_init(const InitOpts& o) {
  const Vocabulary vocab =
      o.vocab_path.empty() ? builtin_toy_vocabulary() : load_vocab_file(o.vocab_path);
  ModelConfig cfg;
  cfg.n_layers = o.n_layers;
  cfg.d_model = o.d_model;
  cfg.n_heads = o.n_heads;
  cfg.d_ff = o.d_ff;
  cfg.max_seq_len = o.max_seq;
  cfg.vocab_size = vocab.size();
  cfg.tie_embeddings = o.tie_embeddings;

  ordered_json config{{"command", "init"},
                      {"seed", o.seed},
                      {"n_layers", cfg.n_layers},
                      {"d_model", cfg.d_model},
                      {"n_heads", cfg.n_heads},
                      {"d_ff", cfg.d_ff},
                      {"max_seq_len", cfg.max_seq_len},
                      {"vocab", o.vocab_path.empty() ? "builtin" : o.vocab_path},
                      {"vocab_size", cfg.vocab_size},
                      {"tie_embeddings", cfg.tie_embeddings}};
  const Provenance prov = provenance_for(o.seed, config);

  const Model model = init_model(cfg, vocab, o.seed);
  save_checkpoint(model, o.out, prov);

  long long params = 0;
  for (const auto& name : model.tensor_names) {
    const Mat& t = model.tensor(name);
    params += static_cast<long long>(t.rows()) * t.cols();
  }
  ordered_json report{{"command", "init"},
                      {"checkpoint", o.out},
                      {"parameters", params},
                      {"prunable_weights", model.prunable_weight_count(true)},
                      {"checksum", hex64(model.checksum())},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
  std::string model_dir;
  std::string out;
  std::string task = "ioi";
  uint64_t seed = 1;
  int steps = 2000;
  int batch_size = 16;
  double lr = 1e-3;
  int examples = 2048;
  int eval_examples = 512;
  int span = 6;
  int general = 128;
  std::string loss_log_path;
  std::string report_out;
};

void write_loss_log(const std::vector<std::pair<int, double>>& log, const std::string& path,
                    const Provenance& prov) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "# provenance " << provenance_json(prov) << "\n";
  out << "step,loss\n";
  char buf[32];
  for (const auto& [step, loss] : log) {
    std::snprintf(buf, sizeof(buf), "%.17g", loss);
    out << step << ',' << buf << '\n';
  }
}

void cmd_train(const TrainOpts& o) {
  ensure_output_is_not_input(o.model_dir, o.out);
  const Model model = load_checkpoint(o.model_dir);
  const Vocabulary& vocab = model.vocab;

  ordered_json config{{"command", "train"},   {"model", o.model_dir},
                      {"task", o.task},       {"seed", o.seed},
                      {"steps", o.steps},     {"batch_size", o.batch_size},
                      {"lr", o.lr},           {"examples", o.examples},
                      {"eval_examples", o.eval_examples}, {"span", o.span},
                      {"general", o.general}, {"out", o.out}};
  const Provenance prov = provenance_for(o.seed, config, {"trained: " + o.task});

  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch_size;
  tc.steps = o.steps;
  tc.seed = o.seed;

  std::vector<std::pair<int, double>> loss_log;
  ordered_json report{{"command", "train"}, {"task", o.task}, {"checkpoint", o.out}};

  if (o.task == "ioi") {
    // one deduplicated pool, split so train and eval never share an example
    const auto pool = generate_ioi(o.seed, o.examples + o.eval_examples, vocab);
    const std::vector<IoiExample> train_set(pool.begin(), pool.begin() + o.examples);
    const std::vector<IoiExample> eval_set(pool.begin() + o.examples, pool.end());
    const Model trained = train(model, ioi_train_examples(train_set), tc, &loss_log);
    save_checkpoint(trained, o.out, prov);
    report["final_loss"] = loss_log.empty() ? 0.0 : loss_log.back().second;
    report["train_accuracy"] = task_accuracy(trained, train_set);
    report["eval_accuracy"] = task_accuracy(trained, eval_set);
  } else if (o.task == "copy") {
    const auto pool = generate_copy_examples(o.seed, o.examples + o.eval_examples, vocab, o.span);
    const std::vector<TrainExample> train_set(pool.begin(), pool.begin() + o.examples);
    const std::vector<TrainExample> eval_set(pool.begin() + o.examples, pool.end());
    const Model trained = train(model, train_set, tc, &loss_log);
    save_checkpoint(trained, o.out, prov);
    report["final_loss"] = loss_log.empty() ? 0.0 : loss_log.back().second;
    report["eval_accuracy"] = masked_next_token_accuracy(trained, eval_set);
  } else if (o.task == "repetition") {
    const RepetitionData data = generate_repetition_data(o.seed, o.examples, o.general, vocab);
    const Model trained = train(model, data.train, tc, &loss_log);
    save_checkpoint(trained, o.out, prov);

    // materialize the correction-pipeline inputs next to the checkpoint:
    // trigger candidates, a general-attribution corpus, and a held-out
    // perplexity corpus (disjoint halves of the general pool)
    const std::string trigger_path = o.out + "/triggers.txt";
    std::ofstream triggers(trigger_path, std::ios::trunc);
    if (!triggers) throw IoError("cannot write " + trigger_path);
    for (const auto& prompt : data.trigger_prompts) triggers << prompt << "\n";
    triggers.close();

    const size_t half = data.general.size() / 2;
    Corpus general{"repetition-general-" + std::to_string(o.seed),
                   {data.general.begin(), data.general.begin() + half}};
    Corpus heldout{"repetition-heldout-" + std::to_string(o.seed),
                   {data.general.begin() + half, data.general.end()}};
    save_corpus(general, vocab, o.out + "/general.txt");
    save_corpus(heldout, vocab, o.out + "/heldout.txt");

    double rur_sum = 0.0;
    for (const auto& prompt : data.trigger_prompts) {
      const std::vector<int> ids = vocab.tokenize(prompt);
      const std::vector<int> full = generate_greedy(trained, ids, kProbeContinuationTokens);
      rur_sum += rur({full.begin() + static_cast<long>(ids.size()), full.end()});
    }
    report["final_loss"] = loss_log.empty() ? 0.0 : loss_log.back().second;
    report["heldout_perplexity"] = perplexity(trained, heldout);
    report["trigger_rur"] = rur_sum / static_cast<double>(data.trigger_prompts.size());
    report["triggers"] = trigger_path;
    report["general_corpus"] = o.out + "/general.txt";
    report["heldout_corpus"] = o.out + "/heldout.txt";
  } else {
    throw CLI::ValidationError("--task", "unknown task " + o.task);
  }

  if (!o.loss_log_path.empty()) write_loss_log(loss_log, o.loss_log_path, prov);
  report["provenance"] = provenance_object(prov);
  emit_report(report, o.report_out);
}

// ---- score -----------------------------------------------------------------

struct ScoreOpts {
  std::string model_dir;
  std::string refset_path;
  std::string refset_id;
  std::string refset_tag = "general";
  std::string targets_path;
  std::string task;
  int task_examples = 256;
  uint64_t task_seed = 97;
  std::string method = "lrp";
  std::string granularity = "weight";
  double epsilon = 1e-6;
  std::string scope;
  bool include_lm_head = false;
  bool signed_scores = false;
  uint64_t seed = 0;
  int threads = 0;
  bool deterministic = false;
  std::string out;
  std::string csv_out;
  std::string report_out;
};

void cmd_score(const ScoreOpts& o) {
  const Model model = load_checkpoint(o.model_dir);

  ReferenceSet refset;
  std::vector<Target> targets;
  if (!o.task.empty()) {
    IoiScoringData data = make_ioi_scoring_data(model.vocab, o.task_seed, o.task_examples);
    refset = std::move(data.refset);
    targets = std::move(data.targets);
  } else {
    const Corpus corpus = load_corpus(o.refset_path, model.vocab, o.refset_id);
    refset = refset_from_corpus(corpus, o.refset_tag);
    if (!o.targets_path.empty()) targets = load_targets_file(o.targets_path);
  }

  ScorerConfig sc;
  sc.method = o.method;
  sc.granularity = granularity_from_name(o.granularity);
  sc.epsilon = o.epsilon;
  sc.include_lm_head = o.include_lm_head;
  sc.scope = parse_scope(model, o.scope);
  sc.magnitude_aggregation = !o.signed_scores;
  sc.seed = o.seed;
  sc.threads = effective_threads(o.threads, o.deterministic);

  ordered_json config{{"command", "score"},
                      {"model", o.model_dir},
                      {"refset", o.task.empty() ? o.refset_path : refset.id},
                      {"refset_tag", refset.tag},
                      {"targets", o.targets_path},
                      {"method", sc.method},
                      {"granularity", o.granularity},
                      {"epsilon", sc.epsilon},
                      {"scope", o.scope},
                      {"include_lm_head", sc.include_lm_head},
                      {"signed", o.signed_scores},
                      {"seed", o.seed}};
  const Provenance prov = provenance_for(o.seed, config);

  const RelevanceMap map = compute_scores(model, refset, sc, targets);
  save_relevance_map(map, o.out, prov);
  if (!o.csv_out.empty()) save_relevance_csv(map, o.csv_out, prov);

  ordered_json report{{"command", "score"},
                      {"out", o.out},
                      {"method", map.scorer},
                      {"granularity", granularity_name(map.granularity)},
                      {"components", map.component_count()},
                      {"refset_id", map.refset_id},
                      {"refset_sequences", map.n_ref},
                      {"notes", map.notes},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- concentration ---------------------------------------------------------

struct ConcentrationOpts {
  std::string map_path;
  double threshold = 0.5;
  std::string report_out;
};

void cmd_concentration(const ConcentrationOpts& o) {
  const RelevanceMap map = load_relevance_map(o.map_path);
  const ConcentrationResult result = score_concentration(map, o.threshold);
  if (result.degenerate) {
    std::cerr << "warning: all scores equal; normalization is degenerate, count defined as 0\n";
  }

  ordered_json config{{"command", "concentration"},
                      {"map", o.map_path},
                      {"threshold", o.threshold}};
  const Provenance prov = provenance_for(0, config);
  ordered_json report{{"command", "concentration"},
                      {"map", o.map_path},
                      {"scorer", map.scorer},
                      {"threshold", o.threshold},
                      {"count", result.count},
                      {"components", map.component_count()},
                      {"degenerate", result.degenerate},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- prune -----------------------------------------------------------------

struct PruneOpts {
  std::string model_dir;
  std::string map_path;
  std::string granularity = "global";
  double rate = -1.0;
  long long count = -1;
  int partitions = 0;
  std::string out;
  std::string mask_path;
  std::string report_out;
};

void cmd_prune(const PruneOpts& o) {
  ensure_output_is_not_input(o.model_dir, o.out);
  if (o.rate < 0.0 && o.count < 0) {
    throw CLI::ValidationError("--rate", "one of --rate / --count is required");
  }
  const PruneGranularity granularity = prune_granularity_from_name(o.granularity);
  if (o.partitions > 0 && granularity != PruneGranularity::GlobalUnstructured) {
    throw CLI::ValidationError("--partitions", "partitioned selection is global-only");
  }
  if (o.partitions > 0 && o.rate < 0.0) {
    throw CLI::ValidationError("--partitions", "partitioned selection takes --rate");
  }

  const Model model = load_checkpoint(o.model_dir);
  const RelevanceMap map = load_relevance_map(o.map_path);

  ordered_json config{{"command", "prune"},  {"model", o.model_dir},
                      {"map", o.map_path},   {"granularity", o.granularity},
                      {"rate", o.rate},      {"count", o.count},
                      {"partitions", o.partitions}, {"out", o.out}};
  const Provenance prov = provenance_for(0, config);

  PruneMask mask;
  if (o.partitions > 0) {
    mask = global_partitioned_select(map, o.rate, o.partitions);
  } else if (o.rate >= 0.0) {
    mask = select_prune_set(map, granularity, PruneAmount::of_rate(o.rate));
  } else {
    mask = select_prune_set(map, granularity, PruneAmount::of_count(o.count));
  }

  const Model pruned = apply_mask(model, mask);
  save_checkpoint(pruned, o.out, prov);
  const std::string mask_path = o.mask_path.empty() ? o.out + "/mask.csv" : o.mask_path;
  save_mask(mask, mask_path, prov);

  const SparsityReport sr = sparsity_report(pruned);
  ordered_json per_layer = ordered_json::array();
  for (const auto& stat : sr.per_layer) {
    per_layer.push_back(ordered_json{{"layer", stat.layer},
                                     {"zeros", stat.zeros},
                                     {"params", stat.params}});
  }
  ordered_json report{{"command", "prune"},
                      {"checkpoint", o.out},
                      {"mask", mask_path},
                      {"granularity", prune_granularity_name(mask.granularity)},
                      {"requested", mask.requested},
                      {"achieved", mask.achieved},
                      {"mask_entries", mask.entries.size()},
                      {"model_sparsity", sr.total()},
                      {"per_layer", per_layer},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- curve -----------------------------------------------------------------

struct CurveOpts {
  std::string model_dir;
  std::string method = "lrp";
  std::string granularity = "global";
  std::vector<double> rates;
  int task_examples = 256;
  uint64_t task_seed = 97;
  double epsilon = 1e-6;
  std::string scope = "mlp";
  bool include_lm_head = false;
  uint64_t seed = 0;
  int threads = 0;
  bool deterministic = false;
  std::string out;
  std::string report_out;
};

void cmd_curve(const CurveOpts& o) {
  for (double r : o.rates) {
    if (r < 0.0 || r >= 1.0) throw CLI::ValidationError("--rates", "rates must lie in [0, 1)");
  }
  const Model model = load_checkpoint(o.model_dir);
  const PruneGranularity granularity = prune_granularity_from_name(o.granularity);
  const IoiScoringData data = make_ioi_scoring_data(model.vocab, o.task_seed, o.task_examples);

  ScorerConfig sc;
  sc.method = o.method;
  sc.granularity = scorer_granularity_for(granularity);
  sc.epsilon = o.epsilon;
  sc.scope = parse_scope(model, o.scope);
  sc.include_lm_head = o.include_lm_head;
  sc.seed = o.seed;
  const int threads = effective_threads(o.threads, o.deterministic);
  sc.threads = threads;

  ordered_json config{{"command", "curve"},
                      {"model", o.model_dir},
                      {"method", o.method},
                      {"granularity", o.granularity},
                      {"rates", o.rates},
                      {"task_examples", o.task_examples},
                      {"task_seed", o.task_seed},
                      {"epsilon", o.epsilon},
                      {"scope", o.scope},
                      {"include_lm_head", o.include_lm_head},
                      {"seed", o.seed}};
  const Provenance prov = provenance_for(o.seed, config);

  const SparsityCurve curve = performance_sparsity_curve(model, sc, granularity, o.rates,
                                                         data.examples, data.refset,
                                                         data.targets, threads);
  save_curve_csv(curve, o.out, prov);

  ordered_json points = ordered_json::array();
  for (const auto& [sparsity, metric] : curve.points) {
    points.push_back(ordered_json{{"sparsity", sparsity}, {"metric", metric}});
  }
  ordered_json report{{"command", "curve"},
                      {"out", o.out},
                      {"scorer", curve.scorer},
                      {"granularity", curve.granularity},
                      {"task", "ioi"},
                      {"baseline", task_accuracy(model, data.examples)},
                      {"points", points},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- discover --------------------------------------------------------------

struct DiscoverOpts {
  std::string model_dir;
  std::string map_path;
  std::string granularity = "global";
  double tau = -1.0;
  double tau_frac = -1.0;
  int task_examples = 256;
  uint64_t task_seed = 97;
  std::string mask_out;
  std::string report_out;
};

void cmd_discover(const DiscoverOpts& o) {
  if (o.tau < 0.0 && o.tau_frac < 0.0) {
    throw CLI::ValidationError("--tau", "one of --tau / --tau-frac is required");
  }
  const Model model = load_checkpoint(o.model_dir);
  const RelevanceMap map = load_relevance_map(o.map_path);
  const PruneGranularity granularity = prune_granularity_from_name(o.granularity);
  const IoiScoringData data = make_ioi_scoring_data(model.vocab, o.task_seed, o.task_examples);

  const double baseline = task_accuracy(model, data.examples);
  const double tau = o.tau >= 0.0 ? o.tau : o.tau_frac * baseline;

  ordered_json config{{"command", "discover"},
                      {"model", o.model_dir},
                      {"map", o.map_path},
                      {"granularity", o.granularity},
                      {"tau", tau},
                      {"task_examples", o.task_examples},
                      {"task_seed", o.task_seed}};
  const Provenance prov = provenance_for(0, config);

  const Circuit circuit = discover_circuit(model, map, granularity, data.examples, tau);
  save_mask(circuit.mask, o.mask_out, prov);

  ordered_json report{{"command", "discover"},
                      {"mask", o.mask_out},
                      {"scorer", map.scorer},
                      {"granularity", prune_granularity_name(circuit.mask.granularity)},
                      {"tau", circuit.tau},
                      {"baseline", baseline},
                      {"sparsity", circuit.sparsity},
                      {"metric", circuit.metric},
                      {"pruned_components", circuit.mask.entries.size()},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- correct ---------------------------------------------------------------

struct CorrectOpts {
  std::string model_dir;
  std::string probe_path;
  std::string general_corpus;
  std::string ppl_corpus;
  std::string method = "lrp";
  std::string granularity = "global";
  double epsilon = 1e-6;
  std::string scope = "fc1";
  long long count = 0;
  int max_candidates = 64;
  std::string tox_lexicon;
  std::string tox_endpoint;
  uint64_t seed = 0;
  int threads = 0;
  bool deterministic = false;
  std::string out;
  std::string mask_path;
  std::string report_path;
  std::string report_out;
};

void cmd_correct(const CorrectOpts& o) {
  ensure_output_is_not_input(o.model_dir, o.out);
  const Model model = load_checkpoint(o.model_dir);
  const Vocabulary& vocab = model.vocab;
  const BehaviorProbe probe = load_probe(o.probe_path, vocab);
  const ToxicityScorer tox = toxicity_from_flags(o.tox_lexicon, o.tox_endpoint);
  const int threads = effective_threads(o.threads, o.deterministic);

  ordered_json config{{"command", "correct"},
                      {"model", o.model_dir},
                      {"probe", o.probe_path},
                      {"general_corpus", o.general_corpus},
                      {"ppl_corpus", o.ppl_corpus},
                      {"method", o.method},
                      {"granularity", o.granularity},
                      {"epsilon", o.epsilon},
                      {"scope", o.scope},
                      {"count", o.count},
                      {"max_candidates", o.max_candidates},
                      {"seed", o.seed},
                      {"out", o.out}};
  const Provenance prov = provenance_for(o.seed, config,
                                         {"differential attribution: signed general minus "
                                          "behavior relevance"});

  const ReferenceSet behavior = build_reference_set(
      model, probe.prompts, probe, static_cast<size_t>(o.max_candidates), tox, {}, threads);
  const ReferenceSet general =
      refset_from_corpus(load_corpus(o.general_corpus, vocab), "general");

  const PruneGranularity granularity = prune_granularity_from_name(o.granularity);
  ScorerConfig sc;
  sc.method = o.method;
  sc.granularity = scorer_granularity_for(granularity);
  sc.epsilon = o.epsilon;
  sc.scope = parse_scope(model, o.scope);
  sc.magnitude_aggregation = false;  // Eq-8-style signed difference
  sc.seed = o.seed;
  sc.threads = threads;

  const RelevanceMap general_map = compute_scores(model, general, sc);
  const RelevanceMap behavior_map = compute_scores(model, behavior, sc);
  const DifferentialMap diff = differential_scores(general_map, behavior_map);

  // the report's probe metric runs on the prompts that actually trigger
  BehaviorProbe eval_probe = probe;
  eval_probe.prompts = behavior.sequences;

  const Corpus ppl_corpus = load_corpus(o.ppl_corpus, vocab);
  CorrectionOutcome outcome = run_correction(model, diff, granularity, o.count, eval_probe,
                                             ppl_corpus, tox, {}, threads);

  save_checkpoint(outcome.model, o.out, prov);
  const std::string mask_path = o.mask_path.empty() ? o.out + "/mask.csv" : o.mask_path;
  save_mask(outcome.mask, mask_path, prov);
  outcome.report.mask_path = mask_path;

  const std::string report_path =
      o.report_path.empty() ? o.out + "/report.json" : o.report_path;
  {
    std::ofstream rep(report_path, std::ios::trunc);
    if (!rep) throw IoError("cannot write " + report_path);
    rep << correction_report_json(outcome.report);
  }

  ordered_json report = ordered_json::parse(correction_report_json(outcome.report));
  report["command"] = "correct";
  report["checkpoint"] = o.out;
  report["report"] = report_path;
  report["behavior_refset"] = ordered_json{{"id", behavior.id},
                                           {"kept", behavior.sequences.size()},
                                           {"rule", behavior.selection_rule}};
  report["provenance"] = provenance_object(prov);
  emit_report(report, o.report_out);
}

// ---- eval-ppl / eval-task / gen ---------------------------------------------

struct EvalPplOpts {
  std::string model_dir;
  std::string corpus_path;
  std::string report_out;
};

void cmd_eval_ppl(const EvalPplOpts& o) {
  const Model model = load_checkpoint(o.model_dir);
  const Corpus corpus = load_corpus(o.corpus_path, model.vocab);
  ordered_json config{{"command", "eval-ppl"}, {"model", o.model_dir}, {"corpus", o.corpus_path}};
  const Provenance prov = provenance_for(0, config);
  ordered_json report{{"command", "eval-ppl"},
                      {"corpus", corpus.id},
                      {"sequences", corpus.sequences.size()},
                      {"perplexity", perplexity(model, corpus)},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

struct EvalTaskOpts {
  std::string model_dir;
  std::string task = "ioi";
  int task_examples = 256;
  uint64_t task_seed = 97;
  std::string report_out;
};

void cmd_eval_task(const EvalTaskOpts& o) {
  const Model model = load_checkpoint(o.model_dir);
  const auto examples = generate_ioi(o.task_seed, o.task_examples, model.vocab);
  ordered_json config{{"command", "eval-task"},
                      {"model", o.model_dir},
                      {"task", o.task},
                      {"task_examples", o.task_examples},
                      {"task_seed", o.task_seed}};
  const Provenance prov = provenance_for(o.task_seed, config);
  ordered_json report{{"command", "eval-task"},
                      {"task", o.task},
                      {"examples", examples.size()},
                      {"accuracy", task_accuracy(model, examples)},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

struct GenOpts {
  std::string model_dir;
  std::string prompt;
  std::vector<int> prompt_ids;
  int max_new = 50;
  std::string report_out;
};

void cmd_gen(const GenOpts& o) {
  const Model model = load_checkpoint(o.model_dir);
  const std::vector<int> prompt =
      o.prompt_ids.empty() ? model.vocab.tokenize(o.prompt) : o.prompt_ids;
  const std::vector<int> full = generate_greedy(model, prompt, o.max_new);
  const std::vector<int> continuation(full.begin() + static_cast<long>(prompt.size()),
                                      full.end());
  ordered_json config{{"command", "gen"},
                      {"model", o.model_dir},
                      {"prompt", prompt},
                      {"max_new", o.max_new}};
  const Provenance prov = provenance_for(0, config);
  ordered_json report{{"command", "gen"},
                      {"prompt", model.vocab.detokenize(prompt)},
                      {"text", model.vocab.detokenize(full)},
                      {"tokens", full},
                      {"new_tokens", continuation.size()},
                      {"continuation_rur", rur(continuation)},
                      {"provenance", provenance_object(prov)}};
  emit_report(report, o.report_out);
}

// ---- wiring ----------------------------------------------------------------

void add_thread_flags(CLI::App* sub, int* threads, bool* deterministic) {
  sub->add_option("--threads", *threads,
                  "worker threads (0 = SPARC_THREADS env, then hardware)");
  sub->add_flag("--deterministic", *deterministic,
                "single-threaded fixed-order execution");
}

void build_cli(CLI::App& app) {
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  {
    auto o = std::make_shared<InitOpts>();
    auto* sub = app.add_subcommand("init", "write a freshly initialized checkpoint");
    sub->add_option("--out", o->out, "checkpoint directory")->required();
    sub->add_option("--seed", o->seed, "init seed");
    sub->add_option("--layers", o->n_layers, "transformer blocks")->check(CLI::PositiveNumber);
    sub->add_option("--d-model", o->d_model, "embedding width")->check(CLI::PositiveNumber);
    sub->add_option("--heads", o->n_heads, "attention heads")->check(CLI::PositiveNumber);
    sub->add_option("--d-ff", o->d_ff, "MLP hidden width")->check(CLI::PositiveNumber);
    sub->add_option("--max-seq", o->max_seq, "context length")->check(CLI::PositiveNumber);
    sub->add_option("--vocab", o->vocab_path, "token list, one per line (default: builtin)");
    sub->add_flag("--tie-embeddings", o->tie_embeddings, "lm_head starts as a copy of embed");
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_init(*o); });
  }
  {
    auto o = std::make_shared<TrainOpts>();
    auto* sub = app.add_subcommand("train", "train a toy task and save a new checkpoint");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--out", o->out, "output checkpoint directory")->required();
    sub->add_option("--task", o->task, "ioi | copy | repetition")
        ->check(CLI::IsMember({"ioi", "copy", "repetition"}));
    sub->add_option("--seed", o->seed, "data + optimizer seed");
    sub->add_option("--steps", o->steps, "optimizer steps")->check(CLI::PositiveNumber);
    sub->add_option("--batch", o->batch_size, "batch size")->check(CLI::PositiveNumber);
    sub->add_option("--lr", o->lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--examples", o->examples, "training examples")->check(CLI::PositiveNumber);
    sub->add_option("--eval-examples", o->eval_examples, "held-out examples (ioi/copy)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--span", o->span, "copy-task span length")->check(CLI::PositiveNumber);
    sub->add_option("--general", o->general, "repetition: held-out general sequences")
        ->check(CLI::PositiveNumber);
    sub->add_option("--loss-log", o->loss_log_path, "write step,loss CSV");
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_train(*o); });
  }
  {
    auto o = std::make_shared<ScoreOpts>();
    auto* sub = app.add_subcommand("score", "attribute relevance and save a score map");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    auto* refset = sub->add_option("--refset", o->refset_path,
                                   "reference corpus (one sequence per line)");
    auto* task = sub->add_option("--task", o->task, "generate the refset from a task (ioi)")
                     ->check(CLI::IsMember({"ioi"}));
    refset->excludes(task);
    task->excludes(refset);
    sub->add_option("--refset-id", o->refset_id, "refset id (default: the path)");
    sub->add_option("--refset-tag", o->refset_tag, "general | behavior:<name>");
    sub->add_option("--targets", o->targets_path,
                    "per-sequence 'position token' targets (default: greedy last)");
    sub->add_option("--task-examples", o->task_examples, "task refset size")
        ->check(CLI::PositiveNumber);
    sub->add_option("--task-seed", o->task_seed, "task generation seed");
    sub->add_option("--method", o->method, "lrp | wanda | gradient | magnitude | activation | random")
        ->check(CLI::IsMember({"lrp", "wanda", "gradient", "magnitude", "activation", "random"}));
    sub->add_option("--granularity", o->granularity, "weight | neuron | head")
        ->check(CLI::IsMember({"weight", "neuron", "head"}));
    sub->add_option("--epsilon", o->epsilon, "relevance stabilizer")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--scope", o->scope, "layer scope (all | mlp | fc1 | ... | names)");
    sub->add_flag("--include-lm-head", o->include_lm_head, "score lm_head too");
    sub->add_flag("--signed", o->signed_scores,
                  "aggregate signed per-sample scores (differential use)");
    sub->add_option("--seed", o->seed, "random-scorer seed");
    add_thread_flags(sub, &o->threads, &o->deterministic);
    sub->add_option("--out", o->out, "score map file")->required();
    sub->add_option("--csv", o->csv_out, "also export layer,row,col,score CSV");
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] {
      if (o->task.empty() && o->refset_path.empty()) {
        throw CLI::ValidationError("--refset", "one of --refset / --task is required");
      }
      cmd_score(*o);
    });
  }
  {
    auto o = std::make_shared<ConcentrationOpts>();
    auto* sub = app.add_subcommand("concentration",
                                   "count scores above a normalized threshold");
    sub->add_option("--map", o->map_path, "score map file")->required();
    sub->add_option("--threshold", o->threshold, "normalized threshold")->check(UnitInterval);
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_concentration(*o); });
  }
  {
    auto o = std::make_shared<PruneOpts>();
    auto* sub = app.add_subcommand("prune", "derive a mask from a score map and apply it");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--map", o->map_path, "score map file")->required();
    sub->add_option("--granularity", o->granularity,
                    "row | layer | global | structured-neuron | structured-head")
        ->check(CLI::IsMember({"row", "layer", "global", "structured-neuron", "structured-head",
                               "row-wise-unstructured", "layer-wise-unstructured",
                               "global-unstructured"}));
    auto* rate = sub->add_option("--rate", o->rate, "fraction to prune")->check(UnitRate);
    auto* count = sub->add_option("--count", o->count, "components to prune")
                      ->check(CLI::NonNegativeNumber);
    rate->excludes(count);
    count->excludes(rate);
    sub->add_option("--partitions", o->partitions,
                    "bucketed global selection with this many partitions (0 = exact sort)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--out", o->out, "pruned checkpoint directory")->required();
    sub->add_option("--mask", o->mask_path, "mask CSV (default: <out>/mask.csv)");
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_prune(*o); });
  }
  {
    auto o = std::make_shared<CurveOpts>();
    auto* sub = app.add_subcommand("curve", "performance-sparsity curve on the IOI task");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--method", o->method, "scorer method")
        ->check(CLI::IsMember({"lrp", "wanda", "gradient", "magnitude", "activation", "random"}));
    sub->add_option("--granularity", o->granularity,
                    "row | layer | global | structured-neuron | structured-head")
        ->check(CLI::IsMember({"row", "layer", "global", "structured-neuron", "structured-head"}));
    sub->add_option("--rates", o->rates, "comma-separated sparsity rates, increasing")
        ->required()
        ->delimiter(',');
    sub->add_option("--task-examples", o->task_examples, "IOI evaluation examples")
        ->check(CLI::PositiveNumber);
    sub->add_option("--task-seed", o->task_seed, "IOI generation seed");
    sub->add_option("--epsilon", o->epsilon, "relevance stabilizer")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--scope", o->scope, "layer scope (default mlp: fc1+fc2)");
    sub->add_flag("--include-lm-head", o->include_lm_head, "score lm_head too");
    sub->add_option("--seed", o->seed, "random-scorer seed");
    add_thread_flags(sub, &o->threads, &o->deterministic);
    sub->add_option("--out", o->out, "curve CSV path")->required();
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_curve(*o); });
  }
  {
    auto o = std::make_shared<DiscoverOpts>();
    auto* sub = app.add_subcommand("discover", "maximal circuit above an accuracy threshold");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--map", o->map_path, "score map file")->required();
    sub->add_option("--granularity", o->granularity,
                    "row | layer | global | structured-neuron | structured-head")
        ->check(CLI::IsMember({"row", "layer", "global", "structured-neuron", "structured-head"}));
    auto* tau = sub->add_option("--tau", o->tau, "absolute accuracy threshold")
                    ->check(UnitInterval);
    auto* frac = sub->add_option("--tau-frac", o->tau_frac,
                                 "threshold as a fraction of the unpruned accuracy")
                     ->check(UnitInterval);
    tau->excludes(frac);
    frac->excludes(tau);
    sub->add_option("--task-examples", o->task_examples, "IOI evaluation examples")
        ->check(CLI::PositiveNumber);
    sub->add_option("--task-seed", o->task_seed, "IOI generation seed");
    sub->add_option("--mask", o->mask_out, "pruned-components mask CSV")->required();
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_discover(*o); });
  }
  {
    auto o = std::make_shared<CorrectOpts>();
    auto* sub = app.add_subcommand("correct",
                                   "differential-attribution pruning against a behavior probe");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--probe", o->probe_path, "behavior probe JSON")->required();
    sub->add_option("--general-corpus", o->general_corpus, "general reference corpus")
        ->required();
    sub->add_option("--ppl-corpus", o->ppl_corpus, "held-out perplexity corpus")->required();
    sub->add_option("--method", o->method, "scorer method")
        ->check(CLI::IsMember({"lrp", "wanda", "gradient", "magnitude", "activation", "random"}));
    sub->add_option("--granularity", o->granularity,
                    "global | structured-neuron | structured-head")
        ->check(CLI::IsMember({"global", "structured-neuron", "structured-head"}));
    sub->add_option("--epsilon", o->epsilon, "relevance stabilizer")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--scope", o->scope, "layer scope (default fc1)");
    sub->add_option("--count", o->count, "components to prune")
        ->required()
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--max-candidates", o->max_candidates,
                    "cap on triggering prompts kept for the behavior refset")
        ->check(CLI::PositiveNumber);
    sub->add_option("--tox-lexicon", o->tox_lexicon, "toxicity word list, one per line");
    sub->add_option("--tox-endpoint", o->tox_endpoint, "remote toxicity scorer URL");
    sub->add_option("--seed", o->seed, "scorer seed");
    add_thread_flags(sub, &o->threads, &o->deterministic);
    sub->add_option("--out", o->out, "corrected checkpoint directory")->required();
    sub->add_option("--mask", o->mask_path, "mask CSV (default: <out>/mask.csv)");
    sub->add_option("--report-file", o->report_path,
                    "correction report JSON (default: <out>/report.json)");
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_correct(*o); });
  }
  {
    auto o = std::make_shared<EvalPplOpts>();
    auto* sub = app.add_subcommand("eval-ppl", "perplexity on a corpus");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--corpus", o->corpus_path, "corpus file")->required();
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_eval_ppl(*o); });
  }
  {
    auto o = std::make_shared<EvalTaskOpts>();
    auto* sub = app.add_subcommand("eval-task", "task accuracy on generated examples");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    sub->add_option("--task", o->task, "ioi")->check(CLI::IsMember({"ioi"}));
    sub->add_option("--task-examples", o->task_examples, "examples")
        ->check(CLI::PositiveNumber);
    sub->add_option("--task-seed", o->task_seed, "generation seed");
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] { cmd_eval_task(*o); });
  }
  {
    auto o = std::make_shared<GenOpts>();
    auto* sub = app.add_subcommand("gen", "greedy decode from a prompt");
    sub->add_option("--model", o->model_dir, "input checkpoint")->required();
    auto* text = sub->add_option("--prompt", o->prompt, "prompt text (whitespace tokens)");
    auto* ids = sub->add_option("--prompt-ids", o->prompt_ids, "prompt token ids")
                    ->delimiter(',');
    text->excludes(ids);
    ids->excludes(text);
    sub->add_option("--max-new", o->max_new, "tokens to generate")->check(CLI::PositiveNumber);
    sub->add_option("--report", o->report_out, "also write the stdout report to this file");
    sub->callback([o] {
      if (o->prompt.empty() && o->prompt_ids.empty()) {
        throw CLI::ValidationError("--prompt", "one of --prompt / --prompt-ids is required");
      }
      cmd_gen(*o);
    });
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attribution-guided pruning toolkit"};
  build_cli(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
