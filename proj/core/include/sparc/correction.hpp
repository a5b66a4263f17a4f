#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sparc/attribution.hpp"
#include "sparc/metrics.hpp"
#include "sparc/pruning.hpp"

namespace sparc {

// How many tokens to greedy-decode past each prompt before scoring.
inline constexpr int kProbeContinuationTokens = 50;

// A behavior to detect: decode a continuation for each prompt, score it with
// the named metric, and apply the trigger rule (value <= / >= threshold).
struct BehaviorProbe {
  std::string name;
  std::string metric = "rur";   // "rur", "toxicity", or "custom"
  double threshold = 0.5;
  std::string direction = "le";  // "le" or "ge"
  std::vector<std::vector<int>> prompts;

  bool triggers(double value) const;
  void validate() const;
};

// Scores a decoded continuation (prompt tokens excluded); used when
// probe.metric == "custom".
using ContinuationScorer = std::function<double(const std::vector<int>& continuation)>;

// JSON file {name, metric, threshold, direction, prompts: [...]}.
// Prompts may be strings (tokenized against vocab) or token-id arrays.
BehaviorProbe load_probe(const std::string& path, const Vocabulary& vocab);
void save_probe(const BehaviorProbe& probe, const Vocabulary& vocab, const std::string& path);

// Per-prompt metric values over greedy continuations of
// kProbeContinuationTokens new tokens each.
std::vector<double> probe_values(const Model& model, const BehaviorProbe& probe,
                                 const ToxicityScorer& tox = {},
                                 const ContinuationScorer& custom = {}, int threads = 0);

// Mean of probe_values.
double probe_metric(const Model& model, const BehaviorProbe& probe,
                    const ToxicityScorer& tox = {}, const ContinuationScorer& custom = {},
                    int threads = 0);

// Keeps the candidates whose continuation satisfies the trigger rule, in
// candidate order, at most max_n of them. Errors if none qualify.
ReferenceSet build_reference_set(const Model& model,
                                 const std::vector<std::vector<int>>& candidates,
                                 const BehaviorProbe& probe, size_t max_n,
                                 const ToxicityScorer& tox = {},
                                 const ContinuationScorer& custom = {}, int threads = 0);

// Signed per-component difference (general minus undesired) over the
// intersection of the two domains.
struct DifferentialMap {
  RelevanceMap map;
  std::string general_id;
  std::string undesired_id;
};

// Both maps must share a granularity and overlap in at least one layer of
// matching shape. Antisymmetric: swapping the arguments negates every score.
DifferentialMap differential_scores(const RelevanceMap& general, const RelevanceMap& undesired);

// Zeroes the q components with the most negative differential scores
// (ascending score, component index breaks ties). q = 0 is a no-op.
std::pair<Model, PruneMask> correct_model(const Model& model, const DifferentialMap& diff,
                                          PruneGranularity granularity, long long q);

struct CorrectionReport {
  long long q = 0;
  std::string granularity;
  double metric_before = 0.0;
  double metric_after = 0.0;
  double ppl_before = 0.0;
  double ppl_after = 0.0;
  std::string mask_path;
};

std::string correction_report_json(const CorrectionReport& report);

struct CorrectionOutcome {
  Model model;
  PruneMask mask;
  CorrectionReport report;
};

// correct_model plus before/after probe metric and perplexity. The perplexity
// corpus id must differ from both reference-set ids so the guard is measured
// on held-out text.
CorrectionOutcome run_correction(const Model& model, const DifferentialMap& diff,
                                 PruneGranularity granularity, long long q,
                                 const BehaviorProbe& probe, const Corpus& ppl_corpus,
                                 const ToxicityScorer& tox = {},
                                 const ContinuationScorer& custom = {}, int threads = 0);

}  // namespace sparc
