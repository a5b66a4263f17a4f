#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sparc/common.hpp"
#include "sparc/forward.hpp"
#include "sparc/model.hpp"

namespace sparc {

enum class Granularity { Weight, Neuron, Head };

std::string granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& name);

// Scores over a homogeneous component domain, stored per layer:
//   Weight: full (out x in) matrix per linear layer
//   Neuron: (rows x 1) column per linear layer (row i = output unit i)
//   Head:   (n_heads x 1) per attention scope "blocks.<i>.attn"
// Component index order = layers in listed order, row-major within a layer.
struct RelevanceMap {
  Granularity granularity = Granularity::Weight;
  std::vector<std::string> layers;
  std::unordered_map<std::string, Mat> scores;

  // provenance
  std::string scorer;
  std::string refset_id;
  int n_ref = 0;
  std::vector<std::string> notes;

  Mat& at(const std::string& layer);
  const Mat& at(const std::string& layer) const;
  long long component_count() const;
  void check_finite() const;
};

struct ReferenceSet {
  std::string id;
  std::vector<std::vector<int>> sequences;
  std::string tag = "general";     // "general" or "behavior:<name>"
  std::string selection_rule;      // informative: "<metric> <=|>= <threshold>"
};

// Which logit a relevance/gradient pass starts from.
struct TargetRule {
  enum class Kind { GreedyLast, GoldAt } kind = Kind::GreedyLast;
  int position = -1;  // GoldAt only
  int token = -1;     // GoldAt only
};

struct Target {
  int position;
  int token;
};

// GreedyLast: final position, argmax token (ties -> lowest id).
Target resolve_target(const Mat& logits, const TargetRule& rule);

// Per-layer relevance matrices from one backward relevance sweep.
struct LrpResult {
  std::vector<std::string> linear_names;         // block order, then lm_head
  std::unordered_map<std::string, Mat> rel_in;   // tokens x in_dim
  std::unordered_map<std::string, Mat> rel_out;  // tokens x out_dim
  std::unordered_map<std::string, Vec> head_share;  // "blocks.<i>.attn" -> n_heads
  Mat embedding_relevance;  // tokens x d_model, relevance reaching the embeddings
  double init_value = 0.0;  // the target logit the sweep started from
};

// Epsilon-stabilized relevance propagation. The output relevance starts at the
// target logit's value; each linear layer redistributes proportionally to its
// input contributions with the stabilized denominator z + eps*sign(z),
// sign(0) = 1. ReLU passes relevance through active units; normalization
// layers propagate through the affine path with statistics held constant;
// attention routes through the value path with probabilities held constant
// (q/k projections therefore carry zero relevance, recorded as such).
LrpResult lrp_backward(const Model& model, const ForwardTape& tape, Target target, double epsilon);

// R_w for every weight element of the layers in scope (position-summed,
// signed). scope entries must be prunable linear layers; empty = all prunable
// without lm_head.
RelevanceMap lrp_weight_relevance(const Model& model, const ForwardTape& tape, Target target,
                                  double epsilon, const std::vector<std::string>& scope = {});

// Per-head relevance entering each head's slice of the attn.o input.
RelevanceMap head_relevance(const Model& model, const ForwardTape& tape, Target target,
                            double epsilon);

// |W_ij| * ||X_j||_2 with column norms over all tokens of all sequences;
// forward passes only. Head granularity is a GranularityError by construction.
RelevanceMap wanda_scores(const Model& model, const ReferenceSet& refset,
                          const std::vector<std::string>& scope = {});

RelevanceMap magnitude_scores(const Model& model, const std::vector<std::string>& scope = {});

// Mean |post-activation| per output unit over all tokens and sequences
// (neuron granularity by definition).
RelevanceMap activation_scores(const Model& model, const ReferenceSet& refset,
                               const std::vector<std::string>& scope = {});

// Eq-style mean over per-sample maps with a fixed reduction order: each
// component's addends are value-sorted before summation, so any permutation of
// the samples yields a bit-identical result. magnitude=true takes absolute
// values per sample before the mean (ranking use); false keeps signs
// (differential use).
RelevanceMap aggregate_relevance(const std::vector<RelevanceMap>& per_sample, bool magnitude);

struct ConcentrationResult {
  long long count = 0;
  bool degenerate = false;  // all scores equal; count defined as 0
};

// Min-max normalize all scores to [0,1], count entries strictly above the
// threshold.
ConcentrationResult score_concentration(const RelevanceMap& map, double threshold);

// One-stop scorer dispatch used by the CLI and the experiment drivers.
struct ScorerConfig {
  std::string method = "lrp";  // lrp | wanda | gradient | magnitude | activation | random
  Granularity granularity = Granularity::Weight;
  double epsilon = 1e-6;
  TargetRule target;
  bool include_lm_head = false;
  std::vector<std::string> scope;  // empty = all prunable per include_lm_head
  bool magnitude_aggregation = true;
  uint64_t seed = 0;  // random scorer only
  int threads = 0;
};

// Runs the configured scorer over the reference set and aggregates. targets,
// when non-empty, overrides the target rule per sequence (task-conditioned
// scoring); its length must match the sequence count.
RelevanceMap compute_scores(const Model& model, const ReferenceSet& refset,
                            const ScorerConfig& config, const std::vector<Target>& targets = {});

// Binary relevance-map file: fixed header with the granularity and layer
// index table, then a little-endian f64 score blob in component-index order.
void save_relevance_map(const RelevanceMap& map, const std::string& path,
                        const Provenance& provenance);
RelevanceMap load_relevance_map(const std::string& path);

// CSV export: one "layer,row,col,score" row per component (col = -1 for
// neurons, -2 for heads), preceded by a provenance comment line.
void save_relevance_csv(const RelevanceMap& map, const std::string& path,
                        const Provenance& provenance);

}  // namespace sparc
