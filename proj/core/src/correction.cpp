#include "sparc/correction.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace sparc {
namespace {

using nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

bool BehaviorProbe::triggers(double value) const {
  return direction == "le" ? value <= threshold : value >= threshold;
}

void BehaviorProbe::validate() const {
  if (name.empty()) throw ConfigError("probe name is empty");
  if (metric != "rur" && metric != "toxicity" && metric != "custom") {
    throw ConfigError("unknown probe metric '" + metric + "'");
  }
  if (direction != "le" && direction != "ge") {
    throw ConfigError("probe direction must be 'le' or 'ge', got '" + direction + "'");
  }
  if (metric != "custom" && (threshold < 0.0 || threshold > 1.0)) {
    throw ConfigError("threshold " + format_double(threshold) + " outside the " + metric +
                      " range [0, 1]");
  }
  if (prompts.empty()) throw ConfigError("probe has no prompts");
  for (const auto& p : prompts) {
    if (p.empty()) throw ConfigError("probe contains an empty prompt");
  }
}

BehaviorProbe load_probe(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("malformed probe file " + path + ": " + e.what());
  }
  BehaviorProbe probe;
  try {
    probe.name = j.at("name").get<std::string>();
    probe.metric = j.at("metric").get<std::string>();
    probe.threshold = j.at("threshold").get<double>();
    probe.direction = j.at("direction").get<std::string>();
    for (const auto& entry : j.at("prompts")) {
      if (entry.is_string()) {
        probe.prompts.push_back(vocab.tokenize(entry.get<std::string>()));
      } else {
        probe.prompts.push_back(entry.get<std::vector<int>>());
      }
    }
  } catch (const ordered_json::exception& e) {
    throw IoError("malformed probe file " + path + ": " + e.what());
  }
  probe.validate();
  for (const auto& p : probe.prompts) {
    for (int t : p) {
      if (t < 0 || t >= vocab.size()) throw IoError("probe token id out of range in " + path);
    }
  }
  return probe;
}

void save_probe(const BehaviorProbe& probe, const Vocabulary& vocab, const std::string& path) {
  probe.validate();
  ordered_json j;
  j["name"] = probe.name;
  j["metric"] = probe.metric;
  j["threshold"] = probe.threshold;
  j["direction"] = probe.direction;
  j["prompts"] = ordered_json::array();
  for (const auto& p : probe.prompts) j["prompts"].push_back(vocab.detokenize(p));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

namespace {

double score_continuation(const Model& model, const BehaviorProbe& probe,
                          const std::vector<int>& prompt, const ToxicityScorer& tox,
                          const ContinuationScorer& custom) {
  const std::vector<int> full = generate_greedy(model, prompt, kProbeContinuationTokens);
  const std::vector<int> continuation(full.begin() + static_cast<long>(prompt.size()),
                                      full.end());
  if (probe.metric == "rur") return rur(continuation);
  if (probe.metric == "toxicity") {
    return toxicity_score(model.vocab.detokenize(continuation), tox);
  }
  if (!custom) throw ConfigError("probe metric 'custom' needs a continuation scorer");
  return custom(continuation);
}

}  // namespace

std::vector<double> probe_values(const Model& model, const BehaviorProbe& probe,
                                 const ToxicityScorer& tox, const ContinuationScorer& custom,
                                 int threads) {
  probe.validate();
  if (probe.metric == "custom" && !custom) {
    throw ConfigError("probe metric 'custom' needs a continuation scorer");
  }
  std::vector<double> values(probe.prompts.size(), 0.0);
  parallel_for(probe.prompts.size(), threads, [&](size_t i) {
    values[i] = score_continuation(model, probe, probe.prompts[i], tox, custom);
  });
  return values;
}

double probe_metric(const Model& model, const BehaviorProbe& probe, const ToxicityScorer& tox,
                    const ContinuationScorer& custom, int threads) {
  const std::vector<double> values = probe_values(model, probe, tox, custom, threads);
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

ReferenceSet build_reference_set(const Model& model,
                                 const std::vector<std::vector<int>>& candidates,
                                 const BehaviorProbe& probe, size_t max_n,
                                 const ToxicityScorer& tox, const ContinuationScorer& custom,
                                 int threads) {
  if (candidates.empty()) throw ConfigError("no candidate prompts");
  if (max_n == 0) throw ConfigError("max_n must be positive");
  BehaviorProbe scan = probe;
  scan.prompts = candidates;
  const std::vector<double> values = probe_values(model, scan, tox, custom, threads);

  ReferenceSet refset;
  refset.id = "behavior:" + probe.name;
  refset.tag = "behavior:" + probe.name;
  refset.selection_rule =
      probe.metric + (probe.direction == "le" ? " <= " : " >= ") + format_double(probe.threshold);
  for (size_t i = 0; i < candidates.size() && refset.sequences.size() < max_n; ++i) {
    if (probe.triggers(values[i])) refset.sequences.push_back(candidates[i]);
  }
  if (refset.sequences.empty()) {
    throw EvalError("no candidate prompt satisfies " + refset.selection_rule);
  }
  return refset;
}

DifferentialMap differential_scores(const RelevanceMap& general, const RelevanceMap& undesired) {
  if (general.granularity != undesired.granularity) {
    throw EvalError("granularity mismatch: " + granularity_name(general.granularity) + " vs " +
                    granularity_name(undesired.granularity));
  }
  DifferentialMap diff;
  diff.general_id = general.refset_id;
  diff.undesired_id = undesired.refset_id;
  diff.map.granularity = general.granularity;
  diff.map.scorer = "differential(" + general.scorer + ")";
  diff.map.refset_id = general.refset_id + "-minus-" + undesired.refset_id;
  diff.map.n_ref = general.n_ref + undesired.n_ref;
  diff.map.notes = {"signed difference of aggregated scores: general minus undesired"};

  for (const auto& layer : general.layers) {
    auto it = undesired.scores.find(layer);
    if (it == undesired.scores.end()) continue;
    const Mat& g = general.scores.at(layer);
    const Mat& u = it->second;
    if (g.rows() != u.rows() || g.cols() != u.cols()) {
      throw EvalError("shape mismatch for " + layer + " between source maps");
    }
    diff.map.layers.push_back(layer);
    diff.map.scores.emplace(layer, g - u);
  }
  if (diff.map.layers.empty()) throw EvalError("source maps share no layers");
  diff.map.check_finite();
  return diff;
}

std::pair<Model, PruneMask> correct_model(const Model& model, const DifferentialMap& diff,
                                          PruneGranularity granularity, long long q) {
  const PruneMask mask = select_prune_set(diff.map, granularity, PruneAmount::of_count(q));
  Model corrected = apply_mask(model, mask);
  return {std::move(corrected), mask};
}

std::string correction_report_json(const CorrectionReport& report) {
  ordered_json j;
  j["q"] = report.q;
  j["granularity"] = report.granularity;
  j["metric_before"] = report.metric_before;
  j["metric_after"] = report.metric_after;
  j["ppl_before"] = report.ppl_before;
  j["ppl_after"] = report.ppl_after;
  j["mask_path"] = report.mask_path;
  return j.dump(2) + "\n";
}

CorrectionOutcome run_correction(const Model& model, const DifferentialMap& diff,
                                 PruneGranularity granularity, long long q,
                                 const BehaviorProbe& probe, const Corpus& ppl_corpus,
                                 const ToxicityScorer& tox, const ContinuationScorer& custom,
                                 int threads) {
  if (ppl_corpus.id == diff.general_id || ppl_corpus.id == diff.undesired_id) {
    throw EvalError("perplexity corpus '" + ppl_corpus.id +
                    "' overlaps a reference set; use held-out text");
  }

  CorrectionOutcome out{model, {}, {}};
  out.report.q = q;
  out.report.granularity = prune_granularity_name(granularity);
  out.report.metric_before = probe_metric(model, probe, tox, custom, threads);
  out.report.ppl_before = perplexity(model, ppl_corpus);

  auto [corrected, mask] = correct_model(model, diff, granularity, q);
  out.model = std::move(corrected);
  out.mask = std::move(mask);

  out.report.metric_after = probe_metric(out.model, probe, tox, custom, threads);
  out.report.ppl_after = perplexity(out.model, ppl_corpus);
  return out;
}

}  // namespace sparc
