#pragma once

#include <utility>
#include <vector>

#include "sparc/attribution.hpp"
#include "sparc/pruning.hpp"
#include "sparc/tasks.hpp"

namespace sparc {

struct SparsityCurve {
  std::vector<std::pair<double, double>> points;  // (sparsity, metric), sparsity increasing
  std::string scorer;
  std::string granularity;
  uint64_t seed = 0;
};

// Attribution runs once on the unpruned model; each rate derives its mask from
// that fixed map, applies it to a fresh copy, and measures task accuracy.
// targets, when given, condition the scorer on gold logits per refset sequence.
SparsityCurve performance_sparsity_curve(const Model& model, const ScorerConfig& scorer_cfg,
                                         PruneGranularity granularity,
                                         const std::vector<double>& rates,
                                         const std::vector<IoiExample>& dataset,
                                         const ReferenceSet& refset,
                                         const std::vector<Target>& targets = {},
                                         int threads = 0);

struct Circuit {
  PruneMask mask;  // pruned components; the circuit is their complement
  double sparsity = 0.0;
  double metric = 0.0;
  double tau = 0.0;
};

// Maximal sparsity on a 0.5% grid whose mask keeps task accuracy >= tau
// (bisection; the next grid step fails or is the grid end). tau above the
// unpruned accuracy is an error; tau = 0 degenerates to the maximal rate.
Circuit discover_circuit(const Model& model, const RelevanceMap& map,
                         PruneGranularity granularity, const std::vector<IoiExample>& dataset,
                         double tau);

// CSV "sparsity,metric,scorer,granularity,seed" with a provenance comment.
void save_curve_csv(const SparsityCurve& curve, const std::string& path,
                    const Provenance& provenance);

}  // namespace sparc
