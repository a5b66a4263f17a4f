#include "sparc/circuits.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sparc {

SparsityCurve performance_sparsity_curve(const Model& model, const ScorerConfig& scorer_cfg,
                                         PruneGranularity granularity,
                                         const std::vector<double>& rates,
                                         const std::vector<IoiExample>& dataset,
                                         const ReferenceSet& refset,
                                         const std::vector<Target>& targets, int threads) {
  if (rates.empty()) throw ConfigError("no rates given");
  for (size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] < 0.0 || rates[i] >= 1.0) throw ConfigError("rates must lie in [0, 1)");
    if (i > 0 && rates[i] <= rates[i - 1]) throw ConfigError("rates must be strictly increasing");
  }

  const RelevanceMap map = compute_scores(model, refset, scorer_cfg, targets);

  SparsityCurve curve;
  curve.scorer = scorer_cfg.method;
  curve.granularity = prune_granularity_name(granularity);
  curve.seed = scorer_cfg.seed;
  curve.points.assign(rates.size(), {0.0, 0.0});
  parallel_for(rates.size(), threads, [&](size_t i) {
    const PruneMask mask = select_prune_set(map, granularity, PruneAmount::of_rate(rates[i]));
    const Model pruned = apply_mask(model, mask);
    curve.points[i] = {rates[i], task_accuracy(pruned, dataset)};
  });
  return curve;
}

Circuit discover_circuit(const Model& model, const RelevanceMap& map,
                         PruneGranularity granularity, const std::vector<IoiExample>& dataset,
                         double tau) {
  if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must lie in [0, 1]");
  const double base = task_accuracy(model, dataset);
  if (base < tau) {
    throw EvalError("unpruned accuracy " + std::to_string(base) +
                    " is already below tau = " + std::to_string(tau));
  }

  // 0.5% grid; k=199 is the maximal representable rate 0.995
  const int k_max = 199;
  auto metric_at = [&](int k) {
    const PruneMask mask =
        select_prune_set(map, granularity, PruneAmount::of_rate(k * 0.005));
    return task_accuracy(apply_mask(model, mask), dataset);
  };

  int lo = 0, hi = k_max + 1;  // lo passes; hi fails (or is past the grid end)
  double lo_metric = base;
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    const double m = metric_at(mid);
    if (m >= tau) {
      lo = mid;
      lo_metric = m;
    } else {
      hi = mid;
    }
  }

  Circuit circuit;
  circuit.mask = select_prune_set(map, granularity, PruneAmount::of_rate(lo * 0.005));
  circuit.sparsity = circuit.mask.achieved;
  circuit.metric = lo_metric;
  circuit.tau = tau;
  return circuit;
}

void save_curve_csv(const SparsityCurve& curve, const std::string& path,
                    const Provenance& provenance) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "# provenance " << provenance_json(provenance) << "\n";
  out << "sparsity,metric,scorer,granularity,seed\n";
  char sbuf[32], mbuf[32];
  for (const auto& [sparsity, metric] : curve.points) {
    std::snprintf(sbuf, sizeof(sbuf), "%.17g", sparsity);
    std::snprintf(mbuf, sizeof(mbuf), "%.17g", metric);
    out << sbuf << ',' << mbuf << ',' << curve.scorer << ',' << curve.granularity << ','
        << curve.seed << '\n';
  }
  out.close();
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace sparc
