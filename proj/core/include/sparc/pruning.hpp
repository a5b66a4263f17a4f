#pragma once

#include <string>
#include <vector>

#include "sparc/attribution.hpp"
#include "sparc/model.hpp"

namespace sparc {

enum class PruneGranularity {
  StructuredNeuron,     // zero a neuron's full incoming weight row
  StructuredHead,       // zero a head's v rows and o columns
  RowUnstructured,      // floor(p * row_len) elements per row
  LayerUnstructured,    // floor(p * layer_size) elements per layer
  GlobalUnstructured,   // one comparison scope across every layer in the map
};

std::string prune_granularity_name(PruneGranularity g);
PruneGranularity prune_granularity_from_name(const std::string& name);

// col >= 0: weight element; col == -1: neuron (row = output unit);
// col == -2: head (layer = "blocks.<i>.attn", row = head index)
struct MaskEntry {
  std::string layer;
  int row = 0;
  int col = 0;

  bool operator==(const MaskEntry&) const = default;
};

struct PruneMask {
  PruneGranularity granularity = PruneGranularity::GlobalUnstructured;
  std::vector<std::string> layers;  // component domain the selection ran over
  std::vector<MaskEntry> entries;   // canonical order: (domain layer order, row, col)
  double requested = 0.0;
  double achieved = 0.0;  // |entries| / domain component count
};

// Exactly one of rate / q.
struct PruneAmount {
  double rate = -1.0;
  long long q = -1;

  static PruneAmount of_rate(double rate);
  static PruneAmount of_count(long long q);
};

// Ascending selection of the least relevant components within each comparison
// scope; ties broken by ascending component index. Count-based amounts apply
// to the whole-model scopes only.
PruneMask select_prune_set(const RelevanceMap& map, PruneGranularity granularity,
                           PruneAmount amount);

// Equal-width magnitude buckets; cumulative counts locate the threshold
// bucket, whose members are then sorted exactly. n_partitions = 1 degenerates
// to the exact global sort.
PruneMask global_partitioned_select(const RelevanceMap& map, double rate, int n_partitions = 64);

// Returns a copy with the masked components zeroed; idempotent.
Model apply_mask(const Model& model, const PruneMask& mask);

struct SparsityReport {
  struct LayerStat {
    std::string layer;
    long long zeros = 0;
    long long params = 0;
  };
  std::vector<LayerStat> per_layer;  // every prunable layer incl. lm_head
  long long zeros = 0;
  long long params = 0;

  double total() const { return params == 0 ? 0.0 : static_cast<double>(zeros) / params; }
};

SparsityReport sparsity_report(const Model& model);

// CSV "layer,row,col" plus a "<path>.json" sidecar with granularity and
// sparsity metadata.
void save_mask(const PruneMask& mask, const std::string& csv_path, const Provenance& provenance);
PruneMask load_mask(const std::string& csv_path);

}  // namespace sparc
