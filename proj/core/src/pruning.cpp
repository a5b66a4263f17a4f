#include "sparc/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

namespace sparc {

using ordered_json = nlohmann::ordered_json;

std::string prune_granularity_name(PruneGranularity g) {
  switch (g) {
    case PruneGranularity::StructuredNeuron: return "structured-neuron";
    case PruneGranularity::StructuredHead: return "structured-head";
    case PruneGranularity::RowUnstructured: return "row-wise-unstructured";
    case PruneGranularity::LayerUnstructured: return "layer-wise-unstructured";
    case PruneGranularity::GlobalUnstructured: return "global-unstructured";
  }
  throw ConfigError("unknown prune granularity");
}

PruneGranularity prune_granularity_from_name(const std::string& name) {
  if (name == "structured-neuron") return PruneGranularity::StructuredNeuron;
  if (name == "structured-head") return PruneGranularity::StructuredHead;
  if (name == "row-wise-unstructured" || name == "row") return PruneGranularity::RowUnstructured;
  if (name == "layer-wise-unstructured" || name == "layer")
    return PruneGranularity::LayerUnstructured;
  if (name == "global-unstructured" || name == "global")
    return PruneGranularity::GlobalUnstructured;
  throw ConfigError("unknown prune granularity: " + name);
}

PruneAmount PruneAmount::of_rate(double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("rate must lie in [0, 1)");
  PruneAmount a;
  a.rate = rate;
  return a;
}

PruneAmount PruneAmount::of_count(long long q) {
  if (q < 0) throw ConfigError("q must be >= 0");
  PruneAmount a;
  a.q = q;
  return a;
}

static void require_compatible(Granularity map_gran, PruneGranularity g) {
  const bool ok = (map_gran == Granularity::Weight &&
                   (g == PruneGranularity::RowUnstructured ||
                    g == PruneGranularity::LayerUnstructured ||
                    g == PruneGranularity::GlobalUnstructured)) ||
                  (map_gran == Granularity::Neuron && g == PruneGranularity::StructuredNeuron) ||
                  (map_gran == Granularity::Head && g == PruneGranularity::StructuredHead);
  if (!ok) {
    throw GranularityError("a " + granularity_name(map_gran) +
                           " map cannot drive " + prune_granularity_name(g) + " pruning");
  }
}

namespace {
struct Scored {
  double score;
  long long index;  // tie-break: ascending component index within the scope
  int layer;        // position in map.layers
  int row, col;
};
}  // namespace

// ascending (score, index) selection of the first `take` items; emits entries
// in canonical order
static void select_from(std::vector<Scored>& pool, long long take, const RelevanceMap& map,
                        int entry_col_mode, std::vector<MaskEntry>& out) {
  if (take <= 0) return;
  std::sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.index < b.index;
  });
  const size_t n = std::min<size_t>(static_cast<size_t>(take), pool.size());
  std::vector<const Scored*> chosen;
  chosen.reserve(n);
  for (size_t i = 0; i < n; ++i) chosen.push_back(&pool[i]);
  std::sort(chosen.begin(), chosen.end(),
            [](const Scored* a, const Scored* b) { return a->index < b->index; });
  for (const Scored* s : chosen) {
    MaskEntry e;
    e.layer = map.layers[static_cast<size_t>(s->layer)];
    e.row = s->row;
    e.col = entry_col_mode == 0 ? s->col : entry_col_mode;
    out.push_back(std::move(e));
  }
}

PruneMask select_prune_set(const RelevanceMap& map, PruneGranularity granularity,
                           PruneAmount amount) {
  require_compatible(map.granularity, granularity);
  if (amount.rate < 0 && amount.q < 0) throw ConfigError("no prune amount given");
  map.check_finite();

  PruneMask mask;
  mask.granularity = granularity;
  mask.layers = map.layers;
  const long long total = map.component_count();
  const int col_mode = map.granularity == Granularity::Neuron  ? -1
                       : map.granularity == Granularity::Head ? -2
                                                               : 0;

  if (granularity == PruneGranularity::RowUnstructured ||
      granularity == PruneGranularity::LayerUnstructured) {
    if (amount.q >= 0) {
      throw ConfigError("count-based amounts need a whole-model comparison scope; use a rate");
    }
    const double p = amount.rate;
    for (int li = 0; li < static_cast<int>(map.layers.size()); ++li) {
      const Mat& m = map.at(map.layers[static_cast<size_t>(li)]);
      if (granularity == PruneGranularity::RowUnstructured) {
        for (int r = 0; r < m.rows(); ++r) {
          std::vector<Scored> row_pool;
          row_pool.reserve(static_cast<size_t>(m.cols()));
          for (int c = 0; c < m.cols(); ++c) {
            row_pool.push_back({m(r, c), c, li, r, c});
          }
          const long long take = static_cast<long long>(
              std::floor(p * static_cast<double>(m.cols())));
          select_from(row_pool, take, map, col_mode, mask.entries);
        }
      } else {
        std::vector<Scored> layer_pool;
        layer_pool.reserve(static_cast<size_t>(m.size()));
        long long idx = 0;
        for (int r = 0; r < m.rows(); ++r) {
          for (int c = 0; c < m.cols(); ++c) {
            layer_pool.push_back({m(r, c), idx++, li, r, c});
          }
        }
        const long long take =
            static_cast<long long>(std::floor(p * static_cast<double>(m.size())));
        select_from(layer_pool, take, map, col_mode, mask.entries);
      }
    }
    mask.requested = p;
  } else {
    // whole-model scope: global-unstructured and both structured modes
    long long take;
    if (amount.q >= 0) {
      if (amount.q > total) {
        throw ConfigError("q=" + std::to_string(amount.q) + " exceeds component count " +
                          std::to_string(total));
      }
      take = amount.q;
      mask.requested = total == 0 ? 0.0 : static_cast<double>(take) / static_cast<double>(total);
    } else {
      take = static_cast<long long>(std::floor(amount.rate * static_cast<double>(total)));
      mask.requested = amount.rate;
    }
    std::vector<Scored> pool;
    pool.reserve(static_cast<size_t>(total));
    long long idx = 0;
    for (int li = 0; li < static_cast<int>(map.layers.size()); ++li) {
      const Mat& m = map.at(map.layers[static_cast<size_t>(li)]);
      for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
          pool.push_back({m(r, c), idx++, li, r, c});
        }
      }
    }
    select_from(pool, take, map, col_mode, mask.entries);
  }

  mask.achieved =
      total == 0 ? 0.0 : static_cast<double>(mask.entries.size()) / static_cast<double>(total);
  return mask;
}

PruneMask global_partitioned_select(const RelevanceMap& map, double rate, int n_partitions) {
  if (map.granularity != Granularity::Weight) {
    throw GranularityError("partitioned selection needs a weight-element map");
  }
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("rate must lie in [0, 1)");
  if (n_partitions < 1) throw ConfigError("n_partitions must be >= 1");
  map.check_finite();

  PruneMask mask;
  mask.granularity = PruneGranularity::GlobalUnstructured;
  mask.layers = map.layers;

  std::vector<Scored> all;
  long long idx = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (int li = 0; li < static_cast<int>(map.layers.size()); ++li) {
    const Mat& m = map.at(map.layers[static_cast<size_t>(li)]);
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        all.push_back({m(r, c), idx++, li, r, c});
        lo = std::min(lo, m(r, c));
        hi = std::max(hi, m(r, c));
      }
    }
  }
  const long long total = idx;
  const long long target = static_cast<long long>(std::floor(rate * static_cast<double>(total)));
  mask.requested = rate;

  auto bucket_of = [&](double s) -> int {
    if (hi == lo) return 0;
    const int b = static_cast<int>((s - lo) / (hi - lo) * n_partitions);
    return std::clamp(b, 0, n_partitions - 1);
  };

  std::vector<long long> counts(static_cast<size_t>(n_partitions), 0);
  for (const auto& s : all) ++counts[static_cast<size_t>(bucket_of(s.score))];

  long long below = 0;
  int threshold_bucket = 0;
  for (; threshold_bucket < n_partitions; ++threshold_bucket) {
    const long long c = counts[static_cast<size_t>(threshold_bucket)];
    if (below + c >= target) break;
    below += c;
  }

  std::vector<MaskEntry> selected;
  std::vector<Scored> threshold_pool;
  for (const auto& s : all) {
    const int b = bucket_of(s.score);
    if (b < threshold_bucket) {
      selected.push_back({map.layers[static_cast<size_t>(s.layer)], s.row, s.col});
    } else if (b == threshold_bucket) {
      threshold_pool.push_back(s);
    }
  }
  select_from(threshold_pool, target - below, map, 0, selected);

  // canonical order across the bucket split
  std::unordered_map<std::string, int> order;
  for (int li = 0; li < static_cast<int>(map.layers.size()); ++li) {
    order[map.layers[static_cast<size_t>(li)]] = li;
  }
  std::sort(selected.begin(), selected.end(), [&](const MaskEntry& a, const MaskEntry& b) {
    const int la = order[a.layer], lb = order[b.layer];
    if (la != lb) return la < lb;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  mask.entries = std::move(selected);
  mask.achieved =
      total == 0 ? 0.0 : static_cast<double>(mask.entries.size()) / static_cast<double>(total);
  return mask;
}

static int parse_attn_block(const std::string& layer) {
  // "blocks.<i>.attn"
  if (layer.rfind("blocks.", 0) == 0 && layer.size() > 12 &&
      layer.compare(layer.size() - 5, 5, ".attn") == 0) {
    try {
      return std::stoi(layer.substr(7, layer.size() - 12));
    } catch (...) {
    }
  }
  throw ShapeError("not an attention head scope: " + layer);
}

Model apply_mask(const Model& model, const PruneMask& mask) {
  Model out = model;
  const int hd = out.config.head_dim();
  for (const auto& e : mask.entries) {
    if (e.col == -2) {
      const int block = parse_attn_block(e.layer);
      if (block < 0 || block >= out.config.n_layers) {
        throw ShapeError("block index out of range in mask: " + e.layer);
      }
      if (e.row < 0 || e.row >= out.config.n_heads) {
        throw ShapeError("head index out of range in mask: " + std::to_string(e.row));
      }
      out.tensor(attn_v_name(block)).middleRows(e.row * hd, hd).setZero();
      out.tensor(attn_o_name(block)).middleCols(e.row * hd, hd).setZero();
      continue;
    }
    Mat& w = out.tensor(e.layer);
    if (e.row < 0 || e.row >= w.rows()) {
      throw ShapeError("row out of range in mask: " + e.layer + "[" + std::to_string(e.row) + "]");
    }
    if (e.col == -1) {
      w.row(e.row).setZero();
    } else if (e.col >= 0 && e.col < w.cols()) {
      w(e.row, e.col) = 0.0;
    } else {
      throw ShapeError("col out of range in mask: " + e.layer + "[" + std::to_string(e.row) +
                       ", " + std::to_string(e.col) + "]");
    }
  }
  return out;
}

SparsityReport sparsity_report(const Model& model) {
  SparsityReport rep;
  for (const auto& layer : model.prunable_layers(true)) {
    const Mat& w = model.tensor(layer);
    SparsityReport::LayerStat stat;
    stat.layer = layer;
    stat.params = static_cast<long long>(w.size());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        if (w(r, c) == 0.0) ++stat.zeros;
      }
    }
    rep.zeros += stat.zeros;
    rep.params += stat.params;
    rep.per_layer.push_back(std::move(stat));
  }
  return rep;
}

void save_mask(const PruneMask& mask, const std::string& csv_path, const Provenance& provenance) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + csv_path);
  out << "# provenance " << provenance_json(provenance) << "\n";
  out << "layer,row,col\n";
  for (const auto& e : mask.entries) {
    out << e.layer << ',' << e.row << ',' << e.col << '\n';
  }
  out.close();
  if (!out) throw IoError("failed writing " + csv_path);

  ordered_json side;
  side["granularity"] = prune_granularity_name(mask.granularity);
  side["requested_sparsity"] = mask.requested;
  side["achieved_sparsity"] = mask.achieved;
  side["component_count"] = mask.entries.size();
  side["layers"] = mask.layers;
  side["provenance"] = ordered_json::parse(provenance_json(provenance));
  std::ofstream sj(csv_path + ".json", std::ios::trunc);
  if (!sj) throw IoError("cannot write " + csv_path + ".json");
  sj << side.dump(2) << "\n";
  sj.close();
  if (!sj) throw IoError("failed writing " + csv_path + ".json");
}

PruneMask load_mask(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path);
  PruneMask mask;

  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "layer,row,col") throw IoError("unexpected mask header: " + line);
      saw_header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string layer, row_s, col_s;
    if (!std::getline(ls, layer, ',') || !std::getline(ls, row_s, ',') ||
        !std::getline(ls, col_s)) {
      throw IoError("malformed mask row: " + line);
    }
    MaskEntry e;
    e.layer = layer;
    try {
      e.row = std::stoi(row_s);
      e.col = std::stoi(col_s);
    } catch (...) {
      throw IoError("malformed mask row: " + line);
    }
    mask.entries.push_back(std::move(e));
  }
  if (!saw_header) throw IoError("mask file has no header: " + csv_path);

  std::ifstream sj(csv_path + ".json");
  if (sj) {
    try {
      ordered_json side;
      sj >> side;
      mask.granularity = prune_granularity_from_name(side.at("granularity").get<std::string>());
      mask.requested = side.value("requested_sparsity", 0.0);
      mask.achieved = side.value("achieved_sparsity", 0.0);
      if (side.contains("layers")) {
        mask.layers = side["layers"].get<std::vector<std::string>>();
      }
    } catch (const ordered_json::exception& e) {
      throw IoError("malformed mask sidecar: " + std::string(e.what()));
    }
  } else {
    // infer the component kind from the entries
    bool any_neuron = false, any_head = false, any_weight = false;
    for (const auto& e : mask.entries) {
      if (e.col == -1) any_neuron = true;
      else if (e.col == -2) any_head = true;
      else any_weight = true;
    }
    if (any_neuron + any_head + any_weight > 1) {
      throw IoError("mask mixes component kinds and has no sidecar: " + csv_path);
    }
    mask.granularity = any_neuron ? PruneGranularity::StructuredNeuron
                       : any_head ? PruneGranularity::StructuredHead
                                  : PruneGranularity::GlobalUnstructured;
    for (const auto& e : mask.entries) {
      if (mask.layers.empty() || mask.layers.back() != e.layer) {
        if (std::find(mask.layers.begin(), mask.layers.end(), e.layer) == mask.layers.end()) {
          mask.layers.push_back(e.layer);
        }
      }
    }
  }
  return mask;
}

}  // namespace sparc
