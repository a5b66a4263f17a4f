#include "sparc/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sparc/trainer.hpp"

namespace sparc {

std::string granularity_name(Granularity g) {
  switch (g) {
    case Granularity::Weight: return "weight";
    case Granularity::Neuron: return "neuron";
    case Granularity::Head: return "head";
  }
  throw ConfigError("unknown granularity");
}

Granularity granularity_from_name(const std::string& name) {
  if (name == "weight") return Granularity::Weight;
  if (name == "neuron") return Granularity::Neuron;
  if (name == "head") return Granularity::Head;
  throw ConfigError("unknown granularity: " + name);
}

Mat& RelevanceMap::at(const std::string& layer) {
  auto it = scores.find(layer);
  if (it == scores.end()) throw ShapeError("no scores for layer: " + layer);
  return it->second;
}

const Mat& RelevanceMap::at(const std::string& layer) const {
  auto it = scores.find(layer);
  if (it == scores.end()) throw ShapeError("no scores for layer: " + layer);
  return it->second;
}

long long RelevanceMap::component_count() const {
  long long n = 0;
  for (const auto& layer : layers) n += static_cast<long long>(at(layer).size());
  return n;
}

void RelevanceMap::check_finite() const {
  for (const auto& layer : layers) {
    if (!all_finite(at(layer))) throw EvalError("non-finite scores in layer: " + layer);
  }
}

Target resolve_target(const Mat& logits, const TargetRule& rule) {
  if (rule.kind == TargetRule::Kind::GoldAt) {
    if (rule.position < 0 || rule.position >= logits.rows()) {
      throw EvalError("target position out of range: " + std::to_string(rule.position));
    }
    if (rule.token < 0 || rule.token >= logits.cols()) {
      throw EvalError("target token out of range: " + std::to_string(rule.token));
    }
    return {rule.position, rule.token};
  }
  const Eigen::Index last = logits.rows() - 1;
  int best = 0;
  for (Eigen::Index v = 1; v < logits.cols(); ++v) {
    if (logits(last, v) > logits(last, best)) best = static_cast<int>(v);
  }
  return {static_cast<int>(last), best};
}

// ---- relevance propagation --------------------------------------------------

static double stab(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

// R/stab(Z) entrywise; a zero relevance entry contributes exactly zero even
// when its denominator vanishes
static Mat rel_ratio(const Mat& R, const Mat& Z, double eps) {
  Mat out(R.rows(), R.cols());
  for (Eigen::Index r = 0; r < R.rows(); ++r) {
    for (Eigen::Index c = 0; c < R.cols(); ++c) {
      out(r, c) = R(r, c) == 0.0 ? 0.0 : R(r, c) / stab(Z(r, c), eps);
    }
  }
  return out;
}

// proportional share of R for one addend of total = part + rest
static Mat sum_share(const Mat& part, const Mat& total, const Mat& R, double eps) {
  Mat out(R.rows(), R.cols());
  for (Eigen::Index r = 0; r < R.rows(); ++r) {
    for (Eigen::Index c = 0; c < R.cols(); ++c) {
      out(r, c) = R(r, c) == 0.0 ? 0.0 : part(r, c) / stab(total(r, c), eps) * R(r, c);
    }
  }
  return out;
}

// normalization layers: statistics detached, so the affine path y = w*xhat + b
// is the only relevance route; the bias keeps its own share
static Mat ln_rule(const LnTape& t, const Mat& bias, const Mat& R, double eps) {
  Mat out(R.rows(), R.cols());
  for (Eigen::Index r = 0; r < R.rows(); ++r) {
    for (Eigen::Index c = 0; c < R.cols(); ++c) {
      out(r, c) = R(r, c) == 0.0
                      ? 0.0
                      : (t.output(r, c) - bias(0, c)) / stab(t.output(r, c), eps) * R(r, c);
    }
  }
  return out;
}

static void check_tape(const Model& model, const ForwardTape& tape) {
  if (static_cast<int>(tape.blocks.size()) != model.config.n_layers ||
      tape.lm_head.z.cols() != model.config.vocab_size ||
      tape.embed_out.cols() != model.config.d_model) {
    throw ShapeError("tape does not match this model's configuration");
  }
}

LrpResult lrp_backward(const Model& model, const ForwardTape& tape, Target target,
                       double epsilon) {
  if (epsilon < 0) throw ConfigError("epsilon must be >= 0");
  check_tape(model, tape);
  const ModelConfig& cfg = model.config;
  const Eigen::Index T = static_cast<Eigen::Index>(tape.tokens.size());
  const Mat& logits = tape.logits();
  if (target.position < 0 || target.position >= T) {
    throw EvalError("target position out of range: " + std::to_string(target.position));
  }
  if (target.token < 0 || target.token >= cfg.vocab_size) {
    throw EvalError("target token out of range: " + std::to_string(target.token));
  }

  LrpResult res;
  res.init_value = logits(target.position, target.token);

  Mat R = Mat::Zero(T, cfg.vocab_size);
  R(target.position, target.token) = res.init_value;
  res.rel_out["lm_head"] = R;
  {
    const Mat S = rel_ratio(R, tape.lm_head.z, epsilon);
    res.rel_in["lm_head"] = (S * model.tensor("lm_head")).cwiseProduct(tape.lm_head.input);
  }

  Mat rx = ln_rule(tape.ln_f, model.tensor("ln_f.bias"), res.rel_in["lm_head"], epsilon);

  const int hd = cfg.head_dim();
  for (int b = cfg.n_layers - 1; b >= 0; --b) {
    const BlockTape& bt = tape.blocks[static_cast<size_t>(b)];

    // residual 2: x_out = x_mid + fc2(z)
    const Mat x_out = bt.ln2.input + bt.fc2.z;
    Mat r_mid = sum_share(bt.ln2.input, x_out, rx, epsilon);
    const Mat r_fc2 = sum_share(bt.fc2.z, x_out, rx, epsilon);

    res.rel_out[fc2_name(b)] = r_fc2;
    const Mat s2 = rel_ratio(r_fc2, bt.fc2.z, epsilon);
    const Mat r_relu = (s2 * model.tensor(fc2_name(b))).cwiseProduct(bt.fc2.input);
    res.rel_in[fc2_name(b)] = r_relu;

    // ReLU: identity on active units (inactive ones already have zero
    // relevance because their output is zero)
    res.rel_out[fc1_name(b)] = r_relu;
    const Mat s1 = rel_ratio(r_relu, bt.fc1.z, epsilon);
    const Mat r_ln2_out = (s1 * model.tensor(fc1_name(b))).cwiseProduct(bt.fc1.input);
    res.rel_in[fc1_name(b)] = r_ln2_out;
    r_mid += ln_rule(bt.ln2, model.tensor(ln2_bias_name(b)), r_ln2_out, epsilon);

    // residual 1: x_mid = x_in + o(z)
    const Mat x_mid = bt.ln1.input + bt.o.z;
    Mat r_in = sum_share(bt.ln1.input, x_mid, r_mid, epsilon);
    const Mat r_oz = sum_share(bt.o.z, x_mid, r_mid, epsilon);

    res.rel_out[attn_o_name(b)] = r_oz;
    const Mat so = rel_ratio(r_oz, bt.o.z, epsilon);
    const Mat r_cat = (so * model.tensor(attn_o_name(b))).cwiseProduct(bt.o.input);
    res.rel_in[attn_o_name(b)] = r_cat;

    Vec shares(cfg.n_heads);
    Mat r_v = Mat::Zero(T, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      shares(h) = r_cat.middleCols(h * hd, hd).sum();
      // head output = P * V_h with P held constant
      const Mat& P = bt.probs[static_cast<size_t>(h)];
      const Mat sh = rel_ratio(r_cat.middleCols(h * hd, hd), bt.o.input.middleCols(h * hd, hd),
                               epsilon);
      r_v.middleCols(h * hd, hd) =
          (P.transpose() * sh).cwiseProduct(bt.v.z.middleCols(h * hd, hd));
    }
    res.head_share[attn_name(b)] = shares;

    res.rel_out[attn_v_name(b)] = r_v;
    const Mat sv = rel_ratio(r_v, bt.v.z, epsilon);
    const Mat r_ln1_out = (sv * model.tensor(attn_v_name(b))).cwiseProduct(bt.v.input);
    res.rel_in[attn_v_name(b)] = r_ln1_out;

    // probabilities are constants under this rule, so the q/k paths carry none
    res.rel_out[attn_q_name(b)] = Mat::Zero(T, cfg.d_model);
    res.rel_in[attn_q_name(b)] = Mat::Zero(T, cfg.d_model);
    res.rel_out[attn_k_name(b)] = Mat::Zero(T, cfg.d_model);
    res.rel_in[attn_k_name(b)] = Mat::Zero(T, cfg.d_model);

    r_in += ln_rule(bt.ln1, model.tensor(ln1_bias_name(b)), r_ln1_out, epsilon);
    rx = std::move(r_in);
  }
  res.embedding_relevance = rx;

  for (int b = 0; b < cfg.n_layers; ++b) {
    res.linear_names.push_back(attn_q_name(b));
    res.linear_names.push_back(attn_k_name(b));
    res.linear_names.push_back(attn_v_name(b));
    res.linear_names.push_back(attn_o_name(b));
    res.linear_names.push_back(fc1_name(b));
    res.linear_names.push_back(fc2_name(b));
  }
  res.linear_names.push_back("lm_head");
  return res;
}

static std::vector<std::string> resolve_scope(const Model& model,
                                              const std::vector<std::string>& scope,
                                              bool include_lm_head) {
  if (scope.empty()) return model.prunable_layers(include_lm_head);
  const auto all = model.prunable_layers(true);
  for (const auto& layer : scope) {
    if (std::find(all.begin(), all.end(), layer) == all.end()) {
      throw ConfigError("not a prunable linear layer: " + layer);
    }
  }
  return scope;
}

RelevanceMap lrp_weight_relevance(const Model& model, const ForwardTape& tape, Target target,
                                  double epsilon, const std::vector<std::string>& scope) {
  const LrpResult res = lrp_backward(model, tape, target, epsilon);
  RelevanceMap map;
  map.granularity = Granularity::Weight;
  map.layers = resolve_scope(model, scope, false);
  map.scorer = "lrp";
  map.n_ref = 1;
  for (const auto& layer : map.layers) {
    const LinearTape& lt = tape.linear(layer);
    const Mat s = rel_ratio(res.rel_out.at(layer), lt.z, epsilon);
    map.scores[layer] = model.tensor(layer).cwiseProduct(s.transpose() * lt.input);
  }
  return map;
}

RelevanceMap head_relevance(const Model& model, const ForwardTape& tape, Target target,
                            double epsilon) {
  const LrpResult res = lrp_backward(model, tape, target, epsilon);
  RelevanceMap map;
  map.granularity = Granularity::Head;
  map.scorer = "lrp";
  map.n_ref = 1;
  for (int b = 0; b < model.config.n_layers; ++b) {
    const std::string name = attn_name(b);
    map.layers.push_back(name);
    const Vec& shares = res.head_share.at(name);
    Mat col(shares.size(), 1);
    col.col(0) = shares;
    map.scores[name] = col;
  }
  return map;
}

// signed per-layer row sums of the relevance entering each output unit
static RelevanceMap lrp_neuron_relevance(const Model& model, const ForwardTape& tape,
                                         Target target, double epsilon,
                                         const std::vector<std::string>& scope) {
  const LrpResult res = lrp_backward(model, tape, target, epsilon);
  RelevanceMap map;
  map.granularity = Granularity::Neuron;
  map.layers = resolve_scope(model, scope, false);
  map.scorer = "lrp";
  map.n_ref = 1;
  for (const auto& layer : map.layers) {
    const Mat& rel = res.rel_out.at(layer);  // tokens x out_dim
    Mat col(rel.cols(), 1);
    col.col(0) = rel.colwise().sum().transpose();
    map.scores[layer] = col;
  }
  return map;
}

// permutation-invariant mean: sort each component's addends by value first
static double sorted_mean(std::vector<double>& vals) {
  std::sort(vals.begin(), vals.end());
  double sum = 0.0;
  for (double v : vals) sum += v;
  return sum / static_cast<double>(vals.size());
}

RelevanceMap wanda_scores(const Model& model, const ReferenceSet& refset,
                          const std::vector<std::string>& scope) {
  if (refset.sequences.empty()) throw EvalError("empty reference set");
  RelevanceMap map;
  map.granularity = Granularity::Weight;
  map.layers = resolve_scope(model, scope, false);
  map.scorer = "wanda";
  map.refset_id = refset.id;
  map.n_ref = static_cast<int>(refset.sequences.size());

  const size_t n_seq = refset.sequences.size();
  // per layer, per sequence: sum of squares per input column
  std::unordered_map<std::string, std::vector<Vec>> colsq;
  for (const auto& layer : map.layers) {
    colsq[layer].assign(n_seq, Vec());
  }
  for (size_t s = 0; s < n_seq; ++s) {
    const ForwardTape tape = forward(model, refset.sequences[s]);
    for (const auto& layer : map.layers) {
      const Mat& x = tape.linear(layer).input;
      colsq[layer][s] = x.array().square().colwise().sum().transpose();
    }
  }
  for (const auto& layer : map.layers) {
    const Mat& w = model.tensor(layer);
    Vec norms(w.cols());
    std::vector<double> vals(n_seq);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (size_t s = 0; s < n_seq; ++s) vals[s] = colsq[layer][s](c);
      std::sort(vals.begin(), vals.end());
      double sum = 0.0;
      for (double v : vals) sum += v;
      norms(c) = std::sqrt(sum);
    }
    map.scores[layer] = w.cwiseAbs().array().rowwise() * norms.transpose().array();
  }
  return map;
}

RelevanceMap magnitude_scores(const Model& model, const std::vector<std::string>& scope) {
  RelevanceMap map;
  map.granularity = Granularity::Weight;
  map.layers = resolve_scope(model, scope, false);
  map.scorer = "magnitude";
  for (const auto& layer : map.layers) map.scores[layer] = model.tensor(layer).cwiseAbs();
  return map;
}

RelevanceMap activation_scores(const Model& model, const ReferenceSet& refset,
                               const std::vector<std::string>& scope) {
  if (refset.sequences.empty()) throw EvalError("empty reference set");
  RelevanceMap map;
  map.granularity = Granularity::Neuron;
  map.layers = resolve_scope(model, scope, false);
  map.scorer = "activation";
  map.refset_id = refset.id;
  map.n_ref = static_cast<int>(refset.sequences.size());

  const size_t n_seq = refset.sequences.size();
  std::unordered_map<std::string, std::vector<Vec>> sums;
  for (const auto& layer : map.layers) sums[layer].assign(n_seq, Vec());
  long long total_tokens = 0;
  for (size_t s = 0; s < n_seq; ++s) {
    const ForwardTape tape = forward(model, refset.sequences[s]);
    total_tokens += static_cast<long long>(refset.sequences[s].size());
    for (const auto& layer : map.layers) {
      // post-activation: ReLU output for fc1, the linear output elsewhere
      int block = -1;
      for (int b = 0; b < model.config.n_layers; ++b) {
        if (layer == fc1_name(b)) block = b;
      }
      const Mat& act =
          block >= 0 ? tape.blocks[static_cast<size_t>(block)].fc2.input : tape.linear(layer).z;
      sums[layer][s] = act.cwiseAbs().colwise().sum().transpose();
    }
  }
  for (const auto& layer : map.layers) {
    const auto [rows, cols] = tensor_shape(model.config, layer);
    (void)cols;
    Mat col(rows, 1);
    std::vector<double> vals(n_seq);
    for (int r = 0; r < rows; ++r) {
      for (size_t s = 0; s < n_seq; ++s) vals[s] = sums[layer][s](r);
      std::sort(vals.begin(), vals.end());
      double sum = 0.0;
      for (double v : vals) sum += v;
      col(r, 0) = sum / static_cast<double>(total_tokens);
    }
    map.scores[layer] = col;
  }
  return map;
}

RelevanceMap aggregate_relevance(const std::vector<RelevanceMap>& per_sample, bool magnitude) {
  if (per_sample.empty()) throw EvalError("nothing to aggregate");
  const RelevanceMap& first = per_sample[0];
  for (const auto& m : per_sample) {
    if (m.granularity != first.granularity) throw EvalError("mixed granularities");
    if (m.layers != first.layers) throw EvalError("mixed component domains");
  }

  RelevanceMap out;
  out.granularity = first.granularity;
  out.layers = first.layers;
  out.scorer = first.scorer;
  out.refset_id = first.refset_id;
  out.n_ref = static_cast<int>(per_sample.size());
  out.notes = first.notes;

  const size_t n = per_sample.size();
  std::vector<double> vals(n);
  for (const auto& layer : out.layers) {
    const Mat& ref = first.at(layer);
    Mat agg(ref.rows(), ref.cols());
    for (Eigen::Index r = 0; r < ref.rows(); ++r) {
      for (Eigen::Index c = 0; c < ref.cols(); ++c) {
        for (size_t s = 0; s < n; ++s) {
          const double v = per_sample[s].at(layer)(r, c);
          vals[s] = magnitude ? std::abs(v) : v;
        }
        agg(r, c) = sorted_mean(vals);
      }
    }
    out.scores[layer] = std::move(agg);
  }
  return out;
}

ConcentrationResult score_concentration(const RelevanceMap& map, double threshold) {
  if (threshold < 0.0 || threshold > 1.0) throw ConfigError("threshold must lie in [0, 1]");
  if (map.component_count() == 0) throw EvalError("empty relevance map");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& layer : map.layers) {
    const Mat& m = map.at(layer);
    lo = std::min(lo, m.minCoeff());
    hi = std::max(hi, m.maxCoeff());
  }
  ConcentrationResult res;
  if (lo == hi) {
    res.degenerate = true;
    return res;  // all equal: nothing exceeds any threshold >= 0
  }
  const double width = hi - lo;
  for (const auto& layer : map.layers) {
    const Mat& m = map.at(layer);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if ((m(r, c) - lo) / width > threshold) ++res.count;
      }
    }
  }
  return res;
}

// per-sample scores from one gradient sweep: |d(target logit)/dW|
static RelevanceMap gradient_sample_map(const Model& model, const ForwardTape& tape,
                                        Target target, Granularity granularity,
                                        const std::vector<std::string>& layers) {
  Mat dlogits = Mat::Zero(tape.logits().rows(), tape.logits().cols());
  dlogits(target.position, target.token) = 1.0;
  const GradientSet grads = backward_from_dlogits(model, tape, dlogits);

  RelevanceMap map;
  map.granularity = granularity;
  map.layers = layers;
  map.scorer = "gradient";
  map.n_ref = 1;
  for (const auto& layer : layers) {
    const Mat abs_grad = grads.at(layer).cwiseAbs();
    if (granularity == Granularity::Weight) {
      map.scores[layer] = abs_grad;
    } else {
      Mat col(abs_grad.rows(), 1);
      col.col(0) = abs_grad.rowwise().sum();
      map.scores[layer] = col;
    }
  }
  return map;
}

RelevanceMap compute_scores(const Model& model, const ReferenceSet& refset,
                            const ScorerConfig& config, const std::vector<Target>& targets) {
  if (!targets.empty() && targets.size() != refset.sequences.size()) {
    throw ConfigError("targets length must match the reference-set size");
  }
  const std::vector<std::string> scope =
      resolve_scope(model, config.scope, config.include_lm_head);

  if (config.method == "magnitude") {
    RelevanceMap map = magnitude_scores(model, scope);
    if (config.granularity == Granularity::Neuron) {
      RelevanceMap out = map;
      for (const auto& layer : map.layers) {
        Mat col(map.at(layer).rows(), 1);
        col.col(0) = map.at(layer).rowwise().sum();
        out.scores[layer] = col;
      }
      out.granularity = Granularity::Neuron;
      return out;
    }
    if (config.granularity == Granularity::Head) {
      throw GranularityError("magnitude scores cannot be assigned to attention heads");
    }
    return map;
  }

  if (config.method == "wanda") {
    if (config.granularity == Granularity::Head) {
      throw GranularityError("wanda scores cannot be assigned to attention heads");
    }
    RelevanceMap map = wanda_scores(model, refset, scope);
    if (config.granularity == Granularity::Neuron) {
      RelevanceMap out = map;
      for (const auto& layer : map.layers) {
        Mat col(map.at(layer).rows(), 1);
        col.col(0) = map.at(layer).rowwise().sum();
        out.scores[layer] = col;
      }
      out.granularity = Granularity::Neuron;
      return out;
    }
    return map;
  }

  if (config.method == "activation") {
    if (config.granularity != Granularity::Neuron) {
      throw GranularityError("activation scores are neuron-level only");
    }
    return activation_scores(model, refset, scope);
  }

  if (config.method == "random") {
    RelevanceMap map;
    map.granularity = config.granularity;
    map.scorer = "random";
    Rng rng(config.seed);
    if (config.granularity == Granularity::Head) {
      for (int b = 0; b < model.config.n_layers; ++b) map.layers.push_back(attn_name(b));
      for (const auto& layer : map.layers) {
        Mat col(model.config.n_heads, 1);
        for (Eigen::Index r = 0; r < col.rows(); ++r) col(r, 0) = rng.next_unit();
        map.scores[layer] = col;
      }
      return map;
    }
    map.layers = scope;
    for (const auto& layer : scope) {
      const auto [rows, cols] = tensor_shape(model.config, layer);
      Mat m(rows, config.granularity == Granularity::Weight ? cols : 1);
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.next_unit();
      }
      map.scores[layer] = m;
    }
    return map;
  }

  if (config.method != "lrp" && config.method != "gradient") {
    throw ConfigError("unknown scorer method: " + config.method);
  }
  if (refset.sequences.empty()) throw EvalError("empty reference set");
  if (config.method == "gradient" && config.granularity == Granularity::Head) {
    throw GranularityError("gradient scores cannot be assigned to attention heads");
  }

  const size_t n_seq = refset.sequences.size();
  std::vector<RelevanceMap> samples(n_seq);
  parallel_for(n_seq, config.threads, [&](size_t s) {
    const ForwardTape tape = forward(model, refset.sequences[s]);
    const Target target =
        targets.empty() ? resolve_target(tape.logits(), config.target) : targets[s];
    if (config.method == "lrp") {
      switch (config.granularity) {
        case Granularity::Weight:
          samples[s] = lrp_weight_relevance(model, tape, target, config.epsilon, scope);
          break;
        case Granularity::Neuron:
          samples[s] = lrp_neuron_relevance(model, tape, target, config.epsilon, scope);
          break;
        case Granularity::Head:
          samples[s] = head_relevance(model, tape, target, config.epsilon);
          break;
      }
    } else {
      samples[s] = gradient_sample_map(model, tape, target, config.granularity, scope);
    }
  });

  RelevanceMap map = aggregate_relevance(samples, config.magnitude_aggregation);
  map.refset_id = refset.id;
  if (config.method == "lrp") {
    map.notes.push_back(
        "attention probabilities held constant during relevance redistribution; "
        "q/k projections receive zero relevance");
    map.notes.push_back("normalization statistics detached; affine path participates");
    map.notes.push_back("per-position weight relevance summed before aggregation");
  }
  if (!config.magnitude_aggregation) {
    map.notes.push_back("signed per-sample aggregation (differential use)");
  }
  map.check_finite();
  return map;
}

}  // namespace sparc
