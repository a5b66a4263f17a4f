#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "sparc/attribution.hpp"
#include "sparc/forward.hpp"
#include "sparc/model.hpp"

using namespace sparc;

namespace {

// One-block model with d_model = 2 whose final layer norm is pinned to emit
// the constant vector (b0, b1) at every position, and whose lm head has a
// single nonzero row (w0, w1) for `target_token`. The target logit is then
// exactly b0*w0 + b1*w1, which makes single-layer redistribution checkable by
// hand.
Model pinned_head_model(double b0, double b1, double w0, double w1, int target_token) {
  const Vocabulary v = test::tiny_vocab();
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 2;
  cfg.n_heads = 1;
  cfg.d_ff = 4;
  cfg.vocab_size = v.size();
  cfg.max_seq_len = 8;
  Model m = init_model(cfg, v, 3);
  m.tensor("ln_f.weight").setZero();
  m.tensor("ln_f.bias")(0, 0) = b0;
  m.tensor("ln_f.bias")(0, 1) = b1;
  m.tensor("lm_head").setZero();
  m.tensor("lm_head")(target_token, 0) = w0;
  m.tensor("lm_head")(target_token, 1) = w1;
  return m;
}

ReferenceSet toy_refset(const Model& m) {
  ReferenceSet rs;
  rs.id = "unit-refset";
  for (const char* text : {"mary went to the store", "the old tree was very quiet",
                           "john gave a drink to mary", "they found a small red door"}) {
    rs.sequences.push_back(m.vocab.tokenize(text));
  }
  return rs;
}

double layer_sum(const std::unordered_map<std::string, Mat>& rel, const std::string& layer) {
  return rel.at(layer).sum();
}

}  // namespace

TEST_SUITE_BEGIN("attribution");

TEST_CASE("greedy-last targets pick the final position argmax with ties to the lowest id") {
  Mat logits(2, 4);
  logits << 0.0, 9.0, 1.0, 2.0,  //
      3.0, 7.0, 7.0, 1.0;
  const Target t = resolve_target(logits, TargetRule{});
  CHECK(t.position == 1);
  CHECK(t.token == 1);  // 7.0 tie between tokens 1 and 2

  TargetRule gold;
  gold.kind = TargetRule::Kind::GoldAt;
  gold.position = 1;
  gold.token = 3;
  const Target g = resolve_target(logits, gold);
  CHECK(g.position == 1);
  CHECK(g.token == 3);

  gold.position = 0;
  CHECK_THROWS_WITH_AS(resolve_target(logits, gold),
                       "position 0 cannot be a target (no preceding context)", EvalError);
  gold.position = 2;
  CHECK_THROWS_AS(resolve_target(logits, gold), EvalError);
  gold.position = 1;
  gold.token = 4;
  CHECK_THROWS_AS(resolve_target(logits, gold), EvalError);
}

TEST_CASE("a single linear layer splits relevance by input contribution") {
  // head input (2, 1), weight row (0.25, 0.5): contributions 0.5 and 0.5
  const int tok = 4;
  const Model m = pinned_head_model(2.0, 1.0, 0.25, 0.5, tok);
  const ForwardTape tape = forward(m, {kBos, 5});
  const LrpResult res = lrp_backward(m, tape, Target{1, tok}, 0.0);

  CHECK(res.init_value == doctest::Approx(1.0).epsilon(1e-12));

  const Mat& rin = res.rel_in.at("lm_head");
  REQUIRE(rin.rows() == 2);
  REQUIRE(rin.cols() == 2);
  CHECK(rin(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rin(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rin.row(0).cwiseAbs().maxCoeff() == 0.0);  // non-target positions carry nothing

  const Mat& rout = res.rel_out.at("lm_head");
  CHECK(rout(1, tok) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(rout.sum() - 1.0) <= 1e-12);

  // the weight-relevance marginal for the same layer
  const RelevanceMap wmap = lrp_weight_relevance(m, tape, Target{1, tok}, 0.0, {"lm_head"});
  const Mat& rw = wmap.at("lm_head");
  REQUIRE(rw.rows() == m.config.vocab_size);
  REQUIRE(rw.cols() == 2);
  CHECK(rw(tok, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rw(tok, 1) == doctest::Approx(0.5).epsilon(1e-12));
  for (Eigen::Index r = 0; r < rw.rows(); ++r) {
    if (r != tok) CHECK(rw.row(r).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("the stabilizer shrinks sums symmetrically and keeps z = 0 finite") {
  const int tok = 4;
  const double eps = 1e-6;

  // z = +1: the redistributed sum is z^2 / (z + eps)
  const Model pos = pinned_head_model(2.0, 1.0, 0.25, 0.5, tok);
  const ForwardTape tp = forward(pos, {kBos, 5});
  const LrpResult rp = lrp_backward(pos, tp, Target{1, tok}, eps);
  const double sum_pos = rp.rel_in.at("lm_head").sum();
  CHECK(std::abs(sum_pos - 1.0 / (1.0 + eps)) <= 1e-12);

  // z = -1: sign(z) = -1 mirrors the denominator, so the sum mirrors exactly
  const Model neg = pinned_head_model(2.0, 1.0, -0.25, -0.5, tok);
  const ForwardTape tn = forward(neg, {kBos, 5});
  const LrpResult rn = lrp_backward(neg, tn, Target{1, tok}, eps);
  CHECK(rn.init_value == doctest::Approx(-1.0).epsilon(1e-12));
  const double sum_neg = rn.rel_in.at("lm_head").sum();
  CHECK(std::abs(sum_neg + sum_pos) <= 1e-15);

  // z = 0: sign(0) = 1 turns 0/0 into 0/eps; everything stays finite and zero
  const Model zero = pinned_head_model(2.0, 1.0, 0.5, -1.0, tok);
  const ForwardTape tz = forward(zero, {kBos, 5});
  const LrpResult rz = lrp_backward(zero, tz, Target{1, tok}, eps);
  CHECK(rz.init_value == 0.0);
  CHECK(std::isfinite(rz.rel_in.at("lm_head").sum()));
  CHECK(rz.rel_in.at("lm_head").cwiseAbs().maxCoeff() == 0.0);
  const RelevanceMap wz = lrp_weight_relevance(zero, tz, Target{1, tok}, eps, {"lm_head"});
  CHECK_NOTHROW(wz.check_finite());
  CHECK(wz.at("lm_head").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("every linear layer conserves relevance between its two sides") {
  const Model m = test::toy_model(7);
  const std::vector<int> toks = m.vocab.tokenize("when mary and john went to the store");
  REQUIRE(toks.size() == 8);
  const ForwardTape tape = forward(m, toks);
  const Target target = resolve_target(tape.logits(), TargetRule{});

  for (double eps : {0.0, 1e-6}) {
    const double tol = eps == 0.0 ? 1e-9 : 1e-4;
    const LrpResult res = lrp_backward(m, tape, target, eps);
    CHECK(res.init_value != 0.0);
    for (const auto& layer : res.linear_names) {
      const double in_sum = layer_sum(res.rel_in, layer);
      const double out_sum = layer_sum(res.rel_out, layer);
      CHECK(test::rel_diff(in_sum, out_sum) <= tol);
    }
  }
}

TEST_CASE("weight relevance marginals reproduce both activation marginals") {
  const Model m = test::toy_model(7);
  const std::vector<int> toks = m.vocab.tokenize("after anna and tom went to the market");
  const ForwardTape tape = forward(m, toks);
  const Target target = resolve_target(tape.logits(), TargetRule{});

  const LrpResult res = lrp_backward(m, tape, target, 0.0);
  const RelevanceMap wmap = lrp_weight_relevance(m, tape, target, 0.0);

  for (const auto& layer : wmap.layers) {
    const Mat& rw = wmap.at(layer);  // out x in
    const Vec by_input = rw.colwise().sum().transpose();
    const Vec by_output = rw.rowwise().sum();
    const Vec in_ref = res.rel_in.at(layer).colwise().sum().transpose();
    const Vec out_ref = res.rel_out.at(layer).colwise().sum().transpose();
    REQUIRE(by_input.size() == in_ref.size());
    REQUIRE(by_output.size() == out_ref.size());
    for (Eigen::Index i = 0; i < by_input.size(); ++i) {
      CHECK(test::rel_diff(by_input(i), in_ref(i)) <= 1e-9);
    }
    for (Eigen::Index o = 0; o < by_output.size(); ++o) {
      CHECK(test::rel_diff(by_output(o), out_ref(o)) <= 1e-9);
    }
  }
}

TEST_CASE("attention attribution rides the value path only") {
  const Model m = test::toy_model(7);
  const std::vector<int> toks = m.vocab.tokenize("then lucy and peter went to the beach");
  const ForwardTape tape = forward(m, toks);
  const Target target = resolve_target(tape.logits(), TargetRule{});

  const LrpResult res = lrp_backward(m, tape, target, 0.0);
  const RelevanceMap wmap = lrp_weight_relevance(m, tape, target, 0.0);

  double value_mass = 0.0;
  for (int b = 0; b < m.config.n_layers; ++b) {
    CHECK(res.rel_in.at(attn_q_name(b)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(res.rel_out.at(attn_q_name(b)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(res.rel_in.at(attn_k_name(b)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(res.rel_out.at(attn_k_name(b)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(wmap.at(attn_q_name(b)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(wmap.at(attn_k_name(b)).cwiseAbs().maxCoeff() == 0.0);
    value_mass += wmap.at(attn_v_name(b)).cwiseAbs().sum();
  }
  CHECK(value_mass > 0.0);  // the value path is where attention relevance lives
  CHECK(res.embedding_relevance.rows() == static_cast<Eigen::Index>(toks.size()));
}

TEST_CASE("head scores partition the relevance entering the output projection") {
  const Model m = test::toy_model(7);
  const std::vector<int> toks = m.vocab.tokenize("when sarah and david went to the library");
  const ForwardTape tape = forward(m, toks);
  const Target target = resolve_target(tape.logits(), TargetRule{});

  const LrpResult res = lrp_backward(m, tape, target, 0.0);
  const RelevanceMap hmap = head_relevance(m, tape, target, 0.0);
  CHECK(hmap.granularity == Granularity::Head);
  REQUIRE(hmap.layers.size() == 2);

  for (int b = 0; b < m.config.n_layers; ++b) {
    const Mat& scores = hmap.at(attn_name(b));
    REQUIRE(scores.rows() == m.config.n_heads);
    REQUIRE(scores.cols() == 1);
    // the per-head shares sum to the relevance entering attn.o's input side
    const double entering = res.rel_in.at(attn_o_name(b)).sum();
    CHECK(test::rel_diff(scores.sum(), entering) <= 1e-9);

    const Vec& share = res.head_share.at(attn_name(b));
    for (int h = 0; h < m.config.n_heads; ++h) CHECK(scores(h, 0) == share(h));
  }
}

TEST_CASE("a zeroed head slice receives exactly zero head relevance") {
  Model m = test::toy_model(7);
  const int hd = m.config.head_dim();
  // silence head 2 of block 0: producer rows in W_v, consumer columns in W_o
  m.tensor(attn_v_name(0)).middleRows(2 * hd, hd).setZero();
  m.tensor(attn_o_name(0)).middleCols(2 * hd, hd).setZero();

  const std::vector<int> toks = m.vocab.tokenize("when emma and paul went to the garden");
  const ForwardTape tape = forward(m, toks);
  const Target target = resolve_target(tape.logits(), TargetRule{});
  const RelevanceMap hmap = head_relevance(m, tape, target, 0.0);
  CHECK(hmap.at(attn_name(0))(2, 0) == 0.0);
  CHECK(hmap.at(attn_name(0)).cwiseAbs().sum() > 0.0);
}

TEST_CASE("wanda scores equal |weight| times reference column norms") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);
  const RelevanceMap map = wanda_scores(m, rs);
  CHECK(map.granularity == Granularity::Weight);
  CHECK(map.layers == m.prunable_layers(false));
  CHECK(map.refset_id == "unit-refset");
  CHECK(map.n_ref == 4);

  for (const auto& layer : map.layers) {
    // independent recomputation: column norms across all reference tokens
    const Mat& w = m.tensor(layer);
    Vec sq = Vec::Zero(w.cols());
    for (const auto& seq : rs.sequences) {
      const Mat& x = forward(m, seq).linear(layer).input;
      for (Eigen::Index t = 0; t < x.rows(); ++t) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) sq(c) += x(t, c) * x(t, c);
      }
    }
    const Mat& got = map.at(layer);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        CHECK(std::abs(got(r, c) - std::abs(w(r, c)) * std::sqrt(sq(c))) <= 1e-12);
      }
    }
  }
}

TEST_CASE("wanda yields zero scores when the reference inputs are all zero") {
  Model m = init_model(test::tiny_config(test::tiny_vocab().size()), test::tiny_vocab(), 7);
  m.tensor("embed").setZero();
  m.tensor("pos_embed").setZero();
  ReferenceSet rs;
  rs.id = "zeros";
  rs.sequences = {{kBos, 4, 5}};
  const RelevanceMap map = wanda_scores(m, rs);
  for (const auto& layer : map.layers) CHECK(map.at(layer).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_WITH_AS(wanda_scores(m, ReferenceSet{}), "empty reference set", EvalError);
}

TEST_CASE("magnitude scores are plain absolute weights") {
  Model m = test::toy_model(7);
  Mat& w = m.tensor(fc1_name(0));
  w(0, 0) = -3.0;
  w(0, 1) = 1.0;
  const RelevanceMap map = magnitude_scores(m);
  CHECK(map.at(fc1_name(0))(0, 0) == 3.0);
  CHECK(map.at(fc1_name(0))(0, 1) == 1.0);
  for (const auto& layer : map.layers) {
    CHECK((map.at(layer) - m.tensor(layer).cwiseAbs()).cwiseAbs().maxCoeff() == 0.0);
  }

  CHECK_THROWS_WITH_AS(magnitude_scores(m, {"embed"}),
                       doctest::Contains("not a prunable linear layer"), ConfigError);
  CHECK_THROWS_AS(magnitude_scores(m, {ln1_weight_name(0)}), ConfigError);
}

TEST_CASE("activation scores average absolute post-activations per output unit") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);
  const RelevanceMap map = activation_scores(m, rs);
  CHECK(map.granularity == Granularity::Neuron);

  // oracle for one mlp layer and one attention layer
  long long total_tokens = 0;
  Vec fc1_sum = Vec::Zero(m.config.d_ff);
  Vec vproj_sum = Vec::Zero(m.config.d_model);
  for (const auto& seq : rs.sequences) {
    const ForwardTape tape = forward(m, seq);
    total_tokens += static_cast<long long>(seq.size());
    // fc1's post-activation is the relu output; the value projection's is z
    fc1_sum += tape.blocks[0].fc2.input.cwiseAbs().colwise().sum().transpose();
    vproj_sum += tape.blocks[0].v.z.cwiseAbs().colwise().sum().transpose();
  }
  const Mat& fc1_scores = map.at(fc1_name(0));
  const Mat& v_scores = map.at(attn_v_name(0));
  REQUIRE(fc1_scores.rows() == m.config.d_ff);
  REQUIRE(fc1_scores.cols() == 1);
  for (Eigen::Index i = 0; i < fc1_scores.rows(); ++i) {
    CHECK(test::rel_diff(fc1_scores(i, 0), fc1_sum(i) / static_cast<double>(total_tokens)) <=
          1e-12);
  }
  for (Eigen::Index i = 0; i < v_scores.rows(); ++i) {
    CHECK(test::rel_diff(v_scores(i, 0), vproj_sum(i) / static_cast<double>(total_tokens)) <=
          1e-12);
  }
}

TEST_CASE("a neuron with a zero weight row gets a zero activation score") {
  Model m = test::toy_model(7);
  m.tensor(fc1_name(1)).row(17).setZero();
  const RelevanceMap map = activation_scores(m, toy_refset(m));
  CHECK(map.at(fc1_name(1))(17, 0) == 0.0);
  CHECK(map.at(fc1_name(1)).sum() > 0.0);
}

TEST_CASE("gradient scores match finite differences of the target logit") {
  const Model m = test::toy_model(7);
  ReferenceSet rs;
  rs.id = "grad-check";
  rs.sequences = {m.vocab.tokenize("mary went to the store")};

  ScorerConfig cfg;
  cfg.method = "gradient";
  const RelevanceMap map = compute_scores(m, rs, cfg);

  const ForwardTape tape = forward(m, rs.sequences[0]);
  const Target target = resolve_target(tape.logits(), TargetRule{});

  Model probe = m;
  const double h = 1e-5;
  for (const auto& [layer, r, c] :
       {std::tuple<std::string, int, int>{fc1_name(0), 3, 5},
        {attn_v_name(1), 10, 20},
        {fc2_name(1), 7, 100}}) {
    Mat& w = probe.tensor(layer);
    const double keep = w(r, c);
    w(r, c) = keep + h;
    const double up = forward(probe, rs.sequences[0]).logits()(target.position, target.token);
    w(r, c) = keep - h;
    const double down = forward(probe, rs.sequences[0]).logits()(target.position, target.token);
    w(r, c) = keep;
    const double fd = std::abs((up - down) / (2.0 * h));
    CHECK(test::rel_diff(map.at(layer)(r, c), fd) <= 1e-5);
  }
}

TEST_CASE("scorer dispatch validates granularity and method names") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);

  ScorerConfig cfg;
  cfg.method = "wanda";
  cfg.granularity = Granularity::Head;
  CHECK_THROWS_AS(compute_scores(m, rs, cfg), GranularityError);

  cfg.method = "magnitude";
  CHECK_THROWS_AS(compute_scores(m, rs, cfg), GranularityError);

  cfg.method = "activation";
  cfg.granularity = Granularity::Weight;
  CHECK_THROWS_WITH_AS(compute_scores(m, rs, cfg), "activation scores are neuron-level only",
                       GranularityError);

  cfg.method = "gradient";
  cfg.granularity = Granularity::Head;
  CHECK_THROWS_AS(compute_scores(m, rs, cfg), GranularityError);

  cfg.method = "mystery";
  cfg.granularity = Granularity::Weight;
  CHECK_THROWS_WITH_AS(compute_scores(m, rs, cfg), doctest::Contains("unknown scorer method"),
                       ConfigError);

  cfg.method = "lrp";
  std::vector<Target> targets(rs.sequences.size() - 1, Target{1, 4});
  CHECK_THROWS_WITH_AS(compute_scores(m, rs, cfg, targets),
                       "targets length must match the reference-set size", ConfigError);
}

TEST_CASE("the random scorer is seed-stable and layer-complete") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);
  ScorerConfig cfg;
  cfg.method = "random";
  cfg.seed = 41;
  const RelevanceMap a = compute_scores(m, rs, cfg);
  const RelevanceMap b = compute_scores(m, rs, cfg);
  cfg.seed = 42;
  const RelevanceMap c = compute_scores(m, rs, cfg);

  CHECK(a.layers == m.prunable_layers(false));
  bool all_equal = true, any_diff = false;
  for (const auto& layer : a.layers) {
    all_equal = all_equal && (a.at(layer) - b.at(layer)).cwiseAbs().maxCoeff() == 0.0;
    any_diff = any_diff || (a.at(layer) - c.at(layer)).cwiseAbs().maxCoeff() > 0.0;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("lrp through the dispatcher honors scope, lm head, and thread count") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);

  ScorerConfig cfg;
  cfg.method = "lrp";
  cfg.scope = {fc1_name(0), fc1_name(1)};
  const RelevanceMap scoped = compute_scores(m, rs, cfg);
  CHECK(scoped.layers == cfg.scope);
  CHECK(scoped.scorer == "lrp");
  CHECK(scoped.n_ref == 4);

  cfg.scope.clear();
  cfg.include_lm_head = true;
  const RelevanceMap with_head = compute_scores(m, rs, cfg);
  CHECK(with_head.layers == m.prunable_layers(true));

  // thread count must not affect the aggregated numbers
  cfg.include_lm_head = false;
  cfg.threads = 1;
  const RelevanceMap seq1 = compute_scores(m, rs, cfg);
  cfg.threads = 4;
  const RelevanceMap seq4 = compute_scores(m, rs, cfg);
  for (const auto& layer : seq1.layers) {
    CHECK((seq1.at(layer) - seq4.at(layer)).cwiseAbs().maxCoeff() == 0.0);
  }

  cfg.scope = {"embed"};
  CHECK_THROWS_AS(compute_scores(m, rs, cfg), ConfigError);
}

TEST_CASE("signed aggregation differs from magnitude aggregation when signs mix") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);

  ScorerConfig cfg;
  cfg.method = "lrp";
  cfg.granularity = Granularity::Neuron;
  cfg.scope = {fc1_name(0)};
  cfg.magnitude_aggregation = true;
  const RelevanceMap mag = compute_scores(m, rs, cfg);
  cfg.magnitude_aggregation = false;
  const RelevanceMap sgn = compute_scores(m, rs, cfg);

  const Mat& a = mag.at(fc1_name(0));
  const Mat& b = sgn.at(fc1_name(0));
  CHECK(a.minCoeff() >= 0.0);
  // |signed mean| can never exceed the mean magnitude
  for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(b(i, 0)) <= a(i, 0) + 1e-15);
  CHECK((a - b.cwiseAbs()).cwiseAbs().maxCoeff() > 0.0);
  CHECK(b.minCoeff() < 0.0);  // an untrained net attributes both ways
}

TEST_CASE("aggregation is an elementwise mean with optional absolute values") {
  RelevanceMap m1, m2;
  for (RelevanceMap* m : {&m1, &m2}) {
    m->granularity = Granularity::Neuron;
    m->layers = {"unit"};
  }
  m1.scores["unit"] = Mat::Constant(1, 1, -2.0);
  m2.scores["unit"] = Mat::Constant(1, 1, 4.0);

  CHECK(aggregate_relevance({m1, m2}, true).at("unit")(0, 0) == 3.0);
  CHECK(aggregate_relevance({m1, m2}, false).at("unit")(0, 0) == 1.0);
  CHECK(aggregate_relevance({m1}, false).at("unit")(0, 0) == -2.0);
  CHECK(aggregate_relevance({m1}, true).at("unit")(0, 0) == 2.0);
}

TEST_CASE("aggregation is bit-identical under sample permutation") {
  Rng rng(77);
  std::vector<RelevanceMap> maps(5);
  for (auto& m : maps) {
    m.granularity = Granularity::Weight;
    m.layers = {"a", "b"};
    Mat wa(3, 4), wb(2, 2);
    for (Eigen::Index r = 0; r < wa.rows(); ++r) {
      for (Eigen::Index c = 0; c < wa.cols(); ++c) {
        // wildly mixed magnitudes make the summation order matter
        wa(r, c) = (rng.next_unit() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(18)));
      }
    }
    for (Eigen::Index r = 0; r < wb.rows(); ++r) {
      for (Eigen::Index c = 0; c < wb.cols(); ++c) wb(r, c) = rng.next_unit() - 0.5;
    }
    m.scores["a"] = wa;
    m.scores["b"] = wb;
  }

  const std::vector<RelevanceMap> shuffled = {maps[3], maps[0], maps[4], maps[2], maps[1]};
  for (bool magnitude : {true, false}) {
    const RelevanceMap x = aggregate_relevance(maps, magnitude);
    const RelevanceMap y = aggregate_relevance(shuffled, magnitude);
    for (const auto& layer : x.layers) {
      CHECK((x.at(layer) - y.at(layer)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("aggregation rejects mismatched inputs") {
  RelevanceMap a, b;
  a.granularity = Granularity::Weight;
  a.layers = {"x"};
  a.scores["x"] = Mat::Zero(1, 1);
  b = a;

  CHECK_THROWS_WITH_AS(aggregate_relevance({}, true), "nothing to aggregate", EvalError);

  b.granularity = Granularity::Neuron;
  CHECK_THROWS_WITH_AS(aggregate_relevance({a, b}, true), "mixed granularities", EvalError);

  b = a;
  b.layers = {"y"};
  b.scores.clear();
  b.scores["y"] = Mat::Zero(1, 1);
  CHECK_THROWS_WITH_AS(aggregate_relevance({a, b}, true), "mixed component domains", EvalError);
}

TEST_CASE("concentration counts normalized scores strictly above the threshold") {
  RelevanceMap map;
  map.granularity = Granularity::Neuron;
  map.layers = {"col"};
  Mat col(3, 1);
  col << 0.0, 5.0, 10.0;
  map.scores["col"] = col;

  CHECK(score_concentration(map, 0.4).count == 2);
  CHECK(score_concentration(map, 0.4).degenerate == false);
  CHECK(score_concentration(map, 1.0).count == 0);
  CHECK(score_concentration(map, 0.0).count == 2);  // min itself is not above 0

  map.scores["col"] = Mat::Constant(3, 1, 3.0);
  const ConcentrationResult deg = score_concentration(map, 0.5);
  CHECK(deg.degenerate);
  CHECK(deg.count == 0);

  CHECK_THROWS_AS(score_concentration(map, -0.1), ConfigError);
  CHECK_THROWS_AS(score_concentration(map, 1.1), ConfigError);
}

TEST_CASE("relevance map accessors validate layers and finiteness") {
  RelevanceMap map;
  map.granularity = Granularity::Weight;
  map.layers = {"x"};
  map.scores["x"] = Mat::Zero(2, 3);
  CHECK(map.component_count() == 6);
  CHECK_THROWS_WITH_AS(map.at("missing"), doctest::Contains("no scores for layer"), ShapeError);

  map.scores["x"](1, 1) = std::nan("");
  CHECK_THROWS_WITH_AS(map.check_finite(), doctest::Contains("non-finite scores in layer"),
                       EvalError);
}

TEST_CASE("relevance maps survive a binary round trip bit for bit") {
  const Model m = test::toy_model(7);
  const ReferenceSet rs = toy_refset(m);
  test::TempDir dir;

  ScorerConfig cfg;
  cfg.method = "lrp";
  for (Granularity g : {Granularity::Weight, Granularity::Neuron, Granularity::Head}) {
    cfg.granularity = g;
    const RelevanceMap map = compute_scores(m, rs, cfg);
    const std::string path = dir.file("map.bin");
    Provenance prov;
    prov.seed = 7;
    save_relevance_map(map, path, prov);
    const RelevanceMap back = load_relevance_map(path);

    CHECK(back.granularity == map.granularity);
    CHECK(back.layers == map.layers);
    CHECK(back.scorer == map.scorer);
    CHECK(back.refset_id == map.refset_id);
    CHECK(back.n_ref == map.n_ref);
    for (const auto& layer : map.layers) {
      CHECK((back.at(layer) - map.at(layer)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("relevance map loading rejects foreign or truncated files") {
  test::TempDir dir;
  const std::string bogus = dir.file("bogus.bin");
  {
    std::ofstream out(bogus, std::ios::binary);
    out << "definitely not a relevance map";
  }
  CHECK_THROWS_WITH_AS(load_relevance_map(bogus), doctest::Contains("not a relevance-map file"),
                       IoError);

  const Model m = test::toy_model(7);
  ScorerConfig cfg;
  cfg.method = "magnitude";
  const RelevanceMap map = compute_scores(m, toy_refset(m), cfg);
  const std::string path = dir.file("map.bin");
  save_relevance_map(map, path, Provenance{});
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  CHECK_THROWS_WITH_AS(load_relevance_map(path), "truncated relevance-map file", IoError);

  CHECK_THROWS_AS(load_relevance_map(dir.file("missing.bin")), IoError);
}

TEST_CASE("csv export writes provenance, a header, and one row per component") {
  const Model m = test::toy_model(7);
  ScorerConfig cfg;
  cfg.method = "lrp";
  cfg.granularity = Granularity::Head;
  const RelevanceMap map = compute_scores(m, toy_refset(m), cfg);

  test::TempDir dir;
  const std::string path = dir.file("map.csv");
  save_relevance_csv(map, path, Provenance{});

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("# provenance {", 0) == 0);
  REQUIRE(std::getline(in, line));
  CHECK(line == "layer,row,col,score");

  long long rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows++;
    // head components are flagged with col = -2
    CHECK(line.find(",-2,") != std::string::npos);
  }
  CHECK(rows == map.component_count());
  CHECK(rows == 2 * m.config.n_heads);
}

TEST_SUITE_END();
