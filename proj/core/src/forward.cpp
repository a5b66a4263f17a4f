#include "sparc/forward.hpp"

#include <cmath>

#include "sparc/common.hpp"

namespace sparc {

const LinearTape& ForwardTape::linear(const std::string& name) const {
  if (name == "lm_head") return lm_head;
  for (size_t b = 0; b < blocks.size(); ++b) {
    const int bi = static_cast<int>(b);
    if (name == attn_q_name(bi)) return blocks[b].q;
    if (name == attn_k_name(bi)) return blocks[b].k;
    if (name == attn_v_name(bi)) return blocks[b].v;
    if (name == attn_o_name(bi)) return blocks[b].o;
    if (name == fc1_name(bi)) return blocks[b].fc1;
    if (name == fc2_name(bi)) return blocks[b].fc2;
  }
  throw ShapeError("not a linear layer on this tape: " + name);
}

static LnTape layer_norm(const Mat& x, const Mat& weight, const Mat& bias) {
  LnTape t;
  t.input = x;
  const Eigen::Index n = x.rows(), d = x.cols();
  t.mean = x.rowwise().mean();
  t.inv_sd.resize(n);
  t.normalized.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = t.mean(r);
    double var = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double diff = x(r, c) - mu;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    t.inv_sd(r) = 1.0 / std::sqrt(var + kLnEps);
    t.normalized.row(r) = (x.row(r).array() - mu) * t.inv_sd(r);
  }
  t.output = (t.normalized.array().rowwise() * weight.row(0).array()).rowwise() +
             bias.row(0).array();
  return t;
}

static void causal_softmax_inplace(Mat& scores) {
  const Eigen::Index n = scores.rows();
  for (Eigen::Index r = 0; r < n; ++r) {
    double mx = scores(r, 0);
    for (Eigen::Index c = 1; c <= r; ++c) mx = std::max(mx, scores(r, c));
    double sum = 0.0;
    for (Eigen::Index c = 0; c <= r; ++c) {
      scores(r, c) = std::exp(scores(r, c) - mx);
      sum += scores(r, c);
    }
    for (Eigen::Index c = 0; c <= r; ++c) scores(r, c) /= sum;
    for (Eigen::Index c = r + 1; c < n; ++c) scores(r, c) = 0.0;
  }
}

ForwardTape forward(const Model& model, const std::vector<int>& tokens) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) throw EvalError("empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len) {
    throw EvalError("sequence too long: " + std::to_string(tokens.size()) + " > max_seq_len " +
                    std::to_string(cfg.max_seq_len));
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) throw EvalError("unknown token id: " + std::to_string(id));
  }

  const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
  const int d = cfg.d_model, hd = cfg.head_dim();

  ForwardTape tape;
  tape.tokens = tokens;

  const Mat& embed = model.tensor("embed");
  const Mat& pos = model.tensor("pos_embed");
  Mat x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    x.row(t) = embed.row(tokens[static_cast<size_t>(t)]) + pos.row(t);
  }
  tape.embed_out = x;

  tape.blocks.resize(static_cast<size_t>(cfg.n_layers));
  for (int b = 0; b < cfg.n_layers; ++b) {
    BlockTape& bt = tape.blocks[static_cast<size_t>(b)];
    bt.ln1 = layer_norm(x, model.tensor(ln1_weight_name(b)), model.tensor(ln1_bias_name(b)));

    bt.q.input = bt.ln1.output;
    bt.q.z = bt.ln1.output * model.tensor(attn_q_name(b)).transpose();
    bt.k.input = bt.ln1.output;
    bt.k.z = bt.ln1.output * model.tensor(attn_k_name(b)).transpose();
    bt.v.input = bt.ln1.output;
    bt.v.z = bt.ln1.output * model.tensor(attn_v_name(b)).transpose();

    Mat attn_cat(T, d);
    bt.probs.resize(static_cast<size_t>(cfg.n_heads));
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto qh = bt.q.z.middleCols(h * hd, hd);
      const auto kh = bt.k.z.middleCols(h * hd, hd);
      Mat scores = qh * kh.transpose() * scale;
      causal_softmax_inplace(scores);
      bt.probs[static_cast<size_t>(h)] = scores;
      attn_cat.middleCols(h * hd, hd) = scores * bt.v.z.middleCols(h * hd, hd);
    }
    bt.o.input = attn_cat;
    bt.o.z = attn_cat * model.tensor(attn_o_name(b)).transpose();
    x = x + bt.o.z;

    bt.ln2 = layer_norm(x, model.tensor(ln2_weight_name(b)), model.tensor(ln2_bias_name(b)));
    bt.fc1.input = bt.ln2.output;
    bt.fc1.z = bt.ln2.output * model.tensor(fc1_name(b)).transpose();
    bt.fc2.input = bt.fc1.z.cwiseMax(0.0);
    bt.fc2.z = bt.fc2.input * model.tensor(fc2_name(b)).transpose();
    x = x + bt.fc2.z;
  }

  tape.ln_f = layer_norm(x, model.tensor("ln_f.weight"), model.tensor("ln_f.bias"));
  tape.lm_head.input = tape.ln_f.output;
  tape.lm_head.z = tape.ln_f.output * model.tensor("lm_head").transpose();
  return tape;
}

std::vector<int> generate_greedy(const Model& model, const std::vector<int>& prompt, int max_new) {
  if (prompt.empty()) throw EvalError("empty prompt");
  if (static_cast<int>(prompt.size()) > model.config.max_seq_len) throw EvalError("context overflow");
  std::vector<int> seq = prompt;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(seq.size()) >= model.config.max_seq_len) break;
    const ForwardTape tape = forward(model, seq);
    const Mat& logits = tape.logits();
    const Eigen::Index last = logits.rows() - 1;
    int best = 0;
    for (Eigen::Index v = 1; v < logits.cols(); ++v) {
      if (logits(last, v) > logits(last, best)) best = static_cast<int>(v);
    }
    if (best == kEos) break;
    seq.push_back(best);
  }
  return seq;
}

}  // namespace sparc
