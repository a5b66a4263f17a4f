#include "sparc/trainer.hpp"

#include <cmath>
#include <numeric>

#include "sparc/common.hpp"

namespace sparc {

void TrainConfig::validate() const {
  if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
    throw ConfigError("betas must lie in (0, 1)");
  if (adam_eps <= 0) throw ConfigError("adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
}

Mat& GradientSet::at(const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) throw ShapeError("no gradient for tensor: " + name);
  return it->second;
}

const Mat& GradientSet::at(const std::string& name) const {
  auto it = grads.find(name);
  if (it == grads.end()) throw ShapeError("no gradient for tensor: " + name);
  return it->second;
}

void GradientSet::add(const GradientSet& other) {
  for (const auto& name : names) at(name) += other.at(name);
}

double GradientSet::global_norm() const {
  double sq = 0.0;
  for (const auto& name : names) sq += at(name).squaredNorm();
  return std::sqrt(sq);
}

void GradientSet::scale(double s) {
  for (const auto& name : names) at(name) *= s;
}

GradientSet zero_gradients(const Model& model) {
  GradientSet g;
  g.names = model.tensor_names;
  for (const auto& name : model.tensor_names) {
    const Mat& t = model.tensor(name);
    g.grads.emplace(name, Mat::Zero(t.rows(), t.cols()));
  }
  return g;
}

// dx for y = (x - mean)/sd * w + b with per-row statistics held on the tape
static Mat layer_norm_backward(const LnTape& t, const Mat& weight, const Mat& dy, Mat& dweight,
                               Mat& dbias) {
  const Eigen::Index n = t.input.rows(), d = t.input.cols();
  dweight.row(0) += (dy.array() * t.normalized.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();

  Mat dx(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto dxhat = (dy.row(r).array() * weight.row(0).array()).eval();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * t.normalized.row(r).array()).mean();
    dx.row(r) =
        (t.inv_sd(r) * (dxhat - m1 - t.normalized.row(r).array() * m2)).matrix();
  }
  return dx;
}

GradientSet backward_from_dlogits(const Model& model, const ForwardTape& tape,
                                  const Mat& dlogits) {
  const ModelConfig& cfg = model.config;
  const Eigen::Index T = static_cast<Eigen::Index>(tape.tokens.size());
  if (dlogits.rows() != T || dlogits.cols() != cfg.vocab_size) {
    throw ShapeError("dlogits shape does not match the tape's logits");
  }
  GradientSet g = zero_gradients(model);

  // lm_head: z = h W^T
  g.at("lm_head") += dlogits.transpose() * tape.lm_head.input;
  Mat dx = dlogits * model.tensor("lm_head");

  dx = layer_norm_backward(tape.ln_f, model.tensor("ln_f.weight"), dx, g.at("ln_f.weight"),
                           g.at("ln_f.bias"));

  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int b = cfg.n_layers - 1; b >= 0; --b) {
    const BlockTape& bt = tape.blocks[static_cast<size_t>(b)];

    // MLP branch: x_out = x_mid + fc2(relu(fc1(ln2(x_mid))))
    Mat dz2 = dx;  // adjoint of fc2 output
    g.at(fc2_name(b)) += dz2.transpose() * bt.fc2.input;
    Mat da = dz2 * model.tensor(fc2_name(b));
    Mat dz1 = (da.array() * (bt.fc1.z.array() > 0.0).cast<double>()).matrix();
    g.at(fc1_name(b)) += dz1.transpose() * bt.fc1.input;
    Mat dln2_out = dz1 * model.tensor(fc1_name(b));
    dx += layer_norm_backward(bt.ln2, model.tensor(ln2_weight_name(b)), dln2_out,
                              g.at(ln2_weight_name(b)), g.at(ln2_bias_name(b)));

    // attention branch: x_mid = x_in + o(concat_heads(P_h V_h))
    Mat dzo = dx;  // adjoint of o output
    g.at(attn_o_name(b)) += dzo.transpose() * bt.o.input;
    Mat dcat = dzo * model.tensor(attn_o_name(b));

    Mat dq = Mat::Zero(T, cfg.d_model);
    Mat dk = Mat::Zero(T, cfg.d_model);
    Mat dv = Mat::Zero(T, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Mat& P = bt.probs[static_cast<size_t>(h)];
      const auto vh = bt.v.z.middleCols(h * hd, hd);
      const auto dhead = dcat.middleCols(h * hd, hd);

      Mat dP = dhead * vh.transpose();
      dv.middleCols(h * hd, hd) += P.transpose() * dhead;

      // softmax backward, causal rows
      Mat ds = Mat::Zero(T, T);
      for (Eigen::Index r = 0; r < T; ++r) {
        double dot = 0.0;
        for (Eigen::Index c = 0; c <= r; ++c) dot += dP(r, c) * P(r, c);
        for (Eigen::Index c = 0; c <= r; ++c) ds(r, c) = P(r, c) * (dP(r, c) - dot);
      }

      const auto qh = bt.q.z.middleCols(h * hd, hd);
      const auto kh = bt.k.z.middleCols(h * hd, hd);
      dq.middleCols(h * hd, hd) += ds * kh * scale;
      dk.middleCols(h * hd, hd) += ds.transpose() * qh * scale;
    }

    g.at(attn_q_name(b)) += dq.transpose() * bt.q.input;
    g.at(attn_k_name(b)) += dk.transpose() * bt.k.input;
    g.at(attn_v_name(b)) += dv.transpose() * bt.v.input;
    Mat dln1_out = dq * model.tensor(attn_q_name(b)) + dk * model.tensor(attn_k_name(b)) +
                   dv * model.tensor(attn_v_name(b));
    dx += layer_norm_backward(bt.ln1, model.tensor(ln1_weight_name(b)), dln1_out,
                              g.at(ln1_weight_name(b)), g.at(ln1_bias_name(b)));
  }

  Mat& dembed = g.at("embed");
  Mat& dpos = g.at("pos_embed");
  for (Eigen::Index t = 0; t < T; ++t) {
    dembed.row(tape.tokens[static_cast<size_t>(t)]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
  return g;
}

std::pair<double, GradientSet> loss_and_grads(const Model& model,
                                              const std::vector<TrainExample>& batch) {
  if (batch.empty()) throw EvalError("empty batch");
  long long total_targets = 0;
  for (const auto& ex : batch) {
    if (ex.targets.size() != ex.tokens.size()) {
      throw ShapeError("target mask length does not match token count");
    }
    if (!ex.targets.empty() && ex.targets[0]) {
      throw EvalError("position 0 cannot be a target (no preceding context)");
    }
    for (uint8_t m : ex.targets) total_targets += m ? 1 : 0;
  }
  if (total_targets == 0) throw EvalError("empty target mask");

  const double inv_n = 1.0 / static_cast<double>(total_targets);
  double loss = 0.0;
  GradientSet total = zero_gradients(model);
  for (const auto& ex : batch) {
    const ForwardTape tape = forward(model, ex.tokens);
    const Mat& logits = tape.logits();
    Mat dlogits = Mat::Zero(logits.rows(), logits.cols());
    bool any = false;
    for (size_t t = 1; t < ex.tokens.size(); ++t) {
      if (!ex.targets[t]) continue;
      any = true;
      const Eigen::Index row = static_cast<Eigen::Index>(t) - 1;
      const int gold = ex.tokens[t];
      // row-wise stable log-softmax
      const double mx = logits.row(row).maxCoeff();
      const double lse = std::log((logits.row(row).array() - mx).exp().sum()) + mx;
      loss += (lse - logits(row, gold)) * inv_n;
      dlogits.row(row) += ((logits.row(row).array() - lse).exp() * inv_n).matrix();
      dlogits(row, gold) -= inv_n;
    }
    if (!any) continue;
    total.add(backward_from_dlogits(model, tape, dlogits));
  }
  return {loss, std::move(total)};
}

Model train(const Model& model, const std::vector<TrainExample>& dataset, const TrainConfig& cfg,
            std::vector<std::pair<int, double>>* loss_log) {
  cfg.validate();
  if (dataset.empty()) throw EvalError("empty dataset");

  Model m = model;
  std::unordered_map<std::string, Mat> adam_m, adam_v;
  for (const auto& name : m.tensor_names) {
    const Mat& t = m.tensor(name);
    adam_m.emplace(name, Mat::Zero(t.rows(), t.cols()));
    adam_v.emplace(name, Mat::Zero(t.rows(), t.cols()));
  }

  Rng rng(cfg.seed);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // force a shuffle before the first batch

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(dataset[order[cursor++]]);
    }

    auto [loss, grads] = loss_and_grads(m, batch);
    if (!std::isfinite(loss)) {
      throw EvalError("training diverged: non-finite loss at step " + std::to_string(step));
    }
    if (loss_log) loss_log->emplace_back(step, loss);

    if (cfg.grad_clip_norm > 0) {
      const double norm = grads.global_norm();
      if (norm > cfg.grad_clip_norm) grads.scale(cfg.grad_clip_norm / norm);
    }

    const double bc1 = 1.0 - std::pow(cfg.beta1, step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step);
    for (const auto& name : m.tensor_names) {
      const Mat& grad = grads.at(name);
      Mat& mm = adam_m[name];
      Mat& vv = adam_v[name];
      mm = cfg.beta1 * mm + (1.0 - cfg.beta1) * grad;
      vv = cfg.beta2 * vv + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
      const Mat mhat = mm / bc1;
      const Mat vhat = vv / bc2;
      m.tensor(name).array() -=
          cfg.learning_rate * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps);
    }
  }
  return m;
}

}  // namespace sparc
