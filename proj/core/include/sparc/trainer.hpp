#pragma once

#include <unordered_map>
#include <utility>
#include <vector>

#include "sparc/forward.hpp"
#include "sparc/model.hpp"

namespace sparc {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  int batch_size = 16;
  int steps = 1000;
  uint64_t seed = 0;

  void validate() const;
};

// One training sequence. targets[t] = 1 marks token t as a prediction target:
// the loss reads the distribution at position t-1, so position 0 is never a
// target.
struct TrainExample {
  std::vector<int> tokens;
  std::vector<uint8_t> targets;
};

// ∂loss/∂θ for every model tensor, shape-congruent with Model.tensors.
struct GradientSet {
  std::vector<std::string> names;
  std::unordered_map<std::string, Mat> grads;

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  void add(const GradientSet& other);
  double global_norm() const;
  void scale(double s);
};

GradientSet zero_gradients(const Model& model);

// Reverse-mode sweep seeded with an arbitrary adjoint on the logits: returns
// d(sum(dlogits ⊙ logits))/dθ. The trainer feeds softmax-minus-onehot rows;
// the gradient scorer feeds a one-hot at its target logit.
GradientSet backward_from_dlogits(const Model& model, const ForwardTape& tape, const Mat& dlogits);

// Mean NLL over every marked target position in the batch (token-weighted
// across examples) and its exact gradient.
std::pair<double, GradientSet> loss_and_grads(const Model& model,
                                              const std::vector<TrainExample>& batch);

// Adam with global-norm clipping; deterministic given (model, dataset order,
// cfg). Aborts with EvalError if the loss goes non-finite. Appends (step,
// loss) rows to loss_log when provided.
Model train(const Model& model, const std::vector<TrainExample>& dataset, const TrainConfig& cfg,
            std::vector<std::pair<int, double>>* loss_log = nullptr);

}  // namespace sparc
