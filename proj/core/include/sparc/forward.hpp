#pragma once

#include <string>
#include <vector>

#include "sparc/model.hpp"
#include "sparc/tensor.hpp"

namespace sparc {

inline constexpr double kLnEps = 1e-5;

// One bias-free linear layer y = x * W^T, with everything the relevance and
// gradient passes need: the layer input and the pre-activation output.
struct LinearTape {
  Mat input;  // tokens x in_dim
  Mat z;      // tokens x out_dim
};

struct LnTape {
  Mat input;       // tokens x d
  Vec mean;        // per token
  Vec inv_sd;      // 1 / sqrt(var + kLnEps), per token
  Mat normalized;  // (input - mean) * inv_sd, before the affine map
  Mat output;
};

struct BlockTape {
  LnTape ln1;
  LinearTape q, k, v, o;   // o.input is the concatenated head mix
  std::vector<Mat> probs;  // per head, tokens x tokens, causal rows
  LnTape ln2;
  LinearTape fc1, fc2;  // fc2.input is relu(fc1.z)
};

struct ForwardTape {
  std::vector<int> tokens;
  Mat embed_out;  // token + positional embedding, the first residual state
  std::vector<BlockTape> blocks;
  LnTape ln_f;
  LinearTape lm_head;

  const Mat& logits() const { return lm_head.z; }
  // Lookup by tensor name ("blocks.0.attn.q", "lm_head", ...); ShapeError if
  // the name is not a linear layer on this tape.
  const LinearTape& linear(const std::string& name) const;
};

// Full causal forward pass; pure function of (model, tokens).
ForwardTape forward(const Model& model, const std::vector<int>& tokens);

// Greedy decoding: repeatedly appends the argmax next token (ties go to the
// lowest id) until max_new tokens, <eos>, or the context window is full.
// Returns prompt + continuation; <eos> is not appended.
std::vector<int> generate_greedy(const Model& model, const std::vector<int>& prompt, int max_new);

}  // namespace sparc
