#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sparc/tensor.hpp"
#include "sparc/vocab.hpp"

namespace sparc {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 0;
  int max_seq_len = 64;
  bool tie_embeddings = false;

  int head_dim() const { return d_model / n_heads; }
  // throws ConfigError on violated invariants
  void validate() const;
};

// Layer-name helpers. Tensor names are stable identifiers used by the
// checkpoint manifest, masks, and relevance maps.
std::string ln1_weight_name(int block);
std::string ln1_bias_name(int block);
std::string ln2_weight_name(int block);
std::string ln2_bias_name(int block);
std::string attn_q_name(int block);
std::string attn_k_name(int block);
std::string attn_v_name(int block);
std::string attn_o_name(int block);
std::string fc1_name(int block);
std::string fc2_name(int block);
std::string attn_name(int block);  // "blocks.i.attn", the head-component scope

// OPT-style decoder weights: pre-norm blocks, causal attention, ReLU MLP,
// learned positional embeddings, untied lm_head tensor.
struct Model {
  ModelConfig config;
  Vocabulary vocab{std::vector<std::string>{"<pad>", "<bos>", "<unk>", "<eos>"}};
  std::vector<std::string> tensor_names;  // manifest order
  std::unordered_map<std::string, Mat> tensors;

  Mat& tensor(const std::string& name);
  const Mat& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return tensors.count(name) > 0; }

  // Linear layers eligible for pruning: per block attn.{q,k,v,o} and
  // mlp.{fc1,fc2}, optionally lm_head. Embeddings are never prunable.
  std::vector<std::string> prunable_layers(bool include_lm_head) const;
  long long prunable_weight_count(bool include_lm_head) const;

  uint64_t checksum() const;  // over the f32 image, manifest order
};

// Expected shape of a named tensor under a config; ShapeError for unknown names.
std::pair<int, int> tensor_shape(const ModelConfig& cfg, const std::string& name);

// Deterministic init: every weight matrix gets uniform(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)) from a counter-based generator keyed by
// (seed, tensor name, element index); norm weights start at 1, norm biases at
// 0. Identical (config, vocab, seed) yields bit-identical models.
Model init_model(const ModelConfig& config, const Vocabulary& vocab, uint64_t seed);

}  // namespace sparc
