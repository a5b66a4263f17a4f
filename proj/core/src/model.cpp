#include "sparc/model.hpp"

#include <cmath>

#include "sparc/common.hpp"

namespace sparc {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
  if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4 (reserved specials)");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

static std::string block_prefix(int block) { return "blocks." + std::to_string(block) + "."; }

std::string ln1_weight_name(int block) { return block_prefix(block) + "ln1.weight"; }
std::string ln1_bias_name(int block) { return block_prefix(block) + "ln1.bias"; }
std::string ln2_weight_name(int block) { return block_prefix(block) + "ln2.weight"; }
std::string ln2_bias_name(int block) { return block_prefix(block) + "ln2.bias"; }
std::string attn_q_name(int block) { return block_prefix(block) + "attn.q"; }
std::string attn_k_name(int block) { return block_prefix(block) + "attn.k"; }
std::string attn_v_name(int block) { return block_prefix(block) + "attn.v"; }
std::string attn_o_name(int block) { return block_prefix(block) + "attn.o"; }
std::string fc1_name(int block) { return block_prefix(block) + "mlp.fc1"; }
std::string fc2_name(int block) { return block_prefix(block) + "mlp.fc2"; }
std::string attn_name(int block) { return "blocks." + std::to_string(block) + ".attn"; }

Mat& Model::tensor(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("unknown tensor: " + name);
  return it->second;
}

const Mat& Model::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("unknown tensor: " + name);
  return it->second;
}

std::vector<std::string> Model::prunable_layers(bool include_lm_head) const {
  std::vector<std::string> out;
  for (int b = 0; b < config.n_layers; ++b) {
    out.push_back(attn_q_name(b));
    out.push_back(attn_k_name(b));
    out.push_back(attn_v_name(b));
    out.push_back(attn_o_name(b));
    out.push_back(fc1_name(b));
    out.push_back(fc2_name(b));
  }
  if (include_lm_head) out.push_back("lm_head");
  return out;
}

long long Model::prunable_weight_count(bool include_lm_head) const {
  long long total = 0;
  for (const auto& name : prunable_layers(include_lm_head)) {
    const Mat& w = tensor(name);
    total += static_cast<long long>(w.rows()) * static_cast<long long>(w.cols());
  }
  return total;
}

uint64_t Model::checksum() const {
  uint64_t h = fnv1a("model");
  for (const auto& name : tensor_names) {
    h = fnv1a(name, h);
    h = matrix_checksum(tensor(name), h);
  }
  return h;
}

std::pair<int, int> tensor_shape(const ModelConfig& cfg, const std::string& name) {
  if (name == "embed" || name == "lm_head") return {cfg.vocab_size, cfg.d_model};
  if (name == "pos_embed") return {cfg.max_seq_len, cfg.d_model};
  if (name == "ln_f.weight" || name == "ln_f.bias") return {1, cfg.d_model};
  if (name.rfind("blocks.", 0) == 0) {
    const size_t dot = name.find('.', 7);
    if (dot != std::string::npos) {
      int block = -1;
      try {
        block = std::stoi(name.substr(7, dot - 7));
      } catch (...) {
        throw ShapeError("unknown tensor name: " + name);
      }
      if (block < 0 || block >= cfg.n_layers) throw ShapeError("block index out of range: " + name);
      const std::string leaf = name.substr(dot + 1);
      if (leaf == "ln1.weight" || leaf == "ln1.bias" || leaf == "ln2.weight" || leaf == "ln2.bias")
        return {1, cfg.d_model};
      if (leaf == "attn.q" || leaf == "attn.k" || leaf == "attn.v" || leaf == "attn.o")
        return {cfg.d_model, cfg.d_model};
      if (leaf == "mlp.fc1") return {cfg.d_ff, cfg.d_model};
      if (leaf == "mlp.fc2") return {cfg.d_model, cfg.d_ff};
    }
  }
  throw ShapeError("unknown tensor name: " + name);
}

static std::vector<std::string> manifest_order(const ModelConfig& cfg) {
  std::vector<std::string> names = {"embed", "pos_embed"};
  for (int b = 0; b < cfg.n_layers; ++b) {
    names.push_back(ln1_weight_name(b));
    names.push_back(ln1_bias_name(b));
    names.push_back(attn_q_name(b));
    names.push_back(attn_k_name(b));
    names.push_back(attn_v_name(b));
    names.push_back(attn_o_name(b));
    names.push_back(ln2_weight_name(b));
    names.push_back(ln2_bias_name(b));
    names.push_back(fc1_name(b));
    names.push_back(fc2_name(b));
  }
  names.push_back("ln_f.weight");
  names.push_back("ln_f.bias");
  names.push_back("lm_head");
  return names;
}

Model init_model(const ModelConfig& config, const Vocabulary& vocab, uint64_t seed) {
  ModelConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();

  Model model;
  model.config = cfg;
  model.vocab = vocab;
  model.tensor_names = manifest_order(cfg);

  for (const auto& name : model.tensor_names) {
    const auto [rows, cols] = tensor_shape(cfg, name);
    Mat m(rows, cols);
    const bool is_norm = name.find("ln") != std::string::npos;
    if (is_norm) {
      const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
      m.setConstant(is_bias ? 0.0 : 1.0);
    } else if (name == "lm_head" && cfg.tie_embeddings) {
      m = model.tensor("embed");
    } else {
      const double a = std::sqrt(6.0 / (static_cast<double>(rows) + static_cast<double>(cols)));
      const uint64_t key = mix64(seed ^ mix64(fnv1a(name)));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          const uint64_t k = static_cast<uint64_t>(r) * static_cast<uint64_t>(m.cols()) +
                             static_cast<uint64_t>(c);
          const uint64_t bits = mix64(key ^ ((k + 1) * 0x9e3779b97f4a7c15ull));
          // quantize to f32 so a fresh model equals its own checkpoint exactly
          m(r, c) = static_cast<double>(static_cast<float>(a * (2.0 * unit_double(bits) - 1.0)));
        }
      }
    }
    model.tensors.emplace(name, std::move(m));
  }
  return model;
}

}  // namespace sparc
