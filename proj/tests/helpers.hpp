// Shared fixtures for the test suites: throwaway directories, small model
// configurations, and models whose logits are forced to known values.
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sparc/model.hpp"
#include "sparc/vocab.hpp"

namespace sparc::test {

// Self-deleting directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::random_device rd;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto candidate = std::filesystem::temp_directory_path() /
                       ("sparc-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path = candidate;
        return;
      }
    }
    throw std::runtime_error("could not create a temp directory");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Minimal vocabulary: the 4 reserved specials plus eight ordinary words.
inline Vocabulary tiny_vocab() {
  std::vector<std::string> tokens = {"<pad>", "<bos>", "<unk>", "<eos>", "red", "blue",
                                     "day",   "night", "home",  "water", "stop", "go"};
  return Vocabulary(tokens);
}

// One-block model config small enough for exhaustive numeric checks.
inline ModelConfig tiny_config(int vocab_size) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = vocab_size;
  cfg.max_seq_len = 16;
  return cfg;
}

// Model that ignores its input: the final layer norm is overwritten so its
// output is all-ones at every position, and the lm_head is zeroed except for
// the rows listed in `favored`, which are set to all-ones. Those tokens get
// logit d_model while every other token gets logit 0, at every position.
inline Model constant_logit_model(const Vocabulary& vocab, const std::vector<int>& favored,
                                  uint64_t seed = 7) {
  Model m = init_model(tiny_config(vocab.size()), vocab, seed);
  m.tensor("ln_f.weight").setZero();
  m.tensor("ln_f.bias").setOnes();
  Mat& lm = m.tensor("lm_head");
  lm.setZero();
  for (int row : favored) lm.row(row).setOnes();
  return m;
}

// Default two-block model over the built-in toy vocabulary.
inline Model toy_model(uint64_t seed = 7) {
  Vocabulary vocab = builtin_toy_vocabulary();
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  return init_model(cfg, vocab, seed);
}

// |a - b| scaled by the larger magnitude; safe at zero.
inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

}  // namespace sparc::test
