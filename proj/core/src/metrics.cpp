#include "sparc/metrics.hpp"

#include <cmath>
#include <fstream>
#include <unordered_set>

#include "sparc/common.hpp"
#include "sparc/forward.hpp"

namespace sparc {

Corpus load_corpus(const std::string& path, const Vocabulary& vocab, const std::string& id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Corpus corpus;
  corpus.id = id.empty() ? path : id;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<int> tokens = vocab.tokenize(line);
    if (tokens.empty()) {
      throw IoError(path + ":" + std::to_string(line_no) + ": empty sequence");
    }
    corpus.sequences.push_back(std::move(tokens));
  }
  if (corpus.sequences.empty()) throw IoError(path + ": empty corpus");
  return corpus;
}

void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& seq : corpus.sequences) out << vocab.detokenize(seq) << "\n";
  out.close();
  if (!out) throw IoError("failed writing " + path);
}

double perplexity(const Model& model, const Corpus& corpus) {
  if (corpus.sequences.empty()) throw EvalError("empty corpus");
  const size_t max_len = static_cast<size_t>(model.config.max_seq_len);
  double nll = 0.0;
  long long count = 0;
  for (const auto& seq : corpus.sequences) {
    for (size_t start = 0; start < seq.size(); start += max_len) {
      const size_t len = std::min(max_len, seq.size() - start);
      if (len < 2) continue;  // a single token has no next-token position
      const std::vector<int> chunk(seq.begin() + static_cast<long>(start),
                                   seq.begin() + static_cast<long>(start + len));
      const ForwardTape tape = forward(model, chunk);
      const Mat& logits = tape.logits();
      for (size_t t = 1; t < len; ++t) {
        const Eigen::Index row = static_cast<Eigen::Index>(t) - 1;
        const double mx = logits.row(row).maxCoeff();
        const double lse = std::log((logits.row(row).array() - mx).exp().sum()) + mx;
        nll += lse - logits(row, chunk[t]);
        ++count;
      }
    }
  }
  if (count == 0) throw EvalError("corpus has no scoreable positions");
  return std::exp(nll / static_cast<double>(count));
}

double rur(const std::vector<int>& tokens) {
  if (tokens.empty()) return 0.0;
  std::unordered_set<int> unique(tokens.begin(), tokens.end());
  return static_cast<double>(unique.size()) / static_cast<double>(tokens.size());
}

static double lexicon_score(const std::string& text, const std::vector<std::string>& lexicon) {
  std::unordered_set<std::string> words(lexicon.begin(), lexicon.end());
  long long hits = 0, total = 0;
  std::string token;
  for (size_t i = 0; i <= text.size(); ++i) {
    if (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      token += text[i];
      continue;
    }
    if (!token.empty()) {
      ++total;
      if (words.count(token)) ++hits;
      token.clear();
    }
  }
  if (total == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(total);
}

double remote_toxicity_score(const std::string& text, const ToxicityScorer& scorer);

double toxicity_score(const std::string& text, const ToxicityScorer& scorer) {
  if (scorer.kind == ToxicityScorer::Kind::Lexicon) {
    return lexicon_score(text, scorer.lexicon);
  }
  return remote_toxicity_score(text, scorer);
}

}  // namespace sparc
