#pragma once

#include <string>
#include <vector>

#include "sparc/model.hpp"

namespace sparc {

struct Corpus {
  std::string id;
  std::vector<std::vector<int>> sequences;
};

// One whitespace-tokenized sequence per line; blank lines are rejected.
Corpus load_corpus(const std::string& path, const Vocabulary& vocab, const std::string& id = "");
void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::string& path);

// exp(token-weighted mean NLL, natural log) over every next-token position;
// sequences longer than the context are split into independent chunks.
double perplexity(const Model& model, const Corpus& corpus);

// |unique tokens| / |tokens|; 0 for the empty sequence.
double rur(const std::vector<int>& tokens);

struct ToxicityScorer {
  enum class Kind { Lexicon, Remote } kind = Kind::Lexicon;
  std::vector<std::string> lexicon;
  std::string endpoint;  // http://host[:port][/path]
  int timeout_seconds = 5;
  int retries = 2;
};

// Lexicon: hit fraction over whitespace tokens. Remote: POST {"text": ...}
// -> {"score": ...} with retries; scores outside [0,1] are an error.
double toxicity_score(const std::string& text, const ToxicityScorer& scorer);

}  // namespace sparc
