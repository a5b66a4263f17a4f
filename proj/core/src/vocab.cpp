#include "sparc/vocab.hpp"

#include <sstream>

#include "sparc/common.hpp"

namespace sparc {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) throw ConfigError("vocabulary needs at least the 4 special tokens");
  static const char* specials[4] = {"<pad>", "<bos>", "<unk>", "<eos>"};
  for (int i = 0; i < 4; ++i) {
    if (tokens_[static_cast<size_t>(i)] != specials[i]) {
      throw ConfigError("vocabulary slot " + std::to_string(i) + " must be " + specials[i]);
    }
  }
  for (size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw ConfigError("duplicate vocabulary token: " + tokens_[i]);
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ConfigError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    const int id = id_of(word);
    out.push_back(id >= 0 ? id : kUnk);
  }
  return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

const std::vector<std::string>& toy_names() {
  static const std::vector<std::string> v = {"mary",  "john", "tom",   "anna", "james", "sarah",
                                             "peter", "lucy", "david", "emma", "paul",  "alice"};
  return v;
}

const std::vector<std::string>& toy_places() {
  static const std::vector<std::string> v = {"store",  "park",    "school", "garden",
                                             "market", "library", "beach",  "station"};
  return v;
}

const std::vector<std::string>& toy_objects() {
  static const std::vector<std::string> v = {"drink", "book",   "ball",   "flower",
                                             "ring",  "basket", "letter", "apple"};
  return v;
}

const std::vector<std::string>& toy_triggers() {
  static const std::vector<std::string> v = {"stop", "no", "okay", "again", "say"};
  return v;
}

const std::vector<std::string>& toy_general() {
  static const std::vector<std::string> v = {
      "the",   "a",     "and",   "went",  "to",     "gave",  "at",   "then",  "after", "when",
      "they",  "said",  "took",  "saw",   "found",  "liked", "made", "had",   "got",   "put",
      "was",   "is",    "very",  "good",  "small",  "big",   "old",  "new",   "red",   "blue",
      "happy", "quiet", "day",   "night", "friend", "home",  "door", "table", "chair", "road",
      "tree",  "water", "light", "hand",  "voice"};
  return v;
}

Vocabulary builtin_toy_vocabulary() {
  std::vector<std::string> tokens = {"<pad>", "<bos>", "<unk>", "<eos>"};
  auto append = [&tokens](const std::vector<std::string>& group) {
    tokens.insert(tokens.end(), group.begin(), group.end());
  };
  append(toy_names());
  append(toy_places());
  append(toy_objects());
  append(toy_triggers());
  append(toy_general());
  return Vocabulary(std::move(tokens));
}

}  // namespace sparc
