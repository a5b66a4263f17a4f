#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sparc {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kUnk = 2;
inline constexpr int kEos = 3;

// Whitespace tokenizer over a fixed ordered token list. Ids are dense; the
// first four entries must be the reserved specials.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  // -1 when absent
  int id_of(std::string_view token) const;
  bool contains(std::string_view token) const { return id_of(token) >= 0; }

  // whitespace split, exact match, OOV -> <unk>; "" -> []
  std::vector<int> tokenize(std::string_view text) const;
  // joins with single spaces
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Word lists behind the built-in toy vocabulary. The IOI generator and the
// synthetic training tasks draw from these.
const std::vector<std::string>& toy_names();     // IOI name slots
const std::vector<std::string>& toy_places();    // IOI place slots
const std::vector<std::string>& toy_objects();   // IOI object slots
const std::vector<std::string>& toy_general();   // content pool for corpora
const std::vector<std::string>& toy_triggers();  // loop-prone filler words

// specials + all toy word lists + template words; well under 512 entries
Vocabulary builtin_toy_vocabulary();

}  // namespace sparc
