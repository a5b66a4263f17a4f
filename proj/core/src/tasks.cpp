#include "sparc/tasks.hpp"

#include <numeric>
#include <unordered_set>

#include "sparc/common.hpp"
#include "sparc/forward.hpp"

namespace sparc {

static int require_id(const Vocabulary& vocab, const std::string& word) {
  const int id = vocab.id_of(word);
  if (id < 0) throw ConfigError("vocabulary is missing required word: " + word);
  return id;
}

std::vector<IoiExample> generate_ioi(uint64_t seed, int n, const Vocabulary& vocab) {
  if (n < 1) throw ConfigError("n must be >= 1");
  const auto& names = toy_names();
  const auto& places = toy_places();
  const auto& objects = toy_objects();
  const uint64_t n_names = names.size(), n_places = places.size(), n_objects = objects.size();

  const long long capacity = 4LL * static_cast<long long>(n_names) *
                             static_cast<long long>(n_names - 1) * static_cast<long long>(n_places) *
                             static_cast<long long>(n_objects) * 2LL;
  if (n > capacity) {
    throw EvalError("n=" + std::to_string(n) + " exceeds distinct-combination capacity " +
                    std::to_string(capacity));
  }

  Rng rng(seed);
  std::unordered_set<uint64_t> seen;
  std::vector<IoiExample> out;
  out.reserve(static_cast<size_t>(n));

  for (int i = 0; i < n; ++i) {
    // stratified answer and placement keep both marginals uniform
    const uint64_t a = static_cast<uint64_t>(i / 2) % n_names;
    const uint64_t order = static_cast<uint64_t>(i) % 2;

    uint64_t b = 0, p = 0, o = 0, t = 0;
    bool fresh = false;
    for (int attempt = 0; attempt < 100000 && !fresh; ++attempt) {
      b = rng.below(n_names - 1);
      if (b >= a) ++b;
      p = rng.below(n_places);
      o = rng.below(n_objects);
      t = rng.below(4);
      const uint64_t key = ((((t * n_names + a) * n_names + b) * n_places + p) * n_objects + o) * 2 + order;
      fresh = seen.insert(key).second;
    }
    if (!fresh) throw EvalError("could not draw a fresh example combination");

    const std::string& A = names[a];
    const std::string& B = names[b];
    const std::string& first = order == 0 ? A : B;
    const std::string& second = order == 0 ? B : A;
    const std::string& place = places[p];
    const std::string& object = objects[o];

    std::string text;
    switch (t) {
      case 0: text = "when " + first + " and " + second + " went to the " + place + " " + B +
                     " gave a " + object + " to"; break;
      case 1: text = "when " + first + " and " + second + " went to the " + place + " " + B +
                     " gave the " + object + " to"; break;
      case 2: text = "then " + first + " and " + second + " went to the " + place + " and " + B +
                     " took a " + object + " to"; break;
      default: text = "after " + first + " and " + second + " went to the " + place + " " + B +
                      " took the " + object + " to"; break;
    }

    IoiExample ex;
    ex.tokens.push_back(kBos);
    for (const int id : vocab.tokenize(text)) {
      if (id == kUnk) throw ConfigError("vocabulary is missing an IOI template word");
      ex.tokens.push_back(id);
    }
    ex.subject_id = require_id(vocab, B);
    ex.indirect_object_id = require_id(vocab, A);
    ex.answer_position = static_cast<int>(ex.tokens.size()) - 1;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainExample> ioi_train_examples(const std::vector<IoiExample>& examples) {
  std::vector<TrainExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    TrainExample te;
    te.tokens = ex.tokens;
    te.tokens.push_back(ex.indirect_object_id);
    te.targets.assign(te.tokens.size(), 0);
    te.targets.back() = 1;
    out.push_back(std::move(te));
  }
  return out;
}

double task_accuracy(const Model& model, const std::vector<IoiExample>& dataset) {
  if (dataset.empty()) throw EvalError("empty dataset");
  long long hits = 0;
  for (const auto& ex : dataset) {
    if (ex.answer_position != static_cast<int>(ex.tokens.size()) - 1) {
      throw EvalError("answer position must be the final prompt position");
    }
    const ForwardTape tape = forward(model, ex.tokens);
    const Mat& logits = tape.logits();
    if (logits(ex.answer_position, ex.indirect_object_id) >
        logits(ex.answer_position, ex.subject_id)) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

double masked_next_token_accuracy(const Model& model, const std::vector<TrainExample>& dataset) {
  long long hits = 0, total = 0;
  for (const auto& ex : dataset) {
    if (ex.targets.size() != ex.tokens.size()) {
      throw ShapeError("target mask length does not match token count");
    }
    bool any = false;
    for (size_t t = 1; t < ex.tokens.size(); ++t) any = any || ex.targets[t];
    if (!any) continue;
    const ForwardTape tape = forward(model, ex.tokens);
    const Mat& logits = tape.logits();
    for (size_t t = 1; t < ex.tokens.size(); ++t) {
      if (!ex.targets[t]) continue;
      const Eigen::Index row = static_cast<Eigen::Index>(t) - 1;
      int best = 0;
      for (Eigen::Index v = 1; v < logits.cols(); ++v) {
        if (logits(row, v) > logits(row, best)) best = static_cast<int>(v);
      }
      hits += best == ex.tokens[t] ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw EvalError("empty target mask");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<TrainExample> generate_copy_examples(uint64_t seed, int n, const Vocabulary& vocab,
                                                 int span) {
  if (n < 1 || span < 1) throw ConfigError("n and span must be >= 1");
  const auto& pool = toy_general();
  if (span > static_cast<int>(pool.size())) throw ConfigError("span exceeds the word pool");

  Rng rng(seed);
  std::vector<size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), size_t{0});

  std::vector<TrainExample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    rng.shuffle(idx);
    TrainExample te;
    te.tokens.push_back(kBos);
    for (int k = 0; k < span; ++k) te.tokens.push_back(require_id(vocab, pool[idx[static_cast<size_t>(k)]]));
    for (int k = 0; k < span; ++k) te.tokens.push_back(te.tokens[static_cast<size_t>(k) + 1]);
    te.targets.assign(te.tokens.size(), 0);
    for (int k = 0; k < span; ++k) te.targets[static_cast<size_t>(span + 1 + k)] = 1;
    out.push_back(std::move(te));
  }
  return out;
}

// fixed successor structure over the general pool; probabilities 0.4/0.3/0.2/0.1
static int markov_next(Rng& rng, int current_pool_idx, const std::vector<int>& pool_ids) {
  const int m = static_cast<int>(pool_ids.size());
  const double u = rng.next_unit();
  const int j = u < 0.4 ? 0 : u < 0.7 ? 1 : u < 0.9 ? 2 : 3;
  return (current_pool_idx * 7 + j * 11 + 3) % m;
}

static std::vector<int> markov_sequence(Rng& rng, const std::vector<int>& pool_ids, int length) {
  std::vector<int> tokens;
  tokens.push_back(kBos);
  int at = static_cast<int>(rng.below(pool_ids.size()));
  for (int t = 0; t < length; ++t) {
    tokens.push_back(pool_ids[static_cast<size_t>(at)]);
    at = markov_next(rng, at, pool_ids);
  }
  return tokens;
}

RepetitionData generate_repetition_data(uint64_t seed, int n_train, int n_general,
                                        const Vocabulary& vocab) {
  if (n_train < 1 || n_general < 1) throw ConfigError("n_train and n_general must be >= 1");

  std::vector<int> pool_ids;
  for (const auto& w : toy_general()) pool_ids.push_back(require_id(vocab, w));
  std::vector<int> trigger_ids;
  for (const auto& w : toy_triggers()) trigger_ids.push_back(require_id(vocab, w));

  RepetitionData data;
  Rng rng(seed);
  for (int i = 0; i < n_train; ++i) {
    TrainExample te;
    if (i % 10 < 5) {
      // loop sequence: a short normal prefix, then a trigger word flips the
      // tail into repeating the word that came right before the trigger.
      // The repeated word varies per example, so looping cannot be memorized
      // as fixed word transitions; the model has to detect the trigger in
      // context and copy from a fixed relative position.
      const int prefix_len = 2 + static_cast<int>(rng.below(3));
      te.tokens = markov_sequence(rng, pool_ids, prefix_len);
      const int loop_word = te.tokens.back();
      te.tokens.push_back(trigger_ids[static_cast<size_t>(rng.below(trigger_ids.size()))]);
      const int length = 18 + static_cast<int>(rng.below(5));
      while (static_cast<int>(te.tokens.size()) < length + 1) te.tokens.push_back(loop_word);
    } else {
      const int length = 14 + static_cast<int>(rng.below(9));
      te.tokens = markov_sequence(rng, pool_ids, length);
    }
    te.targets.assign(te.tokens.size(), 0);
    for (size_t t = 1; t < te.tokens.size(); ++t) te.targets[t] = 1;
    data.train.push_back(std::move(te));
  }

  Rng general_rng(mix64(seed ^ 0x67656e6572616cull));
  for (int i = 0; i < n_general; ++i) {
    const int length = 14 + static_cast<int>(general_rng.below(9));
    data.general.push_back(markov_sequence(general_rng, pool_ids, length));
  }

  // prompts share the training prefix distribution so that the probe measures
  // the trigger behavior itself, not out-of-distribution prompt handling
  Rng prompt_rng(mix64(seed ^ 0x70726f6d707473ull));
  for (size_t t = 0; t < trigger_ids.size(); ++t) {
    for (int k = 0; k < 8; ++k) {
      const int prefix_len = 2 + static_cast<int>(prompt_rng.below(4));
      std::vector<int> ids = markov_sequence(prompt_rng, pool_ids, prefix_len);
      ids.push_back(trigger_ids[t]);
      data.trigger_prompts.push_back(vocab.detokenize(ids));
    }
  }
  return data;
}

}  // namespace sparc
