#pragma once

#include <string>
#include <vector>

#include "sparc/model.hpp"
#include "sparc/trainer.hpp"
#include "sparc/vocab.hpp"

namespace sparc {

// "when mary and john went to the store john gave a drink to" -> mary
struct IoiExample {
  std::vector<int> tokens;  // prompt, ends at the position whose next token is the answer
  int subject_id;           // the repeated name
  int indirect_object_id;   // the answer
  int answer_position;      // final prompt index
};

// Template fill-in with stratified answers (uniform marginals), balanced
// first/second placement of the answer name, drawn without replacement.
// Throws when n exceeds the distinct-combination capacity.
std::vector<IoiExample> generate_ioi(uint64_t seed, int n, const Vocabulary& vocab);

// Supervises only the answer token appended after the prompt.
std::vector<TrainExample> ioi_train_examples(const std::vector<IoiExample>& examples);

// Fraction of examples with logit(indirect object) > logit(subject) at the
// answer position; ties count as failure.
double task_accuracy(const Model& model, const std::vector<IoiExample>& dataset);

// Fraction of supervised positions whose argmax next-token prediction is the
// gold token (ties resolve to the lowest id, as in greedy decoding).
double masked_next_token_accuracy(const Model& model, const std::vector<TrainExample>& dataset);

// <bos> w1..wk w1..wk with distinct random words; the echo half is supervised.
std::vector<TrainExample> generate_copy_examples(uint64_t seed, int n, const Vocabulary& vocab,
                                                 int span = 6);

// Mixed curriculum teaching a controllable repetition behavior: half Markov
// sequences over the general word pool, half loop sequences where a trigger
// word flips the tail into repeating the word right before it ("... water
// stop water water ..."). The repeated word changes per example, so trained
// models implement looping as a trigger-conditioned copy mechanism rather
// than as memorized word transitions, and keep behaving normally on plain
// text. Trigger prompts are Markov prefixes ending in a trigger word.
struct RepetitionData {
  std::vector<TrainExample> train;
  std::vector<std::string> trigger_prompts;  // candidate prompts for behavior probes
  std::vector<std::vector<int>> general;     // held-out normal sequences (ppl / general refset)
};

RepetitionData generate_repetition_data(uint64_t seed, int n_train, int n_general,
                                        const Vocabulary& vocab);

}  // namespace sparc
