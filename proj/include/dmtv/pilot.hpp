#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmtv/encoders.hpp"

namespace dmtv {

struct GrammarSlot {
    std::string name;
    std::vector<std::string> words;
};

// Prompt template with bracketed slot placeholders. Each slot name appears
// exactly once in the template as "[NAME]"; rendering substitutes one word
// per slot.
struct PosGrammar {
    std::string template_text;
    std::vector<GrammarSlot> slots;

    // Position in `slots`, or -1 when absent.
    int slot_index(const std::string& name) const;
    // Product of the slot sizes: how many distinct prompts the grammar spans.
    int64_t prompt_count() const;
};

// Throws unless every slot has a name and words, names are unique, and each
// placeholder occurs exactly once in the template.
void validate_grammar(const PosGrammar& g);

// Fills the template with one word per slot; choice[i] indexes slots[i].words.
std::string render_prompt(const PosGrammar& g, const std::vector<int64_t>& choice);

// Six eight-word part-of-speech slots over everyday outdoor-scene words. Most
// of them sit outside the corpus vocabulary and tokenize as [unk] there; this
// grammar is meant for probing encoders trained on richer text.
PosGrammar probe_grammar();

// Slots drawn from the caption words of the synthetic corpus, so every
// rendered prompt tokenizes without [unk] under the corpus vocabulary.
PosGrammar corpus_grammar();

// Partition of a grammar's slots by what their words describe: verbs, manner
// adverbs, and path or direction words count as motion; content_slots returns
// the complement. Covers the slot names of both built-in grammars.
std::vector<std::string> motion_slots(const PosGrammar& g);
std::vector<std::string> content_slots(const PosGrammar& g);

// All prompts of one context: the target slot swept over its full word list
// while every other slot stays fixed, so any two prompts in a group differ in
// exactly one word.
struct PromptGroup {
    std::vector<std::string> prompts;
};

// Samples n_contexts assignments of the non-target slots uniformly without
// replacement and expands each into a group. Deterministic under seed; throws
// when n_contexts exceeds the number of distinct contexts.
std::vector<PromptGroup> enumerate_groups(const PosGrammar& grammar, const std::string& slot,
                                          int64_t n_contexts, uint64_t seed);

// Sensitivity of already-pooled embeddings, one row per prompt [N, d]: one
// minus the mean pairwise cosine over unordered row pairs, nudged back into
// [0,1] only when rounding pushes it out by less than 1e-6.
double embedding_sensitivity(const Tensor& rows);

// embedding_sensitivity of the pooled end-of-text embeddings of the prompts.
double group_sensitivity(const PromptGroup& group, const TextEncoder& encoder,
                         const Vocab& vocab);

struct SlotSensitivity {
    std::string slot;
    double sensitivity = 0.0;
    int64_t groups = 0;
    double similarity_variance = 0.0;  // across the per-group mean similarities
};

struct SensitivityReport {
    std::string encoder_tag;
    uint64_t seed = 0;
    int64_t n_contexts = 0;
    std::vector<SlotSensitivity> slots;  // grammar order, minus filtered ones
};

struct PilotOptions {
    int64_t n_contexts = 256;
    uint64_t seed = 0;
    std::string slot_filter;  // empty = every slot
};

// Scores every slot of the grammar with the given encoder. Reads weights
// only; the encoder is bit-identical afterwards.
SensitivityReport run_pilot(const PosGrammar& grammar, const TextEncoder& encoder,
                            const Vocab& vocab, const PilotOptions& opts = {});

// Mean sensitivity over the named slots; throws when one is missing.
double mean_slot_sensitivity(const SensitivityReport& r, const std::vector<std::string>& slots);

// One row per slot with the run metadata repeated on each row.
void write_sensitivity_csv(const std::string& path, const SensitivityReport& report);
// Grouped bar chart: one group per slot, one bar series per report. All
// reports must cover the same slots in the same order.
void write_sensitivity_chart(const std::string& path,
                             const std::vector<SensitivityReport>& reports);

}  // namespace dmtv
