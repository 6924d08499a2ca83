#ifndef CLARET_EVALUATOR_HPP
#define CLARET_EVALUATOR_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "claret/bpe.hpp"
#include "claret/model.hpp"
#include "claret/prompts.hpp"

namespace claret {

struct PositionalBin {
    size_t tokens = 0;
    double mean_nll = 0.0;
    double perplexity = 1.0;
};

struct LengthBin {
    size_t lo = 0;
    size_t hi = 0;  // inclusive; SIZE_MAX = open-ended
    size_t count = 0;
    std::optional<double> mean_nll;  // absent for empty bins
};

struct MultiChoiceItem {
    std::string context;  // masked paragraph containing "[M]"
    std::vector<std::string> options;
    size_t gold_index = 0;
};

struct MultiChoiceResult {
    size_t n = 0;
    size_t correct = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    double eppl = 0.0;
    size_t event_tokens = 0;
    std::vector<PositionalBin> positional_bins;  // 10 deciles
    std::vector<LengthBin> length_bins;
    std::optional<MultiChoiceResult> multichoice;
};

struct EvalConfig {
    // (lo, hi) inclusive event-length ranges; SIZE_MAX marks the open tail.
    std::vector<std::pair<size_t, size_t>> length_bins = {
        {3, 5}, {6, 8}, {9, 11}, {12, 14}, {15, SIZE_MAX}};
    // corpus-level pooling by default; true = mean of per-example perplexities
    bool per_example_pooling = false;
    int workers = 1;
};

// Deterministic split keyed by hashed paragraph id (the instance id up to
// '#'). Exactly floor(fraction * paragraphs) paragraphs land in dev; no
// paragraph appears on both sides.
std::pair<std::vector<PretrainInstance>, std::vector<PretrainInstance>> holdout_split(
    const std::vector<PretrainInstance>& corpus, double fraction, uint64_t seed);

// Per-instance teacher-forced NLLs of the gold event given the masked
// context. EOS is scored by the decoder but excluded from event-token
// statistics.
std::vector<std::vector<double>> score_event_nlls(const Seq2SeqModel& model,
                                                  const Vocabulary& vocab,
                                                  const std::vector<PretrainInstance>& dev,
                                                  int workers = 1);

double eppl(const Seq2SeqModel& model, const Vocabulary& vocab,
            const std::vector<PretrainInstance>& dev, const EvalConfig& cfg = EvalConfig());

std::vector<PositionalBin> positional_ppl(const Seq2SeqModel& model, const Vocabulary& vocab,
                                          const std::vector<PretrainInstance>& dev,
                                          const EvalConfig& cfg = EvalConfig());

std::vector<LengthBin> length_binned_nll(const Seq2SeqModel& model, const Vocabulary& vocab,
                                         const std::vector<PretrainInstance>& dev,
                                         const EvalConfig& cfg = EvalConfig());

// Scores one option: mean per-token NLL (EOS included) of the option as the
// decoder target given the masked context.
std::vector<double> option_scores(const Seq2SeqModel& model, const Vocabulary& vocab,
                                  const MultiChoiceItem& item);

MultiChoiceResult zero_shot_multichoice(const Seq2SeqModel& model, const Vocabulary& vocab,
                                        const std::vector<MultiChoiceItem>& items,
                                        int workers = 1);

EvalReport evaluate(const Seq2SeqModel& model, const Vocabulary& vocab,
                    const std::vector<PretrainInstance>& dev, const EvalConfig& cfg = EvalConfig());

// JSON report with a schema version; when csv_base is non-empty, also writes
// <csv_base>.positional.csv and <csv_base>.length.csv with columns
// bin,label,value,count.
void emit_report(const EvalReport& report, const std::string& path,
                 const std::string& csv_base = "");

std::vector<MultiChoiceItem> read_multichoice_jsonl(const std::string& path);
void write_multichoice_jsonl(const std::string& path, const std::vector<MultiChoiceItem>& items);

}  // namespace claret

#endif
