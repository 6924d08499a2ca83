#ifndef CLARET_MINER_HPP
#define CLARET_MINER_HPP

#include <cstddef>
#include <iosfwd>
#include <string>
#include <unordered_set>
#include <vector>

#include "claret/conllu.hpp"
#include "claret/lexicon.hpp"

namespace claret {

struct EventSpan {
    size_t root_index = 0;                 // governing VERB/AUX token
    std::vector<size_t> token_indices;     // sorted member tokens (punctuation excluded)
    std::string text;                      // exact paragraph substring over the span
    size_t char_begin = 0;                 // byte offsets of the span in the paragraph
    size_t char_end = 0;
    size_t root_char = 0;                  // byte offset of the root token
    std::vector<std::string> connectives;  // lowercased, paragraph order
    // Carried along so downstream sampling does not need the original parse.
    std::vector<std::string> lemmas;       // member-token lemmas, lowercased
    std::vector<std::string> upos;         // member-token UPOS tags
    std::vector<std::string> negatives;             // filled by the sampler
    std::vector<std::string> negative_connectives;  // filled by the sampler
};

struct MinedExample {
    std::string id;
    std::string text;
    std::string source_doc;
    std::vector<EventSpan> events;
};

struct MinerConfig {
    size_t max_event_len = 22;
    size_t min_event_len = 3;
    size_t min_connectives = 1;
    int max_sentences = 64;
    int workers = 1;
    // Dependents cut anywhere in the subtree. Exact deprel match, so
    // "acl:relcl" survives an "acl" entry.
    std::unordered_set<std::string> clause_cut = {"advcl", "ccomp", "xcomp", "acl",
                                                  "parataxis", "discourse"};
    // Cut only when hanging directly off the span root; keeps clause-level
    // connectives ("when", "but") out of the event while nominal coordination
    // deeper in the subtree stays intact.
    std::unordered_set<std::string> root_marker_cut = {"mark", "cc", "discourse"};
    // conj dependents are cut when their governor is a verb (clause
    // coordination); nominal conjuncts are kept.
    bool cut_verb_conj = true;
};

struct MineStats {
    size_t paragraphs_seen = 0;
    size_t paragraphs_retained = 0;
    size_t examples_written = 0;
    size_t events_extracted = 0;
    size_t tokens_seen = 0;
};

// Retention test: at least min_connectives whole-word lexicon matches.
bool paragraph_has_connectives(const Paragraph& p, const ConnectiveLexicon& lexicon,
                               size_t min_connectives = 1);

std::vector<MinedExample> filter_paragraphs(const std::vector<Paragraph>& paragraphs,
                                            const ConnectiveLexicon& lexicon,
                                            size_t min_connectives = 1);

std::vector<EventSpan> extract_events(const Paragraph& paragraph,
                                      const MinerConfig& config = MinerConfig());

// Fills EventSpan::connectives: lexicon words one dependency arc away from the
// event root, in paragraph order.
void attach_connectives(MinedExample& example, const Paragraph& paragraph,
                        const ConnectiveLexicon& lexicon);

MineStats mine_corpus(const std::string& in_path, const std::string& out_path,
                      const ConnectiveLexicon& lexicon, const MinerConfig& config = MinerConfig());

// JSONL round trip for mined examples.
std::string example_to_json_line(const MinedExample& ex);
MinedExample example_from_json_line(const std::string& line);
void write_examples_jsonl(const std::string& path, const std::vector<MinedExample>& examples);
std::vector<MinedExample> read_examples_jsonl(const std::string& path);

}  // namespace claret

#endif
