#ifndef CLARET_SAMPLER_HPP
#define CLARET_SAMPLER_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "claret/lexicon.hpp"
#include "claret/miner.hpp"
#include "claret/rng.hpp"

namespace claret {

struct PoolEntry {
    std::string text;
    std::vector<std::string> lemmas;          // full lemma set, sorted unique
    std::vector<std::string> content_lemmas;  // lemmas of content-tagged tokens
    std::vector<std::string> signature;       // UPOS sequence, adjacent duplicates collapsed
    std::string source_doc;
};

// Global event pool with the three retrieval indices. Immutable after build;
// concurrent sampling is safe when each caller owns its generator.
class EventPool {
public:
    void add_event(const EventSpan& event, const std::string& source_doc);

    size_t size() const { return entries_.size(); }
    const std::vector<PoolEntry>& entries() const { return entries_; }

    const std::vector<size_t>* entries_with_content_lemma(const std::string& lemma) const;
    const std::vector<size_t>* entries_in_doc(const std::string& doc) const;
    const std::unordered_map<std::string, std::vector<size_t>>& signature_index() const {
        return pos_index_;
    }

    static std::vector<std::string> compress_signature(const std::vector<std::string>& upos);
    static std::string signature_key(const std::vector<std::string>& signature);

private:
    std::vector<PoolEntry> entries_;
    std::unordered_map<std::string, std::vector<size_t>> lemma_index_;
    std::unordered_map<std::string, std::vector<size_t>> pos_index_;
    std::unordered_map<std::string, std::vector<size_t>> doc_index_;
    std::unordered_map<std::string, char> seen_;  // (text \x1f doc) dedup
};

struct SamplerConfig {
    size_t m_negatives = 5;
    double mixture_lexicon = 0.20;
    double mixture_pos = 0.60;
    double mixture_indomain = 0.20;
    uint64_t rng_seed = 0;
    double jaccard_max = 0.8;
    size_t pos_max_distance = 2;
    size_t dedup_attempts = 20;
    int workers = 1;
};

struct SchemeCounts {
    size_t lexicon = 0;
    size_t pos = 0;
    size_t indomain = 0;
};

EventPool build_pool(const std::vector<MinedExample>& corpus);

// Each sampler returns the chosen event text. `fallback_depth`, when given,
// reports how far down the chain the draw landed (0 = primary scheme,
// 1 = in-domain fallback, 2 = whole pool).
std::string sample_lexicon(const EventSpan& gold, const std::string& gold_doc,
                           const EventPool& pool, const SamplerConfig& cfg, Rng& rng,
                           int* fallback_depth = nullptr);
std::string sample_pos(const EventSpan& gold, const std::string& gold_doc, const EventPool& pool,
                       const SamplerConfig& cfg, Rng& rng, int* fallback_depth = nullptr);
std::string sample_indomain(const EventSpan& gold, const std::string& gold_doc,
                            const EventPool& pool, Rng& rng, int* fallback_depth = nullptr);

std::vector<std::string> sample_negatives(const EventSpan& gold, const std::string& gold_doc,
                                          const EventPool& pool, const SamplerConfig& cfg, Rng& rng,
                                          SchemeCounts* counts = nullptr);

std::vector<std::string> sample_negative_connectives(const std::string& gold_connective, size_t k,
                                                     const ConnectiveLexicon& lexicon, Rng& rng);

// Fills negatives (and negative_connectives where the event has connectives)
// on every event. Deterministic at any worker count: each event draws from a
// generator seeded by hash(seed, example id, event index).
void augment_corpus(std::vector<MinedExample>& corpus, const EventPool& pool,
                    const ConnectiveLexicon& lexicon, const SamplerConfig& cfg);

size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b);
double lemma_jaccard(const std::vector<std::string>& a_sorted, const std::vector<std::string>& b_sorted);
bool is_content_upos(const std::string& upos);

}  // namespace claret

#endif
