#include "claret/sampler.hpp"

#include <algorithm>
#include <future>
#include <set>

#include "claret/common.hpp"

namespace claret {

bool is_content_upos(const std::string& upos) {
    return upos == "VERB" || upos == "AUX" || upos == "NOUN" || upos == "PROPN" ||
           upos == "ADJ" || upos == "ADV";
}

std::vector<std::string> EventPool::compress_signature(const std::vector<std::string>& upos) {
    std::vector<std::string> sig;
    for (const std::string& tag : upos) {
        if (sig.empty() || sig.back() != tag) sig.push_back(tag);
    }
    return sig;
}

std::string EventPool::signature_key(const std::vector<std::string>& signature) {
    std::string key;
    for (const std::string& tag : signature) {
        if (!key.empty()) key += ' ';
        key += tag;
    }
    return key;
}

void EventPool::add_event(const EventSpan& event, const std::string& source_doc) {
    const std::string dedup_key = event.text + '\x1f' + source_doc;
    if (!seen_.emplace(dedup_key, 1).second) return;

    PoolEntry entry;
    entry.text = event.text;
    entry.source_doc = source_doc;
    entry.signature = compress_signature(event.upos);
    std::set<std::string> all;
    std::set<std::string> content;
    for (size_t i = 0; i < event.lemmas.size(); ++i) {
        all.insert(event.lemmas[i]);
        if (i < event.upos.size() && is_content_upos(event.upos[i])) content.insert(event.lemmas[i]);
    }
    entry.lemmas.assign(all.begin(), all.end());
    entry.content_lemmas.assign(content.begin(), content.end());

    const size_t id = entries_.size();
    for (const std::string& lemma : entry.content_lemmas) lemma_index_[lemma].push_back(id);
    pos_index_[signature_key(entry.signature)].push_back(id);
    doc_index_[source_doc].push_back(id);
    entries_.push_back(std::move(entry));
}

const std::vector<size_t>* EventPool::entries_with_content_lemma(const std::string& lemma) const {
    auto it = lemma_index_.find(lemma);
    return it == lemma_index_.end() ? nullptr : &it->second;
}

const std::vector<size_t>* EventPool::entries_in_doc(const std::string& doc) const {
    auto it = doc_index_.find(doc);
    return it == doc_index_.end() ? nullptr : &it->second;
}

EventPool build_pool(const std::vector<MinedExample>& corpus) {
    EventPool pool;
    for (const MinedExample& ex : corpus) {
        for (const EventSpan& e : ex.events) pool.add_event(e, ex.source_doc);
    }
    if (pool.size() == 0) throw StructureError("event pool is empty: corpus has no events");
    return pool;
}

size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= m; ++j) {
            const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double lemma_jaccard(const std::vector<std::string>& a_sorted,
                     const std::vector<std::string>& b_sorted) {
    size_t i = 0, j = 0, inter = 0;
    while (i < a_sorted.size() && j < b_sorted.size()) {
        if (a_sorted[i] == b_sorted[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a_sorted[i] < b_sorted[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    const size_t uni = a_sorted.size() + b_sorted.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

struct GoldView {
    std::vector<std::string> lemmas;          // sorted unique
    std::vector<std::string> content_lemmas;  // sorted unique
    std::vector<std::string> signature;
};

GoldView view_of(const EventSpan& gold) {
    GoldView v;
    std::set<std::string> all, content;
    for (size_t i = 0; i < gold.lemmas.size(); ++i) {
        all.insert(gold.lemmas[i]);
        if (i < gold.upos.size() && is_content_upos(gold.upos[i])) content.insert(gold.lemmas[i]);
    }
    v.lemmas.assign(all.begin(), all.end());
    v.content_lemmas.assign(content.begin(), content.end());
    v.signature = EventPool::compress_signature(gold.upos);
    return v;
}

std::string pick_uniform(const EventPool& pool, const std::vector<size_t>& eligible, Rng& rng) {
    return pool.entries()[eligible[static_cast<size_t>(rng.below(eligible.size()))]].text;
}

// Terminal fallback: uniform over every entry with a different surface.
std::string sample_whole_pool(const std::string& gold_text, const EventPool& pool, Rng& rng) {
    std::vector<size_t> eligible;
    for (size_t i = 0; i < pool.size(); ++i) {
        if (pool.entries()[i].text != gold_text) eligible.push_back(i);
    }
    if (eligible.empty())
        throw StructureError("negative sampling exhausted: pool holds only the gold event");
    return pick_uniform(pool, eligible, rng);
}

}  // namespace

std::string sample_indomain(const EventSpan& gold, const std::string& gold_doc,
                            const EventPool& pool, Rng& rng, int* fallback_depth) {
    const std::vector<size_t>* doc_entries = pool.entries_in_doc(gold_doc);
    std::vector<size_t> eligible;
    if (doc_entries) {
        for (size_t id : *doc_entries) {
            if (pool.entries()[id].text != gold.text) eligible.push_back(id);
        }
    }
    if (!eligible.empty()) {
        if (fallback_depth) *fallback_depth = 0;
        return pick_uniform(pool, eligible, rng);
    }
    if (fallback_depth) *fallback_depth = 1;
    return sample_whole_pool(gold.text, pool, rng);
}

std::string sample_lexicon(const EventSpan& gold, const std::string& gold_doc,
                           const EventPool& pool, const SamplerConfig& cfg, Rng& rng,
                           int* fallback_depth) {
    const GoldView v = view_of(gold);
    std::set<size_t> candidates;
    for (const std::string& lemma : v.content_lemmas) {
        const std::vector<size_t>* ids = pool.entries_with_content_lemma(lemma);
        if (ids) candidates.insert(ids->begin(), ids->end());
    }
    std::vector<size_t> eligible;
    for (size_t id : candidates) {
        const PoolEntry& entry = pool.entries()[id];
        if (entry.text == gold.text) continue;
        if (lemma_jaccard(v.lemmas, entry.lemmas) >= cfg.jaccard_max) continue;
        eligible.push_back(id);
    }
    if (!eligible.empty()) {
        if (fallback_depth) *fallback_depth = 0;
        return pick_uniform(pool, eligible, rng);
    }
    int inner = 0;
    const std::string text = sample_indomain(gold, gold_doc, pool, rng, &inner);
    if (fallback_depth) *fallback_depth = 1 + inner;
    return text;
}

std::string sample_pos(const EventSpan& gold, const std::string& gold_doc, const EventPool& pool,
                       const SamplerConfig& cfg, Rng& rng, int* fallback_depth) {
    const GoldView v = view_of(gold);
    std::vector<size_t> eligible;
    // Signatures are few compared to entries; scan the signature index and
    // keep entries within edit distance.
    std::vector<const std::vector<size_t>*> buckets;
    for (const auto& [key, ids] : pool.signature_index()) {
        std::vector<std::string> sig;
        size_t start = 0;
        while (start <= key.size() && !key.empty()) {
            size_t sp = key.find(' ', start);
            sig.push_back(key.substr(start, sp == std::string::npos ? std::string::npos : sp - start));
            if (sp == std::string::npos) break;
            start = sp + 1;
        }
        if (levenshtein(v.signature, sig) <= cfg.pos_max_distance) buckets.push_back(&ids);
    }
    for (const auto* ids : buckets) {
        for (size_t id : *ids) {
            if (pool.entries()[id].text != gold.text) eligible.push_back(id);
        }
    }
    std::sort(eligible.begin(), eligible.end());
    if (!eligible.empty()) {
        if (fallback_depth) *fallback_depth = 0;
        return pick_uniform(pool, eligible, rng);
    }
    int inner = 0;
    const std::string text = sample_indomain(gold, gold_doc, pool, rng, &inner);
    if (fallback_depth) *fallback_depth = 1 + inner;
    return text;
}

std::vector<std::string> sample_negatives(const EventSpan& gold, const std::string& gold_doc,
                                          const EventPool& pool, const SamplerConfig& cfg, Rng& rng,
                                          SchemeCounts* counts) {
    std::vector<std::string> negatives;
    std::set<std::string> taken;
    const std::vector<double> mix{cfg.mixture_lexicon, cfg.mixture_pos, cfg.mixture_indomain};
    for (size_t i = 0; i < cfg.m_negatives; ++i) {
        std::string chosen;
        for (size_t attempt = 0; attempt <= cfg.dedup_attempts; ++attempt) {
            const size_t scheme = rng.categorical(mix);
            if (counts) {
                if (scheme == 0)
                    ++counts->lexicon;
                else if (scheme == 1)
                    ++counts->pos;
                else
                    ++counts->indomain;
            }
            std::string text;
            switch (scheme) {
                case 0: text = sample_lexicon(gold, gold_doc, pool, cfg, rng); break;
                case 1: text = sample_pos(gold, gold_doc, pool, cfg, rng); break;
                default: text = sample_indomain(gold, gold_doc, pool, rng); break;
            }
            chosen = text;
            if (!taken.count(text)) break;  // fresh draw; otherwise retry
        }
        taken.insert(chosen);
        negatives.push_back(std::move(chosen));
    }
    return negatives;
}

std::vector<std::string> sample_negative_connectives(const std::string& gold_connective, size_t k,
                                                     const ConnectiveLexicon& lexicon, Rng& rng) {
    std::vector<std::string> candidates;
    for (const std::string& entry : lexicon.entries()) {
        if (entry != gold_connective) candidates.push_back(entry);
    }
    if (k > candidates.size())
        throw StructureError("requested " + std::to_string(k) + " negative connectives but only " +
                             std::to_string(candidates.size()) + " are available");
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(k);
    return candidates;
}

void augment_corpus(std::vector<MinedExample>& corpus, const EventPool& pool,
                    const ConnectiveLexicon& lexicon, const SamplerConfig& cfg) {
    auto process = [&](MinedExample& ex) {
        for (size_t ei = 0; ei < ex.events.size(); ++ei) {
            EventSpan& event = ex.events[ei];
            Rng rng(derive_seed(cfg.rng_seed, ex.id, ei));
            event.negatives = sample_negatives(event, ex.source_doc, pool, cfg, rng);
            event.negative_connectives.clear();
            if (!event.connectives.empty() && lexicon.size() > 1) {
                const std::string& gold_conn = event.connectives.front();
                const size_t avail = lexicon.size() - (lexicon.contains_word(gold_conn) ? 1 : 0);
                const size_t k = std::min(cfg.m_negatives, avail);
                event.negative_connectives =
                    sample_negative_connectives(gold_conn, k, lexicon, rng);
            }
        }
    };

    const int workers = std::max(1, cfg.workers);
    if (workers == 1 || corpus.size() < 2) {
        for (MinedExample& ex : corpus) process(ex);
        return;
    }
    std::vector<std::future<void>> futures;
    const size_t chunk = (corpus.size() + static_cast<size_t>(workers) - 1) /
                         static_cast<size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        const size_t begin = static_cast<size_t>(w) * chunk;
        const size_t end = std::min(corpus.size(), begin + chunk);
        if (begin >= end) break;
        futures.push_back(std::async(std::launch::async, [&, begin, end]() {
            for (size_t i = begin; i < end; ++i) process(corpus[i]);
        }));
    }
    for (auto& f : futures) f.get();
}

}  // namespace claret
