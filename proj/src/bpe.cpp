#include "claret/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "claret/common.hpp"

namespace claret {

namespace {

constexpr const char* kWordEndSymbol = "</w>";
const std::vector<std::string> kSpecialTokens = {"<pad>", "<s>", "</s>",
                                                 "<unk>", "[M]", "[CLS]"};

// Splits on whitespace, then splits "[M]"/"[CLS]" out of each chunk so the
// specials survive punctuation gluing ("[M]." -> "[M]", ".").
struct Pretoken {
    std::string text;
    bool is_special = false;
};

std::vector<Pretoken> pretokenize(const std::string& text) {
    std::vector<Pretoken> out;
    auto emit_chunk = [&](const std::string& chunk) {
        size_t pos = 0;
        while (pos < chunk.size()) {
            size_t m = chunk.find("[M]", pos);
            size_t c = chunk.find("[CLS]", pos);
            size_t hit = std::min(m, c);
            if (hit == std::string::npos) {
                out.push_back({chunk.substr(pos), false});
                return;
            }
            if (hit > pos) out.push_back({chunk.substr(pos, hit - pos), false});
            const bool mask_first = m <= c;
            out.push_back({mask_first ? "[M]" : "[CLS]", true});
            pos = hit + (mask_first ? 3 : 5);
        }
    };
    std::string cur;
    for (char ch : text) {
        if (is_space_byte(ch)) {
            if (!cur.empty()) emit_chunk(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) emit_chunk(cur);
    return out;
}

std::vector<std::string> word_symbols(const std::string& word) {
    std::vector<std::string> symbols;
    for (char c : word) symbols.emplace_back(1, c);
    symbols.emplace_back(kWordEndSymbol);
    return symbols;
}

}  // namespace

Vocabulary::Vocabulary() : cache_(std::make_shared<Cache>()) {
    for (const std::string& s : kSpecialTokens) add_token(s);
}

void Vocabulary::add_token(const std::string& token) {
    ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(token);
}

TokenId Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    static const std::string unk = "<unk>";
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) return unk;
    return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::rebuild_merge_ranks() {
    merge_ranks_.clear();
    for (size_t r = 0; r < merges_.size(); ++r) merge_ranks_[merges_[r]] = r;
}

TokenSequence Vocabulary::encode_word(const std::string& word) const {
    {
        std::lock_guard<std::mutex> lock(cache_->mutex);
        auto it = cache_->words.find(word);
        if (it != cache_->words.end()) return it->second;
    }
    std::vector<std::string> symbols = word_symbols(word);
    // Apply merges lowest rank first until none match.
    while (symbols.size() > 1) {
        size_t best_rank = SIZE_MAX;
        size_t best_pos = 0;
        for (size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = merge_ranks_.find({symbols[i], symbols[i + 1]});
            if (it != merge_ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best_pos = i;
            }
        }
        if (best_rank == SIZE_MAX) break;
        symbols[best_pos] += symbols[best_pos + 1];
        symbols.erase(symbols.begin() + static_cast<long>(best_pos) + 1);
    }
    TokenSequence ids;
    for (const std::string& sym : symbols) {
        auto it = ids_.find(sym);
        if (it != ids_.end()) {
            ids.push_back(it->second);
        } else if (sym == kWordEndSymbol) {
            // marker missing from a tiny vocab: drop silently
        } else {
            // unknown symbol: fall back to per-character tokens
            for (char c : sym) {
                if (std::string(1, c) == std::string(kWordEndSymbol)) continue;
                auto cit = ids_.find(std::string(1, c));
                ids.push_back(cit == ids_.end() ? kUnk : cit->second);
            }
        }
    }
    {
        std::lock_guard<std::mutex> lock(cache_->mutex);
        cache_->words.emplace(word, ids);
    }
    return ids;
}

TokenSequence Vocabulary::encode(const std::string& text, bool add_bos_eos) const {
    TokenSequence out;
    if (add_bos_eos) out.push_back(kBos);
    for (const Pretoken& pt : pretokenize(text)) {
        if (pt.is_special) {
            out.push_back(pt.text == "[M]" ? kMask : kCls);
            continue;
        }
        const TokenSequence word_ids = encode_word(pt.text);
        out.insert(out.end(), word_ids.begin(), word_ids.end());
    }
    if (add_bos_eos) out.push_back(kEos);
    return out;
}

std::string Vocabulary::decode(const TokenSequence& ids) const {
    std::string out;
    bool word_open = false;  // inside a partially emitted word
    auto break_word = [&]() { word_open = false; };
    auto append_word_text = [&](const std::string& piece, bool ends_word) {
        if (!word_open && !out.empty()) out += ' ';
        out += piece;
        word_open = !ends_word;
    };
    for (TokenId id : ids) {
        if (id == kPad || id == kBos || id == kEos || id == kUnk) {
            break_word();
            continue;
        }
        if (id == kMask || id == kCls) {
            if (word_open) break_word();
            append_word_text(id == kMask ? "[M]" : "[CLS]", true);
            continue;
        }
        if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
            break_word();
            continue;
        }
        const std::string& tok = tokens_[static_cast<size_t>(id)];
        if (tok == kWordEndSymbol) {
            break_word();
            continue;
        }
        const size_t marker_len = std::string(kWordEndSymbol).size();
        const bool ends_word =
            tok.size() >= marker_len && tok.compare(tok.size() - marker_len, marker_len,
                                                    kWordEndSymbol) == 0;
        append_word_text(ends_word ? tok.substr(0, tok.size() - marker_len) : tok, ends_word);
    }
    return out;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["tokens"] = tokens_;
    j["merges"] = nlohmann::json::array();
    for (const auto& [a, b] : merges_) j["merges"].push_back({a, b});
    return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    Vocabulary vocab;
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    if (tokens.size() < kSpecialTokens.size())
        throw FormatError("vocabulary file is missing special tokens");
    for (size_t i = 0; i < kSpecialTokens.size(); ++i) {
        if (tokens[i] != kSpecialTokens[i])
            throw FormatError("vocabulary special token mismatch at id " + std::to_string(i));
    }
    for (size_t i = kSpecialTokens.size(); i < tokens.size(); ++i) vocab.add_token(tokens[i]);
    vocab.has_word_end_ = vocab.ids_.count(kWordEndSymbol) > 0;
    for (const auto& m : j.at("merges")) {
        vocab.merges_.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    }
    vocab.rebuild_merge_ranks();
    return vocab;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open vocabulary file for writing: " + path);
    out << to_json() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return from_json(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("vocabulary file " + path + ": " + e.what());
    }
}

Vocabulary train_vocab(const std::vector<std::string>& corpus_lines, size_t target_size) {
    if (target_size < kSpecialTokens.size())
        throw StructureError("vocabulary size must hold at least the " +
                             std::to_string(kSpecialTokens.size()) + " special tokens");

    // Word counts; specials in the text bypass training.
    std::map<std::string, long> word_counts;
    for (const std::string& line : corpus_lines) {
        for (const Pretoken& pt : pretokenize(line)) {
            if (!pt.is_special) ++word_counts[pt.text];
        }
    }
    if (word_counts.empty()) throw StructureError("vocabulary training corpus is empty");

    Vocabulary vocab;
    size_t capacity = target_size - vocab.size();

    if (capacity > 0) {
        vocab.add_token(kWordEndSymbol);
        vocab.has_word_end_ = true;
        --capacity;
    }

    // Alphabet by frequency, ties by byte order.
    std::map<std::string, long> char_counts;
    for (const auto& [word, count] : word_counts) {
        for (char c : word) char_counts[std::string(1, c)] += count;
    }
    std::vector<std::pair<std::string, long>> alphabet(char_counts.begin(), char_counts.end());
    std::stable_sort(alphabet.begin(), alphabet.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [sym, count] : alphabet) {
        if (capacity == 0) break;
        vocab.add_token(sym);
        --capacity;
    }

    // Greedy merges with incremental pair-count maintenance.
    struct WordState {
        std::vector<std::string> symbols;
        long count;
    };
    std::vector<WordState> words;
    for (const auto& [word, count] : word_counts) words.push_back({word_symbols(word), count});

    using Pair = std::pair<std::string, std::string>;
    std::map<Pair, long> pair_counts;
    std::map<Pair, std::set<size_t>> pair_words;
    auto add_pairs_of = [&](size_t wi, long sign) {
        const auto& syms = words[wi].symbols;
        for (size_t i = 0; i + 1 < syms.size(); ++i) {
            const Pair p{syms[i], syms[i + 1]};
            pair_counts[p] += sign * words[wi].count;
            if (sign > 0)
                pair_words[p].insert(wi);
        }
    };
    for (size_t wi = 0; wi < words.size(); ++wi) add_pairs_of(wi, +1);

    auto is_marker_pair = [&](const Pair& p) {
        return p.first == kWordEndSymbol || p.second == kWordEndSymbol;
    };
    struct HeapItem {
        long count;
        bool marker;
        Pair pair;
    };
    auto heap_less = [&](const HeapItem& a, const HeapItem& b) {
        if (a.count != b.count) return a.count < b.count;
        if (a.marker != b.marker) return a.marker;  // marker pairs lose ties
        return a.pair > b.pair;
    };
    std::priority_queue<HeapItem, std::vector<HeapItem>, decltype(heap_less)> heap(heap_less);
    for (const auto& [p, c] : pair_counts) heap.push({c, is_marker_pair(p), p});

    while (capacity > 0 && !heap.empty()) {
        HeapItem top = heap.top();
        heap.pop();
        auto it = pair_counts.find(top.pair);
        if (it == pair_counts.end() || it->second != top.count) continue;  // stale entry
        if (top.count <= 0) break;

        const Pair best = top.pair;
        const std::string merged = best.first + best.second;
        vocab.merges_.push_back(best);
        vocab.add_token(merged);
        --capacity;

        std::set<size_t> affected = pair_words[best];
        std::set<Pair> touched;
        for (size_t wi : affected) {
            auto& syms = words[wi].symbols;
            bool contains = false;
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                if (syms[i] == best.first && syms[i + 1] == best.second) {
                    contains = true;
                    break;
                }
            }
            if (!contains) continue;
            // retract old pairs, rewrite, re-add
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                const Pair p{syms[i], syms[i + 1]};
                pair_counts[p] -= words[wi].count;
                touched.insert(p);
            }
            std::vector<std::string> rewritten;
            for (size_t i = 0; i < syms.size();) {
                if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
                    rewritten.push_back(merged);
                    i += 2;
                } else {
                    rewritten.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(rewritten);
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                const Pair p{syms[i], syms[i + 1]};
                pair_counts[p] += words[wi].count;
                pair_words[p].insert(wi);
                touched.insert(p);
            }
        }
        pair_counts.erase(best);
        pair_words.erase(best);
        for (const Pair& p : touched) {
            auto pit = pair_counts.find(p);
            if (pit != pair_counts.end() && pit->second > 0)
                heap.push({pit->second, is_marker_pair(p), p});
        }
    }

    vocab.rebuild_merge_ranks();
    return vocab;
}

}  // namespace claret
