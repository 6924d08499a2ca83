#ifndef CLARET_BPE_HPP
#define CLARET_BPE_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace claret {

using TokenId = int32_t;
using TokenSequence = std::vector<TokenId>;

// Byte-pair vocabulary over whitespace-pretokenized text. Words are sequences
// of character symbols closed by the "</w>" marker; merges never cross words.
// Specials hold fixed ids and bypass the merge machinery entirely.
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr TokenId kMask = 4;
    static constexpr TokenId kCls = 5;
    static constexpr TokenId kWordEnd = 6;  // "</w>", injected when capacity allows

    Vocabulary();

    size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    TokenId id_of(const std::string& token) const;
    const std::string& token_of(TokenId id) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    std::string to_json() const;
    static Vocabulary from_json(const std::string& json_text);

    TokenSequence encode(const std::string& text, bool add_bos_eos = false) const;
    std::string decode(const TokenSequence& ids) const;

    friend Vocabulary train_vocab(const std::vector<std::string>& corpus_lines, size_t target_size);

private:
    void add_token(const std::string& token);
    void rebuild_merge_ranks();
    TokenSequence encode_word(const std::string& word) const;

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::map<std::pair<std::string, std::string>, size_t> merge_ranks_;
    bool has_word_end_ = false;

    struct Cache {
        std::mutex mutex;
        std::unordered_map<std::string, TokenSequence> words;
    };
    std::shared_ptr<Cache> cache_;  // shared across copies; content-identical
};

// Greedy pair-merge training. Deterministic: ties in pair counts prefer
// marker-free pairs, then the lexicographically smaller pair. target_size
// counts specials, the marker, alphabet symbols and merge outputs together.
Vocabulary train_vocab(const std::vector<std::string>& corpus_lines, size_t target_size);

}  // namespace claret

#endif
