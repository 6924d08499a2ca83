#ifndef CLARET_LEXICON_HPP
#define CLARET_LEXICON_HPP

#include <cstddef>
#include <string>
#include <unordered_set>
#include <vector>

namespace claret {

// Explicit discourse connective list. Entries are lowercase and may be
// multiword ("as soon as"); matching is case-insensitive and whole-word.
class ConnectiveLexicon {
public:
    ConnectiveLexicon() = default;
    explicit ConnectiveLexicon(std::vector<std::string> entries);

    static ConnectiveLexicon from_file(const std::string& path);

    bool empty() const { return entries_.size() == 0; }
    size_t size() const { return entries_.size(); }
    const std::vector<std::string>& entries() const { return entries_; }

    // Single-word membership (used for arc-level connective attachment).
    bool contains_word(const std::string& lowercased) const {
        return single_words_.count(lowercased) > 0;
    }

    // Number of whole-word matches of any entry in the text. Occurrences of
    // different entries are counted independently, so "as if" contributes to
    // "as", "if" and "as if" when all three are present in the lexicon.
    size_t count_matches(const std::string& text) const;

    struct Match {
        std::string entry;   // lexicon entry (lowercase)
        size_t char_begin;   // byte offset of the match in the text
        size_t char_end;
    };
    std::vector<Match> find_matches(const std::string& text) const;

private:
    std::vector<std::string> entries_;
    std::unordered_set<std::string> single_words_;
};

}  // namespace claret

#endif
