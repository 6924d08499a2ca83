#ifndef CLARET_CONLLU_HPP
#define CLARET_CONLLU_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace claret {

struct DependencyToken {
    std::string surface;
    std::string lemma;
    std::string upos;
    int head = -1;  // paragraph-global 0-based governor index; -1 = sentence root
    std::string deprel;
    std::pair<size_t, size_t> char_span{0, 0};  // byte offsets into Paragraph::text
    bool space_after = true;
};

struct Paragraph {
    std::string id;
    std::string doc_id;
    std::string text;
    std::vector<DependencyToken> tokens;
    // [first, last) token ranges, one per sentence.
    std::vector<std::pair<size_t, size_t>> sentences;
    std::vector<std::string> sent_ids;
};

// Reads 10-column CoNLL-U. Sentences are separated by one blank line;
// paragraphs by a `# newpar` comment or a double blank line. Multiword-token
// and empty-node lines are skipped. Paragraphs longer than max_sentences are
// split at sentence boundaries into consecutive chunks.
std::vector<Paragraph> load_conllu(const std::string& path, int max_sentences = 64);

// Same parser over an in-memory buffer; source_name is used in error messages
// and derived paragraph ids.
std::vector<Paragraph> parse_conllu(std::string_view content, const std::string& source_name,
                                    int max_sentences = 64);

}  // namespace claret

#endif
