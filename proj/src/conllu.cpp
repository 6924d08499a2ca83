#include "claret/conllu.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "claret/common.hpp"

namespace claret {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

namespace {

struct RawToken {
    std::string surface, lemma, upos, deprel;
    int head_in_sentence = 0;  // 1-based; 0 = root
    bool space_after = true;
};

struct RawSentence {
    std::string sent_id;
    std::vector<RawToken> tokens;
};

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

bool is_integer(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

bool misc_has_no_space(const std::string& misc) {
    size_t start = 0;
    while (start < misc.size()) {
        size_t bar = misc.find('|', start);
        std::string item = misc.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
        if (item == "SpaceAfter=No") return true;
        if (bar == std::string::npos) break;
        start = bar + 1;
    }
    return false;
}

// Validates one sentence tree: single root, heads in range, no self-loops,
// no cycles. Throws StructureError naming the sentence.
void validate_sentence(const RawSentence& sent, const std::string& source_name) {
    const size_t n = sent.tokens.size();
    int roots = 0;
    for (size_t i = 0; i < n; ++i) {
        int h = sent.tokens[i].head_in_sentence;
        if (h == 0) {
            ++roots;
            continue;
        }
        if (h < 0 || static_cast<size_t>(h) > n)
            throw StructureError(source_name + ": sentence " + sent.sent_id + ": token " +
                                 std::to_string(i + 1) + " head " + std::to_string(h) +
                                 " out of range");
        if (static_cast<size_t>(h) == i + 1)
            throw StructureError(source_name + ": sentence " + sent.sent_id + ": token " +
                                 std::to_string(i + 1) + " is its own head");
    }
    if (roots != 1)
        throw StructureError(source_name + ": sentence " + sent.sent_id + ": expected 1 root, found " +
                             std::to_string(roots));
    for (size_t i = 0; i < n; ++i) {
        size_t cur = i;
        size_t steps = 0;
        while (sent.tokens[cur].head_in_sentence != 0) {
            cur = static_cast<size_t>(sent.tokens[cur].head_in_sentence - 1);
            if (++steps > n)
                throw StructureError(source_name + ": sentence " + sent.sent_id +
                                     ": cyclic head chain through token " + std::to_string(i + 1));
        }
    }
}

Paragraph assemble_paragraph(const std::vector<RawSentence>& sents, const std::string& id,
                             const std::string& doc_id) {
    Paragraph p;
    p.id = id;
    p.doc_id = doc_id;
    bool prev_allows_space = false;  // suppresses a leading space
    for (const auto& sent : sents) {
        const size_t offset = p.tokens.size();
        p.sent_ids.push_back(sent.sent_id);
        p.sentences.emplace_back(offset, offset + sent.tokens.size());
        for (const RawToken& rt : sent.tokens) {
            DependencyToken tok;
            tok.surface = rt.surface;
            tok.lemma = rt.lemma;
            tok.upos = rt.upos;
            tok.deprel = rt.deprel;
            tok.head = rt.head_in_sentence == 0 ? -1
                                                : static_cast<int>(offset) + rt.head_in_sentence - 1;
            tok.space_after = rt.space_after;
            if (prev_allows_space) p.text += ' ';
            tok.char_span = {p.text.size(), p.text.size() + rt.surface.size()};
            p.text += rt.surface;
            prev_allows_space = rt.space_after;
            p.tokens.push_back(std::move(tok));
        }
    }
    return p;
}

}  // namespace

std::vector<Paragraph> parse_conllu(std::string_view content, const std::string& source_name,
                                    int max_sentences) {
    std::vector<std::vector<RawSentence>> paragraphs;  // raw sentence groups
    std::vector<std::string> par_ids;
    std::vector<std::string> par_docs;

    std::vector<RawSentence> current_par;
    RawSentence current_sent;
    std::string doc_id = source_name;
    std::string pending_par_id;
    int par_counter = 0;
    int sent_counter = 0;
    int consecutive_blanks = 0;
    bool newpar_requested = false;

    auto flush_sentence = [&]() {
        if (current_sent.tokens.empty()) return;
        if (current_sent.sent_id.empty())
            current_sent.sent_id = "s" + std::to_string(++sent_counter);
        validate_sentence(current_sent, source_name);
        current_par.push_back(std::move(current_sent));
        current_sent = RawSentence{};
    };
    auto flush_paragraph = [&]() {
        flush_sentence();
        if (current_par.empty()) return;
        std::string id = pending_par_id.empty()
                             ? doc_id + "-p" + std::to_string(++par_counter)
                             : pending_par_id;
        paragraphs.push_back(std::move(current_par));
        par_ids.push_back(id);
        par_docs.push_back(doc_id);
        current_par.clear();
        pending_par_id.clear();
    };

    size_t line_start = 0;
    size_t line_no = 0;
    while (line_start <= content.size()) {
        size_t nl = content.find('\n', line_start);
        std::string line(content.substr(
            line_start, nl == std::string_view::npos ? std::string_view::npos : nl - line_start));
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();

        if (line.empty()) {
            flush_sentence();
            ++consecutive_blanks;
            if (consecutive_blanks >= 2) flush_paragraph();
        } else if (line[0] == '#') {
            consecutive_blanks = 0;
            std::string comment = line.substr(1);
            while (!comment.empty() && comment.front() == ' ') comment.erase(comment.begin());
            if (comment.rfind("newdoc", 0) == 0) {
                flush_paragraph();
                size_t eq = comment.find('=');
                doc_id = eq == std::string::npos ? source_name : comment.substr(eq + 1);
                while (!doc_id.empty() && doc_id.front() == ' ') doc_id.erase(doc_id.begin());
                if (doc_id.empty()) doc_id = source_name;
            } else if (comment.rfind("newpar", 0) == 0) {
                flush_paragraph();
                newpar_requested = true;
                size_t eq = comment.find('=');
                if (eq != std::string::npos) {
                    pending_par_id = comment.substr(eq + 1);
                    while (!pending_par_id.empty() && pending_par_id.front() == ' ')
                        pending_par_id.erase(pending_par_id.begin());
                }
            } else if (comment.rfind("sent_id", 0) == 0) {
                size_t eq = comment.find('=');
                if (eq != std::string::npos) {
                    current_sent.sent_id = comment.substr(eq + 1);
                    while (!current_sent.sent_id.empty() && current_sent.sent_id.front() == ' ')
                        current_sent.sent_id.erase(current_sent.sent_id.begin());
                }
            }
            (void)newpar_requested;
        } else {
            consecutive_blanks = 0;
            std::vector<std::string> fields = split_tabs(line);
            if (fields.size() != 10)
                throw ParseError(source_name + ":" + std::to_string(line_no) + ": expected 10 columns, got " +
                                 std::to_string(fields.size()));
            const std::string& tok_id = fields[0];
            // Multiword ranges (2-4) and empty nodes (2.1) carry no tree edges.
            if (tok_id.find('-') != std::string::npos || tok_id.find('.') != std::string::npos) {
                line_start = nl == std::string_view::npos ? content.size() + 1 : nl + 1;
                continue;
            }
            if (!is_integer(tok_id))
                throw ParseError(source_name + ":" + std::to_string(line_no) + ": bad token id '" +
                                 tok_id + "'");
            if (!is_integer(fields[6]))
                throw ParseError(source_name + ":" + std::to_string(line_no) + ": bad head '" +
                                 fields[6] + "'");
            size_t expected = current_sent.tokens.size() + 1;
            if (static_cast<size_t>(std::stoul(tok_id)) != expected)
                throw ParseError(source_name + ":" + std::to_string(line_no) + ": token id '" + tok_id +
                                 "' out of sequence (expected " + std::to_string(expected) + ")");
            RawToken rt;
            rt.surface = fields[1];
            rt.lemma = fields[2] == "_" ? to_lower(fields[1]) : fields[2];
            rt.upos = fields[3];
            rt.head_in_sentence = std::stoi(fields[6]);
            rt.deprel = fields[7];
            rt.space_after = !misc_has_no_space(fields[9]);
            current_sent.tokens.push_back(std::move(rt));
        }
        if (nl == std::string_view::npos) break;
        line_start = nl + 1;
    }
    flush_paragraph();

    // Chunk over-long paragraphs, then build text and spans.
    std::vector<Paragraph> out;
    for (size_t pi = 0; pi < paragraphs.size(); ++pi) {
        const auto& sents = paragraphs[pi];
        if (max_sentences <= 0 || sents.size() <= static_cast<size_t>(max_sentences)) {
            out.push_back(assemble_paragraph(sents, par_ids[pi], par_docs[pi]));
            continue;
        }
        size_t chunk = 0;
        for (size_t start = 0; start < sents.size(); start += static_cast<size_t>(max_sentences)) {
            size_t end = std::min(sents.size(), start + static_cast<size_t>(max_sentences));
            std::vector<RawSentence> slice(sents.begin() + static_cast<long>(start),
                                           sents.begin() + static_cast<long>(end));
            out.push_back(assemble_paragraph(slice, par_ids[pi] + "-s" + std::to_string(chunk++),
                                             par_docs[pi]));
        }
    }
    return out;
}

std::vector<Paragraph> load_conllu(const std::string& path, int max_sentences) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CoNLL-U file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string source_name = path;
    size_t slash = source_name.find_last_of('/');
    if (slash != std::string::npos) source_name = source_name.substr(slash + 1);
    size_t dot = source_name.find_last_of('.');
    if (dot != std::string::npos && dot > 0) source_name = source_name.substr(0, dot);
    return parse_conllu(buf.str(), source_name, max_sentences);
}

}  // namespace claret
