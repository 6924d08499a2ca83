#include "claret/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "claret/common.hpp"

namespace claret {

namespace {

bool is_word_byte(unsigned char c) {
    return std::isalnum(c) || c == '\'';
}

struct Word {
    std::string lower;
    size_t begin, end;
};

std::vector<Word> split_words(const std::string& text) {
    std::vector<Word> words;
    size_t i = 0;
    while (i < text.size()) {
        if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
        words.push_back({to_lower(std::string_view(text).substr(i, j - i)), i, j});
        i = j;
    }
    return words;
}

std::vector<std::string> split_entry_words(const std::string& entry) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : entry) {
        if (c == ' ') {
            if (!cur.empty()) parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) parts.push_back(cur);
    return parts;
}

}  // namespace

ConnectiveLexicon::ConnectiveLexicon(std::vector<std::string> entries) {
    for (auto& e : entries) {
        std::string lower = to_lower(e);
        if (lower.empty()) continue;
        entries_.push_back(lower);
        if (lower.find(' ') == std::string::npos) single_words_.insert(lower);
    }
    std::sort(entries_.begin(), entries_.end());
    entries_.erase(std::unique(entries_.begin(), entries_.end()), entries_.end());
}

ConnectiveLexicon ConnectiveLexicon::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open connective lexicon: " + path);
    std::vector<std::string> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && is_space_byte(line.back())) line.pop_back();
        while (!line.empty() && is_space_byte(line.front())) line.erase(line.begin());
        if (!line.empty()) entries.push_back(line);
    }
    return ConnectiveLexicon(std::move(entries));
}

std::vector<ConnectiveLexicon::Match> ConnectiveLexicon::find_matches(const std::string& text) const {
    std::vector<Match> matches;
    const std::vector<Word> words = split_words(text);
    for (const std::string& entry : entries_) {
        const std::vector<std::string> parts = split_entry_words(entry);
        if (parts.empty() || parts.size() > words.size()) continue;
        for (size_t i = 0; i + parts.size() <= words.size(); ++i) {
            bool ok = true;
            for (size_t k = 0; k < parts.size(); ++k) {
                if (words[i + k].lower != parts[k]) {
                    ok = false;
                    break;
                }
            }
            if (ok) matches.push_back({entry, words[i].begin, words[i + parts.size() - 1].end});
        }
    }
    std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
        if (a.char_begin != b.char_begin) return a.char_begin < b.char_begin;
        return a.entry < b.entry;
    });
    return matches;
}

size_t ConnectiveLexicon::count_matches(const std::string& text) const {
    return find_matches(text).size();
}

}  // namespace claret
