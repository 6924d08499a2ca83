#include "claret/miner.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include <json.hpp>

#include "claret/common.hpp"

namespace claret {

namespace {

bool is_verbal(const std::string& upos) { return upos == "VERB" || upos == "AUX"; }

size_t whitespace_token_count(const std::string& text) {
    size_t count = 0;
    bool in_word = false;
    for (char c : text) {
        if (is_space_byte(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}

}  // namespace

bool paragraph_has_connectives(const Paragraph& p, const ConnectiveLexicon& lexicon,
                               size_t min_connectives) {
    return lexicon.count_matches(p.text) >= min_connectives;
}

std::vector<MinedExample> filter_paragraphs(const std::vector<Paragraph>& paragraphs,
                                            const ConnectiveLexicon& lexicon,
                                            size_t min_connectives) {
    std::vector<MinedExample> out;
    for (const Paragraph& p : paragraphs) {
        if (!paragraph_has_connectives(p, lexicon, min_connectives)) continue;
        MinedExample ex;
        ex.id = p.id;
        ex.text = p.text;
        ex.source_doc = p.doc_id;
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<EventSpan> extract_events(const Paragraph& paragraph, const MinerConfig& config) {
    const auto& tokens = paragraph.tokens;
    std::vector<std::vector<size_t>> children(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].head >= 0) children[static_cast<size_t>(tokens[i].head)].push_back(i);
    }

    auto edge_cut = [&](size_t root, size_t parent, size_t child) {
        const DependencyToken& c = tokens[child];
        if (c.upos == "PUNCT") return true;
        if (config.clause_cut.count(c.deprel)) return true;
        if (parent == root && config.root_marker_cut.count(c.deprel)) return true;
        if (config.cut_verb_conj && c.deprel == "conj" && is_verbal(tokens[parent].upos))
            return true;
        return false;
    };

    std::vector<EventSpan> events;
    std::set<std::vector<size_t>> seen_member_sets;

    for (size_t v = 0; v < tokens.size(); ++v) {
        if (!is_verbal(tokens[v].upos)) continue;

        std::vector<size_t> members;
        std::vector<size_t> stack{v};
        while (!stack.empty()) {
            size_t u = stack.back();
            stack.pop_back();
            members.push_back(u);
            for (size_t c : children[u]) {
                if (!edge_cut(v, u, c)) stack.push_back(c);
            }
        }
        std::sort(members.begin(), members.end());
        if (members.size() < config.min_event_len || members.size() > config.max_event_len)
            continue;

        // Span must be contiguous except for excluded punctuation.
        bool contiguous = true;
        {
            size_t next = 0;
            for (size_t g = members.front(); g <= members.back(); ++g) {
                if (next < members.size() && members[next] == g) {
                    ++next;
                } else if (tokens[g].upos != "PUNCT") {
                    contiguous = false;
                    break;
                }
            }
        }
        if (!contiguous) continue;

        EventSpan span;
        span.root_index = v;
        span.token_indices = members;
        const size_t begin = tokens[members.front()].char_span.first;
        const size_t end = tokens[members.back()].char_span.second;
        span.char_begin = begin;
        span.char_end = end;
        span.root_char = tokens[v].char_span.first;
        span.text = paragraph.text.substr(begin, end - begin);
        if (whitespace_token_count(span.text) > config.max_event_len) continue;
        for (size_t m : members) {
            span.lemmas.push_back(to_lower(tokens[m].lemma));
            span.upos.push_back(tokens[m].upos);
        }
        if (!seen_member_sets.insert(members).second) continue;
        events.push_back(std::move(span));
    }

    std::sort(events.begin(), events.end(), [](const EventSpan& a, const EventSpan& b) {
        if (a.token_indices.front() != b.token_indices.front())
            return a.token_indices.front() < b.token_indices.front();
        if (a.token_indices.back() != b.token_indices.back())
            return a.token_indices.back() < b.token_indices.back();
        return a.root_index < b.root_index;
    });
    return events;
}

void attach_connectives(MinedExample& example, const Paragraph& paragraph,
                        const ConnectiveLexicon& lexicon) {
    const auto& tokens = paragraph.tokens;
    for (EventSpan& event : example.events) {
        event.connectives.clear();
        const int root = static_cast<int>(event.root_index);
        for (size_t t = 0; t < tokens.size(); ++t) {
            std::string lower = to_lower(tokens[t].surface);
            if (!lexicon.contains_word(lower)) continue;
            const bool arc_to_root = tokens[t].head == root;
            const bool arc_from_root = tokens[event.root_index].head == static_cast<int>(t);
            if (arc_to_root || arc_from_root) event.connectives.push_back(lower);
        }
    }
}

namespace {

MinedExample process_paragraph(const Paragraph& p, const ConnectiveLexicon& lexicon,
                               const MinerConfig& config, bool* retained) {
    MinedExample ex;
    *retained = paragraph_has_connectives(p, lexicon, config.min_connectives);
    if (!*retained) return ex;
    ex.id = p.id;
    ex.text = p.text;
    ex.source_doc = p.doc_id;
    ex.events = extract_events(p, config);
    attach_connectives(ex, p, lexicon);
    return ex;
}

}  // namespace

MineStats mine_corpus(const std::string& in_path, const std::string& out_path,
                      const ConnectiveLexicon& lexicon, const MinerConfig& config) {
    if (lexicon.empty()) throw StructureError("connective lexicon is empty");
    const std::vector<Paragraph> paragraphs = load_conllu(in_path, config.max_sentences);

    MineStats stats;
    stats.paragraphs_seen = paragraphs.size();
    for (const Paragraph& p : paragraphs) stats.tokens_seen += p.tokens.size();

    std::vector<MinedExample> results(paragraphs.size());
    std::vector<char> retained(paragraphs.size(), 0);

    const int workers = std::max(1, config.workers);
    if (workers == 1 || paragraphs.size() < 2) {
        for (size_t i = 0; i < paragraphs.size(); ++i) {
            bool r = false;
            results[i] = process_paragraph(paragraphs[i], lexicon, config, &r);
            retained[i] = r ? 1 : 0;
        }
    } else {
        // Chunked fan-out with ordered merge; output is identical at any N.
        std::vector<std::future<void>> futures;
        const size_t chunk = (paragraphs.size() + static_cast<size_t>(workers) - 1) /
                             static_cast<size_t>(workers);
        for (int w = 0; w < workers; ++w) {
            const size_t begin = static_cast<size_t>(w) * chunk;
            const size_t end = std::min(paragraphs.size(), begin + chunk);
            if (begin >= end) break;
            futures.push_back(std::async(std::launch::async, [&, begin, end]() {
                for (size_t i = begin; i < end; ++i) {
                    bool r = false;
                    results[i] = process_paragraph(paragraphs[i], lexicon, config, &r);
                    retained[i] = r ? 1 : 0;
                }
            }));
        }
        for (auto& f : futures) f.get();
    }

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot open output file: " + out_path);
    for (size_t i = 0; i < results.size(); ++i) {
        if (!retained[i]) continue;
        ++stats.paragraphs_retained;
        stats.events_extracted += results[i].events.size();
        if (results[i].events.empty()) continue;  // examples must carry >= 1 event
        out << example_to_json_line(results[i]) << "\n";
        ++stats.examples_written;
    }
    if (!out) throw IoError("write failed: " + out_path);
    return stats;
}

std::string example_to_json_line(const MinedExample& ex) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["text"] = ex.text;
    j["source_doc"] = ex.source_doc;
    j["events"] = nlohmann::json::array();
    for (const EventSpan& e : ex.events) {
        nlohmann::json je;
        je["root"] = e.root_index;
        je["tokens"] = e.token_indices;
        je["text"] = e.text;
        je["span"] = {e.char_begin, e.char_end};
        je["root_char"] = e.root_char;
        je["connectives"] = e.connectives;
        je["lemmas"] = e.lemmas;
        je["upos"] = e.upos;
        if (!e.negatives.empty()) je["negatives"] = e.negatives;
        if (!e.negative_connectives.empty()) je["negative_connectives"] = e.negative_connectives;
        j["events"].push_back(std::move(je));
    }
    return j.dump();
}

MinedExample example_from_json_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    MinedExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.text = j.at("text").get<std::string>();
    ex.source_doc = j.at("source_doc").get<std::string>();
    for (const auto& je : j.at("events")) {
        EventSpan e;
        e.root_index = je.at("root").get<size_t>();
        e.token_indices = je.at("tokens").get<std::vector<size_t>>();
        e.text = je.at("text").get<std::string>();
        if (je.contains("span")) {
            e.char_begin = je.at("span").at(0).get<size_t>();
            e.char_end = je.at("span").at(1).get<size_t>();
        }
        if (je.contains("root_char")) e.root_char = je.at("root_char").get<size_t>();
        e.connectives = je.at("connectives").get<std::vector<std::string>>();
        if (je.contains("lemmas")) e.lemmas = je.at("lemmas").get<std::vector<std::string>>();
        if (je.contains("upos")) e.upos = je.at("upos").get<std::vector<std::string>>();
        if (je.contains("negatives"))
            e.negatives = je.at("negatives").get<std::vector<std::string>>();
        if (je.contains("negative_connectives"))
            e.negative_connectives = je.at("negative_connectives").get<std::vector<std::string>>();
        ex.events.push_back(std::move(e));
    }
    return ex;
}

void write_examples_jsonl(const std::string& path, const std::vector<MinedExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open output file: " + path);
    for (const MinedExample& ex : examples) out << example_to_json_line(ex) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::vector<MinedExample> read_examples_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open input file: " + path);
    std::vector<MinedExample> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(example_from_json_line(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace claret
