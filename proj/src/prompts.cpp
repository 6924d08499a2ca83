#include "claret/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>

#include <json.hpp>

#include "claret/common.hpp"

namespace claret {

namespace {

constexpr size_t kMaxOptions = 26;  // labels (a)..(z)

// " Options: (a) T1; (b) T2" -- single spaces, semicolon separators, no
// trailing semicolon. Golden tests pin these bytes.
std::string options_suffix(const std::vector<std::string>& ordered) {
    std::string out = " Options:";
    for (size_t j = 0; j < ordered.size(); ++j) {
        out += " (";
        out += static_cast<char>('a' + j);
        out += ") ";
        out += ordered[j];
        if (j + 1 < ordered.size()) out += ";";
    }
    return out;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\''; }

}  // namespace

std::string escape_mask_literal(const std::string& text, bool* changed) {
    if (changed) *changed = false;
    std::string out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t hit = text.find(kMaskToken, pos);
        if (hit == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        out += text.substr(pos, hit - pos);
        out += "[ M ]";
        pos = hit + 3;
        if (changed) *changed = true;
    }
    return out;
}

MaskedContext mask_event(const std::string& paragraph, const EventSpan& event) {
    if (event.char_end > paragraph.size() || event.char_begin >= event.char_end)
        throw StructureError("event span out of paragraph bounds");
    const std::string at_span = paragraph.substr(event.char_begin, event.char_end - event.char_begin);
    if (at_span != event.text)
        throw StructureError("event span is stale: text at span does not match event text");
    MaskedContext masked;
    masked.text = paragraph.substr(0, event.char_begin) + kMaskToken +
                  paragraph.substr(event.char_end);
    masked.mask_char_span = {event.char_begin, event.char_begin + 3};
    masked.gold_event = event.text;
    return masked;
}

std::string unmask(const MaskedContext& masked) {
    return masked.text.substr(0, masked.mask_char_span.first) + masked.gold_event +
           masked.text.substr(masked.mask_char_span.second);
}

CesPrompt build_ces_prompt(const MaskedContext& masked, const std::string& gold,
                           const std::vector<std::string>& negatives, Rng& rng) {
    if (negatives.empty()) throw StructureError("correct event selection needs >= 1 negative");
    if (negatives.size() + 1 > kMaxOptions)
        throw StructureError("option labels exhausted: " + std::to_string(negatives.size() + 1) +
                             " candidates exceed 26");
    std::vector<std::string> candidates;
    candidates.push_back(escape_mask_literal(gold));
    for (const std::string& n : negatives) candidates.push_back(escape_mask_literal(n));

    CesPrompt prompt;
    prompt.permutation = rng.permutation(candidates.size());
    std::vector<std::string> ordered;
    for (size_t idx : prompt.permutation) ordered.push_back(candidates[idx]);
    prompt.input = masked.text + options_suffix(ordered);
    prompt.target = candidates[0];
    return prompt;
}

WetPrompt build_wet_prompt(const std::string& paragraph, const EventSpan& event,
                           const std::string& negative) {
    if (negative == event.text)
        throw StructureError("wrong event tagging needs a negative different from the gold event");
    const std::string at_span = paragraph.substr(event.char_begin, event.char_end - event.char_begin);
    if (at_span != event.text)
        throw StructureError("event span is stale: text at span does not match event text");
    WetPrompt prompt;
    const std::string safe = escape_mask_literal(negative, &prompt.mask_literal_escaped);
    prompt.input = paragraph.substr(0, event.char_begin) + safe +
                   paragraph.substr(event.char_end) + " Event: " + kMaskToken + " is wrong";
    prompt.target = safe;
    return prompt;
}

std::optional<CesPrompt> build_ccs_prompt(const std::string& paragraph, const EventSpan& event,
                                          const std::string& gold_connective,
                                          const std::vector<std::string>& negative_connectives,
                                          Rng& rng) {
    if (gold_connective.empty() || negative_connectives.empty()) return std::nullopt;

    // Whole-word, case-insensitive occurrences of the gold connective.
    const std::string lower_text = to_lower(paragraph);
    const std::string needle = to_lower(gold_connective);
    std::vector<size_t> occurrences;
    size_t pos = 0;
    while ((pos = lower_text.find(needle, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(lower_text[pos - 1]));
        const size_t end = pos + needle.size();
        const bool right_ok =
            end >= lower_text.size() || !is_word_char(static_cast<unsigned char>(lower_text[end]));
        if (left_ok && right_ok) occurrences.push_back(pos);
        pos += 1;
    }
    if (occurrences.empty()) return std::nullopt;

    size_t best = occurrences.front();
    size_t best_dist = SIZE_MAX;
    for (size_t occ : occurrences) {
        const size_t dist = occ > event.root_char ? occ - event.root_char : event.root_char - occ;
        if (dist < best_dist) {
            best_dist = dist;
            best = occ;
        }
    }

    std::vector<std::string> candidates;
    candidates.push_back(escape_mask_literal(gold_connective));
    for (const std::string& n : negative_connectives) candidates.push_back(escape_mask_literal(n));
    if (candidates.size() > kMaxOptions)
        throw StructureError("option labels exhausted: " + std::to_string(candidates.size()) +
                             " candidates exceed 26");

    CesPrompt prompt;
    prompt.permutation = rng.permutation(candidates.size());
    std::vector<std::string> ordered;
    for (size_t idx : prompt.permutation) ordered.push_back(candidates[idx]);
    prompt.input = paragraph.substr(0, best) + kMaskToken + paragraph.substr(best + needle.size()) +
                   options_suffix(ordered);
    prompt.target = candidates[0];
    return prompt;
}

namespace {

PretrainInstance build_instance(const MinedExample& ex, size_t event_index,
                                const BuilderConfig& cfg) {
    const EventSpan& event = ex.events[event_index];
    if (event.negatives.empty())
        throw StructureError("example " + ex.id + " event " + std::to_string(event_index) +
                             " has no negatives; run the sampler first");

    Rng rng(derive_seed(cfg.seed, ex.id, 0x42000000ull + event_index));

    PretrainInstance inst;
    inst.id = ex.id + "#" + std::to_string(event_index);
    inst.negatives = event.negatives;
    inst.masked = mask_event(ex.text, event);

    const std::string& wet_negative =
        event.negatives[static_cast<size_t>(rng.below(event.negatives.size()))];
    WetPrompt wet = build_wet_prompt(ex.text, event, wet_negative);
    inst.wet_input = wet.input;
    inst.wet_target = wet.target;

    CesPrompt ces = build_ces_prompt(inst.masked, event.text, event.negatives, rng);
    inst.ces_input = ces.input;
    inst.ces_target = ces.target;
    inst.permutation = ces.permutation;
    inst.selection = SelectionScheme::Ces;

    const bool try_ccs = !event.connectives.empty() && !event.negative_connectives.empty() &&
                         rng.uniform() < cfg.ccs_probability;
    if (try_ccs) {
        std::optional<CesPrompt> ccs = build_ccs_prompt(ex.text, event, event.connectives.front(),
                                                        event.negative_connectives, rng);
        if (ccs.has_value()) {
            inst.ccs_input = ccs->input;
            inst.ccs_target = ccs->target;
            inst.permutation = ccs->permutation;
            inst.selection = SelectionScheme::Ccs;
        }
    }
    return inst;
}

}  // namespace

std::vector<PretrainInstance> assemble_instances(const std::vector<MinedExample>& corpus,
                                                 const BuilderConfig& cfg) {
    // One instance per (paragraph, event).
    std::vector<std::pair<size_t, size_t>> work;
    for (size_t i = 0; i < corpus.size(); ++i) {
        for (size_t e = 0; e < corpus[i].events.size(); ++e) work.emplace_back(i, e);
    }
    std::vector<PretrainInstance> out(work.size());

    const int workers = std::max(1, cfg.workers);
    if (workers == 1 || work.size() < 2) {
        for (size_t w = 0; w < work.size(); ++w)
            out[w] = build_instance(corpus[work[w].first], work[w].second, cfg);
        return out;
    }
    std::vector<std::future<void>> futures;
    const size_t chunk = (work.size() + static_cast<size_t>(workers) - 1) /
                         static_cast<size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        const size_t begin = static_cast<size_t>(w) * chunk;
        const size_t end = std::min(work.size(), begin + chunk);
        if (begin >= end) break;
        futures.push_back(std::async(std::launch::async, [&, begin, end]() {
            for (size_t i = begin; i < end; ++i)
                out[i] = build_instance(corpus[work[i].first], work[i].second, cfg);
        }));
    }
    for (auto& f : futures) f.get();
    return out;
}

std::string instance_to_json_line(const PretrainInstance& inst) {
    nlohmann::json j;
    j["id"] = inst.id;
    j["masked_text"] = inst.masked.text;
    j["mask_span"] = {inst.masked.mask_char_span.first, inst.masked.mask_char_span.second};
    j["gold"] = inst.masked.gold_event;
    j["negatives"] = inst.negatives;
    j["ces_input"] = inst.ces_input;
    j["ces_target"] = inst.ces_target;
    j["wet_input"] = inst.wet_input;
    j["wet_target"] = inst.wet_target;
    if (inst.ccs_input.has_value()) {
        j["ccs_input"] = *inst.ccs_input;
        j["ccs_target"] = *inst.ccs_target;
    }
    j["permutation"] = inst.permutation;
    j["scheme"] = inst.selection == SelectionScheme::Ccs ? "ccs" : "ces";
    return j.dump();
}

PretrainInstance instance_from_json_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    PretrainInstance inst;
    inst.id = j.at("id").get<std::string>();
    inst.masked.text = j.at("masked_text").get<std::string>();
    inst.masked.mask_char_span = {j.at("mask_span").at(0).get<size_t>(),
                                  j.at("mask_span").at(1).get<size_t>()};
    inst.masked.gold_event = j.at("gold").get<std::string>();
    inst.negatives = j.at("negatives").get<std::vector<std::string>>();
    inst.ces_input = j.at("ces_input").get<std::string>();
    inst.ces_target = j.at("ces_target").get<std::string>();
    inst.wet_input = j.at("wet_input").get<std::string>();
    inst.wet_target = j.at("wet_target").get<std::string>();
    if (j.contains("ccs_input")) {
        inst.ccs_input = j.at("ccs_input").get<std::string>();
        inst.ccs_target = j.at("ccs_target").get<std::string>();
    }
    inst.permutation = j.at("permutation").get<std::vector<size_t>>();
    inst.selection =
        j.at("scheme").get<std::string>() == "ccs" ? SelectionScheme::Ccs : SelectionScheme::Ces;
    return inst;
}

void write_instances_jsonl(const std::string& path,
                           const std::vector<PretrainInstance>& instances) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open output file: " + path);
    for (const PretrainInstance& inst : instances) out << instance_to_json_line(inst) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::vector<PretrainInstance> read_instances_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open input file: " + path);
    std::vector<PretrainInstance> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(instance_from_json_line(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace claret
