#ifndef CLARET_PROMPTS_HPP
#define CLARET_PROMPTS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "claret/miner.hpp"
#include "claret/rng.hpp"

namespace claret {

inline constexpr const char* kMaskToken = "[M]";
inline constexpr const char* kClsToken = "[CLS]";

struct MaskedContext {
    std::string text;                          // paragraph with the event replaced by "[M]"
    std::pair<size_t, size_t> mask_char_span;  // location of "[M]" in text
    std::string gold_event;                    // exact bytes the mask replaced
};

enum class SelectionScheme { Ces, Ccs };

struct PretrainInstance {
    std::string id;
    MaskedContext masked;
    std::string ces_input;
    std::string ces_target;
    std::string wet_input;
    std::string wet_target;
    std::optional<std::string> ccs_input;
    std::optional<std::string> ccs_target;
    std::vector<std::string> negatives;
    std::vector<size_t> permutation;  // active selection prompt's candidate order
    SelectionScheme selection = SelectionScheme::Ces;
};

struct CesPrompt {
    std::string input;
    std::string target;
    std::vector<size_t> permutation;  // slot j holds candidate permutation[j]; 0 = gold
};

struct WetPrompt {
    std::string input;
    std::string target;
    bool mask_literal_escaped = false;
};

struct BuilderConfig {
    uint64_t seed = 0;
    double ccs_probability = 0.2;
    int workers = 1;
};

// Candidate texts may not contain the mask literal; collisions are rewritten.
std::string escape_mask_literal(const std::string& text, bool* changed = nullptr);

// Exact substitution of the event bytes by "[M]". The replacement is pure so
// that splicing gold_event back over the mask reproduces the paragraph.
MaskedContext mask_event(const std::string& paragraph, const EventSpan& event);
std::string unmask(const MaskedContext& masked);

CesPrompt build_ces_prompt(const MaskedContext& masked, const std::string& gold,
                           const std::vector<std::string>& negatives, Rng& rng);

WetPrompt build_wet_prompt(const std::string& paragraph, const EventSpan& event,
                           const std::string& negative);

std::optional<CesPrompt> build_ccs_prompt(const std::string& paragraph, const EventSpan& event,
                                          const std::string& gold_connective,
                                          const std::vector<std::string>& negative_connectives,
                                          Rng& rng);

std::vector<PretrainInstance> assemble_instances(const std::vector<MinedExample>& corpus,
                                                 const BuilderConfig& cfg);

std::string instance_to_json_line(const PretrainInstance& inst);
PretrainInstance instance_from_json_line(const std::string& line);
void write_instances_jsonl(const std::string& path, const std::vector<PretrainInstance>& instances);
std::vector<PretrainInstance> read_instances_jsonl(const std::string& path);

}  // namespace claret

#endif
