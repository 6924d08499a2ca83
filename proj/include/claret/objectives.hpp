#ifndef CLARET_OBJECTIVES_HPP
#define CLARET_OBJECTIVES_HPP

#include <string>
#include <vector>

#include "claret/bpe.hpp"
#include "claret/model.hpp"
#include "claret/prompts.hpp"
#include "claret/rng.hpp"
#include "claret/tensor.hpp"

namespace claret {

struct ObjectiveFlags {
    bool use_wer = true;
    bool use_cee = true;
    bool use_ces = true;
    bool use_wet = true;
};

struct ObjectiveConfig {
    double margin = 0.5;
    // Negatives fed to the contrastive term per example per step; 0 = all of
    // the instance's negatives. The hinge is averaged over them.
    size_t cee_negatives = 0;
    ObjectiveFlags flags;
};

struct LossBreakdown {
    double l_wer = 0.0;
    double l_cee = 0.0;
    double l_pel = 0.0;
    double total = 0.0;
    size_t wer_tokens = 0;
    size_t cee_pairs = 0;
    size_t pel_tokens = 0;
    ad::Tensor total_tensor;  // graph-connected scalar for backward
};

// Mean-per-token NLL of the gold events under teacher forcing, batch-averaged.
ad::Tensor loss_wer(const Seq2SeqModel& model, const BatchEncoderState& masked_states,
                    const std::vector<TokenSequence>& event_ids, bool training = false,
                    Rng* dropout_rng = nullptr);

// Hinge between the mask-slot encoding and gold/negative event encodings;
// multiple negatives average their hinges.
ad::Tensor loss_cee(const ad::Tensor& h_mask, const ad::Tensor& c_gold,
                    const std::vector<ad::Tensor>& c_negatives, double margin = 0.5);

// Sum of the two length-normalized prompt terms, batch-averaged. Either term
// can be absent (nullptrs skipped) to express the ablations.
ad::Tensor loss_pel(const Seq2SeqModel& model, const BatchEncoderState* selection_states,
                    const std::vector<TokenSequence>* selection_targets,
                    const BatchEncoderState* wet_states,
                    const std::vector<TokenSequence>* wet_targets, bool training = false,
                    Rng* dropout_rng = nullptr);

// One full training step's losses over a batch of instances: shared encoder
// pass for the recovery and contrastive terms, separate passes for the two
// prompt inputs. Selection prompts follow each instance's scheme flag.
LossBreakdown compute_losses(const Seq2SeqModel& model, const Vocabulary& vocab,
                             const std::vector<const PretrainInstance*>& batch,
                             const ObjectiveConfig& cfg, bool training, Rng& rng);

}  // namespace claret

#endif
