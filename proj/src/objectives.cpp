#include "claret/objectives.hpp"

#include <algorithm>

#include "claret/common.hpp"

namespace claret {

using ad::Tensor;

Tensor loss_wer(const Seq2SeqModel& model, const BatchEncoderState& masked_states,
                const std::vector<TokenSequence>& event_ids, bool training, Rng* dropout_rng) {
    for (const auto& pos : masked_states.mask_positions) {
        if (!pos.has_value())
            throw StructureError("whole event recovering needs a masked context with one [M]");
    }
    Seq2SeqModel::ScoredBatch scored =
        model.score_targets(masked_states, event_ids, training, dropout_rng);
    return ad::mean(scored.per_example_mean_nll);
}

Tensor loss_cee(const Tensor& h_mask, const Tensor& c_gold, const std::vector<Tensor>& c_negatives,
                double margin) {
    if (c_negatives.empty()) throw StructureError("contrastive term needs >= 1 negative");
    if (h_mask.shape() != c_gold.shape())
        throw DimensionError("contrastive term: mask and event embeddings differ in shape");
    Tensor d_gold = ad::euclidean_distance(h_mask, c_gold);
    Tensor acc;
    for (const Tensor& c_neg : c_negatives) {
        if (c_neg.shape() != h_mask.shape())
            throw DimensionError("contrastive term: negative embedding differs in shape");
        Tensor d_neg = ad::euclidean_distance(h_mask, c_neg);
        Tensor hinge = ad::relu(ad::add_scalar(ad::sub(d_gold, d_neg), margin));
        acc = acc.defined() ? ad::add(acc, hinge) : hinge;
    }
    return ad::scale(acc, 1.0 / static_cast<double>(c_negatives.size()));
}

Tensor loss_pel(const Seq2SeqModel& model, const BatchEncoderState* selection_states,
                const std::vector<TokenSequence>* selection_targets,
                const BatchEncoderState* wet_states, const std::vector<TokenSequence>* wet_targets,
                bool training, Rng* dropout_rng) {
    Tensor total;
    if (selection_states && selection_targets) {
        Seq2SeqModel::ScoredBatch scored =
            model.score_targets(*selection_states, *selection_targets, training, dropout_rng);
        total = ad::mean(scored.per_example_mean_nll);
    }
    if (wet_states && wet_targets) {
        Seq2SeqModel::ScoredBatch scored =
            model.score_targets(*wet_states, *wet_targets, training, dropout_rng);
        Tensor term = ad::mean(scored.per_example_mean_nll);
        total = total.defined() ? ad::add(total, term) : term;
    }
    if (!total.defined())
        throw StructureError("prompt-based event locating needs at least one active prompt");
    return total;
}

LossBreakdown compute_losses(const Seq2SeqModel& model, const Vocabulary& vocab,
                             const std::vector<const PretrainInstance*>& batch,
                             const ObjectiveConfig& cfg, bool training, Rng& rng) {
    if (batch.empty()) throw StructureError("compute_losses: empty batch");
    const ObjectiveFlags& flags = cfg.flags;
    const size_t b_count = batch.size();

    std::vector<TokenSequence> masked_ids(b_count);
    std::vector<TokenSequence> event_ids(b_count);
    for (size_t b = 0; b < b_count; ++b) {
        masked_ids[b] = vocab.encode(batch[b]->masked.text, /*add_bos_eos=*/true);
        event_ids[b] = vocab.encode(batch[b]->masked.gold_event);
        if (event_ids[b].empty()) event_ids[b].push_back(Vocabulary::kUnk);
    }

    LossBreakdown out;
    Tensor total;
    auto accumulate = [&](const Tensor& term) {
        total = total.defined() ? ad::add(total, term) : term;
    };

    // Shared encoder pass feeds both the recovery loss and the mask-slot
    // representations of the contrastive loss.
    BatchEncoderState masked_states;
    if (flags.use_wer || flags.use_cee) {
        masked_states = model.encode_batch(masked_ids, training, &rng);
    }

    if (flags.use_wer) {
        Tensor term = loss_wer(model, masked_states, event_ids, training, &rng);
        out.l_wer = term.scalar();
        for (const auto& ids : event_ids) out.wer_tokens += ids.size() + 1;  // EOS scored
        accumulate(term);
    }

    if (flags.use_cee) {
        // Batch every event encoding ([CLS] e [EOS]) into one pass.
        std::vector<TokenSequence> cls_batch;
        std::vector<std::pair<size_t, size_t>> neg_ranges(b_count);
        std::vector<size_t> gold_rows(b_count);
        for (size_t b = 0; b < b_count; ++b) {
            auto make_cls = [&](const std::string& text) {
                TokenSequence ids;
                ids.push_back(Vocabulary::kCls);
                TokenSequence body = vocab.encode(text);
                if (body.empty()) body.push_back(Vocabulary::kUnk);
                ids.insert(ids.end(), body.begin(), body.end());
                ids.push_back(Vocabulary::kEos);
                return ids;
            };
            gold_rows[b] = cls_batch.size();
            cls_batch.push_back(make_cls(batch[b]->masked.gold_event));
            const auto& negs = batch[b]->negatives;
            size_t want = cfg.cee_negatives == 0 ? negs.size()
                                                 : std::min(cfg.cee_negatives, negs.size());
            if (want == 0) throw StructureError("instance " + batch[b]->id + " has no negatives");
            std::vector<size_t> pick(negs.size());
            for (size_t i = 0; i < pick.size(); ++i) pick[i] = i;
            if (want < negs.size()) {
                for (size_t i = 0; i < want; ++i) {
                    const size_t j = i + static_cast<size_t>(rng.below(pick.size() - i));
                    std::swap(pick[i], pick[j]);
                }
            }
            neg_ranges[b] = {cls_batch.size(), cls_batch.size() + want};
            for (size_t i = 0; i < want; ++i) cls_batch.push_back(make_cls(negs[pick[i]]));
        }
        BatchEncoderState event_states = model.encode_batch(cls_batch, training, &rng);

        Tensor acc;
        for (size_t b = 0; b < b_count; ++b) {
            if (!masked_states.mask_positions[b].has_value())
                throw StructureError("instance " + batch[b]->id + " lost its mask token");
            Tensor h = ad::select_row(ad::select_batch(masked_states.hidden, b),
                                      *masked_states.mask_positions[b]);
            Tensor c_gold = ad::select_row(ad::select_batch(event_states.hidden, gold_rows[b]), 0);
            std::vector<Tensor> c_negs;
            for (size_t r = neg_ranges[b].first; r < neg_ranges[b].second; ++r)
                c_negs.push_back(ad::select_row(ad::select_batch(event_states.hidden, r), 0));
            Tensor hinge = loss_cee(h, c_gold, c_negs, cfg.margin);
            out.cee_pairs += c_negs.size();
            acc = acc.defined() ? ad::add(acc, hinge) : hinge;
        }
        Tensor term = ad::scale(acc, 1.0 / static_cast<double>(b_count));
        out.l_cee = term.scalar();
        accumulate(term);
    }

    if (flags.use_ces || flags.use_wet) {
        Tensor term;
        if (flags.use_ces) {
            std::vector<TokenSequence> sel_inputs(b_count), sel_targets(b_count);
            for (size_t b = 0; b < b_count; ++b) {
                const PretrainInstance& inst = *batch[b];
                const bool ccs = inst.selection == SelectionScheme::Ccs && inst.ccs_input.has_value();
                sel_inputs[b] = vocab.encode(ccs ? *inst.ccs_input : inst.ces_input, true);
                sel_targets[b] = vocab.encode(ccs ? *inst.ccs_target : inst.ces_target);
                if (sel_targets[b].empty()) sel_targets[b].push_back(Vocabulary::kUnk);
                out.pel_tokens += sel_targets[b].size() + 1;
            }
            BatchEncoderState sel_states = model.encode_batch(sel_inputs, training, &rng);
            term = loss_pel(model, &sel_states, &sel_targets, nullptr, nullptr, training, &rng);
        }
        if (flags.use_wet) {
            std::vector<TokenSequence> wet_inputs(b_count), wet_targets(b_count);
            for (size_t b = 0; b < b_count; ++b) {
                wet_inputs[b] = vocab.encode(batch[b]->wet_input, true);
                wet_targets[b] = vocab.encode(batch[b]->wet_target);
                if (wet_targets[b].empty()) wet_targets[b].push_back(Vocabulary::kUnk);
                out.pel_tokens += wet_targets[b].size() + 1;
            }
            BatchEncoderState wet_states = model.encode_batch(wet_inputs, training, &rng);
            Tensor wet_term =
                loss_pel(model, nullptr, nullptr, &wet_states, &wet_targets, training, &rng);
            term = term.defined() ? ad::add(term, wet_term) : wet_term;
        }
        out.l_pel = term.scalar();
        accumulate(term);
    }

    if (!total.defined()) throw StructureError("all objectives disabled; nothing to train");
    out.total_tensor = total;
    out.total = total.scalar();
    return out;
}

}  // namespace claret
