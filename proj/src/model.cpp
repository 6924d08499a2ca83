#include "claret/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "claret/common.hpp"

namespace claret {

using ad::Tensor;

void ModelConfig::validate() const {
    if (vocab_size <= 6) throw StructureError("model config: vocab_size must exceed the specials");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
        throw DimensionError("model config: d_model " + std::to_string(d_model) +
                             " not divisible by n_heads " + std::to_string(n_heads));
    if (enc_layers == 0 || dec_layers == 0)
        throw StructureError("model config: need at least one encoder and decoder layer");
    if (max_positions == 0) throw StructureError("model config: max_positions must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw StructureError("model config: dropout must be in [0, 1)");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["vocab_size"] = vocab_size;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["enc_layers"] = enc_layers;
    j["dec_layers"] = dec_layers;
    j["ffn_dim"] = ffn_dim;
    j["max_positions"] = max_positions;
    j["dropout"] = dropout;
    j["tie_embeddings"] = tie_embeddings;
    j["init_seed"] = init_seed;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<size_t>();
    cfg.d_model = j.at("d_model").get<size_t>();
    cfg.n_heads = j.at("n_heads").get<size_t>();
    cfg.enc_layers = j.at("enc_layers").get<size_t>();
    cfg.dec_layers = j.at("dec_layers").get<size_t>();
    cfg.ffn_dim = j.at("ffn_dim").get<size_t>();
    cfg.max_positions = j.at("max_positions").get<size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.tie_embeddings = j.at("tie_embeddings").get<bool>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    return cfg;
}

namespace {

constexpr double kInitStd = 0.02;

std::vector<double> normal_init(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, kInitStd);
    return v;
}

std::vector<int32_t> pad_batch(const std::vector<TokenSequence>& batch, size_t n_max) {
    std::vector<int32_t> flat(batch.size() * n_max, Vocabulary::kPad);
    for (size_t b = 0; b < batch.size(); ++b) {
        std::copy(batch[b].begin(), batch[b].end(), flat.begin() + static_cast<long>(b * n_max));
    }
    return flat;
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.init_seed);
    const size_t v = config_.vocab_size, d = config_.d_model, f = config_.ffn_dim;

    params_.create("tok_emb", {v, d}, normal_init(rng, v * d));
    params_.create("enc_pos", {config_.max_positions, d},
                   normal_init(rng, config_.max_positions * d));
    params_.create("dec_pos", {config_.max_positions, d},
                   normal_init(rng, config_.max_positions * d));
    if (!config_.tie_embeddings) params_.create("out_proj", {v, d}, normal_init(rng, v * d));

    auto create_attention = [&](const std::string& prefix) {
        for (const char* w : {"wq", "wk", "wv", "wo"})
            params_.create(prefix + w, {d, d}, normal_init(rng, d * d));
        for (const char* b : {"bq", "bk", "bv", "bo"}) params_.create(prefix + b, {d});
        params_.create(prefix + "ln_g", {d}, std::vector<double>(d, 1.0));
        params_.create(prefix + "ln_b", {d});
    };
    auto create_ffn = [&](const std::string& prefix) {
        params_.create(prefix + "w1", {d, f}, normal_init(rng, d * f));
        params_.create(prefix + "b1", {f});
        params_.create(prefix + "w2", {f, d}, normal_init(rng, f * d));
        params_.create(prefix + "b2", {d});
        params_.create(prefix + "ln_g", {d}, std::vector<double>(d, 1.0));
        params_.create(prefix + "ln_b", {d});
    };

    for (size_t i = 0; i < config_.enc_layers; ++i) {
        const std::string layer = "enc" + std::to_string(i) + ".";
        create_attention(layer + "attn.");
        create_ffn(layer + "ffn.");
    }
    for (size_t i = 0; i < config_.dec_layers; ++i) {
        const std::string layer = "dec" + std::to_string(i) + ".";
        create_attention(layer + "self.");
        create_attention(layer + "cross.");
        create_ffn(layer + "ffn.");
    }

    // Parameters live on the float32 grid from the start; checkpoints store
    // 32-bit values, so save/load stays lossless at any step.
    for (size_t p = 0; p < params_.count(); ++p) {
        for (double& x : params_.param_at(p).data())
            x = static_cast<double>(static_cast<float>(x));
    }
}

Tensor Seq2SeqModel::maybe_dropout(const Tensor& x, bool training, Rng* dropout_rng) const {
    if (!training || config_.dropout == 0.0) return x;
    const uint64_t seed = dropout_rng ? dropout_rng->next_u64() : 0;
    return ad::dropout(x, config_.dropout, seed);
}

Tensor Seq2SeqModel::layer_norm_affine(const Tensor& x_flat, const std::string& prefix) const {
    Tensor normed = ad::layer_norm(x_flat);
    return ad::add(ad::mul(normed, params_.get(prefix + "ln_g")), params_.get(prefix + "ln_b"));
}

Tensor Seq2SeqModel::block_attention(const Tensor& x_flat, size_t batch, size_t seq_len,
                                     const std::string& prefix, const Tensor& keys_flat,
                                     size_t key_len, const std::vector<size_t>& key_valid,
                                     bool causal, bool training, Rng* dropout_rng) const {
    const size_t d = config_.d_model, heads = config_.n_heads, dh = d / heads;

    auto project = [&](const Tensor& input, const char* w, const char* b) {
        return ad::add(ad::matmul(input, params_.get(prefix + w)), params_.get(prefix + b));
    };
    auto to_heads = [&](const Tensor& t, size_t rows) {
        // [B*rows, d] -> [B*H, rows, dh]
        Tensor r = ad::reshape(t, {batch, rows, heads, dh});
        r = ad::permute(r, {0, 2, 1, 3});
        return ad::reshape(r, {batch * heads, rows, dh});
    };

    Tensor q = to_heads(project(x_flat, "wq", "bq"), seq_len);
    Tensor k = to_heads(project(keys_flat, "wk", "bk"), key_len);
    Tensor v = to_heads(project(keys_flat, "wv", "bv"), key_len);

    Tensor scores = ad::scale(ad::bmm(q, k, /*transpose_b=*/true),
                              1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<size_t> group_valid(batch * heads);
    for (size_t b = 0; b < batch; ++b)
        for (size_t h = 0; h < heads; ++h) group_valid[b * heads + h] = key_valid[b];
    Tensor probs = ad::attention_softmax(scores, group_valid, causal);
    probs = maybe_dropout(probs, training, dropout_rng);

    Tensor ctx = ad::bmm(probs, v);  // [B*H, seq, dh]
    ctx = ad::reshape(ctx, {batch, heads, seq_len, dh});
    ctx = ad::permute(ctx, {0, 2, 1, 3});
    ctx = ad::reshape(ctx, {batch * seq_len, d});

    Tensor out = ad::add(ad::matmul(ctx, params_.get(prefix + "wo")), params_.get(prefix + "bo"));
    out = maybe_dropout(out, training, dropout_rng);
    return layer_norm_affine(ad::add(x_flat, out), prefix);
}

Tensor Seq2SeqModel::ffn_block(const Tensor& x_flat, const std::string& prefix, bool training,
                               Rng* dropout_rng) const {
    Tensor h = ad::add(ad::matmul(x_flat, params_.get(prefix + "w1")), params_.get(prefix + "b1"));
    h = ad::gelu(h);
    h = maybe_dropout(h, training, dropout_rng);
    Tensor out = ad::add(ad::matmul(h, params_.get(prefix + "w2")), params_.get(prefix + "b2"));
    out = maybe_dropout(out, training, dropout_rng);
    return layer_norm_affine(ad::add(x_flat, out), prefix);
}

Tensor Seq2SeqModel::encoder_forward(const std::vector<TokenSequence>& batch,
                                     const std::vector<size_t>& lengths, bool training,
                                     Rng* dropout_rng) const {
    const size_t b_count = batch.size();
    const size_t n = *std::max_element(lengths.begin(), lengths.end());
    const size_t d = config_.d_model;

    Tensor emb = ad::embedding_gather(params_.get("tok_emb"), pad_batch(batch, n));
    Tensor pos = ad::slice(params_.get("enc_pos"), 0, 0, n);
    Tensor x = ad::add(ad::reshape(emb, {b_count, n, d}), pos);
    Tensor x_flat = maybe_dropout(ad::reshape(x, {b_count * n, d}), training, dropout_rng);

    for (size_t i = 0; i < config_.enc_layers; ++i) {
        const std::string layer = "enc" + std::to_string(i) + ".";
        x_flat = block_attention(x_flat, b_count, n, layer + "attn.", x_flat, n, lengths,
                                 /*causal=*/false, training, dropout_rng);
        x_flat = ffn_block(x_flat, layer + "ffn.", training, dropout_rng);
    }
    return ad::reshape(x_flat, {b_count, n, d});
}

BatchEncoderState Seq2SeqModel::encode_batch(const std::vector<TokenSequence>& batch, bool training,
                                             Rng* dropout_rng) const {
    if (batch.empty()) throw StructureError("encode_batch: empty batch");
    BatchEncoderState state;
    state.lengths.reserve(batch.size());
    for (const TokenSequence& ids : batch) {
        if (ids.empty()) throw StructureError("encode_batch: empty input sequence");
        if (ids.size() > config_.max_positions)
            throw StructureError("input length " + std::to_string(ids.size()) +
                                 " exceeds max_positions " + std::to_string(config_.max_positions));
        state.lengths.push_back(ids.size());
        size_t mask_count = 0;
        size_t mask_pos = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] == Vocabulary::kMask) {
                ++mask_count;
                mask_pos = i;
            }
        }
        if (mask_count > 1)
            throw StructureError("input carries " + std::to_string(mask_count) +
                                 " mask tokens; exactly one is allowed");
        state.mask_positions.push_back(mask_count == 1 ? std::optional<size_t>(mask_pos)
                                                       : std::nullopt);
    }
    state.hidden = encoder_forward(batch, state.lengths, training, dropout_rng);
    return state;
}

Tensor Seq2SeqModel::decode_hidden(const BatchEncoderState& enc,
                                   const std::vector<TokenSequence>& dec_inputs, bool training,
                                   Rng* dropout_rng) const {
    if (dec_inputs.size() != enc.lengths.size())
        throw DimensionError("decode_hidden: decoder batch does not match encoder batch");
    const size_t b_count = dec_inputs.size();
    const size_t d = config_.d_model;
    std::vector<size_t> dec_lengths;
    size_t t_max = 0;
    for (const TokenSequence& ids : dec_inputs) {
        if (ids.empty() || ids.front() != Vocabulary::kBos)
            throw StructureError("decoder input must start with BOS");
        if (ids.size() > config_.max_positions)
            throw StructureError("decoder length " + std::to_string(ids.size()) +
                                 " exceeds max_positions " + std::to_string(config_.max_positions));
        dec_lengths.push_back(ids.size());
        t_max = std::max(t_max, ids.size());
    }
    const size_t n_enc = enc.hidden.dim(1);

    Tensor emb = ad::embedding_gather(params_.get("tok_emb"), pad_batch(dec_inputs, t_max));
    Tensor pos = ad::slice(params_.get("dec_pos"), 0, 0, t_max);
    Tensor x = ad::add(ad::reshape(emb, {b_count, t_max, d}), pos);
    Tensor x_flat = maybe_dropout(ad::reshape(x, {b_count * t_max, d}), training, dropout_rng);

    Tensor enc_flat = ad::reshape(enc.hidden, {b_count * n_enc, d});
    for (size_t i = 0; i < config_.dec_layers; ++i) {
        const std::string layer = "dec" + std::to_string(i) + ".";
        x_flat = block_attention(x_flat, b_count, t_max, layer + "self.", x_flat, t_max,
                                 dec_lengths, /*causal=*/true, training, dropout_rng);
        x_flat = block_attention(x_flat, b_count, t_max, layer + "cross.", enc_flat, n_enc,
                                 enc.lengths, /*causal=*/false, training, dropout_rng);
        x_flat = ffn_block(x_flat, layer + "ffn.", training, dropout_rng);
    }
    return ad::reshape(x_flat, {b_count, t_max, d});
}

Tensor Seq2SeqModel::project_logits(const Tensor& hidden_flat) const {
    const Tensor table =
        config_.tie_embeddings ? params_.get("tok_emb") : params_.get("out_proj");
    return ad::matmul(hidden_flat, ad::transpose(table));
}

EncoderState Seq2SeqModel::encode(const TokenSequence& input_ids, bool training,
                                  Rng* dropout_rng) const {
    BatchEncoderState batch = encode_batch({input_ids}, training, dropout_rng);
    EncoderState state;
    state.hidden = ad::select_batch(batch.hidden, 0);
    state.mask_position = batch.mask_positions[0];
    state.length = batch.lengths[0];
    return state;
}

Tensor Seq2SeqModel::mask_slot_embedding(const EncoderState& state) const {
    if (!state.mask_position.has_value())
        throw StructureError("mask_slot_embedding: encoded input has no mask token");
    return ad::select_row(state.hidden, *state.mask_position);
}

Tensor Seq2SeqModel::event_embedding(const TokenSequence& event_ids, bool training,
                                     Rng* dropout_rng) const {
    if (event_ids.empty()) throw StructureError("event_embedding: empty event");
    TokenSequence ids;
    ids.reserve(event_ids.size() + 2);
    ids.push_back(Vocabulary::kCls);
    ids.insert(ids.end(), event_ids.begin(), event_ids.end());
    ids.push_back(Vocabulary::kEos);
    BatchEncoderState batch = encode_batch({ids}, training, dropout_rng);
    return ad::select_row(ad::select_batch(batch.hidden, 0), 0);
}

namespace {

BatchEncoderState as_batch(const EncoderState& state) {
    BatchEncoderState batch;
    batch.hidden = ad::reshape(state.hidden, {1, state.hidden.dim(0), state.hidden.dim(1)});
    batch.lengths = {state.length};
    batch.mask_positions = {state.mask_position};
    return batch;
}

}  // namespace

std::vector<double> Seq2SeqModel::decode_step(const TokenSequence& prefix_ids,
                                              const EncoderState& state) const {
    ad::NoGradGuard guard;
    if (prefix_ids.empty() || prefix_ids.front() != Vocabulary::kBos)
        throw StructureError("decode_step: prefix must start with BOS");
    BatchEncoderState enc = as_batch(state);
    Tensor hidden = decode_hidden(enc, {prefix_ids});
    Tensor last = ad::select_row(ad::select_batch(hidden, 0), prefix_ids.size() - 1);
    Tensor logits = project_logits(ad::reshape(last, {1, config_.d_model}));
    Tensor dist = ad::softmax(logits, -1);
    return dist.data();
}

Seq2SeqModel::ScoredBatch Seq2SeqModel::score_targets(const BatchEncoderState& enc,
                                                      const std::vector<TokenSequence>& targets,
                                                      bool training, Rng* dropout_rng) const {
    const size_t b_count = targets.size();
    std::vector<TokenSequence> dec_inputs(b_count);
    std::vector<TokenSequence> shifted(b_count);
    for (size_t b = 0; b < b_count; ++b) {
        dec_inputs[b].push_back(Vocabulary::kBos);
        dec_inputs[b].insert(dec_inputs[b].end(), targets[b].begin(), targets[b].end());
        shifted[b] = targets[b];
        shifted[b].push_back(Vocabulary::kEos);
    }
    Tensor hidden = decode_hidden(enc, dec_inputs, training, dropout_rng);
    const size_t t_max = hidden.dim(1);
    Tensor logits = project_logits(ad::reshape(hidden, {b_count * t_max, config_.d_model}));

    ScoredBatch out;
    out.per_token_nll.resize(b_count);
    std::vector<Tensor> per_example;
    for (size_t b = 0; b < b_count; ++b) {
        const size_t len = shifted[b].size();
        Tensor rows = ad::slice(logits, 0, b * t_max, b * t_max + len);
        std::vector<double> nll;
        Tensor example_sum =
            ad::cross_entropy(rows, std::vector<int32_t>(shifted[b].begin(), shifted[b].end()),
                              Vocabulary::kPad, ad::Reduction::Sum, &nll);
        out.per_token_nll[b] = std::move(nll);
        per_example.push_back(ad::scale(example_sum, 1.0 / static_cast<double>(len)));
    }
    out.per_example_mean_nll = ad::concat(per_example, 0);
    return out;
}

std::pair<double, std::vector<double>> Seq2SeqModel::sequence_log_prob(
    const EncoderState& state, const TokenSequence& target_ids) const {
    ad::NoGradGuard guard;
    BatchEncoderState enc = as_batch(state);
    ScoredBatch scored = score_targets(enc, {target_ids});
    double total = 0.0;
    for (double v : scored.per_token_nll[0]) total += v;
    return {total, scored.per_token_nll[0]};
}

Generation Seq2SeqModel::generate(const EncoderState& state, DecodeMode mode, size_t beam_width,
                                  size_t max_len) const {
    ad::NoGradGuard guard;
    if (mode == DecodeMode::Greedy) beam_width = 1;
    if (beam_width == 0) beam_width = 1;

    struct Hyp {
        TokenSequence prefix;  // BOS included
        double sum_logp = 0.0;
        size_t count = 0;  // generated tokens, EOS included when finished
    };
    auto normalized = [](const Hyp& h) {
        return h.count == 0 ? -1e300 : h.sum_logp / static_cast<double>(h.count);
    };

    std::vector<Hyp> live{{TokenSequence{Vocabulary::kBos}, 0.0, 0}};
    std::vector<Hyp> finished;

    for (size_t step = 0; step < max_len && !live.empty(); ++step) {
        std::vector<Hyp> candidates;
        for (const Hyp& hyp : live) {
            const std::vector<double> dist = decode_step(hyp.prefix, state);
            // top beam_width continuations; ties resolved toward lower ids
            std::vector<size_t> idx(dist.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            const size_t take = std::min(beam_width, idx.size());
            std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(take), idx.end(),
                              [&](size_t a, size_t b) {
                                  if (dist[a] != dist[b]) return dist[a] > dist[b];
                                  return a < b;
                              });
            for (size_t r = 0; r < take; ++r) {
                const int32_t tok = static_cast<int32_t>(idx[r]);
                const double logp = std::log(std::max(dist[idx[r]], 1e-300));
                Hyp next = hyp;
                next.sum_logp += logp;
                next.count += 1;
                if (tok == Vocabulary::kEos) {
                    finished.push_back(next);
                } else {
                    next.prefix.push_back(tok);
                    candidates.push_back(std::move(next));
                }
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Hyp& a, const Hyp& b) {
            if (a.sum_logp != b.sum_logp) return a.sum_logp > b.sum_logp;
            return a.prefix < b.prefix;
        });
        if (candidates.size() > beam_width) candidates.resize(beam_width);
        live = std::move(candidates);
        if (finished.size() >= beam_width) break;
        // decoder prefix capacity: stop extending at the position limit
        if (!live.empty() && live[0].prefix.size() >= config_.max_positions) break;
    }
    for (const Hyp& hyp : live) finished.push_back(hyp);  // ran out of steps

    const Hyp* best = nullptr;
    for (const Hyp& hyp : finished) {
        if (!best || normalized(hyp) > normalized(*best)) best = &hyp;
    }
    Generation gen;
    if (!best) return gen;
    gen.ids.assign(best->prefix.begin() + 1, best->prefix.end());
    gen.score = normalized(*best);
    return gen;
}

}  // namespace claret
