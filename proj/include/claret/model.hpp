#ifndef CLARET_MODEL_HPP
#define CLARET_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "claret/bpe.hpp"
#include "claret/rng.hpp"
#include "claret/tensor.hpp"

namespace claret {

struct ModelConfig {
    size_t vocab_size = 0;
    size_t d_model = 128;
    size_t n_heads = 4;
    size_t enc_layers = 2;
    size_t dec_layers = 2;
    size_t ffn_dim = 512;
    size_t max_positions = 512;
    double dropout = 0.1;
    bool tie_embeddings = true;
    uint64_t init_seed = 0;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& json_text);
};

// Hidden states for one encoded sequence (batch member 0 when standalone).
struct EncoderState {
    ad::Tensor hidden;                    // [n, d_model]
    std::optional<size_t> mask_position;  // location of the single "[M]", if any
    size_t length = 0;
};

// Batched counterpart used by the trainer; sequences padded with PAD.
struct BatchEncoderState {
    ad::Tensor hidden;  // [B, n_max, d_model]
    std::vector<size_t> lengths;
    std::vector<std::optional<size_t>> mask_positions;
};

struct Generation {
    TokenSequence ids;   // generated tokens, EOS excluded
    double score = 0.0;  // length-normalized log-probability
};

enum class DecodeMode { Greedy, Beam };

// Encoder-decoder Transformer. Post-norm blocks, learned absolute positions,
// GELU feed-forward, output projection tied to the token embedding.
class Seq2SeqModel {
public:
    explicit Seq2SeqModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    void set_dropout(double p) { config_.dropout = p; }
    ad::ParameterStore& parameters() { return params_; }
    const ad::ParameterStore& parameters() const { return params_; }

    // --- batched core (training path) ---
    BatchEncoderState encode_batch(const std::vector<TokenSequence>& batch, bool training = false,
                                   Rng* dropout_rng = nullptr) const;
    // Decoder forward over BOS-prefixed inputs: returns hidden states [B, T, d].
    ad::Tensor decode_hidden(const BatchEncoderState& enc,
                             const std::vector<TokenSequence>& dec_inputs, bool training = false,
                             Rng* dropout_rng = nullptr) const;
    // Projects hidden states onto the vocabulary: [rows, d] -> [rows, |V|].
    ad::Tensor project_logits(const ad::Tensor& hidden_flat) const;

    // --- single-sequence operations ---
    EncoderState encode(const TokenSequence& input_ids, bool training = false,
                        Rng* dropout_rng = nullptr) const;
    ad::Tensor mask_slot_embedding(const EncoderState& state) const;  // [d_model]
    // Event pooled through its "[CLS]" prefix: encodes [CLS] e [EOS], returns
    // the hidden state at position 0.
    ad::Tensor event_embedding(const TokenSequence& event_ids, bool training = false,
                               Rng* dropout_rng = nullptr) const;
    // Distribution over the vocabulary for the next token after prefix_ids
    // (prefix starts with BOS). Inference-only.
    std::vector<double> decode_step(const TokenSequence& prefix_ids,
                                    const EncoderState& state) const;
    // Teacher-forced scoring of target_ids (EOS appended, PAD ignored).
    std::pair<double, std::vector<double>> sequence_log_prob(const EncoderState& state,
                                                             const TokenSequence& target_ids) const;
    Generation generate(const EncoderState& state, DecodeMode mode = DecodeMode::Beam,
                        size_t beam_width = 4, size_t max_len = 32) const;

    // Teacher-forced cross-entropy helper shared by losses and evaluation:
    // encodes nothing, consumes an existing batch state. Targets get EOS
    // appended and PAD padding. Returns per-example mean-per-token NLL terms.
    struct ScoredBatch {
        ad::Tensor per_example_mean_nll;  // [B]
        std::vector<std::vector<double>> per_token_nll;  // EOS included
    };
    ScoredBatch score_targets(const BatchEncoderState& enc,
                              const std::vector<TokenSequence>& targets, bool training = false,
                              Rng* dropout_rng = nullptr) const;

private:
    ad::Tensor encoder_forward(const std::vector<TokenSequence>& batch,
                               const std::vector<size_t>& lengths, bool training,
                               Rng* dropout_rng) const;
    ad::Tensor block_attention(const ad::Tensor& x_flat, size_t batch, size_t seq_len,
                               const std::string& prefix, const ad::Tensor& keys_flat,
                               size_t key_len, const std::vector<size_t>& key_valid, bool causal,
                               bool training, Rng* dropout_rng) const;
    ad::Tensor ffn_block(const ad::Tensor& x_flat, const std::string& prefix, bool training,
                         Rng* dropout_rng) const;
    ad::Tensor maybe_dropout(const ad::Tensor& x, bool training, Rng* dropout_rng) const;
    ad::Tensor layer_norm_affine(const ad::Tensor& x_flat, const std::string& prefix) const;

    ModelConfig config_;
    ad::ParameterStore params_;
};

}  // namespace claret

#endif
