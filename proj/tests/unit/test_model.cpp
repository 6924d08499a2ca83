#include <doctest.h>

#include <cmath>

#include "claret/bpe.hpp"
#include "claret/common.hpp"
#include "claret/model.hpp"

using namespace claret;

namespace {

ModelConfig tiny_config(size_t vocab = 32) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.ffn_dim = 48;
    cfg.max_positions = 64;
    cfg.dropout = 0.0;
    cfg.init_seed = 11;
    return cfg;
}

TokenSequence ids_of(std::initializer_list<int> xs) {
    TokenSequence out;
    for (int x : xs) out.push_back(static_cast<TokenId>(x));
    return out;
}

}  // namespace

TEST_CASE("config invariants are validated") {
    ModelConfig cfg = tiny_config();
    cfg.n_heads = 5;  // 32 % 5 != 0
    CHECK_THROWS_AS(Seq2SeqModel{cfg}, DimensionError);
    cfg = tiny_config();
    cfg.vocab_size = 4;
    CHECK_THROWS_AS(Seq2SeqModel{cfg}, StructureError);
    const std::string json = tiny_config().to_json();
    const ModelConfig back = ModelConfig::from_json(json);
    CHECK(back.to_json() == json);
}

TEST_CASE("encode locates the single mask token") {
    const Seq2SeqModel model(tiny_config());
    const EncoderState with_mask = model.encode(ids_of({Vocabulary::kBos, Vocabulary::kMask,
                                                        Vocabulary::kEos}));
    REQUIRE(with_mask.mask_position.has_value());
    CHECK(*with_mask.mask_position == 1);
    CHECK(with_mask.hidden.shape() == std::vector<size_t>{3, 32});

    const EncoderState no_mask = model.encode(ids_of({Vocabulary::kBos, 9, Vocabulary::kEos}));
    CHECK_FALSE(no_mask.mask_position.has_value());

    CHECK_THROWS_AS(model.encode(ids_of({Vocabulary::kMask, 9, Vocabulary::kMask})),
                    StructureError);
    TokenSequence too_long(65, 9);
    CHECK_THROWS_AS(model.encode(too_long), StructureError);
}

TEST_CASE("padding the batch tail leaves real positions unchanged") {
    const Seq2SeqModel model(tiny_config());
    const TokenSequence a = ids_of({Vocabulary::kBos, 8, 9, Vocabulary::kEos});
    const TokenSequence b = ids_of({Vocabulary::kBos, 10, 11, 12, 13, 14, Vocabulary::kEos});

    const EncoderState alone = model.encode(a);
    const BatchEncoderState padded = model.encode_batch({a, b});  // a gains a PAD tail
    for (size_t pos = 0; pos < a.size(); ++pos) {
        for (size_t d = 0; d < 32; ++d) {
            const double batched = padded.hidden.data()[(0 * padded.hidden.dim(1) + pos) * 32 + d];
            const double single = alone.hidden.data()[pos * 32 + d];
            CHECK(batched == doctest::Approx(single).epsilon(1e-6));
        }
    }
}

TEST_CASE("mask slot embedding is the hidden column at the mask") {
    const Seq2SeqModel model(tiny_config());
    const EncoderState state =
        model.encode(ids_of({Vocabulary::kBos, 7, Vocabulary::kMask, 9, Vocabulary::kEos}));
    const ad::Tensor slot = model.mask_slot_embedding(state);
    REQUIRE(slot.shape() == std::vector<size_t>{32});
    for (size_t d = 0; d < 32; ++d)
        CHECK(slot.data()[d] == state.hidden.data()[2 * 32 + d]);

    const EncoderState no_mask = model.encode(ids_of({Vocabulary::kBos, 7, Vocabulary::kEos}));
    CHECK_THROWS_AS(model.mask_slot_embedding(no_mask), StructureError);

    // sensitivity: a changed context word moves the slot encoding
    const EncoderState other =
        model.encode(ids_of({Vocabulary::kBos, 8, Vocabulary::kMask, 9, Vocabulary::kEos}));
    const ad::Tensor slot2 = model.mask_slot_embedding(other);
    double diff = 0.0;
    for (size_t d = 0; d < 32; ++d) diff += std::abs(slot.data()[d] - slot2.data()[d]);
    CHECK(diff > 1e-6);
}

TEST_CASE("event embeddings pool through the CLS prefix") {
    const Seq2SeqModel model(tiny_config());
    const ad::Tensor a = model.event_embedding(ids_of({7, 8, 9}));
    const ad::Tensor b = model.event_embedding(ids_of({7, 8, 9}));
    REQUIRE(a.shape() == std::vector<size_t>{32});
    CHECK(a.data() == b.data());  // identical texts, identical vectors
    const ad::Tensor c = model.event_embedding(ids_of({7, 8, 10}));
    CHECK(a.data() != c.data());
    CHECK_THROWS_AS(model.event_embedding({}), StructureError);
}

TEST_CASE("decode step returns a normalized distribution") {
    const Seq2SeqModel model(tiny_config());
    const EncoderState state =
        model.encode(ids_of({Vocabulary::kBos, Vocabulary::kMask, Vocabulary::kEos}));
    const std::vector<double> dist = model.decode_step(ids_of({Vocabulary::kBos, 7}), state);
    REQUIRE(dist.size() == 32);
    double total = 0.0;
    for (double p : dist) {
        CHECK(p >= 0.0);
        total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
    CHECK_THROWS_AS(model.decode_step(ids_of({7}), state), StructureError);  // no BOS
}

TEST_CASE("zeroed embeddings make the output distribution exactly uniform") {
    Seq2SeqModel model(tiny_config());
    ad::Tensor emb = model.parameters().get("tok_emb");
    for (double& x : emb.data()) x = 0.0;
    const EncoderState state =
        model.encode(ids_of({Vocabulary::kBos, Vocabulary::kMask, Vocabulary::kEos}));
    const std::vector<double> dist = model.decode_step(ids_of({Vocabulary::kBos}), state);
    for (double p : dist) CHECK(p == doctest::Approx(1.0 / 32).epsilon(1e-12));
}

TEST_CASE("sequence scoring matches stepwise decoding and is causal") {
    const Seq2SeqModel model(tiny_config());
    const EncoderState state =
        model.encode(ids_of({Vocabulary::kBos, 7, Vocabulary::kMask, Vocabulary::kEos}));
    const TokenSequence target = ids_of({9, 10, 11});

    const auto [total, per_token] = model.sequence_log_prob(state, target);
    REQUIRE(per_token.size() == 4);  // three tokens plus EOS
    CHECK(total >= 0.0);
    for (double nll : per_token) CHECK(nll >= 0.0);

    // oracle: rebuild each factor with decode_step
    TokenSequence prefix = ids_of({Vocabulary::kBos});
    TokenSequence shifted = target;
    shifted.push_back(Vocabulary::kEos);
    double stepwise = 0.0;
    for (size_t t = 0; t < shifted.size(); ++t) {
        const std::vector<double> dist = model.decode_step(prefix, state);
        stepwise += -std::log(dist[static_cast<size_t>(shifted[t])]);
        CHECK(per_token[t] ==
              doctest::Approx(-std::log(dist[static_cast<size_t>(shifted[t])])).epsilon(1e-6));
        prefix.push_back(shifted[t]);
    }
    CHECK(total == doctest::Approx(stepwise).epsilon(1e-6));

    // causality: edits past position t leave earlier factors untouched
    const auto changed = model.sequence_log_prob(state, ids_of({9, 10, 12}));
    CHECK(changed.second[0] == doctest::Approx(per_token[0]).epsilon(1e-9));
    CHECK(changed.second[1] == doctest::Approx(per_token[1]).epsilon(1e-9));
    CHECK(changed.second[2] != doctest::Approx(per_token[2]).epsilon(1e-9));

    // empty target scores the EOS step alone
    const auto empty = model.sequence_log_prob(state, {});
    CHECK(empty.second.size() == 1);
}

TEST_CASE("generation halts, beam(1) is greedy and beam(4) never scores worse") {
    const Seq2SeqModel model(tiny_config());
    for (int fixture = 0; fixture < 4; ++fixture) {
        const EncoderState state = model.encode(
            ids_of({Vocabulary::kBos, 7 + fixture, Vocabulary::kMask, Vocabulary::kEos}));
        const Generation greedy = model.generate(state, DecodeMode::Greedy, 1, 12);
        const Generation beam1 = model.generate(state, DecodeMode::Beam, 1, 12);
        const Generation beam4 = model.generate(state, DecodeMode::Beam, 4, 12);
        CHECK(greedy.ids == beam1.ids);
        CHECK(greedy.score == doctest::Approx(beam1.score).epsilon(1e-12));
        CHECK(beam4.score >= greedy.score - 1e-12);
        CHECK(greedy.ids.size() <= 12);
        CHECK(beam4.ids.size() <= 12);
    }
}

TEST_CASE("encoder is permutation equivariant once positions are zeroed") {
    Seq2SeqModel model(tiny_config());
    for (double& x : model.parameters().get("enc_pos").data()) x = 0.0;
    const TokenSequence input = ids_of({7, 8, 9, 10, 11});
    const TokenSequence permuted = ids_of({9, 7, 11, 8, 10});
    const std::vector<size_t> perm = {2, 0, 4, 1, 3};  // permuted[i] = input[perm[i]]

    const EncoderState a = model.encode(input);
    const EncoderState b = model.encode(permuted);
    for (size_t i = 0; i < perm.size(); ++i) {
        for (size_t d = 0; d < 32; ++d) {
            CHECK(b.hidden.data()[i * 32 + d] ==
                  doctest::Approx(a.hidden.data()[perm[i] * 32 + d]).epsilon(1e-5));
        }
    }
}

TEST_CASE("tied embeddings share the projection; untied models own one") {
    ModelConfig cfg = tiny_config();
    const Seq2SeqModel tied(cfg);
    CHECK_FALSE(tied.parameters().has("out_proj"));
    // logits reproduce a manual product against the embedding table
    const ad::Tensor emb = tied.parameters().get("tok_emb");
    ad::Tensor h = ad::Tensor::from_data({1, 32}, std::vector<double>(32, 0.1));
    const ad::Tensor logits = tied.project_logits(h);
    double manual = 0.0;
    for (size_t d = 0; d < 32; ++d) manual += 0.1 * emb.data()[5 * 32 + d];
    CHECK(logits.data()[5] == doctest::Approx(manual).epsilon(1e-9));

    cfg.tie_embeddings = false;
    const Seq2SeqModel untied(cfg);
    CHECK(untied.parameters().has("out_proj"));
}
