#include <doctest.h>

#include <cmath>

#include "claret/bpe.hpp"
#include "claret/common.hpp"
#include "claret/model.hpp"
#include "claret/objectives.hpp"
#include "claret/optimizer.hpp"
#include "claret/trainer.hpp"
#include "support/synthetic.hpp"

using namespace claret;
using ad::Tensor;

namespace {

struct Fixture {
    Vocabulary vocab;
    std::vector<PretrainInstance> instances;
};

Fixture small_fixture(size_t paragraphs, uint64_t seed) {
    Fixture f;
    const ConnectiveLexicon lexicon = testsupport::default_lexicon();
    f.instances = testsupport::synthetic_instances(paragraphs, seed, lexicon);
    f.vocab = train_vocab(testsupport::vocab_lines(f.instances), 512);
    return f;
}

ModelConfig model_config(const Vocabulary& vocab, uint64_t seed, size_t d_model = 32) {
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = d_model;
    cfg.n_heads = 4;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.ffn_dim = 64;
    cfg.max_positions = 160;
    cfg.dropout = 0.0;
    cfg.init_seed = seed;
    return cfg;
}

std::vector<const PretrainInstance*> as_batch(const std::vector<PretrainInstance>& xs, size_t n) {
    std::vector<const PretrainInstance*> out;
    for (size_t i = 0; i < std::min(n, xs.size()); ++i) out.push_back(&xs[i]);
    return out;
}

std::vector<std::vector<double>> snapshot_grads(ad::ParameterStore& params) {
    std::vector<std::vector<double>> out;
    for (size_t p = 0; p < params.count(); ++p) {
        Tensor t = params.param_at(p);
        out.push_back(t.has_grad() ? t.node()->grad : std::vector<double>(t.numel(), 0.0));
    }
    return out;
}

}  // namespace

TEST_CASE("contrastive hinge reproduces the analytic cases") {
    const Tensor h = Tensor::from_data({2}, {0.0, 0.0});

    // identical gold and negative embeddings leave exactly the margin
    const Tensor c = Tensor::from_data({2}, {0.7, -0.3});
    const Tensor c_same = Tensor::from_data({2}, {0.7, -0.3});
    CHECK(loss_cee(h, c, {c_same}).scalar() == 0.5);

    // satisfied margin: d(h,c)=0, d(h,negative)=1
    const Tensor at_h = Tensor::from_data({2}, {0.0, 0.0});
    const Tensor unit = Tensor::from_data({2}, {1.0, 0.0});
    CHECK(loss_cee(h, at_h, {unit}).scalar() == 0.0);

    // hand values: (1,0) vs (3,0) -> 0; (2,0) vs (1,0) -> 1.5
    CHECK(loss_cee(h, Tensor::from_data({2}, {1.0, 0.0}),
                   {Tensor::from_data({2}, {3.0, 0.0})}).scalar() == doctest::Approx(0.0));
    CHECK(loss_cee(h, Tensor::from_data({2}, {2.0, 0.0}),
                   {Tensor::from_data({2}, {1.0, 0.0})}).scalar() == doctest::Approx(1.5));

    // several negatives average their hinges: (0 + 1.5)/2
    CHECK(loss_cee(h, Tensor::from_data({2}, {2.0, 0.0}),
                   {Tensor::from_data({2}, {9.0, 0.0}), Tensor::from_data({2}, {1.0, 0.0})})
              .scalar() == doctest::Approx(0.25 + 0.5));

    CHECK_THROWS_AS(loss_cee(h, c, {}), StructureError);
    CHECK_THROWS_AS(loss_cee(h, Tensor::from_data({3}, {1, 2, 3}), {unit}), DimensionError);
}

TEST_CASE("hinge stays within its analytic bounds") {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
        auto vec = [&](double s) {
            std::vector<double> v(4);
            for (double& x : v) x = rng.normal(0.0, s);
            return Tensor::from_data({4}, std::move(v));
        };
        const Tensor h = vec(1.0), c = vec(1.0), n = vec(1.0);
        const double value = loss_cee(h, c, {n}).scalar();
        const double d_gold = ad::euclidean_distance(h, c).scalar();
        CHECK(value >= 0.0);
        CHECK(value <= 0.5 + d_gold + 1e-12);
    }
}

TEST_CASE("recovery loss equals normalized sequence scoring") {
    const Fixture f = small_fixture(6, 21);
    const Seq2SeqModel model(model_config(f.vocab, 3));
    const PretrainInstance& inst = f.instances[0];

    const TokenSequence masked = f.vocab.encode(inst.masked.text, true);
    const TokenSequence event = f.vocab.encode(inst.masked.gold_event);
    const BatchEncoderState state = model.encode_batch({masked});
    const double wer = loss_wer(model, state, {event}).scalar();

    const EncoderState single = model.encode(masked);
    const auto [total, per_token] = model.sequence_log_prob(single, event);
    CHECK(wer == doctest::Approx(total / static_cast<double>(per_token.size())).epsilon(1e-6));
}

TEST_CASE("uniform model puts every loss at the log-vocab scale") {
    const Fixture f = small_fixture(4, 33);
    Seq2SeqModel model(model_config(f.vocab, 5));
    for (double& x : model.parameters().get("tok_emb").data()) x = 0.0;
    const double log_v = std::log(static_cast<double>(f.vocab.size()));

    Rng rng(0);
    ObjectiveConfig cfg;
    const LossBreakdown losses =
        compute_losses(model, f.vocab, as_batch(f.instances, 4), cfg, false, rng);
    CHECK(losses.l_wer == doctest::Approx(log_v).epsilon(1e-6));
    CHECK(losses.l_pel == doctest::Approx(2.0 * log_v).epsilon(1e-6));
}

TEST_CASE("total is the sum of its parts and flags gate terms exactly") {
    const Fixture f = small_fixture(6, 8);
    Seq2SeqModel model(model_config(f.vocab, 9));
    const auto batch = as_batch(f.instances, 4);

    Rng rng(0);
    ObjectiveConfig cfg;
    const LossBreakdown full = compute_losses(model, f.vocab, batch, cfg, false, rng);
    CHECK(full.total ==
          doctest::Approx(full.l_wer + full.l_cee + full.l_pel).epsilon(1e-6));
    CHECK(full.l_wer > 0.0);
    CHECK(full.l_cee > 0.0);
    CHECK(full.l_pel > 0.0);

    cfg.flags = ablation_from_name("wer-only");
    Rng rng2(0);
    const LossBreakdown wer_only = compute_losses(model, f.vocab, batch, cfg, false, rng2);
    CHECK(wer_only.l_cee == 0.0);
    CHECK(wer_only.l_pel == 0.0);
    CHECK(wer_only.total == doctest::Approx(wer_only.l_wer).epsilon(1e-12));

    cfg.flags = ablation_from_name("no-wet");
    Rng rng3(0);
    const LossBreakdown no_wet = compute_losses(model, f.vocab, batch, cfg, false, rng3);
    CHECK(no_wet.l_pel < full.l_pel);  // single prompt term left

    cfg.flags = ObjectiveFlags{false, false, false, false};
    Rng rng4(0);
    CHECK_THROWS_AS(compute_losses(model, f.vocab, batch, cfg, false, rng4), StructureError);
}

TEST_CASE("gradient of the total equals the sum of per-term gradients") {
    const Fixture f = small_fixture(4, 13);
    Seq2SeqModel model(model_config(f.vocab, 7));
    const auto batch = as_batch(f.instances, 3);
    ObjectiveConfig cfg;

    auto grads_for = [&](const ObjectiveFlags& flags) {
        ObjectiveConfig local = cfg;
        local.flags = flags;
        Rng rng(0);
        model.parameters().zero_grad();
        const LossBreakdown losses =
            compute_losses(model, f.vocab, batch, local, false, rng);
        ad::backward(losses.total_tensor);
        return snapshot_grads(model.parameters());
    };

    const auto total_grads = grads_for(ObjectiveFlags{});
    const auto wer_grads = grads_for(ablation_from_name("wer-only"));
    ObjectiveFlags cee_only{false, true, false, false};
    const auto cee_grads = grads_for(cee_only);
    const auto pel_grads = grads_for(ablation_from_name("pel-only"));

    double max_diff = 0.0;
    for (size_t p = 0; p < total_grads.size(); ++p) {
        for (size_t i = 0; i < total_grads[p].size(); ++i) {
            const double parts = wer_grads[p][i] + cee_grads[p][i] + pel_grads[p][i];
            max_diff = std::max(max_diff, std::abs(parts - total_grads[p][i]));
        }
    }
    CHECK(max_diff < 1e-9);
}

TEST_CASE("a single example is overfit by the recovery objective alone") {
    const Fixture f = small_fixture(2, 44);
    Seq2SeqModel model(model_config(f.vocab, 15));
    const auto batch = as_batch(f.instances, 1);

    ObjectiveConfig cfg;
    cfg.flags = ablation_from_name("wer-only");
    AdamState adam;
    adam.initialize(model.parameters());
    double initial = 0.0;
    double final_loss = 0.0;
    for (int step = 0; step < 500; ++step) {
        Rng rng(0);
        model.parameters().zero_grad();
        const LossBreakdown losses = compute_losses(model, f.vocab, batch, cfg, false, rng);
        if (step == 0) initial = losses.total;
        final_loss = losses.total;
        ad::backward(losses.total_tensor);
        adam_step(model.parameters(), adam, 1e-2, 0.0);
    }
    CHECK(final_loss < 0.01);
    CHECK(final_loss < initial);
}

TEST_CASE("selection prompts score below plain recovery after brief training") {
    // the selection input carries the answer verbatim, so once the model has
    // learned to copy, that term sits below the recovery loss
    const Fixture f = small_fixture(8, 55);
    Seq2SeqModel model(model_config(f.vocab, 23, 48));
    TrainConfig tcfg;
    tcfg.max_steps = 220;
    tcfg.batch_size = 8;
    tcfg.lr = 3e-3;
    tcfg.dropout = 0.0;
    tcfg.seed = 1;
    Trainer trainer(model, f.vocab, tcfg);
    trainer.run(f.instances);

    ObjectiveConfig cfg;
    ObjectiveFlags ces_only{false, false, true, false};
    cfg.flags = ces_only;
    Rng rng(0);
    const LossBreakdown ces =
        compute_losses(model, f.vocab, as_batch(f.instances, 8), cfg, false, rng);
    cfg.flags = ablation_from_name("wer-only");
    Rng rng2(0);
    const LossBreakdown wer =
        compute_losses(model, f.vocab, as_batch(f.instances, 8), cfg, false, rng2);
    CHECK(ces.l_pel < wer.l_wer);
}
