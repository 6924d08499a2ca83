#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "claret/common.hpp"
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

ModelConfig model_config(const Vocabulary& vocab, uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.ffn_dim = 48;
    cfg.max_positions = 160;
    cfg.init_seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters alone without gradients or decay") {
    ad::ParameterStore params;
    Tensor w = params.create("w", {3}, {1.0, -2.0, 0.5});
    AdamState adam;
    adam_step(params, adam, 0.1, 0.0);
    CHECK(w.data() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam minimizes a scalar quadratic") {
    ad::ParameterStore params;
    Tensor w = params.create("w", {1}, {-4.0});
    AdamState adam;
    for (int step = 0; step < 2000; ++step) {
        params.zero_grad();
        // d/dw (w-3)^2 = 2 (w-3)
        w.grad()[0] = 2.0 * (w.data()[0] - 3.0);
        adam_step(params, adam, 0.05, 0.0);
    }
    CHECK(std::abs(w.data()[0] - 3.0) < 1e-3);
}

TEST_CASE("decoupled decay shrinks weights") {
    ad::ParameterStore params;
    Tensor w = params.create("w", {2}, {2.0, -2.0});
    AdamState adam;
    adam_step(params, adam, 0.1, 0.5);  // zero grads, decay only
    CHECK(std::abs(w.data()[0]) < 2.0);
    CHECK(std::abs(w.data()[1]) < 2.0);
    CHECK(w.data()[0] == doctest::Approx(2.0 * (1.0 - 0.05)));
}

TEST_CASE("learning rate schedule hits its anchor points") {
    const double lr = 3e-4;
    const size_t steps = 1000;
    CHECK(lr_schedule(0, lr, 0.03, steps) == 0.0);
    const size_t warmup = 30;  // round(0.03 * 1000)
    CHECK(lr_schedule(warmup, lr, 0.03, steps) == doctest::Approx(lr));
    CHECK(lr_schedule(steps, lr, 0.03, steps) == 0.0);
    CHECK(lr_schedule(warmup / 2, lr, 0.03, steps) < lr);
    CHECK(lr_schedule((steps + warmup) / 2, lr, 0.03, steps) < lr);
    CHECK(lr_schedule((steps + warmup) / 2, lr, 0.03, steps) > 0.0);
}

TEST_CASE("gradient clipping rescales only oversized gradients") {
    ad::ParameterStore params;
    Tensor w = params.create("w", {2});
    w.grad() = {0.3, 0.4};  // norm 0.5
    CHECK(clip_gradients(params, 1.0) == doctest::Approx(0.5));
    CHECK(w.grad() == std::vector<double>{0.3, 0.4});

    w.grad() = {1.2, 1.6};  // norm 2
    const double before = clip_gradients(params, 1.0);
    CHECK(before == doctest::Approx(2.0));
    const double norm = std::sqrt(w.grad()[0] * w.grad()[0] + w.grad()[1] * w.grad()[1]);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));
    // direction preserved
    CHECK(w.grad()[0] / w.grad()[1] == doctest::Approx(1.2 / 1.6));
    CHECK_THROWS_AS(clip_gradients(params, 0.0), StructureError);
}

TEST_CASE("training runs are reproducible given one seed") {
    const Fixture f = small_fixture(6, 60);
    TrainConfig cfg;
    cfg.max_steps = 8;
    cfg.batch_size = 4;
    cfg.seed = 42;

    Seq2SeqModel model_a(model_config(f.vocab, 42));
    Trainer trainer_a(model_a, f.vocab, cfg);
    const auto rows_a = trainer_a.run(f.instances);

    Seq2SeqModel model_b(model_config(f.vocab, 42));
    Trainer trainer_b(model_b, f.vocab, cfg);
    const auto rows_b = trainer_b.run(f.instances);

    REQUIRE(rows_a.size() == rows_b.size());
    for (size_t i = 0; i < rows_a.size(); ++i) {
        CHECK(rows_a[i].total == rows_b[i].total);  // bit-identical
        CHECK(rows_a[i].l_wer == rows_b[i].l_wer);
        CHECK(rows_a[i].l_cee == rows_b[i].l_cee);
        CHECK(rows_a[i].l_pel == rows_b[i].l_pel);
    }
}

TEST_CASE("ablation flags flow through the loop") {
    const Fixture f = small_fixture(4, 61);
    TrainConfig cfg;
    cfg.max_steps = 3;
    cfg.batch_size = 4;
    cfg.ablation = ablation_from_name("wer-only");
    Seq2SeqModel model(model_config(f.vocab, 5));
    Trainer trainer(model, f.vocab, cfg);
    for (const StepMetrics& row : trainer.run(f.instances)) {
        CHECK(row.l_cee == 0.0);
        CHECK(row.l_pel == 0.0);
        CHECK(row.total == row.l_wer);
    }
    CHECK_THROWS_AS(ablation_from_name("bogus"), StructureError);
}

TEST_CASE("losses fall on a small corpus") {
    const Fixture f = small_fixture(6, 62);
    TrainConfig cfg;
    cfg.max_steps = 150;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg.dropout = 0.0;
    cfg.seed = 3;
    Seq2SeqModel model(model_config(f.vocab, 3));
    Trainer trainer(model, f.vocab, cfg);
    const auto rows = trainer.run(f.instances);
    const double head = rows.front().total;
    const double tail = rows.back().total;
    CHECK(tail < 0.5 * head);
}

TEST_CASE("a diverging run aborts with the offending batch") {
    const Fixture f = small_fixture(4, 63);
    TrainConfig cfg;
    cfg.max_steps = 60;
    cfg.batch_size = 2;
    cfg.lr = 1.0;
    cfg.weight_decay = -40.0;  // deliberate blow-up
    cfg.clip_norm = 1e9;
    Seq2SeqModel model(model_config(f.vocab, 9));
    Trainer trainer(model, f.vocab, cfg);
    try {
        trainer.run(f.instances);
        WARN("run survived a hostile configuration");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("batch ids") != std::string::npos);
    }
}

TEST_CASE("checkpoints round trip and resume bit-exactly") {
    const Fixture f = small_fixture(6, 64);
    const std::string ckpt_path = "trainer_test.clrt";

    TrainConfig cfg;
    cfg.max_steps = 10;
    cfg.batch_size = 4;
    cfg.seed = 7;

    // one continuous run
    Seq2SeqModel continuous(model_config(f.vocab, 7));
    Trainer trainer_full(continuous, f.vocab, cfg);
    const auto full_rows = trainer_full.run(f.instances);

    // same run split at step 5 through a checkpoint file
    Seq2SeqModel first(model_config(f.vocab, 7));
    Trainer trainer_first(first, f.vocab, cfg);
    auto rows = trainer_first.run(f.instances, /*stop_step=*/5);
    trainer_first.save(ckpt_path);

    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    CHECK(ckpt.step == 5);
    CHECK(ckpt.has_optimizer);
    std::unique_ptr<Seq2SeqModel> resumed = model_from_checkpoint(ckpt);
    const TrainConfig rest = TrainConfig::from_json(ckpt.train_config_json);
    CHECK(rest.max_steps == 10);  // the schedule horizon rides along
    Trainer trainer_rest(*resumed, f.vocab, rest);
    trainer_rest.restore(ckpt.adam, ckpt.step, ckpt.rng_state);
    const auto tail_rows = trainer_rest.run(f.instances);
    for (const auto& row : tail_rows) rows.push_back(row);

    REQUIRE(rows.size() == full_rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].step == full_rows[i].step);
        CHECK(std::abs(rows[i].total - full_rows[i].total) < 1e-5);
    }
    // the parameters themselves match after the split run
    CHECK(rows.back().total == full_rows.back().total);
    std::remove(ckpt_path.c_str());
}

TEST_CASE("checkpoint format errors are explicit") {
    const Fixture f = small_fixture(2, 65);
    Seq2SeqModel model(model_config(f.vocab, 1));
    const std::string path = "format_test.clrt";
    save_checkpoint(path, model, f.vocab);

    // corrupt the magic
    {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(0);
        fs.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // valid magic, unsupported version
    save_checkpoint(path, model, f.vocab);
    {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(4);
        const uint32_t bad_version = 999;
        fs.write(reinterpret_cast<const char*>(&bad_version), sizeof(bad_version));
    }
    try {
        load_checkpoint(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("paper preset pins the published hyperparameters") {
    const TrainConfig paper = TrainConfig::paper_preset();
    CHECK(paper.lr == doctest::Approx(1e-5));
    CHECK(paper.batch_size == 1152);
    CHECK(paper.max_steps == 160000);
    CHECK(paper.warmup_proportion == doctest::Approx(0.03));
    CHECK(paper.clip_norm == doctest::Approx(1.0));
    CHECK(paper.weight_decay == doctest::Approx(0.01));
    CHECK(paper.dropout == doctest::Approx(0.1));
}
