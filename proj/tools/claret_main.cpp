#include <algorithm>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "claret/bpe.hpp"
#include "claret/common.hpp"
#include "claret/evaluator.hpp"
#include "claret/lexicon.hpp"
#include "claret/manifest.hpp"
#include "claret/miner.hpp"
#include "claret/model.hpp"
#include "claret/prompts.hpp"
#include "claret/sampler.hpp"
#include "claret/trainer.hpp"
#include "claret/version.hpp"

namespace {

using namespace claret;

// Manifest bracket around one run; written next to the main output file.
class ManifestScope {
public:
    ManifestScope(std::string command, uint64_t seed) {
        manifest_.command = std::move(command);
        manifest_.seed = seed;
        manifest_.started_at = RunManifest::now_utc_iso8601();
    }
    void add_input(const std::string& path) { manifest_.add_input(path); }
    void set_config(const nlohmann::json& j) { manifest_.resolved_config_json = j.dump(); }
    void finish(const std::string& output_path) {
        manifest_.finished_at = RunManifest::now_utc_iso8601();
        if (!output_path.empty()) manifest_.write(output_path + ".manifest.json");
    }

private:
    RunManifest manifest_;
};

size_t char_edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                               prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

void collect_option_names(const CLI::App* app, std::vector<std::string>& names) {
    for (const CLI::Option* opt : app->get_options()) {
        for (const std::string& n : opt->get_lnames()) names.push_back("--" + n);
    }
    for (const CLI::App* sub : app->get_subcommands([](const CLI::App*) { return true; }))
        collect_option_names(sub, names);
}

std::string suggest_flag(const CLI::App& app, const std::string& message) {
    const size_t pos = message.rfind(": ");
    if (pos == std::string::npos) return "";
    std::string token = message.substr(pos + 2);
    if (token.rfind("--", 0) != 0) return "";
    std::vector<std::string> names;
    collect_option_names(&app, names);
    std::string best;
    size_t best_dist = 4;  // suggest only close misses
    for (const std::string& n : names) {
        const size_t d = char_edit_distance(token, n);
        if (d < best_dist) {
            best_dist = d;
            best = n;
        }
    }
    return best.empty() ? "" : "did you mean '" + best + "'?";
}

struct CommonModelFlags {
    size_t d_model = 128;
    size_t n_heads = 4;
    size_t enc_layers = 2;
    size_t dec_layers = 2;
    size_t ffn_dim = 512;
    size_t max_positions = 512;

    void attach(CLI::App* cmd) {
        cmd->add_option("--d-model", d_model, "model width");
        cmd->add_option("--heads", n_heads, "attention heads");
        cmd->add_option("--enc-layers", enc_layers, "encoder layers");
        cmd->add_option("--dec-layers", dec_layers, "decoder layers");
        cmd->add_option("--ffn", ffn_dim, "feed-forward width");
        cmd->add_option("--max-positions", max_positions, "positional table size");
    }
};

int run_mine(const std::string& in, const std::string& out, const std::string& lexicon_path,
             MinerConfig miner_cfg, uint64_t seed) {
    ManifestScope manifest("mine", seed);
    manifest.add_input(in);
    manifest.add_input(lexicon_path);
    const ConnectiveLexicon lexicon = ConnectiveLexicon::from_file(lexicon_path);
    nlohmann::json cfg{{"in", in},
                       {"out", out},
                       {"lexicon", lexicon_path},
                       {"min_connectives", miner_cfg.min_connectives},
                       {"max_event_len", miner_cfg.max_event_len},
                       {"min_event_len", miner_cfg.min_event_len},
                       {"max_sentences", miner_cfg.max_sentences},
                       {"workers", miner_cfg.workers}};
    manifest.set_config(cfg);
    const MineStats stats = mine_corpus(in, out, lexicon, miner_cfg);
    nlohmann::json js{{"paragraphs_seen", stats.paragraphs_seen},
                      {"paragraphs_retained", stats.paragraphs_retained},
                      {"examples_written", stats.examples_written},
                      {"events_extracted", stats.events_extracted},
                      {"tokens_seen", stats.tokens_seen}};
    std::cerr << js.dump() << "\n";
    manifest.finish(out);
    return 0;
}

int run_sample(const std::string& in, const std::string& out, const std::string& lexicon_path,
               SamplerConfig cfg) {
    ManifestScope manifest("sample", cfg.rng_seed);
    manifest.add_input(in);
    manifest.add_input(lexicon_path);
    nlohmann::json jcfg{{"in", in},
                        {"out", out},
                        {"lexicon", lexicon_path},
                        {"negatives", cfg.m_negatives},
                        {"mixture", {cfg.mixture_lexicon, cfg.mixture_pos, cfg.mixture_indomain}},
                        {"seed", cfg.rng_seed},
                        {"workers", cfg.workers}};
    manifest.set_config(jcfg);
    const ConnectiveLexicon lexicon = ConnectiveLexicon::from_file(lexicon_path);
    std::vector<MinedExample> corpus = read_examples_jsonl(in);
    const EventPool pool = build_pool(corpus);
    augment_corpus(corpus, pool, lexicon, cfg);
    write_examples_jsonl(out, corpus);
    std::cerr << nlohmann::json{{"examples", corpus.size()}, {"pool_size", pool.size()}}.dump()
              << "\n";
    manifest.finish(out);
    return 0;
}

int run_build(const std::string& in, const std::string& out, BuilderConfig cfg) {
    ManifestScope manifest("build", cfg.seed);
    manifest.add_input(in);
    nlohmann::json jcfg{{"in", in},
                        {"out", out},
                        {"seed", cfg.seed},
                        {"ccs_probability", cfg.ccs_probability},
                        {"workers", cfg.workers}};
    manifest.set_config(jcfg);
    const std::vector<MinedExample> corpus = read_examples_jsonl(in);
    const std::vector<PretrainInstance> instances = assemble_instances(corpus, cfg);
    write_instances_jsonl(out, instances);
    std::cerr << nlohmann::json{{"instances", instances.size()}}.dump() << "\n";
    manifest.finish(out);
    return 0;
}

std::vector<std::string> vocab_lines_from(const std::string& path) {
    if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
        std::vector<std::string> lines;
        for (const PretrainInstance& inst : read_instances_jsonl(path)) {
            lines.push_back(inst.masked.text);
            lines.push_back(inst.masked.gold_event);
            lines.push_back(inst.ces_input);
            lines.push_back(inst.wet_input);
            lines.push_back(inst.wet_target);
            if (inst.ccs_input.has_value()) lines.push_back(*inst.ccs_input);
            for (const std::string& n : inst.negatives) lines.push_back(n);
        }
        return lines;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary corpus: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

int run_vocab(const std::string& in, const std::string& out, size_t size) {
    ManifestScope manifest("vocab", 0);
    manifest.add_input(in);
    manifest.set_config(nlohmann::json{{"in", in}, {"out", out}, {"size", size}});
    const Vocabulary vocab = train_vocab(vocab_lines_from(in), size);
    vocab.save(out);
    std::cerr << nlohmann::json{{"vocab_size", vocab.size()},
                                {"merges", vocab.merges().size()}}.dump()
              << "\n";
    manifest.finish(out);
    return 0;
}

int run_pretrain(const std::string& data_path, const std::string& vocab_path,
                 const std::string& resume_path, const std::string& out,
                 const std::string& metrics, TrainConfig train_cfg, CommonModelFlags dims,
                 const std::string& ablation_name, bool paper_preset, double holdout,
                 uint64_t holdout_seed) {
    if (paper_preset) {
        const TrainConfig paper = TrainConfig::paper_preset();
        train_cfg.lr = paper.lr;
        train_cfg.batch_size = paper.batch_size;
        train_cfg.max_steps = paper.max_steps;
    }
    train_cfg.ablation = ablation_from_name(ablation_name);
    train_cfg.checkpoint_path = out;
    train_cfg.metrics_path = metrics;

    ManifestScope manifest("pretrain", train_cfg.seed);
    manifest.add_input(data_path);

    std::vector<PretrainInstance> instances = read_instances_jsonl(data_path);
    if (holdout > 0.0) instances = holdout_split(instances, holdout, holdout_seed).first;

    std::unique_ptr<Seq2SeqModel> model;
    std::unique_ptr<Vocabulary> vocab;
    std::unique_ptr<Trainer> trainer;
    if (!resume_path.empty()) {
        manifest.add_input(resume_path);
        const Checkpoint ckpt = load_checkpoint(resume_path);
        model = model_from_checkpoint(ckpt);
        vocab = std::make_unique<Vocabulary>(ckpt.vocab);
        TrainConfig restored = ckpt.train_config_json.empty()
                                   ? train_cfg
                                   : TrainConfig::from_json(ckpt.train_config_json);
        restored.max_steps = train_cfg.max_steps;  // --steps may extend a run
        restored.checkpoint_path = out;
        restored.metrics_path = metrics;
        trainer = std::make_unique<Trainer>(*model, *vocab, restored);
        if (ckpt.has_optimizer) trainer->restore(ckpt.adam, ckpt.step, ckpt.rng_state);
        manifest.set_config(nlohmann::json::parse(restored.to_json()));
    } else {
        if (vocab_path.empty()) throw StructureError("pretrain needs --vocab or --resume");
        manifest.add_input(vocab_path);
        vocab = std::make_unique<Vocabulary>(Vocabulary::load(vocab_path));
        ModelConfig mc;
        mc.vocab_size = vocab->size();
        mc.d_model = dims.d_model;
        mc.n_heads = dims.n_heads;
        mc.enc_layers = dims.enc_layers;
        mc.dec_layers = dims.dec_layers;
        mc.ffn_dim = dims.ffn_dim;
        mc.max_positions = dims.max_positions;
        mc.dropout = train_cfg.dropout;
        mc.init_seed = train_cfg.seed;
        model = std::make_unique<Seq2SeqModel>(mc);
        trainer = std::make_unique<Trainer>(*model, *vocab, train_cfg);
        nlohmann::json jcfg = nlohmann::json::parse(train_cfg.to_json());
        jcfg["model"] = nlohmann::json::parse(mc.to_json());
        manifest.set_config(jcfg);
    }

    const std::vector<StepMetrics> rows = trainer->run(instances);
    if (!rows.empty()) {
        const StepMetrics& last = rows.back();
        std::cerr << nlohmann::json{{"final_step", last.step}, {"final_total", last.total}}.dump()
                  << "\n";
    }
    manifest.finish(out);
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& out,
             const std::string& csv_base, double holdout, uint64_t holdout_seed,
             const std::string& pooling, int workers) {
    ManifestScope manifest("eval", holdout_seed);
    manifest.add_input(ckpt_path);
    manifest.add_input(data_path);
    manifest.set_config(nlohmann::json{{"ckpt", ckpt_path},
                                       {"data", data_path},
                                       {"out", out},
                                       {"holdout", holdout},
                                       {"holdout_seed", holdout_seed},
                                       {"pooling", pooling},
                                       {"workers", workers}});
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::unique_ptr<Seq2SeqModel> model = model_from_checkpoint(ckpt);
    std::vector<PretrainInstance> instances = read_instances_jsonl(data_path);
    if (holdout > 0.0) instances = holdout_split(instances, holdout, holdout_seed).second;
    if (instances.empty()) throw StructureError("evaluation set is empty");

    EvalConfig eval_cfg;
    eval_cfg.workers = workers;
    eval_cfg.per_example_pooling = pooling == "example";
    const EvalReport report = evaluate(*model, ckpt.vocab, instances, eval_cfg);
    emit_report(report, out, csv_base);
    std::cout << nlohmann::json{{"eppl", report.eppl}, {"examples", instances.size()}}.dump()
              << "\n";
    manifest.finish(out);
    return 0;
}

int run_score(const std::string& ckpt_path, const std::string& items_path, const std::string& out,
              int workers) {
    ManifestScope manifest("score", 0);
    manifest.add_input(ckpt_path);
    manifest.add_input(items_path);
    manifest.set_config(nlohmann::json{
        {"ckpt", ckpt_path}, {"items", items_path}, {"out", out}, {"workers", workers}});
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::unique_ptr<Seq2SeqModel> model = model_from_checkpoint(ckpt);
    const std::vector<MultiChoiceItem> items = read_multichoice_jsonl(items_path);
    const MultiChoiceResult result = zero_shot_multichoice(*model, ckpt.vocab, items, workers);
    const nlohmann::json j{{"n", result.n}, {"correct", result.correct},
                           {"accuracy", result.accuracy}};
    std::cout << j.dump() << "\n";
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw IoError("cannot write score report: " + out);
        f << j.dump(2) << "\n";
        manifest.finish(out);
    }
    return 0;
}

int run_generate(const std::string& ckpt_path, const std::string& context, size_t beam,
                 size_t max_len, const std::string& out) {
    ManifestScope manifest("generate", 0);
    manifest.add_input(ckpt_path);
    manifest.set_config(nlohmann::json{
        {"ckpt", ckpt_path}, {"context", context}, {"beam", beam}, {"max_len", max_len}});
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::unique_ptr<Seq2SeqModel> model = model_from_checkpoint(ckpt);
    const TokenSequence ids = ckpt.vocab.encode(context, true);
    const EncoderState state = model->encode(ids);
    if (!state.mask_position.has_value())
        throw StructureError("context must contain the mask token [M]");
    const Generation gen = model->generate(
        state, beam <= 1 ? DecodeMode::Greedy : DecodeMode::Beam, beam, max_len);
    const std::string text = ckpt.vocab.decode(gen.ids);
    std::cout << text << "\n";
    if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw IoError("cannot write generation output: " + out);
        f << text << "\n";
        manifest.finish(out);
    }
    return 0;
}

int run_inspect(const std::string& path) {
    nlohmann::json j;
    if (path.size() > 5 && path.substr(path.size() - 5) == ".clrt") {
        const Checkpoint ckpt = load_checkpoint(path);
        size_t total = 0;
        for (const auto& [name, data] : ckpt.params) total += data.size();
        j = {{"kind", "checkpoint"},
             {"step", ckpt.step},
             {"parameters", ckpt.params.size()},
             {"parameter_values", total},
             {"vocab_size", ckpt.vocab.size()},
             {"model_config", nlohmann::json::parse(ckpt.model_config.to_json())},
             {"has_optimizer", ckpt.has_optimizer}};
    } else if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open file: " + path);
        size_t lines = 0;
        std::string line;
        nlohmann::json first;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (lines == 0) first = nlohmann::json::parse(line);
            ++lines;
        }
        std::vector<std::string> keys;
        for (auto it = first.begin(); it != first.end(); ++it) keys.push_back(it.key());
        j = {{"kind", "jsonl"}, {"records", lines}, {"first_record_keys", keys}};
    } else {
        const Vocabulary vocab = Vocabulary::load(path);
        j = {{"kind", "vocabulary"},
             {"vocab_size", vocab.size()},
             {"merges", vocab.merges().size()}};
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-centric seq2seq pretraining pipeline"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a key=value file");

    std::function<int()> action;

    // ---- mine ----
    {
        auto* cmd = app.add_subcommand("mine", "extract event-rich examples from CoNLL-U");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto lexicon = std::make_shared<std::string>();
        auto cfg = std::make_shared<MinerConfig>();
        cmd->add_option("--in", *in, "CoNLL-U input")->required();
        cmd->add_option("--out", *out, "JSONL output")->required();
        cmd->add_option("--lexicon", *lexicon, "connective list, one per line")->required();
        cmd->add_option("--min-connectives", cfg->min_connectives, "retention threshold");
        cmd->add_option("--max-event-len", cfg->max_event_len, "longest event in tokens");
        cmd->add_option("--min-event-len", cfg->min_event_len, "shortest event in tokens");
        cmd->add_option("--max-sentences", cfg->max_sentences, "paragraph split bound");
        cmd->add_option("--workers", cfg->workers, "parallel workers");
        cmd->parse_complete_callback(
            [&action, in, out, lexicon, cfg]() {
                action = [=]() { return run_mine(*in, *out, *lexicon, *cfg, 0); };
            });
    }

    // ---- sample ----
    {
        auto* cmd = app.add_subcommand("sample", "attach hard negatives to mined examples");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto lexicon = std::make_shared<std::string>();
        auto cfg = std::make_shared<SamplerConfig>();
        cmd->add_option("--in", *in, "mined JSONL")->required();
        cmd->add_option("--out", *out, "augmented JSONL")->required();
        cmd->add_option("--lexicon", *lexicon, "connective list")->required();
        cmd->add_option("--negatives", cfg->m_negatives, "negatives per event");
        cmd->add_option("--seed", cfg->rng_seed, "sampling seed")->envname("CLARET_SEED");
        cmd->add_option("--mix-lexicon", cfg->mixture_lexicon, "lexicon scheme probability");
        cmd->add_option("--mix-pos", cfg->mixture_pos, "PoS scheme probability");
        cmd->add_option("--mix-indomain", cfg->mixture_indomain, "in-domain scheme probability");
        cmd->add_option("--workers", cfg->workers, "parallel workers");
        cmd->parse_complete_callback([&action, in, out, lexicon, cfg]() {
            action = [=]() { return run_sample(*in, *out, *lexicon, *cfg); };
        });
    }

    // ---- build ----
    {
        auto* cmd = app.add_subcommand("build", "turn augmented examples into prompt instances");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto cfg = std::make_shared<BuilderConfig>();
        cmd->add_option("--in", *in, "augmented JSONL")->required();
        cmd->add_option("--out", *out, "instance JSONL")->required();
        cmd->add_option("--seed", cfg->seed, "builder seed")->envname("CLARET_SEED");
        cmd->add_option("--ccs-prob", cfg->ccs_probability, "connective-prompt probability");
        cmd->add_option("--workers", cfg->workers, "parallel workers");
        cmd->parse_complete_callback([&action, in, out, cfg]() {
            action = [=]() { return run_build(*in, *out, *cfg); };
        });
    }

    // ---- vocab ----
    {
        auto* cmd = app.add_subcommand("vocab", "train the byte-pair vocabulary");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto size = std::make_shared<size_t>(8192);
        cmd->add_option("--in", *in, "instance JSONL or plain text")->required();
        cmd->add_option("--out", *out, "vocabulary JSON")->required();
        cmd->add_option("--size", *size, "target vocabulary size");
        cmd->parse_complete_callback([&action, in, out, size]() {
            action = [=]() { return run_vocab(*in, *out, *size); };
        });
    }

    // ---- pretrain ----
    {
        auto* cmd = app.add_subcommand("pretrain", "run the self-supervised training loop");
        auto data = std::make_shared<std::string>();
        auto vocab = std::make_shared<std::string>();
        auto resume = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto metrics = std::make_shared<std::string>();
        auto cfg = std::make_shared<TrainConfig>();
        auto dims = std::make_shared<CommonModelFlags>();
        auto ablation = std::make_shared<std::string>("full");
        auto paper = std::make_shared<bool>(false);
        auto holdout = std::make_shared<double>(0.0);
        auto holdout_seed = std::make_shared<uint64_t>(0);
        cmd->add_option("--data", *data, "instance JSONL")->required();
        cmd->add_option("--vocab", *vocab, "vocabulary JSON");
        cmd->add_option("--resume", *resume, "checkpoint to continue from");
        cmd->add_option("--out", *out, "checkpoint output path")->required();
        cmd->add_option("--metrics", *metrics, "metrics JSONL path");
        cmd->add_option("--steps", cfg->max_steps, "optimizer steps");
        cmd->add_option("--batch", cfg->batch_size, "batch size");
        cmd->add_option("--lr", cfg->lr, "peak learning rate");
        cmd->add_option("--warmup", cfg->warmup_proportion, "warmup proportion");
        cmd->add_option("--clip", cfg->clip_norm, "gradient clip norm");
        cmd->add_option("--weight-decay", cfg->weight_decay, "decoupled weight decay");
        cmd->add_option("--dropout", cfg->dropout, "dropout rate");
        cmd->add_option("--seed", cfg->seed, "training seed")->envname("CLARET_SEED");
        cmd->add_option("--margin", cfg->margin, "contrastive margin");
        cmd->add_option("--cee-negatives", cfg->cee_negatives,
                        "negatives per contrastive step (0 = all)");
        cmd->add_option("--ablation", *ablation,
                        "full|wer-only|no-ces|no-wet|no-cee|pel-only");
        cmd->add_flag("--paper-preset", *paper, "paper hyperparameters (lr/batch/steps)");
        cmd->add_option("--checkpoint-every", cfg->checkpoint_every, "periodic checkpointing");
        cmd->add_option("--holdout", *holdout, "fraction of paragraphs excluded from training");
        cmd->add_option("--holdout-seed", *holdout_seed, "holdout split seed");
        dims->attach(cmd);
        cmd->parse_complete_callback([&action, data, vocab, resume, out, metrics, cfg, dims,
                                      ablation, paper, holdout, holdout_seed]() {
            action = [=]() {
                return run_pretrain(*data, *vocab, *resume, *out, *metrics, *cfg, *dims, *ablation,
                                    *paper, *holdout, *holdout_seed);
            };
        });
    }

    // ---- eval ----
    {
        auto* cmd = app.add_subcommand("eval", "perplexity report on held-out paragraphs");
        auto ckpt = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto csv = std::make_shared<std::string>();
        auto holdout = std::make_shared<double>(0.0);
        auto holdout_seed = std::make_shared<uint64_t>(0);
        auto pooling = std::make_shared<std::string>("corpus");
        auto workers = std::make_shared<int>(1);
        cmd->add_option("--ckpt", *ckpt, "checkpoint")->required();
        cmd->add_option("--data", *data, "instance JSONL")->required();
        cmd->add_option("--out", *out, "report JSON")->required();
        cmd->add_option("--csv", *csv, "CSV base path");
        cmd->add_option("--holdout", *holdout, "evaluate the dev side of this split fraction");
        cmd->add_option("--holdout-seed", *holdout_seed, "split seed")->envname("CLARET_SEED");
        cmd->add_option("--pooling", *pooling, "corpus|example perplexity pooling");
        cmd->add_option("--workers", *workers, "parallel workers");
        cmd->parse_complete_callback(
            [&action, ckpt, data, out, csv, holdout, holdout_seed, pooling, workers]() {
                action = [=]() {
                    return run_eval(*ckpt, *data, *out, *csv, *holdout, *holdout_seed, *pooling,
                                    *workers);
                };
            });
    }

    // ---- score ----
    {
        auto* cmd = app.add_subcommand("score", "zero-shot multi-choice accuracy");
        auto ckpt = std::make_shared<std::string>();
        auto items = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto workers = std::make_shared<int>(1);
        cmd->add_option("--ckpt", *ckpt, "checkpoint")->required();
        cmd->add_option("--items", *items, "multi-choice JSONL")->required();
        cmd->add_option("--out", *out, "report JSON");
        cmd->add_option("--workers", *workers, "parallel workers");
        cmd->parse_complete_callback([&action, ckpt, items, out, workers]() {
            action = [=]() { return run_score(*ckpt, *items, *out, *workers); };
        });
    }

    // ---- generate ----
    {
        auto* cmd = app.add_subcommand("generate", "fill the [M] slot of a context");
        auto ckpt = std::make_shared<std::string>();
        auto context = std::make_shared<std::string>();
        auto beam = std::make_shared<size_t>(4);
        auto max_len = std::make_shared<size_t>(32);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--ckpt", *ckpt, "checkpoint")->required();
        cmd->add_option("--context", *context, "masked paragraph containing [M]")->required();
        cmd->add_option("--beam", *beam, "beam width (1 = greedy)");
        cmd->add_option("--max-len", *max_len, "generation cap in tokens");
        cmd->add_option("--out", *out, "also write the text here");
        cmd->parse_complete_callback([&action, ckpt, context, beam, max_len, out]() {
            action = [=]() { return run_generate(*ckpt, *context, *beam, *max_len, *out); };
        });
    }

    // ---- inspect ----
    {
        auto* cmd = app.add_subcommand("inspect", "summarize a checkpoint, JSONL or vocabulary");
        auto in = std::make_shared<std::string>();
        cmd->add_option("--in", *in, "file to inspect")->required();
        cmd->parse_complete_callback([&action, in]() {
            action = [=]() { return run_inspect(*in); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        const std::string hint = suggest_flag(app, e.what());
        if (!hint.empty()) std::cerr << hint << "\n";
        std::cerr << "run with --help for details\n";
        return 2;
    }

    if (!action) {
        std::cerr << "usage error: no subcommand selected\n";
        return 2;
    }
    try {
        return action();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
