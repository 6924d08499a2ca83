#include "claret/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "claret/common.hpp"

namespace claret {

TrainConfig TrainConfig::paper_preset() {
    TrainConfig cfg;
    cfg.lr = 1e-5;
    cfg.batch_size = 1152;
    cfg.max_steps = 160000;
    return cfg;
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["lr"] = lr;
    j["warmup_proportion"] = warmup_proportion;
    j["clip_norm"] = clip_norm;
    j["weight_decay"] = weight_decay;
    j["dropout"] = dropout;
    j["batch_size"] = batch_size;
    j["max_steps"] = max_steps;
    j["seed"] = seed;
    j["margin"] = margin;
    j["cee_negatives"] = cee_negatives;
    j["use_wer"] = ablation.use_wer;
    j["use_cee"] = ablation.use_cee;
    j["use_ces"] = ablation.use_ces;
    j["use_wet"] = ablation.use_wet;
    j["checkpoint_every"] = checkpoint_every;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    TrainConfig cfg;
    cfg.lr = j.value("lr", cfg.lr);
    cfg.warmup_proportion = j.value("warmup_proportion", cfg.warmup_proportion);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.margin = j.value("margin", cfg.margin);
    cfg.cee_negatives = j.value("cee_negatives", cfg.cee_negatives);
    cfg.ablation.use_wer = j.value("use_wer", true);
    cfg.ablation.use_cee = j.value("use_cee", true);
    cfg.ablation.use_ces = j.value("use_ces", true);
    cfg.ablation.use_wet = j.value("use_wet", true);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    return cfg;
}

ObjectiveFlags ablation_from_name(const std::string& name) {
    ObjectiveFlags flags;
    if (name == "full" || name.empty()) return flags;
    if (name == "wer-only") {
        flags.use_cee = flags.use_ces = flags.use_wet = false;
    } else if (name == "no-ces") {
        flags.use_ces = false;
    } else if (name == "no-wet") {
        flags.use_wet = false;
    } else if (name == "no-cee") {
        flags.use_cee = false;
    } else if (name == "pel-only") {
        flags.use_wer = flags.use_cee = false;
    } else {
        throw StructureError("unknown ablation '" + name +
                             "' (expected full|wer-only|no-ces|no-wet|no-cee|pel-only)");
    }
    return flags;
}

Trainer::Trainer(Seq2SeqModel& model, const Vocabulary& vocab, TrainConfig cfg)
    : model_(model), vocab_(vocab), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    model_.set_dropout(cfg_.dropout);
    adam_.initialize(model_.parameters());
}

void Trainer::restore(const AdamState& adam, size_t step, const std::string& rng_state) {
    adam_ = adam;
    step_ = step;
    if (!rng_state.empty()) rng_.deserialize(rng_state);
}

std::vector<StepMetrics> Trainer::run(const std::vector<PretrainInstance>& data,
                                      size_t stop_step) {
    if (data.empty()) throw StructureError("training data is empty");
    const size_t until = stop_step == 0 ? cfg_.max_steps : std::min(stop_step, cfg_.max_steps);

    ObjectiveConfig obj_cfg;
    obj_cfg.margin = cfg_.margin;
    obj_cfg.cee_negatives = cfg_.cee_negatives;
    obj_cfg.flags = cfg_.ablation;

    std::ofstream metrics_out;
    if (!cfg_.metrics_path.empty()) {
        metrics_out.open(cfg_.metrics_path, step_ == 0 ? std::ios::trunc : std::ios::app);
        if (!metrics_out) throw IoError("cannot open metrics log: " + cfg_.metrics_path);
    }

    std::vector<StepMetrics> rows;
    while (step_ < until) {
        const size_t step_number = step_ + 1;
        std::vector<const PretrainInstance*> batch;
        std::vector<std::string> batch_ids;
        for (size_t i = 0; i < cfg_.batch_size; ++i) {
            const size_t idx = static_cast<size_t>(rng_.below(data.size()));
            batch.push_back(&data[idx]);
            batch_ids.push_back(data[idx].id);
        }

        model_.parameters().zero_grad();
        LossBreakdown losses = compute_losses(model_, vocab_, batch, obj_cfg,
                                              /*training=*/true, rng_);
        if (!std::isfinite(losses.total)) {
            std::string ids;
            for (const std::string& id : batch_ids) ids += (ids.empty() ? "" : ", ") + id;
            throw TrainingError("non-finite loss at step " + std::to_string(step_number) +
                                "; offending batch ids: " + ids);
        }
        ad::backward(losses.total_tensor);
        clip_gradients(model_.parameters(), cfg_.clip_norm);
        const double lr_t = lr_schedule(step_number, cfg_.lr, cfg_.warmup_proportion,
                                        cfg_.max_steps);
        adam_step(model_.parameters(), adam_, lr_t, cfg_.weight_decay);
        step_ = step_number;

        StepMetrics row{step_number, losses.l_wer, losses.l_cee, losses.l_pel, losses.total};
        rows.push_back(row);
        if (metrics_out) {
            nlohmann::json j;
            j["step"] = row.step;
            j["l_wer"] = row.l_wer;
            j["l_cee"] = row.l_cee;
            j["l_pel"] = row.l_pel;
            j["total"] = row.total;
            metrics_out << j.dump() << "\n";
        }
        if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_path.empty() &&
            step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.max_steps) {
            save(cfg_.checkpoint_path);
        }
    }
    if (!cfg_.checkpoint_path.empty()) save(cfg_.checkpoint_path);
    return rows;
}

void Trainer::save(const std::string& path) const {
    save_checkpoint(path, model_, vocab_, &cfg_, &adam_, step_, rng_.serialize());
}

// ----------------------------------------------------------- checkpoint io

namespace {

constexpr char kMagic[4] = {'C', 'L', 'R', 'T'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError("checkpoint truncated: " + path);
    return value;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<long>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
    const uint64_t len = read_pod<uint64_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<long>(len));
    if (!in) throw FormatError("checkpoint truncated: " + path);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Seq2SeqModel& model, const Vocabulary& vocab,
                     const TrainConfig* train_cfg, const AdamState* adam, uint64_t step,
                     const std::string& rng_state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_pod<uint32_t>(out, kVersion);

    nlohmann::json meta;
    meta["model_config"] = nlohmann::json::parse(model.config().to_json());
    if (train_cfg) meta["train_config"] = nlohmann::json::parse(train_cfg->to_json());
    meta["vocab"] = nlohmann::json::parse(vocab.to_json());
    write_string(out, meta.dump());

    const ad::ParameterStore& params = model.parameters();
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.count()));
    for (size_t p = 0; p < params.count(); ++p) {
        const ad::Tensor t = params.param_at(p);
        write_string(out, params.name_at(p));
        write_pod<uint32_t>(out, static_cast<uint32_t>(t.ndim()));
        for (size_t d : t.shape()) write_pod<uint64_t>(out, d);
        std::vector<float> narrowed(t.numel());
        for (size_t i = 0; i < t.numel(); ++i) narrowed[i] = static_cast<float>(t.data()[i]);
        out.write(reinterpret_cast<const char*>(narrowed.data()),
                  static_cast<long>(narrowed.size() * sizeof(float)));
    }

    write_pod<uint8_t>(out, adam ? 1 : 0);
    if (adam) {
        write_pod<double>(out, adam->beta1);
        write_pod<double>(out, adam->beta2);
        write_pod<double>(out, adam->eps);
        write_pod<uint64_t>(out, adam->step);
        for (size_t p = 0; p < adam->m.size(); ++p) {
            out.write(reinterpret_cast<const char*>(adam->m[p].data()),
                      static_cast<long>(adam->m[p].size() * sizeof(double)));
            out.write(reinterpret_cast<const char*>(adam->v[p].data()),
                      static_cast<long>(adam->v[p].size() * sizeof(double)));
        }
    }
    write_pod<uint64_t>(out, step);
    write_string(out, rng_state);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a checkpoint (bad magic): " + path);
    const uint32_t version = read_pod<uint32_t>(in, path);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path + " (expected " + std::to_string(kVersion) + ")");

    Checkpoint ckpt;
    const std::string meta_text = read_string(in, path);
    nlohmann::json meta = nlohmann::json::parse(meta_text);
    ckpt.model_config = ModelConfig::from_json(meta.at("model_config").dump());
    if (meta.contains("train_config")) ckpt.train_config_json = meta.at("train_config").dump();
    ckpt.vocab = Vocabulary::from_json(meta.at("vocab").dump());

    const uint32_t count = read_pod<uint32_t>(in, path);
    for (uint32_t p = 0; p < count; ++p) {
        const std::string name = read_string(in, path);
        const uint32_t ndim = read_pod<uint32_t>(in, path);
        std::vector<size_t> shape(ndim);
        size_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<size_t>(read_pod<uint64_t>(in, path));
            numel *= shape[d];
        }
        std::vector<float> narrowed(numel);
        in.read(reinterpret_cast<char*>(narrowed.data()),
                static_cast<long>(numel * sizeof(float)));
        if (!in) throw FormatError("checkpoint truncated: " + path);
        std::vector<double> widened(numel);
        for (size_t i = 0; i < numel; ++i) widened[i] = static_cast<double>(narrowed[i]);
        ckpt.params.emplace_back(name, std::move(widened));
        ckpt.shapes.push_back(std::move(shape));
    }

    ckpt.has_optimizer = read_pod<uint8_t>(in, path) != 0;
    if (ckpt.has_optimizer) {
        ckpt.adam.beta1 = read_pod<double>(in, path);
        ckpt.adam.beta2 = read_pod<double>(in, path);
        ckpt.adam.eps = read_pod<double>(in, path);
        ckpt.adam.step = static_cast<size_t>(read_pod<uint64_t>(in, path));
        ckpt.adam.m.resize(count);
        ckpt.adam.v.resize(count);
        for (uint32_t p = 0; p < count; ++p) {
            const size_t numel = ckpt.params[p].second.size();
            ckpt.adam.m[p].resize(numel);
            ckpt.adam.v[p].resize(numel);
            in.read(reinterpret_cast<char*>(ckpt.adam.m[p].data()),
                    static_cast<long>(numel * sizeof(double)));
            in.read(reinterpret_cast<char*>(ckpt.adam.v[p].data()),
                    static_cast<long>(numel * sizeof(double)));
            if (!in) throw FormatError("checkpoint truncated: " + path);
        }
    }
    ckpt.step = read_pod<uint64_t>(in, path);
    ckpt.rng_state = read_string(in, path);
    return ckpt;
}

std::unique_ptr<Seq2SeqModel> model_from_checkpoint(const Checkpoint& ckpt) {
    auto model = std::make_unique<Seq2SeqModel>(ckpt.model_config);
    ad::ParameterStore& params = model->parameters();
    if (params.count() != ckpt.params.size())
        throw FormatError("checkpoint parameter count does not match the model configuration");
    for (size_t p = 0; p < ckpt.params.size(); ++p) {
        const auto& [name, data] = ckpt.params[p];
        ad::Tensor t = params.get(name);
        if (t.shape() != ckpt.shapes[p])
            throw FormatError("checkpoint parameter '" + name + "' has unexpected shape");
        t.data() = data;
    }
    return model;
}

}  // namespace claret
