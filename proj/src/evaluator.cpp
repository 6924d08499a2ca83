#include "claret/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <set>

#include <json.hpp>

#include "claret/common.hpp"

namespace claret {

namespace {

std::string paragraph_of(const std::string& instance_id) {
    const size_t hash_pos = instance_id.rfind('#');
    return hash_pos == std::string::npos ? instance_id : instance_id.substr(0, hash_pos);
}

template <class Fn>
void parallel_over(size_t n, int workers, Fn&& fn) {
    workers = std::max(1, workers);
    if (workers == 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> futures;
    const size_t chunk = (n + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        const size_t begin = static_cast<size_t>(w) * chunk;
        const size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        futures.push_back(std::async(std::launch::async, [&fn, begin, end]() {
            for (size_t i = begin; i < end; ++i) fn(i);
        }));
    }
    for (auto& f : futures) f.get();
}

}  // namespace

std::pair<std::vector<PretrainInstance>, std::vector<PretrainInstance>> holdout_split(
    const std::vector<PretrainInstance>& corpus, double fraction, uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw StructureError("holdout fraction must be in [0,1]");
    std::set<std::string> paragraphs;
    for (const PretrainInstance& inst : corpus) paragraphs.insert(paragraph_of(inst.id));

    std::vector<std::string> ordered(paragraphs.begin(), paragraphs.end());
    std::sort(ordered.begin(), ordered.end(), [&](const std::string& a, const std::string& b) {
        const uint64_t ha = derive_seed(seed, a);
        const uint64_t hb = derive_seed(seed, b);
        if (ha != hb) return ha < hb;
        return a < b;
    });
    const size_t dev_count = static_cast<size_t>(fraction * static_cast<double>(ordered.size()));
    std::set<std::string> dev_ids(ordered.begin(),
                                  ordered.begin() + static_cast<long>(dev_count));

    std::pair<std::vector<PretrainInstance>, std::vector<PretrainInstance>> out;
    for (const PretrainInstance& inst : corpus) {
        if (dev_ids.count(paragraph_of(inst.id)))
            out.second.push_back(inst);
        else
            out.first.push_back(inst);
    }
    return out;
}

std::vector<std::vector<double>> score_event_nlls(const Seq2SeqModel& model,
                                                  const Vocabulary& vocab,
                                                  const std::vector<PretrainInstance>& dev,
                                                  int workers) {
    std::vector<std::vector<double>> nlls(dev.size());
    parallel_over(dev.size(), workers, [&](size_t i) {
        ad::NoGradGuard guard;
        const PretrainInstance& inst = dev[i];
        EncoderState state = model.encode(vocab.encode(inst.masked.text, true));
        TokenSequence target = vocab.encode(inst.masked.gold_event);
        if (target.empty()) target.push_back(Vocabulary::kUnk);
        nlls[i] = model.sequence_log_prob(state, target).second;
    });
    return nlls;
}

double eppl(const Seq2SeqModel& model, const Vocabulary& vocab,
            const std::vector<PretrainInstance>& dev, const EvalConfig& cfg) {
    if (dev.empty()) throw StructureError("eppl: empty evaluation set");
    const auto nlls = score_event_nlls(model, vocab, dev, cfg.workers);
    if (cfg.per_example_pooling) {
        double acc = 0.0;
        for (const auto& per_token : nlls) {
            const size_t event_tokens = per_token.size() - 1;  // drop EOS
            double total = 0.0;
            for (size_t t = 0; t < event_tokens; ++t) total += per_token[t];
            acc += std::exp(total / static_cast<double>(std::max<size_t>(event_tokens, 1)));
        }
        return acc / static_cast<double>(nlls.size());
    }
    double total = 0.0;
    size_t tokens = 0;
    for (const auto& per_token : nlls) {
        const size_t event_tokens = per_token.size() - 1;
        for (size_t t = 0; t < event_tokens; ++t) total += per_token[t];
        tokens += event_tokens;
    }
    if (tokens == 0) throw StructureError("eppl: no gold event tokens in the evaluation set");
    return std::exp(total / static_cast<double>(tokens));
}

std::vector<PositionalBin> positional_ppl(const Seq2SeqModel& model, const Vocabulary& vocab,
                                          const std::vector<PretrainInstance>& dev,
                                          const EvalConfig& cfg) {
    const auto nlls = score_event_nlls(model, vocab, dev, cfg.workers);
    std::vector<double> sums(10, 0.0);
    std::vector<size_t> counts(10, 0);
    for (const auto& per_token : nlls) {
        const size_t len = per_token.size() - 1;  // event tokens, EOS dropped
        for (size_t t = 1; t <= len; ++t) {
            const size_t bin = 10 * (t - 1) / len;  // floor(10 (t-1) / L)
            sums[bin] += per_token[t - 1];
            counts[bin] += 1;
        }
    }
    std::vector<PositionalBin> bins(10);
    for (size_t b = 0; b < 10; ++b) {
        bins[b].tokens = counts[b];
        if (counts[b] > 0) {
            bins[b].mean_nll = sums[b] / static_cast<double>(counts[b]);
            bins[b].perplexity = std::exp(bins[b].mean_nll);
        }
    }
    return bins;
}

std::vector<LengthBin> length_binned_nll(const Seq2SeqModel& model, const Vocabulary& vocab,
                                         const std::vector<PretrainInstance>& dev,
                                         const EvalConfig& cfg) {
    const auto nlls = score_event_nlls(model, vocab, dev, cfg.workers);
    std::vector<LengthBin> bins;
    for (const auto& [lo, hi] : cfg.length_bins) bins.push_back({lo, hi, 0, std::nullopt});
    std::vector<double> sums(bins.size(), 0.0);
    for (const auto& per_token : nlls) {
        const size_t len = per_token.size() - 1;
        double total = 0.0;
        for (size_t t = 0; t < len; ++t) total += per_token[t];
        for (size_t b = 0; b < bins.size(); ++b) {
            if (len >= bins[b].lo && len <= bins[b].hi) {
                sums[b] += total;
                bins[b].count += 1;
                break;
            }
        }
    }
    for (size_t b = 0; b < bins.size(); ++b) {
        if (bins[b].count > 0) sums[b] /= static_cast<double>(bins[b].count);
        if (bins[b].count > 0) bins[b].mean_nll = sums[b];
    }
    return bins;
}

std::vector<double> option_scores(const Seq2SeqModel& model, const Vocabulary& vocab,
                                  const MultiChoiceItem& item) {
    ad::NoGradGuard guard;
    EncoderState state = model.encode(vocab.encode(item.context, true));
    std::vector<double> scores;
    for (const std::string& option : item.options) {
        TokenSequence target = vocab.encode(option);
        if (target.empty()) target.push_back(Vocabulary::kUnk);
        const auto [total, per_token] = model.sequence_log_prob(state, target);
        scores.push_back(total / static_cast<double>(per_token.size()));
    }
    return scores;
}

MultiChoiceResult zero_shot_multichoice(const Seq2SeqModel& model, const Vocabulary& vocab,
                                        const std::vector<MultiChoiceItem>& items, int workers) {
    MultiChoiceResult result;
    result.n = items.size();
    std::vector<char> correct(items.size(), 0);
    parallel_over(items.size(), workers, [&](size_t i) {
        const std::vector<double> scores = option_scores(model, vocab, items[i]);
        size_t best = 0;
        for (size_t k = 1; k < scores.size(); ++k) {
            if (scores[k] < scores[best]) best = k;  // ties keep the lowest index
        }
        correct[i] = best == items[i].gold_index ? 1 : 0;
    });
    for (char c : correct) result.correct += static_cast<size_t>(c);
    result.accuracy = items.empty() ? 0.0
                                    : static_cast<double>(result.correct) /
                                          static_cast<double>(result.n);
    return result;
}

EvalReport evaluate(const Seq2SeqModel& model, const Vocabulary& vocab,
                    const std::vector<PretrainInstance>& dev, const EvalConfig& cfg) {
    EvalReport report;
    report.eppl = eppl(model, vocab, dev, cfg);
    const auto nlls = score_event_nlls(model, vocab, dev, cfg.workers);
    for (const auto& per_token : nlls) report.event_tokens += per_token.size() - 1;
    report.positional_bins = positional_ppl(model, vocab, dev, cfg);
    report.length_bins = length_binned_nll(model, vocab, dev, cfg);
    return report;
}

void emit_report(const EvalReport& report, const std::string& path, const std::string& csv_base) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["eppl"] = report.eppl;
    j["event_tokens"] = report.event_tokens;
    j["positional_bins"] = nlohmann::json::array();
    for (size_t b = 0; b < report.positional_bins.size(); ++b) {
        const PositionalBin& bin = report.positional_bins[b];
        j["positional_bins"].push_back(
            {{"bin", b}, {"tokens", bin.tokens}, {"mean_nll", bin.mean_nll},
             {"perplexity", bin.perplexity}});
    }
    j["length_bins"] = nlohmann::json::array();
    for (const LengthBin& bin : report.length_bins) {
        nlohmann::json jb;
        jb["lo"] = bin.lo;
        jb["hi"] = bin.hi == SIZE_MAX ? nlohmann::json() : nlohmann::json(bin.hi);
        jb["count"] = bin.count;
        if (bin.mean_nll.has_value()) jb["mean_nll"] = *bin.mean_nll;
        j["length_bins"].push_back(jb);
    }
    if (report.multichoice.has_value()) {
        j["multichoice"] = {{"n", report.multichoice->n},
                            {"correct", report.multichoice->correct},
                            {"accuracy", report.multichoice->accuracy}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open report file: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);

    if (!csv_base.empty()) {
        std::ofstream pos(csv_base + ".positional.csv", std::ios::binary);
        if (!pos) throw IoError("cannot open CSV: " + csv_base + ".positional.csv");
        pos << "bin,label,value,count\n";
        for (size_t b = 0; b < report.positional_bins.size(); ++b) {
            pos << b << ",decile" << b << "," << report.positional_bins[b].perplexity << ","
                << report.positional_bins[b].tokens << "\n";
        }
        std::ofstream len(csv_base + ".length.csv", std::ios::binary);
        if (!len) throw IoError("cannot open CSV: " + csv_base + ".length.csv");
        len << "bin,label,value,count\n";
        for (size_t b = 0; b < report.length_bins.size(); ++b) {
            const LengthBin& bin = report.length_bins[b];
            len << b << "," << bin.lo << "-";
            if (bin.hi == SIZE_MAX)
                len << "inf";
            else
                len << bin.hi;
            len << "," << (bin.mean_nll.has_value() ? std::to_string(*bin.mean_nll) : "")
                << "," << bin.count << "\n";
        }
    }
}

std::vector<MultiChoiceItem> read_multichoice_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open multi-choice file: " + path);
    std::vector<MultiChoiceItem> items;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            MultiChoiceItem item;
            item.context = j.at("context").get<std::string>();
            item.options = j.at("options").get<std::vector<std::string>>();
            item.gold_index = j.at("gold").get<size_t>();
            if (item.options.empty() || item.gold_index >= item.options.size())
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad gold index");
            items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return items;
}

void write_multichoice_jsonl(const std::string& path, const std::vector<MultiChoiceItem>& items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open output file: " + path);
    for (const MultiChoiceItem& item : items) {
        nlohmann::json j;
        j["context"] = item.context;
        j["options"] = item.options;
        j["gold"] = item.gold_index;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace claret
