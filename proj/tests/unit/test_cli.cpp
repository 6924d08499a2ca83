#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/stat.h>
#include <sys/wait.h>

#include <json.hpp>

#include "support/synthetic.hpp"

using namespace claret;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(CLARET_BINARY_PATH) + " " + args + " >cli_stdout.txt 2>cli_stderr.txt";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool exists(const std::string& path) {
    struct stat st{};
    return ::stat(path.c_str(), &st) == 0;
}

const char* kLexicon = CLARET_DATA_DIR "/pdtb_connectives.txt";

}  // namespace

TEST_CASE("usage errors exit with 2 and suggest near-miss flags") {
    CHECK(run("") == 2);                       // missing subcommand
    CHECK(run("mine") == 2);                   // missing required flags
    CHECK(run("mine --in a --out b --lexicom c") == 2);
    const std::string err = slurp("cli_stderr.txt");
    CHECK(err.find("--lexicon") != std::string::npos);  // suggestion
    CHECK(run("frobnicate") == 2);
    CHECK(run("--help") == 0);
    CHECK(run("mine --help") == 0);
}

TEST_CASE("runtime failures exit with 1") {
    CHECK(run(std::string("mine --in missing.conllu --out out.jsonl --lexicon ") + kLexicon) == 1);
    {
        std::ofstream bad("bad.clrt", std::ios::binary);
        bad << "not a checkpoint";
    }
    CHECK(run("inspect --in bad.clrt") == 1);
    std::remove("bad.clrt");
}

TEST_CASE("the pipeline runs end to end through the binary") {
    // corpus
    {
        std::ofstream f("cli_corpus.conllu", std::ios::binary);
        f << testsupport::synthetic_conllu(12, 5);
    }

    CHECK(run(std::string("mine --in cli_corpus.conllu --out cli_mined.jsonl --lexicon ") +
              kLexicon) == 0);
    CHECK(exists("cli_mined.jsonl"));
    CHECK(exists("cli_mined.jsonl.manifest.json"));
    {
        const nlohmann::json manifest =
            nlohmann::json::parse(slurp("cli_mined.jsonl.manifest.json"));
        CHECK(manifest.at("command") == "mine");
        CHECK(manifest.at("inputs").size() == 2);
        CHECK(!manifest.at("config_hash").get<std::string>().empty());
    }

    CHECK(run(std::string("sample --in cli_mined.jsonl --out cli_sampled.jsonl --seed 3 "
                          "--lexicon ") + kLexicon) == 0);
    CHECK(run("build --in cli_sampled.jsonl --out cli_instances.jsonl --seed 3") == 0);
    CHECK(run("vocab --in cli_instances.jsonl --out cli_vocab.json --size 512") == 0);

    CHECK(run("pretrain --data cli_instances.jsonl --vocab cli_vocab.json --out cli_model.clrt "
              "--metrics cli_metrics.jsonl --steps 3 --batch 4 --d-model 32 --heads 4 "
              "--enc-layers 1 --dec-layers 1 --ffn 48 --max-positions 160 --seed 5") == 0);
    CHECK(exists("cli_model.clrt"));
    CHECK(exists("cli_metrics.jsonl"));
    {
        std::ifstream metrics("cli_metrics.jsonl");
        std::string line;
        size_t rows = 0;
        while (std::getline(metrics, line)) {
            if (line.empty()) continue;
            const nlohmann::json j = nlohmann::json::parse(line);
            CHECK(j.contains("step"));
            CHECK(j.contains("l_wer"));
            CHECK(j.contains("l_cee"));
            CHECK(j.contains("l_pel"));
            CHECK(j.contains("total"));
            ++rows;
        }
        CHECK(rows == 3);
    }

    CHECK(run("eval --ckpt cli_model.clrt --data cli_instances.jsonl --out cli_report.json") == 0);
    {
        const nlohmann::json report = nlohmann::json::parse(slurp("cli_report.json"));
        CHECK(report.at("eppl").get<double>() >= 1.0);
    }

    // multi-choice items from the instances
    {
        const auto instances = read_instances_jsonl("cli_instances.jsonl");
        const auto items = testsupport::multichoice_items(instances, 4, 2);
        write_multichoice_jsonl("cli_items.jsonl", items);
    }
    CHECK(run("score --ckpt cli_model.clrt --items cli_items.jsonl") == 0);
    {
        const nlohmann::json score = nlohmann::json::parse(slurp("cli_stdout.txt"));
        CHECK(score.at("n").get<size_t>() > 0);
        CHECK(score.at("accuracy").get<double>() >= 0.0);
    }

    CHECK(run("generate --ckpt cli_model.clrt --context \"alice opened the door because bob "
              "waited . then [M] .\" --beam 2 --max-len 8") == 0);
    CHECK(!slurp("cli_stdout.txt").empty());
    // a context without the mask token is a runtime error
    CHECK(run("generate --ckpt cli_model.clrt --context \"no mask here\"") == 1);

    CHECK(run("inspect --in cli_model.clrt") == 0);
    {
        const nlohmann::json info = nlohmann::json::parse(slurp("cli_stdout.txt"));
        CHECK(info.at("kind") == "checkpoint");
        CHECK(info.at("step").get<size_t>() == 3);
    }
    CHECK(run("inspect --in cli_instances.jsonl") == 0);

    for (const char* path :
         {"cli_corpus.conllu", "cli_mined.jsonl", "cli_mined.jsonl.manifest.json",
          "cli_sampled.jsonl", "cli_sampled.jsonl.manifest.json", "cli_instances.jsonl",
          "cli_instances.jsonl.manifest.json", "cli_vocab.json", "cli_vocab.json.manifest.json",
          "cli_model.clrt", "cli_model.clrt.manifest.json", "cli_metrics.jsonl",
          "cli_report.json", "cli_report.json.manifest.json", "cli_items.jsonl",
          "cli_stdout.txt", "cli_stderr.txt"}) {
        std::remove(path);
    }
}
