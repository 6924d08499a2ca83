#include <doctest.h>

#include "claret/common.hpp"
#include "claret/conllu.hpp"

using namespace claret;

namespace {

std::string simple_sentence() {
    return "1\tShe\tshe\tPRON\t_\t_\t2\tnsubj\t_\t_\n"
           "2\tran\trun\tVERB\t_\t_\t0\troot\t_\tSpaceAfter=No\n"
           "3\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_\n";
}

}  // namespace

TEST_CASE("empty file yields no paragraphs") {
    CHECK(parse_conllu("", "t").empty());
    CHECK(parse_conllu("\n\n\n", "t").empty());
}

TEST_CASE("single sentence paragraph with spans and root head") {
    const auto paragraphs = parse_conllu(simple_sentence(), "t");
    REQUIRE(paragraphs.size() == 1);
    const Paragraph& p = paragraphs[0];
    REQUIRE(p.tokens.size() == 3);
    CHECK(p.text == "She ran.");
    CHECK(p.tokens[0].head == 1);
    CHECK(p.tokens[1].head == -1);  // root
    CHECK(p.tokens[1].upos == "VERB");
    CHECK(p.text.substr(p.tokens[0].char_span.first,
                        p.tokens[0].char_span.second - p.tokens[0].char_span.first) == "She");
    CHECK(p.text.substr(p.tokens[2].char_span.first,
                        p.tokens[2].char_span.second - p.tokens[2].char_span.first) == ".");
}

TEST_CASE("cyclic head chain is a structural error naming the sentence") {
    const std::string bad =
        "# sent_id = cyc1\n"
        "1\ta\ta\tNOUN\t_\t_\t0\troot\t_\t_\n"
        "2\tb\tb\tNOUN\t_\t_\t3\tdep\t_\t_\n"
        "3\tc\tc\tNOUN\t_\t_\t2\tdep\t_\t_\n";
    try {
        parse_conllu(bad, "t");
        FAIL("expected StructureError");
    } catch (const StructureError& e) {
        CHECK(std::string(e.what()).find("cyc1") != std::string::npos);
    }
}

TEST_CASE("malformed line reports the line number") {
    const std::string bad = "1\tonly\tthree\tcolumns\n";
    try {
        parse_conllu(bad, "t");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":1:") != std::string::npos);
    }
}

TEST_CASE("head out of range and bad roots are structural errors") {
    const std::string out_of_range = "1\ta\ta\tNOUN\t_\t_\t9\tdep\t_\t_\n";
    CHECK_THROWS_AS(parse_conllu(out_of_range, "t"), StructureError);
    const std::string two_roots =
        "1\ta\ta\tNOUN\t_\t_\t0\troot\t_\t_\n"
        "2\tb\tb\tNOUN\t_\t_\t0\troot\t_\t_\n";
    CHECK_THROWS_AS(parse_conllu(two_roots, "t"), StructureError);
    const std::string self_head = "1\ta\ta\tNOUN\t_\t_\t1\tdep\t_\t_\n";
    CHECK_THROWS_AS(parse_conllu(self_head, "t"), StructureError);
}

TEST_CASE("newpar comments and double blank lines both delimit paragraphs") {
    const std::string text = simple_sentence() + "\n" + simple_sentence() + "\n\n" +
                             simple_sentence() + "\n# newpar\n" + simple_sentence() + "\n";
    const auto paragraphs = parse_conllu(text, "t");
    REQUIRE(paragraphs.size() == 3);
    CHECK(paragraphs[0].sentences.size() == 2);  // single blank line separates sentences
    CHECK(paragraphs[1].sentences.size() == 1);
    CHECK(paragraphs[2].sentences.size() == 1);
    CHECK(paragraphs[0].tokens.size() == 6);
    // heads stay sentence-local under paragraph-global indexing
    CHECK(paragraphs[0].tokens[4].head == -1);
    CHECK(paragraphs[0].tokens[3].head == 4);
}

TEST_CASE("long paragraphs split at sentence boundaries") {
    std::string text;
    for (int i = 0; i < 5; ++i) text += simple_sentence() + "\n";
    const auto paragraphs = parse_conllu(text, "t", /*max_sentences=*/2);
    REQUIRE(paragraphs.size() == 3);
    CHECK(paragraphs[0].sentences.size() == 2);
    CHECK(paragraphs[2].sentences.size() == 1);
    CHECK(paragraphs[0].id != paragraphs[1].id);
}

TEST_CASE("multiword ranges and empty nodes are skipped") {
    const std::string text =
        "1-2\tcannot\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "1\tcan\tcan\tAUX\t_\t_\t0\troot\t_\t_\n"
        "2\tnot\tnot\tPART\t_\t_\t1\tadvmod\t_\t_\n"
        "2.1\tghost\tghost\tNOUN\t_\t_\t_\t_\t_\t_\n";
    const auto paragraphs = parse_conllu(text, "t");
    REQUIRE(paragraphs.size() == 1);
    CHECK(paragraphs[0].tokens.size() == 2);
}

TEST_CASE("newdoc id flows into paragraphs") {
    const std::string text = "# newdoc id = mybook\n" + simple_sentence();
    const auto paragraphs = parse_conllu(text, "t");
    REQUIRE(paragraphs.size() == 1);
    CHECK(paragraphs[0].doc_id == "mybook");
}
