#include "doctest.h"

#include "bidan/vocab.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace bidan;

TEST_CASE("split_ws and utf8_chars") {
    CHECK(split_ws("  a  bc\td \n") == std::vector<std::string>{"a", "bc", "d"});
    CHECK(split_ws("") == std::vector<std::string>{});
    CHECK(utf8_chars("abc") == std::vector<std::string>{"a", "b", "c"});
    // "héllo": é is two bytes, must stay one symbol
    CHECK(utf8_chars("h\xc3\xa9llo") == std::vector<std::string>{"h", "\xc3\xa9", "l", "l", "o"});
    CHECK(utf8_chars("") == std::vector<std::string>{});
}

TEST_CASE("learn_bpe on 'ab ab ab' finds (a,b) first") {
    // hand trace: pairs (a,b) and (b,⟨/w⟩) both occur 3 times; tie goes to the
    // lexicographically smaller pair, so the first merge is (a,b)
    auto table = learn_bpe({"ab ab ab"}, 1);
    REQUIRE(table.size() == 1);
    CHECK(table.merges[0] == std::pair<std::string, std::string>{"a", "b"});

    auto none = learn_bpe({"ab ab ab"}, 0);
    CHECK(none.size() == 0);
}

TEST_CASE("learn_bpe two merges on ['abc abc', 'abd']") {
    // hand trace: counts abc=2, abd=1
    //   round 1: (a,b)=3 beats (b,c)=2, (c,⟨/w⟩)=2 -> merge (a,b)
    //   round 2: (ab,c)=2 ties (c,⟨/w⟩)=2 -> lexicographic -> (ab,c)
    auto table = learn_bpe({"abc abc", "abd"}, 2);
    REQUIRE(table.size() == 2);
    CHECK(table.merges[0] == std::pair<std::string, std::string>{"a", "b"});
    CHECK(table.merges[1] == std::pair<std::string, std::string>{"ab", "c"});
}

TEST_CASE("learn_bpe stops once no pair occurs twice") {
    // every pair in the singleton corpus occurs once
    auto table = learn_bpe({"abc"}, 5);
    CHECK(table.size() == 0);

    // after (a,b) and (ab,⟨/w⟩) the word is one symbol; no further merge possible
    auto table2 = learn_bpe({"ab ab ab"}, 10);
    CHECK(table2.size() == 2);
    CHECK(table2.merges[1] == std::pair<std::string, std::string>{"ab", kEow});
}

TEST_CASE("learn_bpe rejects empty corpus and negative merge count") {
    CHECK_THROWS(learn_bpe({}, 1));
    CHECK_THROWS(learn_bpe({"  "}, 1));
    CHECK_THROWS(learn_bpe({"a b"}, -1));
}

TEST_CASE("bpe_segment_word applies merges in rank order") {
    MergeTable table;
    table.merges = {{"a", "b"}};
    CHECK(bpe_segment_word("abab", table) == std::vector<std::string>{"ab", "ab" + kEow});
    CHECK(bpe_segment_word("ba", table) == std::vector<std::string>{"b", "a" + kEow});
    CHECK(bpe_segment_word("", table).empty());

    // merge onto the marker yields a word-final token directly
    MergeTable full;
    full.merges = {{"a", "b"}, {"ab", kEow}};
    CHECK(bpe_segment_word("ab", full) == std::vector<std::string>{"ab" + kEow});
}

TEST_CASE("vocab reserved layout and lookups") {
    Vocab v;
    REQUIRE(v.size() == Vocab::kNumReserved);
    CHECK(v.token(Vocab::kPad) == "<pad>");
    CHECK(v.token(Vocab::kBos) == "<bos>");
    CHECK(v.token(Vocab::kEos) == "<eos>");
    CHECK(v.token(Vocab::kUnk) == "<unk>");
    CHECK(v.id_of("missing") == Vocab::kUnk);
    CHECK_THROWS(v.token(-1));
    CHECK_THROWS(v.token(v.size()));

    Vocab v2(std::vector<std::string>{"x", "y"});
    CHECK(v2.size() == 6);
    CHECK(v2.id_of("x") == 4);
    CHECK(v2.id_of("y") == 5);
    CHECK_THROWS(Vocab(std::vector<std::string>{"x", "x"}));
    CHECK_THROWS(Vocab(std::vector<std::string>{"<pad>"}));
}

TEST_CASE("encode and decode round trip through bpe") {
    std::vector<std::string> corpus = {"ab ab ab", "abc abc", "abd"};
    auto merges = learn_bpe(corpus, 4);
    auto vocab = build_bpe_vocab(corpus, merges);

    for (const auto& line : corpus) {
        auto ids = encode_bpe(vocab, merges, line);
        REQUIRE(ids.size() >= 2);
        CHECK(ids.front() == Vocab::kBos);
        CHECK(ids.back() == Vocab::kEos);
        CHECK(decode(vocab, ids) == line);
    }

    CHECK(encode_bpe(vocab, merges, "") == TokenSeq{Vocab::kBos, Vocab::kEos});
    CHECK(decode(vocab, {Vocab::kBos, Vocab::kEos}) == "");
    CHECK(decode(vocab, {}) == "");
}

TEST_CASE("whole-word merge ends as a single id") {
    std::vector<std::string> corpus = {"ab ab ab"};
    auto merges = learn_bpe(corpus, 2);  // (a,b) then (ab,⟨/w⟩)
    auto vocab = build_bpe_vocab(corpus, merges);
    auto ids = encode_bpe(vocab, merges, "ab");
    REQUIRE(ids.size() == 3);
    CHECK(vocab.token(ids[1]) == "ab" + kEow);
}

TEST_CASE("unknown symbols map to <unk> and decode as literal") {
    std::vector<std::string> corpus = {"aa aa"};
    auto merges = learn_bpe(corpus, 2);
    auto vocab = build_bpe_vocab(corpus, merges);
    auto ids = encode_bpe(vocab, merges, "zz");
    bool has_unk = false;
    for (int id : ids) has_unk |= (id == Vocab::kUnk);
    CHECK(has_unk);
    CHECK(decode(vocab, {Vocab::kBos, Vocab::kUnk, Vocab::kEos}) == "<unk>");
    CHECK_THROWS(decode(vocab, {vocab.size()}));
}

TEST_CASE("min_freq filters rare symbols into <unk>") {
    std::vector<std::string> corpus = {"aa aa aa", "q"};
    MergeTable none;
    auto vocab = build_bpe_vocab(corpus, none, 2);
    CHECK(vocab.id_of("a") != Vocab::kUnk);
    CHECK(vocab.id_of("q" + kEow) == Vocab::kUnk);
}

TEST_CASE("word-level vocab is the degenerate case") {
    std::vector<std::string> corpus = {"the cat sat", "the cat"};
    auto vocab = build_word_vocab(corpus);
    // every token carries the end-of-word marker
    for (int id = Vocab::kNumReserved; id < vocab.size(); ++id) {
        const auto& t = vocab.token(id);
        REQUIRE(t.size() >= kEow.size());
        CHECK(t.substr(t.size() - kEow.size()) == kEow);
    }
    auto ids = encode_words(vocab, "the cat sat");
    CHECK(ids.size() == 5);
    CHECK(decode(vocab, ids) == "the cat sat");
    auto vocab2 = build_word_vocab(corpus, 2);
    CHECK(vocab2.id_of("sat" + kEow) == Vocab::kUnk);
}

TEST_CASE("learn_bpe and vocab construction are deterministic") {
    std::vector<std::string> corpus = {"the cat sat on the mat", "a cat on a mat", "the the the"};
    auto m1 = learn_bpe(corpus, 8);
    auto m2 = learn_bpe(corpus, 8);
    CHECK(m1.merges == m2.merges);
    auto v1 = build_bpe_vocab(corpus, m1);
    auto v2 = build_bpe_vocab(corpus, m2);
    CHECK(v1.id_to_token == v2.id_to_token);
}

TEST_CASE("vocab file round trip and reserved-line validation") {
    Vocab v(std::vector<std::string>{"aa", "b" + kEow});
    const std::string path = "test_vocab_tmp.vocab";
    v.save(path);
    auto loaded = Vocab::load(path);
    CHECK(loaded.id_to_token == v.id_to_token);
    std::remove(path.c_str());

    CHECK_THROWS(Vocab::from_text("<pad>\n<bos>\n"));
    CHECK_THROWS(Vocab::from_text("<bos>\n<pad>\n<eos>\n<unk>\n"));
    auto bare = Vocab::from_text("<pad>\n<bos>\n<eos>\n<unk>\n");
    CHECK(bare.size() == Vocab::kNumReserved);
    CHECK_THROWS(Vocab::load("does_not_exist.vocab"));
}

TEST_CASE("merge table file round trip") {
    MergeTable t;
    t.merges = {{"a", "b"}, {"ab", kEow}};
    const std::string path = "test_vocab_tmp.merges";
    t.save(path);
    auto loaded = MergeTable::load(path);
    CHECK(loaded.merges == t.merges);
    std::remove(path.c_str());

    {
        std::ofstream f(path);
        f << "a b\nmalformed\n";
    }
    CHECK_THROWS(MergeTable::load(path));
    std::remove(path.c_str());
    CHECK_THROWS(MergeTable::load("does_not_exist.merges"));
}
