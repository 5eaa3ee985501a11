#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bidan {

using TokenSeq = std::vector<int>;

// End-of-word marker carried by the final subword of each word. Word-level
// vocabularies are the degenerate case where every token is word-final.
inline const std::string kEow = "⟨/w⟩";  // "⟨/w⟩"

// Ordered BPE merge rules; rank = position in the list.
struct MergeTable {
    std::vector<std::pair<std::string, std::string>> merges;

    std::size_t size() const { return merges.size(); }
    void save(const std::string& path) const;
    static MergeTable load(const std::string& path);
    std::string to_text() const;
    static MergeTable from_text(const std::string& text);
};

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumReserved = 4;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    Vocab();
    explicit Vocab(const std::vector<std::string>& tokens);  // non-reserved entries, in order

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id_of(const std::string& token) const;  // kUnk when absent
    const std::string& token(int id) const;     // throws on out-of-range

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);
    std::string to_text() const;
    static Vocab from_text(const std::string& text);
};

std::vector<std::string> split_ws(const std::string& text);
std::vector<std::string> utf8_chars(const std::string& word);

// Greedy most-frequent-pair merges; ties broken by lexicographically smallest
// pair; stops early once no pair occurs at least twice.
MergeTable learn_bpe(const std::vector<std::string>& corpus, int num_merges);

// Subword segmentation of a single word: merge rules applied in rank order,
// final subword carries kEow.
std::vector<std::string> bpe_segment_word(const std::string& word, const MergeTable& merges);

Vocab build_bpe_vocab(const std::vector<std::string>& corpus, const MergeTable& merges, int min_freq = 1);
Vocab build_word_vocab(const std::vector<std::string>& corpus, int min_freq = 1);

TokenSeq encode_bpe(const Vocab& vocab, const MergeTable& merges, const std::string& sentence);
TokenSeq encode_words(const Vocab& vocab, const std::string& sentence);
std::string decode(const Vocab& vocab, const TokenSeq& ids);

}  // namespace bidan
