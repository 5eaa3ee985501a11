#include "bidan/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bidan {

namespace {

const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// word -> occurrence count, insertion order preserved separately for determinism
struct WordCounts {
    std::vector<std::string> order;
    std::unordered_map<std::string, long> counts;

    void add(const std::string& w) {
        auto [it, inserted] = counts.try_emplace(w, 0);
        if (inserted) order.push_back(w);
        ++it->second;
    }
};

WordCounts count_words(const std::vector<std::string>& corpus) {
    WordCounts wc;
    for (const auto& line : corpus)
        for (const auto& w : split_ws(line)) wc.add(w);
    return wc;
}

// merge every adjacent occurrence of (l, r) left to right
void apply_merge(std::vector<std::string>& sym, const std::string& l, const std::string& r) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == l && sym[i + 1] == r) {
            sym[w++] = l + r;
            i += 2;
        } else {
            if (w != i) sym[w] = std::move(sym[i]);  // self-move would clear sym[i]
            ++w;
            ++i;
        }
    }
    sym.resize(w);
}

void attach_trailing_marker(std::vector<std::string>& sym) {
    if (sym.size() >= 2 && sym.back() == kEow) {
        sym.pop_back();
        sym.back() += kEow;
    }
}

}  // namespace

std::vector<std::string> split_ws(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> utf8_chars(const std::string& word) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < word.size();) {
        unsigned char b = static_cast<unsigned char>(word[i]);
        std::size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xe ? 3 : (b >> 3) == 0x1e ? 4 : 1;
        len = std::min(len, word.size() - i);
        out.push_back(word.substr(i, len));
        i += len;
    }
    return out;
}

MergeTable learn_bpe(const std::vector<std::string>& corpus, int num_merges) {
    if (num_merges < 0) throw std::invalid_argument("learn_bpe: num_merges must be >= 0");
    WordCounts wc = count_words(corpus);
    if (wc.order.empty()) throw std::invalid_argument("learn_bpe: empty corpus");

    std::vector<std::vector<std::string>> words;
    std::vector<long> counts;
    for (const auto& w : wc.order) {
        auto sym = utf8_chars(w);
        sym.push_back(kEow);
        words.push_back(std::move(sym));
        counts.push_back(wc.counts.at(w));
    }

    MergeTable table;
    for (int step = 0; step < num_merges; ++step) {
        std::map<std::pair<std::string, std::string>, long> pair_counts;
        for (std::size_t wi = 0; wi < words.size(); ++wi) {
            const auto& sym = words[wi];
            for (std::size_t i = 0; i + 1 < sym.size(); ++i)
                pair_counts[{sym[i], sym[i + 1]}] += counts[wi];
        }
        // max count, ties to the lexicographically smallest pair (map order)
        const std::pair<std::string, std::string>* best = nullptr;
        long best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) {
                best = &pair;
                best_count = count;
            }
        }
        if (best == nullptr || best_count < 2) break;
        table.merges.push_back(*best);
        for (auto& sym : words) apply_merge(sym, best->first, best->second);
    }
    return table;
}

std::vector<std::string> bpe_segment_word(const std::string& word, const MergeTable& merges) {
    std::vector<std::string> sym = utf8_chars(word);
    if (sym.empty()) return sym;
    sym.push_back(kEow);

    std::map<std::pair<std::string, std::string>, std::size_t> rank;
    for (std::size_t i = 0; i < merges.merges.size(); ++i) rank.emplace(merges.merges[i], i);

    for (;;) {
        std::size_t best_rank = merges.merges.size();
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
            auto it = rank.find({sym[i], sym[i + 1]});
            if (it != rank.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == merges.merges.size()) break;
        apply_merge(sym, merges.merges[best_rank].first, merges.merges[best_rank].second);
    }
    attach_trailing_marker(sym);
    return sym;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) {
    id_to_token = kReserved;
    for (const auto& t : tokens) id_to_token.push_back(t);
    for (std::size_t i = 0; i < id_to_token.size(); ++i) {
        auto [it, inserted] = token_to_id.emplace(id_to_token[i], static_cast<int>(i));
        if (!inserted) throw std::invalid_argument("vocab: duplicate token '" + id_to_token[i] + "'");
    }
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token[static_cast<std::size_t>(id)];
}

std::string Vocab::to_text() const {
    std::string out;
    for (const auto& t : id_to_token) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocab Vocab::from_text(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    if (lines.size() < kReserved.size())
        throw std::invalid_argument("vocab: file too short for reserved tokens");
    for (std::size_t i = 0; i < kReserved.size(); ++i)
        if (lines[i] != kReserved[i])
            throw std::invalid_argument("vocab: line " + std::to_string(i + 1) + " must be reserved token '" +
                                        kReserved[i] + "', got '" + lines[i] + "'");
    return Vocab(std::vector<std::string>(lines.begin() + kReserved.size(), lines.end()));
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("vocab: cannot write " + path);
    f << to_text();
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("vocab: cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

std::string MergeTable::to_text() const {
    std::string out;
    for (const auto& [l, r] : merges) out += l + ' ' + r + '\n';
    return out;
}

MergeTable MergeTable::from_text(const std::string& text) {
    MergeTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto parts = split_ws(line);
        if (parts.size() != 2)
            throw std::runtime_error("merges: line " + std::to_string(lineno) + ": expected 'left right'");
        table.merges.emplace_back(parts[0], parts[1]);
    }
    return table;
}

void MergeTable::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("merges: cannot write " + path);
    f << to_text();
}

MergeTable MergeTable::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("merges: cannot read " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return from_text(buf.str());
}

Vocab build_bpe_vocab(const std::vector<std::string>& corpus, const MergeTable& merges, int min_freq) {
    WordCounts wc = count_words(corpus);
    if (wc.order.empty()) throw std::invalid_argument("build_bpe_vocab: empty corpus");
    std::map<std::string, long> sym_freq;
    for (const auto& w : wc.order)
        for (const auto& s : bpe_segment_word(w, merges)) sym_freq[s] += wc.counts.at(w);
    std::vector<std::string> tokens;
    for (const auto& [s, freq] : sym_freq)
        if (freq >= min_freq) tokens.push_back(s);
    return Vocab(tokens);
}

Vocab build_word_vocab(const std::vector<std::string>& corpus, int min_freq) {
    WordCounts wc = count_words(corpus);
    if (wc.order.empty()) throw std::invalid_argument("build_word_vocab: empty corpus");
    std::map<std::string, long> freq;
    for (const auto& [w, c] : wc.counts) freq[w + kEow] = c;
    std::vector<std::string> tokens;
    for (const auto& [s, c] : freq)
        if (c >= min_freq) tokens.push_back(s);
    return Vocab(tokens);
}

TokenSeq encode_bpe(const Vocab& vocab, const MergeTable& merges, const std::string& sentence) {
    TokenSeq ids = {Vocab::kBos};
    for (const auto& w : split_ws(sentence))
        for (const auto& s : bpe_segment_word(w, merges)) ids.push_back(vocab.id_of(s));
    ids.push_back(Vocab::kEos);
    return ids;
}

TokenSeq encode_words(const Vocab& vocab, const std::string& sentence) {
    TokenSeq ids = {Vocab::kBos};
    for (const auto& w : split_ws(sentence)) ids.push_back(vocab.id_of(w + kEow));
    ids.push_back(Vocab::kEos);
    return ids;
}

std::string decode(const Vocab& vocab, const TokenSeq& ids) {
    std::vector<std::string> words;
    std::string cur;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size())
            throw std::invalid_argument("decode: id " + std::to_string(id) + " out of range");
        if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos) continue;
        if (id == Vocab::kUnk) {
            cur += "<unk>";
            words.push_back(std::move(cur));
            cur.clear();
            continue;
        }
        const std::string& tok = vocab.token(id);
        if (ends_with(tok, kEow)) {
            cur += tok.substr(0, tok.size() - kEow.size());
            words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += tok;
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace bidan
