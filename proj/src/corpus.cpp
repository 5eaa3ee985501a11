#include "bidan/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bidan/tensor.hpp"
#include "bidan/vocab.hpp"

namespace bidan {

std::vector<std::string> load_lines(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("corpus: cannot read " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void save_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("corpus: cannot write " + path);
    for (const std::string& line : lines) f << line << '\n';
}

ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path) {
    ParallelCorpus corpus;
    corpus.src = load_lines(src_path);
    corpus.tgt = load_lines(tgt_path);
    if (corpus.src.size() != corpus.tgt.size())
        throw std::runtime_error("corpus: " + src_path + " has " +
                                 std::to_string(corpus.src.size()) + " lines but " + tgt_path +
                                 " has " + std::to_string(corpus.tgt.size()) +
                                 "; misaligned after line " +
                                 std::to_string(std::min(corpus.src.size(), corpus.tgt.size())));
    for (std::size_t i = 0; i < corpus.src.size(); ++i) {
        if (corpus.src[i].empty())
            throw std::runtime_error("corpus: " + src_path + ": empty line " + std::to_string(i + 1));
        if (corpus.tgt[i].empty())
            throw std::runtime_error("corpus: " + tgt_path + ": empty line " + std::to_string(i + 1));
    }
    return corpus;
}

const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::kCopy: return "copy";
        case TaskKind::kReverse: return "reverse";
        case TaskKind::kMappedReverse: return "mapped-reverse";
        case TaskKind::kSorted: return "sorted";
    }
    return "?";
}

TaskKind task_from_name(const std::string& name) {
    if (name == "copy") return TaskKind::kCopy;
    if (name == "reverse") return TaskKind::kReverse;
    if (name == "mapped-reverse") return TaskKind::kMappedReverse;
    if (name == "sorted") return TaskKind::kSorted;
    throw std::invalid_argument("corpus: unknown task '" + name + "'");
}

ParallelCorpus generate_synthetic_task(TaskKind kind, int vocab_size, int min_len, int max_len,
                                       int n_pairs, uint64_t seed) {
    if (vocab_size < 4) throw std::invalid_argument("generate_synthetic_task: vocab_size must be >= 4");
    if (min_len < 1 || max_len < min_len)
        throw std::invalid_argument("generate_synthetic_task: bad length range");
    if (n_pairs < 1) throw std::invalid_argument("generate_synthetic_task: n_pairs must be >= 1");

    Rng root(seed);
    // drawn before the sentence stream so every kind sees the same sources
    Rng map_rng = root.fork(1);
    Rng sent_rng = root.fork(2);

    std::vector<int> bijection(vocab_size);
    for (int i = 0; i < vocab_size; ++i) bijection[i] = i;
    for (int i = vocab_size; i > 1; --i)
        std::swap(bijection[i - 1], bijection[map_rng.below(static_cast<uint32_t>(i))]);

    ParallelCorpus corpus;
    for (int p = 0; p < n_pairs; ++p) {
        int len = min_len + static_cast<int>(sent_rng.below(static_cast<uint32_t>(max_len - min_len + 1)));
        std::vector<int> words(len);
        for (int& w : words) w = static_cast<int>(sent_rng.below(static_cast<uint32_t>(vocab_size)));

        std::vector<int> out = words;
        bool mapped_surface = false;
        switch (kind) {
            case TaskKind::kCopy: break;
            case TaskKind::kReverse: std::reverse(out.begin(), out.end()); break;
            case TaskKind::kMappedReverse:
                for (int& w : out) w = bijection[w];
                std::reverse(out.begin(), out.end());
                mapped_surface = true;
                break;
            case TaskKind::kSorted: std::sort(out.begin(), out.end()); break;
        }

        std::string src_line, tgt_line;
        for (int i = 0; i < len; ++i) {
            if (i) src_line += ' ';
            src_line += "s" + std::to_string(words[i]);
        }
        for (int i = 0; i < len; ++i) {
            if (i) tgt_line += ' ';
            tgt_line += (mapped_surface ? "t" : "s") + std::to_string(out[i]);
        }
        corpus.src.push_back(src_line);
        corpus.tgt.push_back(tgt_line);
    }
    return corpus;
}

const std::string& ConfigFile::get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw std::invalid_argument("config: missing key '" + key + "'");
    return it->second;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile parse_config_text(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     ": expected 'section.key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || key.find('.') == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     ": key must look like 'section.key'");
        if (value.empty())
            throw std::runtime_error("config: line " + std::to_string(lineno) + ": empty value");
        if (!cfg.values.emplace(key, value).second)
            throw std::runtime_error("config: line " + std::to_string(lineno) + ": duplicate key '" +
                                     key + "'");
    }
    return cfg;
}

ConfigFile load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("config: cannot read " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace bidan
