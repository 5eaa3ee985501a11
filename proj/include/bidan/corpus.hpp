#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bidan {

struct ParallelCorpus {
    std::vector<std::string> src, tgt;  // aligned by index, no empty lines
    std::size_t size() const { return src.size(); }
};

std::vector<std::string> load_lines(const std::string& path);
void save_lines(const std::string& path, const std::vector<std::string>& lines);

// Two aligned one-sentence-per-line files. Misalignment and empty lines are
// reported with line numbers.
ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path);

enum class TaskKind { kCopy, kReverse, kMappedReverse, kSorted };

const char* task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);

// Deterministic desk-scale stand-in for a parallel corpus. Source sentences
// draw vocab_size distinct words; the target side is the source copied,
// reversed, token-sorted, or (mapped-reverse) pushed through a seeded token
// bijection onto a disjoint surface vocabulary and reversed. For fixed
// (vocab_size, lengths, n_pairs, seed) the source side is identical across
// kinds, so tasks can share a source language.
ParallelCorpus generate_synthetic_task(TaskKind kind, int vocab_size, int min_len, int max_len,
                                       int n_pairs, uint64_t seed);

// Line-based `section.key = value` text; '#' starts a comment. Parsing is
// syntax-only; schema validation happens where the keys are interpreted.
struct ConfigFile {
    std::map<std::string, std::string> values;  // "section.key" -> value

    bool has(const std::string& key) const { return values.count(key) != 0; }
    const std::string& get(const std::string& key) const;
};

ConfigFile parse_config_text(const std::string& text);
ConfigFile load_config(const std::string& path);

}  // namespace bidan
