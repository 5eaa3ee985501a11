#pragma once

#include <string>

#include "bidan/model.hpp"
#include "bidan/vocab.hpp"

namespace bidan {

// On disk: magic "BIDN", u32 LE version, then length-prefixed (u32 LE) text
// blobs for the model config, both vocabularies and both merge tables, a u32
// tensor count, and the tensors sorted by (partition, name) with partitions
// ordered enc, dec1, dec2. Each tensor: u32 name length, name, u32 rank, u64
// extents, raw little-endian float32 data. Malformed files fail with the byte
// offset of the problem.
struct Checkpoint {
    ModelConfig config;
    Vocab src_vocab, tgt_vocab;
    MergeTable src_merges, tgt_merges;  // empty tables mean word-level
    ParamStore params;
};

Checkpoint make_checkpoint(const Model& model, const Vocab& src_vocab, const Vocab& tgt_vocab,
                           const MergeTable& src_merges = {}, const MergeTable& tgt_merges = {});

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds a Model carrying the checkpoint's parameters.
Model model_from_checkpoint(const Checkpoint& ckpt);

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace bidan
