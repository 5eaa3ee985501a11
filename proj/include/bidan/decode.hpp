#pragma once

#include <vector>

#include "bidan/model.hpp"
#include "bidan/vocab.hpp"

namespace bidan {

struct Hypothesis {
    TokenSeq tokens;        // framed: starts at <bos>; finished implies last == <eos>
    double logprob = 0.0;   // cumulative log P, non-increasing as tokens append
    double score = 0.0;     // logprob, divided by generated length under length_norm
    bool finished = false;
    int state_row = -1;     // live-set bookkeeping during search, -1 once returned
};

// Beam search over decoder 1 or 2 for a single framed source sentence.
// Each step expands every live hypothesis over the full vocabulary (with
// <pad> and <bos> masked to -inf, no renormalization) and keeps the top
// beam_size by score; ties break toward the lower token id, then the lower
// hypothesis index. Finished hypotheses move to a completed pool. Returns
// the pool, padded with the best live hypotheses when fewer than beam_size
// finish, sorted by score. max_len caps generated tokens; -1 means
// 2 * source length + 5.
std::vector<Hypothesis> beam_search(const Model& model, int decoder, const TokenSeq& src,
                                    int beam_size, int max_len = -1, bool length_norm = false);

// Argmax decoding (ties toward the lower token id) until <eos> or max_len
// generated tokens. Equivalent to beam_search with beam_size 1.
TokenSeq greedy_decode(const Model& model, int decoder, const TokenSeq& src, int max_len = -1);

// One shared encoder pass and lock-step argmax over many sentences; rows that
// emit <eos> or hit their cap drop out. Output i matches greedy_decode on
// srcs[i] exactly.
std::vector<TokenSeq> greedy_decode_batch(const Model& model, int decoder,
                                          const std::vector<TokenSeq>& srcs, int max_len = -1);

}  // namespace bidan
