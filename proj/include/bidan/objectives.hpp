#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bidan/model.hpp"
#include "bidan/vocab.hpp"

namespace bidan {

// A padded minibatch of framed sequences ([<bos> ... <eos>], then PAD). The
// flat arrays use the b*len + s layout shared with the model.
struct Batch {
    std::vector<TokenSeq> src, tgt;  // framed, unpadded
    std::vector<int> src_ids, tgt_ids;
    std::vector<uint8_t> src_mask, tgt_mask;
    int size = 0;
    int src_len = 0, tgt_len = 0;
};

Batch make_batch(const std::vector<TokenSeq>& src, const std::vector<TokenSeq>& tgt);

struct LossOut {
    Value loss;
    int tokens = 0;  // real prediction slots behind the loss
};

// J1: translation likelihood, D1 teacher-forced on the target.
LossOut loss_j1(Graph& g, const Model& model, const Batch& batch, bool train, Rng* drop_rng);

// J2: autoencoding, D2 teacher-forced on the clean source.
LossOut loss_j2(Graph& g, const Model& model, const Batch& batch, bool train, Rng* drop_rng);

// Denoising noise: floor(m/4) swaps of adjacent interior positions, m = token
// count without the frame; BOS/EOS never move; repeated indices allowed.
struct NoisedSentence {
    TokenSeq ids;                            // corrupted framed sequence
    std::vector<std::pair<int, int>> swaps;  // recorded position exchanges
};

NoisedSentence make_noise(const TokenSeq& framed, Rng& rng);

// Which side of the autoencoder the corruption lands on. kTarget is the
// literal Eq.-style setup (clean input, disordered reference); kInput is the
// classic denoising form.
enum class NoiseSide { kTarget, kInput };
const char* noise_side_name(NoiseSide side);
NoiseSide noise_side_from_name(const std::string& name);

LossOut loss_jd(Graph& g, const Model& model, const Batch& batch, Rng& noise_rng, NoiseSide side,
                bool train, Rng* drop_rng);

// Ancestral sampling from a decoder's per-step distribution, dropout off.
// samples[i] holds the ids emitted after <bos> (including <eos> when reached);
// logprobs[i] is Sigma_t log pi over those steps. step_ce[t] is the graph node
// holding per-row cross entropy of the chosen ids, already evaluated.
struct Rollout {
    std::vector<TokenSeq> samples;
    std::vector<double> logprobs;
    std::vector<Value> step_ce;
    std::vector<std::vector<uint8_t>> alive;  // per step: did this row score?
    int steps = 0;
};

Rollout sample_rollout(Graph& g, const Model& model, int decoder, const EncoderState& enc, Rng& rng,
                       int length_cap, bool greedy = false);

// Cosine of the mean-pooled embedding vectors of the non-reserved tokens of
// the two sequences; any zero-norm pool (including no such tokens) gives 0.
double reward_cosine(const Tensor& embed, const TokenSeq& a, const TokenSeq& b);

// REINFORCE surrogate (1/B) Sigma_i (R_i - b) Sigma_t ce_{i,t}, whose gradient
// is the policy gradient of -E[R]. Rewards are constants; b is the batch mean
// reward when use_baseline is set, else 0.
LossOut reinforce_surrogate(Graph& g, const Rollout& rollout, const std::vector<double>& rewards,
                            double baseline);

struct JrlOut {
    Value loss;
    Rollout rollout;
    std::vector<double> rewards;
    double baseline = 0.0;
    int tokens = 0;
};

JrlOut loss_jrl(Graph& g, const Model& model, const Batch& batch, Rng& sample_rng,
                bool use_baseline = true);

}  // namespace bidan
