#pragma once

#include <map>
#include <string>
#include <vector>

#include "bidan/graph.hpp"
#include "bidan/tensor.hpp"

namespace bidan {

enum class Attention { kAdditive, kBilinear, kConcat };

const char* attention_name(Attention a);
Attention attention_from_name(const std::string& name);

struct ModelConfig {
    int src_vocab = 0;
    int tgt_vocab = 0;
    int embed_dim = 32;
    int hidden_dim = 64;  // per direction
    int num_layers = 2;
    Attention attention = Attention::kAdditive;
    bool input_feeding = true;
    double dropout = 0.2;
};

// Named float32 parameter tensors. The name prefix is the partition:
// "enc/" is the shared encoder, "dec1/" the target decoder, "dec2/" the
// source-reconstruction decoder. Decoder input embeddings and output
// projections live inside their decoder's partition, so swapping encoders
// moves exactly the source-side machinery.
struct ParamStore {
    std::map<std::string, Tensor> params;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params.count(name) != 0; }
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::size_t total_size() const;
};

inline bool in_partition(const std::string& name, const std::string& prefix) {
    return name.compare(0, prefix.size(), prefix) == 0;
}

class Model {
public:
    explicit Model(ModelConfig cfg);

    // every parameter name with its shape, in sorted-name order
    static std::vector<std::pair<std::string, std::vector<int>>> parameter_spec(const ModelConfig& cfg);

    // uniform[-0.1, 0.1] fills drawn in sorted-name order, then LSTM forget
    // gate biases overwritten with 1.0
    void init_parameters(Rng& rng);

    int vocab_of_decoder(int decoder) const;  // 1 -> tgt, 2 -> src

    ModelConfig config;
    ParamStore params;
};

// Flat batched layout: row b*m + s of a [B*m, D] tensor holds batch item b,
// position s. Masks use the same indexing, 1 = real token.
struct EncoderState {
    Value hbar;    // [B*m, 2H] top-layer bidirectional states
    Value init_h;  // [B, H] top-layer backward state at position 0
    std::vector<uint8_t> mask;
    int batch = 0;
    int len = 0;
};

// optional per-position probes for tests: fw[l][s] and bw[l][s] are [B, H]
struct EncoderProbe {
    std::vector<std::vector<Value>> fw, bw;
};

struct DecoderState {
    std::vector<Value> c, h;  // per layer, [B, H]
    Value feed;               // [B, H] previous attentional vector (input feeding)
    Value att_pre;            // encoder-side attention precomputation
};

struct StepOut {
    DecoderState state;
    Value logits;  // [B, V]
    Value attn;    // [B, m]
    Value a;       // [B, H] attentional hidden tanh(Wa [c_t; h_t] + ba)
};

// Dropout is applied to layer inputs and to a_t before the output projection
// (never along the recurrence). Each call draws its mask seed from drop_rng;
// pass train=false (or rate 0) to disable, in which case drop_rng may be null.
EncoderState encode(Graph& g, const Model& model, const std::vector<int>& src_ids,
                    const std::vector<uint8_t>& src_mask, int batch, int len, bool train,
                    Rng* drop_rng, EncoderProbe* probe = nullptr);

DecoderState decoder_init(Graph& g, const Model& model, int decoder, const EncoderState& enc);

StepOut decoder_step(Graph& g, const Model& model, int decoder, const EncoderState& enc,
                     const DecoderState& st, const std::vector<int>& prev_ids, bool train,
                     Rng* drop_rng);

// Teacher-forced unroll over frames [<bos>, w1, ..., wT, <eos>] padded to len:
// step t feeds frame t and scores frame t+1. loss is the mean cross entropy
// over real (unmasked) prediction slots.
struct Unroll {
    Value loss;
    std::vector<Value> step_logits;  // len-1 entries, each [B, V]
    int tokens = 0;
};

Unroll unroll_teacher_forced(Graph& g, const Model& model, int decoder, const EncoderState& enc,
                             const std::vector<int>& tgt_ids, const std::vector<uint8_t>& tgt_mask,
                             int batch, int len, bool train, Rng* drop_rng);

}  // namespace bidan
