#pragma once

#include <string>
#include <vector>

#include "bidan/checkpoint.hpp"
#include "bidan/corpus.hpp"
#include "bidan/decode.hpp"
#include "bidan/scheduler.hpp"

namespace bidan {

struct DataConfig {
    TaskKind task = TaskKind::kMappedReverse;
    int vocab_size = 64;
    int min_len = 3;
    int max_len = 10;
    int train_pairs = 5000;
    int dev_pairs = 500;
    int test_pairs = 500;
    uint64_t seed = 1;
    // set all six to train on external corpora instead of the synthetic task
    std::string train_src, train_tgt, dev_src, dev_tgt, test_src, test_tgt;
};

struct VocabConfig {
    bool bpe = false;  // word-level by default at desk scale
    int merges = 50;
    int min_freq = 1;
};

struct DecodeConfig {
    int beam = 10;
    int max_len = -1;
    bool length_norm = false;
};

struct ExperimentConfig {
    ModelConfig model;  // vocab sizes are filled in from the built vocabularies
    TrainConfig train;
    DataConfig data;
    VocabConfig vocab;
    DecodeConfig decode;
};

// Desk-scale defaults: the whole pipeline on one core in minutes.
ExperimentConfig desk_experiment_config();

// Applies `section.key = value` entries onto the desk defaults. Unknown keys
// are hard errors.
ExperimentConfig experiment_config_from(const ConfigFile& file);
ExperimentConfig load_experiment_config(const std::string& path);

struct PreparedData {
    ParallelCorpus train_text, dev_text, test_text;
    Vocab src_vocab, tgt_vocab;
    MergeTable src_merges, tgt_merges;
    bool bpe = false;
    Dataset train_ids, dev_ids, test_ids;
};

// Generates the synthetic splits from one sentence stream and builds the
// vocabularies from the training split.
PreparedData prepare_data(const ExperimentConfig& cfg);

TokenSeq encode_line(const Vocab& vocab, const MergeTable& merges, bool bpe,
                     const std::string& line);

std::vector<std::string> translate_lines(const Model& model, const Vocab& src_vocab,
                                         const MergeTable& src_merges, bool bpe,
                                         const Vocab& tgt_vocab,
                                         const std::vector<std::string>& lines,
                                         const DecodeConfig& dc);

// Beam-decodes the corpus sources and scores text-level BLEU against the
// target side.
double corpus_test_bleu(const Model& model, const PreparedData& data, const ParallelCorpus& corpus,
                        const DecodeConfig& dc);

struct RunOutput {
    Model model;
    PreparedData data;
    TrainResult result;
    double dev_bleu = 0.0;   // text-level, after training
    double test_bleu = 0.0;
};

RunOutput run_experiment(const ExperimentConfig& cfg, const StepObserver& observer = nullptr);

// θe from the donor, θ1/θ2 (and both vocabularies) from the target. The two
// checkpoints must agree on every enc/ tensor shape and on the source-side
// vocabulary; mismatches are listed in the error.
Checkpoint swap_encoder(const Checkpoint& target, const Checkpoint& donor);

// Same routing with a freshly initialized encoder (the "Random Encoder" row).
Checkpoint swap_encoder_random(const Checkpoint& target, uint64_t seed);

// Trains {Baseline, Baseline+AD, Baseline+AD(Denoising), Baseline+AD(RL),
// BiDAN(all-converge), BiDAN} on one shared dataset and reports
// variant,lambda_a,lambda_d,lambda_r,steps,dev_bleu,test_bleu rows. The
// baseline spends the whole step budget in phase 2; all-converge tightens the
// phase-1 gate to delta2.
std::string run_ablation(const ExperimentConfig& base);

// One full training per lambda_a value (lambda_d, lambda_r from the base
// config); CSV lambda_a,test_bleu sorted by lambda_a.
std::string lambda_sweep(const ExperimentConfig& base, std::vector<int> lambda_a_values);

// Decodes the corpus and reports per-source-length-bucket BLEU.
std::string length_report(const Model& model, const Vocab& src_vocab, const MergeTable& src_merges,
                          bool bpe, const Vocab& tgt_vocab, const ParallelCorpus& corpus,
                          const std::vector<int>& bucket_edges, const DecodeConfig& dc);
std::string length_report(const Model& model, const PreparedData& data,
                          const ParallelCorpus& corpus, const std::vector<int>& bucket_edges,
                          const DecodeConfig& dc);

}  // namespace bidan
