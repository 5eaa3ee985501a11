#include "bidan/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "bidan/eval.hpp"

namespace bidan {

namespace {

int to_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: " + key + ": expected integer, got '" + value + "'");
    }
}

long to_long(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: " + key + ": expected integer, got '" + value + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: " + key + ": expected unsigned integer, got '" + value +
                                 "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: " + key + ": expected number, got '" + value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::runtime_error("config: " + key + ": expected true/false, got '" + value + "'");
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

ExperimentConfig desk_experiment_config() {
    ExperimentConfig cfg;
    cfg.model.embed_dim = 32;
    cfg.model.hidden_dim = 64;
    cfg.model.num_layers = 2;
    cfg.model.dropout = 0.2;

    cfg.train.mixing = {5, 2, 2};
    cfg.train.lr0 = 1.0;
    cfg.train.halve_start = 2000;
    cfg.train.halve_every = 500;
    cfg.train.clip_norm = 5.0;
    cfg.train.batch_size = 32;
    cfg.train.max_steps_phase1 = 1500;
    cfg.train.max_steps_phase2 = 1500;
    cfg.train.eval_every = 100;
    cfg.train.monitor_window = 3;
    cfg.train.delta1 = 0.01;
    cfg.train.delta2 = 0.001;
    cfg.train.seed = 1;

    cfg.data = DataConfig{};
    cfg.vocab = VocabConfig{};

    cfg.decode.beam = 1;  // batched greedy; raise for paper-style beam 10
    return cfg;
}

ExperimentConfig experiment_config_from(const ConfigFile& file) {
    ExperimentConfig cfg = desk_experiment_config();
    for (const auto& [key, value] : file.values) {
        if (key == "model.embed_dim")
            cfg.model.embed_dim = to_int(key, value);
        else if (key == "model.hidden_dim")
            cfg.model.hidden_dim = to_int(key, value);
        else if (key == "model.layers")
            cfg.model.num_layers = to_int(key, value);
        else if (key == "model.dropout")
            cfg.model.dropout = to_double(key, value);
        else if (key == "model.attention")
            cfg.model.attention = attention_from_name(value);
        else if (key == "model.input_feeding")
            cfg.model.input_feeding = to_bool(key, value);
        else if (key == "schedule.lambda_a")
            cfg.train.mixing.lambda_a = to_int(key, value);
        else if (key == "schedule.lambda_d")
            cfg.train.mixing.lambda_d = to_int(key, value);
        else if (key == "schedule.lambda_r")
            cfg.train.mixing.lambda_r = to_int(key, value);
        else if (key == "schedule.aux_mode") {
            if (value == "additional")
                cfg.train.aux_mode = AuxMode::kAdditional;
            else if (value == "exclusive")
                cfg.train.aux_mode = AuxMode::kExclusive;
            else
                throw std::runtime_error("config: " + key + ": expected additional|exclusive, got '" +
                                         value + "'");
        } else if (key == "schedule.noise_side")
            cfg.train.noise_side = noise_side_from_name(value);
        else if (key == "schedule.rl_baseline")
            cfg.train.rl_baseline = to_bool(key, value);
        else if (key == "train.lr0")
            cfg.train.lr0 = to_double(key, value);
        else if (key == "train.halve_start")
            cfg.train.halve_start = to_long(key, value);
        else if (key == "train.halve_every")
            cfg.train.halve_every = to_long(key, value);
        else if (key == "train.clip_norm")
            cfg.train.clip_norm = to_double(key, value);
        else if (key == "train.batch_size")
            cfg.train.batch_size = to_int(key, value);
        else if (key == "train.max_steps_phase1")
            cfg.train.max_steps_phase1 = to_long(key, value);
        else if (key == "train.max_steps_phase2")
            cfg.train.max_steps_phase2 = to_long(key, value);
        else if (key == "train.eval_every")
            cfg.train.eval_every = to_int(key, value);
        else if (key == "train.monitor_window")
            cfg.train.monitor_window = to_int(key, value);
        else if (key == "train.delta1")
            cfg.train.delta1 = to_double(key, value);
        else if (key == "train.delta2")
            cfg.train.delta2 = to_double(key, value);
        else if (key == "train.seed")
            cfg.train.seed = to_u64(key, value);
        else if (key == "data.task")
            cfg.data.task = task_from_name(value);
        else if (key == "data.vocab_size")
            cfg.data.vocab_size = to_int(key, value);
        else if (key == "data.min_len")
            cfg.data.min_len = to_int(key, value);
        else if (key == "data.max_len")
            cfg.data.max_len = to_int(key, value);
        else if (key == "data.train_pairs")
            cfg.data.train_pairs = to_int(key, value);
        else if (key == "data.dev_pairs")
            cfg.data.dev_pairs = to_int(key, value);
        else if (key == "data.test_pairs")
            cfg.data.test_pairs = to_int(key, value);
        else if (key == "data.seed")
            cfg.data.seed = to_u64(key, value);
        else if (key == "data.train_src")
            cfg.data.train_src = value;
        else if (key == "data.train_tgt")
            cfg.data.train_tgt = value;
        else if (key == "data.dev_src")
            cfg.data.dev_src = value;
        else if (key == "data.dev_tgt")
            cfg.data.dev_tgt = value;
        else if (key == "data.test_src")
            cfg.data.test_src = value;
        else if (key == "data.test_tgt")
            cfg.data.test_tgt = value;
        else if (key == "vocab.bpe")
            cfg.vocab.bpe = to_bool(key, value);
        else if (key == "vocab.merges")
            cfg.vocab.merges = to_int(key, value);
        else if (key == "vocab.min_freq")
            cfg.vocab.min_freq = to_int(key, value);
        else if (key == "decode.beam")
            cfg.decode.beam = to_int(key, value);
        else if (key == "decode.max_len")
            cfg.decode.max_len = to_int(key, value);
        else if (key == "decode.length_norm")
            cfg.decode.length_norm = to_bool(key, value);
        else
            throw std::runtime_error("config: unknown key '" + key + "'");
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return experiment_config_from(load_config(path));
}

TokenSeq encode_line(const Vocab& vocab, const MergeTable& merges, bool bpe,
                     const std::string& line) {
    return bpe ? encode_bpe(vocab, merges, line) : encode_words(vocab, line);
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
    const DataConfig& d = cfg.data;
    PreparedData p;
    int with_paths = int(!d.train_src.empty()) + int(!d.train_tgt.empty()) +
                     int(!d.dev_src.empty()) + int(!d.dev_tgt.empty()) +
                     int(!d.test_src.empty()) + int(!d.test_tgt.empty());
    if (with_paths == 6) {
        p.train_text = load_parallel(d.train_src, d.train_tgt);
        p.dev_text = load_parallel(d.dev_src, d.dev_tgt);
        p.test_text = load_parallel(d.test_src, d.test_tgt);
        if (p.train_text.size() == 0) throw std::runtime_error("prepare_data: empty training corpus");
    } else if (with_paths != 0) {
        throw std::runtime_error(
            "prepare_data: set all six data.*_src/data.*_tgt paths or none of them");
    } else {
        if (d.train_pairs < 1 || d.dev_pairs < 1 || d.test_pairs < 1)
            throw std::invalid_argument("prepare_data: every split needs at least one pair");
        int total = d.train_pairs + d.dev_pairs + d.test_pairs;
        ParallelCorpus all =
            generate_synthetic_task(d.task, d.vocab_size, d.min_len, d.max_len, total, d.seed);

        auto slice = [&all](int begin, int count) {
            ParallelCorpus c;
            c.src.assign(all.src.begin() + begin, all.src.begin() + begin + count);
            c.tgt.assign(all.tgt.begin() + begin, all.tgt.begin() + begin + count);
            return c;
        };
        p.train_text = slice(0, d.train_pairs);
        p.dev_text = slice(d.train_pairs, d.dev_pairs);
        p.test_text = slice(d.train_pairs + d.dev_pairs, d.test_pairs);
    }
    p.bpe = cfg.vocab.bpe;

    if (cfg.vocab.bpe) {
        p.src_merges = learn_bpe(p.train_text.src, cfg.vocab.merges);
        p.tgt_merges = learn_bpe(p.train_text.tgt, cfg.vocab.merges);
        p.src_vocab = build_bpe_vocab(p.train_text.src, p.src_merges, cfg.vocab.min_freq);
        p.tgt_vocab = build_bpe_vocab(p.train_text.tgt, p.tgt_merges, cfg.vocab.min_freq);
    } else {
        p.src_vocab = build_word_vocab(p.train_text.src, cfg.vocab.min_freq);
        p.tgt_vocab = build_word_vocab(p.train_text.tgt, cfg.vocab.min_freq);
    }

    auto encode_corpus = [&](const ParallelCorpus& text) {
        Dataset ds;
        ds.src.reserve(text.size());
        ds.tgt.reserve(text.size());
        for (std::size_t i = 0; i < text.size(); ++i) {
            ds.src.push_back(encode_line(p.src_vocab, p.src_merges, cfg.vocab.bpe, text.src[i]));
            ds.tgt.push_back(encode_line(p.tgt_vocab, p.tgt_merges, cfg.vocab.bpe, text.tgt[i]));
        }
        return ds;
    };
    p.train_ids = encode_corpus(p.train_text);
    p.dev_ids = encode_corpus(p.dev_text);
    p.test_ids = encode_corpus(p.test_text);
    return p;
}

std::vector<std::string> translate_lines(const Model& model, const Vocab& src_vocab,
                                         const MergeTable& src_merges, bool bpe,
                                         const Vocab& tgt_vocab,
                                         const std::vector<std::string>& lines,
                                         const DecodeConfig& dc) {
    if (dc.beam < 1) throw std::invalid_argument("translate: beam must be >= 1");
    std::vector<std::string> out(lines.size());

    // Greedy runs all non-empty lines as one batch; beam decodes per line.
    std::vector<std::size_t> rows;
    std::vector<TokenSeq> srcs;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (split_ws(lines[i]).empty()) continue;  // empty in, empty out
        rows.push_back(i);
        srcs.push_back(encode_line(src_vocab, src_merges, bpe, lines[i]));
    }
    if (dc.beam == 1) {
        std::vector<TokenSeq> hyps = greedy_decode_batch(model, 1, srcs, dc.max_len);
        for (std::size_t j = 0; j < rows.size(); ++j) out[rows[j]] = decode(tgt_vocab, hyps[j]);
    } else {
        for (std::size_t j = 0; j < rows.size(); ++j) {
            std::vector<Hypothesis> hyps =
                beam_search(model, 1, srcs[j], dc.beam, dc.max_len, dc.length_norm);
            out[rows[j]] = decode(tgt_vocab, hyps.front().tokens);
        }
    }
    return out;
}

double corpus_test_bleu(const Model& model, const PreparedData& data, const ParallelCorpus& corpus,
                        const DecodeConfig& dc) {
    std::vector<std::string> hyp_lines = translate_lines(model, data.src_vocab, data.src_merges,
                                                         data.bpe, data.tgt_vocab, corpus.src, dc);
    std::vector<Sentence> hyps, refs;
    hyps.reserve(corpus.size());
    refs.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        hyps.push_back(split_ws(hyp_lines[i]));
        refs.push_back(split_ws(corpus.tgt[i]));
    }
    return corpus_bleu(hyps, refs).bleu;
}

RunOutput run_experiment(const ExperimentConfig& cfg, const StepObserver& observer) {
    PreparedData data = prepare_data(cfg);

    ModelConfig mc = cfg.model;
    mc.src_vocab = data.src_vocab.size();
    mc.tgt_vocab = data.tgt_vocab.size();
    Model model(mc);
    Rng root(cfg.train.seed);
    Rng init = root.fork(0);  // train() forks tags 1..4 from its own root
    model.init_parameters(init);

    TrainResult result = train(model, data.train_ids, data.dev_ids, cfg.train, observer);

    RunOutput out{std::move(model), std::move(data), std::move(result)};
    out.dev_bleu = corpus_test_bleu(out.model, out.data, out.data.dev_text, cfg.decode);
    out.test_bleu = corpus_test_bleu(out.model, out.data, out.data.test_text, cfg.decode);
    return out;
}

Checkpoint swap_encoder(const Checkpoint& target, const Checkpoint& donor) {
    std::vector<std::string> target_enc = target.params.names_with_prefix("enc/");
    std::set<std::string> donor_enc;
    for (const auto& n : donor.params.names_with_prefix("enc/")) donor_enc.insert(n);

    std::string missing, misshapen, unexpected;
    for (const auto& name : target_enc) {
        if (!donor_enc.count(name)) {
            missing += " " + name;
            continue;
        }
        donor_enc.erase(name);
        if (donor.params.at(name).shape != target.params.at(name).shape) misshapen += " " + name;
    }
    for (const auto& name : donor_enc) unexpected += " " + name;
    if (!missing.empty() || !misshapen.empty() || !unexpected.empty()) {
        std::string msg = "swap-encoder: incompatible encoder parameters;";
        if (!missing.empty()) msg += " missing from donor:" + missing + ";";
        if (!misshapen.empty()) msg += " shape mismatch:" + misshapen + ";";
        if (!unexpected.empty()) msg += " extra in donor:" + unexpected + ";";
        throw std::invalid_argument(msg);
    }
    if (target.src_vocab.to_text() != donor.src_vocab.to_text())
        throw std::invalid_argument("swap-encoder: source vocabularies differ");
    if (target.src_merges.to_text() != donor.src_merges.to_text())
        throw std::invalid_argument("swap-encoder: source merge tables differ");

    Checkpoint out = target;
    for (const auto& name : target_enc) out.params.at(name) = donor.params.at(name);
    return out;
}

Checkpoint swap_encoder_random(const Checkpoint& target, uint64_t seed) {
    Model fresh(target.config);
    Rng rng(seed);
    fresh.init_parameters(rng);
    Checkpoint out = target;
    for (const auto& name : target.params.names_with_prefix("enc/"))
        out.params.at(name) = fresh.params.at(name);
    return out;
}

std::string run_ablation(const ExperimentConfig& base) {
    const MixingSchedule& m = base.train.mixing;
    struct Variant {
        const char* name;
        MixingSchedule mixing;
        bool baseline;
        bool all_converge;
    };
    const MixingSchedule none{0, 0, 0};
    const MixingSchedule autoenc{1, 0, 0};
    const MixingSchedule denois{m.lambda_a, m.lambda_d, 0};
    const MixingSchedule rl{m.lambda_a, 0, m.lambda_r};
    const std::vector<Variant> variants = {
        {"Baseline", none, true, false},
        {"Baseline+AD", autoenc, false, false},
        {"Baseline+AD(Denoising)", denois, false, false},
        {"Baseline+AD(RL)", rl, false, false},
        {"BiDAN(all-converge)", m, false, true},
        {"BiDAN", m, false, false},
    };

    std::string csv = "variant,lambda_a,lambda_d,lambda_r,steps,dev_bleu,test_bleu\n";
    for (const Variant& v : variants) {
        ExperimentConfig cfg = base;
        cfg.train.mixing = v.mixing;
        if (v.baseline) {
            // same total step budget, all of it in phase 2
            cfg.train.max_steps_phase2 += cfg.train.max_steps_phase1;
            cfg.train.max_steps_phase1 = 0;
        }
        if (v.all_converge) cfg.train.delta1 = cfg.train.delta2;
        RunOutput out = run_experiment(cfg);
        csv += std::string(v.name) + "," + std::to_string(v.mixing.lambda_a) + "," +
               std::to_string(v.mixing.lambda_d) + "," + std::to_string(v.mixing.lambda_r) + "," +
               std::to_string(out.result.steps) + "," + fmt6(out.dev_bleu) + "," +
               fmt6(out.test_bleu) + "\n";
    }
    return csv;
}

std::string lambda_sweep(const ExperimentConfig& base, std::vector<int> lambda_a_values) {
    if (lambda_a_values.empty()) throw std::invalid_argument("lambda_sweep: no values");
    for (int v : lambda_a_values)
        if (v < 0) throw std::invalid_argument("lambda_sweep: lambda_a must be >= 0");
    std::sort(lambda_a_values.begin(), lambda_a_values.end());
    lambda_a_values.erase(std::unique(lambda_a_values.begin(), lambda_a_values.end()),
                          lambda_a_values.end());

    std::string csv = "lambda_a,test_bleu\n";
    for (int v : lambda_a_values) {
        ExperimentConfig cfg = base;
        cfg.train.mixing.lambda_a = v;
        RunOutput out = run_experiment(cfg);
        csv += std::to_string(v) + "," + fmt6(out.test_bleu) + "\n";
    }
    return csv;
}

std::string length_report(const Model& model, const Vocab& src_vocab, const MergeTable& src_merges,
                          bool bpe, const Vocab& tgt_vocab, const ParallelCorpus& corpus,
                          const std::vector<int>& bucket_edges, const DecodeConfig& dc) {
    std::vector<std::string> hyp_lines =
        translate_lines(model, src_vocab, src_merges, bpe, tgt_vocab, corpus.src, dc);
    std::vector<Sentence> hyps, refs, srcs;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        hyps.push_back(split_ws(hyp_lines[i]));
        refs.push_back(split_ws(corpus.tgt[i]));
        srcs.push_back(split_ws(corpus.src[i]));
    }
    return bucket_report_csv(length_bucket_report(hyps, refs, srcs, bucket_edges));
}

std::string length_report(const Model& model, const PreparedData& data,
                          const ParallelCorpus& corpus, const std::vector<int>& bucket_edges,
                          const DecodeConfig& dc) {
    return length_report(model, data.src_vocab, data.src_merges, data.bpe, data.tgt_vocab, corpus,
                         bucket_edges, dc);
}

}  // namespace bidan
