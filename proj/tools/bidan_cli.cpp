#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bidan/checkpoint.hpp"
#include "bidan/corpus.hpp"
#include "bidan/eval.hpp"
#include "bidan/experiments.hpp"

using namespace bidan;

namespace {

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) throw std::runtime_error(std::string(what) + ": empty entry in list");
        std::size_t pos = 0;
        int v = std::stoi(cur, &pos);
        if (pos != cur.size())
            throw std::runtime_error(std::string(what) + ": bad integer '" + cur + "'");
        out.push_back(v);
        cur.clear();
    };
    for (char ch : text) {
        if (ch == ',')
            flush();
        else if (ch != ' ')
            cur.push_back(ch);
    }
    flush();
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    if (!f) throw std::runtime_error("short write to " + path);
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty())
        std::cout << text;
    else
        write_text(out_path, text);
}

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
};

ExperimentConfig resolve_config(const GlobalOpts& g) {
    ExperimentConfig cfg =
        g.config_path.empty() ? desk_experiment_config() : load_experiment_config(g.config_path);
    if (g.seed_set) cfg.train.seed = g.seed;
    return cfg;
}

Checkpoint checkpoint_of(const RunOutput& out) {
    return make_checkpoint(out.model, out.data.src_vocab, out.data.tgt_vocab, out.data.src_merges,
                           out.data.tgt_merges);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bidan: bi-decoder attention NMT toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config file (section.key = value)");
    app.add_option("--seed", g.seed, "seed override")->each([&g](const std::string&) {
        g.seed_set = true;
    });

    // make-data
    auto* sc_make = app.add_subcommand("make-data", "generate a synthetic parallel corpus");
    std::string md_task = "mapped-reverse", md_src, md_tgt;
    int md_vocab = 64, md_min = 3, md_max = 10, md_pairs = 5000;
    sc_make->add_option("--task", md_task, "copy|reverse|mapped-reverse|sorted");
    sc_make->add_option("--vocab-size", md_vocab, "distinct source words");
    sc_make->add_option("--min-len", md_min, "minimum sentence length");
    sc_make->add_option("--max-len", md_max, "maximum sentence length");
    sc_make->add_option("--pairs", md_pairs, "number of sentence pairs");
    sc_make->add_option("--src", md_src, "source output file")->required();
    sc_make->add_option("--tgt", md_tgt, "target output file")->required();
    sc_make->callback([&] {
        uint64_t seed = g.seed_set ? g.seed : 1;
        ParallelCorpus c = generate_synthetic_task(task_from_name(md_task), md_vocab, md_min,
                                                   md_max, md_pairs, seed);
        save_lines(md_src, c.src);
        save_lines(md_tgt, c.tgt);
        std::printf("wrote %zu pairs to %s / %s\n", c.size(), md_src.c_str(), md_tgt.c_str());
    });

    // learn-bpe
    auto* sc_bpe = app.add_subcommand("learn-bpe", "learn a BPE merge table from a corpus");
    std::string lb_input, lb_output;
    int lb_merges = 50;
    sc_bpe->add_option("--input", lb_input, "corpus, one sentence per line")->required();
    sc_bpe->add_option("--merges", lb_merges, "number of merges to learn");
    sc_bpe->add_option("--output", lb_output, "merge table output file")->required();
    sc_bpe->callback([&] {
        MergeTable mt = learn_bpe(load_lines(lb_input), lb_merges);
        mt.save(lb_output);
        std::printf("learned %zu merges from %s\n", mt.size(), lb_input.c_str());
    });

    // train
    auto* sc_train = app.add_subcommand("train", "run the two-phase training schedule");
    std::string tr_out, tr_log;
    sc_train->add_option("--out", tr_out, "checkpoint output path")->required();
    sc_train->add_option("--log", tr_log, "training log CSV output path");
    sc_train->callback([&] {
        ExperimentConfig cfg = resolve_config(g);
        RunOutput out = run_experiment(cfg);
        save_checkpoint(checkpoint_of(out), tr_out);
        if (!tr_log.empty()) write_text(tr_log, out.result.log_csv);
        std::printf("steps %ld (phase1 %ld, phase2 %ld)%s%s\n", out.result.steps,
                    out.result.phase1_steps, out.result.phase2_steps,
                    out.result.gate_fired ? ", gate fired" : "",
                    out.result.stopped_by_gate ? ", stopped by gate" : "");
        std::printf("dev_bleu %.6f test_bleu %.6f\n", out.dev_bleu, out.test_bleu);
        std::printf("checkpoint written to %s\n", tr_out.c_str());
    });

    // translate
    auto* sc_tr = app.add_subcommand("translate", "decode a source file with a trained model");
    std::string t_ckpt, t_input, t_output;
    int t_beam = 10, t_max_len = -1;
    bool t_length_norm = false;
    sc_tr->add_option("--ckpt", t_ckpt, "checkpoint file")->required();
    sc_tr->add_option("--input", t_input, "source sentences, one per line")->required();
    sc_tr->add_option("--output", t_output, "output file (default: stdout)");
    sc_tr->add_option("--beam", t_beam, "beam size (1 = greedy)");
    sc_tr->add_option("--max-len", t_max_len, "decode length cap (-1: 2*source+5)");
    sc_tr->add_flag("--length-norm", t_length_norm, "rank beams by length-normalized score");
    sc_tr->callback([&] {
        // load everything before creating the output file
        Checkpoint ck = load_checkpoint(t_ckpt);
        Model model = model_from_checkpoint(ck);
        std::vector<std::string> lines = load_lines(t_input);
        DecodeConfig dc;
        dc.beam = t_beam;
        dc.max_len = t_max_len;
        dc.length_norm = t_length_norm;
        std::vector<std::string> out = translate_lines(
            model, ck.src_vocab, ck.src_merges, ck.src_merges.size() > 0, ck.tgt_vocab, lines, dc);
        std::string text;
        for (const auto& line : out) text += line + "\n";
        emit(t_output, text);
    });

    // evaluate
    auto* sc_ev = app.add_subcommand("evaluate", "corpus BLEU of a hypothesis file");
    std::string ev_hyp, ev_ref;
    bool ev_smooth = false;
    sc_ev->add_option("--hyp", ev_hyp, "hypothesis file")->required();
    sc_ev->add_option("--ref", ev_ref, "reference file")->required();
    sc_ev->add_flag("--smooth", ev_smooth, "add-one smoothing for n >= 2");
    sc_ev->callback([&] {
        std::vector<std::string> hyp_lines = load_lines(ev_hyp);
        std::vector<std::string> ref_lines = load_lines(ev_ref);
        if (hyp_lines.size() != ref_lines.size())
            throw std::runtime_error("evaluate: " + ev_hyp + " has " +
                                     std::to_string(hyp_lines.size()) + " lines, " + ev_ref +
                                     " has " + std::to_string(ref_lines.size()));
        std::vector<Sentence> hyps, refs;
        for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
            hyps.push_back(split_ws(hyp_lines[i]));
            refs.push_back(split_ws(ref_lines[i]));
        }
        BleuReport rep = corpus_bleu(hyps, refs, 4, ev_smooth);
        for (std::size_t n = 0; n < rep.precisions.size(); ++n)
            std::printf("p%zu = %.6f (%lld/%lld)\n", n + 1, rep.precisions[n].p,
                        rep.precisions[n].clipped, rep.precisions[n].total);
        std::printf("BP = %.6f\n", rep.bp);
        std::printf("BLEU = %.6f\n", rep.bleu);
    });

    // swap-encoder
    auto* sc_swap = app.add_subcommand("swap-encoder", "route a donor or random encoder into a model");
    std::string sw_target, sw_donor, sw_out;
    bool sw_random = false;
    sc_swap->add_option("--target", sw_target, "target checkpoint")->required();
    auto* donor_opt = sc_swap->add_option("--donor", sw_donor, "donor checkpoint");
    auto* random_flag =
        sc_swap->add_flag("--random", sw_random, "freshly initialized encoder (uses --seed)");
    donor_opt->excludes(random_flag);
    sc_swap->add_option("--out", sw_out, "hybrid checkpoint output path")->required();
    sc_swap->callback([&] {
        Checkpoint target = load_checkpoint(sw_target);
        Checkpoint hybrid;
        if (sw_random) {
            hybrid = swap_encoder_random(target, g.seed_set ? g.seed : 1);
        } else {
            if (sw_donor.empty())
                throw std::runtime_error("swap-encoder: need --donor or --random");
            hybrid = swap_encoder(target, load_checkpoint(sw_donor));
        }
        save_checkpoint(hybrid, sw_out);
        std::printf("hybrid checkpoint written to %s\n", sw_out.c_str());
    });

    // ablate
    auto* sc_ab = app.add_subcommand("ablate", "train the ablation grid and report BLEU per variant");
    std::string ab_out;
    sc_ab->add_option("--out", ab_out, "CSV output file (default: stdout)");
    sc_ab->callback([&] { emit(ab_out, run_ablation(resolve_config(g))); });

    // sweep-lambda
    auto* sc_sw = app.add_subcommand("sweep-lambda", "train once per lambda_a value");
    std::string sl_values = "0,1,2,3,4,5,6", sl_out;
    sc_sw->add_option("--values", sl_values, "comma-separated lambda_a values");
    sc_sw->add_option("--out", sl_out, "CSV output file (default: stdout)");
    sc_sw->callback([&] {
        emit(sl_out, lambda_sweep(resolve_config(g), parse_int_list(sl_values, "sweep-lambda")));
    });

    // report-lengths
    auto* sc_len = app.add_subcommand("report-lengths", "BLEU bucketed by source sentence length");
    std::string rl_ckpt, rl_src, rl_ref, rl_buckets = "0,10,20,30,40,50,60", rl_out;
    int rl_beam = 1;
    sc_len->add_option("--ckpt", rl_ckpt, "checkpoint file")->required();
    sc_len->add_option("--src", rl_src, "source sentences")->required();
    sc_len->add_option("--ref", rl_ref, "reference sentences")->required();
    sc_len->add_option("--buckets", rl_buckets, "comma-separated bucket edges");
    sc_len->add_option("--beam", rl_beam, "beam size (1 = greedy)");
    sc_len->add_option("--out", rl_out, "CSV output file (default: stdout)");
    sc_len->callback([&] {
        Checkpoint ck = load_checkpoint(rl_ckpt);
        Model model = model_from_checkpoint(ck);
        ParallelCorpus corpus = load_parallel(rl_src, rl_ref);
        DecodeConfig dc;
        dc.beam = rl_beam;
        emit(rl_out, length_report(model, ck.src_vocab, ck.src_merges, ck.src_merges.size() > 0,
                                   ck.tgt_vocab, corpus, parse_int_list(rl_buckets, "report-lengths"),
                                   dc));
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
