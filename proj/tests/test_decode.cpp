#include "bidan/decode.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "bidan/objectives.hpp"
#include "doctest.h"

using namespace bidan;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.src_vocab = 7;
    cfg.tgt_vocab = 7;
    cfg.embed_dim = 4;
    cfg.hidden_dim = 4;
    cfg.num_layers = 1;
    cfg.dropout = 0.0;
    return cfg;
}

Model make_model(const ModelConfig& cfg, uint64_t seed) {
    Model model(cfg);
    Rng rng(seed);
    model.init_parameters(rng);
    return model;
}

TokenSeq frame(std::initializer_list<int> body) {
    TokenSeq s{Vocab::kBos};
    s.insert(s.end(), body.begin(), body.end());
    s.push_back(Vocab::kEos);
    return s;
}

std::vector<double> row_log_probs(const std::vector<double>& logits, int row, int vocab) {
    const double* x = logits.data() + static_cast<std::size_t>(row) * vocab;
    double mx = *std::max_element(x, x + vocab);
    double z = 0.0;
    for (int v = 0; v < vocab; ++v) z += std::exp(x[v] - mx);
    std::vector<double> out(vocab);
    for (int v = 0; v < vocab; ++v) out[v] = x[v] - mx - std::log(z);
    return out;
}

struct Enumerated {
    TokenSeq tokens;
    double logprob = 0.0;
    bool finished = false;
};

void dfs(Graph& g, const Model& model, int decoder, const EncoderState& enc,
         const DecoderState& st, int prev_tok, TokenSeq& prefix, double lp_sum, int cap,
         std::vector<Enumerated>& finished, std::vector<Enumerated>& leaves) {
    StepOut so = decoder_step(g, model, decoder, enc, st, {prev_tok}, false, nullptr);
    g.run_to(so.logits);
    const int vocab = model.vocab_of_decoder(decoder);
    std::vector<double> lp = row_log_probs(g.data(so.logits), 0, vocab);
    const int depth = static_cast<int>(prefix.size()) - 1;  // generated so far
    for (int v = 0; v < vocab; ++v) {
        if (v == Vocab::kPad || v == Vocab::kBos) continue;
        prefix.push_back(v);
        double nl = lp_sum + lp[v];
        if (v == Vocab::kEos) {
            finished.push_back({prefix, nl, true});
        } else if (depth + 1 == cap) {
            leaves.push_back({prefix, nl, false});
        } else {
            dfs(g, model, decoder, enc, so.state, v, prefix, nl, cap, finished, leaves);
        }
        prefix.pop_back();
    }
}

// exhaustive search mirroring beam_search's pool-then-pad ranking
std::vector<Enumerated> enumerate_ranked(const Model& model, int decoder, const TokenSeq& src,
                                         int beam_size, int cap, bool length_norm) {
    Graph g;
    std::vector<uint8_t> mask(src.size(), 1);
    EncoderState enc = encode(g, model, src, mask, 1, static_cast<int>(src.size()), false, nullptr);
    DecoderState st = decoder_init(g, model, decoder, enc);
    std::vector<Enumerated> finished, leaves;
    TokenSeq prefix{Vocab::kBos};
    dfs(g, model, decoder, enc, st, Vocab::kBos, prefix, 0.0, cap, finished, leaves);

    auto score_of = [&](const Enumerated& e) {
        return length_norm ? e.logprob / (static_cast<int>(e.tokens.size()) - 1) : e.logprob;
    };
    auto by_score = [&](const Enumerated& a, const Enumerated& b) {
        return score_of(a) > score_of(b);
    };
    std::stable_sort(finished.begin(), finished.end(), by_score);
    if (static_cast<int>(finished.size()) >= beam_size) {
        finished.resize(beam_size);
        return finished;
    }
    std::stable_sort(leaves.begin(), leaves.end(), by_score);
    for (std::size_t i = 0; i < leaves.size() && static_cast<int>(finished.size()) < beam_size; ++i)
        finished.push_back(leaves[i]);
    std::stable_sort(finished.begin(), finished.end(), by_score);
    return finished;
}

void check_frames(const Hypothesis& h) {
    REQUIRE(h.tokens.size() >= 2);
    CHECK(h.tokens.front() == Vocab::kBos);
    if (h.finished) CHECK(h.tokens.back() == Vocab::kEos);
    for (std::size_t i = 1; i < h.tokens.size(); ++i) {
        CHECK(h.tokens[i] != Vocab::kPad);
        CHECK(h.tokens[i] != Vocab::kBos);
        if (i + 1 < h.tokens.size()) CHECK(h.tokens[i] != Vocab::kEos);
    }
}

}  // namespace

TEST_CASE("beam size 1 equals greedy") {
    Model model = make_model(tiny_config(), 5);
    std::vector<TokenSeq> srcs = {frame({4, 5, 6}), frame({6, 6}), frame({4}),
                                  frame({5, 4, 6, 4, 5})};
    for (const TokenSeq& src : srcs) {
        TokenSeq greedy = greedy_decode(model, 1, src);
        std::vector<Hypothesis> beam = beam_search(model, 1, src, 1);
        REQUIRE(beam.size() == 1);
        CHECK(beam[0].tokens == greedy);
    }
    std::vector<TokenSeq> batched = greedy_decode_batch(model, 1, srcs);
    REQUIRE(batched.size() == srcs.size());
    for (std::size_t i = 0; i < srcs.size(); ++i)
        CHECK(batched[i] == greedy_decode(model, 1, srcs[i]));
}

TEST_CASE("wide beam matches exhaustive enumeration") {
    Model model = make_model(tiny_config(), 11);
    TokenSeq src = frame({4, 6, 5});
    const int cap = 4;

    // 5 expandable tokens per step, 4 of them non-terminal: 256 leaves at the
    // cap plus 85 finished sequences, so beam 400 never prunes
    std::vector<Hypothesis> beam = beam_search(model, 1, src, 400, cap);
    std::vector<Enumerated> oracle = enumerate_ranked(model, 1, src, 400, cap, false);
    REQUIRE(beam.size() == 341);
    REQUIRE(oracle.size() == 341);
    for (std::size_t i = 0; i < beam.size(); ++i) {
        CHECK(beam[i].tokens == oracle[i].tokens);
        CHECK(beam[i].finished == oracle[i].finished);
        CHECK(beam[i].logprob == doctest::Approx(oracle[i].logprob).epsilon(1e-9));
    }

    // beam 10 already finds the enumeration argmax on this instance
    std::vector<Hypothesis> b10 = beam_search(model, 1, src, 10, cap);
    CHECK(b10[0].tokens == oracle[0].tokens);
    CHECK(b10[0].logprob == doctest::Approx(oracle[0].logprob).epsilon(1e-9));

    // length-normalized ranking against the same oracle
    std::vector<Hypothesis> bn = beam_search(model, 1, src, 400, cap, true);
    std::vector<Enumerated> on = enumerate_ranked(model, 1, src, 400, cap, true);
    REQUIRE(bn.size() == on.size());
    for (std::size_t i = 0; i < bn.size(); ++i) CHECK(bn[i].tokens == on[i].tokens);
}

TEST_CASE("beam width monotonicity and ordering invariants") {
    Model model = make_model(tiny_config(), 11);
    TokenSeq src = frame({4, 6, 5});
    double best_prev = -1e300;
    for (int b : {1, 2, 3, 5, 8, 12, 25, 50, 400}) {
        std::vector<Hypothesis> out = beam_search(model, 1, src, b, 4);
        REQUIRE(!out.empty());
        CHECK(static_cast<int>(out.size()) <= b);
        CHECK(out[0].score >= best_prev);
        best_prev = out[0].score;
        for (std::size_t i = 0; i < out.size(); ++i) {
            check_frames(out[i]);
            if (i > 0) CHECK(out[i - 1].score >= out[i].score);
            CHECK(out[i].logprob <= 0.0);
            CHECK(out[i].state_row == -1);
        }
    }
}

TEST_CASE("beam scores agree with teacher-forced rescoring") {
    Model model = make_model(tiny_config(), 7);
    TokenSeq src = frame({5, 5, 4, 6});
    std::vector<Hypothesis> out = beam_search(model, 1, src, 10);
    int checked = 0;
    for (const Hypothesis& h : out) {
        if (!h.finished) continue;
        Graph g;
        Batch b = make_batch({src}, {h.tokens});
        LossOut lo = loss_j1(g, model, b, false, nullptr);
        g.forward();
        double relogprob = -g.scalar(lo.loss) * lo.tokens;
        CHECK(h.logprob == doctest::Approx(relogprob).epsilon(1e-6));
        if (++checked == 3) break;
    }
    CHECK(checked > 0);
}

TEST_CASE("eos-heavy model finishes immediately") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);  // all-zero parameters
    model.params.at("dec1/out/bp").data[Vocab::kEos] = 5.0f;
    std::vector<Hypothesis> out = beam_search(model, 1, frame({4, 5}), 3);
    REQUIRE(!out.empty());
    CHECK(out[0].finished);
    CHECK(out[0].tokens == TokenSeq{Vocab::kBos, Vocab::kEos});
    CHECK(greedy_decode(model, 1, frame({4, 5})) == TokenSeq{Vocab::kBos, Vocab::kEos});
}

TEST_CASE("length caps") {
    Model model = make_model(tiny_config(), 3);
    TokenSeq src = frame({4, 5, 6});

    // default cap: 2 * 3 + 5 = 11 generated tokens
    for (const Hypothesis& h : beam_search(model, 1, src, 4))
        CHECK(h.tokens.size() <= 13);
    CHECK(greedy_decode(model, 1, src).size() <= 13);

    for (const Hypothesis& h : beam_search(model, 1, src, 4, 2)) {
        CHECK(h.tokens.size() <= 4);
        if (!h.finished) CHECK(h.tokens.size() == 3);  // bos + 2 generated, no eos
    }
}

TEST_CASE("input validation") {
    Model model = make_model(tiny_config(), 3);
    TokenSeq ok = frame({4});
    TokenSeq empty_frame{Vocab::kBos, Vocab::kEos};
    TokenSeq unframed{4, 5};
    TokenSeq pad_inside = frame({4, Vocab::kPad, 5});
    CHECK_THROWS_AS(beam_search(model, 1, empty_frame, 2), std::invalid_argument);
    CHECK_THROWS_AS(beam_search(model, 1, unframed, 2), std::invalid_argument);
    CHECK_THROWS_AS(beam_search(model, 1, pad_inside, 2), std::invalid_argument);
    CHECK_THROWS_AS(beam_search(model, 1, ok, 0), std::invalid_argument);
    CHECK_THROWS_AS(beam_search(model, 1, ok, 2, 0), std::invalid_argument);
    CHECK_THROWS_AS(greedy_decode(model, 1, empty_frame), std::invalid_argument);
    CHECK(greedy_decode_batch(model, 1, {}).empty());
}

TEST_CASE("converged copy model decodes its input back") {
    ModelConfig cfg;
    cfg.src_vocab = 10;
    cfg.tgt_vocab = 10;
    cfg.embed_dim = 16;
    cfg.hidden_dim = 32;
    cfg.num_layers = 1;
    cfg.dropout = 0.0;
    Model model(cfg);
    Rng init(21);
    model.init_parameters(init);

    Rng gen(22);
    std::vector<TokenSeq> seqs;
    for (int i = 0; i < 50; ++i) {
        TokenSeq s{Vocab::kBos};
        int len = 3 + static_cast<int>(gen.below(6));
        for (int j = 0; j < len; ++j) s.push_back(4 + static_cast<int>(gen.below(6)));
        s.push_back(Vocab::kEos);
        seqs.push_back(s);
    }

    auto corpus_loss = [&]() {
        Graph g;
        Batch b = make_batch(seqs, seqs);
        LossOut lo = loss_j1(g, model, b, false, nullptr);
        g.forward();
        return g.scalar(lo.loss);
    };

    Rng shuffle(23);
    bool converged = false;
    for (int step = 0; step < 3000 && !converged; ++step) {
        std::vector<TokenSeq> mb;
        for (int i = 0; i < 10; ++i) mb.push_back(seqs[shuffle.below(seqs.size())]);
        Graph g;
        Batch b = make_batch(mb, mb);
        LossOut lo = loss_j1(g, model, b, true, nullptr);
        g.forward();
        g.backward(lo.loss);
        GradMap grads = g.param_grads();
        double norm = grads.global_norm();
        double scale = norm > 5.0 ? 5.0 / norm : 1.0;
        for (auto& [name, e] : grads.entries) {
            Tensor& p = model.params.at(name);
            for (std::size_t i = 0; i < p.data.size(); ++i)
                p.data[i] -= static_cast<float>(1.0 * scale * e.g[i]);
        }
        if (step % 25 == 24 && corpus_loss() < 0.05) converged = true;
    }
    REQUIRE(converged);

    std::vector<TokenSeq> heads(seqs.begin(), seqs.begin() + 10);
    std::vector<TokenSeq> outs = greedy_decode_batch(model, 1, heads);
    for (std::size_t i = 0; i < heads.size(); ++i) CHECK(outs[i] == heads[i]);
    for (int i = 0; i < 5; ++i) {
        std::vector<Hypothesis> beam = beam_search(model, 1, heads[i], 5);
        REQUIRE(!beam.empty());
        CHECK(beam[0].tokens == heads[i]);
    }
}
