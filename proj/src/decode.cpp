#include "bidan/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bidan {

namespace {

void check_src(const TokenSeq& src) {
    if (src.size() < 3 || src.front() != Vocab::kBos || src.back() != Vocab::kEos)
        throw std::invalid_argument("decode: source must be <bos> tokens <eos> with at least one token");
    for (std::size_t i = 1; i + 1 < src.size(); ++i)
        if (src[i] == Vocab::kPad || src[i] == Vocab::kBos || src[i] == Vocab::kEos)
            throw std::invalid_argument("decode: reserved id inside source frame");
}

int cap_for(const TokenSeq& src, int max_len) {
    if (max_len == -1) return 2 * (static_cast<int>(src.size()) - 2) + 5;
    if (max_len < 1) throw std::invalid_argument("decode: max_len must be >= 1");
    return max_len;
}

// log softmax of one row of a [rows, vocab] buffer
std::vector<double> log_probs_row(const std::vector<double>& logits, int row, int vocab) {
    const double* x = logits.data() + static_cast<std::size_t>(row) * vocab;
    double mx = x[0];
    for (int v = 1; v < vocab; ++v) mx = std::max(mx, x[v]);
    double z = 0.0;
    for (int v = 0; v < vocab; ++v) z += std::exp(x[v] - mx);
    double lz = mx + std::log(z);
    std::vector<double> out(vocab);
    for (int v = 0; v < vocab; ++v) out[v] = x[v] - lz;
    return out;
}

std::vector<int> tile_positions(int k, int m) {
    std::vector<int> idx(static_cast<std::size_t>(k) * m);
    for (int b = 0; b < k; ++b)
        for (int s = 0; s < m; ++s) idx[static_cast<std::size_t>(b) * m + s] = s;
    return idx;
}

struct Candidate {
    double score;
    double logprob;
    int hyp;
    int token;
};

}  // namespace

std::vector<Hypothesis> beam_search(const Model& model, int decoder, const TokenSeq& src,
                                    int beam_size, int max_len, bool length_norm) {
    check_src(src);
    if (beam_size < 1) throw std::invalid_argument("beam_search: beam_size must be >= 1");
    const int cap = cap_for(src, max_len);
    const int m = static_cast<int>(src.size());
    const int vocab = model.vocab_of_decoder(decoder);

    Graph g;
    std::vector<uint8_t> src_mask(src.size(), 1);
    EncoderState enc1 = encode(g, model, src, src_mask, 1, m, false, nullptr);
    DecoderState st1 = decoder_init(g, model, decoder, enc1);

    std::vector<Hypothesis> live(1);
    live[0].tokens = {Vocab::kBos};
    live[0].state_row = 0;
    std::vector<Hypothesis> pool;

    DecoderState cur = st1;
    for (int t = 0; t < cap && !live.empty(); ++t) {
        const int k = static_cast<int>(live.size());
        EncoderState ek = enc1;
        if (k == 1) {
            cur.att_pre = st1.att_pre;
        } else {
            std::vector<int> idx = tile_positions(k, m);
            ek.hbar = g.take_rows(enc1.hbar, idx);
            ek.mask.assign(static_cast<std::size_t>(k) * m, 1);
            ek.batch = k;
            cur.att_pre = g.take_rows(st1.att_pre, idx);
        }
        std::vector<int> prev(k);
        for (int i = 0; i < k; ++i) prev[i] = live[i].tokens.back();
        StepOut so = decoder_step(g, model, decoder, ek, cur, prev, false, nullptr);
        g.run_to(so.logits);
        const std::vector<double>& logits = g.data(so.logits);

        std::vector<Candidate> cands;
        cands.reserve(static_cast<std::size_t>(k) * vocab);
        for (int i = 0; i < k; ++i) {
            std::vector<double> lp = log_probs_row(logits, i, vocab);
            for (int v = 0; v < vocab; ++v) {
                if (v == Vocab::kPad || v == Vocab::kBos) continue;
                double logprob = live[i].logprob + lp[v];
                double score = length_norm ? logprob / (t + 1) : logprob;
                cands.push_back({score, logprob, i, v});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.hyp < b.hyp;
        });
        if (static_cast<int>(cands.size()) > beam_size) cands.resize(beam_size);

        std::vector<Hypothesis> next;
        std::vector<int> parents;
        for (const Candidate& c : cands) {
            Hypothesis h = live[c.hyp];
            h.tokens.push_back(c.token);
            h.logprob = c.logprob;
            h.score = c.score;
            if (c.token == Vocab::kEos) {
                h.finished = true;
                h.state_row = -1;
                pool.push_back(h);
            } else {
                h.state_row = static_cast<int>(next.size());
                next.push_back(h);
                parents.push_back(c.hyp);
            }
        }
        if (!next.empty()) {
            DecoderState gathered = so.state;
            for (std::size_t l = 0; l < gathered.c.size(); ++l) {
                gathered.c[l] = g.take_rows(so.state.c[l], parents);
                gathered.h[l] = g.take_rows(so.state.h[l], parents);
            }
            gathered.feed = g.take_rows(so.state.feed, parents);
            cur = gathered;
        }
        live = std::move(next);
    }

    std::vector<Hypothesis> out = std::move(pool);
    std::stable_sort(out.begin(), out.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    if (static_cast<int>(out.size()) > beam_size) {
        out.resize(beam_size);
    } else if (static_cast<int>(out.size()) < beam_size && !live.empty()) {
        std::stable_sort(live.begin(), live.end(),
                         [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
        for (std::size_t i = 0; i < live.size() && static_cast<int>(out.size()) < beam_size; ++i)
            out.push_back(live[i]);
        std::stable_sort(out.begin(), out.end(),
                         [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    }
    for (Hypothesis& h : out) h.state_row = -1;
    return out;
}

std::vector<TokenSeq> greedy_decode_batch(const Model& model, int decoder,
                                          const std::vector<TokenSeq>& srcs, int max_len) {
    if (srcs.empty()) return {};
    const int n = static_cast<int>(srcs.size());
    int m = 0;
    std::vector<int> caps(n);
    int global_cap = 0;
    for (int i = 0; i < n; ++i) {
        check_src(srcs[i]);
        caps[i] = cap_for(srcs[i], max_len);
        global_cap = std::max(global_cap, caps[i]);
        m = std::max(m, static_cast<int>(srcs[i].size()));
    }
    std::vector<int> ids(static_cast<std::size_t>(n) * m, Vocab::kPad);
    std::vector<uint8_t> mask(static_cast<std::size_t>(n) * m, 0);
    for (int i = 0; i < n; ++i)
        for (std::size_t s = 0; s < srcs[i].size(); ++s) {
            ids[static_cast<std::size_t>(i) * m + s] = srcs[i][s];
            mask[static_cast<std::size_t>(i) * m + s] = 1;
        }

    Graph g;
    EncoderState enc = encode(g, model, ids, mask, n, m, false, nullptr);
    DecoderState st = decoder_init(g, model, decoder, enc);
    const int vocab = model.vocab_of_decoder(decoder);

    std::vector<TokenSeq> out(n, TokenSeq{Vocab::kBos});
    std::vector<char> alive(n, 1);
    std::vector<int> prev(n, Vocab::kBos);
    for (int t = 0; t < global_cap; ++t) {
        if (std::none_of(alive.begin(), alive.end(), [](char a) { return a != 0; })) break;
        StepOut so = decoder_step(g, model, decoder, enc, st, prev, false, nullptr);
        g.run_to(so.logits);
        const std::vector<double>& logits = g.data(so.logits);
        for (int i = 0; i < n; ++i) {
            if (!alive[i]) {
                prev[i] = Vocab::kPad;
                continue;
            }
            const double* row = logits.data() + static_cast<std::size_t>(i) * vocab;
            int best = -1;
            for (int v = 0; v < vocab; ++v) {
                if (v == Vocab::kPad || v == Vocab::kBos) continue;
                if (best == -1 || row[v] > row[best]) best = v;
            }
            out[i].push_back(best);
            prev[i] = best;
            if (best == Vocab::kEos || static_cast<int>(out[i].size()) - 1 == caps[i]) {
                alive[i] = 0;
                prev[i] = Vocab::kPad;
            }
        }
        st = so.state;
    }
    return out;
}

TokenSeq greedy_decode(const Model& model, int decoder, const TokenSeq& src, int max_len) {
    return greedy_decode_batch(model, decoder, {src}, max_len)[0];
}

}  // namespace bidan
