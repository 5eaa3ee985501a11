#include "bidan/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bidan {

namespace {

void check_framed(const TokenSeq& seq, const char* what) {
    if (seq.size() < 2 || seq.front() != Vocab::kBos || seq.back() != Vocab::kEos)
        throw std::invalid_argument(std::string(what) + ": sequence must be <bos> ... <eos> framed");
}

void pad_side(const std::vector<TokenSeq>& seqs, std::vector<int>& ids, std::vector<uint8_t>& mask,
              int& len) {
    len = 0;
    for (const auto& s : seqs) len = std::max(len, static_cast<int>(s.size()));
    int B = static_cast<int>(seqs.size());
    ids.assign(static_cast<std::size_t>(B) * len, Vocab::kPad);
    mask.assign(static_cast<std::size_t>(B) * len, 0);
    for (int b = 0; b < B; ++b)
        for (std::size_t s = 0; s < seqs[b].size(); ++s) {
            ids[static_cast<std::size_t>(b) * len + s] = seqs[b][s];
            mask[static_cast<std::size_t>(b) * len + s] = 1;
        }
}

LossOut reconstruct_loss(Graph& g, const Model& model, const Batch& batch,
                         const std::vector<TokenSeq>& inputs, const std::vector<TokenSeq>& refs,
                         bool train, Rng* drop_rng) {
    std::vector<int> in_ids, ref_ids;
    std::vector<uint8_t> in_mask, ref_mask;
    int in_len = 0, ref_len = 0;
    pad_side(inputs, in_ids, in_mask, in_len);
    pad_side(refs, ref_ids, ref_mask, ref_len);
    auto enc = encode(g, model, in_ids, in_mask, batch.size, in_len, train, drop_rng);
    auto un = unroll_teacher_forced(g, model, 2, enc, ref_ids, ref_mask, batch.size, ref_len, train,
                                    drop_rng);
    return {un.loss, un.tokens};
}

}  // namespace

Batch make_batch(const std::vector<TokenSeq>& src, const std::vector<TokenSeq>& tgt) {
    if (src.empty() || src.size() != tgt.size())
        throw std::invalid_argument("batch: need equal, non-zero source/target counts");
    for (const auto& s : src) check_framed(s, "batch");
    for (const auto& s : tgt) check_framed(s, "batch");
    Batch b;
    b.src = src;
    b.tgt = tgt;
    b.size = static_cast<int>(src.size());
    pad_side(src, b.src_ids, b.src_mask, b.src_len);
    pad_side(tgt, b.tgt_ids, b.tgt_mask, b.tgt_len);
    return b;
}

LossOut loss_j1(Graph& g, const Model& model, const Batch& batch, bool train, Rng* drop_rng) {
    if (batch.size == 0) throw std::invalid_argument("loss_j1: empty batch");
    auto enc = encode(g, model, batch.src_ids, batch.src_mask, batch.size, batch.src_len, train,
                      drop_rng);
    auto un = unroll_teacher_forced(g, model, 1, enc, batch.tgt_ids, batch.tgt_mask, batch.size,
                                    batch.tgt_len, train, drop_rng);
    return {un.loss, un.tokens};
}

LossOut loss_j2(Graph& g, const Model& model, const Batch& batch, bool train, Rng* drop_rng) {
    if (batch.size == 0) throw std::invalid_argument("loss_j2: empty batch");
    auto enc = encode(g, model, batch.src_ids, batch.src_mask, batch.size, batch.src_len, train,
                      drop_rng);
    auto un = unroll_teacher_forced(g, model, 2, enc, batch.src_ids, batch.src_mask, batch.size,
                                    batch.src_len, train, drop_rng);
    return {un.loss, un.tokens};
}

NoisedSentence make_noise(const TokenSeq& framed, Rng& rng) {
    check_framed(framed, "make_noise");
    NoisedSentence out;
    out.ids = framed;
    int m = static_cast<int>(framed.size()) - 2;
    int swaps = m / 4;
    for (int k = 0; k < swaps; ++k) {
        int i = 1 + static_cast<int>(rng.below(static_cast<uint32_t>(m - 1)));
        std::swap(out.ids[static_cast<std::size_t>(i)], out.ids[static_cast<std::size_t>(i) + 1]);
        out.swaps.emplace_back(i, i + 1);
    }
    return out;
}

const char* noise_side_name(NoiseSide side) {
    return side == NoiseSide::kTarget ? "target" : "input";
}

NoiseSide noise_side_from_name(const std::string& name) {
    if (name == "target") return NoiseSide::kTarget;
    if (name == "input") return NoiseSide::kInput;
    throw std::invalid_argument("objectives: unknown noise side '" + name + "'");
}

LossOut loss_jd(Graph& g, const Model& model, const Batch& batch, Rng& noise_rng, NoiseSide side,
                bool train, Rng* drop_rng) {
    if (batch.size == 0) throw std::invalid_argument("loss_jd: empty batch");
    std::vector<TokenSeq> noisy(batch.src.size());
    for (std::size_t i = 0; i < batch.src.size(); ++i) noisy[i] = make_noise(batch.src[i], noise_rng).ids;
    if (side == NoiseSide::kTarget) return reconstruct_loss(g, model, batch, batch.src, noisy, train, drop_rng);
    return reconstruct_loss(g, model, batch, noisy, batch.src, train, drop_rng);
}

Rollout sample_rollout(Graph& g, const Model& model, int decoder, const EncoderState& enc, Rng& rng,
                       int length_cap, bool greedy) {
    if (length_cap < 1) throw std::invalid_argument("sample_rollout: length cap must be >= 1");
    int B = enc.batch, V = model.vocab_of_decoder(decoder);
    Rollout out;
    out.samples.assign(static_cast<std::size_t>(B), {});
    out.logprobs.assign(static_cast<std::size_t>(B), 0.0);
    std::vector<uint8_t> alive(static_cast<std::size_t>(B), 1);

    DecoderState st = decoder_init(g, model, decoder, enc);
    std::vector<int> prev(static_cast<std::size_t>(B), Vocab::kBos);
    for (int t = 0; t < length_cap; ++t) {
        StepOut so = decoder_step(g, model, decoder, enc, st, prev, false, nullptr);
        st = so.state;
        g.run_to(so.logits);
        const auto& logits = g.data(so.logits);

        std::vector<int> chosen(static_cast<std::size_t>(B), Vocab::kPad);
        for (int b = 0; b < B; ++b) {
            if (!alive[static_cast<std::size_t>(b)]) continue;
            const double* row = logits.data() + static_cast<std::size_t>(b) * V;
            int pick = 0;
            if (greedy) {
                for (int j = 1; j < V; ++j)
                    if (row[j] > row[pick]) pick = j;
            } else {
                double mx = *std::max_element(row, row + V);
                double z = 0.0;
                for (int j = 0; j < V; ++j) z += std::exp(row[j] - mx);
                double u = rng.uniform01() * z, acc = 0.0;
                pick = V - 1;
                for (int j = 0; j < V; ++j) {
                    acc += std::exp(row[j] - mx);
                    if (u < acc) {
                        pick = j;
                        break;
                    }
                }
            }
            chosen[static_cast<std::size_t>(b)] = pick;
            out.samples[static_cast<std::size_t>(b)].push_back(pick);
        }

        Value ce = g.cross_entropy_rows(so.logits, chosen);
        g.run_to(ce);
        for (int b = 0; b < B; ++b)
            if (alive[static_cast<std::size_t>(b)])
                out.logprobs[static_cast<std::size_t>(b)] -= g.data(ce)[static_cast<std::size_t>(b)];
        out.step_ce.push_back(ce);
        out.alive.push_back(alive);
        ++out.steps;

        bool any = false;
        for (int b = 0; b < B; ++b) {
            if (alive[static_cast<std::size_t>(b)] && chosen[static_cast<std::size_t>(b)] == Vocab::kEos)
                alive[static_cast<std::size_t>(b)] = 0;
            any = any || alive[static_cast<std::size_t>(b)];
        }
        if (!any) break;
        prev = chosen;
    }
    return out;
}

double reward_cosine(const Tensor& embed, const TokenSeq& a, const TokenSeq& b) {
    int E = embed.cols();
    auto pool = [&](const TokenSeq& seq) {
        std::vector<double> v(static_cast<std::size_t>(E), 0.0);
        int n = 0;
        for (int id : seq) {
            if (id < Vocab::kNumReserved) continue;
            if (id >= embed.rows())
                throw std::invalid_argument("reward: token id " + std::to_string(id) +
                                            " outside the embedding table");
            for (int j = 0; j < E; ++j) v[static_cast<std::size_t>(j)] += embed.at(id, j);
            ++n;
        }
        if (n > 0)
            for (auto& x : v) x /= n;
        return v;
    };
    auto va = pool(a), vb = pool(b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < E; ++j) {
        dot += va[static_cast<std::size_t>(j)] * vb[static_cast<std::size_t>(j)];
        na += va[static_cast<std::size_t>(j)] * va[static_cast<std::size_t>(j)];
        nb += vb[static_cast<std::size_t>(j)] * vb[static_cast<std::size_t>(j)];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

LossOut reinforce_surrogate(Graph& g, const Rollout& rollout, const std::vector<double>& rewards,
                            double baseline) {
    int B = static_cast<int>(rewards.size());
    if (B == 0 || rollout.steps == 0)
        throw std::invalid_argument("reinforce_surrogate: empty rollout or rewards");
    LossOut out;
    Value total;
    for (int t = 0; t < rollout.steps; ++t) {
        std::vector<double> w(static_cast<std::size_t>(B), 0.0);
        for (int b = 0; b < B; ++b)
            if (rollout.alive[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)]) {
                w[static_cast<std::size_t>(b)] = (rewards[static_cast<std::size_t>(b)] - baseline) / B;
                ++out.tokens;
            }
        Value term = g.sum_all(g.mul(rollout.step_ce[static_cast<std::size_t>(t)],
                                     g.constant({B, 1}, w)));
        total = t == 0 ? term : g.add(total, term);
    }
    out.loss = total;
    return out;
}

JrlOut loss_jrl(Graph& g, const Model& model, const Batch& batch, Rng& sample_rng,
                bool use_baseline) {
    if (batch.size == 0) throw std::invalid_argument("loss_jrl: empty batch");
    int B = batch.size;
    auto enc = encode(g, model, batch.src_ids, batch.src_mask, B, batch.src_len, false, nullptr);
    int cap = (3 * batch.src_len + 1) / 2;  // ceil(1.5 * m)

    JrlOut out;
    out.rollout = sample_rollout(g, model, 2, enc, sample_rng, cap);

    const Tensor& embed = model.params.at("enc/embed");
    out.rewards.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
        out.rewards[static_cast<std::size_t>(b)] =
            reward_cosine(embed, batch.src[static_cast<std::size_t>(b)],
                          out.rollout.samples[static_cast<std::size_t>(b)]);
    out.baseline = 0.0;
    if (use_baseline)
        out.baseline = std::accumulate(out.rewards.begin(), out.rewards.end(), 0.0) / B;

    LossOut sur = reinforce_surrogate(g, out.rollout, out.rewards, out.baseline);
    out.loss = sur.loss;
    out.tokens = sur.tokens;
    return out;
}

}  // namespace bidan
