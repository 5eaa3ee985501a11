#include "bidan/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace bidan {

namespace {

std::string enc_name(int layer, const char* dir, const char* leaf) {
    return "enc/l" + std::to_string(layer) + "/" + dir + "/" + leaf;
}

std::string dec_name(int decoder, const std::string& rest) {
    return "dec" + std::to_string(decoder) + "/" + rest;
}

int enc_in_dim(const ModelConfig& cfg, int layer) {
    return layer == 0 ? cfg.embed_dim : 2 * cfg.hidden_dim;
}

int dec_in_dim(const ModelConfig& cfg, int layer) {
    if (layer > 0) return cfg.hidden_dim;
    return cfg.embed_dim + (cfg.input_feeding ? cfg.hidden_dim : 0);
}

Value maybe_drop(Graph& g, Value x, const ModelConfig& cfg, bool train, Rng* rng) {
    if (!train || cfg.dropout <= 0.0) return x;
    if (rng == nullptr) throw std::invalid_argument("model: dropout in train mode requires an rng");
    return g.dropout(x, cfg.dropout, rng->next_u64(), true);
}

// gates laid out [i | f | o | g] along the 4H axis
std::pair<Value, Value> lstm_cell(Graph& g, Value x, Value h, Value c, Value Wx, Value Wh, Value b,
                                  int H) {
    Value gates = g.add(g.add(g.matmul(x, Wx), g.matmul(h, Wh)), b);
    Value i = g.sigmoid(g.slice_cols(gates, 0, H));
    Value f = g.sigmoid(g.slice_cols(gates, H, H));
    Value o = g.sigmoid(g.slice_cols(gates, 2 * H, H));
    Value gc = g.tanh(g.slice_cols(gates, 3 * H, H));
    Value nc = g.add(g.mul(f, c), g.mul(i, gc));
    Value nh = g.mul(o, g.tanh(nc));
    return {nc, nh};
}

}  // namespace

const char* attention_name(Attention a) {
    switch (a) {
        case Attention::kAdditive: return "additive";
        case Attention::kBilinear: return "bilinear";
        case Attention::kConcat: return "concat";
    }
    throw std::logic_error("model: bad attention enum");
}

Attention attention_from_name(const std::string& name) {
    if (name == "additive") return Attention::kAdditive;
    if (name == "bilinear") return Attention::kBilinear;
    if (name == "concat") return Attention::kConcat;
    throw std::invalid_argument("model: unknown attention variant '" + name + "'");
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("params: no parameter named '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("params: no parameter named '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, t] : params)
        if (in_partition(name, prefix)) out.push_back(name);
    return out;
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

std::vector<std::pair<std::string, std::vector<int>>> Model::parameter_spec(const ModelConfig& cfg) {
    int E = cfg.embed_dim, H = cfg.hidden_dim, L = cfg.num_layers;
    std::vector<std::pair<std::string, std::vector<int>>> spec;
    spec.emplace_back("enc/embed", std::vector<int>{cfg.src_vocab, E});
    for (int l = 0; l < L; ++l) {
        for (const char* dir : {"fw", "bw"}) {
            spec.emplace_back(enc_name(l, dir, "Wx"), std::vector<int>{enc_in_dim(cfg, l), 4 * H});
            spec.emplace_back(enc_name(l, dir, "Wh"), std::vector<int>{H, 4 * H});
            spec.emplace_back(enc_name(l, dir, "b"), std::vector<int>{4 * H});
        }
    }
    for (int k : {1, 2}) {
        int V = k == 1 ? cfg.tgt_vocab : cfg.src_vocab;
        spec.emplace_back(dec_name(k, "embed"), std::vector<int>{V, E});
        spec.emplace_back(dec_name(k, "init/W"), std::vector<int>{H, 2 * L * H});
        spec.emplace_back(dec_name(k, "init/b"), std::vector<int>{2 * L * H});
        for (int l = 0; l < L; ++l) {
            spec.emplace_back(dec_name(k, "l" + std::to_string(l) + "/Wx"),
                              std::vector<int>{dec_in_dim(cfg, l), 4 * H});
            spec.emplace_back(dec_name(k, "l" + std::to_string(l) + "/Wh"), std::vector<int>{H, 4 * H});
            spec.emplace_back(dec_name(k, "l" + std::to_string(l) + "/b"), std::vector<int>{4 * H});
        }
        switch (cfg.attention) {
            case Attention::kAdditive:
                spec.emplace_back(dec_name(k, "att/W1"), std::vector<int>{2 * H, H});
                spec.emplace_back(dec_name(k, "att/W2"), std::vector<int>{H, H});
                spec.emplace_back(dec_name(k, "att/v"), std::vector<int>{H, 1});
                break;
            case Attention::kBilinear:
                spec.emplace_back(dec_name(k, "att/Wb"), std::vector<int>{2 * H, H});
                break;
            case Attention::kConcat:
                spec.emplace_back(dec_name(k, "att/Wc"), std::vector<int>{3 * H, 1});
                break;
        }
        spec.emplace_back(dec_name(k, "att/Wa"), std::vector<int>{3 * H, H});
        spec.emplace_back(dec_name(k, "att/ba"), std::vector<int>{H});
        spec.emplace_back(dec_name(k, "out/Wp"), std::vector<int>{H, V});
        spec.emplace_back(dec_name(k, "out/bp"), std::vector<int>{V});
    }
    std::sort(spec.begin(), spec.end());
    return spec;
}

Model::Model(ModelConfig cfg) : config(cfg) {
    if (cfg.src_vocab < 1 || cfg.tgt_vocab < 1) throw std::invalid_argument("model: vocab sizes must be >= 1");
    if (cfg.embed_dim < 1 || cfg.hidden_dim < 1 || cfg.num_layers < 1)
        throw std::invalid_argument("model: dimensions must be >= 1");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
        throw std::invalid_argument("model: dropout must be in [0, 1)");
    for (const auto& [name, shape] : parameter_spec(cfg)) params.params.emplace(name, Tensor::zeros(shape));
}

void Model::init_parameters(Rng& rng) {
    int H = config.hidden_dim;
    for (auto& [name, t] : params.params)  // std::map iterates in sorted-name order
        for (auto& v : t.data) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    auto set_forget = [&](const std::string& name) {
        Tensor& b = params.at(name);
        for (int j = H; j < 2 * H; ++j) b.data[static_cast<std::size_t>(j)] = 1.0f;
    };
    for (int l = 0; l < config.num_layers; ++l) {
        set_forget(enc_name(l, "fw", "b"));
        set_forget(enc_name(l, "bw", "b"));
        for (int k : {1, 2}) set_forget(dec_name(k, "l" + std::to_string(l) + "/b"));
    }
}

int Model::vocab_of_decoder(int decoder) const {
    if (decoder == 1) return config.tgt_vocab;
    if (decoder == 2) return config.src_vocab;
    throw std::invalid_argument("model: decoder must be 1 or 2");
}

EncoderState encode(Graph& g, const Model& model, const std::vector<int>& src_ids,
                    const std::vector<uint8_t>& src_mask, int batch, int len, bool train,
                    Rng* drop_rng, EncoderProbe* probe) {
    const ModelConfig& cfg = model.config;
    int B = batch, m = len, H = cfg.hidden_dim, L = cfg.num_layers;
    if (B < 1 || m < 1) throw std::invalid_argument("encode: batch and len must be >= 1");
    if (src_ids.size() != static_cast<std::size_t>(B) * m || src_mask.size() != src_ids.size())
        throw std::invalid_argument("encode: ids/mask must have batch*len entries");
    for (int b = 0; b < B; ++b) {
        bool any = false;
        for (int s = 0; s < m; ++s) any = any || src_mask[static_cast<std::size_t>(b) * m + s] != 0;
        if (!any) throw std::invalid_argument("encode: sequence " + std::to_string(b) + " is fully masked");
    }
    auto param = [&](const std::string& name) { return g.param(name, &model.params.at(name)); };

    Value emb = param("enc/embed");
    std::vector<Value> xs(m);
    for (int s = 0; s < m; ++s) {
        std::vector<int> ids(B);
        for (int b = 0; b < B; ++b) ids[b] = src_ids[static_cast<std::size_t>(b) * m + s];
        xs[s] = g.take_rows(emb, ids);
    }

    std::vector<Value> keep(m), carry(m);  // [B, 1] column masks for the blend
    for (int s = 0; s < m; ++s) {
        std::vector<double> mv(B), iv(B);
        for (int b = 0; b < B; ++b) {
            mv[b] = src_mask[static_cast<std::size_t>(b) * m + s] ? 1.0 : 0.0;
            iv[b] = 1.0 - mv[b];
        }
        keep[s] = g.constant({B, 1}, mv);
        carry[s] = g.constant({B, 1}, iv);
    }
    auto blend = [&](Value fresh, Value prev, int s) {
        return g.add(g.mul(fresh, keep[s]), g.mul(prev, carry[s]));
    };

    if (probe) {
        probe->fw.assign(L, {});
        probe->bw.assign(L, {});
    }
    std::vector<Value> fw(m), bw(m);
    for (int l = 0; l < L; ++l) {
        std::vector<Value> in_s(m);
        for (int s = 0; s < m; ++s) in_s[s] = maybe_drop(g, xs[s], cfg, train, drop_rng);

        Value Wxf = param(enc_name(l, "fw", "Wx")), Whf = param(enc_name(l, "fw", "Wh"));
        Value bf = param(enc_name(l, "fw", "b"));
        Value c = g.zeros({B, H}), h = g.zeros({B, H});
        for (int s = 0; s < m; ++s) {
            auto [nc, nh] = lstm_cell(g, in_s[s], h, c, Wxf, Whf, bf, H);
            c = blend(nc, c, s);
            h = blend(nh, h, s);
            fw[s] = h;
        }

        Value Wxb = param(enc_name(l, "bw", "Wx")), Whb = param(enc_name(l, "bw", "Wh"));
        Value bb = param(enc_name(l, "bw", "b"));
        c = g.zeros({B, H});
        h = g.zeros({B, H});
        for (int s = m - 1; s >= 0; --s) {
            auto [nc, nh] = lstm_cell(g, in_s[s], h, c, Wxb, Whb, bb, H);
            c = blend(nc, c, s);
            h = blend(nh, h, s);
            bw[s] = h;
        }

        if (probe) {
            probe->fw[l] = fw;
            probe->bw[l] = bw;
        }
        if (l + 1 < L)
            for (int s = 0; s < m; ++s) xs[s] = g.concat_cols(fw[s], bw[s]);
    }

    // stack positions (s-major), then permute rows into the b-major flat layout
    Value stack;
    for (int s = 0; s < m; ++s) {
        Value cs = g.concat_cols(fw[s], bw[s]);
        stack = s == 0 ? cs : g.concat_rows(stack, cs);
    }
    std::vector<int> perm(static_cast<std::size_t>(B) * m);
    for (int b = 0; b < B; ++b)
        for (int s = 0; s < m; ++s) perm[static_cast<std::size_t>(b) * m + s] = s * B + b;

    EncoderState st;
    st.hbar = g.take_rows(stack, perm);
    st.init_h = bw[0];
    st.mask = src_mask;
    st.batch = B;
    st.len = m;
    return st;
}

DecoderState decoder_init(Graph& g, const Model& model, int decoder, const EncoderState& enc) {
    const ModelConfig& cfg = model.config;
    model.vocab_of_decoder(decoder);  // validates the decoder index
    int B = enc.batch, H = cfg.hidden_dim, L = cfg.num_layers;
    auto param = [&](const std::string& rest) {
        std::string name = dec_name(decoder, rest);
        return g.param(name, &model.params.at(name));
    };

    Value v = g.tanh(g.add(g.matmul(enc.init_h, param("init/W")), param("init/b")));  // [B, 2LH]
    DecoderState st;
    for (int l = 0; l < L; ++l) {
        st.c.push_back(g.slice_cols(v, 2 * l * H, H));
        st.h.push_back(g.slice_cols(v, (2 * l + 1) * H, H));
    }
    if (cfg.input_feeding) st.feed = g.zeros({B, H});
    switch (cfg.attention) {
        case Attention::kAdditive: st.att_pre = g.matmul(enc.hbar, param("att/W1")); break;
        case Attention::kBilinear: st.att_pre = g.matmul(enc.hbar, param("att/Wb")); break;
        case Attention::kConcat:
            st.att_pre = g.matmul(enc.hbar, g.slice_rows(param("att/Wc"), H, 2 * H));
            break;
    }
    return st;
}

StepOut decoder_step(Graph& g, const Model& model, int decoder, const EncoderState& enc,
                     const DecoderState& st, const std::vector<int>& prev_ids, bool train,
                     Rng* drop_rng) {
    const ModelConfig& cfg = model.config;
    int B = enc.batch, m = enc.len, H = cfg.hidden_dim, L = cfg.num_layers;
    if (prev_ids.size() != static_cast<std::size_t>(B))
        throw std::invalid_argument("decoder_step: need one previous id per batch row");
    if (static_cast<int>(st.c.size()) != L || static_cast<int>(st.h.size()) != L)
        throw std::invalid_argument("decoder_step: state layer count mismatch");
    auto param = [&](const std::string& rest) {
        std::string name = dec_name(decoder, rest);
        return g.param(name, &model.params.at(name));
    };

    Value emb = g.take_rows(param("embed"), prev_ids);
    Value x = cfg.input_feeding ? g.concat_cols(emb, st.feed) : emb;

    StepOut out;
    out.state = st;
    Value inp = x;
    for (int l = 0; l < L; ++l) {
        inp = maybe_drop(g, inp, cfg, train, drop_rng);
        std::string lp = "l" + std::to_string(l) + "/";
        auto [nc, nh] = lstm_cell(g, inp, st.h[l], st.c[l], param(lp + "Wx"), param(lp + "Wh"),
                                  param(lp + "b"), H);
        out.state.c[l] = nc;
        out.state.h[l] = nh;
        inp = nh;
    }
    Value htop = out.state.h[L - 1];

    Value scores;  // [B*m, 1]
    switch (cfg.attention) {
        case Attention::kAdditive:
            scores = g.matmul(
                g.tanh(g.add(st.att_pre, g.repeat_rows(g.matmul(htop, param("att/W2")), m))),
                param("att/v"));
            break;
        case Attention::kBilinear:
            scores = g.row_sum(g.mul(st.att_pre, g.repeat_rows(htop, m)));
            break;
        case Attention::kConcat:
            scores = g.add(st.att_pre,
                           g.repeat_rows(g.matmul(htop, g.slice_rows(param("att/Wc"), 0, H)), m));
            break;
    }
    out.attn = g.softmax_rows(g.reshape(scores, {B, m}), enc.mask);
    Value ctx = g.weighted_sum_rows(out.attn, enc.hbar);  // [B, 2H]
    out.a = g.tanh(g.add(g.matmul(g.concat_cols(ctx, htop), param("att/Wa")), param("att/ba")));
    Value a_drop = maybe_drop(g, out.a, cfg, train, drop_rng);
    out.logits = g.add(g.matmul(a_drop, param("out/Wp")), param("out/bp"));
    if (cfg.input_feeding) out.state.feed = out.a;
    return out;
}

Unroll unroll_teacher_forced(Graph& g, const Model& model, int decoder, const EncoderState& enc,
                             const std::vector<int>& tgt_ids, const std::vector<uint8_t>& tgt_mask,
                             int batch, int len, bool train, Rng* drop_rng) {
    int B = batch, T = len;
    if (T < 2) throw std::invalid_argument("unroll: need at least two frames (<bos> ... <eos>)");
    if (tgt_ids.size() != static_cast<std::size_t>(B) * T || tgt_mask.size() != tgt_ids.size())
        throw std::invalid_argument("unroll: ids/mask must have batch*len entries");

    DecoderState st = decoder_init(g, model, decoder, enc);
    Unroll un;
    Value total;
    for (int t = 0; t + 1 < T; ++t) {
        std::vector<int> prev(B), targets(B);
        std::vector<double> mv(B);
        int real = 0;
        for (int b = 0; b < B; ++b) {
            prev[b] = tgt_ids[static_cast<std::size_t>(b) * T + t];
            targets[b] = tgt_ids[static_cast<std::size_t>(b) * T + t + 1];
            mv[b] = tgt_mask[static_cast<std::size_t>(b) * T + t + 1] ? 1.0 : 0.0;
            real += mv[b] != 0.0;
        }
        StepOut so = decoder_step(g, model, decoder, enc, st, prev, train, drop_rng);
        st = so.state;
        un.step_logits.push_back(so.logits);
        Value masked = g.mul(g.cross_entropy_rows(so.logits, targets), g.constant({B, 1}, mv));
        Value ssum = g.sum_all(masked);
        total = t == 0 ? ssum : g.add(total, ssum);
        un.tokens += real;
    }
    if (un.tokens == 0) throw std::invalid_argument("unroll: no real prediction slots in batch");
    un.loss = g.scale(total, 1.0 / un.tokens);
    return un;
}

}  // namespace bidan
