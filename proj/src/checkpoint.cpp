#include "bidan/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bidan/corpus.hpp"

namespace bidan {

namespace {

constexpr char kMagic[4] = {'B', 'I', 'D', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_blob(std::string& out, const std::string& text) {
    put_u32(out, static_cast<uint32_t>(text.size()));
    out += text;
}

struct Reader {
    const std::string& buf;
    const std::string& path;
    std::size_t at = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw std::runtime_error("checkpoint: " + path + ": " + msg + " at offset " +
                                 std::to_string(at));
    }
    void need(std::size_t n) const {
        if (at + n > buf.size()) fail("truncated (need " + std::to_string(n) + " bytes)");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[at + i])) << (8 * i);
        at += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[at + i])) << (8 * i);
        at += 8;
        return v;
    }
    std::string blob() {
        uint32_t n = u32();
        need(n);
        std::string out = buf.substr(at, n);
        at += n;
        return out;
    }
};

int partition_rank(const std::string& name) {
    if (in_partition(name, "enc/")) return 0;
    if (in_partition(name, "dec1/")) return 1;
    if (in_partition(name, "dec2/")) return 2;
    throw std::runtime_error("checkpoint: parameter '" + name + "' outside every partition");
}

}  // namespace

std::string model_config_to_text(const ModelConfig& cfg) {
    char buf[64];
    std::string out;
    out += "model.src_vocab = " + std::to_string(cfg.src_vocab) + "\n";
    out += "model.tgt_vocab = " + std::to_string(cfg.tgt_vocab) + "\n";
    out += "model.embed_dim = " + std::to_string(cfg.embed_dim) + "\n";
    out += "model.hidden_dim = " + std::to_string(cfg.hidden_dim) + "\n";
    out += "model.num_layers = " + std::to_string(cfg.num_layers) + "\n";
    out += "model.attention = " + std::string(attention_name(cfg.attention)) + "\n";
    out += "model.input_feeding = " + std::string(cfg.input_feeding ? "true" : "false") + "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", cfg.dropout);
    out += "model.dropout = " + std::string(buf) + "\n";
    return out;
}

ModelConfig model_config_from_text(const std::string& text) {
    ConfigFile file = parse_config_text(text);
    ModelConfig cfg;
    cfg.src_vocab = std::stoi(file.get("model.src_vocab"));
    cfg.tgt_vocab = std::stoi(file.get("model.tgt_vocab"));
    cfg.embed_dim = std::stoi(file.get("model.embed_dim"));
    cfg.hidden_dim = std::stoi(file.get("model.hidden_dim"));
    cfg.num_layers = std::stoi(file.get("model.num_layers"));
    cfg.attention = attention_from_name(file.get("model.attention"));
    cfg.input_feeding = file.get("model.input_feeding") == "true";
    cfg.dropout = std::stod(file.get("model.dropout"));
    return cfg;
}

Checkpoint make_checkpoint(const Model& model, const Vocab& src_vocab, const Vocab& tgt_vocab,
                           const MergeTable& src_merges, const MergeTable& tgt_merges) {
    Checkpoint ckpt;
    ckpt.config = model.config;
    ckpt.src_vocab = src_vocab;
    ckpt.tgt_vocab = tgt_vocab;
    ckpt.src_merges = src_merges;
    ckpt.tgt_merges = tgt_merges;
    ckpt.params = model.params;
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_blob(out, model_config_to_text(ckpt.config));
    put_blob(out, ckpt.src_vocab.to_text());
    put_blob(out, ckpt.tgt_vocab.to_text());
    put_blob(out, ckpt.src_merges.to_text());
    put_blob(out, ckpt.tgt_merges.to_text());

    std::vector<std::string> order;
    for (int rank = 0; rank < 3; ++rank)
        for (const auto& [name, t] : ckpt.params.params)
            if (partition_rank(name) == rank) order.push_back(name);
    put_u32(out, static_cast<uint32_t>(order.size()));
    for (const std::string& name : order) {
        const Tensor& t = ckpt.params.params.at(name);
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int e : t.shape) put_u64(out, static_cast<uint64_t>(e));
        for (float f : t.data) put_u32(out, std::bit_cast<uint32_t>(f));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
    std::ostringstream bufstream;
    bufstream << f.rdbuf();
    std::string buf = bufstream.str();
    Reader r{buf, path};

    r.need(4);
    if (buf.compare(0, 4, kMagic, 4) != 0) r.fail("bad magic");
    r.at = 4;
    uint32_t version = r.u32();
    if (version != kVersion) {
        r.at = 4;
        r.fail("unsupported version " + std::to_string(version));
    }

    Checkpoint ckpt;
    ckpt.config = model_config_from_text(r.blob());
    ckpt.src_vocab = Vocab::from_text(r.blob());
    ckpt.tgt_vocab = Vocab::from_text(r.blob());
    ckpt.src_merges = MergeTable::from_text(r.blob());
    ckpt.tgt_merges = MergeTable::from_text(r.blob());

    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::size_t tensor_at = r.at;
        uint32_t name_len = r.u32();
        r.need(name_len);
        std::string name = buf.substr(r.at, name_len);
        r.at += name_len;
        uint32_t rank = r.u32();
        if (rank > 8) {
            r.at = tensor_at;
            r.fail("implausible tensor rank " + std::to_string(rank) + " for '" + name + "'");
        }
        std::vector<int> shape;
        std::size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t e = r.u64();
            if (e == 0 || e > (1u << 30)) {
                r.at = tensor_at;
                r.fail("implausible extent for '" + name + "'");
            }
            shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        r.need(numel * 4);
        Tensor t;
        t.shape = shape;
        t.data.resize(numel);
        for (std::size_t k = 0; k < numel; ++k) {
            uint32_t bits = r.u32();
            t.data[k] = std::bit_cast<float>(bits);
        }
        if (!ckpt.params.params.emplace(name, std::move(t)).second) {
            r.at = tensor_at;
            r.fail("duplicate tensor '" + name + "'");
        }
    }
    if (r.at != buf.size()) r.fail("trailing bytes");

    // the tensor set must match the config's parameter spec exactly
    auto spec = Model::parameter_spec(ckpt.config);
    std::string problems;
    for (const auto& [name, shape] : spec) {
        auto it = ckpt.params.params.find(name);
        if (it == ckpt.params.params.end())
            problems += " missing:" + name;
        else if (it->second.shape != shape)
            problems += " misshapen:" + name;
    }
    if (ckpt.params.params.size() != spec.size())
        for (const auto& [name, t] : ckpt.params.params) {
            bool known = false;
            for (const auto& [sname, sshape] : spec)
                if (sname == name) {
                    known = true;
                    break;
                }
            if (!known) problems += " unexpected:" + name;
        }
    if (!problems.empty())
        throw std::runtime_error("checkpoint: " + path + ": tensor set does not match config:" +
                                 problems);
    if (ckpt.src_vocab.size() != ckpt.config.src_vocab ||
        ckpt.tgt_vocab.size() != ckpt.config.tgt_vocab)
        throw std::runtime_error("checkpoint: " + path + ": vocabulary sizes disagree with config");
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Model model(ckpt.config);
    model.params = ckpt.params;
    return model;
}

}  // namespace bidan
