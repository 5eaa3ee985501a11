#include "bidan/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace bidan {

namespace {

std::map<std::vector<std::string>, long long> ngram_counts(const Sentence& s, int n) {
    std::map<std::vector<std::string>, long long> counts;
    if (static_cast<int>(s.size()) >= n)
        for (std::size_t i = 0; i + n <= s.size(); ++i)
            ++counts[std::vector<std::string>(s.begin() + i, s.begin() + i + n)];
    return counts;
}

}  // namespace

NgramPrecision modified_ngram_precision(const std::vector<Sentence>& hyps,
                                        const std::vector<Sentence>& refs, int n) {
    if (n < 1) throw std::invalid_argument("modified_ngram_precision: n must be >= 1");
    if (hyps.size() != refs.size())
        throw std::invalid_argument("modified_ngram_precision: hypothesis/reference count mismatch");
    NgramPrecision out;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto hc = ngram_counts(hyps[i], n);
        auto rc = ngram_counts(refs[i], n);
        for (const auto& [gram, count] : hc) {
            out.total += count;
            auto it = rc.find(gram);
            if (it != rc.end()) out.clipped += std::min(count, it->second);
        }
    }
    out.p = out.total > 0 ? static_cast<double>(out.clipped) / static_cast<double>(out.total) : 0.0;
    return out;
}

BleuReport corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs,
                       int max_n, bool smoothing) {
    if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
    if (hyps.size() != refs.size())
        throw std::invalid_argument("corpus_bleu: hypothesis/reference count mismatch");
    if (max_n < 1) throw std::invalid_argument("corpus_bleu: max_n must be >= 1");

    BleuReport rep;
    rep.n_sentences = static_cast<int>(hyps.size());
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        rep.hyp_len += static_cast<long long>(hyps[i].size());
        rep.ref_len += static_cast<long long>(refs[i].size());
    }
    for (int n = 1; n <= max_n; ++n) {
        NgramPrecision pn = modified_ngram_precision(hyps, refs, n);
        if (smoothing && n >= 2)
            pn.p = static_cast<double>(pn.clipped + 1) / static_cast<double>(pn.total + 1);
        rep.precisions.push_back(pn);
    }
    if (rep.hyp_len == 0) return rep;  // bp = bleu = 0
    rep.bp = rep.hyp_len > rep.ref_len
                 ? 1.0
                 : std::exp(1.0 - static_cast<double>(rep.ref_len) / static_cast<double>(rep.hyp_len));
    double log_sum = 0.0;
    for (const NgramPrecision& pn : rep.precisions) {
        if (pn.p <= 0.0) return rep;  // bleu stays 0
        log_sum += std::log(pn.p) / max_n;
    }
    rep.bleu = rep.bp * std::exp(log_sum);
    return rep;
}

std::vector<BucketReport> length_bucket_report(const std::vector<Sentence>& hyps,
                                               const std::vector<Sentence>& refs,
                                               const std::vector<Sentence>& srcs,
                                               const std::vector<int>& bucket_edges) {
    if (hyps.size() != refs.size() || hyps.size() != srcs.size())
        throw std::invalid_argument("length_bucket_report: misaligned corpora");
    if (bucket_edges.size() < 2)
        throw std::invalid_argument("length_bucket_report: need at least two bucket edges");
    for (std::size_t i = 1; i < bucket_edges.size(); ++i)
        if (bucket_edges[i] <= bucket_edges[i - 1])
            throw std::invalid_argument("length_bucket_report: edges must be strictly increasing");

    std::vector<BucketReport> out;
    for (std::size_t b = 0; b + 1 < bucket_edges.size(); ++b) {
        BucketReport br;
        br.lo = bucket_edges[b];
        br.hi = bucket_edges[b + 1];
        std::vector<Sentence> h, r;
        for (std::size_t i = 0; i < srcs.size(); ++i) {
            int len = static_cast<int>(srcs[i].size());
            if (len >= br.lo && len < br.hi) {
                h.push_back(hyps[i]);
                r.push_back(refs[i]);
            }
        }
        if (h.empty())
            br.empty = true;
        else
            br.report = corpus_bleu(h, r);
        out.push_back(br);
    }
    return out;
}

std::string bucket_report_csv(const std::vector<BucketReport>& buckets) {
    std::string csv = "bucket,p1,p2,p3,p4,bp,bleu,n_sentences\n";
    char buf[160];
    for (const BucketReport& br : buckets) {
        std::snprintf(buf, sizeof(buf), "[%d;%d)", br.lo, br.hi);
        csv += buf;
        for (int n = 0; n < 4; ++n) {
            if (br.empty || n >= static_cast<int>(br.report.precisions.size())) {
                csv += ",0/0";
            } else {
                const NgramPrecision& pn = br.report.precisions[n];
                std::snprintf(buf, sizeof(buf), ",%lld/%lld", pn.clipped, pn.total);
                csv += buf;
            }
        }
        if (br.empty) {
            csv += ",NA,NA,0\n";
        } else {
            std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%d\n", br.report.bp, br.report.bleu,
                          br.report.n_sentences);
            csv += buf;
        }
    }
    return csv;
}

}  // namespace bidan
