#pragma once

#include <string>
#include <vector>

namespace bidan {

// Scoring operates on whitespace-split token sequences; callers detokenize
// BPE output first and split. Single reference per hypothesis.
using Sentence = std::vector<std::string>;

struct NgramPrecision {
    long long clipped = 0;
    long long total = 0;
    double p = 0.0;  // clipped/total (add-one smoothed for n >= 2 when enabled), 0 on 0/0
};

struct BleuReport {
    std::vector<NgramPrecision> precisions;  // index n-1
    double bp = 0.0;
    double bleu = 0.0;
    long long hyp_len = 0;
    long long ref_len = 0;
    int n_sentences = 0;
};

// Corpus-level clipped n-gram counts: per sentence, hypothesis n-gram counts
// are clipped by their reference counts, then summed.
NgramPrecision modified_ngram_precision(const std::vector<Sentence>& hyps,
                                        const std::vector<Sentence>& refs, int n);

// BP = 1 if c > r else exp(1 - r/c); BLEU = BP * exp(sum (1/max_n) ln p_n),
// and 0 whenever some p_n = 0 (smoothing off) or c = 0. Smoothing replaces
// p_n by (clipped+1)/(total+1) for n >= 2.
BleuReport corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs,
                       int max_n = 4, bool smoothing = false);

struct BucketReport {
    int lo = 0, hi = 0;  // source-length interval [lo, hi)
    bool empty = false;  // no sentences fell in the bucket; report left zeroed
    BleuReport report;
};

// Groups sentence triples by source token count into [e_i, e_{i+1}) buckets
// and scores each group. Sentences outside every bucket are dropped. Edges
// must be strictly increasing.
std::vector<BucketReport> length_bucket_report(const std::vector<Sentence>& hyps,
                                               const std::vector<Sentence>& refs,
                                               const std::vector<Sentence>& srcs,
                                               const std::vector<int>& bucket_edges);

// CSV rows `bucket,p1,p2,p3,p4,bp,bleu,n_sentences` with a header line;
// p columns are raw "clipped/total" fractions, empty buckets print NA.
std::string bucket_report_csv(const std::vector<BucketReport>& buckets);

}  // namespace bidan
