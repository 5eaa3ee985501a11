#include "bidan/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "bidan/decode.hpp"
#include "bidan/eval.hpp"

namespace bidan {

const char* phase_name(Phase p) { return p == Phase::kJoint ? "joint" : "frozen"; }

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::kJ1: return "j1";
        case Objective::kJ2: return "j2";
        case Objective::kJd: return "jd";
        case Objective::kJrl: return "jrl";
    }
    return "?";
}

Objective select_objective(long c, const MixingSchedule& s) {
    if (s.lambda_a < 0 || s.lambda_d < 0 || s.lambda_r < 0)
        throw std::invalid_argument("select_objective: negative mixing ratio");
    if (s.period() < 1)
        throw std::invalid_argument("select_objective: mixing ratio needs a positive component");
    if (c < 0) throw std::invalid_argument("select_objective: negative counter");
    long r = c % s.period();
    if (r < s.lambda_a) return Objective::kJ2;
    if (r >= s.lambda_a + s.lambda_d) return Objective::kJrl;
    return Objective::kJd;
}

double lr_schedule(long step, double lr0, long halve_start, long halve_every) {
    if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
    if (halve_start < 0 || halve_every < 1)
        throw std::invalid_argument("lr_schedule: bad halving config");
    if (step < halve_start) return lr0;
    long halvings = 1 + (step - halve_start) / halve_every;
    return lr0 * std::pow(0.5, static_cast<double>(halvings));
}

bool sgd_step(ParamStore& params, const GradMap& grads, double lr, double clip_norm) {
    for (const auto& [name, entry] : grads.entries) {
        Tensor& p = params.at(name);
        if (p.data.size() != entry.g.size())
            throw std::invalid_argument("sgd_step: gradient shape mismatch for " + name);
    }
    if (!grads.all_finite()) return false;
    double norm = grads.global_norm();
    double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    for (const auto& [name, entry] : grads.entries) {
        Tensor& p = params.at(name);
        for (std::size_t i = 0; i < entry.g.size(); ++i)
            p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) - lr * scale * entry.g[i]);
    }
    return true;
}

ConvergenceMonitor::ConvergenceMonitor(int window, double delta1, double delta2)
    : window_(window), delta1_(delta1), delta2_(delta2) {
    if (window < 1) throw std::invalid_argument("ConvergenceMonitor: window must be >= 1");
    if (delta1 < 0.0 || delta2 < 0.0)
        throw std::invalid_argument("ConvergenceMonitor: negative threshold");
}

void ConvergenceMonitor::observe(double dev_loss) { history_.push_back(dev_loss); }

Decision ConvergenceMonitor::assess(Phase phase) const {
    if (history_.size() < static_cast<std::size_t>(window_) + 1) return Decision::kContinue;
    auto first = history_.end() - window_;
    double front = *first;
    double best = *std::min_element(first, history_.end());
    double rel = front > 0.0 ? (front - best) / front : 0.0;
    double delta = phase == Phase::kJoint ? delta1_ : delta2_;
    if (rel < delta) return phase == Phase::kJoint ? Decision::kEnterPhase2 : Decision::kStop;
    return Decision::kContinue;
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt_field(double v) {
    if (!std::isfinite(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string csv_row(const StepRecord& r) {
    char head[64];
    std::snprintf(head, sizeof(head), "%ld,%s,%s,", r.step, phase_name(r.phase),
                  objective_name(r.objective));
    return std::string(head) + fmt_field(r.j1_loss) + "," + fmt_field(r.aux_loss) + "," +
           fmt_field(r.lr) + "," + fmt_field(r.dev_loss) + "," + fmt_field(r.dev_bleu) + "\n";
}

Sentence strip_ids(const TokenSeq& seq) {
    Sentence out;
    for (int id : seq) {
        if (id == Vocab::kEos) break;
        if (id == Vocab::kBos || id == Vocab::kPad) continue;
        out.push_back(std::to_string(id));
    }
    return out;
}

void check_dataset(const Dataset& d, const char* which) {
    if (d.src.empty()) throw std::invalid_argument(std::string("train: empty ") + which + " set");
    if (d.src.size() != d.tgt.size())
        throw std::invalid_argument(std::string("train: misaligned ") + which + " set");
}

// deterministic Fisher-Yates over [0, n)
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(static_cast<uint32_t>(i))]);
    return idx;
}

}  // namespace

double dataset_j1_loss(const Model& model, const Dataset& data, int batch_size) {
    check_dataset(data, "eval");
    if (batch_size < 1) throw std::invalid_argument("dataset_j1_loss: batch_size must be >= 1");
    double weighted = 0.0;
    long tokens = 0;
    for (std::size_t at = 0; at < data.size(); at += batch_size) {
        std::size_t end = std::min(data.size(), at + batch_size);
        std::vector<TokenSeq> src(data.src.begin() + at, data.src.begin() + end);
        std::vector<TokenSeq> tgt(data.tgt.begin() + at, data.tgt.begin() + end);
        Graph g;
        Batch b = make_batch(src, tgt);
        LossOut lo = loss_j1(g, model, b, false, nullptr);
        g.forward();
        weighted += g.scalar(lo.loss) * lo.tokens;
        tokens += lo.tokens;
    }
    return weighted / static_cast<double>(tokens);
}

double dataset_greedy_bleu(const Model& model, const Dataset& data, int batch_size) {
    check_dataset(data, "eval");
    if (batch_size < 1) throw std::invalid_argument("dataset_greedy_bleu: batch_size must be >= 1");
    std::vector<Sentence> hyps, refs;
    for (std::size_t at = 0; at < data.size(); at += batch_size) {
        std::size_t end = std::min(data.size(), at + batch_size);
        std::vector<TokenSeq> src(data.src.begin() + at, data.src.begin() + end);
        for (const TokenSeq& out : greedy_decode_batch(model, 1, src)) hyps.push_back(strip_ids(out));
        for (std::size_t i = at; i < end; ++i) refs.push_back(strip_ids(data.tgt[i]));
    }
    return corpus_bleu(hyps, refs).bleu;
}

TrainResult train(Model& model, const Dataset& train_data, const Dataset& dev_data,
                  const TrainConfig& cfg, const StepObserver& observer) {
    check_dataset(train_data, "train");
    check_dataset(dev_data, "dev");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (cfg.eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
    if (cfg.max_steps_phase1 < 0 || cfg.max_steps_phase2 < 0)
        throw std::invalid_argument("train: negative step cap");
    if (cfg.max_steps_phase1 > 0 && cfg.mixing.period() < 1)
        throw std::invalid_argument("train: mixing ratio needs a positive component");

    Rng root(cfg.seed);
    Rng shuffle_rng = root.fork(1);
    Rng noise_rng = root.fork(2);
    Rng sample_rng = root.fork(3);
    Rng drop_rng = root.fork(4);
    ConvergenceMonitor monitor(cfg.monitor_window, cfg.delta1, cfg.delta2);

    TrainResult res;
    res.final_dev_loss = kNan;
    res.final_dev_bleu = kNan;
    res.log_csv = "step,phase,objective,j1_loss,aux_loss,lr,dev_loss,dev_bleu\n";

    Phase phase = cfg.max_steps_phase1 == 0 ? Phase::kFrozen : Phase::kJoint;
    long c = 0;
    long step = 0;
    std::vector<std::size_t> order;
    std::size_t pos = 0;

    auto next_batch = [&](std::vector<TokenSeq>& src, std::vector<TokenSeq>& tgt) {
        if (pos >= order.size()) {
            order = shuffled_indices(train_data.size(), shuffle_rng);
            pos = 0;
        }
        std::size_t end = std::min(order.size(), pos + cfg.batch_size);
        for (; pos < end; ++pos) {
            src.push_back(train_data.src[order[pos]]);
            tgt.push_back(train_data.tgt[order[pos]]);
        }
    };

    auto apply = [&](Objective obj, const Batch& b, double lr, StepRecord& rec) {
        Graph g;
        Value loss;
        switch (obj) {
            case Objective::kJ1: loss = loss_j1(g, model, b, true, &drop_rng).loss; break;
            case Objective::kJ2: loss = loss_j2(g, model, b, true, &drop_rng).loss; break;
            case Objective::kJd:
                loss = loss_jd(g, model, b, noise_rng, cfg.noise_side, true, &drop_rng).loss;
                break;
            case Objective::kJrl:
                loss = loss_jrl(g, model, b, sample_rng, cfg.rl_baseline).loss;
                break;
        }
        g.forward();
        double value = g.scalar(loss);
        if (!std::isfinite(value))
            throw std::runtime_error("train: non-finite " + std::string(objective_name(obj)) +
                                     " loss at step " + std::to_string(rec.step));
        g.backward(loss);
        GradMap grads = g.param_grads();
        if (!sgd_step(model.params, grads, lr, cfg.clip_norm)) {
            rec.skipped_update = true;
            ++res.skipped_updates;
        }
        return value;
    };

    bool stop = false;
    while (!stop) {
        if (phase == Phase::kJoint && res.phase1_steps >= cfg.max_steps_phase1) {
            phase = Phase::kFrozen;
            monitor.reset();
        }
        if (phase == Phase::kFrozen && res.phase2_steps >= cfg.max_steps_phase2) break;

        ++step;
        StepRecord rec;
        rec.step = step;
        rec.phase = phase;
        rec.lr = lr_schedule(step, cfg.lr0, cfg.halve_start, cfg.halve_every);
        rec.j1_loss = rec.aux_loss = rec.dev_loss = rec.dev_bleu = kNan;

        std::vector<TokenSeq> src, tgt;
        next_batch(src, tgt);
        Batch b = make_batch(src, tgt);

        if (phase == Phase::kJoint) {
            rec.objective = select_objective(c, cfg.mixing);
            if (cfg.aux_mode == AuxMode::kAdditional)
                rec.j1_loss = apply(Objective::kJ1, b, rec.lr, rec);
            rec.aux_loss = apply(rec.objective, b, rec.lr, rec);
            ++c;
            ++res.phase1_steps;
        } else {
            rec.objective = Objective::kJ1;
            rec.j1_loss = apply(Objective::kJ1, b, rec.lr, rec);
            ++res.phase2_steps;
        }

        if (step % cfg.eval_every == 0) {
            rec.dev_loss = dataset_j1_loss(model, dev_data, cfg.batch_size);
            rec.dev_bleu = dataset_greedy_bleu(model, dev_data, cfg.batch_size);
            res.final_dev_loss = rec.dev_loss;
            res.final_dev_bleu = rec.dev_bleu;
            monitor.observe(rec.dev_loss);
            Decision d = monitor.assess(phase);
            if (phase == Phase::kJoint && d == Decision::kEnterPhase2) {
                phase = Phase::kFrozen;
                monitor.reset();
                res.gate_fired = true;
            } else if (phase == Phase::kFrozen && d == Decision::kStop) {
                res.stopped_by_gate = true;
                stop = true;
            }
        }

        res.log_csv += csv_row(rec);
        res.records.push_back(rec);
        if (observer) observer(rec);
    }
    res.steps = step;
    return res;
}

}  // namespace bidan
