#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bidan/objectives.hpp"

namespace bidan {

enum class Phase { kJoint, kFrozen };
enum class Objective { kJ1, kJ2, kJd, kJrl };

const char* phase_name(Phase p);
const char* objective_name(Objective o);

struct MixingSchedule {
    int lambda_a = 5;
    int lambda_d = 2;
    int lambda_r = 2;
    int period() const { return lambda_a + lambda_d + lambda_r; }
};

// c mod period: first lambda_a slots are J2, last lambda_r are JRL, J_D
// between. Pure in c; all-zero ratios are a config error.
Objective select_objective(long c, const MixingSchedule& s);

// lr0 until halve_start, then halved once plus once more per halve_every
// further steps.
double lr_schedule(long step, double lr0, long halve_start, long halve_every);

// p <- p - lr * g after global-norm clipping. Gradient keys must name
// existing parameters but may cover any subset. A non-finite gradient skips
// the whole update and returns false.
bool sgd_step(ParamStore& params, const GradMap& grads, double lr, double clip_norm);

enum class Decision { kContinue, kEnterPhase2, kStop };

// Tracks dev losses at a fixed cadence. With at least window+1 points, the
// relative improvement over the trailing window (front vs best) decides:
// below delta1 in JOINT means enter phase 2, below delta2 in FROZEN means
// stop. History resets at the phase transition.
class ConvergenceMonitor {
public:
    ConvergenceMonitor(int window, double delta1, double delta2);
    void observe(double dev_loss);
    Decision assess(Phase phase) const;
    void reset() { history_.clear(); }
    const std::vector<double>& history() const { return history_; }

private:
    int window_;
    double delta1_, delta2_;
    std::vector<double> history_;
};

// additional: every phase-1 batch applies J1's update and then the selected
// auxiliary update (Algorithm 1 as written). exclusive: phase-1 batches apply
// only the selected auxiliary update.
enum class AuxMode { kAdditional, kExclusive };

struct Dataset {
    std::vector<TokenSeq> src, tgt;  // framed id sequences, aligned
    std::size_t size() const { return src.size(); }
};

struct TrainConfig {
    MixingSchedule mixing;
    AuxMode aux_mode = AuxMode::kAdditional;
    NoiseSide noise_side = NoiseSide::kTarget;
    bool rl_baseline = true;
    double lr0 = 1.0;
    long halve_start = 340000;
    long halve_every = 34000;
    double clip_norm = 5.0;
    int batch_size = 64;
    long max_steps_phase1 = 340000;  // hard caps; the gate usually fires first
    long max_steps_phase2 = 340000;
    int eval_every = 200;
    int monitor_window = 3;
    double delta1 = 0.01;   // phase-1 gate ("90% convergence")
    double delta2 = 0.001;  // phase-2 stop
    uint64_t seed = 1;
};

struct StepRecord {
    long step = 0;
    Phase phase = Phase::kJoint;
    Objective objective = Objective::kJ1;  // the auxiliary in phase 1
    double j1_loss = 0.0;                  // NaN when not computed
    double aux_loss = 0.0;                 // NaN when not computed
    double lr = 0.0;
    double dev_loss = 0.0;  // NaN except on eval steps
    double dev_bleu = 0.0;
    bool skipped_update = false;  // some sgd_step rejected non-finite grads
};

struct TrainResult {
    long steps = 0;
    long phase1_steps = 0;
    long phase2_steps = 0;
    bool gate_fired = false;     // phase 2 entered via the monitor, not the cap
    bool stopped_by_gate = false;
    long skipped_updates = 0;
    double final_dev_loss = 0.0;
    double final_dev_bleu = 0.0;
    std::string log_csv;  // step,phase,objective,j1_loss,aux_loss,lr,dev_loss,dev_bleu
    std::vector<StepRecord> records;
};

using StepObserver = std::function<void(const StepRecord&)>;

// Mean J1 loss over a dataset (token-weighted, dropout off), chunked by
// batch_size.
double dataset_j1_loss(const Model& model, const Dataset& data, int batch_size);

// Greedy-decodes the dataset's sources with D1 and scores id-level BLEU
// against the targets (ids printed as words; a monitoring signal, not the
// text-level score).
double dataset_greedy_bleu(const Model& model, const Dataset& data, int batch_size);

// Algorithm 1: phase 1 rotates auxiliary objectives behind per-batch J1
// updates until the dev-loss gate (or cap), then freezes θ2 and runs J1
// alone until the stop criterion. Deterministic for a fixed seed, including
// the log text. Non-finite losses abort with a diagnostic.
TrainResult train(Model& model, const Dataset& train_data, const Dataset& dev_data,
                  const TrainConfig& cfg, const StepObserver& observer = nullptr);

}  // namespace bidan
