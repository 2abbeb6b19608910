#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crel/encoder.hpp"
#include "crel/evalkit.hpp"
#include "crel/mesh_kb.hpp"
#include "crel/pairgen.hpp"

namespace crel::finetune {

struct ScheduleConfig {
    double lr_max_alpha = 3e-5;
    double lr_min_alpha = 2e-5;
    double gamma_alpha = 0.9;
    double lr_max_beta = 3e-5;
    double lr_min_beta = 1e-5;
    double gamma_beta = 0.8;
    int plateau_patience = 3;
    double plateau_threshold = 1e-4; // relative improvement required to reset patience
    std::int64_t eval_every = 10'000;
    int batch_size = 128;
    std::int64_t max_steps_step1 = 200'000;
    std::int64_t max_steps_step2 = 400'000;
    bool adam = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool theta_only_stage2 = false;

    void validate() const {
        if (!(lr_max_alpha > lr_min_alpha && lr_min_alpha > 0.0))
            throw ConfigError("need lr_max_alpha > lr_min_alpha > 0");
        if (!(lr_max_beta > lr_min_beta && lr_min_beta > 0.0))
            throw ConfigError("need lr_max_beta > lr_min_beta > 0");
        if (!(gamma_alpha > 0.0 && gamma_alpha < 1.0) || !(gamma_beta > 0.0 && gamma_beta < 1.0))
            throw ConfigError("decay factors must be in (0, 1)");
        if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }
};

// Reduce-on-plateau over a minimized metric. The rate is cut by `gamma` when
// `patience` consecutive observations fail to improve on the running best by
// the relative `threshold`; a cut that would land below `min_lr` finishes
// the schedule instead of being applied.
class PlateauScheduler {
public:
    PlateauScheduler() = default;
    PlateauScheduler(double lr, double gamma, double min_lr, int patience, double threshold)
        : lr_(lr), gamma_(gamma), min_lr_(min_lr), patience_(patience), threshold_(threshold) {}

    double lr() const { return lr_; }
    bool finished() const { return finished_; }
    int bad_count() const { return bad_count_; }
    double best() const { return best_; }

    // Returns true when this observation reduced the learning rate.
    bool observe(double metric) {
        if (finished_) return false;
        if (metric < best_ * (1.0 - threshold_)) {
            best_ = metric;
            bad_count_ = 0;
            return false;
        }
        if (++bad_count_ < patience_) return false;
        bad_count_ = 0;
        const double next = gamma_ * lr_;
        if (next < min_lr_) {
            finished_ = true;
            return false;
        }
        lr_ = next;
        return true;
    }

    struct State {
        double lr, best;
        int bad_count;
        bool finished;
    };
    State state() const { return {lr_, best_, bad_count_, finished_}; }
    void restore(const State& s) {
        lr_ = s.lr;
        best_ = s.best;
        bad_count_ = s.bad_count;
        finished_ = s.finished;
    }

private:
    double lr_ = 0.0;
    double gamma_ = 0.9;
    double min_lr_ = 0.0;
    int patience_ = 3;
    double threshold_ = 1e-4;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_count_ = 0;
    bool finished_ = false;
};

struct PairItem {
    encoder::SequenceInput input;
    float label = 0.0f;
};

struct PairDataset {
    std::vector<PairItem> train;
    std::vector<PairItem> valid;
};

// Builds classifier inputs from generated pair examples: each side is the
// concept token followed by the tokenized preferred name.
PairDataset build_pair_dataset(const std::vector<pairs::PairExample>& train,
                               const std::vector<pairs::PairExample>& valid,
                               const mesh::KnowledgeBase& kb, const encoder::TokenTable& table,
                               int max_len);

// SGD or Adam over the selected parameter groups.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(const ScheduleConfig& sched, const encoder::EncoderConfig& cfg, std::size_t vocab);

    void step(encoder::ParamTensors<float>& params, encoder::ParamTensors<float>& grads,
              double lr, unsigned groups);
    void reset();

    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    bool adam_ = false;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    encoder::ParamTensors<float> m_, v_;
};

struct EvalEvent {
    int phase = 0;
    int stage = 0; // 0 during step 1
    std::int64_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double valid_accuracy = 0.0;
    std::optional<double> selection_rho;
};

struct SelectionBenchmark {
    eval::Dataset dataset;
    eval::ScoreMode mode = eval::ScoreMode::word;
    double fusion_k = 60.0;
};

struct RunTrace {
    std::vector<double> stage_start_lrs;
    int folds = 0;
    std::vector<EvalEvent> evals;
};

// Two-step fine-tuning driver. Step 1 trains only the transformer stack on
// the classification objective; step 2 alternates theta training with
// embedding folds (E <- theta E, theta <- I) across annealing stages whose
// start rates follow gamma_beta^(s-1) * lr_max_beta. All state needed to
// resume from the last checkpoint lives under `output_dir`.
class FinetuneRun {
public:
    FinetuneRun(encoder::EncoderModel<float> model, encoder::TokenTable table, PairDataset data,
                ScheduleConfig sched, std::optional<SelectionBenchmark> selection,
                std::string output_dir, std::uint64_t seed, const std::string& vocab_tag = "MeSH");

    static FinetuneRun resume(const std::string& output_dir, PairDataset data,
                              ScheduleConfig sched, std::optional<SelectionBenchmark> selection,
                              const std::string& vocab_tag = "MeSH");

    // Executes the remaining phases to completion and exports the selected
    // embeddings to <output_dir>/embeddings.vec.
    void run();

    const encoder::EncoderModel<float>& model() const { return model_; }
    const encoder::TokenTable& table() const { return table_; }
    const RunTrace& trace() const { return trace_; }
    double best_rho() const { return best_rho_; }
    std::string embeddings_path() const;
    std::string checkpoint_path() const;

    // Test observers.
    std::function<void(int stage, const Matrix<float>& theta_before_fold)> on_fold;
    std::function<void(const EvalEvent&)> on_eval;

    // When positive, run() returns right after the checkpoint at this step,
    // simulating an interrupted process; resume() continues it.
    std::int64_t halt_after_step = -1;

    // Effective embedding table with theta transiently folded in.
    Matrix<float> effective_embeddings() const;

private:
    bool halted() const { return halt_after_step > 0 && step_ >= halt_after_step; }
    void run_phase1();
    void run_phase2();
    void do_eval_checkpoint();
    double valid_loss(double* accuracy) const;
    std::optional<double> selection_rho() const;
    void fold_embeddings();
    void next_batch(std::vector<encoder::SequenceInput>& inputs, std::vector<float>& labels);
    void save_state() const;
    void load_state(const std::string& path);
    void start_stage(int stage);
    unsigned active_groups() const;
    void export_embeddings();

    encoder::EncoderModel<float> model_;
    encoder::TokenTable table_;
    PairDataset data_;
    ScheduleConfig sched_;
    std::optional<SelectionBenchmark> selection_;
    std::string output_dir_;
    std::string vocab_tag_;
    std::uint64_t seed_ = 1;

    int phase_ = 1; // 1, 2, or 3 when done
    std::int64_t step_ = 0;
    std::int64_t phase_steps_ = 0;
    int stage_ = 0;
    std::int64_t epoch_ = 0;
    std::size_t cursor_ = 0;
    PlateauScheduler scheduler_;
    Rng rng_{1};
    double best_rho_ = -2.0;
    bool has_best_ = false;
    double train_loss_accum_ = 0.0;
    std::int64_t train_loss_batches_ = 0;

    Optimizer optimizer_;
    encoder::ParamTensors<float> grads_;
    std::vector<std::size_t> permutation_;
    RunTrace trace_;
};

} // namespace crel::finetune
