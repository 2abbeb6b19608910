#include "crel/finetune.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "crel/corpus.hpp"
#include "crel/embed.hpp"

namespace crel::finetune {

namespace fs = std::filesystem;

namespace {

std::vector<std::pair<std::span<float>, encoder::ParamGroup>> collect_arrays(
    encoder::ParamTensors<float>& p) {
    std::vector<std::pair<std::span<float>, encoder::ParamGroup>> out;
    p.for_each_array([&](std::span<float> s, encoder::ParamGroup g) { out.emplace_back(s, g); });
    return out;
}

} // namespace

PairDataset build_pair_dataset(const std::vector<pairs::PairExample>& train,
                               const std::vector<pairs::PairExample>& valid,
                               const mesh::KnowledgeBase& kb, const encoder::TokenTable& table,
                               int max_len) {
    auto convert = [&](const std::vector<pairs::PairExample>& src) {
        std::vector<PairItem> out;
        out.reserve(src.size());
        for (const auto& e : src) {
            const auto& ra = kb.record(e.pair.a);
            const auto& rb = kb.record(e.pair.b);
            PairItem item;
            item.input = encoder::build_pair_input(table, kb.token_for(e.pair.a),
                                                   corpus::tokenize(ra.name), kb.token_for(e.pair.b),
                                                   corpus::tokenize(rb.name), max_len);
            item.label = static_cast<float>(e.label);
            out.push_back(std::move(item));
        }
        return out;
    };
    return {convert(train), convert(valid)};
}

Optimizer::Optimizer(const ScheduleConfig& sched, const encoder::EncoderConfig& cfg,
                     std::size_t vocab)
    : adam_(sched.adam), beta1_(sched.adam_beta1), beta2_(sched.adam_beta2), eps_(sched.adam_eps) {
    if (adam_) {
        m_ = encoder::make_params<float>(cfg, vocab);
        v_ = encoder::make_params<float>(cfg, vocab);
        m_.zero();
        v_.zero();
    }
}

void Optimizer::reset() {
    t_ = 0;
    if (adam_) {
        m_.zero();
        v_.zero();
    }
}

void Optimizer::step(encoder::ParamTensors<float>& params, encoder::ParamTensors<float>& grads,
                     double lr, unsigned groups) {
    const auto ps = collect_arrays(params);
    const auto gs = collect_arrays(grads);
    if (!adam_) {
        for (std::size_t a = 0; a < ps.size(); ++a) {
            if (!(ps[a].second & groups)) continue;
            auto p = ps[a].first;
            auto g = gs[a].first;
            for (std::size_t i = 0; i < p.size(); ++i)
                p[i] -= static_cast<float>(lr) * g[i];
        }
        return;
    }
    ++t_;
    const auto ms = collect_arrays(m_), vs = collect_arrays(v_);
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t a = 0; a < ps.size(); ++a) {
        if (!(ps[a].second & groups)) continue;
        auto p = ps[a].first;
        auto g = gs[a].first;
        auto m = ms[a].first;
        auto v = vs[a].first;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
            const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            p[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
        }
    }
}

void Optimizer::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(&t_), sizeof t_);
    const unsigned char flag = adam_ ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&flag), 1);
    if (adam_) {
        m_.for_each_array([&](std::span<const float> s, encoder::ParamGroup) {
            out.write(reinterpret_cast<const char*>(s.data()),
                      static_cast<std::streamsize>(s.size() * sizeof(float)));
        });
        v_.for_each_array([&](std::span<const float> s, encoder::ParamGroup) {
            out.write(reinterpret_cast<const char*>(s.data()),
                      static_cast<std::streamsize>(s.size() * sizeof(float)));
        });
    }
    if (!out) throw IoError("write failure: " + path);
}

void Optimizer::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open optimizer state: " + path);
    in.read(reinterpret_cast<char*>(&t_), sizeof t_);
    unsigned char flag = 0;
    in.read(reinterpret_cast<char*>(&flag), 1);
    if ((flag == 1) != adam_) throw ParseError(path + ": optimizer kind mismatch");
    if (adam_) {
        m_.for_each_array([&](std::span<float> s, encoder::ParamGroup) {
            in.read(reinterpret_cast<char*>(s.data()),
                    static_cast<std::streamsize>(s.size() * sizeof(float)));
        });
        v_.for_each_array([&](std::span<float> s, encoder::ParamGroup) {
            in.read(reinterpret_cast<char*>(s.data()),
                    static_cast<std::streamsize>(s.size() * sizeof(float)));
        });
    }
    if (!in) throw ParseError(path + ": truncated optimizer state");
}

FinetuneRun::FinetuneRun(encoder::EncoderModel<float> model, encoder::TokenTable table,
                         PairDataset data, ScheduleConfig sched,
                         std::optional<SelectionBenchmark> selection, std::string output_dir,
                         std::uint64_t seed, const std::string& vocab_tag)
    : model_(std::move(model)),
      table_(std::move(table)),
      data_(std::move(data)),
      sched_(std::move(sched)),
      selection_(std::move(selection)),
      output_dir_(std::move(output_dir)),
      vocab_tag_(vocab_tag),
      seed_(seed),
      rng_(Rng::derive(seed, 7)) {
    sched_.validate();
    if (data_.train.empty()) throw ConfigError("fine-tuning requires a non-empty training set");
    if (data_.valid.empty())
        throw ConfigError("fine-tuning requires a non-empty validation set for the plateau schedule");
    fs::create_directories(output_dir_);
    optimizer_ = Optimizer(sched_, model_.config, table_.size());
    grads_ = encoder::make_params<float>(model_.config, table_.size());
    grads_.zero();
    scheduler_ = PlateauScheduler(sched_.lr_max_alpha, sched_.gamma_alpha, sched_.lr_min_alpha,
                                  sched_.plateau_patience, sched_.plateau_threshold);
}

std::string FinetuneRun::embeddings_path() const { return output_dir_ + "/embeddings.vec"; }
std::string FinetuneRun::checkpoint_path() const { return output_dir_ + "/checkpoint.crl1"; }

unsigned FinetuneRun::active_groups() const {
    if (phase_ == 1) return encoder::kGroupTransformer;
    return sched_.theta_only_stage2
               ? encoder::kGroupTheta
               : (encoder::kGroupTheta | encoder::kGroupTransformer);
}

Matrix<float> FinetuneRun::effective_embeddings() const {
    const auto& E = model_.params.token_embeddings;
    const auto& theta = model_.params.theta;
    Matrix<float> out(E.rows(), E.cols());
    for (std::size_t r = 0; r < E.rows(); ++r) matvec(theta, E.row(r), out.row(r));
    return out;
}

void FinetuneRun::fold_embeddings() {
    model_.params.token_embeddings = effective_embeddings();
    model_.params.theta = Matrix<float>::identity(model_.params.theta.rows());
}

void FinetuneRun::next_batch(std::vector<encoder::SequenceInput>& inputs,
                             std::vector<float>& labels) {
    inputs.clear();
    labels.clear();
    for (int i = 0; i < sched_.batch_size; ++i) {
        if (cursor_ >= permutation_.size()) {
            ++epoch_;
            cursor_ = 0;
            permutation_.resize(data_.train.size());
            for (std::size_t j = 0; j < permutation_.size(); ++j) permutation_[j] = j;
            Rng shuffle_rng(Rng::derive(seed_, 1000 + static_cast<std::uint64_t>(epoch_)));
            shuffle_rng.shuffle(permutation_);
            if (!inputs.empty()) break; // keep batches within one epoch
        }
        const auto& item = data_.train[permutation_[cursor_++]];
        inputs.push_back(item.input);
        labels.push_back(item.label);
    }
}

double FinetuneRun::valid_loss(double* accuracy) const {
    double total = 0.0;
    std::size_t correct = 0;
    for (const auto& item : data_.valid) {
        encoder::ForwardCache<float> cache;
        const float prob = encoder_forward(model_, item.input, cache, nullptr);
        total += static_cast<double>(encoder::bce_from_logit(cache.logit, item.label));
        if ((prob >= 0.5f) == (item.label >= 0.5f)) ++correct;
    }
    if (accuracy)
        *accuracy = static_cast<double>(correct) / static_cast<double>(data_.valid.size());
    return total / static_cast<double>(data_.valid.size());
}

std::optional<double> FinetuneRun::selection_rho() const {
    if (!selection_) return std::nullopt;
    eval::VecEmbeddings provider(table_.tokens(), effective_embeddings());
    const auto res = eval::evaluate(selection_->dataset, provider, selection_->mode,
                                    eval::Policy::finetuned, vocab_tag_, selection_->fusion_k);
    return res.rho;
}

void FinetuneRun::do_eval_checkpoint() {
    EvalEvent ev;
    ev.phase = phase_;
    ev.stage = stage_;
    ev.step = step_;
    ev.lr = scheduler_.lr();
    ev.train_loss = train_loss_batches_ ? train_loss_accum_ / static_cast<double>(train_loss_batches_)
                                        : 0.0;
    train_loss_accum_ = 0.0;
    train_loss_batches_ = 0;
    ev.valid_loss = valid_loss(&ev.valid_accuracy);
    if (!std::isfinite(ev.valid_loss)) {
        save_state();
        encoder::save_checkpoint(checkpoint_path(), model_, table_, "");
        throw Error("validation loss diverged (non-finite) at step " + std::to_string(step_) +
                    "; checkpoint written to " + checkpoint_path());
    }
    ev.selection_rho = selection_rho();
    if (ev.selection_rho && (*ev.selection_rho > best_rho_ || !has_best_)) {
        best_rho_ = *ev.selection_rho;
        has_best_ = true;
        embed::write_vec_file(output_dir_ + "/best.vec", table_.tokens(), effective_embeddings());
    }

    scheduler_.observe(ev.valid_loss);
    trace_.evals.push_back(ev);
    if (on_eval) on_eval(ev);

    // Append one JSON line per evaluation.
    std::ofstream log(output_dir_ + "/train_log.jsonl", std::ios::app);
    nlohmann::json row{{"step", step_},     {"phase", phase_},
                       {"stage", stage_},   {"lr", ev.lr},
                       {"train_loss", ev.train_loss}, {"valid_loss", ev.valid_loss},
                       {"valid_accuracy", ev.valid_accuracy}};
    if (ev.selection_rho) row["selection_rho"] = *ev.selection_rho;
    log << row.dump() << '\n';

    encoder::save_checkpoint(checkpoint_path(), model_, table_, "");
    optimizer_.save(output_dir_ + "/optimizer.bin");
    save_state();
}

void FinetuneRun::save_state() const {
    nlohmann::json st;
    st["phase"] = phase_;
    st["step"] = step_;
    st["phase_steps"] = phase_steps_;
    st["stage"] = stage_;
    st["epoch"] = epoch_;
    st["cursor"] = cursor_;
    st["rng_state"] = rng_.state();
    st["best_rho"] = best_rho_;
    st["has_best"] = has_best_;
    const auto ss = scheduler_.state();
    st["scheduler"] = {{"lr", ss.lr}, {"best", ss.best}, {"bad", ss.bad_count},
                       {"finished", ss.finished}};
    st["seed"] = seed_;
    st["stage_start_lrs"] = trace_.stage_start_lrs;
    st["folds"] = trace_.folds;
    std::ofstream out(output_dir_ + "/state.json");
    if (!out) throw IoError("cannot write state: " + output_dir_ + "/state.json");
    out << st.dump(2) << '\n';
}

void FinetuneRun::load_state(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open state: " + path);
    nlohmann::json st;
    in >> st;
    phase_ = st.at("phase").get<int>();
    step_ = st.at("step").get<std::int64_t>();
    phase_steps_ = st.at("phase_steps").get<std::int64_t>();
    stage_ = st.at("stage").get<int>();
    epoch_ = st.at("epoch").get<std::int64_t>();
    cursor_ = st.at("cursor").get<std::size_t>();
    rng_.set_state(st.at("rng_state").get<std::uint64_t>());
    best_rho_ = st.at("best_rho").get<double>();
    has_best_ = st.at("has_best").get<bool>();
    seed_ = st.at("seed").get<std::uint64_t>();
    trace_.stage_start_lrs = st.value("stage_start_lrs", std::vector<double>{});
    trace_.folds = st.value("folds", 0);
    PlateauScheduler::State ss{};
    ss.lr = st.at("scheduler").at("lr").get<double>();
    ss.best = st.at("scheduler").at("best").get<double>();
    ss.bad_count = st.at("scheduler").at("bad").get<int>();
    ss.finished = st.at("scheduler").at("finished").get<bool>();
    const bool beta = phase_ >= 2;
    scheduler_ = PlateauScheduler(ss.lr, beta ? sched_.gamma_beta : sched_.gamma_alpha,
                                  beta ? sched_.lr_min_beta : sched_.lr_min_alpha,
                                  sched_.plateau_patience, sched_.plateau_threshold);
    scheduler_.restore(ss);

    // Rebuild the current epoch's permutation; the cursor indexes into it.
    permutation_.resize(data_.train.size());
    for (std::size_t j = 0; j < permutation_.size(); ++j) permutation_[j] = j;
    if (epoch_ > 0) {
        Rng shuffle_rng(Rng::derive(seed_, 1000 + static_cast<std::uint64_t>(epoch_)));
        shuffle_rng.shuffle(permutation_);
    } else {
        permutation_.clear();
        cursor_ = 0;
    }
}

FinetuneRun FinetuneRun::resume(const std::string& output_dir, PairDataset data,
                                ScheduleConfig sched, std::optional<SelectionBenchmark> selection,
                                const std::string& vocab_tag) {
    auto ck = encoder::load_checkpoint(output_dir + "/checkpoint.crl1");
    FinetuneRun run(std::move(ck.model), std::move(ck.table), std::move(data), std::move(sched),
                    std::move(selection), output_dir, 1, vocab_tag);
    run.load_state(output_dir + "/state.json");
    const std::string opt_path = output_dir + "/optimizer.bin";
    if (fs::exists(opt_path)) run.optimizer_.load(opt_path);
    return run;
}

void FinetuneRun::start_stage(int stage) {
    stage_ = stage;
    const double start_lr =
        std::pow(sched_.gamma_beta, static_cast<double>(stage - 1)) * sched_.lr_max_beta;
    scheduler_ = PlateauScheduler(start_lr, sched_.gamma_beta, sched_.lr_min_beta,
                                  sched_.plateau_patience, sched_.plateau_threshold);
    optimizer_.reset();
    trace_.stage_start_lrs.push_back(start_lr);
}

void FinetuneRun::run_phase1() {
    std::vector<encoder::SequenceInput> inputs;
    std::vector<float> labels;
    Rng* drop = model_.config.dropout > 0.0 ? &rng_ : nullptr;
    while (!scheduler_.finished() && phase_steps_ < sched_.max_steps_step1) {
        next_batch(inputs, labels);
        grads_.zero();
        const auto stats = encoder::batch_forward_backward(model_, inputs, labels, active_groups(),
                                                           encoder::Reduction::mean, grads_, drop);
        optimizer_.step(model_.params, grads_, scheduler_.lr(), active_groups());
        train_loss_accum_ += stats.loss;
        ++train_loss_batches_;
        ++step_;
        ++phase_steps_;
        if (step_ % sched_.eval_every == 0) do_eval_checkpoint();
        if (halted()) return;
    }
    phase_ = 2;
    phase_steps_ = 0;
    epoch_ = 0;
    cursor_ = 0;
    permutation_.clear();
    start_stage(1);
    save_state();
}

void FinetuneRun::run_phase2() {
    std::vector<encoder::SequenceInput> inputs;
    std::vector<float> labels;
    Rng* drop = model_.config.dropout > 0.0 ? &rng_ : nullptr;
    while (phase_ == 2 && phase_steps_ < sched_.max_steps_step2) {
        if (scheduler_.finished()) {
            // Stage boundary: fold embeddings, reset theta, advance. Checked
            // at the loop head so a resumed run folds before training.
            if (on_fold) on_fold(stage_, model_.params.theta);
            fold_embeddings();
            ++trace_.folds;
            const int next_stage = stage_ + 1;
            const double next_lr =
                std::pow(sched_.gamma_beta, static_cast<double>(next_stage - 1)) * sched_.lr_max_beta;
            if (next_lr < sched_.lr_min_beta) {
                phase_ = 3;
            } else {
                start_stage(next_stage);
            }
            encoder::save_checkpoint(checkpoint_path(), model_, table_, "");
            optimizer_.save(output_dir_ + "/optimizer.bin");
            save_state();
            continue;
        }
        next_batch(inputs, labels);
        grads_.zero();
        const auto stats = encoder::batch_forward_backward(model_, inputs, labels, active_groups(),
                                                           encoder::Reduction::mean, grads_, drop);
        optimizer_.step(model_.params, grads_, scheduler_.lr(), active_groups());
        train_loss_accum_ += stats.loss;
        ++train_loss_batches_;
        ++step_;
        ++phase_steps_;
        if (step_ % sched_.eval_every == 0) do_eval_checkpoint();
        if (halted()) return;
    }
    if (phase_ == 2) phase_ = 3; // step cap reached
}

void FinetuneRun::export_embeddings() {
    if (has_best_ && fs::exists(output_dir_ + "/best.vec")) {
        fs::copy_file(output_dir_ + "/best.vec", embeddings_path(),
                      fs::copy_options::overwrite_existing);
    } else {
        embed::write_vec_file(embeddings_path(), table_.tokens(), effective_embeddings());
    }
}

void FinetuneRun::run() {
    if (phase_ == 1) run_phase1();
    if (halted()) return;
    if (phase_ == 2) run_phase2();
    if (halted()) return;
    export_embeddings();
    encoder::save_checkpoint(checkpoint_path(), model_, table_, "");
    optimizer_.save(output_dir_ + "/optimizer.bin");
    save_state();
}

} // namespace crel::finetune
