#include "crel/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crel/corpus.hpp"
#include "crel/embed.hpp"
#include "crel/encoder.hpp"
#include "crel/errors.hpp"
#include "crel/evalkit.hpp"
#include "crel/finetune.hpp"
#include "crel/mesh_kb.hpp"
#include "crel/pairgen.hpp"
#include "crel/rng.hpp"
#include "crel/skipgram.hpp"

namespace crel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"seed", 42},
        {"workers", 1},
        {"deterministic", true},
        {"vocab_tag", "MeSH"},
        {"paths",
         {{"kb", ""},
          {"citations", ""},
          {"corpus", "corpus.txt"},
          {"pairs_train", "pairs_train.tsv"},
          {"pairs_valid", "pairs_valid.tsv"},
          {"embeddings", "pretrained.vec"},
          {"model", ""},
          {"output_dir", "finetune_out"},
          {"benchmarks", json::object()},
          {"selection_benchmark", "UMNS"}}},
        {"pretrain",
         {{"dim", 396}, {"window", 30}, {"epochs", 5}, {"min_count", 5}, {"minn", 3},
          {"maxn", 6}, {"negatives", 5}, {"initial_lr", 0.05}, {"subsample_threshold", 1e-4},
          {"unigram_power", 0.75}, {"bucket_count", 2000000}}},
        {"encoder",
         {{"layers", 12}, {"heads", 12}, {"dim", 396}, {"ffn_dim", 0}, {"max_len", 64},
          {"dropout", 0.1}}},
        {"schedule",
         {{"lr_max_alpha", 3e-5}, {"lr_min_alpha", 2e-5}, {"gamma_alpha", 0.9},
          {"lr_max_beta", 3e-5}, {"lr_min_beta", 1e-5}, {"gamma_beta", 0.8},
          {"plateau_patience", 3}, {"plateau_threshold", 1e-4}, {"eval_every", 10000},
          {"batch_size", 128}, {"max_steps_step1", 200000}, {"max_steps_step2", 400000},
          {"adam", false}, {"theta_only_stage2", false}}},
        {"pairs", {{"split_fraction", 0.05}, {"min_annotations", 2}}},
        {"eval", {{"fusion_k", 60.0}, {"policy", "auto"}}},
    };
}

void merge_into(json& base, const json& overlay) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
            merge_into(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

json* resolve_key(json& root, const std::string& dotted, bool create) {
    json* cur = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
        if (dot == std::string::npos) {
            if (!create && !cur->contains(key)) return nullptr;
            return &(*cur)[key];
        }
        if (!create && !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

json parse_scalar(const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    try {
        std::size_t used = 0;
        if (value.find_first_of(".eE") != std::string::npos) {
            const double d = std::stod(value, &used);
            if (used == value.size()) return d;
        } else {
            const long long i = std::stoll(value, &used);
            if (used == value.size()) return i;
        }
    } catch (const std::exception&) {
    }
    return value;
}

struct Context {
    json config;
    std::map<std::string, std::string> input_digests;

    std::string path(const std::string& key) const {
        return config.at("paths").value(key, std::string{});
    }
    std::string required_path(const std::string& key) const {
        const std::string p = path(key);
        if (p.empty()) throw ConfigError("config paths." + key + " is required");
        return p;
    }
    std::string existing_path(const std::string& key) {
        const std::string p = required_path(key);
        if (!fs::exists(p)) throw IoError("paths." + key + " does not exist: " + p);
        input_digests[p] = file_digest_hex(p);
        return p;
    }
    std::uint64_t seed() const { return config.at("seed").get<std::uint64_t>(); }
    int workers() const {
        return config.at("deterministic").get<bool>() ? 1 : config.at("workers").get<int>();
    }
    std::string vocab_tag() const { return config.at("vocab_tag").get<std::string>(); }

    embed::TrainerConfig trainer_config() const {
        const auto& p = config.at("pretrain");
        embed::TrainerConfig tc;
        tc.dim = p.at("dim").get<int>();
        tc.window = p.at("window").get<int>();
        tc.epochs = p.at("epochs").get<int>();
        tc.min_count = p.at("min_count").get<int>();
        tc.minn = p.at("minn").get<int>();
        tc.maxn = p.at("maxn").get<int>();
        tc.negatives = p.at("negatives").get<int>();
        tc.initial_lr = p.at("initial_lr").get<double>();
        tc.subsample_threshold = p.at("subsample_threshold").get<double>();
        tc.unigram_power = p.at("unigram_power").get<double>();
        tc.bucket_count = p.at("bucket_count").get<std::uint32_t>();
        tc.seed = Rng::derive(seed(), 2);
        tc.workers = workers();
        return tc;
    }

    encoder::EncoderConfig encoder_config() const {
        const auto& e = config.at("encoder");
        encoder::EncoderConfig ec;
        ec.layers = e.at("layers").get<int>();
        ec.heads = e.at("heads").get<int>();
        ec.dim = e.at("dim").get<int>();
        ec.ffn_dim = e.at("ffn_dim").get<int>();
        ec.max_len = e.at("max_len").get<int>();
        ec.dropout = e.at("dropout").get<double>();
        ec.seed = Rng::derive(seed(), 4);
        return ec;
    }

    finetune::ScheduleConfig schedule_config() const {
        const auto& s = config.at("schedule");
        finetune::ScheduleConfig sc;
        sc.lr_max_alpha = s.at("lr_max_alpha").get<double>();
        sc.lr_min_alpha = s.at("lr_min_alpha").get<double>();
        sc.gamma_alpha = s.at("gamma_alpha").get<double>();
        sc.lr_max_beta = s.at("lr_max_beta").get<double>();
        sc.lr_min_beta = s.at("lr_min_beta").get<double>();
        sc.gamma_beta = s.at("gamma_beta").get<double>();
        sc.plateau_patience = s.at("plateau_patience").get<int>();
        sc.plateau_threshold = s.at("plateau_threshold").get<double>();
        sc.eval_every = s.at("eval_every").get<std::int64_t>();
        sc.batch_size = s.at("batch_size").get<int>();
        sc.max_steps_step1 = s.at("max_steps_step1").get<std::int64_t>();
        sc.max_steps_step2 = s.at("max_steps_step2").get<std::int64_t>();
        sc.adam = s.at("adam").get<bool>();
        sc.theta_only_stage2 = s.at("theta_only_stage2").get<bool>();
        return sc;
    }

    void write_manifest(const std::string& command, const std::string& primary_output) const {
        json manifest;
        manifest["command"] = command;
        manifest["config"] = config;
        json inputs = json::object();
        for (const auto& [path, digest] : input_digests) inputs[path] = digest;
        manifest["inputs"] = inputs;
        std::ofstream out(primary_output + ".manifest.json");
        if (!out) throw IoError("cannot write manifest next to " + primary_output);
        out << manifest.dump(2) << '\n';
    }
};

mesh::KnowledgeBase load_kb(Context& ctx) {
    return mesh::load_knowledge_base(ctx.existing_path("kb"), ctx.vocab_tag());
}

int cmd_corpus(Context& ctx) {
    const auto kb = load_kb(ctx);
    const std::string citations = ctx.existing_path("citations");
    const std::string out_path = ctx.required_path("corpus");
    const auto min_ann = ctx.config.at("pairs").at("min_annotations").get<std::size_t>();
    const auto stats = corpus::build_corpus_file(citations, kb, out_path,
                                                 corpus::min_annotation_predicate(min_ann));
    ctx.write_manifest("corpus", out_path);
    std::cout << "corpus: " << stats.citations_kept << "/" << stats.citations_seen
              << " citations kept, " << stats.definition_documents << " definition documents -> "
              << out_path << "\n";
    return 0;
}

int cmd_pretrain(Context& ctx) {
    const auto kb = load_kb(ctx);
    const std::string corpus_path = ctx.existing_path("corpus");
    const std::string vec_path = ctx.required_path("embeddings");
    const auto tc = ctx.trainer_config();
    tc.validate();

    const int heads = ctx.config.at("encoder").at("heads").get<int>();
    if (heads > 0 && tc.dim % heads != 0)
        std::cerr << "warning: pretrain dim " << tc.dim << " is not divisible by encoder heads "
                  << heads << "\n";

    const auto docs = embed::load_corpus_documents(corpus_path);
    auto vocab = embed::build_vocabulary(docs, kb, tc);
    embed::EmbeddingModel<float> model(std::move(vocab), tc);
    model.set_vocab_tag_hint(ctx.vocab_tag());
    model.init_weights(tc.seed);
    const auto stats = embed::train_skipgram(model, docs, tc);

    std::vector<std::string> tokens;
    tokens.reserve(model.vocab().size());
    for (const auto& e : model.vocab().entries()) tokens.push_back(e.token);
    embed::write_vec_file(vec_path, tokens, embed::composed_table(model));
    const std::string model_path = ctx.path("model");
    if (!model_path.empty()) embed::save_model_file(model_path, model, tc);

    ctx.write_manifest("pretrain", vec_path);
    std::cout << "pretrain: " << model.vocab().size() << " tokens, dim " << tc.dim
              << ", avg loss " << stats.average_loss() << " over " << stats.pairs << " pairs -> "
              << vec_path << "\n";
    return 0;
}

int cmd_pairs(Context& ctx) {
    const auto kb = load_kb(ctx);
    const std::string citations_path = ctx.existing_path("citations");
    const std::string corpus_path = ctx.existing_path("corpus");
    const std::string train_path = ctx.required_path("pairs_train");
    const std::string valid_path = ctx.required_path("pairs_valid");

    const auto citations = corpus::load_citations(citations_path);

    // Concept frequencies come from the pre-training vocabulary over the
    // same corpus the embeddings were trained on.
    const auto tc = ctx.trainer_config();
    const auto vocab = embed::build_vocabulary_file(corpus_path, kb, tc);
    std::map<std::string, std::uint64_t> freq;
    for (const auto& rec : kb.records()) {
        const int id = vocab.id_of(kb.token_for(rec.code));
        freq[rec.code] = id >= 0 ? vocab.entry(id).frequency : 0;
    }

    const auto examples =
        pairs::assemble_examples(citations, kb, freq, Rng::derive(ctx.seed(), 3));
    const double split = ctx.config.at("pairs").at("split_fraction").get<double>();
    auto ds = pairs::split_dataset(examples, split, Rng::derive(ctx.seed(), 5));
    pairs::write_pairs_tsv_file(train_path, ds.train);
    pairs::write_pairs_tsv_file(valid_path, ds.validation);
    ctx.write_manifest("pairs", train_path);
    std::cout << "pairs: " << ds.train.size() << " train, " << ds.validation.size()
              << " validation -> " << train_path << ", " << valid_path << "\n";
    return 0;
}

eval::Policy resolve_policy(const Context& ctx, const eval::EmbeddingProvider& provider) {
    const std::string policy = ctx.config.at("eval").at("policy").get<std::string>();
    if (policy == "pretrain") return eval::Policy::pretrain;
    if (policy == "finetuned") return eval::Policy::finetuned;
    if (policy == "auto")
        return provider.vector_for("[UNK]") ? eval::Policy::finetuned : eval::Policy::pretrain;
    throw ConfigError("eval.policy must be pretrain, finetuned, or auto");
}

int cmd_finetune(Context& ctx, bool resume) {
    const auto kb = load_kb(ctx);
    const std::string train_path = ctx.existing_path("pairs_train");
    const std::string valid_path = ctx.existing_path("pairs_valid");
    const std::string out_dir = ctx.required_path("output_dir");
    auto sched = ctx.schedule_config();

    std::optional<finetune::SelectionBenchmark> selection;
    const std::string sel_alias =
        ctx.config.at("paths").at("selection_benchmark").get<std::string>();
    if (!sel_alias.empty()) {
        const auto& benchmarks = ctx.config.at("paths").at("benchmarks");
        if (!benchmarks.contains(sel_alias))
            throw ConfigError("selection benchmark '" + sel_alias +
                              "' has no configured file under paths.benchmarks");
        const std::string sel_path = benchmarks.at(sel_alias).get<std::string>();
        if (!fs::exists(sel_path))
            throw ConfigError("selection benchmark file missing: " + sel_path);
        selection = finetune::SelectionBenchmark{
            eval::load_benchmark_csv(sel_path, sel_alias), eval::ScoreMode::word,
            ctx.config.at("eval").at("fusion_k").get<double>()};
    }

    auto dataset_from = [&](const encoder::TokenTable& table, int max_len) {
        return finetune::build_pair_dataset(pairs::read_pairs_tsv_file(train_path),
                                            pairs::read_pairs_tsv_file(valid_path), kb, table,
                                            max_len);
    };

    if (resume) {
        auto ck = encoder::load_checkpoint(out_dir + "/checkpoint.crl1");
        auto run = finetune::FinetuneRun::resume(
            out_dir, dataset_from(ck.table, ck.model.config.max_len), sched, std::move(selection),
            ctx.vocab_tag());
        run.run();
        ctx.write_manifest("finetune", run.embeddings_path());
        std::cout << "finetune: resumed -> " << run.embeddings_path() << "\n";
        return 0;
    }

    const std::string vec_path = ctx.existing_path("embeddings");
    const auto vec = embed::read_vec_file(vec_path);
    auto ec = ctx.encoder_config();
    if (ec.dim != static_cast<int>(vec.vectors.cols()))
        throw ConfigError("encoder dim " + std::to_string(ec.dim) +
                          " does not match embedding dim " + std::to_string(vec.vectors.cols()));

    auto table = encoder::TokenTable::with_specials(vec.tokens);
    encoder::EncoderModel<float> model(ec, table.size());
    encoder::init_weights(model.params, ec.seed);
    // Specials get sigma = 0.02 rows; pre-trained vectors fill the rest.
    for (std::size_t i = 0; i < vec.tokens.size(); ++i) {
        const auto src = vec.vectors.row(i);
        auto dst = model.params.token_embeddings.row(i + 4);
        std::copy(src.begin(), src.end(), dst.begin());
    }

    finetune::FinetuneRun run(std::move(model), table, dataset_from(table, ec.max_len), sched,
                              std::move(selection), out_dir, Rng::derive(ctx.seed(), 6),
                              ctx.vocab_tag());
    run.run();
    ctx.write_manifest("finetune", run.embeddings_path());
    std::cout << "finetune: " << run.trace().folds << " folds, best rho "
              << (run.best_rho() > -2.0 ? std::to_string(run.best_rho()) : std::string("n/a"))
              << " -> " << run.embeddings_path() << "\n";
    return 0;
}

int cmd_eval(Context& ctx, const std::string& vec_path, std::vector<std::string> datasets,
             std::vector<std::string> modes, const std::string& report_path) {
    const auto& benchmarks = ctx.config.at("paths").at("benchmarks");
    if (datasets.empty())
        for (auto it = benchmarks.begin(); it != benchmarks.end(); ++it) datasets.push_back(it.key());
    if (datasets.empty()) throw ConfigError("no benchmarks configured under paths.benchmarks");
    for (const auto& alias : datasets) {
        if (!benchmarks.contains(alias)) {
            std::ostringstream msg;
            msg << "unknown dataset alias '" << alias << "'; valid aliases:";
            for (auto it = benchmarks.begin(); it != benchmarks.end(); ++it)
                msg << ' ' << it.key();
            throw ConfigError(msg.str());
        }
    }
    if (modes.empty()) modes = {"word", "mesh"};

    std::unique_ptr<eval::EmbeddingProvider> provider;
    std::optional<embed::LoadedModel> loaded;
    const std::string model_path = ctx.path("model");
    if (!vec_path.empty()) {
        ctx.input_digests[vec_path] = file_digest_hex(vec_path);
        provider = std::make_unique<eval::VecEmbeddings>(embed::read_vec_file(vec_path));
    } else if (!model_path.empty() && fs::exists(model_path)) {
        ctx.input_digests[model_path] = file_digest_hex(model_path);
        loaded = embed::load_model_file(model_path);
        provider = std::make_unique<eval::ComposedEmbeddings>(&loaded->model);
    } else {
        throw ConfigError("eval needs a .vec path argument or paths.model in the config");
    }

    const auto policy = resolve_policy(ctx, *provider);
    const double fusion_k = ctx.config.at("eval").at("fusion_k").get<double>();
    const bool word = std::find(modes.begin(), modes.end(), "word") != modes.end();
    const bool mesh_mode = std::find(modes.begin(), modes.end(), "mesh") != modes.end();

    json report = json::array();
    std::ostringstream tsv;
    tsv << "dataset\tmode\trho\tn\tfallback\n";
    for (const auto& alias : datasets) {
        const std::string path = benchmarks.at(alias).get<std::string>();
        ctx.input_digests[path] = file_digest_hex(path);
        const auto ds = eval::load_benchmark_csv(path, alias);
        std::vector<std::pair<std::string, eval::ScoreMode>> runs;
        if (word) runs.emplace_back("word", eval::ScoreMode::word);
        if (mesh_mode) runs.emplace_back("mesh", eval::ScoreMode::mesh);
        if (word && mesh_mode) runs.emplace_back("fused", eval::ScoreMode::fused);
        for (const auto& [label, mode] : runs) {
            const auto res = eval::evaluate(ds, *provider, mode, policy, ctx.vocab_tag(), fusion_k);
            tsv << alias << '\t' << label << '\t' << res.rho << '\t' << res.n_used << '\t'
                << res.n_fallback << '\n';
            report.push_back({{"dataset", alias},
                              {"mode", label},
                              {"rho", res.rho},
                              {"n", res.n_used},
                              {"fallback", res.n_fallback}});
        }
    }
    std::cout << tsv.str();
    if (!report_path.empty()) {
        std::ofstream tsv_out(report_path + ".tsv");
        tsv_out << tsv.str();
        std::ofstream json_out(report_path + ".json");
        json_out << report.dump(2) << '\n';
        if (!tsv_out || !json_out) throw IoError("cannot write report: " + report_path);
        ctx.write_manifest("eval", report_path + ".tsv");
    }
    return 0;
}

int cmd_neighbors(Context& ctx, const std::string& vec_path, const std::string& query,
                  std::size_t top_k, const std::string& filter_name) {
    eval::NeighborFilter filter = eval::NeighborFilter::all;
    if (filter_name == "words_only") filter = eval::NeighborFilter::words_only;
    else if (filter_name == "concepts_only") filter = eval::NeighborFilter::concepts_only;
    else if (filter_name != "all") throw ConfigError("filter must be all, words_only, or concepts_only");

    std::unique_ptr<eval::EmbeddingProvider> provider;
    std::optional<embed::LoadedModel> loaded;
    if (!vec_path.empty()) {
        provider = std::make_unique<eval::VecEmbeddings>(embed::read_vec_file(vec_path));
    } else {
        const std::string model_path = ctx.required_path("model");
        loaded = embed::load_model_file(model_path);
        provider = std::make_unique<eval::ComposedEmbeddings>(&loaded->model);
    }
    const auto policy = resolve_policy(ctx, *provider);
    const auto neighbors =
        eval::nearest_neighbors(query, *provider, top_k, filter, policy, ctx.vocab_tag());
    for (const auto& n : neighbors) std::cout << n.token << '\t' << n.score << '\n';
    return 0;
}

void apply_env_overrides(json& config) {
    if (const char* v = std::getenv("CREL_SEED")) config["seed"] = parse_scalar(v);
    if (const char* v = std::getenv("CREL_WORKERS")) config["workers"] = parse_scalar(v);
    if (const char* v = std::getenv("CREL_DETERMINISTIC")) config["deterministic"] = parse_scalar(v);
    if (const char* v = std::getenv("CREL_OUTPUT_DIR")) config["paths"]["output_dir"] = v;
}

} // namespace

std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for digest: " + path);
    std::uint64_t h = 14695981039346656037ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        const auto n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"BERT-CRel pipeline: corpus building, constrained skip-gram pre-training, "
                 "concept-pair fine-tuning and intrinsic evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::int64_t seed_flag = -1;
    int workers_flag = -1;
    bool deterministic_flag = false;
    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--set", sets, "dotted-key override, e.g. --set pretrain.dim=48")
        ->take_all();
    app.add_option("--seed", seed_flag, "root random seed");
    app.add_option("--workers", workers_flag, "worker threads where supported");
    app.add_flag("--deterministic", deterministic_flag, "force single-worker deterministic mode");

    auto* c_corpus = app.add_subcommand("corpus", "build the concept-annotated corpus");
    auto* c_pretrain = app.add_subcommand("pretrain", "train subword skip-gram embeddings");
    auto* c_pairs = app.add_subcommand("pairs", "generate concept-pair training data");
    auto* c_finetune = app.add_subcommand("finetune", "fine-tune embeddings with the pair classifier");
    bool resume = false;
    c_finetune->add_flag("--resume", resume, "resume from the last checkpoint in output_dir");

    auto* c_eval = app.add_subcommand("eval", "intrinsic relatedness evaluation");
    std::string eval_vec, report_path;
    std::vector<std::string> eval_datasets, eval_modes;
    c_eval->add_option("vec", eval_vec, "embeddings .vec file");
    c_eval->add_option("--datasets", eval_datasets, "benchmark aliases (default: all configured)");
    c_eval->add_option("--modes", eval_modes, "word and/or mesh");
    c_eval->add_option("--report", report_path, "write <report>.tsv and <report>.json");

    auto* c_neighbors = app.add_subcommand("neighbors", "nearest neighbors of a query term");
    std::string nn_vec, nn_query, nn_filter = "all";
    std::size_t nn_topk = 5;
    c_neighbors->add_option("query", nn_query, "query term")->required();
    c_neighbors->add_option("--vec", nn_vec, "embeddings .vec file");
    c_neighbors->add_option("--top-k", nn_topk, "number of neighbors");
    c_neighbors->add_option("--filter", nn_filter, "all | words_only | concepts_only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Context ctx;
        ctx.config = default_config();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw IoError("cannot open config: " + config_path);
            json file_cfg;
            try {
                in >> file_cfg;
            } catch (const json::exception& e) {
                throw ParseError(config_path + ": " + e.what());
            }
            merge_into(ctx.config, file_cfg);
        }
        apply_env_overrides(ctx.config);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value: " + kv);
            json* slot = resolve_key(ctx.config, kv.substr(0, eq), true);
            *slot = parse_scalar(kv.substr(eq + 1));
        }
        if (seed_flag >= 0) ctx.config["seed"] = seed_flag;
        if (workers_flag >= 0) ctx.config["workers"] = workers_flag;
        if (deterministic_flag) ctx.config["deterministic"] = true;

        if (c_corpus->parsed()) return cmd_corpus(ctx);
        if (c_pretrain->parsed()) return cmd_pretrain(ctx);
        if (c_pairs->parsed()) return cmd_pairs(ctx);
        if (c_finetune->parsed()) return cmd_finetune(ctx, resume);
        if (c_eval->parsed()) return cmd_eval(ctx, eval_vec, eval_datasets, eval_modes, report_path);
        if (c_neighbors->parsed()) return cmd_neighbors(ctx, nn_vec, nn_query, nn_topk, nn_filter);
        throw ConfigError("no subcommand");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace crel::cli
