#include "satnet/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "satnet/dataset.hpp"
#include "satnet/metrics.hpp"
#include "satnet/models.hpp"
#include "satnet/runtime.hpp"
#include "satnet/training.hpp"

namespace satnet {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
    std::string out_dir = "run";
    std::uint64_t seed = 42;
    int threads = 0; // 0 = leave runtime defaults
};

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

LabeledDataset build_dataset(const std::string& data_root, bool synthetic, int synth_n,
                             std::uint64_t seed) {
    if (synthetic == !data_root.empty())
        throw ConfigError("exactly one of --data and --synthetic is required");
    if (synthetic) return synth_generate(synth_n, seed);
    return load_directory(data_root);
}

std::vector<std::size_t> indices_for_split(const LabeledDataset& ds, const SplitSpec& spec,
                                           const std::string& which) {
    if (which == "all") {
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    const SplitIndices idx = split(ds, spec);
    if (which == "train") return idx.train;
    if (which == "val") return idx.val;
    if (which == "test") return idx.test;
    throw ConfigError("unknown split '" + which + "' (expected train|val|test|all)");
}

Schedule schedule_from_flags(const std::string& kind, const Schedule& fallback, int patience,
                             double factor, int t_max, int t0, int t_mult) {
    if (kind.empty()) return fallback;
    if (kind == "constant") return Schedule::constant();
    if (kind == "plateau") return Schedule::plateau(patience, factor);
    if (kind == "cosine") return Schedule::cosine(t_max);
    if (kind == "warm_restarts") return Schedule::warm_restarts(t0, t_mult);
    throw ConfigError("unknown schedule '" + kind + "' (expected plateau|cosine|warm_restarts|constant)");
}

int run_train(const GlobalOptions& global, const std::string& resolved_config,
              const std::string& data_root, bool synthetic, int synth_n,
              const std::string& variant_name_str, const std::string& preset_name,
              const TrainConfig& overrides, const std::vector<bool>& overridden,
              double width_scale, int augment_mode) {
    const Variant variant = variant_from_name(variant_name_str);
    const fs::path out(global.out_dir);
    fs::create_directories(out);
    write_text_file(out / "config_resolved.txt", resolved_config);

    TrainConfig cfg = preset_config(preset_name.empty() ? variant : variant_from_name(preset_name));
    // flag/config overrides, in TrainConfig field order
    if (overridden[0]) cfg.optimizer = overrides.optimizer;
    if (overridden[1]) cfg.lr = overrides.lr;
    if (overridden[2]) cfg.weight_decay = overrides.weight_decay;
    if (overridden[3]) cfg.schedule = overrides.schedule;
    if (overridden[4]) cfg.epochs = overrides.epochs;
    if (overridden[5]) cfg.batch_size = overrides.batch_size;
    if (overridden[6]) cfg.early_stop_patience = overrides.early_stop_patience;
    cfg.seed = global.seed;
    cfg.class_weights = ClassWeightTable::defaults();
    cfg.augment_enabled = augment_mode == 0 ? !synthetic : augment_mode > 0;
    cfg.validate();

    LabeledDataset ds = build_dataset(data_root, synthetic, synth_n, global.seed);
    SplitSpec split_spec;
    split_spec.seed = global.seed;
    const SplitIndices idx = split(ds, split_spec);
    write_split_manifest(out / "split_manifest.tsv", ds, idx);

    ModelSpec spec = ModelSpec::make(variant, ds.num_classes(), width_scale);
    Rng init_rng = Rng::substream(global.seed, "init");
    Model<float> model = build_model<float>(spec, init_rng);

    char line[256];
    std::string log;
    std::snprintf(line, sizeof(line), "variant=%s classes=%d width_scale=%g\n",
                  variant_name(variant), ds.num_classes(), width_scale);
    log += line;
    std::snprintf(line, sizeof(line), "parameters=%zu\n", model->parameter_count());
    log += line;
    std::snprintf(line, sizeof(line), "samples=%zu train=%zu val=%zu test=%zu\n", ds.size(),
                  idx.train.size(), idx.val.size(), idx.test.size());
    log += line;
    std::fputs(log.c_str(), stdout);

    std::ofstream history(out / "history.csv");
    if (!history) throw DataError("cannot write history.csv under " + out.string());
    history << history_csv_header() << "\n";

    const auto started = std::chrono::steady_clock::now();
    TrainResult result = train<float>(*model, ds, idx.train, idx.val, cfg,
                                      [&](const EpochRecord& r) {
                                          history << history_csv_row(r) << "\n";
                                          history.flush();
                                          std::printf("epoch %3d  train %.4f/%.4f  val %.4f/%.4f  lr %.2e\n",
                                                      r.epoch, r.train_loss, r.train_acc, r.val_loss,
                                                      r.val_acc, r.lr);
                                          std::fflush(stdout);
                                      });
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    save_checkpoint(out / "model.ckpt", *model, result.best_epoch, result.best_val_acc);

    std::snprintf(line, sizeof(line), "best_epoch=%d best_val_acc=%.6f stopped_early=%d seconds=%.1f\n",
                  result.best_epoch, result.best_val_acc, result.stopped_early ? 1 : 0, seconds);
    log += line;
    if (spec.variant == Variant::Balanced12) {
        log += "fusion_weights=";
        for (const double w : model->fusion_weights()) {
            std::snprintf(line, sizeof(line), "%.6f;", w);
            log += line;
        }
        log += "\n";
    }
    write_text_file(out / "train.log", log);
    std::printf("best epoch %d, val accuracy %.4f (%.1f s); outputs under %s\n", result.best_epoch,
                result.best_val_acc, seconds, out.string().c_str());
    return 0;
}

int run_eval(const GlobalOptions& global, const std::string& checkpoint_path,
             const std::string& data_root, bool synthetic, int synth_n, const std::string& which_split,
             int batch_size) {
    const fs::path out(global.out_dir);
    fs::create_directories(out);

    CheckpointMeta meta;
    Model<float> model = load_checkpoint<float>(checkpoint_path, &meta);

    LabeledDataset ds = build_dataset(data_root, synthetic, synth_n, global.seed);
    if (ds.num_classes() != meta.spec.num_classes)
        throw ConfigError("checkpoint was trained for " + std::to_string(meta.spec.num_classes) +
                          " classes, dataset has " + std::to_string(ds.num_classes()));
    SplitSpec split_spec;
    split_spec.seed = global.seed;
    const std::vector<std::size_t> idx = indices_for_split(ds, split_spec, which_split);

    const std::vector<float> weights = ClassWeightTable::uniform().resolve<float>(ds.class_names);
    EvalResult<float> eval = evaluate(*model, ds, idx, batch_size, weights, AugmentConfig{});

    std::vector<double> fusion_w, fusion_l;
    if (meta.spec.variant == Variant::Balanced12) {
        fusion_w = model->fusion_weights();
        fusion_l = model->fusion_logits();
    }
    const EvalReport report =
        build_report(eval.preds, eval.labels, eval.probs, ds.class_names, fusion_w, fusion_l);

    const std::string text = render_text(report);
    write_text_file(out / "report.txt", text);
    write_text_file(out / "report.json", report_to_json(report));
    write_text_file(out / "confusion.csv", confusion_csv(report.cm, ds.class_names));
    std::fputs(text.c_str(), stdout);
    return 0;
}

int run_synth(const GlobalOptions& global, int n_per_class) {
    const fs::path out(global.out_dir);
    const LabeledDataset ds = synth_generate(n_per_class, global.seed);
    write_dataset_as_images(ds, out);
    std::printf("wrote %zu images across %d class directories under %s\n", ds.size(),
                ds.num_classes(), out.string().c_str());
    return 0;
}

int run_report(const GlobalOptions& global, const std::string& in_path, bool write_out) {
    std::ifstream in(in_path);
    if (!in) throw DataError("cannot open report " + in_path);
    std::string json((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const EvalReport report = report_from_json(json);
    const std::string text = render_text(report);
    if (write_out) {
        fs::create_directories(global.out_dir);
        write_text_file(fs::path(global.out_dir) / "report.txt", text);
    }
    std::fputs(text.c_str(), stdout);
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"from-scratch CNN training and evaluation for 64x64 RGB land-cover tiles"};
    app.require_subcommand(1);

    GlobalOptions global;
    app.set_config("--config", "", "key = value config file with one [section] per command");
    app.add_option("--out", global.out_dir, "output directory")->capture_default_str();
    app.add_option("--seed", global.seed, "run seed; every random stream derives from it")
        ->capture_default_str();
    app.add_option("--threads", global.threads, "worker thread cap (0 = runtime default)")
        ->capture_default_str();

    // train ------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + history");
    train_cmd->fallthrough();
    std::string data_root, variant_str, preset_str, schedule_str;
    bool synthetic = false;
    int synth_n = 125;
    double width_scale = 1.0;
    TrainConfig flags;
    std::string optimizer_str;
    int early_stop = 0;
    int plateau_patience = 3, cosine_tmax = 40, wr_t0 = 15, wr_tmult = 2;
    double plateau_factor = 0.5;
    int augment_mode = 0; // 0 auto (on for --data, off for --synthetic)
    train_cmd->add_option("--data", data_root, "dataset root: <root>/<ClassName>/*.png|jpg");
    train_cmd->add_flag("--synthetic", synthetic, "train on the generated synthetic dataset");
    train_cmd->add_option("--synth-n", synth_n, "synthetic samples per class")->capture_default_str();
    auto* variant_opt = train_cmd->add_option("--variant", variant_str,
                                              "model variant: baseline|cbam7|balanced12");
    variant_opt->required();
    train_cmd->add_option("--preset", preset_str,
                          "training recipe to start from (defaults to the variant's own)");
    train_cmd->add_option("--width-scale", width_scale, "balanced12 stage width multiplier")
        ->capture_default_str();
    auto* opt_optimizer = train_cmd->add_option("--optimizer", optimizer_str, "adam|adamw");
    auto* opt_lr = train_cmd->add_option("--lr", flags.lr, "base learning rate");
    auto* opt_wd = train_cmd->add_option("--weight-decay", flags.weight_decay, "decoupled weight decay");
    auto* opt_sched = train_cmd->add_option("--schedule", schedule_str,
                                            "plateau|cosine|warm_restarts|constant");
    train_cmd->add_option("--plateau-patience", plateau_patience, "plateau: epochs without improvement");
    train_cmd->add_option("--plateau-factor", plateau_factor, "plateau: rate multiplier");
    train_cmd->add_option("--cosine-tmax", cosine_tmax, "cosine: period in epochs");
    train_cmd->add_option("--t0", wr_t0, "warm restarts: first cycle length");
    train_cmd->add_option("--t-mult", wr_tmult, "warm restarts: cycle growth factor");
    auto* opt_epochs = train_cmd->add_option("--epochs", flags.epochs, "epoch budget");
    auto* opt_batch = train_cmd->add_option("--batch-size", flags.batch_size, "batch size");
    auto* opt_early = train_cmd->add_option("--early-stop", early_stop,
                                            "stop after this many epochs without val improvement");
    train_cmd->add_flag("--augment{1},--no-augment{-1}", augment_mode,
                        "force the training-time augmentation on/off");

    // eval --------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint and write the report");
    eval_cmd->fallthrough();
    std::string ckpt_path, eval_data_root, eval_split = "test";
    bool eval_synthetic = false;
    int eval_synth_n = 125, eval_batch = 64;
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data_root, "dataset root");
    eval_cmd->add_flag("--synthetic", eval_synthetic, "evaluate on the generated synthetic dataset");
    eval_cmd->add_option("--synth-n", eval_synth_n, "synthetic samples per class")->capture_default_str();
    eval_cmd->add_option("--split", eval_split, "train|val|test|all")->capture_default_str();
    eval_cmd->add_option("--batch-size", eval_batch, "evaluation batch size")->capture_default_str();

    // synth ---------------------------------------------------------------
    auto* synth_cmd = app.add_subcommand("synth", "materialise the synthetic dataset as image files");
    synth_cmd->fallthrough();
    int synth_out_n = 100;
    synth_cmd->add_option("--n", synth_out_n, "samples per class")->capture_default_str();

    // report ----------------------------------------------------------------
    auto* report_cmd = app.add_subcommand("report", "re-render a structured report as text");
    report_cmd->fallthrough();
    std::string report_in;
    bool report_write = false;
    report_cmd->add_option("--in", report_in, "report.json produced by eval")->required();
    report_cmd->add_flag("--write", report_write, "also write report.txt to the output directory");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (global.threads > 0) set_num_threads(global.threads);
        if (train_cmd->parsed()) {
            TrainConfig overrides = flags;
            if (opt_optimizer->count()) overrides.optimizer = optimizer_from_name(optimizer_str);
            overrides.schedule = schedule_from_flags(schedule_str, Schedule::constant(),
                                                     plateau_patience, plateau_factor, cosine_tmax,
                                                     wr_t0, wr_tmult);
            if (opt_early->count()) overrides.early_stop_patience = early_stop;
            const std::vector<bool> overridden = {
                opt_optimizer->count() > 0, opt_lr->count() > 0,    opt_wd->count() > 0,
                opt_sched->count() > 0,     opt_epochs->count() > 0, opt_batch->count() > 0,
                opt_early->count() > 0};
            return run_train(global, app.config_to_str(true, false), data_root, synthetic, synth_n,
                             variant_str, preset_str, overrides, overridden, width_scale, augment_mode);
        }
        if (eval_cmd->parsed())
            return run_eval(global, ckpt_path, eval_data_root, eval_synthetic, eval_synth_n,
                            eval_split, eval_batch);
        if (synth_cmd->parsed()) return run_synth(global, synth_out_n);
        if (report_cmd->parsed()) return run_report(global, report_in, report_write);
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const Error& e) { // config/shape/contract
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

} // namespace satnet
