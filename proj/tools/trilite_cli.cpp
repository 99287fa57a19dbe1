// trilite: synthesize feature datasets, train a TriHead, evaluate it, check
// its gradients and dump heatmaps.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "trilite/checkpoint.hpp"
#include "trilite/dataset.hpp"
#include "trilite/error.hpp"
#include "trilite/eval.hpp"
#include "trilite/model_check.hpp"
#include "trilite/pipeline.hpp"
#include "trilite/report.hpp"
#include "trilite/synth.hpp"
#include "trilite/trainer.hpp"

namespace fs = std::filesystem;
using namespace trilite;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

using Echo = std::vector<std::pair<std::string, std::string>>;

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

// Reads a flat key=value file into "--key=value" arguments. Blank lines and
// lines starting with '#' are skipped.
std::vector<std::string> config_arguments(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::vector<std::string> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("{}:{}: expected key = value", path.string(), n));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", path.string(), n));
        out.push_back("--" + key + "=" + value);
    }
    return out;
}

// Splices --config file contents in right after the subcommand so that flags
// given on the command line come later and win.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> from_file;
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
        } else {
            continue;
        }
        auto more = config_arguments(path);
        from_file.insert(from_file.end(), more.begin(), more.end());
        --i;
    }
    if (!from_file.empty() && !args.empty()) args.insert(args.begin() + 1, from_file.begin(), from_file.end());
    return args;
}

std::string on_off(bool v) { return v ? "on" : "off"; }

bool parse_on_off(const std::string& text, const char* what) {
    if (text == "on" || text == "true" || text == "1") return true;
    if (text == "off" || text == "false" || text == "0") return false;
    throw ConfigError(fmt::format("{} must be on or off, got '{}'", what, text));
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
    const auto x = text.find('x');
    try {
        if (x != std::string::npos) {
            std::size_t used_w = 0, used_h = 0;
            const auto w = std::stoul(text.substr(0, x), &used_w);
            const auto h = std::stoul(text.substr(x + 1), &used_h);
            if (used_w == x && used_h == text.size() - x - 1) return {w, h};
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("grid must look like WxH, got '" + text + "'");
}

std::string g17(double v) { return fmt::format("{:.17g}", v); }

void require_file(const fs::path& path, const char* what) {
    if (!fs::is_regular_file(path)) throw ConfigError(fmt::format("{} '{}' does not exist", what, path.string()));
}

std::string echo_text(const Echo& echo) {
    std::string out;
    for (const auto& [k, v] : echo) out += k + "=" + v + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    SynthSpec spec;
    std::string grid = "16x16";
    std::uint64_t seed = 0;
    std::string out;
};

void add_synth(CLI::App& app, SynthArgs& a) {
    app.add_option("--classes", a.spec.classes, "Number of classes")->capture_default_str();
    app.add_option("--samples", a.spec.samples, "Number of samples")->capture_default_str();
    app.add_option("--grid", a.grid, "Patch grid as WxH")->capture_default_str();
    app.add_option("--dim", a.spec.feature_dim, "Feature and token dimension")->capture_default_str();
    app.add_option("--seed", a.seed, "Sample stream seed")->capture_default_str();
    app.add_option("--world-seed", a.spec.world_seed, "Seed of the class signatures shared by all splits")
        ->capture_default_str();
    app.add_option("--distractor-rate", a.spec.distractor_rate, "Probability of a distractor region")
        ->capture_default_str();
    app.add_option("--occlusion-rate", a.spec.occlusion_rate, "Probability of an occluder band")
        ->capture_default_str();
    app.add_option("--noise-sigma", a.spec.noise_sigma, "Gaussian noise on every patch")->capture_default_str();
    app.add_option("--objectness", a.spec.objectness, "Share of signature variance common to all classes")
        ->capture_default_str();
    app.add_option("--patch-size", a.spec.patch_size, "Pixels per patch side")->capture_default_str();
    app.add_option("--background-prototypes", a.spec.background_prototypes, "Background clusters")
        ->capture_default_str();
    app.add_option("-o,--out", a.out, "Output dataset file")->required();
}

int run_synth(SynthArgs& a) {
    std::tie(a.spec.grid_w, a.spec.grid_h) = parse_grid(a.grid);
    const SynthDataset data = synth_generate(a.spec, a.seed);
    write_dataset(a.out, data.dataset);
    const auto& h = data.dataset.header;
    std::size_t distractors = 0, occluded = 0;
    for (const auto& t : data.truth) {
        distractors += t.distractor.has_value();
        occluded += t.occluder.has_value();
    }
    fmt::print("wrote {}\n", a.out);
    fmt::print("  samples={} classes={} grid={}x{} dim={} token_dim={} image={}x{} patch={}\n", h.sample_count,
               h.classes, h.grid_w, h.grid_h, h.feature_dim, h.token_dim, h.image_w, h.image_h, h.patch_size);
    fmt::print("  bbox=yes mask=yes distractors={} occluded={} seed={} world_seed={}\n", distractors, occluded, a.seed,
               a.spec.world_seed);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    TrainConfig config;
    std::string train, val, checkpoint, history;
    std::string head = "three_channel";
    std::string adv = "on";
    std::string metric;
    bool quiet = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
    auto& c = a.config;
    app.add_option("--train", a.train, "Training dataset")->required();
    app.add_option("--val", a.val, "Validation dataset")->required();
    app.add_option("-o,--checkpoint", a.checkpoint, "Output checkpoint (best validation epoch)")->required();
    app.add_option("--history", a.history, "History file (default: <checkpoint>.history)");
    app.add_option("--head", a.head, "binary or three_channel")->capture_default_str();
    app.add_option("--adv", a.adv, "Adversarial background loss on|off")->capture_default_str();
    app.add_option("--alpha", c.alpha, "Weight of the background loss")->capture_default_str();
    app.add_option("--base-lr", c.base_lr, "Learning rate of the head")->capture_default_str();
    app.add_option("--lr-multiplier", c.lr_multiplier, "Token classifier lr = base lr x multiplier")
        ->capture_default_str();
    app.add_option("--weight-decay", c.weight_decay, "Decoupled weight decay")->capture_default_str();
    app.add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str();
    app.add_option("--epochs", c.max_epochs, "Maximum number of epochs")->capture_default_str();
    app.add_option("--patience", c.patience, "Early-stopping patience in epochs")->capture_default_str();
    app.add_option("--seed", c.seed, "Initialization and shuffling seed")->capture_default_str();
    app.add_option("--kernel", c.kernel_size, "Convolution kernel size, 1 or 3")->capture_default_str();
    app.add_option("--val-metric", a.metric, "gt_loc, pxap or total_loss (default from annotations)");
    app.add_option("--tau", c.tau, "Binarization threshold for gt_loc validation")->capture_default_str();
    app.add_option("--divergence-limit", c.divergence_limit, "Abort when the loss exceeds this")
        ->capture_default_str();
    app.add_flag("-q,--quiet", a.quiet, "Do not print per-epoch records");
}

Echo train_echo(const TrainArgs& a, ValidationMetric metric) {
    const auto& c = a.config;
    return {{"train", a.train},
            {"val", a.val},
            {"head", std::string(to_string(c.head_mode))},
            {"adv", on_off(c.adv_enabled)},
            {"alpha", g17(c.alpha)},
            {"base_lr", g17(c.base_lr)},
            {"lr_multiplier", g17(c.lr_multiplier)},
            {"weight_decay", g17(c.weight_decay)},
            {"batch_size", std::to_string(c.batch_size)},
            {"epochs", std::to_string(c.max_epochs)},
            {"patience", std::to_string(c.patience)},
            {"seed", std::to_string(c.seed)},
            {"kernel", std::to_string(c.kernel_size)},
            {"val_metric", std::string(to_string(metric))},
            {"tau", g17(c.tau)}};
}

void save_history(const fs::path& path, const History& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write history '" + path.string() + "'");
    write_history(out, history);
}

int run_train(TrainArgs& a) {
    auto& c = a.config;
    c.head_mode = parse_head_mode(a.head);
    c.adv_enabled = parse_on_off(a.adv, "--adv");
    if (!a.metric.empty()) c.validation_metric = parse_validation_metric(a.metric);
    c.validate();
    require_file(a.train, "training dataset");
    require_file(a.val, "validation dataset");
    if (a.history.empty()) a.history = a.checkpoint + ".history";

    const Dataset train_set = read_dataset(a.train);
    const Dataset val_set = read_dataset(a.val);
    const ValidationMetric metric = c.validation_metric.value_or(default_validation_metric(val_set.header));

    TrainHooks hooks;
    if (!a.quiet) hooks.on_epoch = [&](const EpochRecord& r) {
        fmt::print("{}\n", format_epoch(r, metric));
        std::fflush(stdout);
    };
    try {
        const TrainResult result = train(c, train_set, val_set, hooks);
        save_history(a.history, result.history);
        save_checkpoint(a.checkpoint, result.best, echo_text(train_echo(a, metric)));
        const auto& best = result.history.epochs[result.best_epoch - 1];
        fmt::print("best epoch {} of {} ({}={:.6g}){}\n", result.best_epoch, result.history.epochs.size(),
                   to_string(metric), best.val_metric, result.early_stopped ? ", stopped early" : "");
        fmt::print("wrote {} ({} trainable parameters) and {}\n", a.checkpoint, result.best.trainable_count(),
                   a.history);
    } catch (const TrainingAborted& e) {
        save_history(a.history, e.history());
        fmt::print(stderr, "error: {}\nhistory up to the abort written to {}\n", e.what(), a.history);
        return kExitRuntime;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, calib_data, report;
    double tau = 0.5;
    bool calibrate = false;
    std::string box_mode = "largest";
    std::string metrics;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    app.add_option("--checkpoint", a.checkpoint, "Trained checkpoint")->required();
    app.add_option("--data", a.data, "Dataset to evaluate")->required();
    app.add_option("--tau", a.tau, "Fixed binarization threshold")->capture_default_str();
    app.add_flag("--calibrate", a.calibrate, "Pick tau maximizing GT-known accuracy on --calib-data");
    app.add_option("--calib-data", a.calib_data, "Calibration dataset (default: --data)");
    app.add_option("--box-mode", a.box_mode, "largest or merged")->capture_default_str();
    app.add_option("--metrics", a.metrics, "Comma-separated subset of loc,pxap (default: what annotations allow)");
    app.add_option("--report", a.report, "Report file (default: stdout)");
}

int run_eval(EvalArgs& a) {
    const BoxMode box_mode = parse_box_mode(a.box_mode);
    if (!(a.tau > 0.0 && a.tau < 1.0)) throw ConfigError("--tau must lie in (0, 1)");
    require_file(a.checkpoint, "checkpoint");
    require_file(a.data, "dataset");
    if (!a.calib_data.empty()) require_file(a.calib_data, "calibration dataset");

    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Dataset data = read_dataset(a.data);
    check_compatible(data.header, ckpt.params.config);

    bool want_loc = data.header.has_bbox, want_pxap = data.header.has_mask;
    if (!a.metrics.empty()) {
        want_loc = want_pxap = false;
        std::stringstream ss(a.metrics);
        for (std::string m; std::getline(ss, m, ',');) {
            m = trim(m);
            if (m == "loc") want_loc = true;
            else if (m == "pxap") want_pxap = true;
            else throw ConfigError("unknown metric '" + m + "' (expected loc or pxap)");
        }
        if (want_loc && !data.header.has_bbox)
            throw DataError("metric loc needs bbox_gt annotations, which '" + a.data + "' does not have");
        if (want_pxap && !data.header.has_mask)
            throw DataError("metric pxap needs mask_gt annotations, which '" + a.data + "' does not have");
    }
    if (!want_loc && !want_pxap) throw DataError("dataset '" + a.data + "' has neither boxes nor masks to evaluate");

    double tau = a.tau;
    if (a.calibrate) {
        if (a.calib_data.empty()) {
            if (!data.header.has_bbox) throw DataError("--calibrate needs bbox_gt annotations");
            tau = calibrate_threshold(predict_records(ckpt.params, data, a.tau), default_tau_candidates(), box_mode);
        } else {
            const Dataset calib = read_dataset(a.calib_data);
            check_compatible(calib.header, ckpt.params.config);
            if (!calib.header.has_bbox) throw DataError("--calibrate needs bbox_gt annotations in --calib-data");
            tau = calibrate_threshold(predict_records(ckpt.params, calib, a.tau), default_tau_candidates(), box_mode);
        }
    }

    const std::vector<EvalRecord> records = predict_records(ckpt.params, data, tau);
    MetricReport report;
    report.config = {{"checkpoint", a.checkpoint},
                     {"data", a.data},
                     {"head", std::string(to_string(ckpt.params.config.mode))},
                     {"kernel", std::to_string(ckpt.params.config.kernel_size)},
                     {"box_mode", std::string(to_string(box_mode))},
                     {"tau_requested", g17(a.tau)},
                     {"calibrate", a.calibrate ? "on" : "off"}};
    if (a.calibrate) report.config.emplace_back("calib_data", a.calib_data.empty() ? a.data : a.calib_data);
    {
        std::stringstream meta(ckpt.metadata);
        for (std::string line; std::getline(meta, line);) {
            const auto eq = line.find('=');
            if (eq != std::string::npos) report.config.emplace_back("trained." + line.substr(0, eq), line.substr(eq + 1));
        }
    }
    report.record_count = records.size();
    report.box_mode = box_mode;
    report.tau = tau;
    report.tau_calibrated = a.calibrate;
    if (want_loc) {
        report.top1_loc = loc_accuracy(records, LocMode::top1, box_mode);
        report.top5_loc = loc_accuracy(records, LocMode::top5, box_mode);
        report.gt_known_loc = loc_accuracy(records, LocMode::gt_known, box_mode);
        report.fragmented_records = static_cast<std::size_t>(
            std::count_if(records.begin(), records.end(), [](const EvalRecord& r) { return r.fragments >= 2; }));
    }
    if (want_pxap) report.pxap = pxap(records);

    if (a.report.empty()) {
        write_report(std::cout, report);
    } else {
        std::ofstream out(a.report, std::ios::trunc);
        if (!out) throw ConfigError("cannot write report '" + a.report + "'");
        write_report(out, report);
        fmt::print("wrote {}\n", a.report);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    ModelCheckSpec spec;
    std::size_t seeds = 1;
    double tolerance = 1e-4;
    std::string corrupt;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
    auto& s = a.spec;
    app.add_option("--seed", s.seed, "First seed")->capture_default_str();
    app.add_option("--seeds", a.seeds, "Number of consecutive seeds")->capture_default_str();
    app.add_option("--batch", s.batch, "Batch size")->capture_default_str();
    app.add_option("--dim", s.feature_dim, "Feature dimension")->capture_default_str();
    app.add_option("--token-dim", s.token_dim, "Class-token dimension")->capture_default_str();
    app.add_option("--grid", s.grid, "Square grid side")->capture_default_str();
    app.add_option("--classes", s.classes, "Number of classes")->capture_default_str();
    app.add_option("--kernel", s.kernel_size, "Convolution kernel size")->capture_default_str();
    app.add_option("--alpha", s.alpha, "Background loss weight")->capture_default_str();
    app.add_option("--step", s.step, "Finite-difference step")->capture_default_str();
    app.add_option("--tolerance", a.tolerance, "Maximum relative error")->capture_default_str();
    // Test hook: corrupts the analytic gradient of one parameter tensor.
    app.add_option("--corrupt", a.corrupt)->group("");
}

int run_gradcheck(GradcheckArgs& a) {
    if (a.seeds == 0) throw ConfigError("--seeds must be at least 1");
    if (a.spec.kernel_size % 2 == 0) throw ConfigError("--kernel must be odd");
    if (a.spec.grid < 2) throw ConfigError("--grid must be at least 2");
    if (!a.corrupt.empty()) a.spec.corrupt_tensor = a.corrupt;
    bool all_pass = true;
    const std::uint64_t first = a.spec.seed;
    for (std::uint64_t seed = first; seed < first + a.seeds; ++seed)
        for (HeadMode mode : {HeadMode::binary, HeadMode::three_channel})
            for (bool adv : {true, false}) {
                ModelCheckSpec spec = a.spec;
                spec.mode = mode;
                spec.adversarial = adv;
                spec.seed = seed;
                const ModelCheckReport report = check_model_gradients(spec);
                const TensorCheck& worst = report.worst();
                const bool pass = worst.result.max_error < a.tolerance;
                all_pass = all_pass && pass;
                fmt::print("{:<13} adv={:<3} seed={} max_rel_err={:.3e} worst={} ({}) {}\n", to_string(mode),
                           on_off(adv), seed, worst.result.max_error, worst.name, to_string(worst.group),
                           pass ? "PASS" : "FAIL");
                if (!pass)
                    fmt::print("  {} group, tensor {}, index {}: analytic {:.10g} vs numeric {:.10g}\n",
                               to_string(worst.group), worst.name, worst.result.worst_index,
                               worst.result.worst_analytic, worst.result.worst_numeric);
            }
    fmt::print("{}\n", all_pass ? "gradient check passed" : "gradient check FAILED");
    return all_pass ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

struct VisualizeArgs {
    std::string checkpoint, data, out_dir;
    std::vector<std::size_t> indices{0};
    double tau = 0.5;
    std::string box_mode = "largest";
};

void add_visualize(CLI::App& app, VisualizeArgs& a) {
    app.add_option("--checkpoint", a.checkpoint, "Trained checkpoint")->required();
    app.add_option("--data", a.data, "Dataset")->required();
    app.add_option("--indices", a.indices, "Sample indices")->delimiter(',')->capture_default_str();
    app.add_option("--out-dir", a.out_dir, "Directory for the images")->required();
    app.add_option("--tau", a.tau, "Threshold for the overlay box")->capture_default_str();
    app.add_option("--box-mode", a.box_mode, "largest or merged")->capture_default_str();
}

std::uint8_t gray(double p) { return static_cast<std::uint8_t>(std::clamp(std::lround(p * 255.0), 0L, 255L)); }

void write_pgm(const fs::path& path, const Tensor& map) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
    for (double v : map.data()) out.put(static_cast<char>(gray(v)));
}

void draw_outline(std::vector<std::uint8_t>& rgb, std::size_t w, std::size_t h, const Box& b,
                  std::array<std::uint8_t, 3> color) {
    auto put = [&](std::int64_t x, std::int64_t y) {
        if (x < 0 || y < 0 || x >= static_cast<std::int64_t>(w) || y >= static_cast<std::int64_t>(h)) return;
        std::copy(color.begin(), color.end(), rgb.begin() + static_cast<long>((static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3));
    };
    for (std::int64_t x = b.x0; x < b.x1; ++x) put(x, b.y0), put(x, b.y1 - 1);
    for (std::int64_t y = b.y0; y < b.y1; ++y) put(b.x0, y), put(b.x1 - 1, y);
}

int run_visualize(VisualizeArgs& a) {
    const BoxMode box_mode = parse_box_mode(a.box_mode);
    require_file(a.checkpoint, "checkpoint");
    require_file(a.data, "dataset");
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    DatasetReader reader(a.data);
    check_compatible(reader.header(), ckpt.params.config);
    for (auto i : a.indices)
        if (i >= reader.size())
            throw DataError(fmt::format("sample index {} out of range ({} samples)", i, reader.size()));
    fs::create_directories(a.out_dir);

    const HeadConfig& cfg = ckpt.params.config;
    const std::size_t H = reader.header().image_h, W = reader.header().image_w;
    const std::size_t h = reader.header().grid_h, w = reader.header().grid_w;
    if (!cfg.ambiguous_channel())
        fmt::print("note: binary head, no ambiguous map; only fg and bg images are written\n");
    for (auto i : a.indices) {
        Dataset one{reader.header(), {reader.sample(i)}};
        const TriMaps maps = predict_maps(ckpt.params, one, 0, 1);
        auto upsampled = [&](std::size_t c) {
            const Tensor ch = maps.channel(c);
            return upsample_bilinear(Tensor({h, w}, ch.values()), H, W);
        };
        const std::string stem = fmt::format("sample_{}", i);
        std::vector<std::string> written;
        if (auto am = cfg.ambiguous_channel()) {
            write_pgm(fs::path(a.out_dir) / (stem + "_am.pgm"), upsampled(*am));
            written.push_back(stem + "_am.pgm");
        }
        const Tensor fg = upsampled(cfg.fg_channel());
        write_pgm(fs::path(a.out_dir) / (stem + "_fg.pgm"), fg);
        write_pgm(fs::path(a.out_dir) / (stem + "_bg.pgm"), upsampled(cfg.bg_channel()));
        written.push_back(stem + "_fg.pgm");
        written.push_back(stem + "_bg.pgm");

        EvalRecord rec;
        rec.score_map = fg;
        assign_boxes(rec, a.tau);
        std::vector<std::uint8_t> rgb(H * W * 3);
        for (std::size_t p = 0; p < H * W; ++p) rgb[3 * p] = rgb[3 * p + 1] = rgb[3 * p + 2] = gray(fg[p]);
        for (const auto& gt : one.samples[0].bbox_gt) draw_outline(rgb, W, H, gt, {0, 255, 0});
        draw_outline(rgb, W, H, rec.box(box_mode), {255, 0, 0});
        {
            std::ofstream out(fs::path(a.out_dir) / (stem + "_overlay.ppm"), std::ios::binary | std::ios::trunc);
            if (!out) throw ConfigError("cannot write into '" + a.out_dir + "'");
            out << "P6\n" << W << ' ' << H << "\n255\n";
            out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        }
        written.push_back(stem + "_overlay.ppm");
        std::string names;
        for (const auto& n : written) names += (names.empty() ? "" : " ") + n;
        fmt::print("sample {}: {}\n", i, names);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TriHead weakly supervised localization on frozen patch features"};
    app.name("trilite");
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");
    app.footer("Every command also accepts --config FILE with flat key = value lines; flags override the file.");

    SynthArgs synth_args;
    TrainArgs train_args;
    EvalArgs eval_args;
    GradcheckArgs gradcheck_args;
    VisualizeArgs visualize_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic feature dataset");
    auto* trn = app.add_subcommand("train", "Train a head and write the best checkpoint");
    auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint and write a metric report");
    auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    auto* vis = app.add_subcommand("visualize", "Write heatmap images for some samples");
    add_synth(*synth, synth_args);
    add_train(*trn, train_args);
    add_eval(*evl, eval_args);
    add_gradcheck(*grad, gradcheck_args);
    add_visualize(*vis, visualize_args);

    try {
        std::vector<std::string> args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    }

    try {
        if (*synth) return run_synth(synth_args);
        if (*trn) return run_train(train_args);
        if (*evl) return run_eval(eval_args);
        if (*grad) return run_gradcheck(gradcheck_args);
        if (*vis) return run_visualize(visualize_args);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitRuntime;
    } catch (const GenerationError& e) {
        fmt::print(stderr, "generation error: {}\n", e.what());
        return kExitRuntime;
    } catch (const FormatError& e) {
        fmt::print(stderr, "format error: {}\n", e.what());
        return kExitRuntime;
    } catch (const Error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
