// degan: command-line front end. Each subcommand wraps one library operation
// and ends its stdout with a `RESULT key=value ...` line.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "degan/config.hpp"
#include "degan/data.hpp"
#include "degan/errors.hpp"
#include "degan/fer.hpp"
#include "degan/gradcheck.hpp"
#include "degan/model.hpp"
#include "degan/training.hpp"

namespace fs = std::filesystem;
using namespace degan;

namespace {

enum Exit : int {
    kOk = 0,
    kUnexpected = 1,
    kUsage = 2,
    kIo = 3,
    kDimension = 4,
    kLabel = 5,
    kContract = 6,
    kState = 7,
    kDegenerate = 8,
    kConfig = 9,
    kGradcheck = 10,
};

const char* kExitCodes =
    "Exit codes:\n"
    "  0   success\n"
    "  1   unexpected internal error\n"
    "  2   usage error (bad or missing arguments)\n"
    "  3   I/O error (unreadable or unwritable file, malformed file)\n"
    "  4   dimension mismatch\n"
    "  5   label out of range\n"
    "  6   contract violation\n"
    "  7   state error (e.g. transfer with an untrained model)\n"
    "  8   degenerate data (e.g. a single class)\n"
    "  9   configuration error (unknown key, bad value)\n"
    "  10  gradcheck found an error above tolerance\n";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

config::RunConfig run_config(const std::string& path) {
    config::RunConfig run = path.empty() ? config::RunConfig{} : config::load_run_config(path);
    config::apply_environment(run);
    return run;
}

std::vector<int> parse_ids(const std::string& text) {
    return text.empty() ? std::vector<int>{} : config::parse_int_list(text, "--held-out");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::size_t ids = 8, exprs = 6, per_cell = 10, size = 32;
    std::uint64_t seed = 7;
    std::string out, held_out;
};

int cmd_synth(const SynthArgs& a) {
    if (a.ids < 2 || a.exprs < 2) throw UsageError("--ids and --exprs must both be at least 2");
    if (a.per_cell == 0 || a.size < 16) throw UsageError("--per-cell must be positive and --size at least 16");
    const auto ds = data::synth_dataset({a.ids, a.exprs, a.per_cell, a.size, a.seed});
    const auto held = parse_ids(a.held_out);
    const auto m = data::write_dataset(ds, a.out, held);
    std::cout << "RESULT images=" << m.records.size() << " clean=" << ds.clean.size()
              << " manifest=" << (fs::path(a.out) / "manifest.txt").string() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string config, checkpoint, manifest, log;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    config::RunConfig run = run_config(a.config);
    if (!a.manifest.empty()) run.manifest = a.manifest;
    if (run.manifest.empty()) throw ConfigError("no manifest: set `manifest` in the config or pass --manifest");
    const std::string log_path =
        !a.log.empty() ? a.log : !run.log_path.empty() ? run.log_path : a.checkpoint + ".log.tsv";

    const auto manifest = data::load_manifest(run.manifest);
    const auto td = prepare_training_data(run, manifest);
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot write loss log " + log_path);
    log << loss_log_header() << '\n';
    const std::size_t every = std::max<std::size_t>(1, run.total_steps / 20);
    auto result = train_degan(run, td, [&](const StepReport& r) {
        log << loss_log_line(r) << '\n';
        if (!a.quiet && (r.step % every == 0 || r.step == 1)) {
            std::cout << "step " << r.step << "  d_loss " << r.d_loss << "  g_loss " << r.g_loss
                      << "  k " << r.k << '\n';
        }
    });
    log.flush();
    if (!log) throw IoError("failed writing loss log " + log_path);
    result.model.save(a.checkpoint);

    const StepReport last = result.log.empty() ? StepReport{} : result.log.back();
    std::cout << "RESULT steps=" << result.model.steps_taken() << " d_loss=" << fixed2(last.d_loss)
              << " g_loss=" << fixed2(last.g_loss) << " train_samples=" << td.train.size()
              << " checkpoint=" << a.checkpoint << " log=" << log_path << '\n';
    return kOk;
}

struct AugmentArgs {
    std::string manifest, spec, out;
};

int cmd_augment(const AugmentArgs& a) {
    const auto spec = a.spec.empty() ? data::AugmentationSpec{} : data::load_augmentation_spec(a.spec);
    const auto in = data::load_manifest(a.manifest);
    std::error_code ec;
    fs::create_directories(fs::path(a.out) / "images", ec);
    if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());

    data::DatasetManifest out;
    out.n_expr = in.n_expr;
    out.n_id = in.n_id;
    out.image_size = spec.crop_size;
    out.base_dir = a.out;
    char name[64];
    std::size_t written = 0;
    for (std::size_t i = 0; i < in.records.size(); ++i) {
        const auto& rec = in.records[i];
        const data::ImageSample sample{data::load_image(in.base_dir / rec.path), rec.y_e, rec.y_id};
        const auto variants = data::augment(sample, spec);
        for (std::size_t v = 0; v < variants.size(); ++v) {
            std::snprintf(name, sizeof name, "images/r%05zu_a%03zu.pgm", i, v);
            data::save_image(variants[v].image, fs::path(a.out) / name);
            out.records.push_back({name, rec.y_e, rec.y_id, rec.split});
            ++written;
        }
    }
    data::save_manifest(out, fs::path(a.out) / "manifest.txt");
    std::cout << "RESULT inputs=" << in.records.size() << " outputs=" << written
              << " factor=" << spec.expansion_factor() << '\n';
    return kOk;
}

struct ExtractArgs {
    std::string checkpoint, manifest, out, held_out;
};

int cmd_extract(const ExtractArgs& a) {
    const auto model = DeGanModel::load(a.checkpoint);
    const auto manifest = data::load_manifest(a.manifest);
    const auto held = parse_ids(a.held_out);
    std::vector<data::ImageSample> samples;
    std::vector<data::Split> tags;
    for (const auto& rec : manifest.records) {
        samples.push_back({data::load_image(manifest.base_dir / rec.path), rec.y_e, rec.y_id});
        const bool test = held.empty() ? rec.split == data::Split::Test
                                       : std::find(held.begin(), held.end(), rec.y_id) != held.end();
        tags.push_back(test ? data::Split::Test : data::Split::Train);
    }
    auto reps = fer::extract_representations(model, samples);
    reps.split = std::move(tags);
    reps.source_model = fs::path(a.checkpoint).filename().string();
    reps.source_dataset = fs::path(a.manifest).string();
    fer::save_representations(reps, a.out);
    std::cout << "RESULT rows=" << reps.rows() << " dim=" << reps.dim << " out=" << a.out << '\n';
    return kOk;
}

// Rows to train on: the train-tagged ones when tags exist, otherwise all.
fer::RepresentationSet rows_for(const fer::RepresentationSet& reps, data::Split which) {
    return reps.split.empty() ? reps : reps.tagged(which);
}

struct FerTrainArgs {
    std::string reps, target = "expr", out, config;
};

int cmd_fer_train(const FerTrainArgs& a) {
    const auto reps = fer::load_representations(a.reps);
    const auto target = fer::parse_target(a.target);
    const auto train = rows_for(reps, data::Split::Train);
    const auto& labels = fer::labels_of(reps, target);
    const std::size_t n_classes =
        labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    const auto trained = fer::train_mlp(train, target, config::mlp_config(run_config(a.config)), n_classes);
    trained.classifier.save(a.out, target);
    const auto report = fer::evaluate(trained.classifier, train, target);
    std::cout << "RESULT train_accuracy=" << fixed2(report.accuracy)
              << " final_loss=" << sci(trained.loss_curve.empty() ? 0.0 : trained.loss_curve.back())
              << " classes=" << n_classes << " model=" << a.out << '\n';
    return kOk;
}

struct FerEvalArgs {
    std::string reps, target = "expr", model, predictions, report;
};

// Prediction files hold one `<predicted> <true>` pair per line; '#' comments.
std::pair<std::vector<int>, std::vector<int>> read_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open predictions " + path);
    std::vector<int> pred, truth;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        int p = 0, t = 0;
        if (!(ls >> p)) continue;
        std::string extra;
        if (!(ls >> t) || (ls >> extra)) {
            throw IoError(path + ":" + std::to_string(lineno) + ": expected '<predicted> <true>'");
        }
        pred.push_back(p);
        truth.push_back(t);
    }
    return {pred, truth};
}

int cmd_fer_eval(const FerEvalArgs& a) {
    fer::EvalReport report;
    if (!a.predictions.empty()) {
        const auto [pred, truth] = read_predictions(a.predictions);
        int hi = 0;
        for (int v : pred) hi = std::max(hi, v);
        for (int v : truth) hi = std::max(hi, v);
        report = fer::evaluate_predictions(pred, truth, static_cast<std::size_t>(hi) + 1);
    } else {
        if (a.reps.empty() || a.model.empty()) {
            throw UsageError("fer-eval needs --predictions, or --reps together with --model");
        }
        fer::Target stored{};
        const auto clf = fer::MlpClassifier::load(a.model, &stored);
        const auto target = fer::parse_target(a.target);
        if (stored != target) {
            throw ContractError("classifier was trained for target '" + fer::to_string(stored) + "'");
        }
        report = fer::evaluate(clf, rows_for(fer::load_representations(a.reps), data::Split::Test), target);
    }
    if (!a.report.empty()) {
        std::ofstream out(a.report);
        out << fer::serialize_report(report);
        if (!out) throw IoError("cannot write report " + a.report);
    }
    const fer::TableRow rows[] = {{report.method, report.setting, report.accuracy}};
    std::cout << fer::render_table("Expression recognition", rows);
    std::cout << "samples " << report.samples << '\n';
    std::cout << "RESULT accuracy=" << fixed2(report.accuracy) << '\n';
    return kOk;
}

struct ProbeArgs {
    std::string reps, config;
};

int cmd_probe(const ProbeArgs& a) {
    const auto reps = fer::load_representations(a.reps);
    const auto run = run_config(a.config);
    const auto split = fer::stratified_cell_split(reps, run.probe_test_fraction);
    const double acc = fer::identity_probe(reps, split, config::mlp_config(run));
    std::set<int> ids(reps.y_id.begin(), reps.y_id.end());
    std::cout << "RESULT identity_accuracy=" << fixed2(acc)
              << " chance=" << fixed2(ids.empty() ? 0.0 : 100.0 / static_cast<double>(ids.size()))
              << " test_rows=" << split.test.size() << '\n';
    return kOk;
}

struct TransferArgs {
    std::string checkpoint, image, out;
    std::size_t target_id = 0;
    std::uint64_t seed = 0;
};

int cmd_transfer(const TransferArgs& a) {
    const auto model = DeGanModel::load(a.checkpoint);
    const auto img = data::load_image(a.image);
    const std::size_t s = model.config().image_size;
    if (img.height != s || img.width != s) {
        throw DimensionError("model expects " + std::to_string(s) + "x" + std::to_string(s) + " images, got " +
                             std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    if (a.target_id >= model.config().n_id) {
        throw LabelError("--target-id " + std::to_string(a.target_id) + " outside [0, " +
                         std::to_string(model.config().n_id) + ")");
    }
    std::mt19937_64 rng(a.seed);
    const auto z = NoiseVector::sample(model.config().noise_dim, rng);
    data::Image out(s, s);
    out.pixels = model.transfer_expression(img.pixels, a.target_id, z);
    data::save_image(out, a.out);
    const auto d = model.discriminate(data::to_tensor(std::span<const data::Image>(&out, 1)));
    const auto probs = softmax_rows(d.expr_logits);
    const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
    std::cout << "RESULT out=" << a.out << " target_id=" << a.target_id << " predicted_expr=" << best << '\n';
    return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    const auto report = run_gradcheck_suite(seed);
    for (const auto& c : report.cases) {
        std::printf("%-32s %.3e  %s\n", c.name.c_str(), c.max_error, c.passed() ? "ok" : "FAIL");
    }
    std::cout << "RESULT max_rel_error=" << sci(report.max_error) << " cases=" << report.cases.size()
              << " passed=" << (report.passed() ? "true" : "false") << " seconds=" << fixed2(report.seconds)
              << '\n';
    return report.passed() ? kOk : kGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disentangled expression GAN: training, feature extraction and evaluation", "degan"};
    app.footer(std::string(kExitCodes) + "\nThe DEGAN_SEED environment variable overrides the config seed.\n");
    app.require_subcommand(1);
    std::function<int()> action;

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-data", "Render the synthetic glyph-face dataset");
    s->add_option("--ids", synth.ids, "Number of identities")->capture_default_str();
    s->add_option("--exprs", synth.exprs, "Number of expressions")->capture_default_str();
    s->add_option("--per-cell", synth.per_cell, "Samples per (identity, expression)")->capture_default_str();
    s->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
    s->add_option("--seed", synth.seed, "Jitter seed")->capture_default_str();
    s->add_option("--held-out", synth.held_out, "Comma-separated identities tagged test");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->callback([&] { action = [&] { return cmd_synth(synth); }; });

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train the model and write a checkpoint and loss log");
    t->add_option("--config", train.config, "key = value run config")->required();
    t->add_option("--out-checkpoint", train.checkpoint, "Checkpoint path")->required();
    t->add_option("--manifest", train.manifest, "Override the config's manifest");
    t->add_option("--log", train.log, "Loss log path (default: <checkpoint>.log.tsv)");
    t->add_flag("--quiet", train.quiet, "No progress lines");
    t->callback([&] { action = [&] { return cmd_train(train); }; });

    AugmentArgs aug;
    auto* g = app.add_subcommand("augment", "Crop, rotate and flip every image of a manifest");
    g->add_option("--manifest", aug.manifest)->required();
    g->add_option("--spec", aug.spec, "Augmentation spec (default: 5 crops x 11 angles x 2 flips)");
    g->add_option("--out", aug.out, "Output directory")->required();
    g->callback([&] { action = [&] { return cmd_augment(aug); }; });

    ExtractArgs ext;
    auto* e = app.add_subcommand("extract", "Encode every manifest image into a representation file");
    e->add_option("--checkpoint", ext.checkpoint)->required();
    e->add_option("--manifest", ext.manifest)->required();
    e->add_option("--out", ext.out)->required();
    e->add_option("--held-out", ext.held_out, "Tag these identities test instead of the manifest tags");
    e->callback([&] { action = [&] { return cmd_extract(ext); }; });

    FerTrainArgs ftrain;
    auto* ft = app.add_subcommand("fer-train", "Train the shallow classifier on representations");
    ft->add_option("--reps", ftrain.reps)->required();
    ft->add_option("--target", ftrain.target, "expr or id")->capture_default_str();
    ft->add_option("--out", ftrain.out, "Classifier path")->required();
    ft->add_option("--config", ftrain.config, "Run config for classifier settings");
    ft->callback([&] { action = [&] { return cmd_fer_train(ftrain); }; });

    FerEvalArgs feval;
    auto* fe = app.add_subcommand("fer-eval", "Accuracy of a classifier, or of a prediction file");
    fe->add_option("--reps", feval.reps);
    fe->add_option("--target", feval.target, "expr or id")->capture_default_str();
    fe->add_option("--model", feval.model, "Classifier from fer-train");
    fe->add_option("--predictions", feval.predictions, "Lines of '<predicted> <true>'");
    fe->add_option("--report", feval.report, "Write the full report here");
    fe->callback([&] { action = [&] { return cmd_fer_eval(feval); }; });

    ProbeArgs probe;
    auto* p = app.add_subcommand("probe", "Identity probe accuracy on representations");
    p->add_option("--reps", probe.reps)->required();
    p->add_option("--config", probe.config, "Run config for classifier settings");
    p->callback([&] { action = [&] { return cmd_probe(probe); }; });

    TransferArgs tr;
    auto* x = app.add_subcommand("transfer", "Move an image's expression onto another identity");
    x->add_option("--checkpoint", tr.checkpoint)->required();
    x->add_option("--image", tr.image)->required();
    x->add_option("--target-id", tr.target_id)->required();
    x->add_option("--out", tr.out)->required();
    x->add_option("--seed", tr.seed, "Noise seed")->capture_default_str();
    x->callback([&] { action = [&] { return cmd_transfer(tr); }; });

    std::uint64_t gc_seed = 1;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    c->add_option("--seed", gc_seed)->capture_default_str();
    c->callback([&] { action = [&] { return cmd_gradcheck(gc_seed); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kUsage;
    }

    try {
        return action();
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return kUsage;
    } catch (const IoError& err) {
        std::cerr << "I/O error: " << err.what() << '\n';
        return kIo;
    } catch (const DimensionError& err) {
        std::cerr << "dimension error: " << err.what() << '\n';
        return kDimension;
    } catch (const LabelError& err) {
        std::cerr << "label error: " << err.what() << '\n';
        return kLabel;
    } catch (const ContractError& err) {
        std::cerr << "contract error: " << err.what() << '\n';
        return kContract;
    } catch (const StateError& err) {
        std::cerr << "state error: " << err.what() << '\n';
        return kState;
    } catch (const DegenerateDataError& err) {
        std::cerr << "degenerate data: " << err.what() << '\n';
        return kDegenerate;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kConfig;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUnexpected;
    }
}
