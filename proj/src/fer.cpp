#include "degan/fer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "degan/errors.hpp"

namespace degan::fer {

namespace fs = std::filesystem;
using data::Split;

// ---------------------------------------------------------------------------
// Representation sets

void RepresentationSet::validate() const {
    if (y_id.size() != y_e.size() || values.size() != y_e.size() * dim ||
        (!split.empty() && split.size() != y_e.size())) {
        throw DimensionError("representation set: " + std::to_string(values.size()) + " values, " +
                             std::to_string(y_e.size()) + " expression labels, " +
                             std::to_string(y_id.size()) + " identity labels for dim " +
                             std::to_string(dim));
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw ContractError("representation set contains non-finite values");
    }
}

RepresentationSet RepresentationSet::subset(std::span<const std::size_t> indices) const {
    RepresentationSet out;
    out.dim = dim;
    out.source_model = source_model;
    out.source_dataset = source_dataset;
    for (auto i : indices) {
        if (i >= rows()) throw DimensionError("representation row " + std::to_string(i) + " out of range");
        const auto r = row(i);
        out.values.insert(out.values.end(), r.begin(), r.end());
        out.y_e.push_back(y_e[i]);
        out.y_id.push_back(y_id[i]);
        if (!split.empty()) out.split.push_back(split[i]);
    }
    return out;
}

RepresentationSet RepresentationSet::tagged(Split which) const {
    if (split.empty()) throw ContractError("representation set carries no split tags");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows(); ++i) {
        if (split[i] == which) idx.push_back(i);
    }
    return subset(idx);
}

RepresentationSet extract_representations(const DeGanModel& model,
                                          std::span<const data::ImageSample> samples,
                                          std::size_t batch_size) {
    const std::size_t size = model.config().image_size;
    RepresentationSet reps;
    reps.dim = model.config().rep_dim;
    for (const auto& s : samples) {
        if (s.image.height != size || s.image.width != size) {
            throw DimensionError("extract_representations: model expects " + std::to_string(size) +
                                 "x" + std::to_string(size) + " images, got " +
                                 std::to_string(s.image.height) + "x" + std::to_string(s.image.width));
        }
    }
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
        const Tensor out = model.encode(data::to_tensor(chunk));
        reps.values.insert(reps.values.end(), out.data().begin(), out.data().end());
        for (const auto& s : chunk) {
            reps.y_e.push_back(s.y_e);
            reps.y_id.push_back(s.y_id);
        }
    }
    return reps;
}

RepresentationSet pixel_representations(std::span<const data::ImageSample> samples) {
    RepresentationSet reps;
    reps.source_model = "pixels";
    if (samples.empty()) return reps;
    reps.dim = samples[0].image.pixels.size();
    for (const auto& s : samples) {
        if (s.image.pixels.size() != reps.dim) throw DimensionError("pixel_representations: mixed sizes");
        reps.values.insert(reps.values.end(), s.image.pixels.begin(), s.image.pixels.end());
        reps.y_e.push_back(s.y_e);
        reps.y_id.push_back(s.y_id);
    }
    return reps;
}

void save_representations(const RepresentationSet& reps, const fs::path& path) {
    reps.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write representations " + path.string());
    out << "dim " << reps.dim << "\nrows " << reps.rows() << "\nsource_model "
        << (reps.source_model.empty() ? "-" : reps.source_model) << "\nsource_dataset "
        << (reps.source_dataset.empty() ? "-" : reps.source_dataset) << '\n';
    char buf[64];
    for (std::size_t i = 0; i < reps.rows(); ++i) {
        const char* tag = reps.split.empty() ? "-" : (reps.split[i] == Split::Train ? "train" : "test");
        out << reps.y_e[i] << ' ' << reps.y_id[i] << ' ' << tag;
        for (double v : reps.row(i)) {
            std::snprintf(buf, sizeof buf, " %a", v);
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing representations " + path.string());
}

RepresentationSet load_representations(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open representations " + path.string());
    RepresentationSet reps;
    std::string key;
    std::size_t rows = 0;
    if (!(in >> key >> reps.dim) || key != "dim" || !(in >> key >> rows) || key != "rows" ||
        !(in >> key >> reps.source_model) || key != "source_model" ||
        !(in >> key >> reps.source_dataset) || key != "source_dataset") {
        throw IoError(path.string() + ": malformed representation header");
    }
    bool any_tag = false;
    std::string tok;
    for (std::size_t i = 0; i < rows; ++i) {
        int e = 0, id = 0;
        std::string tag;
        if (!(in >> e >> id >> tag)) throw IoError(path.string() + ": truncated at row " + std::to_string(i));
        reps.y_e.push_back(e);
        reps.y_id.push_back(id);
        if (tag == "train") reps.split.push_back(Split::Train), any_tag = true;
        else if (tag == "test") reps.split.push_back(Split::Test), any_tag = true;
        else if (tag == "-") reps.split.push_back(Split::Train);
        else throw IoError(path.string() + ": bad split tag '" + tag + "'");
        for (std::size_t j = 0; j < reps.dim; ++j) {
            if (!(in >> tok)) throw IoError(path.string() + ": truncated at row " + std::to_string(i));
            char* end = nullptr;
            reps.values.push_back(std::strtod(tok.c_str(), &end));
            if (*end != '\0') throw IoError(path.string() + ": bad value '" + tok + "'");
        }
    }
    if (!any_tag) reps.split.clear();
    reps.validate();
    return reps;
}

std::string to_string(Target t) { return t == Target::Expression ? "expr" : "id"; }

Target parse_target(const std::string& name) {
    if (name == "expr" || name == "expression") return Target::Expression;
    if (name == "id" || name == "identity") return Target::Identity;
    throw ConfigError("target must be 'expr' or 'id', got '" + name + "'");
}

const std::vector<int>& labels_of(const RepresentationSet& reps, Target target) {
    return target == Target::Expression ? reps.y_e : reps.y_id;
}

// ---------------------------------------------------------------------------
// MLP

MlpClassifier::MlpClassifier(std::size_t input_dim, std::size_t n_classes, const MlpConfig& config)
    : mean_(input_dim, 0.0), scale_(input_dim, 1.0), n_classes_(n_classes), config_(config) {
    const nn::LayerSpec specs[] = {nn::LayerSpec::dense(config.hidden),
                                   nn::LayerSpec::act(nn::Activation::LeakyRelu, config.leaky_slope),
                                   nn::LayerSpec::dense(n_classes)};
    net_ = nn::build_network(specs, {input_dim}, config.seed, "mlp");
}

Tensor MlpClassifier::standardized(const RepresentationSet& reps) const {
    if (reps.dim != input_dim()) {
        throw DimensionError("classifier expects " + std::to_string(input_dim()) +
                             "-dimensional inputs, got " + std::to_string(reps.dim));
    }
    std::vector<double> x(reps.values);
    for (std::size_t i = 0; i < reps.rows(); ++i) {
        for (std::size_t j = 0; j < reps.dim; ++j) {
            auto& v = x[i * reps.dim + j];
            v = (v - mean_[j]) / scale_[j];
        }
    }
    return Tensor({reps.rows(), reps.dim}, std::move(x));
}

Tensor MlpClassifier::logits(const RepresentationSet& reps) const {
    return net_.forward(standardized(reps));
}

std::vector<int> MlpClassifier::predict(const RepresentationSet& reps) const {
    if (reps.rows() == 0) return {};
    const Tensor z = logits(reps);
    std::vector<int> out(reps.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto row = z.data().subspan(i * n_classes_, n_classes_);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

void MlpClassifier::save(const fs::path& path, Target target) const {
    nn::Checkpoint ck;
    ck.set("format", "degan-mlp");
    ck.set("target", to_string(target));
    ck.set("input_dim", std::to_string(input_dim()));
    ck.set("n_classes", std::to_string(n_classes_));
    ck.set("hidden", std::to_string(config_.hidden));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", config_.leaky_slope);
    ck.set("leaky_slope", buf);
    ck.arrays.push_back({"feature_mean", {mean_.size()}, mean_});
    ck.arrays.push_back({"feature_scale", {scale_.size()}, scale_});
    nn::store_network(ck, "mlp", net_);
    nn::save_checkpoint(ck, path);
}

MlpClassifier MlpClassifier::load(const fs::path& path, Target* target) {
    const nn::Checkpoint ck = nn::load_checkpoint(path);
    if (!ck.has("format") || ck.get("format") != "degan-mlp") {
        throw IoError(path.string() + " does not hold a classifier");
    }
    MlpConfig cfg;
    cfg.hidden = std::stoull(ck.get("hidden"));
    cfg.leaky_slope = std::strtod(ck.get("leaky_slope").c_str(), nullptr);
    MlpClassifier clf(std::stoull(ck.get("input_dim")), std::stoull(ck.get("n_classes")), cfg);
    clf.mean_ = ck.array("feature_mean").values;
    clf.scale_ = ck.array("feature_scale").values;
    nn::restore_network(ck, "mlp", clf.net_);
    if (target) *target = parse_target(ck.get("target"));
    return clf;
}

TrainedMlp train_mlp(const RepresentationSet& reps, Target target, const MlpConfig& config,
                     std::size_t n_classes) {
    reps.validate();
    if (reps.rows() == 0) throw DegenerateDataError("train_mlp: empty training set");
    const auto& labels = labels_of(reps, target);
    const int max_label = *std::max_element(labels.begin(), labels.end());
    if (n_classes == 0) n_classes = static_cast<std::size_t>(max_label) + 1;
    if (std::any_of(labels.begin(), labels.end(),
                    [&](int l) { return l < 0 || static_cast<std::size_t>(l) >= n_classes; })) {
        throw LabelError("train_mlp: label outside [0, " + std::to_string(n_classes) + ")");
    }
    if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
        throw DegenerateDataError("train_mlp: training set contains a single class");
    }

    TrainedMlp out{MlpClassifier(reps.dim, n_classes, config), {}};
    MlpClassifier& clf = out.classifier;
    const std::size_t n = reps.rows(), d = reps.dim;
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += reps.values[i * d + j];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += std::pow(reps.values[i * d + j] - m, 2);
        const double sd = std::sqrt(var / static_cast<double>(n));
        clf.feature_mean()[j] = m;
        clf.feature_scale()[j] = sd > 1e-12 ? sd : 1.0;
    }
    const Tensor x = [&] {
        // Standardize once; minibatches are gathered from this matrix.
        std::vector<double> v(reps.values);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                v[i * d + j] = (v[i * d + j] - clf.feature_mean()[j]) / clf.feature_scale()[j];
            }
        }
        return Tensor({n, d}, std::move(v));
    }();

    nn::AdamConfig adam{config.learning_rate, 0.9, 0.999, 1e-8};
    auto params = clf.network().parameter_tensors();
    auto state = nn::make_optimizer_state(params, adam);
    std::mt19937_64 rng(nn::derive_seed(config.seed, 99));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t bs = std::max<std::size_t>(1, std::min(config.batch_size, n));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t m = std::min(bs, n - start);
            std::vector<double> xb(m * d);
            std::vector<int> yb(m);
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t i = order[start + r];
                std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                            xb.begin() + static_cast<std::ptrdiff_t>(r * d));
                yb[r] = labels[i];
            }
            clf.network().zero_grad();
            const auto ce = softmax_cross_entropy(clf.network().forward(Tensor({m, d}, std::move(xb))), yb);
            ce.loss.backward();
            nn::adam_step(params, state);
            total += ce.loss.item();
            ++batches;
        }
        out.loss_curve.push_back(total / static_cast<double>(batches));
    }
    clf.network().zero_grad();
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> truth,
                                std::size_t n_classes) {
    if (predicted.size() != truth.size()) {
        throw DimensionError("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                             std::to_string(truth.size()) + " labels");
    }
    EvalReport rep;
    rep.samples = truth.size();
    rep.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (int v : {predicted[i], truth[i]}) {
            if (v < 0 || static_cast<std::size_t>(v) >= n_classes) {
                throw LabelError("evaluate: class " + std::to_string(v) + " outside [0, " +
                                 std::to_string(n_classes) + ")");
            }
        }
        ++rep.confusion[truth[i]][predicted[i]];
    }
    std::size_t correct = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        correct += rep.confusion[c][c];
        const std::size_t count =
            std::accumulate(rep.confusion[c].begin(), rep.confusion[c].end(), std::size_t{0});
        rep.per_class_accuracy.push_back(
            count ? 100.0 * static_cast<double>(rep.confusion[c][c]) / static_cast<double>(count) : 0.0);
    }
    rep.accuracy = rep.samples ? 100.0 * static_cast<double>(correct) / static_cast<double>(rep.samples)
                               : 0.0;
    return rep;
}

EvalReport evaluate(const MlpClassifier& classifier, const RepresentationSet& reps, Target target) {
    return evaluate_predictions(classifier.predict(reps), labels_of(reps, target),
                                classifier.num_classes());
}

std::string serialize_report(const EvalReport& r) {
    std::ostringstream os;
    char buf[64];
    os << "method=" << r.method << '\n' << "setting=" << r.setting << '\n';
    os << "samples=" << r.samples << '\n';
    std::snprintf(buf, sizeof buf, "%.4f", r.accuracy);
    os << "accuracy=" << buf << '\n';
    os << "classes=" << r.confusion.size() << '\n';
    os << "per_class=";
    for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%.4f", r.per_class_accuracy[c]);
        os << (c ? "," : "") << buf;
    }
    os << "\nconfusion\n";
    for (const auto& row : r.confusion) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << row[c];
        os << '\n';
    }
    return os.str();
}

EvalReport parse_report(const std::string& text) {
    EvalReport r;
    std::istringstream in(text);
    std::string line;
    std::size_t classes = 0;
    bool in_confusion = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (in_confusion) {
            std::istringstream ls(line);
            std::vector<std::size_t> row;
            for (std::size_t v; ls >> v;) row.push_back(v);
            if (row.size() != classes) throw IoError("report: confusion row has wrong width");
            r.confusion.push_back(std::move(row));
            continue;
        }
        if (line == "confusion") {
            in_confusion = true;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("report: unexpected line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "method") r.method = value;
        else if (key == "setting") r.setting = value;
        else if (key == "samples") r.samples = std::stoull(value);
        else if (key == "accuracy") r.accuracy = std::stod(value);
        else if (key == "classes") classes = std::stoull(value);
        else if (key == "per_class") {
            std::istringstream ls(value);
            for (std::string tok; std::getline(ls, tok, ',');) r.per_class_accuracy.push_back(std::stod(tok));
        } else {
            throw IoError("report: unknown key '" + key + "'");
        }
    }
    if (r.confusion.size() != classes) throw IoError("report: confusion matrix is incomplete");
    return r;
}

std::string render_table(const std::string& title, std::span<const TableRow> rows) {
    std::size_t wm = 6, ws = 7;
    for (const auto& r : rows) {
        wm = std::max(wm, r.method.size());
        ws = std::max(ws, r.setting.size());
    }
    const auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
    std::ostringstream os;
    const std::string rule = "+" + std::string(wm + 2, '-') + "+" + std::string(ws + 2, '-') + "+----------+\n";
    os << title << '\n' << rule;
    os << "| " << pad("Method", wm) << " | " << pad("Setting", ws) << " | Accuracy |\n" << rule;
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%8.2f", r.accuracy);
        os << "| " << pad(r.method, wm) << " | " << pad(r.setting, ws) << " | " << buf << " |\n";
    }
    os << rule;
    return os.str();
}

std::span<const ReferenceResult> reference_results() {
    static const ReferenceResult kResults[] = {
        {"CK+", "CNN(baseline)", 90.34},      {"CK+", "DE-GAN", 97.28},
        {"MMI", "CNN(baseline)", 58.46},      {"MMI", "DE-GAN", 72.97},
        {"Oulu-CASIA", "CNN(baseline)", 73.14}, {"Oulu-CASIA", "DE-GAN", 89.17},
    };
    return kResults;
}

// ---------------------------------------------------------------------------
// Identity probe

IndexSplit stratified_cell_split(const RepresentationSet& reps, double test_fraction) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0) {
        throw ContractError("probe test fraction must lie in (0, 1)");
    }
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < reps.rows(); ++i) cells[{reps.y_id[i], reps.y_e[i]}].push_back(i);
    IndexSplit out;
    for (const auto& [key, idx] : cells) {
        std::size_t n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(idx.size())));
        if (n_test >= idx.size()) n_test = idx.size() - 1;
        const std::size_t n_train = idx.size() - n_test;
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

double identity_probe(const RepresentationSet& reps, const IndexSplit& split, const MlpConfig& config) {
    std::set<int> ids(reps.y_id.begin(), reps.y_id.end());
    if (ids.size() < 2) throw DegenerateDataError("identity_probe: need at least two identities");
    const std::size_t n_classes = static_cast<std::size_t>(*ids.rbegin()) + 1;
    const auto train = reps.subset(split.train);
    const auto test = reps.subset(split.test);
    const auto fit = train_mlp(train, Target::Identity, config, n_classes);
    return evaluate(fit.classifier, test, Target::Identity).accuracy;
}

// ---------------------------------------------------------------------------
// Baseline CNN

BaselineResult baseline_cnn(std::span<const data::ImageSample> train,
                            std::span<const data::ImageSample> test, const DeGanConfig& arch,
                            const BaselineConfig& config) {
    if (train.empty()) throw DegenerateDataError("baseline_cnn: empty training set");
    std::set<int> classes;
    for (const auto& s : train) classes.insert(s.y_e);
    if (classes.size() < 2) throw DegenerateDataError("baseline_cnn: training set contains a single class");
    for (const auto* set : {&train, &test}) {
        for (const auto& s : *set) {
            if (s.y_e < 0 || static_cast<std::size_t>(s.y_e) >= arch.n_expr) {
                throw LabelError("baseline_cnn: expression label " + std::to_string(s.y_e) +
                                 " outside [0, " + std::to_string(arch.n_expr) + ")");
            }
        }
    }

    auto specs = discriminator_trunk_specs(arch);
    specs.push_back(nn::LayerSpec::dense(arch.n_expr));
    nn::Network net = nn::build_network(specs, {1, arch.image_size, arch.image_size}, config.seed, "baseline");
    auto params = net.parameter_tensors();
    auto state = nn::make_optimizer_state(params, config.adam);

    BaselineResult out;
    std::mt19937_64 rng(nn::derive_seed(config.seed, 7));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t bs = std::min(config.batch_size, train.size());
    for (std::size_t step = 0; step < config.steps; ++step) {
        std::vector<data::ImageSample> batch;
        std::vector<int> labels;
        while (batch.size() < bs) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(train[order[cursor]]);
            labels.push_back(train[order[cursor]].y_e);
            ++cursor;
        }
        net.zero_grad();
        const auto ce = softmax_cross_entropy(net.forward(data::to_tensor(batch)), labels);
        ce.loss.backward();
        nn::adam_step(params, state);
        out.loss_curve.push_back(ce.loss.item());
    }

    std::vector<int> predicted, truth;
    for (std::size_t start = 0; start < test.size(); start += 64) {
        const auto chunk = test.subspan(start, std::min<std::size_t>(64, test.size() - start));
        const Tensor z = net.forward(data::to_tensor(chunk));
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const auto row = z.data().subspan(i * arch.n_expr, arch.n_expr);
            predicted.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
            truth.push_back(chunk[i].y_e);
        }
    }
    out.report = evaluate_predictions(predicted, truth, arch.n_expr);
    out.report.method = "CNN(baseline)";
    return out;
}

}  // namespace degan::fer
