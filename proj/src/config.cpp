#include "degan/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <algorithm>
#include <set>
#include <sstream>

#include "degan/errors.hpp"

namespace degan::config {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field size_field(M RunConfig::*member) {
    return {[member](RunConfig& c, const std::string& v, const std::string& k) { c.*member = parse_size(v, k); },
            [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double RunConfig::*member) {
    return {[member](RunConfig& c, const std::string& v, const std::string& k) { c.*member = parse_double(v, k); },
            [member](const RunConfig& c) { return fmt_double(c.*member); }};
}

Field bool_field(bool RunConfig::*member) {
    return {[member](RunConfig& c, const std::string& v, const std::string& k) { c.*member = parse_bool(v, k); },
            [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

// Ordered so describe_defaults() reads like a config file.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> kFields = {
        {"noise_dim", size_field(&RunConfig::noise_dim)},
        {"rep_dim", size_field(&RunConfig::rep_dim)},
        {"image_size", size_field(&RunConfig::image_size)},
        {"conv_channels",
         {[](RunConfig& c, const std::string& v, const std::string& k) { c.conv_channels = parse_size_list(v, k); },
          [](const RunConfig& c) { return join(c.conv_channels); }}},
        {"kernel", size_field(&RunConfig::kernel)},
        {"disc_hidden", size_field(&RunConfig::disc_hidden)},
        {"leaky_slope", double_field(&RunConfig::leaky_slope)},
        {"lr", double_field(&RunConfig::lr)},
        {"beta1", double_field(&RunConfig::beta1)},
        {"beta2", double_field(&RunConfig::beta2)},
        {"epsilon", double_field(&RunConfig::epsilon)},
        {"batch_size", size_field(&RunConfig::batch_size)},
        {"total_steps", size_field(&RunConfig::total_steps)},
        {"k_switch_fraction", double_field(&RunConfig::k_switch_fraction)},
        {"k_early", size_field(&RunConfig::k_early)},
        {"k_late", size_field(&RunConfig::k_late)},
        {"recon_weight", double_field(&RunConfig::recon_weight)},
        {"train_identities_only", bool_field(&RunConfig::train_identities_only)},
        {"seed",
         {[](RunConfig& c, const std::string& v, const std::string& k) { c.seed = parse_u64(v, k); },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"manifest",
         {[](RunConfig& c, const std::string& v, const std::string&) { c.manifest = v; },
          [](const RunConfig& c) { return c.manifest; }}},
        {"held_out_ids",
         {[](RunConfig& c, const std::string& v, const std::string& k) { c.held_out_ids = parse_int_list(v, k); },
          [](const RunConfig& c) { return join(c.held_out_ids); }}},
        {"augment", bool_field(&RunConfig::augment)},
        {"crop_size", size_field(&RunConfig::crop_size)},
        {"angles",
         {[](RunConfig& c, const std::string& v, const std::string& k) {
              c.angles.clear();
              for (const auto& a : split_list(v)) c.angles.push_back(parse_double(a, k));
          },
          [](const RunConfig& c) { return join(c.angles); }}},
        {"hflip", bool_field(&RunConfig::hflip)},
        {"mlp_hidden", size_field(&RunConfig::mlp_hidden)},
        {"mlp_epochs", size_field(&RunConfig::mlp_epochs)},
        {"mlp_batch", size_field(&RunConfig::mlp_batch)},
        {"mlp_lr", double_field(&RunConfig::mlp_lr)},
        {"probe_test_fraction", double_field(&RunConfig::probe_test_fraction)},
        {"log_path",
         {[](RunConfig& c, const std::string& v, const std::string&) { c.log_path = v; },
          [](const RunConfig& c) { return c.log_path; }}},
    };
    return kFields;
}

}  // namespace

std::vector<Entry> parse_key_values(std::string_view text, const std::string& source) {
    std::vector<Entry> out;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        Entry e{trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)), lineno};
        if (e.key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        if (!seen.insert(e.key).second) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + e.key + "'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Entry> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str(), path.string());
}

std::vector<std::string> split_list(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto next = text.find(sep, pos);
        const auto piece = trim(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
        if (!piece.empty()) out.push_back(piece);
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

double parse_double(const std::string& value, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || *end != '\0') throw ConfigError(key + ": not a number: '" + value + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
    if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(key + ": not a nonnegative integer: '" + value + "'");
    }
    try {
        return std::stoull(value);
    } catch (const std::exception&) {
        throw ConfigError(key + ": integer out of range: '" + value + "'");
    }
}

std::size_t parse_size(const std::string& value, const std::string& key) {
    return static_cast<std::size_t>(parse_u64(value, key));
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& value, const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& p : split_list(value)) out.push_back(parse_size(p, key));
    return out;
}

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
    std::vector<int> out;
    for (const auto& p : split_list(value)) out.push_back(static_cast<int>(parse_u64(p, key)));
    return out;
}

std::string describe_defaults() {
    const RunConfig defaults;
    std::ostringstream os;
    for (const auto& [key, field] : fields()) os << key << " = " << field.get(defaults) << '\n';
    return os.str();
}

RunConfig parse_run_config(const std::vector<Entry>& entries) {
    RunConfig cfg;
    const auto& table = fields();
    for (const auto& e : entries) {
        const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == e.key; });
        if (it == table.end()) {
            throw ConfigError("line " + std::to_string(e.line) + ": unknown config key '" + e.key + "'");
        }
        it->second.set(cfg, e.value, e.key);
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    try {
        return parse_run_config(read_key_values(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply_environment(RunConfig& config) {
    if (const char* seed = std::getenv("DEGAN_SEED"); seed && *seed) {
        config.seed = parse_u64(seed, "DEGAN_SEED");
    }
}

DeGanConfig model_config(const RunConfig& run, std::size_t n_expr, std::size_t n_id) {
    DeGanConfig c;
    c.n_expr = n_expr;
    c.n_id = n_id;
    c.noise_dim = run.noise_dim;
    c.rep_dim = run.rep_dim;
    c.image_size = run.augment ? run.crop_size : run.image_size;
    c.conv_channels = run.conv_channels;
    c.kernel = run.kernel;
    c.disc_hidden = run.disc_hidden;
    c.leaky_slope = run.leaky_slope;
    c.schedule = {run.total_steps, run.k_switch_fraction, run.k_early, run.k_late};
    c.recon_weight = run.recon_weight;
    c.adam = {run.lr, run.beta1, run.beta2, run.epsilon};
    c.seed = run.seed;
    return c;
}

data::AugmentationSpec augmentation_spec(const RunConfig& run) {
    data::AugmentationSpec spec;
    spec.crop_size = run.crop_size;
    spec.angles = run.angles;
    spec.hflip = run.hflip;
    return spec;
}

fer::MlpConfig mlp_config(const RunConfig& run) {
    fer::MlpConfig m;
    m.hidden = run.mlp_hidden;
    m.epochs = run.mlp_epochs;
    m.batch_size = run.mlp_batch;
    m.learning_rate = run.mlp_lr;
    m.leaky_slope = run.leaky_slope;
    m.seed = nn::derive_seed(run.seed, 1000);
    return m;
}

}  // namespace degan::config
