#include "cfl/config.hpp"

#include "cfl/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace cfl::harness {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) bad(key, v, "a nonnegative integer");
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_real(const std::string& key, const std::string& v) {
    if (v.empty()) bad(key, v, "a real number");
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        bad(key, v, "a real number");
    }
    if (pos != v.size() || !std::isfinite(out)) bad(key, v, "a finite real number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad(key, v, "a boolean (true | false)");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    if (v.empty()) return out;
    for (const auto& p : split(v, ',')) out.push_back(parse_size(key, p));
    return out;
}

std::string fmt_real(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& v, const std::string& sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    const char* key;
    const char* type;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    static const std::vector<Field> table = {
        {"task", "enum",
         [](const C& c) { return to_string(c.task); },
         [](C& c, const std::string& v) {
             if (v == "synthetic") c.task = TaskKind::synthetic;
             else if (v == "idx_split") c.task = TaskKind::idx_split;
             else bad("task", v, "synthetic | idx_split");
         }},
        {"clusters", "int", [](const C& c) { return std::to_string(c.clusters); },
         [](C& c, const std::string& v) { c.clusters = parse_size("clusters", v); }},
        {"devices", "int", [](const C& c) { return std::to_string(c.devices); },
         [](C& c, const std::string& v) { c.devices = parse_size("devices", v); }},
        {"lambda", "real", [](const C& c) { return fmt_real(c.lambda); },
         [](C& c, const std::string& v) { c.lambda = parse_real("lambda", v); }},
        {"learning_rate", "real", [](const C& c) { return fmt_real(c.learning_rate); },
         [](C& c, const std::string& v) { c.learning_rate = parse_real("learning_rate", v); }},
        {"batch_size", "int", [](const C& c) { return std::to_string(c.batch_size); },
         [](C& c, const std::string& v) { c.batch_size = parse_size("batch_size", v); }},
        {"rounds", "int", [](const C& c) { return std::to_string(c.rounds); },
         [](C& c, const std::string& v) { c.rounds = parse_size("rounds", v); }},
        {"similarity", "enum", [](const C& c) { return clustering::to_string(c.similarity); },
         [](C& c, const std::string& v) {
             if (v == "cosine") c.similarity = clustering::SimilarityKind::cosine;
             else if (v == "negative_euclidean") c.similarity = clustering::SimilarityKind::negative_euclidean;
             else bad("similarity", v, "cosine | negative_euclidean");
         }},
        {"literal_eq3", "bool", [](const C& c) { return fmt_bool(c.literal_eq3); },
         [](C& c, const std::string& v) { c.literal_eq3 = parse_bool("literal_eq3", v); }},
        {"normalize_losses", "bool", [](const C& c) { return fmt_bool(c.normalize_losses); },
         [](C& c, const std::string& v) { c.normalize_losses = parse_bool("normalize_losses", v); }},
        {"empty_cluster_policy", "enum", [](const C& c) { return federation::to_string(c.empty_cluster_policy); },
         [](C& c, const std::string& v) {
             if (v == "none") c.empty_cluster_policy = federation::EmptyClusterPolicy::Kind::none;
             else if (v == "pinned") c.empty_cluster_policy = federation::EmptyClusterPolicy::Kind::pinned;
             else if (v == "rescue") c.empty_cluster_policy = federation::EmptyClusterPolicy::Kind::rescue;
             else bad("empty_cluster_policy", v, "none | pinned | rescue");
         }},
        {"pinned_devices", "int list", [](const C& c) { return join(c.pinned_devices, ","); },
         [](C& c, const std::string& v) { c.pinned_devices = parse_size_list("pinned_devices", v); }},
        {"local_steps", "int", [](const C& c) { return std::to_string(c.local_steps); },
         [](C& c, const std::string& v) { c.local_steps = parse_size("local_steps", v); }},
        {"hidden_dims", "int list", [](const C& c) {
             return std::to_string(c.hidden_dims[0]) + "," + std::to_string(c.hidden_dims[1]);
         },
         [](C& c, const std::string& v) {
             const auto dims = parse_size_list("hidden_dims", v);
             if (dims.size() != 2) bad("hidden_dims", v, "exactly two integers");
             c.hidden_dims = {dims[0], dims[1]};
         }},
        {"master_seed", "int", [](const C& c) { return std::to_string(c.master_seed); },
         [](C& c, const std::string& v) { c.master_seed = parse_u64("master_seed", v); }},
        {"identical_init", "bool", [](const C& c) { return fmt_bool(c.identical_init); },
         [](C& c, const std::string& v) { c.identical_init = parse_bool("identical_init", v); }},
        {"eval_every", "int", [](const C& c) { return std::to_string(c.eval_every); },
         [](C& c, const std::string& v) { c.eval_every = parse_size("eval_every", v); }},
        {"record_timing", "bool", [](const C& c) { return fmt_bool(c.record_timing); },
         [](C& c, const std::string& v) { c.record_timing = parse_bool("record_timing", v); }},
        {"test_fraction", "real", [](const C& c) { return fmt_real(c.test_fraction); },
         [](C& c, const std::string& v) { c.test_fraction = parse_real("test_fraction", v); }},
        {"synth.dim", "int", [](const C& c) { return std::to_string(c.synth_dim); },
         [](C& c, const std::string& v) { c.synth_dim = parse_size("synth.dim", v); }},
        {"synth.classes", "int", [](const C& c) { return std::to_string(c.synth_classes); },
         [](C& c, const std::string& v) { c.synth_classes = parse_size("synth.classes", v); }},
        {"synth.separation", "real", [](const C& c) { return fmt_real(c.synth_separation); },
         [](C& c, const std::string& v) { c.synth_separation = parse_real("synth.separation", v); }},
        {"synth.noise_sigma", "real", [](const C& c) { return fmt_real(c.synth_noise_sigma); },
         [](C& c, const std::string& v) { c.synth_noise_sigma = parse_real("synth.noise_sigma", v); }},
        {"synth.samples_per_device", "int", [](const C& c) { return std::to_string(c.synth_samples_per_device); },
         [](C& c, const std::string& v) { c.synth_samples_per_device = parse_size("synth.samples_per_device", v); }},
        {"split.images", "path", [](const C& c) { return c.split_images; },
         [](C& c, const std::string& v) { c.split_images = v; }},
        {"split.labels", "path", [](const C& c) { return c.split_labels; },
         [](C& c, const std::string& v) { c.split_labels = v; }},
        {"split.total_classes", "int", [](const C& c) { return std::to_string(c.split_total_classes); },
         [](C& c, const std::string& v) { c.split_total_classes = parse_size("split.total_classes", v); }},
        {"split.classes_per_cluster", "int", [](const C& c) { return std::to_string(c.split_classes_per_cluster); },
         [](C& c, const std::string& v) { c.split_classes_per_cluster = parse_size("split.classes_per_cluster", v); }},
        {"split.min_overlap", "int", [](const C& c) { return std::to_string(c.split_min_overlap); },
         [](C& c, const std::string& v) { c.split_min_overlap = parse_size("split.min_overlap", v); }},
        {"split.samples_per_device", "int", [](const C& c) { return std::to_string(c.split_samples_per_device); },
         [](C& c, const std::string& v) { c.split_samples_per_device = parse_size("split.samples_per_device", v); }},
        {"split.class_sets", "int list list",
         [](const C& c) {
             std::string s;
             for (std::size_t k = 0; k < c.split_class_sets.size(); ++k)
                 s += (k ? "/" : "") + join(c.split_class_sets[k], ",");
             return s;
         },
         [](C& c, const std::string& v) {
             c.split_class_sets.clear();
             if (v.empty()) return;
             for (const auto& group : split(v, '/')) {
                 std::vector<int> set;
                 for (std::size_t x : parse_size_list("split.class_sets", group)) set.push_back(static_cast<int>(x));
                 c.split_class_sets.push_back(std::move(set));
             }
         }},
        {"output", "path", [](const C& c) { return c.output; },
         [](C& c, const std::string& v) { c.output = v; }},
    };
    return table;
}

} // namespace

std::string to_string(TaskKind kind) { return kind == TaskKind::synthetic ? "synthetic" : "idx_split"; }

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw ConfigError("config key '" + key + "': " + why);
    };
    if (clusters < 1) fail("clusters", "must be >= 1");
    if (devices < 1) fail("devices", "must be >= 1");
    if (devices % clusters != 0) fail("devices", "must be a multiple of clusters (devices are split evenly)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda", "must lie in [0, 1]");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be > 0");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (local_steps < 1) fail("local_steps", "must be >= 1");
    if (hidden_dims[0] < 1 || hidden_dims[1] < 1) fail("hidden_dims", "entries must be >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction", "must lie in (0, 1)");
    if (!pinned_devices.empty()) {
        if (empty_cluster_policy != federation::EmptyClusterPolicy::Kind::pinned)
            fail("pinned_devices", "only valid with empty_cluster_policy = pinned");
        if (pinned_devices.size() != clusters) fail("pinned_devices", "needs exactly `clusters` entries");
        std::set<std::size_t> seen;
        for (std::size_t d : pinned_devices) {
            if (d >= devices) fail("pinned_devices", "device " + std::to_string(d) + " outside [0, devices)");
            if (!seen.insert(d).second) fail("pinned_devices", "device " + std::to_string(d) + " listed twice");
        }
    }
    if (empty_cluster_policy == federation::EmptyClusterPolicy::Kind::pinned && devices < clusters)
        fail("empty_cluster_policy", "pinned needs at least `clusters` devices");

    if (task == TaskKind::synthetic) {
        if (synth_dim < 1) fail("synth.dim", "must be >= 1");
        if (synth_classes < 2) fail("synth.classes", "must be >= 2");
        if (!(synth_separation >= 0.0)) fail("synth.separation", "must be >= 0");
        if (!(synth_noise_sigma > 0.0)) fail("synth.noise_sigma", "must be > 0");
        if (synth_samples_per_device < 2) fail("synth.samples_per_device", "must be >= 2");
    } else {
        if (split_images.empty()) fail("split.images", "required for task = idx_split");
        if (split_labels.empty()) fail("split.labels", "required for task = idx_split");
        if (split_total_classes < 2) fail("split.total_classes", "must be >= 2");
        if (split_classes_per_cluster < 1 || split_classes_per_cluster > split_total_classes)
            fail("split.classes_per_cluster", "must lie in [1, split.total_classes]");
        if (split_min_overlap > split_classes_per_cluster)
            fail("split.min_overlap", "cannot exceed split.classes_per_cluster");
        if (!split_class_sets.empty() && split_class_sets.size() != clusters)
            fail("split.class_sets", "needs exactly `clusters` groups");
    }
}

ExperimentConfig parse_config(const std::string& text) {
    std::map<std::string, const Field*> by_key;
    for (const auto& f : fields()) by_key[f.key] = &f;

    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        it->second->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    return out;
}

std::string to_single_line(const ExperimentConfig& cfg) {
    std::string out;
    bool first = true;
    for (const auto& f : fields()) {
        out += (first ? "" : "; ") + std::string(f.key) + "=" + f.get(cfg);
        first = false;
    }
    return out;
}

} // namespace cfl::harness
