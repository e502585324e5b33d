#include "catuda/experiment.hpp"

#include "catuda/errors.hpp"
#include "catuda/format.hpp"
#include "catuda/teacher.hpp"

#include <json.hpp>
#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace catuda {

namespace {

template <typename E>
struct EnumNames {
    std::vector<std::pair<E, std::string>> entries;

    const std::string& name(E e) const {
        for (const auto& [v, n] : entries) {
            if (v == e) return n;
        }
        throw std::logic_error("unnamed enum value");
    }
    std::optional<E> parse(const std::string& s) const {
        for (const auto& [v, n] : entries) {
            if (n == s) return v;
        }
        return std::nullopt;
    }
    std::string choices() const {
        std::string out;
        for (const auto& [v, n] : entries) out += (out.empty() ? "" : ", ") + n;
        return out;
    }
};

const EnumNames<Scenario> kScenarios{{{Scenario::imbalanced_gaussians, "imbalanced_gaussians"},
                                      {Scenario::multimode, "multimode"},
                                      {Scenario::idx_digits, "idx_digits"}}};
const EnumNames<Activation> kActivations{{{Activation::relu, "relu"}, {Activation::tanh, "tanh"}}};
const EnumNames<Metric> kMetrics{{{Metric::sq_euclidean, "sq_euclidean"}, {Metric::euclidean, "euclidean"}}};
const EnumNames<RampSchedule> kRamps{{{RampSchedule::logistic, "logistic"},
                                      {RampSchedule::exp_ramp, "exp_ramp"},
                                      {RampSchedule::constant, "constant"}}};
const EnumNames<LambdaSchedule> kLambdaSchedules{
    {{LambdaSchedule::same_as_alpha, "same_as_alpha"}, {LambdaSchedule::constant, "constant"}}};
const EnumNames<TeacherKind> kTeachers{
    {{TeacherKind::temporal, "temporal"}, {TeacherKind::pi, "pi"}, {TeacherKind::self, "self"}}};

const std::vector<std::string> kAblationNames{"no_Lc", "no_La", "no_rRevGrad_threshold", "no_teacher",
                                              "marginal_only"};

std::size_t line_of(const YAML::Node& n) { return static_cast<std::size_t>(n.Mark().line) + 1; }

// Reads one YAML mapping, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
  public:
    Section(const YAML::Node& node, std::string path, std::map<std::string, std::size_t>& lines)
        : node_(node), path_(std::move(path)), lines_(lines) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            throw ConfigError(path_, line_of(node_), "expected a mapping");
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    // Returns the node for `key` if present and marks it used.
    std::optional<YAML::Node> take(const std::string& key) {
        used_.insert(key);
        if (!node_ || node_.IsNull()) return std::nullopt;
        YAML::Node v = node_[key];
        if (!v.IsDefined()) return std::nullopt;
        lines_[field(key)] = line_of(v);
        return v;
    }

    template <typename T>
    void scalar(const std::string& key, T& out) {
        if (auto v = take(key)) out = convert<T>(*v, key);
    }

    void count(const std::string& key, std::size_t& out, std::size_t min = 0) {
        auto v = take(key);
        if (!v) return;
        const auto x = convert<long long>(*v, key);
        if (x < static_cast<long long>(min)) {
            throw ConfigError(field(key), line_of(*v), "must be an integer >= " + std::to_string(min));
        }
        out = static_cast<std::size_t>(x);
    }

    template <typename E>
    void choice(const std::string& key, const EnumNames<E>& names, E& out) {
        auto v = take(key);
        if (!v) return;
        const auto s = convert<std::string>(*v, key);
        const auto e = names.parse(s);
        if (!e) {
            throw ConfigError(field(key), line_of(*v), "unknown value '" + s + "' (expected one of: " + names.choices() + ")");
        }
        out = *e;
    }

    template <typename T>
    T convert(const YAML::Node& v, const std::string& key) const {
        if (!v.IsScalar()) throw ConfigError(field(key), line_of(v), "expected a scalar");
        try {
            return v.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError(field(key), line_of(v), "cannot parse '" + v.Scalar() + "'");
        }
    }

    void finish() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!used_.count(key)) throw ConfigError(field(key), line_of(kv.first), "unknown key");
        }
    }

    const std::string& path() const { return path_; }

  private:
    YAML::Node node_;
    std::string path_;
    std::map<std::string, std::size_t>& lines_;
    std::set<std::string> used_;
};

std::vector<double> numbers(Section& s, const YAML::Node& v, const std::string& key) {
    if (!v.IsSequence()) throw ConfigError(s.field(key), line_of(v), "expected a list");
    std::vector<double> out;
    for (const auto& item : v) out.push_back(s.convert<double>(item, key));
    return out;
}

void read_points(Section& s, const std::string& key, std::array<Point2, 2>& out) {
    auto v = s.take(key);
    if (!v) return;
    if (!v->IsSequence() || v->size() != 2) {
        throw ConfigError(s.field(key), line_of(*v), "expected two [x, y] points");
    }
    for (std::size_t i = 0; i < 2; ++i) {
        const auto p = numbers(s, (*v)[i], key);
        if (p.size() != 2) throw ConfigError(s.field(key), line_of((*v)[i]), "expected [x, y]");
        out[i] = {p[0], p[1]};
    }
}

void read_data(Section& s, ExperimentConfig& cfg) {
    switch (cfg.scenario) {
        case Scenario::imbalanced_gaussians: {
            auto& d = cfg.imbalanced;
            s.count("n_major", d.n_major, 1);
            s.count("n_minor", d.n_minor, 1);
            read_points(s, "source_means", d.source_means);
            read_points(s, "target_means", d.target_means);
            s.scalar("sigma", d.sigma);
            break;
        }
        case Scenario::multimode: {
            auto& d = cfg.multimode;
            s.count("modes_per_class", d.modes_per_class, 2);
            s.scalar("radius", d.radius);
            s.scalar("rotation_deg", d.rotation_deg);
            s.count("n_per_mode", d.n_per_mode, 1);
            s.scalar("sigma", d.sigma);
            s.scalar("extra_mode", d.extra_mode);
            s.scalar("extra_radius", d.extra_radius);
            if (auto v = s.take("extra_points")) {
                const auto p = numbers(s, *v, "extra_points");
                if (p.size() != 2 || p[0] < 0 || p[1] < 0 || p[0] != std::floor(p[0]) || p[1] != std::floor(p[1])) {
                    throw ConfigError(s.field("extra_points"), line_of(*v), "expected two counts [class0, class1]");
                }
                d.extra_points = {static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1])};
            }
            break;
        }
        case Scenario::idx_digits: {
            auto& d = cfg.idx;
            auto path = [&s](const std::string& key, std::filesystem::path& out) {
                std::string v = out.string();
                s.scalar(key, v);
                out = v;
            };
            path("source_images", d.source_images);
            path("source_labels", d.source_labels);
            path("target_images", d.target_images);
            path("target_labels", d.target_labels);
            s.count("source_subsample", d.source_subsample);
            s.count("target_subsample", d.target_subsample);
            break;
        }
    }
    s.finish();
}

void read_network(Section& s, ExperimentConfig& cfg) {
    auto& arch = cfg.train.student;
    if (auto v = s.take("hidden")) {
        if (!v->IsSequence()) throw ConfigError(s.field("hidden"), line_of(*v), "expected a list of widths");
        arch.hidden.clear();
        for (const auto& w : *v) {
            const auto x = s.convert<long long>(w, "hidden");
            if (x < 1) throw ConfigError(s.field("hidden"), line_of(w), "layer widths must be >= 1");
            arch.hidden.push_back(static_cast<std::size_t>(x));
        }
    }
    s.choice("activation", kActivations, arch.activation);
    s.scalar("dropout", arch.dropout);
    if (auto v = s.take("feature_tap")) {
        const auto t = s.convert<std::string>(*v, "feature_tap");
        if (t == "auto") {
            arch.feature_tap.reset();
        } else if (t == "logits") {
            arch.feature_tap = FeatureTap::logits;
        } else if (t == "penultimate") {
            arch.feature_tap = FeatureTap::penultimate;
        } else {
            throw ConfigError(s.field("feature_tap"), line_of(*v),
                              "unknown value '" + t + "' (expected one of: auto, logits, penultimate)");
        }
    }
    s.count("critic_hidden", cfg.train.critic_hidden, 1);
    s.finish();
}

void read_train(Section& s, TrainConfig& t) {
    s.count("total_iters", t.total_iters, 1);
    s.count("pretrain_iters", t.pretrain_iters);
    s.count("batch_source", t.batch_source, 1);
    s.count("batch_target", t.batch_target, 1);
    s.scalar("m", t.m);
    s.choice("metric", kMetrics, t.metric);
    s.scalar("p", t.p);
    s.choice("alpha_schedule", kRamps, t.alpha_schedule);
    s.scalar("alpha_max", t.alpha_max);
    s.count("ramp_length", t.ramp_length);
    s.choice("lambda_schedule", kLambdaSchedules, t.lambda_schedule);
    s.scalar("lambda_max", t.lambda_max);
    s.scalar("lr", t.lr_base);
    s.scalar("momentum", t.momentum);
    s.choice("teacher", kTeachers, t.teacher_mode);
    s.scalar("decay", t.decay);
    s.finish();
}

// Where each TrainConfig field lives in the file.
std::string train_field_path(const std::string& field) {
    static const std::set<std::string> network{"hidden", "dropout", "critic_hidden"};
    if (network.count(field)) return "network." + field;
    if (field == "lr_base") return "train.lr";
    return "train." + field;
}

void validate(const ExperimentConfig& cfg, const std::map<std::string, std::size_t>& lines) {
    auto line = [&lines](const std::string& f) {
        const auto it = lines.find(f);
        return it == lines.end() ? std::size_t{0} : it->second;
    };
    try {
        cfg.train.validate();
    } catch (const ParameterError& e) {
        const std::string msg = e.what();
        const auto colon = msg.find(':');
        const auto field = train_field_path(msg.substr(0, colon));
        throw ConfigError(field, line(field), colon == std::string::npos ? msg : msg.substr(colon + 2));
    }
    if (cfg.seeds.empty()) throw ConfigError("seeds", line("seeds"), "at least one seed is required");
    if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
        throw ConfigError("seeds", line("seeds"), "seeds must be distinct");
    }
    if (cfg.eval_every < 1) throw ConfigError("eval_every", line("eval_every"), "must be >= 1");

    auto positive = [&](double v, const std::string& f) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(f, line(f), "must be > 0");
    };
    switch (cfg.scenario) {
        case Scenario::imbalanced_gaussians:
            positive(cfg.imbalanced.sigma, "data.sigma");
            break;
        case Scenario::multimode:
            positive(cfg.multimode.sigma, "data.sigma");
            positive(cfg.multimode.radius, "data.radius");
            positive(cfg.multimode.extra_radius, "data.extra_radius");
            break;
        case Scenario::idx_digits: {
            const auto& d = cfg.idx;
            for (const auto& [f, p] : {std::pair<std::string, std::filesystem::path>{"data.source_images", d.source_images},
                                       {"data.source_labels", d.source_labels},
                                       {"data.target_images", d.target_images},
                                       {"data.target_labels", d.target_labels}}) {
                if (p.empty()) throw ConfigError(f, line(f), "path is required for idx_digits");
            }
            break;
        }
    }
}

void emit_points(YAML::Emitter& out, const std::array<Point2, 2>& pts) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& p : pts) out << YAML::Flow << YAML::BeginSeq << format_double(p[0]) << format_double(p[1]) << YAML::EndSeq;
    out << YAML::EndSeq;
}

std::string emit(const ExperimentConfig& cfg, bool with_output_dir) {
    YAML::Emitter out;
    out.SetBoolFormat(YAML::TrueFalseBool);
    auto num = [](double v) { return format_double(v); };
    out << YAML::BeginMap;
    out << YAML::Key << "scenario" << YAML::Value << to_string(cfg.scenario);
    out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.seeds;
    if (with_output_dir) out << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir.string();
    out << YAML::Key << "eval_every" << YAML::Value << cfg.eval_every;
    out << YAML::Key << "ablation" << YAML::Value << YAML::Flow << cfg.ablation.names();

    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    switch (cfg.scenario) {
        case Scenario::imbalanced_gaussians: {
            const auto& d = cfg.imbalanced;
            out << YAML::Key << "n_major" << YAML::Value << d.n_major;
            out << YAML::Key << "n_minor" << YAML::Value << d.n_minor;
            out << YAML::Key << "source_means" << YAML::Value;
            emit_points(out, d.source_means);
            out << YAML::Key << "target_means" << YAML::Value;
            emit_points(out, d.target_means);
            out << YAML::Key << "sigma" << YAML::Value << num(d.sigma);
            break;
        }
        case Scenario::multimode: {
            const auto& d = cfg.multimode;
            out << YAML::Key << "modes_per_class" << YAML::Value << d.modes_per_class;
            out << YAML::Key << "radius" << YAML::Value << num(d.radius);
            out << YAML::Key << "rotation_deg" << YAML::Value << num(d.rotation_deg);
            out << YAML::Key << "n_per_mode" << YAML::Value << d.n_per_mode;
            out << YAML::Key << "sigma" << YAML::Value << num(d.sigma);
            out << YAML::Key << "extra_mode" << YAML::Value << d.extra_mode;
            out << YAML::Key << "extra_radius" << YAML::Value << num(d.extra_radius);
            out << YAML::Key << "extra_points" << YAML::Value << YAML::Flow << YAML::BeginSeq
                << d.extra_points[0] << d.extra_points[1] << YAML::EndSeq;
            break;
        }
        case Scenario::idx_digits: {
            const auto& d = cfg.idx;
            out << YAML::Key << "source_images" << YAML::Value << d.source_images.string();
            out << YAML::Key << "source_labels" << YAML::Value << d.source_labels.string();
            out << YAML::Key << "target_images" << YAML::Value << d.target_images.string();
            out << YAML::Key << "target_labels" << YAML::Value << d.target_labels.string();
            out << YAML::Key << "source_subsample" << YAML::Value << d.source_subsample;
            out << YAML::Key << "target_subsample" << YAML::Value << d.target_subsample;
            break;
        }
    }
    out << YAML::EndMap;

    const auto& t = cfg.train;
    out << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << t.student.hidden;
    out << YAML::Key << "activation" << YAML::Value << kActivations.name(t.student.activation);
    out << YAML::Key << "dropout" << YAML::Value << num(t.student.dropout);
    out << YAML::Key << "feature_tap" << YAML::Value
        << (!t.student.feature_tap ? "auto" : *t.student.feature_tap == FeatureTap::logits ? "logits" : "penultimate");
    out << YAML::Key << "critic_hidden" << YAML::Value << t.critic_hidden;
    out << YAML::EndMap;

    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "total_iters" << YAML::Value << t.total_iters;
    out << YAML::Key << "pretrain_iters" << YAML::Value << t.pretrain_iters;
    out << YAML::Key << "batch_source" << YAML::Value << t.batch_source;
    out << YAML::Key << "batch_target" << YAML::Value << t.batch_target;
    out << YAML::Key << "m" << YAML::Value << num(t.m);
    out << YAML::Key << "metric" << YAML::Value << kMetrics.name(t.metric);
    out << YAML::Key << "p" << YAML::Value << num(t.p);
    out << YAML::Key << "alpha_schedule" << YAML::Value << kRamps.name(t.alpha_schedule);
    out << YAML::Key << "alpha_max" << YAML::Value << num(t.alpha_max);
    out << YAML::Key << "ramp_length" << YAML::Value << t.ramp_length;
    out << YAML::Key << "lambda_schedule" << YAML::Value << kLambdaSchedules.name(t.lambda_schedule);
    out << YAML::Key << "lambda_max" << YAML::Value << num(t.lambda_max);
    out << YAML::Key << "lr" << YAML::Value << num(t.lr_base);
    out << YAML::Key << "momentum" << YAML::Value << num(t.momentum);
    out << YAML::Key << "teacher" << YAML::Value << kTeachers.name(t.teacher_mode);
    out << YAML::Key << "decay" << YAML::Value << num(t.decay);
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

std::string sha256_hex(const std::string& text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

int infer_classes(const std::vector<int>& a, const std::vector<int>& b) {
    int k = 0;
    for (int y : a) k = std::max(k, y + 1);
    for (int y : b) k = std::max(k, y + 1);
    return k;
}

}  // namespace

std::vector<std::string> Ablations::names() const {
    std::vector<std::string> out;
    const bool flags[] = {no_Lc, no_La, no_rRevGrad_threshold, no_teacher, marginal_only};
    for (std::size_t i = 0; i < kAblationNames.size(); ++i) {
        if (flags[i]) out.push_back(kAblationNames[i]);
    }
    return out;
}

std::string to_string(Scenario s) { return kScenarios.name(s); }

ExperimentConfig preset(Scenario scenario) {
    ExperimentConfig cfg;
    cfg.scenario = scenario;
    switch (scenario) {
        case Scenario::imbalanced_gaussians:
            cfg.output_dir = "runs/imbalanced_gaussians";
            break;
        case Scenario::multimode:
            // Class-conditional losses need the mode geometry, which the two
            // logits of a binary problem throw away.
            cfg.train.student.feature_tap = FeatureTap::penultimate;
            cfg.output_dir = "runs/multimode";
            break;
        case Scenario::idx_digits:
            cfg.train.student.hidden = {256, 128};
            cfg.train.total_iters = 3000;
            cfg.output_dir = "runs/idx_digits";
            break;
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("", static_cast<std::size_t>(e.mark.line) + 1, "YAML syntax error: " + e.msg);
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    std::map<std::string, std::size_t> lines;
    Section top(root, "", lines);

    Scenario scenario = Scenario::imbalanced_gaussians;
    top.choice("scenario", kScenarios, scenario);
    ExperimentConfig cfg = preset(scenario);

    if (auto v = top.take("seeds")) {
        cfg.seeds.clear();
        if (v->IsScalar()) {
            cfg.seeds.push_back(top.convert<std::uint64_t>(*v, "seeds"));
        } else if (v->IsSequence()) {
            for (const auto& s : *v) {
                const auto x = top.convert<long long>(s, "seeds");
                if (x < 0) throw ConfigError("seeds", line_of(s), "seeds must be non-negative");
                cfg.seeds.push_back(static_cast<std::uint64_t>(x));
            }
        } else {
            throw ConfigError("seeds", line_of(*v), "expected a list of integers");
        }
    }
    {
        std::string dir = cfg.output_dir.string();
        top.scalar("output_dir", dir);
        cfg.output_dir = dir;
    }
    top.count("eval_every", cfg.eval_every, 1);
    if (auto v = top.take("ablation")) {
        std::vector<YAML::Node> items;
        if (v->IsScalar()) {
            items.push_back(*v);
        } else if (v->IsSequence()) {
            for (const auto& f : *v) items.push_back(f);
        } else if (!v->IsNull()) {
            throw ConfigError("ablation", line_of(*v), "expected a list of flags");
        }
        for (const auto& f : items) {
            const auto name = top.convert<std::string>(f, "ablation");
            bool* flag = name == "no_Lc"                   ? &cfg.ablation.no_Lc
                         : name == "no_La"                 ? &cfg.ablation.no_La
                         : name == "no_rRevGrad_threshold" ? &cfg.ablation.no_rRevGrad_threshold
                         : name == "no_teacher"            ? &cfg.ablation.no_teacher
                         : name == "marginal_only"         ? &cfg.ablation.marginal_only
                                                           : nullptr;
            if (!flag) throw ConfigError("ablation", line_of(f), "unknown flag '" + name + "'");
            *flag = true;
        }
    }
    {
        auto v = top.take("data");
        Section s(v.value_or(YAML::Node()), "data", lines);
        read_data(s, cfg);
    }
    {
        auto v = top.take("network");
        Section s(v.value_or(YAML::Node()), "network", lines);
        read_network(s, cfg);
    }
    {
        auto v = top.take("train");
        Section s(v.value_or(YAML::Node()), "train", lines);
        read_train(s, cfg.train);
    }
    top.finish();
    validate(cfg, lines);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", 0, "cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string resolved_yaml(const ExperimentConfig& cfg) { return emit(cfg, true); }

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(emit(cfg, false)); }

TrainConfig effective_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainConfig t = cfg.train;
    t.seed = seed;
    const auto& a = cfg.ablation;
    if (a.no_Lc) t.use_clustering = false;
    if (a.no_La) t.use_alignment = false;
    if (a.no_rRevGrad_threshold) t.p = 0.0;
    if (a.no_teacher) t.teacher_mode = TeacherKind::self;
    if (a.marginal_only) {
        t.alpha_max = 0.0;
        t.p = 0.0;
    }
    return t;
}

DomainDataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    switch (cfg.scenario) {
        case Scenario::imbalanced_gaussians:
            return make_imbalanced_gaussians(cfg.imbalanced, seed);
        case Scenario::multimode:
            return make_multimode_domains(cfg.multimode, seed);
        case Scenario::idx_digits: {
            const auto& d = cfg.idx;
            auto src = load_idx(d.source_images, d.source_labels, d.source_subsample, derive_seed(seed, {0x51}));
            auto tgt = load_idx(d.target_images, d.target_labels, d.target_subsample, derive_seed(seed, {0x52}));
            if (src.x.cols() != tgt.x.cols()) {
                throw ShapeError("idx_digits: source images are " + std::to_string(src.rows) + "x" +
                                 std::to_string(src.cols) + " but target images are " +
                                 std::to_string(tgt.rows) + "x" + std::to_string(tgt.cols));
            }
            const int k = infer_classes(src.labels, tgt.labels);
            return DomainDataset(std::move(src.x), std::move(src.labels), std::move(tgt.x), std::move(tgt.labels), k);
        }
    }
    throw std::logic_error("unknown scenario");
}

void write_metrics_csv(std::ostream& os, const std::vector<RunMetrics>& metrics) {
    os << "iteration,target_acc,source_acc,cluster_acc,jsd_proxy,selection_rate,l_y,l_c,l_a,l_d\n";
    for (const auto& m : metrics) {
        os << m.iteration;
        for (double v : {m.target_accuracy, m.source_accuracy, m.clustering_accuracy, m.jsd_proxy,
                         m.selection_rate, m.l_y, m.l_c, m.l_a, m.l_d}) {
            os << ',' << format_double(v);
        }
        os << '\n';
    }
}

void write_features_csv(std::ostream& os, const TrainState& state, const TrainConfig& cfg,
                        const DomainDataset& ds) {
    const auto fs = forward(state.student, ds.source_x(), Mode::eval, 0);
    const auto ft = forward(state.student, ds.target_x(), Mode::eval, 0);
    os << "domain,true_class,pseudo_class,confidence";
    for (Eigen::Index d = 0; d < fs.features.cols(); ++d) os << ",f" << d;
    os << '\n';
    auto rows = [&os](const char* domain, const Matrix& f, const std::vector<int>& truth, const PseudoLabels& pl) {
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
            const auto r = static_cast<std::size_t>(i);
            os << domain << ',' << truth[r] << ',' << pl.labels[r] << ',' << format_double(pl.confidences[r]);
            for (Eigen::Index d = 0; d < f.cols(); ++d) os << ',' << format_double(f(i, d));
            os << '\n';
        }
    };
    rows("source", fs.features, ds.source_y(), pseudo_labels(fs.probabilities));
    rows("target", ft.features, hidden_target_labels(ds), teacher_view(state, cfg, ds));
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

std::string table_cell(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f \xC2\xB1 %.1f", 100.0 * mean, 100.0 * std);
    return buf;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs, std::ostream* log) {
    ExperimentResult result;
    result.config_hash = config_hash(cfg);
    if (write_outputs) std::filesystem::create_directories(cfg.output_dir);

    auto write_file = [&cfg](const std::string& name, auto&& body) {
        std::ofstream out(cfg.output_dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (cfg.output_dir / name).string());
        body(out);
    };

    for (const auto seed : cfg.seeds) {
        const TrainConfig tc = effective_train_config(cfg, seed);
        const DomainDataset ds = make_dataset(cfg, seed);
        if (log) *log << "seed " << seed << ": training " << tc.total_iters << " iterations\n";
        std::optional<TrainResult> trained;
        try {
            trained.emplace(train(tc, ds, cfg.eval_every));
        } catch (const TrainingAbort& e) {
            result.error = "seed " + std::to_string(seed) + ": " + e.what();
            if (log) *log << *result.error << '\n';
            break;
        }
        TrainResult& run = *trained;
        SeedResult sr;
        sr.seed = seed;
        sr.metrics = std::move(run.metrics);
        sr.final_metrics = sr.metrics.back();
        if (sr.final_metrics.iteration != tc.total_iters) sr.final_metrics = evaluate(run.state, tc, ds);
        if (log) {
            *log << "seed " << seed << ": target_acc " << format_double(sr.final_metrics.target_accuracy)
                 << " cluster_acc " << format_double(sr.final_metrics.clustering_accuracy) << '\n';
        }
        if (write_outputs) {
            const auto tag = std::to_string(seed);
            write_file("metrics_" + tag + ".csv", [&](std::ostream& os) { write_metrics_csv(os, sr.metrics); });
            write_file("features_" + tag + ".csv",
                       [&](std::ostream& os) { write_features_csv(os, run.state, tc, ds); });
            if (run.state.ensemble) {
                write_file("teacher_" + tag + ".csv",
                           [&](std::ostream& os) { write_teacher_csv(os, *run.state.ensemble); });
            }
        }
        result.seeds.push_back(std::move(sr));
    }

    std::vector<double> acc;
    for (const auto& s : result.seeds) acc.push_back(s.final_metrics.target_accuracy);
    std::tie(result.mean_target_accuracy, result.std_target_accuracy) = mean_std(acc);
    result.cell = table_cell(result.mean_target_accuracy, result.std_target_accuracy);
    if (write_outputs) {
        write_file("summary.json", [&](std::ostream& os) { os << summary_json(cfg, result); });
    }
    return result;
}

std::string summary_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
    nlohmann::ordered_json j;
    j["scenario"] = to_string(cfg.scenario);
    j["ablation"] = cfg.ablation.names();
    j["config_hash"] = result.config_hash;
    j["seeds"] = cfg.seeds;
    auto per_seed = nlohmann::ordered_json::array();
    std::vector<double> acc;
    for (const auto& s : result.seeds) {
        const auto& m = s.final_metrics;
        acc.push_back(m.target_accuracy);
        per_seed.push_back({{"seed", s.seed},
                            {"target_accuracy", m.target_accuracy},
                            {"source_accuracy", m.source_accuracy},
                            {"cluster_accuracy", m.clustering_accuracy},
                            {"cluster_accuracy_source", m.clustering_accuracy_source},
                            {"cluster_accuracy_target", m.clustering_accuracy_target},
                            {"jsd_proxy", m.jsd_proxy},
                            {"jsd_proxy_selected", m.jsd_proxy_selected},
                            {"selection_rate", m.selection_rate}});
    }
    j["final_target_accuracy"] = acc;
    j["mean"] = result.mean_target_accuracy;
    j["std"] = result.std_target_accuracy;
    j["cell"] = result.cell;
    j["per_seed"] = per_seed;
    if (result.error) j["error"] = *result.error;
    return j.dump(2) + "\n";
}

}  // namespace catuda
