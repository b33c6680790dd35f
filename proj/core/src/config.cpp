#include "mapn/config.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mapn/error.hpp"
#include "mapn/random.hpp"

namespace mapn {

using nlohmann::json;

double MaskConfig::effective_center_fraction() const
{
    return center_fraction > 0.0 ? center_fraction : kspace::default_center_fraction(acceleration);
}

int ExperimentConfig::epochs() const
{
    if (schedule.epochs > 0) return schedule.epochs;
    const bool paper = preset == "paper";
    switch (regime) {
    case Regime::oaon: return paper ? 50 : 10;
    case Regime::maon:
    case Regime::mapn: return paper ? 150 : 30;
    }
    return 0;
}

int ExperimentConfig::warmup_epochs() const
{
    if (schedule.warmup_epochs >= 0) return schedule.warmup_epochs;
    if (regime != Regime::mapn) return 0;
    return preset == "paper" ? 30 : 10;
}

ModelSpec ExperimentConfig::model_spec() const
{
    ModelSpec s;
    s.net = model.net;
    s.pn = model.pn;
    s.shared_learners = model.shared_learners;
    s.dccnn.cascades = model.cascades;
    s.dccnn.blocks = model.blocks;
    s.dccnn.channels = model.channels;
    s.dccnn.residual = model.residual;
    s.dccnn.final_activation = model.final_activation;
    s.dccnn.soft_dc = model.soft_dc;
    s.unet.levels = model.unet_levels;
    s.unet.base_channels = model.unet_base_channels;
    s.block.leaky_slope = model.leaky_slope;
    s.block.se_ratio = model.se_ratio;
    return s;
}

std::vector<std::string> ExperimentConfig::training_anatomies() const
{
    if (regime == Regime::oaon) return {oaon_anatomy};
    return anatomies;
}

void ExperimentConfig::validate() const
{
    auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError(field + ": " + msg); };
    if (anatomies.empty()) fail("anatomies", "at least one anatomy is required");
    if (std::set<std::string>(anatomies.begin(), anatomies.end()).size() != anatomies.size()) {
        fail("anatomies", "labels must be unique");
    }
    if (regime == Regime::oaon && std::find(anatomies.begin(), anatomies.end(), oaon_anatomy) == anatomies.end()) {
        fail("oaon_anatomy", "'" + oaon_anatomy + "' is not one of the configured anatomies");
    }
    if (model.cascades < 1) fail("model.cascades", "must be at least 1");
    if (model.blocks < 2) fail("model.blocks", "must be at least 2");
    if (model.channels < 1) fail("model.channels", "must be at least 1");
    if (model.unet_levels < 1) fail("model.unet_levels", "must be at least 1");
    if (model.unet_base_channels < 1) fail("model.unet_base_channels", "must be at least 1");
    if (model.se_ratio < 1) fail("model.se_ratio", "must be at least 1");
    if (!(model.leaky_slope >= 0.0 && model.leaky_slope < 1.0)) fail("model.leaky_slope", "must lie in [0, 1)");
    if (model.shared_learners && model.pn != PnKind::pn3 && model.pn != PnKind::pn4) {
        fail("model.shared_learners", "only defined for pn3 and pn4");
    }
    if (data.source != "phantom" && data.source != "ingest") fail("data.source", "must be 'phantom' or 'ingest'");
    if (data.source == "ingest") {
        for (const auto& a : training_anatomies()) {
            if (!data.ingest_dirs.count(a)) fail("data.ingest_dirs", "no directory for anatomy '" + a + "'");
        }
    }
    if (data.height < 8 || data.width < 8) fail("data.height/width", "extent must be at least 8");
    if (!std::has_single_bit(static_cast<std::uint64_t>(data.height))) fail("data.height", "must be a power of two");
    if (!std::has_single_bit(static_cast<std::uint64_t>(data.width))) fail("data.width", "must be a power of two");
    if (data.train_per_anatomy < 1) fail("data.train_per_anatomy", "must be at least 1");
    if (data.val_per_anatomy < 1) fail("data.val_per_anatomy", "must be at least 1");
    if (mask.acceleration < 1) fail("mask.acceleration", "must be at least 1");
    if (mask.center_fraction < 0.0 || mask.center_fraction > 1.0) fail("mask.center_fraction", "must lie in [0, 1]");
    if (schedule.batch_size < 1) fail("schedule.batch_size", "must be at least 1");
    if (!(schedule.lr > 0.0)) fail("schedule.lr", "must be positive");
    if (schedule.checkpoint_every < 0) fail("schedule.checkpoint_every", "must be nonnegative");
    if (epochs() < 1) fail("schedule.epochs", "must be positive");
    if (warmup_epochs() >= epochs()) fail("schedule.warmup_epochs", "must be smaller than the number of epochs");
    if (regime != Regime::mapn && warmup_epochs() > 0) fail("schedule.warmup_epochs", "warm-up only applies to mapn");
    if (regime == Regime::mapn && warm_start.empty() && !cold_start) {
        fail("warm_start", "regime mapn needs a MAON checkpoint to warm-start from (or cold_start = true)");
    }
    if (output_dir.empty()) fail("output_dir", "must not be empty");
}

ExperimentConfig desk_preset() { return ExperimentConfig{}; }

ExperimentConfig paper_preset()
{
    ExperimentConfig c;
    c.preset = "paper";
    c.model.cascades = 5;
    c.model.blocks = 5;
    c.model.channels = 64;
    c.model.unet_base_channels = 32;
    c.data.height = 320;
    c.data.width = 320;
    c.data.train_per_anatomy = 256;
    c.data.val_per_anatomy = 64;
    c.output_dir = "runs/paper";
    return c;
}

ExperimentConfig preset(std::string_view name)
{
    if (name == "desk") return desk_preset();
    if (name == "paper") return paper_preset();
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
}

namespace {

struct Field {
    std::string path;
    std::function<json(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const json&)> set;
};

template <class T>
T decode(const json& j, const std::string& path)
{
    auto mismatch = [&](const char* want) {
        return ConfigError(path + ": expected " + want + ", got " + std::string(j.type_name()));
    };
    if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw mismatch("boolean");
        return j.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!j.is_number_unsigned()) throw mismatch("nonnegative integer");
        return j.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) throw mismatch("integer");
        return j.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) throw mismatch("number");
        return j.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) throw mismatch("string");
        return j.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        if (!j.is_array()) throw mismatch("array of strings");
        std::vector<std::string> out;
        for (const auto& e : j) out.push_back(decode<std::string>(e, path + "[]"));
        return out;
    } else {
        if (!j.is_object()) throw mismatch("object of strings");
        std::map<std::string, std::string> out;
        for (const auto& [k, v] : j.items()) out[k] = decode<std::string>(v, path + "." + k);
        return out;
    }
}

template <class T, class Access>
Field plain(std::string path, Access access)
{
    return {path, [access](const ExperimentConfig& c) { return json(access(const_cast<ExperimentConfig&>(c))); },
            [access, path](ExperimentConfig& c, const json& j) { access(c) = decode<T>(j, path); }};
}

template <class E, class Access, class Parse>
Field enumerated(std::string path, Access access, Parse parse)
{
    return {path,
            [access](const ExperimentConfig& c) { return json(to_string(access(const_cast<ExperimentConfig&>(c)))); },
            [access, parse, path](ExperimentConfig& c, const json& j) {
                try {
                    access(c) = parse(decode<std::string>(j, path));
                } catch (const ConfigError& e) {
                    throw ConfigError(path + ": " + e.what());
                }
            }};
}

const std::vector<Field>& fields()
{
    using C = ExperimentConfig;
    static const std::vector<Field> table = {
        plain<std::string>("preset", [](C& c) -> auto& { return c.preset; }),
        enumerated<Regime>("regime", [](C& c) -> auto& { return c.regime; }, regime_from_string),
        plain<std::vector<std::string>>("anatomies", [](C& c) -> auto& { return c.anatomies; }),
        plain<std::string>("oaon_anatomy", [](C& c) -> auto& { return c.oaon_anatomy; }),
        enumerated<NetKind>("model.net", [](C& c) -> auto& { return c.model.net; }, net_kind_from_string),
        enumerated<PnKind>("model.pn", [](C& c) -> auto& { return c.model.pn; }, pn_kind_from_string),
        plain<bool>("model.shared_learners", [](C& c) -> auto& { return c.model.shared_learners; }),
        plain<int>("model.cascades", [](C& c) -> auto& { return c.model.cascades; }),
        plain<int>("model.blocks", [](C& c) -> auto& { return c.model.blocks; }),
        plain<int>("model.channels", [](C& c) -> auto& { return c.model.channels; }),
        plain<bool>("model.residual", [](C& c) -> auto& { return c.model.residual; }),
        plain<bool>("model.final_activation", [](C& c) -> auto& { return c.model.final_activation; }),
        plain<bool>("model.soft_dc", [](C& c) -> auto& { return c.model.soft_dc; }),
        plain<int>("model.unet_levels", [](C& c) -> auto& { return c.model.unet_levels; }),
        plain<int>("model.unet_base_channels", [](C& c) -> auto& { return c.model.unet_base_channels; }),
        plain<double>("model.leaky_slope", [](C& c) -> auto& { return c.model.leaky_slope; }),
        plain<int>("model.se_ratio", [](C& c) -> auto& { return c.model.se_ratio; }),
        plain<std::string>("data.source", [](C& c) -> auto& { return c.data.source; }),
        plain<std::map<std::string, std::string>>("data.ingest_dirs", [](C& c) -> auto& { return c.data.ingest_dirs; }),
        plain<std::int64_t>("data.height", [](C& c) -> auto& { return c.data.height; }),
        plain<std::int64_t>("data.width", [](C& c) -> auto& { return c.data.width; }),
        plain<std::int64_t>("data.train_per_anatomy", [](C& c) -> auto& { return c.data.train_per_anatomy; }),
        plain<std::int64_t>("data.val_per_anatomy", [](C& c) -> auto& { return c.data.val_per_anatomy; }),
        plain<bool>("data.truncate_to_min", [](C& c) -> auto& { return c.data.truncate_to_min; }),
        plain<std::uint64_t>("data.seed", [](C& c) -> auto& { return c.data.seed; }),
        plain<int>("mask.acceleration", [](C& c) -> auto& { return c.mask.acceleration; }),
        plain<double>("mask.center_fraction", [](C& c) -> auto& { return c.mask.center_fraction; }),
        plain<bool>("mask.resample_per_epoch", [](C& c) -> auto& { return c.mask.resample_per_epoch; }),
        plain<int>("schedule.epochs", [](C& c) -> auto& { return c.schedule.epochs; }),
        plain<int>("schedule.warmup_epochs", [](C& c) -> auto& { return c.schedule.warmup_epochs; }),
        plain<int>("schedule.batch_size", [](C& c) -> auto& { return c.schedule.batch_size; }),
        plain<double>("schedule.lr", [](C& c) -> auto& { return c.schedule.lr; }),
        plain<bool>("schedule.reset_moments_after_warmup",
                    [](C& c) -> auto& { return c.schedule.reset_moments_after_warmup; }),
        plain<int>("schedule.checkpoint_every", [](C& c) -> auto& { return c.schedule.checkpoint_every; }),
        plain<std::uint64_t>("seed", [](C& c) -> auto& { return c.seed; }),
        plain<std::string>("warm_start", [](C& c) -> auto& { return c.warm_start; }),
        plain<bool>("cold_start", [](C& c) -> auto& { return c.cold_start; }),
        plain<std::string>("output_dir", [](C& c) -> auto& { return c.output_dir; }),
    };
    return table;
}

const Field* find_field(std::string_view path)
{
    for (const auto& f : fields()) {
        if (f.path == path) return &f;
    }
    return nullptr;
}

void walk(const json& j, const std::string& prefix, ExperimentConfig& cfg)
{
    if (!j.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (const Field* f = find_field(path)) {
            f->set(cfg, value);
        } else if (value.is_object()) {
            bool known_section = false;
            for (const auto& fld : fields()) known_section = known_section || fld.path.rfind(path + ".", 0) == 0;
            if (!known_section) throw ConfigError(path + ": unknown field");
            walk(value, path, cfg);
        } else {
            throw ConfigError(path + ": unknown field");
        }
    }
}

}  // namespace

json to_json(const ExperimentConfig& cfg)
{
    json out = json::object();
    for (const auto& f : fields()) out[json::json_pointer("/" + [&] {
        std::string p = f.path;
        std::replace(p.begin(), p.end(), '.', '/');
        return p;
    }())] = f.get(cfg);
    return out;
}

ExperimentConfig from_json(const json& j, const ExperimentConfig& base)
{
    ExperimentConfig cfg = base;
    walk(j, "", cfg);
    return cfg;
}

ExperimentConfig parse_config(std::string_view text, const ExperimentConfig& base)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("config syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                          ": " + e.what());
    }
    return from_json(j, base);
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    // The preset is resolved first so that the file only needs to list overrides.
    ExperimentConfig base = desk_preset();
    try {
        const json j = json::parse(text);
        if (j.is_object() && j.contains("preset") && j["preset"].is_string()) base = preset(j["preset"].get<std::string>());
    } catch (const json::parse_error&) {
    }
    try {
        return parse_config(text, base);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) throw ConfigError(key + ": unknown field");
    const json current = f->get(cfg);
    json value;
    if (current.is_string()) {
        value = raw;
    } else if (current.is_array()) {
        value = json::array();
        std::stringstream ss(raw);
        for (std::string item; std::getline(ss, item, ',');) {
            if (!item.empty()) value.push_back(item);
        }
    } else {
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            throw ConfigError(key + ": cannot parse value '" + raw + "'");
        }
        if (current.is_number_float() && value.is_number()) value = value.get<double>();
    }
    f->set(cfg, value);
}

std::string canonical_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(); }

std::string config_hash(const ExperimentConfig& cfg)
{
    json j = to_json(cfg);
    j.erase("output_dir");
    return hex64(fnv1a(j.dump()));
}

}  // namespace mapn
