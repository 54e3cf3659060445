#include "reftok/config.hpp"

#include "reftok/attnmask.hpp"
#include "reftok/errors.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>
#include <vector>

namespace reftok {

namespace {

using Value = std::variant<long long, double, bool, std::string, std::vector<long long>>;

struct ParsedConfig {
    // section -> key -> value, discovery order kept for error reporting
    std::map<std::string, std::map<std::string, Value>> sections;
};

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Cut a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

bool is_bare_key(const std::string& s) {
    if (s.empty() || (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_')) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

bool parse_int(const std::string& s, long long& out) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    out = std::strtoll(s.c_str(), nullptr, 10);
    return true;
}

Value parse_value(const std::string& raw, const std::string& where) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("config " + where + ": missing value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"' ||
            v.find('"', 1) != v.size() - 1)
            throw ConfigError("config " + where + ": malformed string literal");
        return v.substr(1, v.size() - 2);
    }
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError("config " + where + ": malformed array");
        std::vector<long long> arr;
        std::string body = trim(v.substr(1, v.size() - 2));
        if (!body.empty()) {
            std::stringstream ss(body);
            std::string item;
            while (std::getline(ss, item, ',')) {
                long long n;
                if (!parse_int(trim(item), n))
                    throw ConfigError("config " + where + ": arrays may hold integers only");
                arr.push_back(n);
            }
        }
        return arr;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    long long n;
    if (parse_int(v, n)) return n;
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() + v.size()) return d;
    throw ConfigError("config " + where + ": cannot parse value '" + v + "'");
}

ParsedConfig parse_toml_subset(const std::string& text) {
    ParsedConfig out;
    std::string section;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        const std::string at = "line " + std::to_string(lineno);
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError("config " + at + ": malformed section header");
            section = trim(s.substr(1, s.size() - 2));
            if (!is_bare_key(section))
                throw ConfigError("config " + at + ": bad section name '" + section + "'");
            out.sections[section];  // a section may be empty
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config " + at + ": expected 'key = value'");
        std::string key = trim(s.substr(0, eq));
        if (!is_bare_key(key)) throw ConfigError("config " + at + ": bad key '" + key + "'");
        if (section.empty())
            throw ConfigError("config " + at + ": key '" + key + "' appears outside any section");
        auto& sec = out.sections[section];
        if (sec.count(key))
            throw ConfigError("config " + at + ": duplicate key " + section + "." + key);
        sec.emplace(key, parse_value(s.substr(eq + 1), at + " (" + section + "." + key + ")"));
    }
    return out;
}

// Pulls typed values out of one section, consuming entries so leftovers can
// be reported as unknown keys.
class SectionReader {
public:
    SectionReader(std::string name, std::map<std::string, Value>* entries)
        : name_(std::move(name)), entries_(entries) {}

    template <class T, class F>
    void take(const std::string& key, T& out, F&& convert) {
        if (!entries_) return;
        auto it = entries_->find(key);
        if (it == entries_->end()) return;
        out = convert(it->second, name_ + "." + key);
        entries_->erase(it);
    }

    void get_int(const std::string& key, int& out) {
        take(key, out, [](const Value& v, const std::string& w) {
            if (!std::holds_alternative<long long>(v))
                throw ConfigError("config key " + w + ": expected an integer");
            return static_cast<int>(std::get<long long>(v));
        });
    }
    void get_u64(const std::string& key, std::uint64_t& out) {
        take(key, out, [](const Value& v, const std::string& w) {
            if (!std::holds_alternative<long long>(v) || std::get<long long>(v) < 0)
                throw ConfigError("config key " + w + ": expected a non-negative integer");
            return static_cast<std::uint64_t>(std::get<long long>(v));
        });
    }
    template <class T>
    void get_float(const std::string& key, T& out) {
        take(key, out, [](const Value& v, const std::string& w) -> T {
            if (std::holds_alternative<long long>(v))
                return static_cast<T>(std::get<long long>(v));
            if (std::holds_alternative<double>(v)) return static_cast<T>(std::get<double>(v));
            throw ConfigError("config key " + w + ": expected a number");
        });
    }
    void get_bool(const std::string& key, bool& out) {
        take(key, out, [](const Value& v, const std::string& w) {
            if (!std::holds_alternative<bool>(v))
                throw ConfigError("config key " + w + ": expected true or false");
            return std::get<bool>(v);
        });
    }
    void get_string(const std::string& key, std::string& out) {
        take(key, out, [](const Value& v, const std::string& w) {
            if (!std::holds_alternative<std::string>(v))
                throw ConfigError("config key " + w + ": expected a quoted string");
            return std::get<std::string>(v);
        });
    }
    void get_int_array(const std::string& key, std::vector<int>& out) {
        take(key, out, [](const Value& v, const std::string& w) {
            if (!std::holds_alternative<std::vector<long long>>(v))
                throw ConfigError("config key " + w + ": expected an integer array");
            std::vector<int> r;
            for (long long n : std::get<std::vector<long long>>(v)) r.push_back(static_cast<int>(n));
            return r;
        });
    }

    void finish() const {
        if (entries_ && !entries_->empty())
            throw ConfigError("unknown config key " + name_ + "." + entries_->begin()->first);
    }

private:
    std::string name_;
    std::map<std::string, Value>* entries_;
};

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    ParsedConfig parsed = parse_toml_subset(text);
    for (const auto& [name, _] : parsed.sections)
        if (name != "data" && name != "model" && name != "vq" && name != "train" &&
            name != "generate")
            throw ConfigError("unknown config section [" + name + "]");

    auto section = [&](const char* name) -> std::map<std::string, Value>* {
        auto it = parsed.sections.find(name);
        return it == parsed.sections.end() ? nullptr : &it->second;
    };

    RunConfig cfg;

    {
        SectionReader r("data", section("data"));
        r.get_string("dir", cfg.data_dir);
        r.get_u64("seed", cfg.data_seed);
        r.get_int("clips", cfg.n_sources);
        r.get_int("eval_clips", cfg.n_eval);
        r.get_int("frames", cfg.synth.frames);
        r.get_int("height", cfg.synth.height);
        r.get_int("width", cfg.synth.width);
        r.get_int("glyphs", cfg.synth.glyphs);
        r.get_int("glyph_size", cfg.synth.glyph_size);
        r.get_float("motion_amplitude", cfg.synth.motion_amplitude);
        r.get_int("clip_length", cfg.train.clip_length);
        r.get_int("interval_min", cfg.train.interval_range.first);
        r.get_int("interval_max", cfg.train.interval_range.second);
        r.finish();
    }
    {
        SectionReader r("model", section("model"));
        r.get_int("embed_dim", cfg.model.embed_dim);
        r.get_int("enc_depth", cfg.model.enc_depth);
        r.get_int("dec_depth", cfg.model.dec_depth);
        r.get_int("heads", cfg.model.heads);
        r.get_int("mlp_ratio", cfg.model.mlp_ratio);
        std::vector<int> patch;
        r.get_int_array("patch", patch);
        if (!patch.empty()) {
            if (patch.size() != 3)
                throw ConfigError("config key model.patch: expected [t, h, w]");
            cfg.model.patch = PatchSpec{patch[0], patch[1], patch[2]};
        }
        r.get_int("n_ref_frames", cfg.model.n_ref_frames);
        r.get_int("prune_max", cfg.model.prune_max);
        std::string mode;
        r.get_string("mask_mode", mode);
        if (!mode.empty()) cfg.model.mask_mode = mask_mode_from_string(mode);
        r.get_bool("reference_less", cfg.model.reference_less);
        r.finish();
    }
    {
        SectionReader r("vq", section("vq"));
        r.get_int("codebook_size", cfg.model.codebook_size);
        r.get_int("code_dim", cfg.model.code_dim);
        r.get_float("ema_decay", cfg.train.ema_decay);
        r.get_bool("splitting", cfg.train.splitting);
        r.get_int_array("split_steps", cfg.train.split_steps);
        r.get_bool("grow_codebook", cfg.train.grow_codebook);
        r.get_int("dead_replace_every", cfg.train.dead_replace_every);
        r.get_int("refine_iters", cfg.train.refine_iters);
        r.finish();
    }
    {
        SectionReader r("train", section("train"));
        r.get_int("steps", cfg.train.steps);
        r.get_int("batch_size", cfg.train.batch_size);
        r.get_float("lr", cfg.train.lr);
        r.get_int("warmup", cfg.train.warmup);
        r.get_float("weight_decay", cfg.train.weight_decay);
        std::string recon;
        r.get_string("recon", recon);
        if (!recon.empty()) {
            if (recon == "l1")
                cfg.train.recon_kind = ReconKind::l1;
            else if (recon == "l2")
                cfg.train.recon_kind = ReconKind::l2;
            else
                throw ConfigError("config key train.recon: expected \"l1\" or \"l2\"");
        }
        r.get_float("recon_weight", cfg.train.recon_weight);
        r.get_float("perceptual_weight", cfg.train.perceptual_weight);
        r.get_float("adversarial_weight", cfg.train.adversarial_weight);
        r.get_float("commitment_weight", cfg.train.commitment_weight);
        r.get_float("codebook_weight", cfg.train.codebook_weight);
        r.get_float("collapse_eps", cfg.train.collapse_eps);
        r.get_int("checkpoint_every", cfg.train.checkpoint_every);
        r.get_u64("seed", cfg.train.seed);
        r.finish();
    }
    {
        SectionReader r("generate", section("generate"));
        r.get_int("dim", cfg.generate.arch.dim);
        r.get_int("depth", cfg.generate.arch.depth);
        r.get_int("heads", cfg.generate.arch.heads);
        r.get_int("mlp_ratio", cfg.generate.arch.mlp_ratio);
        r.get_int("steps", cfg.generate.train.steps);
        r.get_int("batch_size", cfg.generate.train.batch_size);
        r.get_float("lr", cfg.generate.train.lr);
        r.get_int("warmup", cfg.generate.train.warmup);
        r.get_float("weight_decay", cfg.generate.train.weight_decay);
        r.get_u64("seed", cfg.generate.train.seed);
        r.get_int("schedule_steps", cfg.generate.schedule.total_steps);
        r.get_float("temperature", cfg.generate.schedule.temperature);
        r.get_int("target_frames", cfg.generate.target_frames);
        r.finish();
    }

    if (cfg.train.interval_range.first < 1 ||
        cfg.train.interval_range.second < cfg.train.interval_range.first)
        throw ConfigError("config: interval_min/interval_max must satisfy 1 <= min <= max");
    if (cfg.train.clip_length <= cfg.model.n_ref_frames)
        throw ConfigError("config: clip_length must exceed n_ref_frames");
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::unique_ptr<ClipSource> RunConfig::make_source() const {
    if (data_dir.empty())
        return std::make_unique<SynthSource>(data_seed, n_sources, synth);
    return std::make_unique<DirSource>(data_dir);
}

}  // namespace reftok
