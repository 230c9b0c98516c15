#include "cgt/config.hpp"

#include <spdlog/fmt/fmt.h>

#include <charconv>
#include <fstream>

#include "cgt/vocab.hpp"

namespace cgt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(std::string v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) return v.substr(1, v.size() - 2);
    return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("bad value '" + v + "' for " + key);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean '" + v + "' for " + key);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

void RunConfig::validate() const {
    auto m = model;
    if (m.vocab_size == 0) m.vocab_size = kNumSpecial + 1;
    m.validate();
    loss.validate();
    if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
    if (epochs == 0 || batch_size == 0 || min_frequency == 0 || eval_every == 0) {
        throw ConfigError("epochs, batch_size, min_frequency and eval_every must be positive");
    }
}

void apply_setting(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value,
                   const std::filesystem::path& base_dir) {
    const auto dot = raw_key.rfind('.');
    const std::string key = dot == std::string::npos ? raw_key : raw_key.substr(dot + 1);
    const std::string v = unquote(trim(raw_value));
    auto sz = [&](std::size_t& dst) { dst = parse_number<std::size_t>(key, v); };
    auto real = [&](double& dst) { dst = parse_number<double>(key, v); };

    if (key == "preset") {
        const auto vocab = cfg.model.vocab_size;
        if (v == "desk") cfg.model = ModelConfig::desk(vocab);
        else if (v == "full") cfg.model = ModelConfig::full(vocab);
        else throw ConfigError("preset must be desk or full");
        cfg.preset = v;
    } else if (key == "d_model") sz(cfg.model.d_model);
    else if (key == "heads") sz(cfg.model.heads);
    else if (key == "encoder_layers") sz(cfg.model.encoder_layers);
    else if (key == "decoder_layers") sz(cfg.model.decoder_layers);
    else if (key == "d_ff") sz(cfg.model.d_ff);
    else if (key == "max_T") sz(cfg.model.max_T);
    else if (key == "group_size") sz(cfg.model.group_size);
    else if (key == "graph_slots") sz(cfg.model.graph_slots);
    else if (key == "conv_channels") sz(cfg.model.conv_channels);
    else if (key == "max_report_len") sz(cfg.model.max_report_len);
    else if (key == "pe_base") real(cfg.model.pe_base);
    else if (key == "norm") cfg.model.norm = parse_norm_mode(v);
    else if (key == "tie_output") cfg.model.tie_output = parse_bool(key, v);
    else if (key == "lambda_ce") real(cfg.loss.lambda_ce);
    else if (key == "lambda_tr") real(cfg.loss.lambda_tr);
    else if (key == "gamma") real(cfg.loss.gamma);
    else if (key == "lr") real(cfg.adam.lr);
    else if (key == "beta1") real(cfg.adam.beta1);
    else if (key == "beta2") real(cfg.adam.beta2);
    else if (key == "adam_eps") real(cfg.adam.eps);
    else if (key == "epochs") sz(cfg.epochs);
    else if (key == "batch_size") sz(cfg.batch_size);
    else if (key == "min_frequency") sz(cfg.min_frequency);
    else if (key == "eval_every") sz(cfg.eval_every);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "threads") cfg.threads = parse_number<int>(key, v);
    else if (key == "roc_score") {
        if (v == "energy") cfg.roc_score = RocScore::Energy;
        else if (v == "probability") cfg.roc_score = RocScore::Probability;
        else throw ConfigError("roc_score must be energy or probability");
    } else if (key == "dataset") cfg.dataset = resolve(base_dir, v);
    else if (key == "output_dir") cfg.output_dir = resolve(base_dir, v);
    else if (key == "dictionary") cfg.dictionary = resolve(base_dir, v);
    else if (key == "relations") cfg.relations = resolve(base_dir, v);
    else throw ConfigError("unknown config key '" + raw_key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    apply_setting(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    RunConfig cfg;
    const auto base = path.parent_path();
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(fmt::format("{}:{}: unterminated section header", path.string(), lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key = value", path.string(), lineno));
        const auto key = trim(line.substr(0, eq));
        try {
            apply_setting(cfg, section.empty() ? key : section + "." + key, line.substr(eq + 1), base);
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return cfg;
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto& m = c.model;
    out << "preset = \"" << c.preset << "\"\n"
        << "seed = " << c.seed << "\n"
        << "dataset = \"" << std::filesystem::absolute(c.dataset).string() << "\"\n"
        << "output_dir = \"" << std::filesystem::absolute(c.output_dir).string() << "\"\n";
    if (!c.dictionary.empty()) out << "dictionary = \"" << std::filesystem::absolute(c.dictionary).string() << "\"\n";
    if (!c.relations.empty()) out << "relations = \"" << std::filesystem::absolute(c.relations).string() << "\"\n";
    out << "\n[model]\n"
        << "d_model = " << m.d_model << "\nheads = " << m.heads << "\nencoder_layers = " << m.encoder_layers
        << "\ndecoder_layers = " << m.decoder_layers << "\nd_ff = " << m.d_ff << "\nmax_T = " << m.max_T
        << "\ngroup_size = " << m.group_size << "\ngraph_slots = " << m.graph_slots
        << "\nconv_channels = " << m.conv_channels << "\nmax_report_len = " << m.max_report_len
        << fmt::format("\npe_base = {:.17g}", m.pe_base) << "\nnorm = \"" << norm_mode_name(m.norm)
        << "\"\ntie_output = " << (m.tie_output ? "true" : "false") << "\n"
        << "\n[loss]\n"
        << fmt::format("lambda_ce = {:.17g}\nlambda_tr = {:.17g}\ngamma = {:.17g}\n", c.loss.lambda_ce, c.loss.lambda_tr,
                       c.loss.gamma)
        << "\n[train]\n"
        << fmt::format("lr = {:.17g}\nbeta1 = {:.17g}\nbeta2 = {:.17g}\nadam_eps = {:.17g}\n", c.adam.lr, c.adam.beta1,
                       c.adam.beta2, c.adam.eps)
        << "epochs = " << c.epochs << "\nbatch_size = " << c.batch_size << "\nmin_frequency = " << c.min_frequency
        << "\neval_every = " << c.eval_every << "\nthreads = " << c.threads << "\nroc_score = \""
        << (c.roc_score == RocScore::Energy ? "energy" : "probability") << "\"\n";
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cgt
