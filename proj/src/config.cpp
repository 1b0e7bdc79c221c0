#include "skelocc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <variant>

namespace skelocc {

namespace {

using FieldRef = std::variant<int*, double*, bool*, std::string*, std::vector<int>*>;

struct Field {
    const char* section;
    const char* key;
    FieldRef ref;
};

template <class Cfg>
std::vector<Field> fields_of(Cfg& c) {
    return {
        {"data", "dataset", &c.dataset},
        {"data", "workdir", &c.workdir},
        {"data", "train_views", &c.train_views},
        {"data", "test_views", &c.test_views},
        {"data", "crop", &c.crop},
        {"data", "k", &c.k},
        {"synth", "views", &c.synth_views},
        {"synth", "poses", &c.synth_poses},
        {"synth", "ids", &c.synth_ids},
        {"synth", "image_size", &c.image_size},
        {"carve", "candidates", &c.candidates},
        {"carve", "fresh_candidates", &c.fresh_candidates},
        {"carve", "sigma_max", &c.sigma_max},
        {"carve", "rho", &c.rho},
        {"sampling", "k_u", &c.k_u},
        {"sampling", "k_h", &c.k_h},
        {"sampling", "p_min", &c.p_min},
        {"sampling", "p_max", &c.p_max},
        {"sampling", "d_fix", &c.d_fix},
        {"sampling", "dense_samples", &c.dense_samples},
        {"model", "w", &c.w},
        {"model", "depth", &c.depth},
        {"model", "m", &c.m},
        {"model", "n_a", &c.n_a},
        {"model", "d", &c.d},
        {"model", "view_freqs", &c.view_freqs},
        {"model", "view_dependent", &c.view_dependent},
        {"model", "occ_width", &c.occ_width},
        {"model", "occ_embedding", &c.occ_embedding},
        {"model", "occ_blocks", &c.occ_blocks},
        {"model", "pe_freqs", &c.pe_freqs},
        {"model", "space", &c.space},
        {"model", "up_width", &c.up_width},
        {"model", "up_blocks", &c.up_blocks},
        {"optim", "beta1", &c.beta1},
        {"optim", "beta2", &c.beta2},
        {"optim", "eps", &c.eps},
        {"optim", "occ_steps", &c.occ_steps},
        {"optim", "occ_batch", &c.occ_batch},
        {"optim", "occ_lr", &c.occ_lr},
        {"optim", "occ_lr_final", &c.occ_lr_final},
        {"optim", "render_steps", &c.render_steps},
        {"optim", "render_lr", &c.render_lr},
        {"optim", "render_lr_final", &c.render_lr_final},
        {"optim", "variants", &c.variants},
        {"loss", "w_l1", &c.w_l1},
        {"loss", "w_mse", &c.w_mse},
        {"loss", "w_upsample", &c.w_upsample},
        {"loss", "code_reg", &c.code_reg},
        {"seed", "data", &c.seed_data},
        {"seed", "carve", &c.seed_carve},
        {"seed", "occ", &c.seed_occ},
        {"seed", "render", &c.seed_render},
    };
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    const char* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, out);
    return r.ec == std::errc() && r.ptr == end;
}

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string format_value(const FieldRef& ref) {
    struct {
        std::string operator()(int* v) const { return std::to_string(*v); }
        std::string operator()(double* v) const { return format_double(*v); }
        std::string operator()(bool* v) const { return *v ? "true" : "false"; }
        std::string operator()(std::string* v) const { return *v; }
        std::string operator()(std::vector<int>* v) const {
            std::string s;
            for (size_t i = 0; i < v->size(); ++i) s += (i ? "," : "") + std::to_string((*v)[i]);
            return s;
        }
    } visitor;
    return std::visit(visitor, ref);
}

bool assign_value(const FieldRef& ref, const std::string& text) {
    if (auto p = std::get_if<int*>(&ref)) return parse_number(text, **p);
    if (auto p = std::get_if<double*>(&ref)) return parse_number(text, **p);
    if (auto p = std::get_if<bool*>(&ref)) {
        if (text == "true" || text == "1") **p = true;
        else if (text == "false" || text == "0") **p = false;
        else return false;
        return true;
    }
    if (auto p = std::get_if<std::string*>(&ref)) {
        **p = text;
        return true;
    }
    auto& list = *std::get<std::vector<int>*>(ref);
    list.clear();
    if (text.empty()) return true;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        int v = 0;
        if (!parse_number(trim(item), v)) return false;
        list.push_back(v);
    }
    return true;
}

}  // namespace

std::filesystem::path RunConfig::dataset_path() const {
    const std::filesystem::path p(dataset);
    return p.is_absolute() ? p : base_dir / p;
}

std::filesystem::path RunConfig::workdir_path() const {
    const std::filesystem::path p(workdir);
    return p.is_absolute() ? p : base_dir / p;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
    if (train_views.empty()) fail("data.train_views", "must not be empty");
    if (test_views.empty()) fail("data.test_views", "must not be empty");
    for (int v : train_views)
        if (v < 0) fail("data.train_views", "negative view " + std::to_string(v));
    for (int v : test_views)
        if (v < 0) fail("data.test_views", "negative view " + std::to_string(v));
    const std::set<int> train(train_views.begin(), train_views.end());
    for (int v : test_views)
        if (train.count(v))
            fail("data.test_views", "view " + std::to_string(v) + " is also a training view");
    if (crop < 8) fail("data.crop", "must be at least 8");
    if (!(k >= 1.0)) fail("data.k", "must be at least 1");
    if (synth_views < 1 || synth_poses < 1 || synth_ids < 1 || image_size < 16)
        fail("synth", "views, poses and ids must be positive and image_size at least 16");
    if (candidates < 1 || fresh_candidates < 0) fail("carve.candidates", "must be positive");
    if (k_u < 2) fail("sampling.k_u", "must be at least 2");
    if (k_h < 0) fail("sampling.k_h", "must not be negative");
    if (!(p_min > 0.0 && p_min < p_max && p_max < 1.0)) fail("sampling.p_min", "need 0 < p_min < p_max < 1");
    if (!(d_fix > 0.0)) fail("sampling.d_fix", "must be positive");
    if (dense_samples < 2) fail("sampling.dense_samples", "must be at least 2");
    if (w < 1 || depth < 1 || m < 1 || n_a < 1 || d < 0 || view_freqs < 0) fail("model", "sizes must be positive");
    if (space != "observed" && space != "canonical")
        fail("model.space", "expected observed or canonical, got '" + space + "'");
    if (occ_steps < 0 || render_steps < 0) fail("optim", "step counts must not be negative");
    if (variants < 1) fail("optim.variants", "must be positive");
}

bool RunConfig::operator==(const RunConfig& o) const {
    auto a = fields_of(const_cast<RunConfig&>(*this));
    auto b = fields_of(const_cast<RunConfig&>(o));
    for (size_t i = 0; i < a.size(); ++i)
        if (format_value(a[i].ref) != format_value(b[i].ref)) return false;
    return base_dir == o.base_dir;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    const auto fields = fields_of(cfg);
    std::set<std::string> sections;
    for (const Field& f : fields) sections.insert(f.section);
    std::set<std::string> seen;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section)) throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside any section");
        const std::string full = section + "." + key;
        const auto it = std::find_if(fields.begin(), fields.end(),
                                     [&](const Field& f) { return section == f.section && key == f.key; });
        if (it == fields.end()) throw ConfigError(where + ": unknown key '" + full + "'");
        if (!seen.insert(full).second) throw ConfigError(where + ": duplicate key '" + full + "'");
        if (!assign_value(it->ref, value)) throw ConfigError(where + ": bad value '" + value + "' for '" + full + "'");
    }
    return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string out, section;
    for (const Field& f : fields_of(copy)) {
        if (section != f.section) {
            out += (section.empty() ? "[" : "\n[") + std::string(f.section) + "]\n";
            section = f.section;
        }
        out += std::string(f.key) + " = " + format_value(f.ref) + "\n";
    }
    return out;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << f.rdbuf();
    RunConfig cfg = parse_config(ss.str(), path.string());
    cfg.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return cfg;
}

}  // namespace skelocc
