#include "datseg/io.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace datseg {

namespace {

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream f(path, mode);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream f(path, mode);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    return f;
}

}  // namespace

void write_scene(const std::filesystem::path& path, const LabeledScene& scene) {
    auto f = open_out(path);
    long n = scene.cloud.n(), d = scene.cloud.feat_dim();
    f << "DATSEG v1\n";
    f << "points " << n << " feat_dim " << d << " classes " << scene.num_classes << "\n";
    for (long i = 0; i < n; ++i) {
        f << fmt17(scene.cloud.coords.at(i, 0)) << ' ' << fmt17(scene.cloud.coords.at(i, 1)) << ' '
          << fmt17(scene.cloud.coords.at(i, 2));
        for (long j = 0; j < d; ++j) f << ' ' << fmt17(scene.cloud.feats.at(i, j));
        f << ' ' << scene.gt_classes[static_cast<size_t>(i)] << ' ' << scene.instance_ids[static_cast<size_t>(i)]
          << "\n";
    }
}

LabeledScene read_scene(const std::filesystem::path& path) {
    auto f = open_in(path);
    std::string magic;
    std::getline(f, magic);
    if (magic != "DATSEG v1") throw std::runtime_error(path.string() + ": bad scene header '" + magic + "'");
    std::string kw1, kw2, kw3;
    long n = 0, d = 0, k = 0;
    f >> kw1 >> n >> kw2 >> d >> kw3 >> k;
    if (kw1 != "points" || kw2 != "feat_dim" || kw3 != "classes" || n < 1 || d < 1 || k < 2)
        throw std::runtime_error(path.string() + ": bad scene size line");
    LabeledScene scene;
    scene.num_classes = k;
    scene.cloud.coords = Array({n, 3});
    scene.cloud.feats = Array({n, d});
    scene.gt_classes.resize(static_cast<size_t>(n));
    scene.instance_ids.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        for (int j = 0; j < 3; ++j) f >> scene.cloud.coords.at(i, j);
        for (long j = 0; j < d; ++j) f >> scene.cloud.feats.at(i, j);
        f >> scene.gt_classes[static_cast<size_t>(i)] >> scene.instance_ids[static_cast<size_t>(i)];
    }
    if (!f) throw std::runtime_error(path.string() + ": truncated scene file");
    scene.validate();
    return scene;
}

void write_weak_labels(const std::filesystem::path& path, const WeakLabels& labels) {
    auto f = open_out(path);
    for (auto [i, c] : labels.entries) f << i << ' ' << c << "\n";
}

WeakLabels read_weak_labels(const std::filesystem::path& path) {
    auto f = open_in(path);
    WeakLabels out;
    long i, c;
    while (f >> i >> c) out.entries.emplace_back(i, c);
    if (out.entries.empty()) throw std::runtime_error(path.string() + ": no weak labels");
    return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    auto f = open_out(path);
    f << "scenes " << m.num_scenes << "\n";
    f << "classes " << m.num_classes << "\n";
    f << "feat_dim " << m.feat_dim << "\n";
    f << "seed " << m.seed << "\n";
    for (const auto& s : m.scene_files) f << "scene " << s << "\n";
}

Manifest read_manifest(const std::filesystem::path& path) {
    auto f = open_in(path);
    Manifest m;
    std::string key;
    while (f >> key) {
        if (key == "scenes") f >> m.num_scenes;
        else if (key == "classes") f >> m.num_classes;
        else if (key == "feat_dim") f >> m.feat_dim;
        else if (key == "seed") f >> m.seed;
        else if (key == "scene") {
            std::string name;
            f >> name;
            m.scene_files.push_back(name);
        } else {
            throw std::runtime_error(path.string() + ": unknown manifest key '" + key + "'");
        }
    }
    if (static_cast<long>(m.scene_files.size()) != m.num_scenes)
        throw std::runtime_error(path.string() + ": manifest scene count mismatch");
    return m;
}

std::vector<LabeledScene> load_dataset(const std::filesystem::path& manifest_path) {
    Manifest m = read_manifest(manifest_path);
    auto dir = manifest_path.parent_path();
    std::vector<LabeledScene> scenes;
    for (const auto& name : m.scene_files) {
        scenes.push_back(read_scene(dir / name));
        if (scenes.back().num_classes != m.num_classes || scenes.back().cloud.feat_dim() != m.feat_dim)
            throw std::runtime_error(name + ": scene dims disagree with manifest");
    }
    return scenes;
}

namespace {

constexpr char kCkptMagic[] = "DATSEGCKPT";
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ostream& f, std::uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    f.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return x;
}

void put_f64(std::ostream& f, double x) {
    std::uint64_t u;
    std::memcpy(&u, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    f.write(reinterpret_cast<char*>(b), 8);
}

double get_f64(std::istream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &u, 8);
    return x;
}

void put_section(std::ostream& f, const std::string& name, const Array& a) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(a.shape.size()));
    for (long e : a.shape) put_u32(f, static_cast<std::uint32_t>(e));
    for (double x : a.v) put_f64(f, x);
}

std::pair<std::string, Array> get_section(std::istream& f) {
    std::uint32_t nlen = get_u32(f);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    std::uint32_t ndims = get_u32(f);
    std::vector<long> shape(ndims);
    long total = 1;
    for (auto& e : shape) {
        e = static_cast<long>(get_u32(f));
        total *= e;
    }
    Array a(shape);
    for (long i = 0; i < total; ++i) a.v[static_cast<size_t>(i)] = get_f64(f);
    return {name, a};
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    auto f = open_out(path, std::ios::binary);
    f.write(kCkptMagic, sizeof kCkptMagic - 1);
    put_u32(f, kCkptVersion);
    auto fields = ModelParams::fields();
    put_u32(f, static_cast<std::uint32_t>(fields.size() + 1));
    Array meta = Array::from({1, 1}, {static_cast<double>(params.knn_k)});
    put_section(f, "meta", meta);
    for (auto [name, field] : fields) put_section(f, name, params.*field);
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
    auto f = open_in(path, std::ios::binary);
    char magic[sizeof kCkptMagic - 1];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
        throw std::runtime_error(path.string() + ": not a checkpoint file");
    std::uint32_t version = get_u32(f);
    if (version != kCkptVersion)
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    std::uint32_t nsec = get_u32(f);
    ModelParams params;
    auto fields = ModelParams::fields();
    for (std::uint32_t s = 0; s < nsec; ++s) {
        auto [name, a] = get_section(f);
        if (name == "meta") {
            params.knn_k = static_cast<long>(a.v.at(0));
            continue;
        }
        bool found = false;
        for (auto [fname, field] : fields)
            if (name == fname) {
                params.*field = std::move(a);
                found = true;
                break;
            }
        if (!found) throw std::runtime_error(path.string() + ": unknown checkpoint section '" + name + "'");
    }
    if (!f) throw std::runtime_error(path.string() + ": truncated checkpoint");
    return params;
}

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
    std::vector<ConfigEntry> entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(lineno, "expected 'key = value'");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw ConfigError(lineno, "empty key or value");
        entries.push_back({lineno, key, value});
    }
    return entries;
}

std::vector<ConfigEntry> parse_config_file(const std::filesystem::path& path) {
    auto f = open_in(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void apply_config(TrainConfig& cfg, const std::vector<ConfigEntry>& entries) {
    for (const auto& [lineno, key, value] : entries) {
        try {
            if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "beta") cfg.beta = std::stod(value);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "batch_scenes") cfg.batch_scenes = std::stol(value);
            else if (key == "steps") cfg.steps = std::stol(value);
            else if (key == "branch_prob") cfg.branch_prob = std::stod(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "val_every") cfg.val_every = std::stol(value);
            else if (key == "use_lap") cfg.use_lap = value == "true" || value == "1";
            else if (key == "use_rad") cfg.use_rad = value == "true" || value == "1";
            else if (key == "use_cpg") cfg.use_cpg = value == "true" || value == "1";
            else if (key == "perturb_coords") cfg.perturb_coords = value == "true" || value == "1";
            else if (key == "both_branches") cfg.both_branches = value == "true" || value == "1";
            else if (key == "noise_baseline") {
                if (value == "off") cfg.noise_baseline = NoiseBaseline::kOff;
                else if (value == "coords") cfg.noise_baseline = NoiseBaseline::kCoords;
                else if (value == "feats") cfg.noise_baseline = NoiseBaseline::kFeats;
                else if (value == "both") cfg.noise_baseline = NoiseBaseline::kBoth;
                else throw ConfigError(lineno, "noise_baseline must be off|coords|feats|both");
            }
            else if (key == "xi_c") cfg.lap.xi_c = std::stod(value);
            else if (key == "xi_f") cfg.lap.xi_f = std::stod(value);
            else if (key == "eps_c") cfg.lap.eps_c = std::stod(value);
            else if (key == "eps_f") cfg.lap.eps_f = std::stod(value);
            else if (key == "ip") { cfg.lap.ip = std::stoi(value); cfg.rad.ip = std::stoi(value); }
            else if (key == "xi_a") cfg.rad.xi_a = std::stod(value);
            else if (key == "eps_a") cfg.rad.eps_a = std::stod(value);
            else if (key == "cell_size") cfg.rad.cell_size = std::stod(value);
            else if (key == "use_translation") cfg.rad.use_translation = value == "true" || value == "1";
            else if (key == "use_scale") cfg.rad.use_scale = value == "true" || value == "1";
            else if (key == "use_rotation") cfg.rad.use_rotation = value == "true" || value == "1";
            else throw ConfigError(lineno, "unknown key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(lineno, "bad value for '" + key + "': " + value);
        }
    }
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
    auto f = open_out(path);
    f << "step,branch,L_seg,L_lc,L_rc,L_total,lr\n";
    for (const auto& r : rows)
        f << r.report.step << ',' << branch_name(r.report.branch) << ',' << fmt17(r.report.l_seg) << ','
          << fmt17(r.report.l_lc) << ',' << fmt17(r.report.l_rc) << ',' << fmt17(r.report.l_total) << ','
          << fmt17(r.lr) << "\n";
}

void write_metrics_report(const std::filesystem::path& path, const Metrics& m) {
    auto f = open_out(path);
    f << "class,intersection,union,iou,accuracy\n";
    for (size_t c = 0; c < m.iou.size(); ++c)
        f << c << ',' << m.intersection[c] << ',' << m.unions[c] << ',' << fmt17(m.iou[c]) << ','
          << fmt17(m.class_accuracy[c]) << "\n";
    f << "miou,,," << fmt17(m.miou) << ",\n";
}

void write_ply(const std::filesystem::path& path, const Array& coords,
               const std::vector<std::array<int, 3>>& colors) {
    if (coords.rows() != static_cast<long>(colors.size()))
        throw std::invalid_argument("write_ply: color count mismatch");
    auto f = open_out(path);
    f << "ply\nformat ascii 1.0\nelement vertex " << coords.rows()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (long i = 0; i < coords.rows(); ++i)
        f << fmt17(coords.at(i, 0)) << ' ' << fmt17(coords.at(i, 1)) << ' ' << fmt17(coords.at(i, 2)) << ' '
          << colors[static_cast<size_t>(i)][0] << ' ' << colors[static_cast<size_t>(i)][1] << ' '
          << colors[static_cast<size_t>(i)][2] << "\n";
}

std::vector<std::array<int, 3>> region_colors(const SuperpointPartition& partition) {
    std::vector<std::array<int, 3>> out;
    out.reserve(partition.region_of.size());
    for (long r : partition.region_of) {
        std::uint64_t h = splitmix64(static_cast<std::uint64_t>(r) + 17);
        out.push_back({static_cast<int>(h & 0xff), static_cast<int>((h >> 8) & 0xff),
                       static_cast<int>((h >> 16) & 0xff)});
    }
    return out;
}

std::vector<std::array<int, 3>> magnitude_colors(const Array& original, const Array& transformed) {
    long n = original.rows();
    std::vector<double> mag(static_cast<size_t>(n));
    double mx = 1e-300;
    for (long i = 0; i < n; ++i) {
        double s = 0;
        for (long j = 0; j < original.cols(); ++j) {
            double d = transformed.at(i, j) - original.at(i, j);
            s += d * d;
        }
        mag[static_cast<size_t>(i)] = std::sqrt(s);
        mx = std::max(mx, mag[static_cast<size_t>(i)]);
    }
    std::vector<std::array<int, 3>> out(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        int v = static_cast<int>(255.0 * mag[static_cast<size_t>(i)] / mx);
        out[static_cast<size_t>(i)] = {v, 0, 255 - v};
    }
    return out;
}

}  // namespace datseg
