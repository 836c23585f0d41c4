#include "mmc/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmc/errors.hpp"
#include "mmc/run_config.hpp"

namespace mmc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "mmc-checkpoint-v1";

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string shape_string(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

std::pair<std::size_t, std::size_t> parse_shape(const std::string& s, const std::string& name) {
    auto x = s.find('x');
    if (x == std::string::npos) throw LoadError(name, "bad tensor shape '" + s + "'");
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
}

struct TensorRef {
    std::string name;
    const Matrix* value;
};

std::vector<TensorRef> checkpoint_tensors(TrainState& state) {
    std::vector<TensorRef> out;
    auto student = state.student_params();
    for (const auto& p : student) out.push_back({p.name, &p.param->value});
    for (const auto& p : state.teacher_params()) out.push_back({p.name, &p.param->value});
    for (std::size_t i = 0; i < student.size(); ++i) {
        out.push_back({"optim.m." + student[i].name, &state.adam_m[i]});
        out.push_back({"optim.v." + student[i].name, &state.adam_v[i]});
    }
    return out;
}

std::uint64_t hash_tensor(const std::string& name, const Matrix& m, std::uint64_t h) {
    h = fnv1a(name, h);
    return fnv1a(std::span(reinterpret_cast<const unsigned char*>(m.data()), m.size() * sizeof(float)), h);
}

}  // namespace

void write_manifest(const fs::path& path, const Manifest& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(path.string(), "manifest not found");
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw LoadError(path.string(), "malformed line '" + line + "'");
        m.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return m;
}

std::string manifest_value(const Manifest& m, const std::string& key) {
    for (const auto& [k, v] : m)
        if (k == key) return v;
    throw LoadError(key, "missing manifest key");
}

void write_f32_blob(const fs::path& path, std::span<const float> values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (float v : values) {
            auto bits = __builtin_bswap32(std::bit_cast<std::uint32_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    }
    if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<float> read_f32_blob(const fs::path& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw LoadError(path.string(), "blob not found");
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_count * sizeof(float))
        throw LoadError(path.string(), "expected " + std::to_string(expected_count * sizeof(float)) + " bytes, found " + std::to_string(bytes));
    in.seekg(0);
    std::vector<float> values(expected_count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if constexpr (std::endian::native != std::endian::little)
        for (float& v : values) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    return values;
}

fs::path save_checkpoint(const TrainState& state_in, const fs::path& out_dir) {
    auto& state = const_cast<TrainState&>(state_in);  // parameter collection needs mutable access; nothing is modified
    char name[32];
    std::snprintf(name, sizeof name, "step_%07ld", state.step);
    fs::create_directories(out_dir);
    const fs::path dir = out_dir / name;

    auto tensors = checkpoint_tensors(state);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) h = hash_tensor(t.name, *t.value, h);

    Manifest manifest{
        {"format", kFormat},
        {"config_hash", hex64(config_hash(state.config))},
        {"step", std::to_string(state.step)},
        {"total_steps", std::to_string(state.config.total_steps)},
        {"ema_momentum", format_double(state.momentum)},
        {"lr", format_double(state.lr)},
        {"tau", format_double(state.config.tau)},
        {"params_hash", hex64(h)},
    };
    for (const auto& t : tensors) manifest.emplace_back("tensor." + t.name, shape_string(*t.value));

    write_directory_atomically(dir, [&](const fs::path& tmp) {
        fs::create_directories(tmp / "tensors");
        for (const auto& t : tensors) write_f32_blob(tmp / "tensors" / (t.name + ".bin"), t.value->span());
        std::ofstream(tmp / "config.json") << to_json(state.config).dump(2) << '\n';
        write_manifest(tmp / "manifest.txt", manifest);
    });
    return dir;
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
    CheckpointInfo info;
    info.dir = dir;
    info.manifest = read_manifest(dir / "manifest.txt");
    if (manifest_value(info.manifest, "format") != kFormat) throw LoadError(dir.string(), "unsupported checkpoint format");
    std::ifstream cfg_in(dir / "config.json");
    if (!cfg_in) throw LoadError((dir / "config.json").string(), "missing config");
    nlohmann::json j;
    cfg_in >> j;
    info.config = train_config_from_json(j);
    if (hex64(config_hash(info.config)) != manifest_value(info.manifest, "config_hash"))
        throw LoadError(dir.string(), "config hash does not match manifest");
    info.step = std::stol(manifest_value(info.manifest, "step"));
    info.params_hash = manifest_value(info.manifest, "params_hash");
    return info;
}

namespace {

void load_into(const CheckpointInfo& info, const std::string& name, Matrix& target) {
    const auto [rows, cols] = parse_shape(manifest_value(info.manifest, "tensor." + name), name);
    if (rows != target.rows() || cols != target.cols())
        throw LoadError(name, "shape " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match the model");
    target.storage() = read_f32_blob(info.dir / "tensors" / (name + ".bin"), rows * cols);
}

}  // namespace

TrainState load_checkpoint(const fs::path& dir) {
    CheckpointInfo info = read_checkpoint_info(dir);
    TrainState state = TrainState::allocate(info.config);
    auto tensors = checkpoint_tensors(state);
    for (const auto& t : tensors) load_into(info, t.name, const_cast<Matrix&>(*t.value));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) h = hash_tensor(t.name, *t.value, h);
    if (hex64(h) != info.params_hash) throw LoadError(dir.string(), "parameter hash mismatch (corrupt checkpoint)");
    state.step = info.step;
    state.momentum = std::stod(manifest_value(info.manifest, "ema_momentum"));
    state.lr = std::stod(manifest_value(info.manifest, "lr"));
    state.student.backbone.mark_initialized();
    state.teacher.backbone.mark_initialized();
    return state;
}

VisionTransformer load_backbone(const fs::path& dir, bool teacher) {
    CheckpointInfo info = read_checkpoint_info(dir);
    VisionTransformer vit(info.config.backbone);
    nn::ParamList params;
    vit.collect(teacher ? "teacher.backbone" : "student.backbone", params);
    for (auto& p : params) load_into(info, p.name, p.param->value);
    vit.mark_initialized();
    return vit;
}

StudentNetwork load_student(const fs::path& dir) {
    CheckpointInfo info = read_checkpoint_info(dir);
    StudentNetwork s;
    s.backbone = VisionTransformer(info.config.backbone);
    s.heads.init_shape(info.config.backbone.embed_dim, info.config.backbone.patch_size, info.config.heads);
    nn::ParamList params;
    s.collect(params);
    for (auto& p : params) load_into(info, p.name, p.param->value);
    s.backbone.mark_initialized();
    return s;
}

fs::path resolve_checkpoint(const fs::path& path) {
    if (fs::exists(path / "manifest.txt")) return path;
    fs::path best;
    if (fs::is_directory(path))
        for (const auto& e : fs::directory_iterator(path)) {
            const auto n = e.path().filename().string();
            if (e.is_directory() && n.rfind("step_", 0) == 0 && n.find(".tmp") == std::string::npos &&
                fs::exists(e.path() / "manifest.txt") && (best.empty() || n > best.filename().string()))
                best = e.path();
        }
    if (best.empty()) throw LoadError(path.string(), "no checkpoint found");
    return best;
}

std::string checkpoint_hash(const fs::path& dir) { return manifest_value(read_manifest(dir / "manifest.txt"), "params_hash"); }

}  // namespace mmc
