#include "mixforge/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "mixforge/errors.hpp"

namespace mixforge {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'T', 'B'};
constexpr std::uint32_t kBlobVersion = 1;
constexpr int kSidecarVersion = 1;

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 14695981039346656037ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
void append_pod(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw CorruptFileError("tensor blob truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("rename failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return bytes;
}

// Every tensor a checkpoint persists, parameters then buffers.
std::vector<std::pair<std::string, const Tensor*>> model_state(ClassifierModel& model) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& p : model.named_parameters()) out.emplace_back(p.name, &p.value->val);
    for (auto& b : model.named_buffers()) out.emplace_back(b.name, b.tensor);
    return out;
}

void apply_state(const std::map<std::string, Tensor>& blob,
                 const std::vector<std::pair<std::string, Tensor*>>& dst, const char* what) {
    if (blob.size() != dst.size())
        throw ConfigError(std::string(what) + " checkpoint: tensor count mismatch");
    for (const auto& [name, target] : dst) {
        auto it = blob.find(name);
        if (it == blob.end())
            throw ConfigError(std::string(what) + " checkpoint: missing tensor " + name);
        if (!target->same_shape(it->second))
            throw ConfigError(std::string(what) + " checkpoint: shape mismatch for " + name);
        *target = it->second;
    }
}

}  // namespace

void save_tensor_blob(const std::string& path,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    append_pod(buf, kBlobVersion);
    append_pod(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        append_pod(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        append_pod(buf, static_cast<std::uint32_t>(t->rank()));
        for (int d = 0; d < t->rank(); ++d) append_pod(buf, static_cast<std::int32_t>(t->dim(d)));
        buf.append(reinterpret_cast<const char*>(t->data()),
                   static_cast<std::size_t>(t->numel()) * sizeof(Scalar));
    }
    append_pod(buf, fnv1a(buf.data(), buf.size()));
    write_file_atomic(path, buf);
}

std::map<std::string, Tensor> load_tensor_blob(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < sizeof(kMagic) + 2 * sizeof(std::uint32_t) + sizeof(std::uint64_t))
        throw CorruptFileError("tensor blob truncated: " + path);
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw CorruptFileError("not a tensor blob: " + path);
    const std::size_t body = buf.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + body, sizeof(stored));
    if (fnv1a(buf.data(), body) != stored)
        throw CorruptFileError("tensor blob checksum mismatch: " + path);

    std::size_t off = sizeof(kMagic);
    const auto version = read_pod<std::uint32_t>(buf, off);
    if (version != kBlobVersion) throw CorruptFileError("unsupported tensor blob version");
    const auto count = read_pod<std::uint32_t>(buf, off);
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(buf, off);
        if (off + name_len > body) throw CorruptFileError("tensor blob truncated: " + path);
        std::string name(buf.data() + off, name_len);
        off += name_len;
        const auto rank = read_pod<std::uint32_t>(buf, off);
        if (rank > 8) throw CorruptFileError("tensor blob: implausible rank");
        std::vector<int> dims;
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = read_pod<std::int32_t>(buf, off);
            if (dim < 0) throw CorruptFileError("tensor blob: negative dimension");
            dims.push_back(dim);
            numel *= dim;
        }
        const std::size_t bytes = static_cast<std::size_t>(numel) * sizeof(Scalar);
        if (off + bytes > body) throw CorruptFileError("tensor blob truncated: " + path);
        Tensor t(dims);
        std::memcpy(t.data(), buf.data() + off, bytes);
        off += bytes;
        if (!out.emplace(std::move(name), std::move(t)).second)
            throw CorruptFileError("tensor blob: duplicate tensor name");
    }
    if (off != body) throw CorruptFileError("tensor blob: trailing bytes");
    return out;
}

std::string sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".json"; }

Json read_sidecar(const std::string& checkpoint_path) {
    const std::string text = read_file(sidecar_path(checkpoint_path));
    Json j = Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
        throw CorruptFileError("unparseable checkpoint sidecar: " + sidecar_path(checkpoint_path));
    return j;
}

void write_json_atomic(const std::string& path, const Json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

void save_model_checkpoint(const std::string& path, ClassifierModel& model, const Json& extra) {
    save_tensor_blob(path, model_state(model));
    Json meta = extra;
    meta["format_version"] = kSidecarVersion;
    meta["kind"] = "classifier";
    meta["arch"] = {{"family", model.spec().family},
                    {"in_channels", model.spec().in_channels},
                    {"input_w", model.spec().input_w},
                    {"input_h", model.spec().input_h},
                    {"num_classes", model.spec().num_classes}};
    meta["parameter_count"] = model.parameter_count();
    write_json_atomic(sidecar_path(path), meta);
}

std::unique_ptr<ClassifierModel> load_model_checkpoint(const std::string& path) {
    const Json meta = read_sidecar(path);
    if (meta.value("kind", "") != "classifier")
        throw ConfigError("not a classifier checkpoint: " + path);
    if (!meta.contains("arch")) throw CorruptFileError("classifier sidecar lacks arch: " + path);
    const Json& a = meta["arch"];
    ArchSpec spec;
    spec.family = a.value("family", "");
    spec.in_channels = a.value("in_channels", 3);
    spec.input_w = a.value("input_w", 32);
    spec.input_h = a.value("input_h", 32);
    spec.num_classes = a.value("num_classes", 0);
    auto model = build_model(spec, /*init_seed=*/0);

    const auto blob = load_tensor_blob(path);
    std::vector<std::pair<std::string, Tensor*>> dst;
    for (auto& p : model->named_parameters()) dst.emplace_back(p.name, &p.value->val);
    for (auto& b : model->named_buffers()) dst.emplace_back(b.name, b.tensor);
    apply_state(blob, dst, "classifier");
    return model;
}

void save_mixer_checkpoint(const std::string& path, MixingModule& mixer, const Json& extra) {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (auto& p : mixer.named_parameters()) tensors.emplace_back(p.name, &p.value->val);
    save_tensor_blob(path, tensors);

    const MixerConfig& c = mixer.config();
    Json meta = extra;
    meta["format_version"] = kSidecarVersion;
    meta["kind"] = "mixer";
    meta["k"] = c.k;
    meta["alpha"] = c.alpha;
    meta["strategy"] = strategy_name(c.strategy);
    meta["tau"] = mixer.tau();
    meta["channels"] = {{"fs_in", 2 * c.k}, {"fm_in", 2 * c.k - 1}};
    meta["arch"] = {{"mask_layers", c.mask_layers}, {"mask_channels", c.mask_channels},
                    {"mask_kernel", c.mask_kernel}, {"noise_grid", c.noise_grid},
                    {"tau_init", c.tau_init},       {"tau_min", c.tau_min},
                    {"input_w", c.input_w},         {"input_h", c.input_h},
                    {"padding", c.padding == WarpPadding::kReflect ? "reflect" : "zeros"}};
    meta["source_dataset"] = c.source_dataset;
    meta["teacher_id"] = c.teacher_id;
    write_json_atomic(sidecar_path(path), meta);
}

std::unique_ptr<MixingModule> load_mixer_checkpoint(const std::string& path) {
    const Json meta = read_sidecar(path);
    if (meta.value("kind", "") != "mixer") throw ConfigError("not a mixer checkpoint: " + path);
    if (!meta.contains("arch")) throw CorruptFileError("mixer sidecar lacks arch: " + path);
    const Json& a = meta["arch"];
    MixerConfig c;
    c.k = meta.value("k", 2);
    c.alpha = meta.value("alpha", 1.0);
    c.strategy = parse_strategy(meta.value("strategy", "transformmix"));
    c.mask_layers = a.value("mask_layers", 3);
    c.mask_channels = a.value("mask_channels", 32);
    c.mask_kernel = a.value("mask_kernel", 3);
    c.noise_grid = a.value("noise_grid", 4);
    c.tau_init = a.value("tau_init", 1.0);
    c.tau_min = a.value("tau_min", 1e-3);
    c.input_w = a.value("input_w", 32);
    c.input_h = a.value("input_h", 32);
    c.padding = a.value("padding", "zeros") == std::string("reflect") ? WarpPadding::kReflect
                                                                      : WarpPadding::kZeros;
    c.source_dataset = meta.value("source_dataset", "");
    c.teacher_id = meta.value("teacher_id", "");
    auto mixer = std::make_unique<MixingModule>(c, /*init_seed=*/0);

    const auto blob = load_tensor_blob(path);
    std::vector<std::pair<std::string, Tensor*>> dst;
    for (auto& p : mixer->named_parameters()) dst.emplace_back(p.name, &p.value->val);
    apply_state(blob, dst, "mixer");
    return mixer;
}

}  // namespace mixforge
