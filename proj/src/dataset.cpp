#include "mmc/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mmc/errors.hpp"
#include "mmc/image_io.hpp"

namespace fs = std::filesystem;

namespace mmc {

const std::vector<ManifestItem>& DatasetManifest::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw InvalidInput("dataset has no split '" + name + "'");
    return it->second;
}

DatasetManifest read_dataset_manifest(const fs::path& root_or_file) {
    const fs::path file = fs::is_directory(root_or_file) ? root_or_file / "manifest.json" : root_or_file;
    std::ifstream in(file);
    if (!in) throw LoadError(file.string(), "manifest not found");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(file.string(), std::string("malformed JSON: ") + e.what());
    }
    DatasetManifest m;
    m.root = file.parent_path();
    m.schema_version = j.value("schema_version", 0);
    if (m.schema_version != kManifestSchemaVersion)
        throw LoadError(file.string(), "unsupported schema_version " + std::to_string(m.schema_version));
    if (!j.contains("splits") || !j["splits"].is_object()) throw LoadError(file.string(), "missing 'splits' object");
    for (const auto& [name, items] : j["splits"].items()) {
        auto& list = m.splits[name];
        for (const auto& it : items) {
            if (!it.contains("id") || !it.contains("image")) throw LoadError(file.string(), "item in split '" + name + "' lacks id or image");
            list.push_back({it["id"].get<std::string>(), it["image"].get<std::string>(), it.value("mask", std::string{}), it.value("class", -1)});
        }
    }
    return m;
}

void write_dataset_manifest(const DatasetManifest& manifest) {
    nlohmann::json j;
    j["schema_version"] = manifest.schema_version;
    j["splits"] = nlohmann::json::object();
    for (const auto& [name, items] : manifest.splits) {
        auto arr = nlohmann::json::array();
        for (const auto& it : items) {
            nlohmann::json e{{"id", it.id}, {"image", it.image}};
            if (!it.mask.empty()) e["mask"] = it.mask;
            if (it.class_label >= 0) e["class"] = it.class_label;
            arr.push_back(std::move(e));
        }
        j["splits"][name] = std::move(arr);
    }
    fs::create_directories(manifest.root);
    const fs::path tmp = manifest.root / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(1) << '\n';
        if (!out) throw LoadError(tmp.string(), "cannot write manifest");
    }
    fs::rename(tmp, manifest.root / "manifest.json");
}

std::vector<DatasetItem> load_dataset(const DatasetManifest& manifest, const std::string& split, std::optional<std::uint64_t> seed) {
    const auto& items = manifest.split(split);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    if (seed) {
        auto rng = make_rng(*seed, 0xDA7A);
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<DatasetItem> out(items.size());
    std::vector<std::string> errors(items.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < order.size(); ++i) {
        const ManifestItem& m = items[order[i]];
        try {
            DatasetItem d;
            d.id = m.id;
            d.class_label = m.class_label;
            d.image = read_image(manifest.root / m.image);
            if (!m.mask.empty()) {
                d.labels = read_labels(manifest.root / m.mask);
                if (d.labels.height != d.image.height || d.labels.width != d.image.width)
                    throw LoadError((manifest.root / m.mask).string(), "mask size differs from its image");
            }
            out[i] = std::move(d);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    std::vector<std::string> failed;
    for (auto& e : errors)
        if (!e.empty()) failed.push_back(std::move(e));
    if (!failed.empty()) {
        std::ostringstream msg;
        msg << failed.size() << " item(s) failed to load:";
        for (const auto& e : failed) msg << "\n  " << e;
        // the first failing path leads the report
        std::string first = failed.front();
        const auto a = first.find('\''), b = first.find('\'', a + 1);
        throw LoadError(a != std::string::npos && b != std::string::npos ? first.substr(a + 1, b - a - 1) : first, msg.str());
    }
    return out;
}

int image_class(const DatasetItem& item) {
    if (item.class_label >= 0) return item.class_label;
    std::map<int, std::size_t> counts;
    for (int l : item.labels.labels)
        if (l != 0) ++counts[l];
    if (counts.empty()) throw InvalidInput("item '" + item.id + "' has neither a class nor foreground labels");
    return std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) { return a.second < b.second; })->first;
}

namespace {

std::vector<fs::path> sorted_files(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::vector<FrameSequence> load_sequences(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw LoadError(dir.string(), "sequence directory not found");
    std::vector<fs::path> seq_dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) seq_dirs.push_back(e.path());
    std::sort(seq_dirs.begin(), seq_dirs.end());
    std::vector<FrameSequence> out;
    for (const auto& sd : seq_dirs) {
        FrameSequence seq;
        seq.name = sd.filename().string();
        const auto frames = sorted_files(sd / "frames");
        const auto masks = sorted_files(sd / "masks");
        if (frames.empty()) throw LoadError((sd / "frames").string(), "no frames");
        if (masks.empty()) throw LoadError((sd / "masks").string(), "frame-0 mask missing");
        for (const auto& f : frames) {
            seq.frames.push_back(read_image(f));
            if (seq.frames.back().height != seq.frames.front().height || seq.frames.back().width != seq.frames.front().width)
                throw LoadError(f.string(), "frame size differs from frame 0");
        }
        seq.first_labels = read_labels(masks.front());
        if (masks.size() == frames.size())
            for (const auto& m : masks) seq.ground_truth.push_back(read_labels(m));
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace mmc
