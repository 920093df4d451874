#include "puridiff/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "puridiff/errors.hpp"

namespace puridiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_binary(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw config_error("cannot open '" + path + "' for reading");
    std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<char> bytes(static_cast<size_t>(n));
    f.read(bytes.data(), n);
    return bytes;
}

void append_f32(std::vector<char>& out, const std::vector<double>& values) {
    for (double d : values) {
        float v = static_cast<float>(d);
        char b[4];
        std::memcpy(b, &v, 4);
        out.insert(out.end(), b, b + 4);
    }
}

void append_i32(std::vector<char>& out, const std::vector<int>& values) {
    for (int d : values) {
        int32_t v = static_cast<int32_t>(d);
        char b[4];
        std::memcpy(b, &v, 4);
        out.insert(out.end(), b, b + 4);
    }
}

std::vector<double> read_f32(const std::vector<char>& bytes, size_t offset, size_t count) {
    if (offset + count * 4 > bytes.size()) throw config_error("binary file truncated");
    std::vector<double> out(count);
    for (size_t i = 0; i < count; ++i) {
        float v;
        std::memcpy(&v, bytes.data() + offset + i * 4, 4);
        out[i] = static_cast<double>(v);
    }
    return out;
}

std::vector<int> read_i32(const std::vector<char>& bytes, size_t offset, size_t count) {
    if (offset + count * 4 > bytes.size()) throw config_error("binary file truncated");
    std::vector<int> out(count);
    for (size_t i = 0; i < count; ++i) {
        int32_t v;
        std::memcpy(&v, bytes.data() + offset + i * 4, 4);
        out[i] = static_cast<int>(v);
    }
    return out;
}

json load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open manifest '" + path + "'");
    json j;
    f >> j;
    return j;
}

std::string basename_of(const std::string& prefix) { return fs::path(prefix).filename().string(); }

std::string sibling(const std::string& prefix, const std::string& file) {
    return (fs::path(prefix).parent_path() / file).string();
}

json shape_to_json(const Shape& s) { return json(s); }
Shape shape_from_json(const json& j) { return j.get<Shape>(); }

void save_params(json& manifest, std::vector<char>& blob, const ParamSet& params) {
    json plist = json::array();
    for (const auto& p : params.all()) {
        plist.push_back({{"name", p.name}, {"shape", shape_to_json(p.value.shape())}});
        append_f32(blob, p.value.data());
    }
    manifest["params"] = plist;
}

void load_params(const json& manifest, const std::vector<char>& blob, ParamSet& params) {
    size_t offset = 0;
    for (const auto& pj : manifest.at("params")) {
        std::string name = pj.at("name").get<std::string>();
        Shape shape = shape_from_json(pj.at("shape"));
        Tensor t = params.find(name);
        if (!same_shape(t.shape(), shape))
            throw config_error("checkpoint parameter '" + name + "' has shape " +
                               shape_str(shape) + ", model expects " + shape_str(t.shape()));
        size_t n = static_cast<size_t>(numel(shape));
        std::vector<double> v = read_f32(blob, offset, n);
        offset += n * 4;
        t.mutable_data() = std::move(v);
    }
}

}  // namespace

void save_dataset(const LabeledDataset& data, const std::string& prefix) {
    data.validate();
    std::vector<char> blob;
    append_f32(blob, data.samples.data());
    size_t labels_offset = blob.size();
    append_i32(blob, data.labels);

    json m;
    m["format"] = "puridiff-dataset-v1";
    m["dtype"] = "f32le";
    m["shape"] = shape_to_json(data.samples.shape());
    m["class_count"] = data.class_count;
    m["generator"] = data.generator;
    m["seed"] = data.seed;
    m["data_file"] = basename_of(prefix) + ".bin";
    m["labels_dtype"] = "i32le";
    m["labels_offset_bytes"] = labels_offset;
    m["labels_count"] = data.labels.size();

    write_text_file(prefix + ".json", m.dump(2) + "\n");
    write_binary(prefix + ".bin", blob);
}

LabeledDataset load_dataset(const std::string& prefix) {
    json m = load_manifest(prefix + ".json");
    if (m.at("format") != "puridiff-dataset-v1")
        throw config_error("'" + prefix + ".json' is not a dataset manifest");
    Shape shape = shape_from_json(m.at("shape"));
    std::vector<char> blob = read_binary(sibling(prefix, m.at("data_file").get<std::string>()));
    size_t n_values = static_cast<size_t>(numel(shape));
    size_t labels_offset = m.at("labels_offset_bytes").get<size_t>();
    size_t labels_count = m.at("labels_count").get<size_t>();

    LabeledDataset d;
    d.samples = Tensor::constant(shape, read_f32(blob, 0, n_values));
    d.labels = read_i32(blob, labels_offset, labels_count);
    d.class_count = m.at("class_count").get<int>();
    d.generator = m.value("generator", "");
    d.seed = m.value("seed", 0ull);
    d.validate();
    return d;
}

void save_classifier(const ClassifierModel& model, const std::string& prefix) {
    json m;
    m["format"] = "puridiff-checkpoint-v1";
    m["kind"] = "classifier";
    m["architecture"] = classifier_arch_name(model.arch);
    m["class_count"] = model.class_count;
    m["input_shape"] = shape_to_json(model.input_shape);
    m["seed"] = model.seed;
    m["blob_file"] = basename_of(prefix) + ".bin";
    std::vector<char> blob;
    save_params(m, blob, model.params);
    write_text_file(prefix + ".json", m.dump(2) + "\n");
    write_binary(prefix + ".bin", blob);
}

ClassifierModel load_classifier(const std::string& prefix) {
    json m = load_manifest(prefix + ".json");
    if (m.at("kind") != "classifier")
        throw config_error("'" + prefix + ".json' is not a classifier checkpoint");
    ClassifierModel model = make_classifier(
        classifier_arch_from_name(m.at("architecture").get<std::string>()),
        shape_from_json(m.at("input_shape")), m.at("class_count").get<int>(),
        m.at("seed").get<uint64_t>());
    std::vector<char> blob = read_binary(sibling(prefix, m.at("blob_file").get<std::string>()));
    load_params(m, blob, model.params);
    return model;
}

void save_diffusion(const DiffusionModel& model, const std::string& prefix) {
    json m;
    m["format"] = "puridiff-checkpoint-v1";
    m["kind"] = "diffusion";
    m["architecture"] = eps_arch_name(model.arch);
    m["sample_shape"] = shape_to_json(model.sample_shape);
    m["seed"] = model.seed;
    m["schedule"] = {{"T", model.schedule.T},
                     {"beta_start", model.schedule.beta_start},
                     {"beta_end", model.schedule.beta_end}};
    m["blob_file"] = basename_of(prefix) + ".bin";
    std::vector<char> blob;
    save_params(m, blob, model.params);
    write_text_file(prefix + ".json", m.dump(2) + "\n");
    write_binary(prefix + ".bin", blob);
}

DiffusionModel load_diffusion(const std::string& prefix) {
    json m = load_manifest(prefix + ".json");
    if (m.at("kind") != "diffusion")
        throw config_error("'" + prefix + ".json' is not a diffusion checkpoint");
    const json& sj = m.at("schedule");
    NoiseSchedule schedule = make_schedule(sj.at("T").get<int>(), sj.at("beta_start").get<double>(),
                                           sj.at("beta_end").get<double>());
    DiffusionModel model = make_diffusion_model(
        eps_arch_from_name(m.at("architecture").get<std::string>()),
        shape_from_json(m.at("sample_shape")), schedule, m.at("seed").get<uint64_t>());
    std::vector<char> blob = read_binary(sibling(prefix, m.at("blob_file").get<std::string>()));
    load_params(m, blob, model.params);
    return model;
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for reading");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for writing");
    f << content;
}

bool file_exists(const std::string& path) { return fs::exists(path); }

uint64_t hash_file(const std::string& path) {
    std::vector<char> bytes = read_binary(path);
    return fnv1a64(std::string_view(bytes.data(), bytes.size()));
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

void ensure_directory(const std::string& path) {
    if (!path.empty()) fs::create_directories(path);
}

}  // namespace puridiff
