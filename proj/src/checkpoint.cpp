#include "skinnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

namespace skinnet {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'S', 'K', 'N', 'T'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
    }
    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".json");
}

std::string model_spec_to_json(const ModelSpec& spec) {
    json j;
    j["depth"] = spec.depth;
    j["base_growth"] = spec.base_growth;
    j["in_channels"] = spec.in_channels;
    j["classes"] = spec.classes;
    j["input_size"] = spec.input_size;
    j["bottleneck_rates"] = spec.bottleneck_rates;
    j["bottleneck_channels"] = spec.bottleneck_channels;
    return j.dump(2);
}

ModelSpec model_spec_from_json(const std::string& text) {
    ModelSpec spec;
    try {
        const json j = json::parse(text);
        spec.depth = j.at("depth").get<int>();
        spec.base_growth = j.at("base_growth").get<int>();
        spec.in_channels = j.at("in_channels").get<int>();
        spec.classes = j.at("classes").get<int>();
        spec.input_size = j.at("input_size").get<int>();
        spec.bottleneck_rates = j.at("bottleneck_rates").get<std::vector<int>>();
        spec.bottleneck_channels = j.at("bottleneck_channels").get<int>();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed model spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::string& extra) {
    static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& [name, tensor] : model.parameters()) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (auto d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw CheckpointError("cannot open " + path.string() + " for writing");
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) throw CheckpointError("write failed: " + path.string());

    json side = json::parse(model_spec_to_json(model.spec()));
    if (!extra.empty()) side.update(json::parse(extra));
    std::ofstream sc(sidecar_path(path), std::ios::trunc);
    if (!sc) throw CheckpointError("cannot write sidecar for " + path.string());
    sc << side.dump(2) << "\n";
}

std::string read_sidecar(const std::filesystem::path& checkpoint) {
    std::ifstream in(sidecar_path(checkpoint));
    if (!in) throw CheckpointError("missing sidecar " + sidecar_path(checkpoint).string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
    const ModelSpec spec = model_spec_from_json(read_sidecar(path));

    std::ifstream file(path, std::ios::binary);
    if (!file) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
    Reader r(std::move(bytes));

    if (r.text(4) != std::string(kMagic, 4)) throw CheckpointError(path.string() + " is not a SKNT checkpoint");
    if (const auto version = r.u32(); version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

    Model<float> model = build_skinnet<float>(spec, 0);
    const auto& params = model.parameters();
    const std::uint32_t count = r.u32();
    if (count != params.size())
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                              std::to_string(params.size()));
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name = r.text(r.u32());
        auto it = params.find(name);
        if (it == params.end()) throw CheckpointError("unexpected tensor '" + name + "'");
        Tensor<float> dst = it->second;
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        if (shape != dst.shape())
            throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                  shape_str(dst.shape()));
        for (auto& v : dst.data()) v = std::bit_cast<float>(r.u32());
    }
    if (!r.done()) throw CheckpointError("trailing bytes after last tensor in " + path.string());
    return model;
}

}  // namespace skinnet
