#include "nusg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nusg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    void read(void* dst, size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw std::runtime_error(std::string("truncated checkpoint while reading ") + what + " at byte " +
                                     std::to_string(pos_));
        }
    }

    const std::string& bytes_;
    size_t pos_ = 0;
};

}  // namespace

std::vector<CheckpointEntry> snapshot(const nn::StateList<float>& state) {
    std::vector<CheckpointEntry> out;
    out.reserve(state.size());
    for (const auto& e : state) {
        auto d = e.tensor.data();
        out.push_back({e.name, e.tensor.shape(), std::vector<float>(d.begin(), d.end())});
    }
    return out;
}

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
    std::string out = "NUSG";
    put<uint32_t>(out, kCheckpointVersion);
    put<uint32_t>(out, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > UINT16_MAX) throw std::invalid_argument("tensor name too long: " + e.name);
        if (e.shape.size() > UINT8_MAX) throw std::invalid_argument("tensor rank too large: " + e.name);
        if (static_cast<int64_t>(e.values.size()) != shape_numel(e.shape)) {
            throw std::invalid_argument("entry " + e.name + " has " + std::to_string(e.values.size()) +
                                        " values for shape " + shape_str(e.shape));
        }
        put<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
        out += e.name;
        put<uint8_t>(out, 0);
        put<uint8_t>(out, static_cast<uint8_t>(e.shape.size()));
        for (int64_t d : e.shape) put<uint32_t>(out, static_cast<uint32_t>(d));
        out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float));
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "NUSG", 4) != 0) throw std::runtime_error("not a checkpoint: bad magic bytes");
    const auto version = r.get<uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get<uint32_t>("entry count");
    std::vector<CheckpointEntry> out;
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name.resize(r.get<uint16_t>("name length"));
        r.read(e.name.data(), e.name.size(), "name");
        const auto dtype = r.get<uint8_t>("dtype");
        if (dtype != 0) throw std::runtime_error("entry " + e.name + " has unsupported dtype " + std::to_string(dtype));
        const auto rank = r.get<uint8_t>("rank");
        for (uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<uint32_t>("dims"));
        e.values.resize(static_cast<size_t>(shape_numel(e.shape)));
        r.read(e.values.data(), e.values.size() * sizeof(float), "values");
        out.push_back(std::move(e));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes after the last checkpoint entry");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const nn::StateList<float>& state) {
    const std::string bytes = encode_checkpoint(snapshot(state));
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

void apply_checkpoint(const std::vector<CheckpointEntry>& entries, nn::StateList<float>& state) {
    const size_t n = std::min(entries.size(), state.size());
    for (size_t i = 0; i < n; ++i) {
        if (entries[i].name != state[i].name || entries[i].shape != state[i].tensor.shape()) {
            throw std::runtime_error("checkpoint mismatch at tensor " + std::to_string(i) + ": model has " +
                                     state[i].name + " " + shape_str(state[i].tensor.shape()) + ", file has " +
                                     entries[i].name + " " + shape_str(entries[i].shape));
        }
    }
    if (entries.size() != state.size()) {
        const std::string first = entries.size() < state.size() ? "model tensor " + state[n].name + " is missing"
                                                                 : "extra file tensor " + entries[n].name;
        throw std::runtime_error("checkpoint has " + std::to_string(entries.size()) + " tensors, model expects " +
                                 std::to_string(state.size()) + ": " + first);
    }
    for (size_t i = 0; i < n; ++i) {
        auto dst = state[i].tensor.data();
        std::copy(entries[i].values.begin(), entries[i].values.end(), dst.begin());
    }
}

Arch detect_arch(const std::vector<CheckpointEntry>& entries) {
    bool res = false;
    const CheckpointEntry* en2_in = nullptr;
    for (const auto& e : entries) {
        if (e.name.starts_with("en1/res/")) res = true;
        if (e.name == "en2/rsu/in/conv/weight") en2_in = &e;
    }
    if (!en2_in || en2_in->shape.size() != 4) {
        throw std::runtime_error("cannot detect architecture: no en2/rsu/in/conv/weight tensor");
    }
    // En2 widens to 128 channels in the full table and stays at 64 in lite.
    const bool lite = en2_in->shape[0] == 64;
    if (lite) return res ? Arch::kResU2NetLite : Arch::kU2NetLite;
    return res ? Arch::kResU2Net : Arch::kU2Net;
}

Model<float> load_model(const std::filesystem::path& path, std::optional<Arch> arch) {
    const auto entries = load_checkpoint(path);
    const Arch detected = detect_arch(entries);
    if (arch && *arch != detected) {
        throw std::runtime_error("checkpoint " + path.string() + " holds " + arch_id(detected) + ", not " +
                                 arch_id(*arch));
    }
    Model<float> model(detected);
    nn::StateList<float> state = model.state();
    apply_checkpoint(entries, state);
    return model;
}

}  // namespace nusg
