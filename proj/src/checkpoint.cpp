#include "cfsm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cfsm/errors.hpp"

namespace cfsm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'F', 'S', 'M', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename T>
    void pod(T v) {
        const auto* p = reinterpret_cast<const uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void raw(const void* data, size_t n) {
        const auto* p = static_cast<const uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void str32(const std::string& s) {
        pod<uint32_t>(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<uint8_t> bytes;
};

class Reader {
public:
    Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    template <typename T>
    T pod() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const uint8_t* take(size_t n) {
        if (n > size_ - pos_) throw CheckpointError("checkpoint truncated");
        const uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    std::string str32() {
        const auto n = pod<uint32_t>();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    size_t remaining() const { return size_ - pos_; }

private:
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

bool is_float_tensor(const torch::Tensor& t) { return t.defined() && t.is_floating_point(); }

}  // namespace

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed) {
    uint64_t h = seed;
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

void Checkpoint::add(std::string name, const torch::Tensor& tensor) {
    tensors.emplace_back(std::move(name), tensor.detach().to(torch::kFloat32).contiguous().clone());
}

void Checkpoint::add_module(const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) add(prefix + item.key(), item.value());
    for (const auto& item : module.named_buffers(true))
        if (is_float_tensor(item.value())) add(prefix + item.key(), item.value());
}

bool Checkpoint::contains(std::string_view name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

const torch::Tensor& Checkpoint::get(std::string_view name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor named " + std::string(name));
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
    torch::NoGradGuard no_grad;
    auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
        const auto& src = get(prefix + key);
        if (src.sizes() != dst.sizes()) throw CheckpointError("shape mismatch for tensor " + prefix + key);
        dst.copy_(src);
    };
    for (auto& item : module.named_parameters(true)) copy_into(item.key(), item.value());
    for (auto& item : module.named_buffers(true))
        if (is_float_tensor(item.value())) copy_into(item.key(), item.value());
}

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    auto meta = ckpt.metadata;
    meta["schema_version"] = kCheckpointSchemaVersion;
    const std::string header = meta.dump();
    w.pod<uint64_t>(header.size());
    w.raw(header.data(), header.size());
    w.pod<uint64_t>(ckpt.tensors.size());
    for (const auto& [name, tensor] : ckpt.tensors) {
        auto t = tensor.detach().to(torch::kFloat32).contiguous();
        w.str32(name);
        w.str32("f32");
        w.pod<uint32_t>(static_cast<uint32_t>(t.dim()));
        for (int64_t s : t.sizes()) w.pod<int64_t>(s);
        const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        w.pod<uint64_t>(nbytes);
        w.raw(t.data_ptr<float>(), nbytes);
    }
    w.pod<uint64_t>(fnv1a64(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < sizeof(kMagic) + 2 * sizeof(uint64_t)) throw CheckpointError("checkpoint truncated");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint archive");
    const size_t body = bytes.size() - sizeof(uint64_t);
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof(stored));
    if (stored != fnv1a64(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated)");

    Reader r(bytes.data() + sizeof(kMagic), body - sizeof(kMagic));
    Checkpoint ckpt;
    const auto header_len = r.pod<uint64_t>();
    const auto* header = r.take(header_len);
    try {
        ckpt.metadata = nlohmann::json::parse(header, header + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    const int version = ckpt.metadata.value("schema_version", -1);
    if (version != kCheckpointSchemaVersion) {
        throw CheckpointError("checkpoint schema_version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kCheckpointSchemaVersion) + ")");
    }
    const auto count = r.pod<uint64_t>();
    for (uint64_t i = 0; i < count; ++i) {
        std::string name = r.str32();
        const std::string dtype = r.str32();
        if (dtype != "f32") throw CheckpointError("unsupported dtype '" + dtype + "' for " + name);
        const auto ndim = r.pod<uint32_t>();
        std::vector<int64_t> shape(ndim);
        int64_t numel = 1;
        for (auto& s : shape) {
            s = r.pod<int64_t>();
            if (s < 0) throw CheckpointError("negative dimension in " + name);
            numel *= s;
        }
        const auto nbytes = r.pod<uint64_t>();
        if (nbytes != static_cast<uint64_t>(numel) * sizeof(float)) throw CheckpointError("size mismatch in " + name);
        auto t = torch::empty(shape, torch::kFloat32);
        std::memcpy(t.data_ptr<float>(), r.take(nbytes), nbytes);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open file: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

uint64_t parameter_hash(const torch::nn::Module& module) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_in = [&](const std::string& name, const torch::Tensor& t) {
        h = fnv1a64(name.data(), name.size(), h);
        auto c = t.detach().contiguous();
        h = fnv1a64(c.data_ptr(), static_cast<size_t>(c.numel()) * c.element_size(), h);
    };
    for (const auto& item : module.named_parameters(true)) mix_in(item.key(), item.value());
    for (const auto& item : module.named_buffers(true)) mix_in(item.key(), item.value());
    return h;
}

}  // namespace cfsm
