#include "fm3d/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "fm3d/errors.hpp"

namespace fm3d {
namespace {

constexpr char kMagic[8] = {'F', 'M', '3', 'D', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw VersionError("checkpoint truncated");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
}

std::string shape_str(at::IntArrayRef s) {
    std::ostringstream os;
    os << s;
    return os.str();
}

} // namespace

void TensorArchive::put(const std::string& name, const torch::Tensor& t) {
    tensors_[name] = t.detach().to(torch::kFloat32).contiguous().clone();
}

torch::Tensor TensorArchive::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw VersionError("checkpoint is missing tensor '" + name + "'");
    return it->second;
}

void TensorArchive::load_into(const std::string& name, torch::Tensor& dst) const {
    const auto src = get(name);
    if (src.sizes() != dst.sizes())
        throw VersionError("checkpoint tensor '" + name + "' has shape " + shape_str(src.sizes()) + ", expected " +
                           shape_str(dst.sizes()));
    torch::NoGradGuard ng;
    dst.copy_(src);
}

void TensorArchive::put_module(const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& p : m.named_parameters()) put(prefix + p.key(), p.value());
    for (const auto& b : m.named_buffers()) put(prefix + b.key(), b.value());
}

void TensorArchive::load_module(const std::string& prefix, torch::nn::Module& m) const {
    for (auto& p : m.named_parameters()) load_into(prefix + p.key(), p.value());
    for (auto& b : m.named_buffers()) load_into(prefix + b.key(), b.value());
}

std::string TensorArchive::serialize() const {
    nlohmann::json h = header;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, t] : tensors_) index.push_back({{"name", name}, {"shape", t.sizes().vec()}});
    h["tensors"] = index;
    const std::string hs = h.dump();
    std::string out(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(out, kCheckpointFormat);
    put_le<std::uint64_t>(out, hs.size());
    out += hs;
    for (const auto& [name, t] : tensors_) {
        const auto* p = reinterpret_cast<const char*>(t.data_ptr<float>());
        out.append(p, static_cast<std::size_t>(t.numel()) * sizeof(float));
    }
    return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw VersionError("not an fm3d checkpoint");
    std::size_t pos = sizeof kMagic;
    const auto format = get_le<std::uint32_t>(bytes, pos);
    if (format != kCheckpointFormat)
        throw VersionError("unsupported checkpoint format version " + std::to_string(format));
    const auto hlen = get_le<std::uint64_t>(bytes, pos);
    if (pos + hlen > bytes.size()) throw VersionError("checkpoint truncated");
    TensorArchive a;
    try {
        a.header = nlohmann::json::parse(bytes.substr(pos, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw VersionError(std::string("corrupt checkpoint header: ") + e.what());
    }
    pos += hlen;
    try {
        const auto index = a.header.at("tensors");
        a.header.erase("tensors");
        for (const auto& item : index) {
            const auto shape = item.at("shape").get<std::vector<long>>();
            // Validate the element count against the remaining bytes before
            // allocating, so a corrupt header cannot request huge buffers.
            const std::size_t limit = (bytes.size() - pos) / sizeof(float);
            std::size_t numel = 1;
            for (long d : shape) {
                if (d < 0) throw VersionError("corrupt checkpoint: negative dimension");
                const auto ud = static_cast<std::size_t>(d);
                if (ud != 0 && numel > limit / ud) throw VersionError("checkpoint truncated");
                numel *= ud;
            }
            const std::size_t nbytes = numel * sizeof(float);
            if (pos + nbytes > bytes.size()) throw VersionError("checkpoint truncated");
            auto t = torch::empty(shape, torch::kFloat32);
            if (nbytes) std::memcpy(t.data_ptr<float>(), bytes.data() + pos, nbytes);
            pos += nbytes;
            a.tensors_[item.at("name").get<std::string>()] = t;
        }
    } catch (const nlohmann::json::exception& e) {
        throw VersionError(std::string("corrupt checkpoint index: ") + e.what());
    }
    if (pos != bytes.size()) throw VersionError("trailing bytes in checkpoint");
    return a;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint write failed: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str());
}

} // namespace fm3d
