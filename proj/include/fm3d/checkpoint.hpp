#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace fm3d {

// Single-file container: an 8-byte magic, a little-endian u32 format
// version, a u64 header length, the JSON header, then raw float32 tensor
// payloads in the order listed under header["tensors"].
inline constexpr std::uint32_t kCheckpointFormat = 1;

class TensorArchive {
public:
    nlohmann::json header = nlohmann::json::object();

    void put(const std::string& name, const torch::Tensor& t);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    // Throws VersionError when missing or shaped differently from `like`.
    torch::Tensor get(const std::string& name) const;
    void load_into(const std::string& name, torch::Tensor& dst) const;
    const std::map<std::string, torch::Tensor>& tensors() const { return tensors_; }

    void put_module(const std::string& prefix, const torch::nn::Module& m);
    // Copies every parameter and buffer of `m` from the archive.
    void load_module(const std::string& prefix, torch::nn::Module& m) const;

    std::string serialize() const;
    static TensorArchive deserialize(const std::string& bytes);
    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

private:
    std::map<std::string, torch::Tensor> tensors_;
};

} // namespace fm3d
