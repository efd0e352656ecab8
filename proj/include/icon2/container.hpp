#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace icon2 {

// Dense row-major f32 tensor.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    size_t element_count() const {
        size_t n = 1;
        for (int64_t d : shape) n *= static_cast<size_t>(d);
        return n;
    }
};

// Binary tensor container:
//
//   [u64 little-endian: metadata length LEN]
//   [LEN bytes: UTF-8 JSON object]
//   [payload: concatenated row-major little-endian f32 tensor data]
//
// Top-level JSON keys are either tensor descriptors — objects carrying
// "dtype"/"shape"/"offset"/"nbytes" — or free-form metadata (e.g. a "config"
// object for model files, "criteria"/"model_hash"/... for direction files).
// Offsets are relative to the payload start; the writer packs tensors
// tightly in ascending name order, which makes write -> read -> write
// byte-identical.
struct TensorContainer {
    std::map<std::string, Tensor> tensors;
    nlohmann::json metadata = nlohmann::json::object();

    std::vector<uint8_t> serialize() const;
    static TensorContainer deserialize(const std::vector<uint8_t>& bytes);

    void save(const std::string& path) const;
    static TensorContainer load(const std::string& path);
};

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace icon2
