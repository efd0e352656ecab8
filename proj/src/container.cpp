#include "icon2/container.hpp"

#include <cstring>
#include <fstream>

#include "icon2/errors.hpp"

namespace icon2 {

namespace {

void put_u64_le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t get_u64_le(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

bool looks_like_descriptor(const nlohmann::json& v) {
    return v.is_object() && v.contains("dtype");
}

}  // namespace

std::vector<uint8_t> TensorContainer::serialize() const {
    nlohmann::json meta = metadata;

    // tensors packed tightly in name order (std::map iteration order)
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const uint64_t nbytes = static_cast<uint64_t>(t.element_count()) * 4;
        nlohmann::json desc;
        desc["dtype"] = "f32";
        desc["shape"] = t.shape;
        desc["offset"] = offset;
        desc["nbytes"] = nbytes;
        meta[name] = desc;
        offset += nbytes;
    }

    const std::string meta_str = meta.dump();
    std::vector<uint8_t> out;
    out.reserve(8 + meta_str.size() + offset);
    put_u64_le(out, meta_str.size());
    out.insert(out.end(), meta_str.begin(), meta_str.end());
    for (const auto& [name, t] : tensors) {
        for (float f : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
        }
    }
    return out;
}

TensorContainer TensorContainer::deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8) raise(ErrorKind::MalformedHeader, "container shorter than length prefix");
    const uint64_t meta_len = get_u64_le(bytes.data());
    if (meta_len > bytes.size() - 8)
        raise(ErrorKind::MalformedHeader, "metadata length exceeds container size");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + meta_len);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::MalformedHeader, std::string("metadata is not valid JSON: ") + e.what());
    }
    if (!meta.is_object()) raise(ErrorKind::MalformedHeader, "metadata root is not an object");

    const uint8_t* payload = bytes.data() + 8 + meta_len;
    const uint64_t payload_size = bytes.size() - 8 - meta_len;

    TensorContainer c;
    for (auto it = meta.begin(); it != meta.end(); ++it) {
        if (!looks_like_descriptor(it.value())) {
            c.metadata[it.key()] = it.value();
            continue;
        }
        const nlohmann::json& desc = it.value();
        if (!desc.contains("shape") || !desc.contains("offset") || !desc.contains("nbytes"))
            raise(ErrorKind::MalformedHeader, "tensor '" + it.key() + "' has incomplete descriptor");
        if (desc["dtype"] != "f32")
            raise(ErrorKind::MalformedHeader, "tensor '" + it.key() + "' has unsupported dtype");

        Tensor t;
        t.shape = desc["shape"].get<std::vector<int64_t>>();
        const uint64_t offset = desc["offset"].get<uint64_t>();
        const uint64_t nbytes = desc["nbytes"].get<uint64_t>();
        if (t.element_count() * 4 != nbytes)
            raise(ErrorKind::ShapeMismatch,
                  "tensor '" + it.key() + "': shape does not match nbytes");
        if (offset + nbytes > payload_size)
            raise(ErrorKind::MalformedHeader,
                  "tensor '" + it.key() + "': payload truncated");

        t.data.resize(t.element_count());
        for (size_t i = 0; i < t.data.size(); ++i) {
            const uint8_t* p = payload + offset + i * 4;
            uint32_t bits = static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                            static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
            std::memcpy(&t.data[i], &bits, 4);
        }
        c.tensors.emplace(it.key(), std::move(t));
    }
    return c;
}

void TensorContainer::save(const std::string& path) const {
    write_file_bytes(path, serialize());
}

TensorContainer TensorContainer::load(const std::string& path) {
    return deserialize(read_file_bytes(path));
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) raise(ErrorKind::IoError, "read failed for " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoError, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(ErrorKind::IoError, "write failed for " + path);
}

}  // namespace icon2
