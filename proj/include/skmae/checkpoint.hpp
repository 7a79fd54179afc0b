#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "skmae/errors.hpp"
#include "skmae/optim.hpp"
#include "skmae/tensor.hpp"

// Binary layout:
//   "SKMAE1" | u32 LE metadata length | metadata (UTF-8 JSON) | f32 LE payload
// The metadata carries format_version, kind, config, state and the ordered
// tensor descriptors [{name, shape}]; the payload is the tensors back to back.

namespace skmae {

inline constexpr char kCheckpointMagic[] = "SKMAE1";
inline constexpr std::size_t kMagicLength = 6;
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::string kind;  // "mae" or "ssl"
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json state = nlohmann::json::object();
    std::vector<StoredTensor> tensors;

    const StoredTensor* find(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return &t;
        }
        return nullptr;
    }

    template <typename T>
    void add(const std::string& name, const Tensor<T>& t) {
        StoredTensor s{name, t.shape(), {}};
        s.values.reserve(t.numel());
        for (T v : t.data()) s.values.push_back(static_cast<float>(v));
        tensors.push_back(std::move(s));
    }

    template <typename T>
    void add_all(const NamedParams<T>& params, const std::string& prefix = "") {
        for (const auto& [name, p] : params) add(prefix + name, p);
    }

    // Copies stored values into the given tensors. Every destination must be
    // present with an identical shape.
    template <typename T>
    void restore(NamedParams<T>& params, const std::string& prefix = "") const {
        for (auto& [name, p] : params) {
            const StoredTensor* s = find(prefix + name);
            if (!s) throw CheckpointMismatch(prefix + name, "tensor missing from checkpoint");
            if (s->shape != p.shape()) {
                throw CheckpointMismatch(prefix + name, "checkpoint shape " + shape_str(s->shape) +
                                                            " does not match model shape " + shape_str(p.shape()));
            }
            auto dst = p.mutable_data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s->values[i]);
        }
    }

    // Flat copy of the stored values for a tensor that must exist.
    std::vector<float> values_of(const std::string& name) const {
        const StoredTensor* s = find(name);
        if (!s) throw CheckpointMismatch(name, "tensor missing from checkpoint");
        return s->values;
    }
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::json meta;
    meta["format_version"] = kCheckpointVersion;
    meta["kind"] = ck.kind;
    meta["config"] = ck.config;
    meta["state"] = ck.state;
    meta["tensors"] = nlohmann::json::array();
    for (const auto& t : ck.tensors) {
        if (t.values.size() != numel_of(t.shape)) {
            throw ShapeError("tensor " + t.name + " holds " + std::to_string(t.values.size()) + " values for shape " +
                             shape_str(t.shape));
        }
        meta["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    }
    const std::string text = meta.dump();
    const auto len = static_cast<std::uint32_t>(text.size());
    std::string out(kCheckpointMagic, kMagicLength);
    char lenbuf[4];
    std::memcpy(lenbuf, &len, 4);
    out.append(lenbuf, 4);
    out += text;
    for (const auto& t : ck.tensors) {
        out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
    }
    return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
    auto fail = [&](const std::string& what) { return DataError(origin + ": " + what); };
    if (bytes.size() < kMagicLength + 4 || bytes.compare(0, kMagicLength, kCheckpointMagic) != 0) {
        throw fail("not an SKMAE1 checkpoint");
    }
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + kMagicLength, 4);
    const std::size_t meta_begin = kMagicLength + 4;
    if (bytes.size() < meta_begin + len) throw fail("truncated metadata block");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.substr(meta_begin, len));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("malformed metadata: ") + e.what());
    }
    Checkpoint ck;
    try {
        if (meta.at("format_version").get<int>() != kCheckpointVersion) throw fail("unsupported format_version");
        ck.kind = meta.at("kind").get<std::string>();
        ck.config = meta.at("config");
        ck.state = meta.at("state");
        std::size_t expected = 0;
        for (const auto& d : meta.at("tensors")) {
            StoredTensor t{d.at("name").get<std::string>(), d.at("shape").get<Shape>(), {}};
            expected += numel_of(t.shape);
            ck.tensors.push_back(std::move(t));
        }
        const std::size_t payload = bytes.size() - meta_begin - len;
        if (payload != expected * sizeof(float)) {
            throw fail("payload holds " + std::to_string(payload) + " bytes, descriptors need " +
                       std::to_string(expected * sizeof(float)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("malformed metadata: ") + e.what());
    }
    const char* cursor = bytes.data() + meta_begin + len;
    for (auto& t : ck.tensors) {
        t.values.resize(numel_of(t.shape));
        std::memcpy(t.values.data(), cursor, t.values.size() * sizeof(float));
        cursor += t.values.size() * sizeof(float);
        for (float v : t.values) {
            if (!std::isfinite(v)) throw NumericError(origin + ": non-finite value in tensor " + t.name);
        }
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open checkpoint for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string(), "checkpoint write failed");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open checkpoint");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes, path.string());
}

}  // namespace skmae
