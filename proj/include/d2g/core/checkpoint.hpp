#ifndef D2G_CORE_CHECKPOINT_HPP
#define D2G_CORE_CHECKPOINT_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "d2g/core/digest.hpp"
#include "d2g/core/errors.hpp"
#include "d2g/core/nn.hpp"

namespace d2g {

using json = nlohmann::json;

// Common checkpoint container: 8-byte magic, u32 meta length, JSON meta
// (module fields + ordered tensor manifest + payload hash), then the flat
// little-endian float32 payload in manifest order.
//
// Magics: D2G-TCH1 teacher, D2G-CDC1 codec, D2G-PCP1 perceptual,
//         D2G-DSC1 discriminator, D2G-GEN1 generator.

struct Checkpoint {
    std::string magic;
    json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
    Digest payload_hash{};

    const Tensor& find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw std::invalid_argument("checkpoint: no tensor named " + name);
    }
};

namespace detail {

inline void append_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.insert(out.end(), reinterpret_cast<uint8_t*>(&v), reinterpret_cast<uint8_t*>(&v) + 4);
}

}  // namespace detail

inline Digest checkpoint_payload_hash(const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::vector<uint8_t> payload;
    for (const auto& [name, t] : tensors) {
        auto f = t.to_f32();
        const uint8_t* p = reinterpret_cast<const uint8_t*>(f.data());
        payload.insert(payload.end(), p, p + f.size() * sizeof(float));
    }
    return sha256(payload);
}

inline Digest save_checkpoint(const std::filesystem::path& path, const std::string& magic,
                              json meta,
                              const std::vector<std::pair<std::string, Tensor>>& tensors) {
    if (magic.size() != 8) throw std::invalid_argument("checkpoint magic must be 8 bytes");

    std::vector<uint8_t> payload;
    json manifest = json::array();
    for (const auto& [name, t] : tensors) {
        manifest.push_back({{"name", name}, {"dims", {t.n(), t.c(), t.h(), t.w()}}});
        auto f = t.to_f32();
        const uint8_t* p = reinterpret_cast<const uint8_t*>(f.data());
        payload.insert(payload.end(), p, p + f.size() * sizeof(float));
    }
    Digest h = sha256(payload);
    meta["manifest"] = manifest;
    meta["weights_hash"] = hex(h);
    std::string meta_s = meta.dump();

    std::vector<uint8_t> blob;
    blob.insert(blob.end(), magic.begin(), magic.end());
    detail::append_u32(blob, static_cast<uint32_t>(meta_s.size()));
    blob.insert(blob.end(), meta_s.begin(), meta_s.end());
    blob.insert(blob.end(), payload.begin(), payload.end());

    // write-temp-then-rename so partially written checkpoints never appear
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    }
    std::filesystem::rename(tmp, path);
    return h;
}

inline Digest save_checkpoint(const std::filesystem::path& path, const std::string& magic,
                              json meta, const ParamStore& ps) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [name, v] : ps.items()) tensors.emplace_back(name, v->val);
    return save_checkpoint(path, magic, std::move(meta), tensors);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::string& expect_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DependencyError("missing checkpoint", path.string());
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    if (blob.size() < 12) throw CorruptShardError("checkpoint truncated: " + path.string());

    Checkpoint ck;
    ck.magic.assign(blob.begin(), blob.begin() + 8);
    if (ck.magic != expect_magic) {
        throw std::invalid_argument("bad magic in " + path.string() + ": got '" + ck.magic +
                                    "', want '" + expect_magic + "'");
    }
    uint32_t meta_len;
    std::memcpy(&meta_len, blob.data() + 8, 4);
    if (blob.size() < 12 + static_cast<size_t>(meta_len)) {
        throw CorruptShardError("checkpoint meta truncated: " + path.string());
    }
    ck.meta = json::parse(blob.begin() + 12, blob.begin() + 12 + meta_len);

    size_t off = 12 + meta_len;
    for (const auto& entry : ck.meta.at("manifest")) {
        auto dims = entry.at("dims");
        Tensor t(dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>(), dims[3].get<int>());
        size_t bytes = t.size() * sizeof(float);
        if (off + bytes > blob.size()) {
            throw CorruptShardError("checkpoint payload truncated: " + path.string());
        }
        t.from_f32(reinterpret_cast<const float*>(blob.data() + off));
        off += bytes;
        ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    if (off != blob.size()) throw CorruptShardError("checkpoint trailing bytes: " + path.string());

    ck.payload_hash = sha256(blob.data() + 12 + meta_len, blob.size() - 12 - meta_len);
    if (ck.meta.contains("weights_hash") &&
        ck.meta["weights_hash"].get<std::string>() != hex(ck.payload_hash)) {
        throw CorruptShardError("checkpoint hash mismatch: " + path.string());
    }
    return ck;
}

// load tensors into an already-constructed ParamStore (names must match 1:1)
inline void load_into(const Checkpoint& ck, ParamStore& ps) {
    if (ck.tensors.size() != ps.size()) {
        throw std::invalid_argument("checkpoint/param count mismatch");
    }
    for (size_t i = 0; i < ps.size(); ++i) {
        auto& [name, v] = ps.items()[i];
        if (ck.tensors[i].first != name) {
            throw std::invalid_argument("checkpoint order mismatch at " + name);
        }
        if (!ck.tensors[i].second.same_shape(v->val)) {
            throw std::invalid_argument("checkpoint shape mismatch at " + name);
        }
        v->val = ck.tensors[i].second;
    }
}

}  // namespace d2g

#endif
