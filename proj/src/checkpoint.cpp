#include "dr/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dr/common.hpp"

namespace dr {

uint32_t crc32_bytes(const void* data, size_t len) {
    static uint32_t table[256];
    static bool built = false;
    if (!built) {
        for (uint32_t i = 0; i < 256; i++) {
            uint32_t c = i;
            for (int k = 0; k < 8; k++)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        built = true;
    }
    uint32_t c = 0xFFFFFFFFu;
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; i++)
        c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw io_error("cannot open: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

namespace {

constexpr char kMagic[4] = {'D', 'R', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

struct reader {
    const std::string& bytes;
    size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size())
            throw io_error("checkpoint: truncated file");
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_str(size_t n) {
        if (pos + n > bytes.size())
            throw io_error("checkpoint: truncated name");
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

// architecture descriptor packed into a synthetic tensor
std::vector<float> arch_vector(const model_config& c) {
    std::vector<float> v = {
        1.0f,  // schema
        (float)c.in_channels, (float)c.image_size, (float)c.c1, (float)c.c2, (float)c.c3,
        (float)c.txt_dim, (float)c.attn_dim, (float)c.heads, (float)c.time_dim,
        (float)c.time_hidden, (float)c.vocab_size, (float)c.max_prompt_len, (float)c.gn_groups,
        (float)c.t_train, (float)c.ad_c1, (float)c.ad_c2, (float)c.ad_c3,
        c.adapter_time_cond ? 1.0f : 0.0f, (float)c.adapters.size()};
    for (auto k : c.adapters)
        v.push_back((float)(int)k);
    return v;
}

model_config arch_from_vector(const std::vector<float>& v) {
    if (v.size() < 20 || v[0] != 1.0f)
        throw io_error("checkpoint: unsupported architecture descriptor");
    model_config c;
    c.in_channels = (int)v[1];
    c.image_size = (int)v[2];
    c.c1 = (int)v[3];
    c.c2 = (int)v[4];
    c.c3 = (int)v[5];
    c.txt_dim = (int)v[6];
    c.attn_dim = (int)v[7];
    c.heads = (int)v[8];
    c.time_dim = (int)v[9];
    c.time_hidden = (int)v[10];
    c.vocab_size = (int)v[11];
    c.max_prompt_len = (int)v[12];
    c.gn_groups = (int)v[13];
    c.t_train = (int)v[14];
    c.ad_c1 = (int)v[15];
    c.ad_c2 = (int)v[16];
    c.ad_c3 = (int)v[17];
    c.adapter_time_cond = v[18] != 0.0f;
    size_t n = (size_t)v[19];
    if (v.size() != 20 + n)
        throw io_error("checkpoint: bad adapter list length");
    c.adapters.clear();
    for (size_t i = 0; i < n; i++)
        c.adapters.push_back((adapter_kind)(int)v[20 + i]);
    return c;
}

}  // namespace

void checkpoint_save(const denoiser& den, const std::string& path) {
    // directory entries: meta first, then every parameter tensor in store order
    std::vector<std::pair<std::string, const std::vector<float>*>> entries;
    std::vector<std::vector<int>> dims;
    auto meta = arch_vector(den.cfg);
    entries.push_back({"meta.arch", &meta});
    dims.push_back({(int)meta.size()});
    for (size_t i = 0; i < den.P.names.size(); i++) {
        entries.push_back({den.P.names[i], &den.P.values[i].data});
        dims.push_back(den.P.values[i].dims);
    }

    // directory size precomputation for absolute offsets
    size_t dir_size = 4 + 4 + 4;
    for (size_t i = 0; i < entries.size(); i++)
        dir_size += 2 + entries[i].first.size() + 1 + 4 * dims[i].size() + 1 + 8;

    std::string out;
    out.append(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, (uint32_t)entries.size());
    uint64_t offset = dir_size;
    for (size_t i = 0; i < entries.size(); i++) {
        put<uint16_t>(out, (uint16_t)entries[i].first.size());
        out.append(entries[i].first);
        put<uint8_t>(out, (uint8_t)dims[i].size());
        for (int d : dims[i])
            put<uint32_t>(out, (uint32_t)d);
        put<uint8_t>(out, 0);  // f32
        put<uint64_t>(out, offset);
        offset += entries[i].second->size() * sizeof(float);
    }
    if (out.size() != dir_size)
        throw io_error("checkpoint: directory layout error");
    std::string payload;
    for (auto& e : entries)
        payload.append((const char*)e.second->data(), e.second->size() * sizeof(float));
    out += payload;
    put<uint32_t>(out, crc32_bytes(payload.data(), payload.size()));

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw io_error("cannot open for writing: " + tmp);
        f.write(out.data(), (std::streamsize)out.size());
        if (!f)
            throw io_error("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw io_error("rename failed: " + path);
}

denoiser checkpoint_load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw io_error("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    reader r{bytes};

    char magic[4];
    for (auto& m : magic)
        m = r.get<char>();
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw io_error("checkpoint: bad magic");
    if (r.get<uint32_t>() != kVersion)
        throw io_error("checkpoint: unsupported version");
    uint32_t count = r.get<uint32_t>();
    if (count == 0 || count > 100000)
        throw io_error("checkpoint: implausible tensor count");

    struct entry {
        std::string name;
        std::vector<int> dims;
        uint64_t offset;
        int64_t elems;
    };
    std::vector<entry> dir;
    for (uint32_t i = 0; i < count; i++) {
        entry e;
        uint16_t nl = r.get<uint16_t>();
        e.name = r.get_str(nl);
        uint8_t rank = r.get<uint8_t>();
        if (rank < 1 || rank > 4)
            throw io_error("checkpoint: bad tensor rank for " + e.name);
        e.elems = 1;
        for (int d = 0; d < rank; d++) {
            uint32_t ext = r.get<uint32_t>();
            if (ext == 0 || ext > (1u << 24))
                throw io_error("checkpoint: bad extent for " + e.name);
            e.dims.push_back((int)ext);
            e.elems *= ext;
        }
        if (r.get<uint8_t>() != 0)
            throw io_error("checkpoint: unsupported dtype for " + e.name);
        e.offset = r.get<uint64_t>();
        dir.push_back(std::move(e));
    }

    // offsets must match the directory arithmetic exactly
    uint64_t expect = r.pos;
    for (auto& e : dir) {
        if (e.offset != expect)
            throw io_error("checkpoint: offset mismatch for " + e.name);
        expect += (uint64_t)e.elems * sizeof(float);
    }
    if (bytes.size() != expect + 4)
        throw io_error("checkpoint: file size mismatch");
    uint32_t crc_stored;
    std::memcpy(&crc_stored, bytes.data() + expect, 4);
    if (crc32_bytes(bytes.data() + r.pos, expect - r.pos) != crc_stored)
        throw io_error("checkpoint: payload checksum mismatch");

    if (dir.empty() || dir[0].name != "meta.arch")
        throw io_error("checkpoint: missing architecture descriptor");
    std::vector<float> meta(dir[0].elems);
    std::memcpy(meta.data(), bytes.data() + dir[0].offset, dir[0].elems * sizeof(float));
    model_config cfg = arch_from_vector(meta);

    denoiser den = denoiser::skeleton(cfg);
    if (dir.size() != den.P.names.size() + 1)
        throw io_error("checkpoint: tensor count does not match architecture");
    for (size_t i = 0; i < den.P.names.size(); i++) {
        const entry& e = dir[i + 1];
        if (e.name != den.P.names[i])
            throw io_error("checkpoint: unexpected tensor " + e.name);
        if (e.dims != den.P.values[i].dims)
            throw io_error("checkpoint: shape mismatch for " + e.name);
        std::memcpy(den.P.values[i].data.data(), bytes.data() + e.offset,
                    (size_t)e.elems * sizeof(float));
    }
    if (!den.P.all_finite())
        throw io_error("checkpoint: non-finite parameter values");
    return den;
}

}  // namespace dr
