#include "sas/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "sas/config_file.hpp"

namespace sas {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'S', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_i32(std::string& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

// Floats cross the file boundary as little-endian u32 bit patterns, so round
// trips are bit-exact regardless of host byte order.
void put_floats(std::string& out, std::span<const float> src) {
    for (float f : src) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

void get_floats(Reader& r, std::span<float> dst) {
    for (float& f : dst) {
        const std::uint32_t bits = r.u32();
        std::memcpy(&f, &bits, 4);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text, ModelParams<float>& params) {
    std::string header;
    header.append(kMagic, sizeof(kMagic));
    put_u64(header, config_text.size());
    header += config_text;

    std::vector<std::pair<std::string, TensorF*>> arrays;
    params.for_each([&](const char* name, TensorF& t) { arrays.emplace_back(name, &t); });

    put_u32(header, static_cast<std::uint32_t>(arrays.size()));
    std::string payload;
    for (auto& [name, t] : arrays) {
        put_u32(header, static_cast<std::uint32_t>(name.size()));
        header += name;
        put_u32(header, static_cast<std::uint32_t>(t->ndim()));
        for (int d : t->shape()) put_i32(header, d);
        put_u64(header, payload.size());
        put_floats(payload, t->data());
    }
    put_u64(header, payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);

    LoadedCheckpoint out;
    out.config_text = r.bytes(r.u64());

    KvMap kv;
    std::size_t line_start = 0;
    while (line_start < out.config_text.size()) {
        std::size_t nl = out.config_text.find('\n', line_start);
        if (nl == std::string::npos) nl = out.config_text.size();
        const std::string line = out.config_text.substr(line_start, nl - line_start);
        const std::size_t eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
        line_start = nl + 1;
    }
    out.config = model_config_from_kv(kv);
    out.params = make_model_params<float>(out.config);

    struct Entry {
        std::vector<int> shape;
        std::uint64_t offset;
    };
    std::map<std::string, Entry> manifest;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        const std::uint32_t ndim = r.u32();
        Entry e;
        for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<std::int32_t>(r.u32()));
        e.offset = r.u64();
        manifest[name] = std::move(e);
    }
    const std::uint64_t payload_len = r.u64();
    const std::size_t payload_start = r.pos;
    if (payload_start + payload_len > buf.size()) throw std::runtime_error("checkpoint truncated: " + path);

    out.params.for_each([&](const char* cname, TensorF& t) {
        auto it = manifest.find(cname);
        if (it == manifest.end()) throw std::runtime_error("checkpoint missing array: " + std::string(cname));
        if (it->second.shape != t.shape())
            throw std::runtime_error("checkpoint array " + std::string(cname) + " has shape " +
                                     shape_str(it->second.shape) + ", expected " + shape_str(t.shape()));
        Reader pr{buf};
        pr.pos = payload_start + it->second.offset;
        get_floats(pr, t.data());
    });
    out.params.set_requires_grad(true);
    return out;
}

}  // namespace sas
