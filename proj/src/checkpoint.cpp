#include "pfa/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace pfa {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

struct Reader {
    std::vector<char> bytes;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) {
            throw IoError(path + ": truncated checkpoint");
        }
    }
    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(bytes.data() + pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path);
    }
    Reader r;
    r.path = path;
    r.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

    r.need(4);
    if (std::memcmp(r.bytes.data(), kMagic, 4) != 0) {
        throw IoError(path + ": not a PFAC checkpoint (bad magic)");
    }
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) {
            throw IoError(path + ": implausible tensor rank for " + name);
        }
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32();
            if (dim == 0 || dim > (1u << 24)) {
                throw IoError(path + ": bad dimension for " + name);
            }
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        r.need(numel * 4);
        Tensor<float> values(shape);
        std::memcpy(values.data.data(), r.bytes.data() + r.pos, numel * 4);
        r.pos += numel * 4;
        tensors.emplace_back(std::move(name), std::move(values));
    }
    if (r.pos != r.bytes.size()) {
        throw IoError(path + ": trailing bytes after last tensor");
    }
    return tensors;
}

void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) {
            put_u32(buf, static_cast<std::uint32_t>(d));
        }
        for (float v : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(buf, bits);
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp + " for writing");
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) {
            throw IoError("short write to " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
    }
}

void save_checkpoint(const std::string& path, const ModelParams<float>& params) {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    for (const auto& [name, var] : params) {
        tensors.emplace_back(name, var->value);
    }
    write_checkpoint(path, tensors);
}

void load_checkpoint(const std::string& path, ModelParams<float>& params) {
    auto tensors = read_checkpoint(path);
    std::set<std::string> applied;
    for (auto& [name, value] : tensors) {
        if (!params.contains(name)) {
            throw Error("checkpoint/model mismatch: model has no parameter '" + name + "'");
        }
        const Var<float>& var = params.at(name);
        if (!same_shape(var->value.shape, value.shape)) {
            throw Error("checkpoint/model mismatch: '" + name + "' has shape " +
                        shape_str(value.shape) + ", model expects " + shape_str(var->value.shape));
        }
        applied.insert(name);
    }
    if (applied.size() != params.size()) {
        for (const auto& [name, var] : params) {
            if (!applied.count(name)) {
                throw Error("checkpoint/model mismatch: missing tensor '" + name + "'");
            }
        }
    }
    // validated: apply all at once so failures never leave partial state
    for (auto& [name, value] : tensors) {
        params.at(name)->value = std::move(value);
    }
}

}  // namespace pfa
