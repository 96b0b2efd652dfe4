#include "checkpoint.hpp"

#include "errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gazediff {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream & os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

uint32_t read_u32(std::istream & is, const std::string & path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4)) {
        throw IntegrityError("truncated checkpoint file: " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32_le(std::ostream & os, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    write_u32(os, u);
}

float read_f32_le(std::istream & is, const std::string & path) {
    uint32_t u = read_u32(is, path);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

} // namespace

const std::string & Checkpoint::get(const std::string & key) const {
    auto it = config.find(key);
    if (it == config.end()) {
        throw FormatError("checkpoint config missing key: " + key);
    }
    return it->second;
}

int64_t Checkpoint::get_int(const std::string & key) const {
    return std::stoll(get(key));
}

double Checkpoint::get_double(const std::string & key) const {
    return std::stod(get(key));
}

void Checkpoint::set_int(const std::string & key, int64_t v) {
    config[key] = std::to_string(v);
}

void Checkpoint::set_double(const std::string & key, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    config[key] = os.str();
}

const Tensor * Checkpoint::tensor(const std::string & name) const {
    for (const auto & [nm, t] : tensors) {
        if (nm == name) {
            return &t;
        }
    }
    return nullptr;
}

void save_checkpoint(const std::string & path, const Checkpoint & ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open checkpoint for writing: " + path);
    }
    os.write(kMagic, 4);
    write_u32(os, kVersion);

    std::string cfg;
    for (const auto & [k, v] : ckpt.config) {
        cfg += k;
        cfg += '=';
        cfg += v;
        cfg += '\n';
    }
    write_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    write_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto & [name, t] : ckpt.tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) {
            write_u32(os, static_cast<uint32_t>(d));
        }
        for (double v : t.data) {
            write_f32_le(os, static_cast<float>(v));
        }
    }
    if (!os) {
        throw FormatError("failed writing checkpoint: " + path);
    }
}

Checkpoint load_checkpoint(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open checkpoint: " + path);
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("not an SDKP checkpoint: " + path);
    }
    uint32_t version = read_u32(is, path);
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    }

    Checkpoint ckpt;
    uint32_t cfg_len = read_u32(is, path);
    std::string cfg(cfg_len, '\0');
    if (!is.read(cfg.data(), cfg_len)) {
        throw IntegrityError("truncated checkpoint config: " + path);
    }
    std::istringstream cs(cfg);
    std::string line;
    while (std::getline(cs, line)) {
        if (line.empty()) {
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("malformed checkpoint config line '" + line + "': " + path);
        }
        ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
    }

    uint32_t count = read_u32(is, path);
    ckpt.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw IntegrityError("truncated tensor name in checkpoint: " + path);
        }
        uint32_t rank = read_u32(is, path);
        if (rank == 0 || rank > 8) {
            throw FormatError("bad tensor rank in checkpoint: " + path);
        }
        std::vector<int64_t> shape(rank);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int64_t>(read_u32(is, path));
            if (shape[d] <= 0) {
                throw FormatError("bad tensor dimension in checkpoint: " + path);
            }
            numel *= shape[d];
        }
        Tensor t = Tensor::zeros(shape);
        for (int64_t k = 0; k < numel; ++k) {
            t.data[static_cast<size_t>(k)] = static_cast<double>(read_f32_le(is, path));
        }
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

} // namespace gazediff
