#include "features.hpp"

#include "errors.hpp"
#include "rng.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace gazediff {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'F', 'T'};
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
        throw FormatError("truncated feature file header: " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

} // namespace

void save_feature_file(const std::string & path, const Tensor & t) {
    if (t.rank() < 1 || t.rank() > 3) {
        throw ShapeError("feature files hold rank 1..3 tensors, got rank " +
                         std::to_string(t.rank()));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open feature file for writing: " + path);
    }
    std::string payload(t.data.size() * 4, '\0');
    for (size_t i = 0; i < t.data.size(); ++i) {
        float f = static_cast<float>(t.data[i]);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        payload[4 * i + 0] = static_cast<char>(u & 0xff);
        payload[4 * i + 1] = static_cast<char>((u >> 8) & 0xff);
        payload[4 * i + 2] = static_cast<char>((u >> 16) & 0xff);
        payload[4 * i + 3] = static_cast<char>((u >> 24) & 0xff);
    }
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef *>(payload.data()), static_cast<uInt>(payload.size())));

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    unsigned char rank = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char *>(&rank), 1);
    for (int64_t d : t.shape) {
        write_u32(os, static_cast<uint32_t>(d));
    }
    write_u32(os, crc);
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) {
        throw FormatError("failed writing feature file: " + path);
    }
}

Tensor load_feature_file(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw MissingFeature("cannot open feature file: " + path);
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("not an SDFT feature file: " + path);
    }
    uint32_t version = read_u32(is, path);
    if (version != kVersion) {
        throw FormatError("unsupported feature file version: " + path);
    }
    unsigned char rank = 0;
    if (!is.read(reinterpret_cast<char *>(&rank), 1) || rank < 1 || rank > 3) {
        throw FormatError("bad rank in feature file: " + path);
    }
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (unsigned d = 0; d < rank; ++d) {
        shape[d] = static_cast<int64_t>(read_u32(is, path));
        if (shape[d] <= 0) {
            throw FormatError("bad dimension in feature file: " + path);
        }
        numel *= shape[d];
    }
    uint32_t want_crc = read_u32(is, path);

    std::string payload(static_cast<size_t>(numel) * 4, '\0');
    if (!is.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
        throw IntegrityError("truncated feature payload: " + path);
    }
    uint32_t got_crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef *>(payload.data()), static_cast<uInt>(payload.size())));
    if (got_crc != want_crc) {
        throw IntegrityError("feature payload checksum mismatch: " + path);
    }

    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < numel; ++i) {
        uint32_t u = static_cast<uint8_t>(payload[4 * i + 0]) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(payload[4 * i + 1])) << 8) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(payload[4 * i + 2])) << 16) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(payload[4 * i + 3])) << 24);
        float f;
        std::memcpy(&f, &u, 4);
        t.data[static_cast<size_t>(i)] = static_cast<double>(f);
    }
    return t;
}

VisualFeatureMap load_visual_features(const std::string & path) {
    Tensor t = load_feature_file(path);
    if (t.rank() != 3) {
        throw IntegrityError("visual feature file must be rank 3 (h, w, d_v): " + path);
    }
    VisualFeatureMap m;
    m.h = static_cast<int>(t.shape[0]);
    m.w = static_cast<int>(t.shape[1]);
    m.dim = static_cast<int>(t.shape[2]);
    m.grid = std::move(t);
    return m;
}

TaskFeature load_task_features(const std::string & path) {
    Tensor t = load_feature_file(path);
    if (t.rank() != 1) {
        throw IntegrityError("task feature file must be rank 1 (d_t): " + path);
    }
    return TaskFeature{std::move(t)};
}

// ---------------------------------------------------------------------------

namespace {

// Nearest-neighbor resize of a grayscale image tensor {h, w}.
Tensor resize_nearest(const Tensor & image, int64_t nh, int64_t nw) {
    Tensor out = Tensor::zeros({nh, nw});
    const int64_t h = image.shape[0];
    const int64_t w = image.shape[1];
    for (int64_t r = 0; r < nh; ++r) {
        int64_t sr = std::min<int64_t>(h - 1, (r * h) / nh);
        for (int64_t c = 0; c < nw; ++c) {
            int64_t sc = std::min<int64_t>(w - 1, (c * w) / nw);
            out.at(r, c) = image.at(sr, sc);
        }
    }
    return out;
}

} // namespace

VisualFeatureMap toy_encode(const Tensor & image, int patch, int d_v, uint64_t seed) {
    if (image.rank() != 2) {
        throw ShapeError("toy_encode expects a grayscale {h, w} image");
    }
    if (patch < 1 || d_v < 1) {
        throw ConfigError("toy_encode: patch and d_v must be >= 1");
    }
    Tensor img = image;
    int64_t h = img.shape[0];
    int64_t w = img.shape[1];
    if (h < patch || w < patch) {
        throw ShapeError("toy_encode: image smaller than one patch");
    }
    if (h % patch != 0 || w % patch != 0) {
        img = resize_nearest(img, (h / patch) * patch, (w / patch) * patch);
        h = img.shape[0];
        w = img.shape[1];
    }
    const int gh = static_cast<int>(h / patch);
    const int gw = static_cast<int>(w / patch);
    const int64_t pd = static_cast<int64_t>(patch) * patch;

    // Fixed random projection; one matrix per (seed, patch, d_v).
    Rng rng(seed, rng_stream::kInit);
    Tensor proj = Tensor::zeros({pd, d_v});
    const double inv = 1.0 / std::sqrt(static_cast<double>(pd));
    for (double & v : proj.data) {
        v = rng.next_gaussian() * inv;
    }

    VisualFeatureMap m;
    m.h = gh;
    m.w = gw;
    m.dim = d_v;
    m.grid = Tensor::zeros({gh, gw, d_v});
    Tensor flat = Tensor::zeros({1, pd});
    for (int gr = 0; gr < gh; ++gr) {
        for (int gc = 0; gc < gw; ++gc) {
            int64_t k = 0;
            for (int pr = 0; pr < patch; ++pr) {
                for (int pc = 0; pc < patch; ++pc) {
                    flat.data[static_cast<size_t>(k++)] =
                        img.at(static_cast<int64_t>(gr) * patch + pr,
                               static_cast<int64_t>(gc) * patch + pc);
                }
            }
            Tensor cell = matmul(flat, proj); // 1 x d_v
            for (int64_t d = 0; d < d_v; ++d) {
                m.grid.data[(static_cast<size_t>(gr) * gw + gc) * d_v + static_cast<size_t>(d)] =
                    cell.data[static_cast<size_t>(d)];
            }
        }
    }
    return m;
}

TaskFeature derive_task_feature(const std::string & task, int d_t, uint64_t task_seed) {
    if (d_t < 1) {
        throw ConfigError("derive_task_feature: d_t must be >= 1");
    }
    // FNV-1a over the task text keys the stream; the empty string (free
    // viewing) gets a vector like any other task.
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : task) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    Rng rng(task_seed, h);
    TaskFeature f;
    f.vec = Tensor::zeros({d_t});
    for (double & v : f.vec.data) {
        v = rng.next_gaussian();
    }
    return f;
}

// ---------------------------------------------------------------------------

FeatureSource::FeatureSource(std::string dir, int d_t, uint64_t task_seed)
    : dir_(std::move(dir)), d_t_(d_t), task_seed_(task_seed) {}

const VisualFeatureMap & FeatureSource::visual(const std::string & stimulus_id) {
    auto it = visual_cache_.find(stimulus_id);
    if (it != visual_cache_.end()) {
        return it->second;
    }
    std::filesystem::path p = std::filesystem::path(dir_) / (stimulus_id + ".sdft");
    if (!std::filesystem::exists(p)) {
        throw MissingFeature("no feature file for stimulus '" + stimulus_id + "' (expected " +
                             p.string() + ")");
    }
    return visual_cache_.emplace(stimulus_id, load_visual_features(p.string())).first->second;
}

const TaskFeature & FeatureSource::task(const std::string & task_string) {
    auto it = task_cache_.find(task_string);
    if (it != task_cache_.end()) {
        return it->second;
    }
    std::filesystem::path p = std::filesystem::path(dir_) / (task_string + ".sdft");
    TaskFeature f;
    if (!task_string.empty() && std::filesystem::exists(p)) {
        f = load_task_features(p.string());
        if (f.dim() != d_t_) {
            throw IntegrityError("task feature file width " + std::to_string(f.dim()) +
                                 " does not match configured d_t " + std::to_string(d_t_) + ": " +
                                 p.string());
        }
    } else {
        f = derive_task_feature(task_string, d_t_, task_seed_);
    }
    return task_cache_.emplace(task_string, std::move(f)).first->second;
}

} // namespace gazediff
