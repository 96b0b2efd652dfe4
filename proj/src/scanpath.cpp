#include "scanpath.hpp"

#include "errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gazediff {

using ordered_json = nlohmann::ordered_json;

int64_t PaddedScanpath::valid_count() const {
    int64_t n = 0;
    for (double v : validity) {
        if (v > 0.5) {
            ++n;
        }
    }
    return n;
}

uint16_t SegmentationMap::label_at(double x_norm, double y_norm) const {
    int cx = static_cast<int>(std::floor(x_norm * width));
    int cy = static_cast<int>(std::floor(y_norm * height));
    cx = std::clamp(cx, 0, width - 1);
    cy = std::clamp(cy, 0, height - 1);
    return labels[static_cast<size_t>(cy) * static_cast<size_t>(width) + static_cast<size_t>(cx)];
}

Scanpath normalize(const std::vector<RawFixation> & raw, int width_px, int height_px) {
    if (raw.empty()) {
        throw EmptyScanpath("normalize: empty fixation list");
    }
    if (width_px <= 0 || height_px <= 0) {
        throw InvalidStimulus("normalize: nonpositive stimulus dimensions " +
                              std::to_string(width_px) + "x" + std::to_string(height_px));
    }
    Scanpath s;
    s.width_px = width_px;
    s.height_px = height_px;
    s.fixations.reserve(raw.size());
    for (const RawFixation & f : raw) {
        if (!(f.duration_s > 0.0)) {
            throw CorpusError("normalize: fixation duration must be positive, got " +
                              std::to_string(f.duration_s));
        }
        Fixation out;
        out.x = std::clamp(f.x_px / static_cast<double>(width_px), 0.0, 1.0);
        out.y = std::clamp(f.y_px / static_cast<double>(height_px), 0.0, 1.0);
        out.duration = f.duration_s;
        s.fixations.push_back(out);
    }
    return s;
}

PaddedScanpath pad_truncate(const Scanpath & s, int64_t max_len) {
    if (max_len < 1) {
        throw ConfigError("pad_truncate: max_len must be >= 1");
    }
    PaddedScanpath p;
    p.matrix = Tensor::zeros({max_len, 3});
    p.validity.assign(static_cast<size_t>(max_len), 0.0);
    const int64_t n = std::min<int64_t>(static_cast<int64_t>(s.fixations.size()), max_len);
    for (int64_t i = 0; i < n; ++i) {
        const Fixation & f = s.fixations[static_cast<size_t>(i)];
        p.matrix.at(i, 0) = f.x;
        p.matrix.at(i, 1) = f.y;
        p.matrix.at(i, 2) = f.duration;
        p.validity[static_cast<size_t>(i)] = 1.0;
    }
    return p;
}

Scanpath unpad(const PaddedScanpath & p) {
    Scanpath s;
    for (int64_t i = 0; i < p.max_len(); ++i) {
        if (p.validity[static_cast<size_t>(i)] <= 0.5) {
            break;
        }
        s.fixations.push_back({p.matrix.at(i, 0), p.matrix.at(i, 1), p.matrix.at(i, 2)});
    }
    return s;
}

int decode_length(const std::vector<double> & valid_probs, double threshold) {
    int n = 0;
    for (double p : valid_probs) {
        if (p > threshold) {
            ++n;
        } else {
            break;
        }
    }
    // A generated scanpath has at least one fixation; an empty one breaks
    // every downstream metric.
    return std::max(n, 1);
}

// ---------------------------------------------------------------------------
// corpus I/O

std::vector<Scanpath> load_corpus(const std::string & path) {
    std::ifstream is(path);
    if (!is) {
        throw CorpusError("cannot open corpus: " + path);
    }
    std::vector<Scanpath> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception & e) {
            throw CorpusError(path + ":" + std::to_string(line_no) + ": invalid JSON (" + e.what() +
                              ")");
        }
        try {
            const int w = j.at("width_px").get<int>();
            const int h = j.at("height_px").get<int>();
            std::vector<RawFixation> raw;
            for (const auto & f : j.at("fixations")) {
                if (!f.is_array() || f.size() != 3) {
                    throw CorpusError("fixation entries must be [x_px, y_px, dur_s]");
                }
                raw.push_back({f[0].get<double>(), f[1].get<double>(), f[2].get<double>()});
            }
            Scanpath s = normalize(raw, w, h);
            s.stimulus_id = j.at("stimulus_id").get<std::string>();
            s.task = j.at("task").get<std::string>();
            s.subject_id = j.at("subject_id").get<std::string>();
            out.push_back(std::move(s));
        } catch (const Error &) {
            throw;
        } catch (const std::exception & e) {
            throw CorpusError(path + ":" + std::to_string(line_no) + ": bad record (" + e.what() +
                              ")");
        }
    }
    return out;
}

void save_corpus(const std::string & path, const std::vector<Scanpath> & records) {
    std::ofstream os(path, std::ios::binary); // LF endings on every platform
    if (!os) {
        throw CorpusError("cannot open corpus for writing: " + path);
    }
    for (const Scanpath & s : records) {
        ordered_json j;
        j["stimulus_id"] = s.stimulus_id;
        j["task"] = s.task;
        j["subject_id"] = s.subject_id;
        ordered_json fx = ordered_json::array();
        for (const Fixation & f : s.fixations) {
            fx.push_back({f.x * s.width_px, f.y * s.height_px, f.duration});
        }
        j["fixations"] = std::move(fx);
        j["width_px"] = s.width_px;
        j["height_px"] = s.height_px;
        os << j.dump() << '\n';
    }
    if (!os) {
        throw CorpusError("failed writing corpus: " + path);
    }
}

// ---------------------------------------------------------------------------
// SDSG raster

namespace {

constexpr char kSegMagic[4] = {'S', 'D', 'S', 'G'};

uint32_t read_u32_le(std::istream & is, const std::string & path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4)) {
        throw IntegrityError("truncated segmentation file: " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream & os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

} // namespace

SegmentationMap load_segmentation(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw MissingSegmentation("cannot open segmentation map: " + path);
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kSegMagic, 4) != 0) {
        throw FormatError("not an SDSG segmentation file: " + path);
    }
    SegmentationMap map;
    map.width = static_cast<int>(read_u32_le(is, path));
    map.height = static_cast<int>(read_u32_le(is, path));
    if (map.width <= 0 || map.height <= 0) {
        throw FormatError("bad segmentation dimensions in " + path);
    }
    const size_t n = static_cast<size_t>(map.width) * static_cast<size_t>(map.height);
    map.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        unsigned char b[2];
        if (!is.read(reinterpret_cast<char *>(b), 2)) {
            throw IntegrityError("truncated segmentation payload: " + path);
        }
        map.labels[i] = static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    return map;
}

void save_segmentation(const std::string & path, const SegmentationMap & map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open segmentation file for writing: " + path);
    }
    os.write(kSegMagic, 4);
    write_u32_le(os, static_cast<uint32_t>(map.width));
    write_u32_le(os, static_cast<uint32_t>(map.height));
    for (uint16_t v : map.labels) {
        unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff)};
        os.write(reinterpret_cast<const char *>(b), 2);
    }
    if (!os) {
        throw FormatError("failed writing segmentation file: " + path);
    }
}

} // namespace gazediff
