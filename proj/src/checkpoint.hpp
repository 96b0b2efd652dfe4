#pragma once

#include "tensor.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace gazediff {

// SDKP checkpoint: "SDKP" magic, u32 version, length-prefixed ASCII
// "key=value\n" config block, then a length-prefixed tensor table of
// (name, shape, little-endian f32 payload). All integers little-endian.
struct Checkpoint {
    std::map<std::string, std::string> config; // ordered; serialized sorted by key
    std::vector<std::pair<std::string, Tensor>> tensors;

    bool has(const std::string & key) const { return config.count(key) != 0; }
    const std::string & get(const std::string & key) const;
    int64_t get_int(const std::string & key) const;
    double get_double(const std::string & key) const;
    void set_int(const std::string & key, int64_t v);
    void set_double(const std::string & key, double v);

    const Tensor * tensor(const std::string & name) const;
};

void save_checkpoint(const std::string & path, const Checkpoint & ckpt);
Checkpoint load_checkpoint(const std::string & path);

} // namespace gazediff
