#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelmdp/errors.hpp"
#include "panelmdp/nn.hpp"

namespace panelmdp::nn {

// Persistence for named double tensors: <stem>.json holds the manifest
// (names, shapes, byte offsets, format version, RNG seed, free-form extra
// section) and <stem>.bin holds the raw little-endian 64-bit float arrays.
// Round trips are bit-exact.
class TensorStore {
public:
    static constexpr int kFormatVersion = 1;

    void add(const std::string& name, std::vector<std::size_t> shape, Vec values);
    bool has(const std::string& name) const;
    const Vec& values(const std::string& name) const;
    const std::vector<std::size_t>& shape(const std::string& name) const;
    std::vector<std::string> names() const;  // insertion order

    void save(const std::string& stem) const;
    static TensorStore load(const std::string& stem);

    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();

private:
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        Vec values;
    };
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
};

}  // namespace panelmdp::nn

namespace panelmdp::util {

// Streaming SHA-256 of a byte string; used for the run manifest.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file_hex(const std::string& path);

}  // namespace panelmdp::util
