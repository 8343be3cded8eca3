#include "panelmdp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need byte swaps");

namespace panelmdp::nn {

void TensorStore::add(const std::string& name, std::vector<std::size_t> shape,
                      Vec values) {
    std::size_t expected = 1;
    for (std::size_t d : shape) expected *= d;
    if (expected != values.size()) {
        throw ContractError("tensor " + name + ": shape does not match value count");
    }
    if (has(name)) {
        throw ContractError("tensor " + name + " already in store");
    }
    entries_.push_back(Entry{name, std::move(shape), std::move(values)});
}

bool TensorStore::has(const std::string& name) const {
    for (const Entry& e : entries_) {
        if (e.name == name) return true;
    }
    return false;
}

const TensorStore::Entry& TensorStore::find(const std::string& name) const {
    for (const Entry& e : entries_) {
        if (e.name == name) return e;
    }
    throw DataError("tensor not in store: " + name);
}

const Vec& TensorStore::values(const std::string& name) const {
    return find(name).values;
}

const std::vector<std::size_t>& TensorStore::shape(const std::string& name) const {
    return find(name).shape;
}

std::vector<std::string> TensorStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.name);
    return out;
}

void TensorStore::save(const std::string& stem) const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["seed"] = seed;
    manifest["extra"] = extra;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    std::string blob;
    for (const Entry& e : entries_) {
        nlohmann::json t;
        t["name"] = e.name;
        t["shape"] = e.shape;
        t["offset"] = offset;
        t["count"] = e.values.size();
        tensors.push_back(t);
        const std::size_t bytes = e.values.size() * sizeof(double);
        const std::size_t start = blob.size();
        blob.resize(start + bytes);
        std::memcpy(blob.data() + start, e.values.data(), bytes);
        offset += bytes;
    }
    manifest["tensors"] = tensors;

    std::ofstream jf(stem + ".json", std::ios::binary | std::ios::trunc);
    if (!jf) throw DataError("cannot write " + stem + ".json");
    jf << manifest.dump(2) << '\n';
    jf.close();

    std::ofstream bf(stem + ".bin", std::ios::binary | std::ios::trunc);
    if (!bf) throw DataError("cannot write " + stem + ".bin");
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    bf.close();
}

TensorStore TensorStore::load(const std::string& stem) {
    std::ifstream jf(stem + ".json", std::ios::binary);
    if (!jf) throw DataError("cannot read " + stem + ".json");
    nlohmann::json manifest = nlohmann::json::parse(jf, nullptr, false);
    if (manifest.is_discarded()) {
        throw DataError(stem + ".json: invalid JSON");
    }
    if (manifest.value("format_version", -1) != kFormatVersion) {
        throw DataError(stem + ".json: unsupported format version");
    }

    std::ifstream bf(stem + ".bin", std::ios::binary);
    if (!bf) throw DataError("cannot read " + stem + ".bin");
    std::ostringstream blob_stream;
    blob_stream << bf.rdbuf();
    const std::string blob = blob_stream.str();

    TensorStore store;
    store.seed = manifest.value("seed", std::uint64_t{0});
    store.extra = manifest.value("extra", nlohmann::json::object());
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const auto offset = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (offset + count * sizeof(double) > blob.size()) {
            throw DataError(stem + ".bin: truncated blob for tensor " + name);
        }
        Vec values(count);
        std::memcpy(values.data(), blob.data() + offset, count * sizeof(double));
        store.add(name, shape, std::move(values));
    }
    return store;
}

}  // namespace panelmdp::nn
