#include "t2m/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace t2m {

namespace {

constexpr char kMagic[8] = {'T', '2', 'M', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint truncated");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const uint32_t n = read_pod<uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("checkpoint truncated");
    return s;
}

}  // namespace

Checkpoint Checkpoint::from_store(const nn::ParamStore& store, std::string meta_json) {
    Checkpoint c;
    c.meta_json = std::move(meta_json);
    for (const ad::Tensor& t : store.all()) c.entries[t->name] = {t->shape, t->values};
    return c;
}

void Checkpoint::load_into(nn::ParamStore& store) const {
    // Validate everything before mutating.
    std::vector<std::pair<ad::Tensor, const std::vector<double>*>> plan;
    for (const ad::Tensor& t : store.all()) {
        const auto it = entries.find(t->name);
        if (it == entries.end())
            throw std::runtime_error("checkpoint missing entry: " + t->name);
        if (it->second.first != t->shape)
            throw std::runtime_error("checkpoint shape mismatch for " + t->name + ": stored " +
                                     ad::shape_str(it->second.first) + " vs model " +
                                     ad::shape_str(t->shape));
        plan.emplace_back(t, &it->second.second);
    }
    for (auto& [t, values] : plan) t->values = *values;
}

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_pod<uint32_t>(out, 1);  // version
    write_string(out, ckpt.meta_json);
    write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.entries.size()));
    for (const auto& [name, entry] : ckpt.entries) {
        write_string(out, name);
        write_pod<uint32_t>(out, static_cast<uint32_t>(entry.first.size()));
        for (int64_t d : entry.first) write_pod<int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(entry.second.data()),
                  static_cast<std::streamsize>(entry.second.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != 1)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    Checkpoint c;
    c.meta_json = read_string(in);
    const uint32_t count = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = read_string(in);
        const uint32_t ndim = read_pod<uint32_t>(in);
        ad::Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int64_t>(in);
        std::vector<double> values(static_cast<size_t>(ad::numel(shape)));
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint truncated: " + path);
        c.entries[name] = {std::move(shape), std::move(values)};
    }
    return c;
}

}  // namespace t2m
