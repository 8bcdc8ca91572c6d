#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pseudoblur/nn.hpp"
#include "pseudoblur/optim.hpp"

namespace pseudoblur {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single-file archive: magic, version, stage_tag, seed, step, named scalar
// settings, then named sections of per-parameter records
// (name, dtype=float32 LE, rank, dims, payload).
struct Checkpoint {
    std::string stage_tag;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::map<std::string, double> scalars;
    std::vector<std::pair<std::string, ParamSet>> sections;

    void add_section(const std::string& name, ParamSet ps) {
        for (const auto& [n, _] : sections)
            if (n == name) throw CheckpointError("duplicate checkpoint section " + name);
        sections.emplace_back(name, std::move(ps));
    }

    bool has_section(const std::string& name) const {
        for (const auto& [n, _] : sections)
            if (n == name) return true;
        return false;
    }

    const ParamSet& section(const std::string& name) const {
        for (const auto& [n, ps] : sections)
            if (n == name) return ps;
        throw CheckpointError("checkpoint has no section '" + name + "'");
    }

    double scalar(const std::string& name, double fallback) const {
        auto it = scalars.find(name);
        return it == scalars.end() ? fallback : it->second;
    }
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'P', 'B', 'L', 'U', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError("truncated checkpoint");
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    auto len = read_pod<std::uint32_t>(in);
    if (len > (1u << 20)) throw CheckpointError("corrupt checkpoint string");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw CheckpointError("truncated checkpoint");
    return s;
}

inline void write_paramset(std::ostream& out, const ParamSet& ps) {
    write_string(out, ps.stage_tag());
    write_pod(out, static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& [name, t] = ps.entry(i);
        write_string(out, name);
        write_pod<std::uint8_t>(out, 0); // dtype 0 = float32 little-endian
        write_pod(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) write_pod(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
}

inline ParamSet read_paramset(std::istream& in) {
    ParamSet ps(read_string(in));
    auto count = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(in);
        auto dtype = read_pod<std::uint8_t>(in);
        if (dtype != 0) throw CheckpointError("unsupported dtype in checkpoint");
        auto rank = read_pod<std::uint32_t>(in);
        if (rank > 8) throw CheckpointError("corrupt checkpoint rank");
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(in));
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw CheckpointError("truncated checkpoint payload");
        ps.add(name, std::move(t));
    }
    return ps;
}

} // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
    ckpt_detail::write_pod(out, ckpt_detail::kVersion);
    ckpt_detail::write_string(out, ck.stage_tag);
    ckpt_detail::write_pod(out, ck.seed);
    ckpt_detail::write_pod(out, ck.step);
    ckpt_detail::write_pod(out, static_cast<std::uint32_t>(ck.scalars.size()));
    for (const auto& [name, value] : ck.scalars) {
        ckpt_detail::write_string(out, name);
        ckpt_detail::write_pod(out, value);
    }
    ckpt_detail::write_pod(out, static_cast<std::uint32_t>(ck.sections.size()));
    for (const auto& [name, ps] : ck.sections) {
        ckpt_detail::write_string(out, name);
        ckpt_detail::write_paramset(out, ps);
    }
    out.flush();
    if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    auto version = ckpt_detail::read_pod<std::uint32_t>(in);
    if (version != ckpt_detail::kVersion) throw CheckpointError("unsupported checkpoint version");
    Checkpoint ck;
    ck.stage_tag = ckpt_detail::read_string(in);
    ck.seed = ckpt_detail::read_pod<std::uint64_t>(in);
    ck.step = ckpt_detail::read_pod<std::uint64_t>(in);
    auto n_scalars = ckpt_detail::read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_scalars; ++i) {
        std::string name = ckpt_detail::read_string(in);
        ck.scalars[name] = ckpt_detail::read_pod<double>(in);
    }
    auto n_sections = ckpt_detail::read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_sections; ++i) {
        std::string name = ckpt_detail::read_string(in);
        ck.add_section(name, ckpt_detail::read_paramset(in));
    }
    return ck;
}

// Loads a section into an existing ParamSet slot, enforcing an exact
// name/shape inventory match (a discriminator checkpoint cannot be loaded
// into a generator slot, nor a toy-spec one into a full-spec slot).
inline void restore_params(const Checkpoint& ck, const std::string& section_name, ParamSet& dst) {
    const ParamSet& src = ck.section(section_name);
    if (!dst.same_inventory(src))
        throw CheckpointError("incompatible checkpoint: section '" + section_name +
                              "' does not match the target parameter inventory");
    dst = src;
}

inline void add_optimizer(Checkpoint& ck, const std::string& prefix, const OptimState& opt) {
    ck.scalars[prefix + ".kind"] = opt.kind == OptKind::Adam ? 1.0 : 0.0;
    ck.scalars[prefix + ".lr"] = opt.lr;
    ck.scalars[prefix + ".beta1"] = opt.beta1;
    ck.scalars[prefix + ".beta2"] = opt.beta2;
    ck.scalars[prefix + ".eps"] = opt.eps;
    ck.scalars[prefix + ".t"] = static_cast<double>(opt.buffers.t);
    if (opt.kind == OptKind::Adam && opt.buffers.m.size() > 0) {
        ck.add_section(prefix + ".m", opt.buffers.m);
        ck.add_section(prefix + ".v", opt.buffers.v);
    }
}

inline OptimState restore_optimizer(const Checkpoint& ck, const std::string& prefix) {
    OptimState opt;
    opt.kind = ck.scalar(prefix + ".kind", 1.0) > 0.5 ? OptKind::Adam : OptKind::Sgd;
    opt.lr = ck.scalar(prefix + ".lr", 1e-4);
    opt.beta1 = ck.scalar(prefix + ".beta1", 0.9);
    opt.beta2 = ck.scalar(prefix + ".beta2", 0.999);
    opt.eps = ck.scalar(prefix + ".eps", 1e-8);
    opt.buffers.t = static_cast<std::uint64_t>(ck.scalar(prefix + ".t", 0.0));
    if (ck.has_section(prefix + ".m")) {
        opt.buffers.m = ck.section(prefix + ".m");
        opt.buffers.v = ck.section(prefix + ".v");
    }
    return opt;
}

} // namespace pseudoblur
