#pragma once

// Named rank-2 float tensor records shared by the checkpoint containers.

#include "reftok/nn.hpp"
#include "reftok/serialize.hpp"

namespace reftok {

inline void write_tensor(ByteWriter& w, const std::string& name, const MatF& m) {
    w.str(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
}

inline MatF read_tensor_payload(ByteReader& r) {
    std::uint32_t rank = r.u32();
    if (rank != 2) throw DataError("checkpoint tensor: expected rank 2");
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    MatF m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f32();
    return m;
}

// Write every parameter plus its Adam moments ("name", "name#m", "name#v").
inline void write_param_tensors(ByteWriter& w, ParamStore& ps) {
    auto all = ps.all();
    w.u32(static_cast<std::uint32_t>(all.size() * 3));
    for (const Param* p : all) {
        write_tensor(w, p->name, p->value);
        write_tensor(w, p->name + "#m", p->adam_m);
        write_tensor(w, p->name + "#v", p->adam_v);
    }
}

// Inverse of write_param_tensors; every record must match an existing
// parameter's name and shape.
inline void read_param_tensors(ByteReader& r, ParamStore& ps) {
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        MatF m = read_tensor_payload(r);
        std::string base = name;
        MatF Param::* field = &Param::value;
        if (name.size() > 2 && name.substr(name.size() - 2) == "#m") {
            base = name.substr(0, name.size() - 2);
            field = &Param::adam_m;
        } else if (name.size() > 2 && name.substr(name.size() - 2) == "#v") {
            base = name.substr(0, name.size() - 2);
            field = &Param::adam_v;
        }
        if (!ps.contains(base)) throw DataError("checkpoint: unknown tensor " + name);
        Param& p = ps.at(base);
        if (p.value.rows() != m.rows() || p.value.cols() != m.cols())
            throw DataError("checkpoint: shape mismatch for " + name);
        p.*field = std::move(m);
    }
}

}  // namespace reftok
