#include "reftok/stream.hpp"

#include <cstdio>

#include "reftok/serialize.hpp"

namespace reftok {

VideoClip TokenStream::reference_clip() const {
    return clip_from_u8(reference.data(), n_ref_frames, height, width, 3);
}

void TokenStream::validate() const {
    if (n_ref_frames < 1 || n_ref_frames > 255 || height < 1 || width < 1)
        throw DataError("token stream: bad reference dimensions");
    if (grid.tau < 1 || grid.eta < 1 || grid.omega < 1)
        throw DataError("token stream: bad token grid");
    if (codebook_size < 1) throw DataError("token stream: bad codebook size");
    if (patch.t < 1 || patch.h < 1 || patch.w < 1)
        throw DataError("token stream: bad patch spec");
    const std::size_t want_ref =
        static_cast<std::size_t>(n_ref_frames) * height * width * 3;
    if (reference.size() != want_ref)
        throw DataError("token stream: reference payload size mismatch");
    if (static_cast<int>(indices.size()) != grid.sites())
        throw DataError("token stream: index count does not match the token grid");
    for (int idx : indices)
        if (idx < 0 || idx >= codebook_size)
            throw DataError("token stream: index outside the codebook");
}

TokenStream encode_to_stream(const TokenizerModel& model, const VideoClip& clip) {
    TokenizerModel::EncodedClip enc = model.encode_clip(clip);
    TokenStream s;
    s.n_ref_frames = enc.raw_reference.t;
    s.grid = enc.tgt_grid;
    s.codebook_size = model.book.K();
    s.patch = model.cfg.patch;
    s.height = enc.raw_reference.h;
    s.width = enc.raw_reference.w;
    s.reference = clip_to_u8(enc.raw_reference);
    s.indices = enc.indices;
    s.validate();
    return s;
}

VideoClip decode_stream(const TokenizerModel& model, const TokenStream& s,
                        const VideoClip* reference_override) {
    s.validate();
    if (model.cfg.reference_less)
        throw ConfigError("token streams require the one-way reference mode; this model is reference_less");
    if (model.book.K() < s.codebook_size)
        throw DataError("checkpoint codebook is smaller than the stream's codebook");
    if (!(model.cfg.patch == s.patch))
        throw DataError("checkpoint patch spec does not match the stream");
    VideoClip ref = s.reference_clip();
    if (reference_override) {
        if (reference_override->t != s.n_ref_frames || reference_override->h != s.height ||
            reference_override->w != s.width || reference_override->c != 3)
            throw DataError("reference override does not match the stream's reference shape");
        ref = *reference_override;
    }
    return model.decode_indices(ref, s.indices, s.grid);
}

std::vector<std::uint8_t> stream_bytes(const TokenStream& s) {
    s.validate();
    ByteWriter w;
    w.magic("RTK1");
    w.u16(1);
    w.u8(static_cast<std::uint8_t>(s.n_ref_frames));
    w.u8(0);  // reserved
    w.u32(static_cast<std::uint32_t>(s.grid.tau));
    w.u32(static_cast<std::uint32_t>(s.grid.eta));
    w.u32(static_cast<std::uint32_t>(s.grid.omega));
    w.u32(static_cast<std::uint32_t>(s.codebook_size));
    w.u32(static_cast<std::uint32_t>(s.patch.t));
    w.u32(static_cast<std::uint32_t>(s.patch.h));
    w.u32(static_cast<std::uint32_t>(s.patch.w));
    w.u32(static_cast<std::uint32_t>(s.height));
    w.u32(static_cast<std::uint32_t>(s.width));
    w.bytes(s.reference.data(), s.reference.size());
    if (s.index_bits() == 16)
        for (int idx : s.indices) w.u16(static_cast<std::uint16_t>(idx));
    else
        for (int idx : s.indices) w.u32(static_cast<std::uint32_t>(idx));
    return w.data();
}

TokenStream stream_from_bytes(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    r.expect_magic("RTK1", "token stream");
    if (r.u16() != 1) throw DataError("token stream: unsupported version");
    TokenStream s;
    s.n_ref_frames = r.u8();
    r.u8();  // reserved
    s.grid.tau = static_cast<int>(r.u32());
    s.grid.eta = static_cast<int>(r.u32());
    s.grid.omega = static_cast<int>(r.u32());
    s.codebook_size = static_cast<int>(r.u32());
    s.patch.t = static_cast<int>(r.u32());
    s.patch.h = static_cast<int>(r.u32());
    s.patch.w = static_cast<int>(r.u32());
    s.height = static_cast<int>(r.u32());
    s.width = static_cast<int>(r.u32());
    if (s.n_ref_frames < 1 || s.height < 1 || s.width < 1 || s.grid.tau < 1 || s.grid.eta < 1 ||
        s.grid.omega < 1 || s.codebook_size < 1)
        throw DataError("token stream: corrupt header");
    const std::size_t n_ref_bytes =
        static_cast<std::size_t>(s.n_ref_frames) * s.height * s.width * 3;
    const std::size_t n_idx =
        static_cast<std::size_t>(s.grid.tau) * s.grid.eta * s.grid.omega;
    const std::size_t idx_bytes = n_idx * (s.codebook_size <= 65536 ? 2 : 4);
    if (r.remaining() != n_ref_bytes + idx_bytes)
        throw DataError("token stream: payload size does not match the header");
    s.reference.resize(n_ref_bytes);
    r.bytes(s.reference.data(), n_ref_bytes);
    s.indices.resize(n_idx);
    if (s.codebook_size <= 65536)
        for (std::size_t i = 0; i < n_idx; ++i) s.indices[i] = r.u16();
    else
        for (std::size_t i = 0; i < n_idx; ++i) s.indices[i] = static_cast<int>(r.u32());
    s.validate();
    return s;
}

void save_stream(const TokenStream& s, const std::string& path) {
    ByteWriter w;
    auto bytes = stream_bytes(s);
    w.bytes(bytes.data(), bytes.size());
    w.to_file(path);
}

TokenStream load_stream(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    std::vector<std::uint8_t> bytes(r.remaining());
    r.bytes(bytes.data(), bytes.size());
    return stream_from_bytes(bytes);
}

std::string stream_summary(const TokenStream& s) {
    const long long target_pixels =
        static_cast<long long>(s.grid.sites()) * compression_ratio(s.patch);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d tokens for %lld target pixels (%lld px/token), %d-bit indices",
                  s.grid.sites(), target_pixels, compression_ratio(s.patch), s.index_bits());
    return std::string(buf);
}

}  // namespace reftok
