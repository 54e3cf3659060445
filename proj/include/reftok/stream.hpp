#pragma once

// On-disk token stream (.rtk): the codec's unit of persistence. A stream
// holds the raw u8 reference frames plus one discrete index per target
// site. The reference payload is ALWAYS present — decoding re-encodes the
// stored reference through the checkpoint and looks indices up in its
// codebook, so a stream plus a checkpoint is sufficient to reproduce the
// decoder output with no access to the original target pixels.
//
// Layout (little-endian, no padding): magic "RTK1", u16 version=1,
// u8 n_ref_frames, u8 reserved, u32 tau/eta/omega, u32 K, u32 patch t/h/w,
// u32 H/W, reference payload (n_ref*H*W*3 bytes u8), then tau*eta*omega
// indices — u16 when K <= 65536, u32 otherwise.

#include <cstdint>
#include <string>
#include <vector>

#include "reftok/model.hpp"

namespace reftok {

struct TokenStream {
    int n_ref_frames = 0;
    GridShape grid;        // target token lattice
    int codebook_size = 0; // K at encode time; decodable by books of size >= K
    PatchSpec patch;
    int height = 0, width = 0;            // frame dims, shared by reference and targets
    std::vector<std::uint8_t> reference;  // n_ref*H*W*3
    std::vector<int> indices;             // grid.sites()

    VideoClip reference_clip() const;  // u8 payload back to float frames
    int index_bits() const { return codebook_size <= 65536 ? 16 : 32; }
    void validate() const;  // shape/count/range consistency (DataError)
};

// Joint deterministic encode; the model must be in reference mode
// (reference_less checkpoints have no target-only index set to persist).
TokenStream encode_to_stream(const TokenizerModel& model, const VideoClip& clip);

// Decode with the stored reference, or an override of identical shape.
// Requires model.book.K() >= stream K and matching patch spec.
VideoClip decode_stream(const TokenizerModel& model, const TokenStream& s,
                        const VideoClip* reference_override = nullptr);

std::vector<std::uint8_t> stream_bytes(const TokenStream& s);
TokenStream stream_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_stream(const TokenStream& s, const std::string& path);
TokenStream load_stream(const std::string& path);

// One-line compression readout: token count, pixels per token, index width.
std::string stream_summary(const TokenStream& s);

}  // namespace reftok
