#pragma once

// PNG frame I/O: numbered frame directories (000000.png ...) and
// contact-sheet output for visual inspection.

#include <cstdint>
#include <string>
#include <vector>

#include "reftok/video.hpp"

namespace reftok {

struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> rgb;  // h*w*3, row-major (y,x,c)
};

ImageU8 read_png(const std::string& path);
void write_png(const ImageU8& img, const std::string& path);

// Lists the numbered frames of a directory in index order.
// Expects zero-padded names like 000000.png; throws DataError on gaps.
std::vector<std::string> list_frame_dir(const std::string& dir);

// Loads frames [start, start + length*stride) at the given stride from a
// frame directory or a .rvc file.
VideoClip load_clip(const std::string& path, int start, int length, int stride);

// Writes one PNG per frame into dir as 000000.png, 000001.png, ...
void save_frame_dir(const VideoClip& clip, const std::string& dir);

// Tiles all frames left-to-right (wrapping to rows of `per_row`) into one PNG.
void save_contact_sheet(const VideoClip& clip, const std::string& path, int per_row = 8);

}  // namespace reftok
