#include "reftok/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>

namespace fs = std::filesystem;

namespace reftok {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    // normalize everything to 8-bit RGB
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.h = static_cast<int>(h);
    img.w = static_cast<int>(w);
    img.rgb.resize(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const ImageU8& img, const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.h);
    for (int y = 0; y < img.h; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::string> list_frame_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (name.size() >= 4 && name.substr(name.size() - 4) == ".png") names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw DataError("no PNG frames in " + dir);
    std::vector<std::string> paths;
    paths.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        char expect[32];
        std::snprintf(expect, sizeof(expect), "%06zu.png", i);
        if (names[i] != expect)
            throw DataError("frame directory " + dir + " is not contiguously numbered: saw " + names[i] +
                            ", expected " + expect);
        paths.push_back((fs::path(dir) / names[i]).string());
    }
    return paths;
}

VideoClip load_clip(const std::string& path, int start, int length, int stride) {
    if (length < 1 || stride < 1 || start < 0) throw DataError("bad load_clip window");
    if (fs::is_regular_file(path)) {
        VideoClip full = load_rvc(path);
        int last = start + (length - 1) * stride;
        if (last >= full.t)
            throw DataError("insufficient frames in " + path + ": need index " + std::to_string(last) +
                            ", have " + std::to_string(full.t));
        VideoClip out(length, full.h, full.w, full.c);
        const std::size_t frame_sz = static_cast<std::size_t>(full.h) * full.w * full.c;
        for (int i = 0; i < length; ++i)
            std::copy_n(full.frame(start + i * stride), frame_sz, out.frame(i));
        out.frame_interval = stride * full.frame_interval;
        out.source_id = path;
        return out;
    }

    std::vector<std::string> frames = list_frame_dir(path);
    int last = start + (length - 1) * stride;
    if (last >= static_cast<int>(frames.size()))
        throw DataError("insufficient frames in " + path + ": need index " + std::to_string(last) +
                        ", have " + std::to_string(frames.size()));
    VideoClip out;
    for (int i = 0; i < length; ++i) {
        ImageU8 img = read_png(frames[start + i * stride]);
        if (i == 0) {
            out = VideoClip(length, img.h, img.w, 3);
        } else if (img.h != out.h || img.w != out.w) {
            throw DataError("non-uniform frame sizes in " + path);
        }
        for (std::size_t p = 0; p < img.rgb.size(); ++p)
            out.frame(i)[p] = u8_to_float(img.rgb[p]);
    }
    out.frame_interval = stride;
    out.source_id = path;
    return out;
}

void save_frame_dir(const VideoClip& clip, const std::string& dir) {
    fs::create_directories(dir);
    auto bytes = clip_to_u8(clip);
    const std::size_t frame_sz = static_cast<std::size_t>(clip.h) * clip.w * 3;
    for (int f = 0; f < clip.t; ++f) {
        ImageU8 img;
        img.h = clip.h;
        img.w = clip.w;
        img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(f * frame_sz),
                       bytes.begin() + static_cast<std::ptrdiff_t>((f + 1) * frame_sz));
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", f);
        write_png(img, (fs::path(dir) / name).string());
    }
}

void save_contact_sheet(const VideoClip& clip, const std::string& path, int per_row) {
    per_row = std::max(1, std::min(per_row, clip.t));
    int rows = (clip.t + per_row - 1) / per_row;
    const int pad = 2;
    ImageU8 sheet;
    sheet.w = per_row * (clip.w + pad) + pad;
    sheet.h = rows * (clip.h + pad) + pad;
    sheet.rgb.assign(static_cast<std::size_t>(sheet.h) * sheet.w * 3, 32);  // dark gutter
    auto bytes = clip_to_u8(clip);
    for (int f = 0; f < clip.t; ++f) {
        int gx = (f % per_row) * (clip.w + pad) + pad;
        int gy = (f / per_row) * (clip.h + pad) + pad;
        for (int y = 0; y < clip.h; ++y)
            for (int x = 0; x < clip.w; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    sheet.rgb[((static_cast<std::size_t>(gy + y) * sheet.w) + gx + x) * 3 + ch] =
                        bytes[((static_cast<std::size_t>(f) * clip.h + y) * clip.w + x) * 3 + ch];
    }
    write_png(sheet, path);
}

}  // namespace reftok
