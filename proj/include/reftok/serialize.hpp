#pragma once

// Little-endian binary readers/writers shared by all on-disk formats
// (.rvc clips, .rtk token streams, .rtkc checkpoints, .rtkg token datasets).

#include <cstdint>
#include <string>
#include <vector>

#include "reftok/errors.hpp"

namespace reftok {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    void magic(const char tag[4]);
    void bytes(const void* data, std::size_t n);
    void str(const std::string& s);  // u32 length + raw bytes

    const std::vector<std::uint8_t>& data() const { return buf_; }
    void to_file(const std::string& path) const;

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}
    static ByteReader from_file(const std::string& path);

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    void expect_magic(const char tag[4], const std::string& what);
    void bytes(void* out, std::size_t n);
    std::string str();

    std::size_t remaining() const { return buf_.size() - pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const;
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

}  // namespace reftok
