#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clb/streamgen.hpp"

namespace clb {

// All engine files share one container family: magic "CLB1", then a
// 32-bit kind tag, then a 32-bit payload version. Everything is packed
// little-endian with explicit field widths; no struct dumping.
enum class ContainerKind : std::uint32_t {
    stream = 1,
    params = 2,
    memory = 3,
};

constexpr std::uint32_t container_version = 1;

// Little-endian byte packer.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v);
    void f64(double v);
    void str(const std::string& s);  // u32 length + bytes
    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

  private:
    std::vector<std::uint8_t> buf_;
};

// Little-endian reader. Every accessor throws FormatError on underrun,
// and length fields are validated against the remaining byte count
// before any allocation, so truncated or hostile inputs fail cleanly.
class ByteReader {
  public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32();
    double f64();
    std::string str();
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

    // Checks that a claimed element count is even representable in the
    // bytes left. Call before resize/reserve driven by untrusted input.
    void require_payload(std::uint64_t count, std::size_t bytes_per_element);

  private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

void write_container_header(ByteWriter& w, ContainerKind kind);
void read_container_header(ByteReader& r, ContainerKind expected_kind);

std::vector<std::uint8_t> serialize_stream(const Stream& stream);
Stream deserialize_stream(std::span<const std::uint8_t> bytes);

// Named f64 tensors, used for parameter checkpoints.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};

std::vector<std::uint8_t> serialize_tensors(ContainerKind kind,
                                            const std::vector<NamedTensor>& ts);
std::vector<NamedTensor> deserialize_tensors(std::span<const std::uint8_t> bytes,
                                             ContainerKind expected_kind);

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

void write_stream_file(const Stream& stream, const std::filesystem::path& path);
Stream read_stream_file(const std::filesystem::path& path);

}  // namespace clb
