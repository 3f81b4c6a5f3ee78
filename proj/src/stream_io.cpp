#include "clb/stream_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "clb/errors.hpp"

namespace clb {

void ByteWriter::u32(std::uint32_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
    buf_.push_back(static_cast<std::uint8_t>(v >> 16));
    buf_.push_back(static_cast<std::uint8_t>(v >> 24));
}

void ByteWriter::u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
}

std::uint8_t ByteReader::u8() {
    if (remaining() < 1) throw FormatError("truncated input: expected byte");
    return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
    if (remaining() < 4) throw FormatError("truncated input: expected u32");
    std::uint32_t v = static_cast<std::uint32_t>(data_[pos_]) |
                      static_cast<std::uint32_t>(data_[pos_ + 1]) << 8 |
                      static_cast<std::uint32_t>(data_[pos_ + 2]) << 16 |
                      static_cast<std::uint32_t>(data_[pos_ + 3]) << 24;
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | hi << 32;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
    std::uint32_t n = u32();
    require_payload(n, 1);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

void ByteReader::require_payload(std::uint64_t count,
                                 std::size_t bytes_per_element) {
    if (bytes_per_element != 0 &&
        count > remaining() / bytes_per_element)
        throw FormatError("declared element count exceeds remaining bytes");
}

void write_container_header(ByteWriter& w, ContainerKind kind) {
    w.u8('C');
    w.u8('L');
    w.u8('B');
    w.u8('1');
    w.u32(static_cast<std::uint32_t>(kind));
    w.u32(container_version);
}

void read_container_header(ByteReader& r, ContainerKind expected_kind) {
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::memcmp(magic, "CLB1", 4) != 0)
        throw FormatError("bad magic: not a CLB1 container");
    std::uint32_t kind = r.u32();
    if (kind != static_cast<std::uint32_t>(expected_kind))
        throw FormatError("container kind mismatch");
    std::uint32_t version = r.u32();
    if (version != container_version)
        throw FormatError("unsupported container version");
}

namespace {

void write_example(ByteWriter& w, const Example& ex) {
    w.i32(ex.label);
    w.i32(ex.session);
    w.i32(ex.task);
    for (float f : ex.features) w.f32(f);
}

Example read_example(ByteReader& r, int feature_dim) {
    Example ex;
    ex.label = r.i32();
    ex.session = r.i32();
    ex.task = r.i32();
    ex.features.resize(static_cast<std::size_t>(feature_dim));
    for (float& f : ex.features) f = r.f32();
    return ex;
}

}  // namespace

std::vector<std::uint8_t> serialize_stream(const Stream& stream) {
    ByteWriter w;
    write_container_header(w, ContainerKind::stream);
    w.u8(static_cast<std::uint8_t>(stream.protocol()));
    w.i32(stream.feature_dim());
    w.i32(stream.n_classes());
    w.i32(stream.n_sessions());
    w.u64(stream.world_seed());
    w.u32(static_cast<std::uint32_t>(stream.batches().size()));
    for (const Batch& b : stream.batches()) {
        w.i32(b.task);
        w.u32(static_cast<std::uint32_t>(b.examples.size()));
        for (const Example& ex : b.examples) write_example(w, ex);
    }
    w.u32(static_cast<std::uint32_t>(stream.test_set().size()));
    for (const Example& ex : stream.test_set()) write_example(w, ex);
    return w.take();
}

Stream deserialize_stream(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    read_container_header(r, ContainerKind::stream);
    std::uint8_t proto_tag = r.u8();
    if (proto_tag > 2) throw FormatError("unknown protocol tag");
    Protocol protocol = static_cast<Protocol>(proto_tag);
    std::int32_t feature_dim = r.i32();
    std::int32_t n_classes = r.i32();
    std::int32_t n_sessions = r.i32();
    if (feature_dim < 1 || n_classes < 1 || n_sessions < 1)
        throw FormatError("non-positive stream dimensions");
    std::uint64_t world_seed = r.u64();

    const std::size_t example_bytes =
        12 + static_cast<std::size_t>(feature_dim) * 4;

    std::uint32_t n_batches = r.u32();
    r.require_payload(n_batches, 8);  // each batch holds at least task + count
    std::vector<Batch> batches;
    batches.reserve(n_batches);
    for (std::uint32_t i = 0; i < n_batches; ++i) {
        Batch b;
        b.task = r.i32();
        std::uint32_t n_examples = r.u32();
        r.require_payload(n_examples, example_bytes);
        b.examples.reserve(n_examples);
        for (std::uint32_t j = 0; j < n_examples; ++j)
            b.examples.push_back(read_example(r, feature_dim));
        batches.push_back(std::move(b));
    }

    std::uint32_t n_test = r.u32();
    r.require_payload(n_test, example_bytes);
    std::vector<Example> test_set;
    test_set.reserve(n_test);
    for (std::uint32_t j = 0; j < n_test; ++j)
        test_set.push_back(read_example(r, feature_dim));

    if (!r.done()) throw FormatError("trailing bytes after stream payload");

    return Stream(protocol, std::move(batches), std::move(test_set), world_seed,
                  feature_dim, n_classes, n_sessions);
}

std::vector<std::uint8_t> serialize_tensors(ContainerKind kind,
                                            const std::vector<NamedTensor>& ts) {
    ByteWriter w;
    write_container_header(w, kind);
    w.u32(static_cast<std::uint32_t>(ts.size()));
    for (const NamedTensor& t : ts) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.dims.size()));
        std::uint64_t expect = 1;
        for (std::uint32_t d : t.dims) {
            w.u32(d);
            expect *= d;
        }
        if (expect != t.data.size())
            throw FormatError("tensor dims do not match data size");
        for (double v : t.data) w.f64(v);
    }
    return w.take();
}

std::vector<NamedTensor> deserialize_tensors(
    std::span<const std::uint8_t> bytes, ContainerKind expected_kind) {
    ByteReader r(bytes);
    read_container_header(r, expected_kind);
    std::uint32_t n_tensors = r.u32();
    r.require_payload(n_tensors, 8);
    std::vector<NamedTensor> out;
    out.reserve(n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        t.name = r.str();
        std::uint32_t n_dims = r.u32();
        r.require_payload(n_dims, 4);
        t.dims.resize(n_dims);
        std::uint64_t count = 1;
        for (std::uint32_t& d : t.dims) {
            d = r.u32();
            count *= d;
            if (count > (1ull << 32))
                throw FormatError("tensor element count implausibly large");
        }
        r.require_payload(count, 8);
        t.data.resize(static_cast<std::size_t>(count));
        for (double& v : t.data) v = r.f64();
        out.push_back(std::move(t));
    }
    if (!r.done()) throw FormatError("trailing bytes after tensor payload");
    return out;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for reading: " + path.string());
    f.seekg(0, std::ios::end);
    std::streamsize n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw FormatError("read failed: " + path.string());
    return bytes;
}

void write_stream_file(const Stream& stream,
                       const std::filesystem::path& path) {
    auto bytes = serialize_stream(stream);
    write_file(path, bytes);
}

Stream read_stream_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return deserialize_stream(bytes);
}

}  // namespace clb
