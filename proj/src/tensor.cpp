#include "pertnet/tensor.hpp"

#include "byte_io.hpp"

#include <sstream>

namespace pertnet {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("shape has non-positive dim " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Eigen::ArrayXf::Zero(shape_numel(shape_));
}

Tensor::Tensor(Shape shape, Eigen::ArrayXf data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(float v) {
    Tensor t(Shape{1});
    t.data_[0] = v;
    return t;
}

Tensor Tensor::full(Shape shape, float v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<float> values) {
    return from(std::move(shape), std::span<const float>(values.begin(), values.size()));
}

Tensor Tensor::from(Shape shape, std::span<const float> values) {
    Tensor t(std::move(shape));
    if (static_cast<int64_t>(values.size()) != t.size())
        throw std::invalid_argument("tensor initializer length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(t.shape_));
    std::copy(values.begin(), values.end(), t.data());
    return t;
}

float Tensor::item() const {
    if (size() != 1)
        throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * 4) == 0;
}

uint64_t fnv1a64(uint64_t seed, std::span<const float> values) {
    uint64_t h = seed;
    for (float v : values) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

uint64_t fnv1a64(std::span<const float> values) { return fnv1a64(0xcbf29ce484222325ULL, values); }

Tensor random_uniform(Shape shape, Rng& rng, float lo, float hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

namespace detail {

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t) {
    detail::ByteWriter w;
    w.magic("TSR1");
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<uint32_t>(d));
    w.bytes(t.data(), static_cast<std::size_t>(t.size()) * 4);
    return w.data();
}

Tensor tensor_from_bytes(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.magic("TSR1", "tensor");
    uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) throw io_error("tensor: rank " + std::to_string(rank) + " out of range", r.offset() - 4);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = r.u32("tensor dim");
        if (d == 0 || d > (1u << 24))
            throw io_error("tensor: dim " + std::to_string(d) + " out of range", r.offset() - 4);
        shape[i] = static_cast<int>(d);
    }
    Tensor t(shape);
    r.read_f32_block(t.data(), static_cast<std::size_t>(t.size()), "tensor payload");
    r.expect_end("tensor");
    if (!t.all_finite()) throw std::domain_error("tensor payload contains non-finite values");
    return t;
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    detail::write_file_bytes(path, tensor_to_bytes(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
    return tensor_from_bytes(detail::read_file_bytes(path));
}

}  // namespace pertnet
