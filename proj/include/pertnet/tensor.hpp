#ifndef PERTNET_TENSOR_HPP
#define PERTNET_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pertnet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// File-format or stream failure; `offset` is the byte position at which the
/// input stopped making sense.
class io_error : public std::runtime_error {
public:
    io_error(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Dense n-dimensional array of f32 values, row-major flat storage.
/// Tensors are plain values: copying copies the data, no views, no aliasing.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);                    // zero-filled
    Tensor(Shape shape, Eigen::ArrayXf data);

    static Tensor scalar(float v);
    static Tensor full(Shape shape, float v);
    static Tensor from(Shape shape, std::initializer_list<float> values);
    static Tensor from(Shape shape, std::span<const float> values);

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int64_t size() const noexcept { return data_.size(); }

    Eigen::ArrayXf& flat() noexcept { return data_; }
    const Eigen::ArrayXf& flat() const noexcept { return data_; }
    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    float operator[](int64_t i) const { return data_[i]; }
    float& operator[](int64_t i) { return data_[i]; }

    /// Value of a one-element tensor.
    float item() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const { return data_.isFinite().all(); }

private:
    Shape shape_;
    Eigen::ArrayXf data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

/// FNV-1a over the raw f32 bytes, used for frozen-weight checks.
uint64_t fnv1a64(std::span<const float> values);
uint64_t fnv1a64(uint64_t seed, std::span<const float> values);

/// Deterministic RNG; float generation avoids std distributions so that the
/// stream is identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<std::uint_fast32_t>(seed)) {}

    uint32_t next_u32() { return static_cast<uint32_t>(gen_()); }
    float uniform() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }
    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int n) { return static_cast<int>(next_u32() % static_cast<uint32_t>(n)); }

private:
    std::mt19937 gen_;
};

Tensor random_uniform(Shape shape, Rng& rng, float lo = 0.0f, float hi = 1.0f);

// "TSR1" tensor file: magic, u32 LE rank, rank x u32 LE dims, f32 LE payload.
void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t);
Tensor tensor_from_bytes(std::span<const std::uint8_t> bytes);

}  // namespace pertnet

#endif
