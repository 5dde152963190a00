#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stvit {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// Every extent is at least one and `numel() == product(shape)`. Values are
/// plain data; copying a Tensor copies its storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
    /// Row-major matrix from nested rows; every row must have the same length.
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 and rank-3 element access; no bounds checks beyond debug asserts.
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Row `i` of a rank-2 tensor.
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;

    /// Same data, new shape. Throws DimensionError if element counts differ.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Linear layer `y = x W + b` with `W` stored as [in, out].
struct LinearWeights {
    Tensor weight;
    std::optional<Tensor> bias;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    void validate(const std::string& name) const;
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

// Tensor binary file: "STVT", u32 version, u8 dtype (0=f64, 1=f32), u8 rank,
// u64 extents[rank], little-endian payload.
enum class StorageType : std::uint8_t { f64 = 0, f32 = 1 };

void write_tensor(const std::filesystem::path& path, const Tensor& t,
                  StorageType storage = StorageType::f64);
Tensor read_tensor(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_tensor(const Tensor& t, StorageType storage = StorageType::f64);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

}  // namespace stvit
