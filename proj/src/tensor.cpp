#include "stvit/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace stvit {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'V', 'T'};
constexpr std::uint32_t kVersion = 1;

void check_extents(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extent must be >= 1, got shape " + shape_to_string(shape));
    }
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw IoError("truncated tensor payload");
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, bytes.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_to_string(shape_));
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    if (rows.size() == 0) throw DimensionError("from_rows needs at least one row");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("ragged rows in from_rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
    }
    return shape_[axis];
}

std::span<double> Tensor::row(std::size_t i) {
    const std::size_t cols = shape_.back();
    return std::span<double>(data_).subspan(i * cols, cols);
}

std::span<const double> Tensor::row(std::size_t i) const {
    const std::size_t cols = shape_.back();
    return std::span<const double>(data_).subspan(i * cols, cols);
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    check_extents(shape);
    if (shape_numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

void LinearWeights::validate(const std::string& name) const {
    if (weight.rank() != 2) throw DimensionError(name + ": weight must be rank 2, got " + shape_to_string(weight.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(1))) {
        throw DimensionError(name + ": bias shape " + shape_to_string(bias->shape()) + " does not match weight " +
                             shape_to_string(weight.shape()));
    }
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t, StorageType storage) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    out.push_back(static_cast<std::uint8_t>(storage));
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    const std::size_t width = storage == StorageType::f64 ? 8 : 4;
    out.reserve(out.size() + t.numel() * width);
    for (double v : t.data()) {
        if (storage == StorageType::f64) {
            put_le<double>(out, v);
        } else {
            put_le<float>(out, static_cast<float>(v));
        }
    }
    return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("bad tensor magic");
    std::size_t pos = 4;
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw IoError("unsupported tensor version " + std::to_string(version));
    const auto dtype = get_le<std::uint8_t>(bytes, pos);
    if (dtype > 1) throw IoError("unknown tensor dtype " + std::to_string(dtype));
    const auto rank = get_le<std::uint8_t>(bytes, pos);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, pos));
    check_extents(shape);
    const std::size_t n = shape_numel(shape);
    const std::size_t width = dtype == 0 ? 8 : 4;
    if (bytes.size() - pos != n * width) {
        throw IoError("tensor payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(n * width));
    }
    std::vector<double> data(n);
    for (auto& v : data) v = dtype == 0 ? get_le<double>(bytes, pos) : static_cast<double>(get_le<float>(bytes, pos));
    return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, StorageType storage) {
    const auto bytes = encode_tensor(t, storage);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_tensor(bytes);
    } catch (const std::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace stvit
