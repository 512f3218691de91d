#include "advecg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "advecg/errors.hpp"

namespace advecg {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

static void check_dims(const Shape& shape) {
    for (std::size_t d : shape)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (shape_size(shape_) != data_.size())
        throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> data)
    : Tensor(Shape(shape), std::vector<double>(data)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_str(shape_));
    return shape_[axis];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

Tensor take_row(const Tensor& t, std::size_t index) {
    if (t.rank() < 2) throw ShapeError("take_row needs rank >= 2");
    if (index >= t.dim(0)) throw ShapeError("row index out of range");
    Shape inner(t.shape().begin() + 1, t.shape().end());
    const std::size_t stride = shape_size(inner);
    std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(index * stride),
                             t.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
    return Tensor(std::move(inner), std::move(data));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows on empty list");
    const Shape& inner = rows.front().shape();
    Shape shape{rows.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const Tensor& r : rows) {
        if (r.shape() != inner) throw ShapeError("stack_rows: inconsistent row shapes");
        data.insert(data.end(), r.data().begin(), r.data().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices) {
    if (batch.rank() < 1 || indices.empty()) throw ShapeError("gather_rows: empty selection");
    Shape shape = batch.shape();
    const std::size_t stride = batch.size() / shape[0];
    shape[0] = indices.size();
    std::vector<double> data(shape_size(shape));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= batch.dim(0)) throw ShapeError("gather_rows: index out of range");
        std::memcpy(data.data() + i * stride, batch.data().data() + indices[i] * stride, stride * sizeof(double));
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace advecg
