#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advecg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);
    Tensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> data);

    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;
    double abs_max() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

   private:
    Shape shape_;
    std::vector<double> data_;
};

// Row `index` along axis 0, copied out with the leading axis removed.
Tensor take_row(const Tensor& t, std::size_t index);
// Stack equally shaped tensors along a new leading axis.
Tensor stack_rows(const std::vector<Tensor>& rows);
// Select rows of a batch along axis 0.
Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices);

}  // namespace advecg
