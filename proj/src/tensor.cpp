// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "keytag/tensor.hpp"

#include "keytag/errors.hpp"

#include <sstream>

namespace keytag {

std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (const int d : shape) {
        if (d <= 0) {
            throw NumericError("tensor shape has non-positive dimension " +
                               shape_to_string(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Eigen::ArrayXd::Zero(shape_size(shape_));
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data)
  : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw NumericError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(double value) {
    Tensor t{Shape{}};
    t.data_[0] = value;
    return t;
}

Tensor Tensor::zeros(Shape shape) { return Tensor{std::move(shape)}; }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t{std::move(shape)};
    t.data_.setConstant(value);
    return t;
}

Tensor Tensor::from_vector(const std::vector<double>& values) {
    Tensor t{Shape{static_cast<int>(values.size())}};
    for (std::size_t i = 0; i < values.size(); ++i) {
        t.data_[static_cast<std::int64_t>(i)] = values[i];
    }
    return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    if (n == 0) {
        throw NumericError("Tensor::from_rows requires at least one row");
    }
    const int m = static_cast<int>(rows.front().size());
    Tensor t{Shape{n, m}};
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != m) {
            throw NumericError("Tensor::from_rows given ragged rows");
        }
        for (int j = 0; j < m; ++j) {
            t.data_[static_cast<std::int64_t>(i) * m + j] =
                rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return t;
}

double Tensor::scalar_value() const {
    if (data_.size() != 1) {
        throw NumericError("tensor of shape " + shape_to_string(shape_) +
                           " is not a scalar");
    }
    return data_[0];
}

MatrixMap Tensor::matrix() {
    if (rank() != 2) {
        throw NumericError("matrix view requires rank 2, got shape " +
                           shape_to_string(shape_));
    }
    return MatrixMap(data_.data(), shape_[0], shape_[1]);
}

ConstMatrixMap Tensor::matrix() const {
    if (rank() != 2) {
        throw NumericError("matrix view requires rank 2, got shape " +
                           shape_to_string(shape_));
    }
    return ConstMatrixMap(data_.data(), shape_[0], shape_[1]);
}

MatrixMap Tensor::as_2d() {
    if (rank() < 1) {
        return MatrixMap(data_.data(), 1, 1);
    }
    const int cols = shape_.back();
    return MatrixMap(data_.data(), data_.size() / cols, cols);
}

ConstMatrixMap Tensor::as_2d() const {
    if (rank() < 1) {
        return ConstMatrixMap(data_.data(), 1, 1);
    }
    const int cols = shape_.back();
    return ConstMatrixMap(data_.data(), data_.size() / cols, cols);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw NumericError("cannot reshape " + shape_to_string(shape_) +
                           " to " + shape_to_string(shape));
    }
    return Tensor{std::move(shape), data_};
}

} // namespace keytag
