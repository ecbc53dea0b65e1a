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

#ifndef KEYTAG_TENSOR_HPP
#define KEYTAG_TENSOR_HPP

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace keytag {

using Shape = std::vector<int>;

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

std::int64_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles with an explicit shape. All training and
// verification math runs in 64-bit; 32-bit appears only in serialized files.
// Rank 0 is a scalar (one element), rank 1 a vector, rank 2 a matrix; rank 3
// holds padded [batch, len, width] blocks.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, Eigen::ArrayXd data);

    static Tensor scalar(double value);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_vector(const std::vector<double>& values);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return data_.size(); }

    double scalar_value() const;

    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }

    Eigen::ArrayXd& array() { return data_; }
    const Eigen::ArrayXd& array() const { return data_; }

    /// 2-D view; requires rank 2.
    MatrixMap matrix();
    ConstMatrixMap matrix() const;

    /// Any-rank view collapsed to [rows, last-dim]; rank >= 1.
    MatrixMap as_2d();
    ConstMatrixMap as_2d() const;

    bool all_finite() const { return data_.isFinite().all(); }
    bool same_shape(const Tensor& other) const {
        return shape_ == other.shape_;
    }

    /// Same data, new shape; element counts must agree.
    Tensor reshaped(Shape shape) const;

  private:
    Shape shape_;
    Eigen::ArrayXd data_;
};

} // namespace keytag

#endif // KEYTAG_TENSOR_HPP
