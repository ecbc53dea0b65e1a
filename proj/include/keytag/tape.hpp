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

#ifndef KEYTAG_TAPE_HPP
#define KEYTAG_TAPE_HPP

#include "keytag/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace keytag {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid for the lifetime of
/// the tape that produced it.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

enum class OpKind {
    leaf,
    constant,
    add,
    sub,
    mul,
    matmul,
    add_rowwise,
    sub_colwise,
    scale_rows,
    scale,
    grad_scale,
    unary_tanh,
    unary_sigmoid,
    unary_exp,
    unary_log,
    logsumexp_rows,
    reduce_sum,
    concat_cols,
    concat_rows,
    slice_cols,
    gather_rows,
    reshape_view,
};

// Dynamically recorded operation tape with reverse-mode gradients. One tape
// per loss computation; freed when the tape goes out of scope. Recording and
// the backward sweep are strictly sequential, so identical inputs replay to
// bit-identical values and gradients. Every emitted value is checked for
// finiteness and rejected with the operation named.
class Tape {
  public:
    /// Differentiable input node (a parameter).
    Var leaf(Tensor value);
    /// Non-differentiable input node; gradients are not propagated into it.
    Var constant(Tensor value);
    Var constant_scalar(double value);

    const Tensor& value(Var v) const;

    /// Adjoint of `v` from the most recent backward() call. Zero tensor for
    /// nodes the loss does not depend on.
    const Tensor& grad(Var v);

    /// Reverse sweep from a scalar loss node. Resets all adjoints first, so
    /// the tape may be extended and backward() run again.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

    // Used by the free-function primitives below.
    struct Node {
        OpKind kind;
        const char* name;
        std::vector<int> inputs;
        Tensor value;
        bool needs_grad = false;
        double factor = 0.0;
        int start = 0;
        int len = 0;
        std::vector<int> indices;
    };
    Var emit(Node node);
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  private:
    void accumulate(int id, const Eigen::ArrayXd& contribution);
    void backprop_node(int id);

    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;
    Tensor zero_scratch_;
};

// ---- primitive operations -------------------------------------------------

Var add(Var a, Var b);           // elementwise, same shape
Var sub(Var a, Var b);           // elementwise, same shape
Var mul(Var a, Var b);           // elementwise, same shape
Var matmul(Var a, Var b);        // [n,k] x [k,m] -> [n,m]
Var add_rowwise(Var m, Var row); // [n,d] + [d] broadcast over rows
Var sub_colwise(Var m, Var col); // [n,d] - [n,1] broadcast over columns
Var scale_rows(Var m, Var col);  // [n,d] * [n,1] broadcast over columns
Var scale(Var v, double k);      // v * k, k constant
Var neg(Var v);
Var grad_scale(Var v, double k); // identity forward; adjoint * k backward
Var tanh(Var v);
Var sigmoid(Var v);
Var exp(Var v);
Var log(Var v);
Var logsumexp_rows(Var m);       // [n,d] -> [n,1], max-subtracted
Var sum(Var v);                  // full reduction to a scalar
Var concat_cols(const std::vector<Var>& parts); // [n,d_i] -> [n, sum d_i]
Var concat_rows(const std::vector<Var>& parts); // [n_i,d] -> [sum n_i, d]
Var slice_cols(Var m, int start, int len);      // [n,d] -> [n,len]
Var gather_rows(Var m, std::vector<int> indices); // [n,d] -> [len(idx),d]
Var reshape(Var v, Shape shape);

// Composites built from the primitives above.
Var softmax_rows(Var m);
Var log_softmax_rows(Var m);
Var mean(Var v);

// ---- parameter storage ----------------------------------------------------

/// Named, shaped parameter arrays with a parallel gradient slot each. Names
/// are unique; iteration order is sorted, so serialization and updates are
/// deterministic.
class ParameterStore {
  public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const;
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;
    void zero_grads();
    std::vector<std::string> names() const;
    std::size_t count() const { return entries_.size(); }
    std::int64_t total_elements() const;

  private:
    struct Entry {
        Tensor value;
        Tensor grad;
    };
    std::map<std::string, Entry> entries_;
    const Entry& entry(const std::string& name) const;
    Entry& entry(const std::string& name);
};

using VarMap = std::map<std::string, Var>;

/// One leaf per store entry, keyed by parameter name.
VarMap make_leaves(Tape& tape, const ParameterStore& params);

/// A differentiable program over named parameters: builds the graph on the
/// tape and returns the scalar loss node.
using Computation = std::function<Var(Tape&, const VarMap&)>;

/// Runs the computation, backpropagates, writes gradients into the store's
/// gradient slots, and returns the loss.
double forward_backward(const Computation& computation, ParameterStore& params);

/// Runs the computation without recording gradients and returns the loss.
double forward_value(const Computation& computation,
                     const ParameterStore& params);

/// Central-difference oracle: max over all parameter entries of
/// |analytic - numeric| / max(1, |analytic|).
double finite_difference_check(const Computation& computation,
                               ParameterStore& params,
                               double step);

} // namespace keytag

#endif // KEYTAG_TAPE_HPP
