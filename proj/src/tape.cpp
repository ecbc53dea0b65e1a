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

#include "keytag/tape.hpp"

#include "keytag/errors.hpp"

#include <cmath>

namespace keytag {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw NumericError(std::string(op) + ": shape mismatch " +
                       shape_to_string(a.shape()) + " vs " +
                       shape_to_string(b.shape()));
}

void require_same_tape(const char* op, Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw NumericError(std::string(op) +
                           ": operands recorded on different tapes");
    }
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw NumericError(std::string(op) + ": expected a rank-2 tensor, got " +
                           shape_to_string(t.shape()));
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Var Tape::emit(Node node) {
    if (!node.value.all_finite()) {
        throw NumericError(std::string(node.name) +
                           ": produced a non-finite value");
    }
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
    if (!value.all_finite()) {
        throw NumericError("leaf: input tensor is not finite");
    }
    Node n{OpKind::leaf, "leaf", {}, std::move(value), true, 0.0, 0, 0, {}};
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) {
        throw NumericError("constant: input tensor is not finite");
    }
    Node n{OpKind::constant, "constant", {}, std::move(value), false,
           0.0,            0,          0,  {}};
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant_scalar(double value) {
    return constant(Tensor::scalar(value));
}

const Tensor& Tape::value(Var v) const {
    return nodes_[static_cast<std::size_t>(v.id)].value;
}

const Tensor& Tape::grad(Var v) {
    Tensor& slot = adjoints_[static_cast<std::size_t>(v.id)];
    if (slot.size() == 0) {
        slot = Tensor::zeros(nodes_[static_cast<std::size_t>(v.id)].value.shape());
    }
    return slot;
}

void Tape::accumulate(int id, const Eigen::ArrayXd& contribution) {
    Tensor& slot = adjoints_[static_cast<std::size_t>(id)];
    if (slot.size() == 0) {
        slot = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    }
    slot.array() += contribution;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) {
        throw NumericError("backward: loss was recorded on a different tape");
    }
    const Node& loss_node = nodes_[static_cast<std::size_t>(loss.id)];
    if (loss_node.value.size() != 1) {
        throw NumericError("backward: loss must be a scalar, got shape " +
                           shape_to_string(loss_node.value.shape()));
    }
    adjoints_.clear();
    adjoints_.resize(nodes_.size());
    accumulate(loss.id, Eigen::ArrayXd::Ones(1));
    for (int id = loss.id; id >= 0; --id) {
        if (adjoints_[static_cast<std::size_t>(id)].size() == 0) {
            continue;
        }
        backprop_node(id);
    }
}

void Tape::backprop_node(int id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const Tensor& adj = adjoints_[static_cast<std::size_t>(id)];
    auto in = [this](int k) -> const Node& {
        return nodes_[static_cast<std::size_t>(k)];
    };
    auto wants = [this](int k) {
        return nodes_[static_cast<std::size_t>(k)].needs_grad;
    };

    switch (node.kind) {
    case OpKind::leaf:
    case OpKind::constant:
        return;
    case OpKind::add: {
        if (wants(node.inputs[0])) accumulate(node.inputs[0], adj.array());
        if (wants(node.inputs[1])) accumulate(node.inputs[1], adj.array());
        return;
    }
    case OpKind::sub: {
        if (wants(node.inputs[0])) accumulate(node.inputs[0], adj.array());
        if (wants(node.inputs[1])) accumulate(node.inputs[1], (-adj.array()).eval());
        return;
    }
    case OpKind::mul: {
        const Tensor& a = in(node.inputs[0]).value;
        const Tensor& b = in(node.inputs[1]).value;
        if (wants(node.inputs[0]))
            accumulate(node.inputs[0], (adj.array() * b.array()).eval());
        if (wants(node.inputs[1]))
            accumulate(node.inputs[1], (adj.array() * a.array()).eval());
        return;
    }
    case OpKind::matmul: {
        const Tensor& a = in(node.inputs[0]).value;
        const Tensor& b = in(node.inputs[1]).value;
        ConstMatrixMap ga(adj.array().data(), a.dim(0), b.dim(1));
        if (wants(node.inputs[0])) {
            RowMajorMatrix da = ga * b.matrix().transpose();
            accumulate(node.inputs[0],
                       Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
        }
        if (wants(node.inputs[1])) {
            RowMajorMatrix db = a.matrix().transpose() * ga;
            accumulate(node.inputs[1],
                       Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
        }
        return;
    }
    case OpKind::add_rowwise: {
        const Tensor& m = in(node.inputs[0]).value;
        if (wants(node.inputs[0])) accumulate(node.inputs[0], adj.array());
        if (wants(node.inputs[1])) {
            ConstMatrixMap g(adj.array().data(), m.dim(0), m.dim(1));
            Eigen::VectorXd col_sums = g.colwise().sum();
            accumulate(node.inputs[1],
                       Eigen::Map<const Eigen::ArrayXd>(col_sums.data(),
                                                        col_sums.size()));
        }
        return;
    }
    case OpKind::sub_colwise: {
        const Tensor& m = in(node.inputs[0]).value;
        if (wants(node.inputs[0])) accumulate(node.inputs[0], adj.array());
        if (wants(node.inputs[1])) {
            ConstMatrixMap g(adj.array().data(), m.dim(0), m.dim(1));
            Eigen::VectorXd row_sums = -g.rowwise().sum();
            accumulate(node.inputs[1],
                       Eigen::Map<const Eigen::ArrayXd>(row_sums.data(),
                                                        row_sums.size()));
        }
        return;
    }
    case OpKind::scale_rows: {
        const Tensor& m = in(node.inputs[0]).value;
        const Tensor& c = in(node.inputs[1]).value;
        const int rows = m.dim(0);
        const int cols = m.dim(1);
        ConstMatrixMap g(adj.array().data(), rows, cols);
        if (wants(node.inputs[0])) {
            Eigen::Map<const Eigen::VectorXd> cv(c.array().data(), rows);
            RowMajorMatrix dm = g.array().colwise() * cv.array();
            accumulate(node.inputs[0],
                       Eigen::Map<const Eigen::ArrayXd>(dm.data(), dm.size()));
        }
        if (wants(node.inputs[1])) {
            Eigen::VectorXd dc =
                (g.array() * m.matrix().array()).rowwise().sum();
            accumulate(node.inputs[1],
                       Eigen::Map<const Eigen::ArrayXd>(dc.data(), dc.size()));
        }
        return;
    }
    case OpKind::scale: {
        if (wants(node.inputs[0]))
            accumulate(node.inputs[0], (adj.array() * node.factor).eval());
        return;
    }
    case OpKind::grad_scale: {
        if (wants(node.inputs[0]))
            accumulate(node.inputs[0], (adj.array() * node.factor).eval());
        return;
    }
    case OpKind::unary_tanh: {
        if (wants(node.inputs[0]))
            accumulate(node.inputs[0],
                       (adj.array() * (1.0 - node.value.array().square())).eval());
        return;
    }
    case OpKind::unary_sigmoid: {
        if (wants(node.inputs[0]))
            accumulate(node.inputs[0],
                       (adj.array() * node.value.array() *
                        (1.0 - node.value.array())).eval());
        return;
    }
    case OpKind::unary_exp: {
        if (wants(node.inputs[0]))
            accumulate(node.inputs[0], (adj.array() * node.value.array()).eval());
        return;
    }
    case OpKind::unary_log: {
        if (wants(node.inputs[0])) {
            const Tensor& x = in(node.inputs[0]).value;
            accumulate(node.inputs[0], (adj.array() / x.array()).eval());
        }
        return;
    }
    case OpKind::logsumexp_rows: {
        if (wants(node.inputs[0])) {
            const Tensor& x = in(node.inputs[0]).value;
            const int rows = x.dim(0);
            const int cols = x.dim(1);
            ConstMatrixMap xm(x.array().data(), rows, cols);
            Eigen::Map<const Eigen::VectorXd> lse(node.value.array().data(), rows);
            Eigen::Map<const Eigen::VectorXd> g(adj.array().data(), rows);
            RowMajorMatrix dx =
                ((xm.array().colwise() - lse.array()).exp().colwise() *
                 g.array());
            accumulate(node.inputs[0],
                       Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
        }
        return;
    }
    case OpKind::reduce_sum: {
        if (wants(node.inputs[0])) {
            const Tensor& x = in(node.inputs[0]).value;
            accumulate(node.inputs[0],
                       Eigen::ArrayXd::Constant(x.size(), adj.array()[0]));
        }
        return;
    }
    case OpKind::concat_cols: {
        const int rows = node.value.dim(0);
        const int total_cols = node.value.dim(1);
        ConstMatrixMap g(adj.array().data(), rows, total_cols);
        int offset = 0;
        for (const int input : node.inputs) {
            const int cols = in(input).value.dim(1);
            if (wants(input)) {
                RowMajorMatrix part = g.middleCols(offset, cols);
                accumulate(input, Eigen::Map<const Eigen::ArrayXd>(part.data(),
                                                                   part.size()));
            }
            offset += cols;
        }
        return;
    }
    case OpKind::concat_rows: {
        const int total_rows = node.value.dim(0);
        const int cols = node.value.dim(1);
        ConstMatrixMap g(adj.array().data(), total_rows, cols);
        int offset = 0;
        for (const int input : node.inputs) {
            const int rows = in(input).value.dim(0);
            if (wants(input)) {
                RowMajorMatrix part = g.middleRows(offset, rows);
                accumulate(input, Eigen::Map<const Eigen::ArrayXd>(part.data(),
                                                                   part.size()));
            }
            offset += rows;
        }
        return;
    }
    case OpKind::slice_cols: {
        if (wants(node.inputs[0])) {
            const Tensor& x = in(node.inputs[0]).value;
            const int rows = x.dim(0);
            const int cols = x.dim(1);
            RowMajorMatrix dx = RowMajorMatrix::Zero(rows, cols);
            ConstMatrixMap g(adj.array().data(), rows, node.len);
            dx.middleCols(node.start, node.len) = g;
            accumulate(node.inputs[0],
                       Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
        }
        return;
    }
    case OpKind::gather_rows: {
        if (wants(node.inputs[0])) {
            const Tensor& x = in(node.inputs[0]).value;
            const int cols = x.dim(1);
            RowMajorMatrix dx = RowMajorMatrix::Zero(x.dim(0), cols);
            ConstMatrixMap g(adj.array().data(),
                             static_cast<int>(node.indices.size()), cols);
            for (std::size_t k = 0; k < node.indices.size(); ++k) {
                dx.row(node.indices[k]) += g.row(static_cast<int>(k));
            }
            accumulate(node.inputs[0],
                       Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
        }
        return;
    }
    case OpKind::reshape_view: {
        if (wants(node.inputs[0])) accumulate(node.inputs[0], adj.array());
        return;
    }
    }
}

// ---- op construction ------------------------------------------------------

namespace {

bool any_needs_grad(const Tape& tape, const std::vector<int>& inputs) {
    for (const int id : inputs) {
        if (tape.node(id).needs_grad) {
            return true;
        }
    }
    return false;
}

Var emit_op(Tape& tape, OpKind kind, const char* name, std::vector<int> inputs,
            Tensor value, double factor = 0.0, int start = 0, int len = 0,
            std::vector<int> indices = {}) {
    Tape::Node node{kind,  name,  std::move(inputs), std::move(value),
                    false, factor, start, len,       std::move(indices)};
    node.needs_grad = any_needs_grad(tape, node.inputs);
    return tape.emit(std::move(node));
}

} // namespace

Var add(Var a, Var b) {
    require_same_tape("add", a, b);
    const Tensor& ta = a.tape->value(a);
    const Tensor& tb = b.tape->value(b);
    if (!ta.same_shape(tb)) shape_error("add", ta, tb);
    Tensor out{ta.shape(), (ta.array() + tb.array()).eval()};
    return emit_op(*a.tape, OpKind::add, "add", {a.id, b.id}, std::move(out));
}

Var sub(Var a, Var b) {
    require_same_tape("sub", a, b);
    const Tensor& ta = a.tape->value(a);
    const Tensor& tb = b.tape->value(b);
    if (!ta.same_shape(tb)) shape_error("sub", ta, tb);
    Tensor out{ta.shape(), (ta.array() - tb.array()).eval()};
    return emit_op(*a.tape, OpKind::sub, "sub", {a.id, b.id}, std::move(out));
}

Var mul(Var a, Var b) {
    require_same_tape("mul", a, b);
    const Tensor& ta = a.tape->value(a);
    const Tensor& tb = b.tape->value(b);
    if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
    Tensor out{ta.shape(), (ta.array() * tb.array()).eval()};
    return emit_op(*a.tape, OpKind::mul, "mul", {a.id, b.id}, std::move(out));
}

Var matmul(Var a, Var b) {
    require_same_tape("matmul", a, b);
    const Tensor& ta = a.tape->value(a);
    const Tensor& tb = b.tape->value(b);
    require_rank2("matmul", ta);
    require_rank2("matmul", tb);
    if (ta.dim(1) != tb.dim(0)) shape_error("matmul", ta, tb);
    Tensor out{Shape{ta.dim(0), tb.dim(1)}};
    out.matrix() = ta.matrix() * tb.matrix();
    return emit_op(*a.tape, OpKind::matmul, "matmul", {a.id, b.id},
                   std::move(out));
}

Var add_rowwise(Var m, Var row) {
    require_same_tape("add_rowwise", m, row);
    const Tensor& tm = m.tape->value(m);
    const Tensor& tr = row.tape->value(row);
    require_rank2("add_rowwise", tm);
    if (tr.size() != tm.dim(1)) shape_error("add_rowwise", tm, tr);
    Tensor out{tm.shape()};
    Eigen::Map<const Eigen::RowVectorXd> rv(tr.array().data(), tr.size());
    out.matrix() = tm.matrix().rowwise() + rv;
    return emit_op(*m.tape, OpKind::add_rowwise, "add_rowwise", {m.id, row.id},
                   std::move(out));
}

Var sub_colwise(Var m, Var col) {
    require_same_tape("sub_colwise", m, col);
    const Tensor& tm = m.tape->value(m);
    const Tensor& tc = col.tape->value(col);
    require_rank2("sub_colwise", tm);
    if (tc.size() != tm.dim(0)) shape_error("sub_colwise", tm, tc);
    Tensor out{tm.shape()};
    Eigen::Map<const Eigen::VectorXd> cv(tc.array().data(), tc.size());
    out.matrix() = tm.matrix().colwise() - cv;
    return emit_op(*m.tape, OpKind::sub_colwise, "sub_colwise", {m.id, col.id},
                   std::move(out));
}

Var scale_rows(Var m, Var col) {
    require_same_tape("scale_rows", m, col);
    const Tensor& tm = m.tape->value(m);
    const Tensor& tc = col.tape->value(col);
    require_rank2("scale_rows", tm);
    if (tc.size() != tm.dim(0)) shape_error("scale_rows", tm, tc);
    Tensor out{tm.shape()};
    Eigen::Map<const Eigen::VectorXd> cv(tc.array().data(), tc.size());
    out.matrix() = tm.matrix().array().colwise() * cv.array();
    return emit_op(*m.tape, OpKind::scale_rows, "scale_rows", {m.id, col.id},
                   std::move(out));
}

Var scale(Var v, double k) {
    const Tensor& tv = v.tape->value(v);
    Tensor out{tv.shape(), (tv.array() * k).eval()};
    return emit_op(*v.tape, OpKind::scale, "scale", {v.id}, std::move(out), k);
}

Var neg(Var v) { return scale(v, -1.0); }

Var grad_scale(Var v, double k) {
    const Tensor& tv = v.tape->value(v);
    Tensor out{tv.shape(), tv.array()};
    return emit_op(*v.tape, OpKind::grad_scale, "grad_scale", {v.id},
                   std::move(out), k);
}

Var tanh(Var v) {
    const Tensor& tv = v.tape->value(v);
    Tensor out{tv.shape(), tv.array().tanh().eval()};
    return emit_op(*v.tape, OpKind::unary_tanh, "tanh", {v.id}, std::move(out));
}

Var sigmoid(Var v) {
    const Tensor& tv = v.tape->value(v);
    Eigen::ArrayXd data = tv.array().unaryExpr(&stable_sigmoid);
    Tensor out{tv.shape(), std::move(data)};
    return emit_op(*v.tape, OpKind::unary_sigmoid, "sigmoid", {v.id},
                   std::move(out));
}

Var exp(Var v) {
    const Tensor& tv = v.tape->value(v);
    Tensor out{tv.shape(), tv.array().exp().eval()};
    return emit_op(*v.tape, OpKind::unary_exp, "exp", {v.id}, std::move(out));
}

Var log(Var v) {
    const Tensor& tv = v.tape->value(v);
    Tensor out{tv.shape(), tv.array().log().eval()};
    return emit_op(*v.tape, OpKind::unary_log, "log", {v.id}, std::move(out));
}

Var logsumexp_rows(Var m) {
    const Tensor& tm = m.tape->value(m);
    require_rank2("logsumexp_rows", tm);
    const int rows = tm.dim(0);
    Tensor out{Shape{rows, 1}};
    ConstMatrixMap x(tm.array().data(), rows, tm.dim(1));
    for (int i = 0; i < rows; ++i) {
        const double row_max = x.row(i).maxCoeff();
        out[i] = row_max + std::log((x.row(i).array() - row_max).exp().sum());
    }
    return emit_op(*m.tape, OpKind::logsumexp_rows, "logsumexp_rows", {m.id},
                   std::move(out));
}

Var sum(Var v) {
    const Tensor& tv = v.tape->value(v);
    Tensor out = Tensor::scalar(tv.array().sum());
    return emit_op(*v.tape, OpKind::reduce_sum, "sum", {v.id}, std::move(out));
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw NumericError("concat_cols: no inputs");
    }
    Tape& tape = *parts.front().tape;
    std::vector<int> inputs;
    int rows = -1;
    int total_cols = 0;
    for (const Var part : parts) {
        require_same_tape("concat_cols", parts.front(), part);
        const Tensor& t = tape.value(part);
        require_rank2("concat_cols", t);
        if (rows < 0) {
            rows = t.dim(0);
        } else if (t.dim(0) != rows) {
            shape_error("concat_cols", tape.value(parts.front()), t);
        }
        total_cols += t.dim(1);
        inputs.push_back(part.id);
    }
    Tensor out{Shape{rows, total_cols}};
    MatrixMap om = out.matrix();
    int offset = 0;
    for (const Var part : parts) {
        const Tensor& t = tape.value(part);
        om.middleCols(offset, t.dim(1)) = t.matrix();
        offset += t.dim(1);
    }
    return emit_op(tape, OpKind::concat_cols, "concat_cols", std::move(inputs),
                   std::move(out));
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw NumericError("concat_rows: no inputs");
    }
    Tape& tape = *parts.front().tape;
    std::vector<int> inputs;
    int cols = -1;
    int total_rows = 0;
    for (const Var part : parts) {
        require_same_tape("concat_rows", parts.front(), part);
        const Tensor& t = tape.value(part);
        require_rank2("concat_rows", t);
        if (cols < 0) {
            cols = t.dim(1);
        } else if (t.dim(1) != cols) {
            shape_error("concat_rows", tape.value(parts.front()), t);
        }
        total_rows += t.dim(0);
        inputs.push_back(part.id);
    }
    Tensor out{Shape{total_rows, cols}};
    MatrixMap om = out.matrix();
    int offset = 0;
    for (const Var part : parts) {
        const Tensor& t = tape.value(part);
        om.middleRows(offset, t.dim(0)) = t.matrix();
        offset += t.dim(0);
    }
    return emit_op(tape, OpKind::concat_rows, "concat_rows", std::move(inputs),
                   std::move(out));
}

Var slice_cols(Var m, int start, int len) {
    const Tensor& tm = m.tape->value(m);
    require_rank2("slice_cols", tm);
    if (start < 0 || len <= 0 || start + len > tm.dim(1)) {
        throw NumericError("slice_cols: range [" + std::to_string(start) + "," +
                           std::to_string(start + len) + ") out of bounds for " +
                           shape_to_string(tm.shape()));
    }
    Tensor out{Shape{tm.dim(0), len}};
    out.matrix() = tm.matrix().middleCols(start, len);
    return emit_op(*m.tape, OpKind::slice_cols, "slice_cols", {m.id},
                   std::move(out), 0.0, start, len);
}

Var gather_rows(Var m, std::vector<int> indices) {
    const Tensor& tm = m.tape->value(m);
    require_rank2("gather_rows", tm);
    if (indices.empty()) {
        throw NumericError("gather_rows: empty index list");
    }
    const int rows = tm.dim(0);
    for (const int idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw NumericError("gather_rows: index " + std::to_string(idx) +
                               " out of bounds for " +
                               shape_to_string(tm.shape()));
        }
    }
    Tensor out{Shape{static_cast<int>(indices.size()), tm.dim(1)}};
    MatrixMap om = out.matrix();
    ConstMatrixMap im = tm.matrix();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        om.row(static_cast<int>(k)) = im.row(indices[k]);
    }
    return emit_op(*m.tape, OpKind::gather_rows, "gather_rows", {m.id},
                   std::move(out), 0.0, 0, 0, std::move(indices));
}

Var reshape(Var v, Shape shape) {
    const Tensor& tv = v.tape->value(v);
    Tensor out = tv.reshaped(std::move(shape));
    return emit_op(*v.tape, OpKind::reshape_view, "reshape", {v.id},
                   std::move(out));
}

Var softmax_rows(Var m) { return exp(log_softmax_rows(m)); }

Var log_softmax_rows(Var m) { return sub_colwise(m, logsumexp_rows(m)); }

Var mean(Var v) {
    const std::int64_t n = v.tape->value(v).size();
    return scale(sum(v), 1.0 / static_cast<double>(n));
}

// ---- ParameterStore -------------------------------------------------------

void ParameterStore::add(const std::string& name, Tensor value) {
    if (entries_.contains(name)) {
        throw NumericError("parameter '" + name + "' already exists");
    }
    Tensor grad = Tensor::zeros(value.shape());
    entries_.emplace(name, Entry{std::move(value), std::move(grad)});
}

bool ParameterStore::contains(const std::string& name) const {
    return entries_.contains(name);
}

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw NumericError("unknown parameter '" + name + "'");
    }
    return it->second;
}

ParameterStore::Entry& ParameterStore::entry(const std::string& name) {
    const auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw NumericError("unknown parameter '" + name + "'");
    }
    return it->second;
}

Tensor& ParameterStore::value(const std::string& name) {
    return entry(name).value;
}

const Tensor& ParameterStore::value(const std::string& name) const {
    return entry(name).value;
}

Tensor& ParameterStore::grad(const std::string& name) { return entry(name).grad; }

const Tensor& ParameterStore::grad(const std::string& name) const {
    return entry(name).grad;
}

void ParameterStore::zero_grads() {
    for (auto& [name, e] : entries_) {
        e.grad.array().setZero();
    }
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) {
        out.push_back(name);
    }
    return out;
}

std::int64_t ParameterStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        n += e.value.size();
    }
    return n;
}

// ---- forward/backward drivers ---------------------------------------------

VarMap make_leaves(Tape& tape, const ParameterStore& params) {
    VarMap vars;
    for (const std::string& name : params.names()) {
        vars.emplace(name, tape.leaf(params.value(name)));
    }
    return vars;
}

double forward_backward(const Computation& computation, ParameterStore& params) {
    Tape tape;
    VarMap vars = make_leaves(tape, params);
    const Var loss = computation(tape, vars);
    const double loss_value = tape.value(loss).scalar_value();
    tape.backward(loss);
    for (const std::string& name : params.names()) {
        params.grad(name).array() = tape.grad(vars.at(name)).array();
    }
    return loss_value;
}

double forward_value(const Computation& computation,
                     const ParameterStore& params) {
    Tape tape;
    VarMap vars = make_leaves(tape, params);
    const Var loss = computation(tape, vars);
    return tape.value(loss).scalar_value();
}

double finite_difference_check(const Computation& computation,
                               ParameterStore& params,
                               double step) {
    if (step <= 0.0) {
        throw NumericError("finite_difference_check: step must be positive");
    }
    forward_backward(computation, params);
    double max_rel = 0.0;
    for (const std::string& name : params.names()) {
        const Tensor analytic = params.grad(name);
        Tensor& value = params.value(name);
        for (std::int64_t i = 0; i < value.size(); ++i) {
            const double original = value[i];
            value[i] = original + step;
            const double f_plus = forward_value(computation, params);
            value[i] = original - step;
            const double f_minus = forward_value(computation, params);
            value[i] = original;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double rel = std::abs(analytic[i] - numeric) /
                               std::max(1.0, std::abs(analytic[i]));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace keytag
