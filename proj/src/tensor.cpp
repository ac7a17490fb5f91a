#include "kdsm/tensor.hpp"

#include "kdsm/rng.hpp"

#include <sstream>

namespace kdsm {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_, Eigen::VectorXd data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(shape_numel(shape));
    return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Eigen::VectorXd d = Eigen::VectorXd::Constant(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double v) {
    return full({1}, v);
}

Tensor Tensor::from(std::vector<int> shape, std::initializer_list<double> v) {
    Eigen::VectorXd d(static_cast<std::int64_t>(v.size()));
    std::int64_t i = 0;
    for (double x : v) d[i++] = x;
    return Tensor(std::move(shape), std::move(d));
}

MatMap Tensor::mat2d() {
    if (rank() != 2) throw ShapeError("mat2d on tensor of shape " + shape_str(shape));
    return mat(shape[0], shape[1]);
}

ConstMatMap Tensor::mat2d() const {
    if (rank() != 2) throw ShapeError("mat2d on tensor of shape " + shape_str(shape));
    return mat(shape[0], shape[1]);
}

NodeId Graph::input(Tensor t) {
    Node n;
    n.op = "input";
    n.value = std::move(t);
    n.needs_grad = n.value.requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::constant(Tensor t) {
    t.requires_grad = false;
    return input(std::move(t));
}

NodeId Graph::emit(std::string op, std::vector<NodeId> inputs, Tensor value,
                   std::function<void(Graph&, NodeId)> backward) {
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    for (NodeId i : n.inputs) {
        if (i < 0 || i >= static_cast<NodeId>(nodes_.size()))
            throw ConfigError("graph op '" + n.op + "' references unknown node");
        n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
    }
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Eigen::VectorXd& Graph::grad(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Eigen::VectorXd::Zero(n.value.numel());
    return n.grad;
}

bool Graph::has_grad(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].grad.size() != 0;
}

void Graph::backward(NodeId loss) {
    if (loss < 0 || loss >= static_cast<NodeId>(nodes_.size()))
        throw ConfigError("backward: unknown loss node");
    if (value(loss).numel() != 1)
        throw ConfigError("backward: loss node must be scalar, got shape " +
                          shape_str(value(loss).shape));
    for (Node& n : nodes_) n.grad.resize(0);
    grad(loss)[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
        n.backward(*this, id);
    }
}

std::uint64_t Graph::next_dropout_seed() {
    return mix_seed(dropout_seed_, 0x64726f70ULL, dropout_counter_++);
}

} // namespace kdsm
