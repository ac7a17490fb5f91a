#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kdsm/errors.hpp"

namespace kdsm {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int> shape;
    Eigen::VectorXd data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> shape_, Eigen::VectorXd data_);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);
    static Tensor from(std::vector<int> shape, std::initializer_list<double> v);

    std::int64_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int size(int dim) const { return shape.at(static_cast<std::size_t>(dim)); }

    double& at(int i) { return data[i]; }
    double at(int i) const { return data[i]; }
    double& at(int i, int j) { return data[static_cast<std::int64_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<std::int64_t>(i) * shape[1] + j]; }
    double& at(int c, int i, int j) {
        return data[(static_cast<std::int64_t>(c) * shape[1] + i) * shape[2] + j];
    }
    double at(int c, int i, int j) const {
        return data[(static_cast<std::int64_t>(c) * shape[1] + i) * shape[2] + j];
    }

    /// 2-D view of the flat storage. rows*cols must equal numel().
    MatMap mat(int rows, int cols) {
        return MatMap(data.data(), rows, cols);
    }
    ConstMatMap mat(int rows, int cols) const {
        return ConstMatMap(data.data(), rows, cols);
    }
    MatMap mat2d();
    ConstMatMap mat2d() const;

    bool all_finite() const { return data.allFinite(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_str(const std::vector<int>& shape);
std::int64_t shape_numel(const std::vector<int>& shape);

using NodeId = int;

/// Reverse-mode tape. Op records are appended in execution order, so reverse
/// creation order is a valid topological order for the backward sweep.
class Graph {
public:
    struct Node {
        std::string op;
        std::vector<NodeId> inputs;
        Tensor value;
        Eigen::VectorXd grad; // empty until touched by backward
        std::function<void(Graph&, NodeId)> backward;
        bool needs_grad = false;
    };

    /// Register a leaf. The tensor's requires_grad flag decides whether the
    /// backward sweep accumulates a gradient for it.
    NodeId input(Tensor t);
    /// Leaf that never receives a gradient.
    NodeId constant(Tensor t);
    /// Append an op record; needs_grad is inherited from the inputs.
    NodeId emit(std::string op, std::vector<NodeId> inputs, Tensor value,
                std::function<void(Graph&, NodeId)> backward);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& value(NodeId id) { return nodes_[static_cast<std::size_t>(id)].value; }
    bool needs_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    /// Gradient buffer for a node, allocated to zeros on first use.
    Eigen::VectorXd& grad(NodeId id);
    bool has_grad(NodeId id) const;

    /// Reverse sweep from a scalar loss node. Deterministic: visits records
    /// in strict reverse creation order, each exactly once.
    void backward(NodeId loss);

    std::size_t size() const { return nodes_.size(); }

    // Dropout stream: each dropout op consumes the next counter value so
    // masks are a pure function of (seed, op order).
    void set_mode(bool training, std::uint64_t dropout_seed = 0) {
        training_ = training;
        dropout_seed_ = dropout_seed;
        dropout_counter_ = 0;
    }
    bool training() const { return training_; }
    std::uint64_t next_dropout_seed();

private:
    std::vector<Node> nodes_;
    bool training_ = false;
    std::uint64_t dropout_seed_ = 0;
    std::uint64_t dropout_counter_ = 0;
};

} // namespace kdsm
