#pragma once

#include <map>
#include <string>
#include <vector>

#include "kdsm/ops.hpp"
#include "kdsm/tensor.hpp"

namespace kdsm {

/// Architecture geometry. Paper-bound constants (K, O, C, heads, layer
/// counts, dropout, heatmap size) keep their defaults; backbone capacity
/// (d, widths) is configurable down to test scale.
struct NetConfig {
    bool kdsm_mode = true; // false -> baseline graph
    int image_size = 64;
    int image_channels = 1;
    int c0 = 512; // raw text width C0
    int c = 64;   // adapted width C
    int d = 512;  // VKRA embedding width
    int heads = 4;
    int ffn_dim = 2048;
    int self_layers = 3;
    int cross_layers = 3;
    double dropout = 0.1;
    int K = 100;
    int O = 100;
    int hei = 64, wid = 64;
    std::vector<int> encoder_widths = {16, 32, 64}; // stride-2 conv blocks
    std::vector<int> head_widths = {32, 16, 16};    // three deconv blocks
    int kp_hidden = 0; // keypoint adapter hidden width; 0 -> c0
    int va_hidden = 256;

    void validate() const;
    int encoder_out() const { return encoder_widths.back(); }
    int feat_hw() const {
        int s = image_size;
        for (std::size_t i = 0; i < encoder_widths.size(); ++i) s /= 2;
        return s;
    }
    int n_tokens() const { return feat_hw() * feat_hw(); }
    int head_out_channels() const { return kdsm_mode ? O : c; }
    int kp_hidden_width() const { return kp_hidden > 0 ? kp_hidden : c0; }
};

/// Insertion-ordered named tensors; the order fixes checkpoint layout and
/// optimizer iteration.
class ParamStore {
public:
    Tensor& add(const std::string& name, std::vector<int> shape);
    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const {
        return items_;
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

struct ModelParams {
    NetConfig cfg;
    ParamStore store;

    /// Kaiming-uniform weights, zero biases, unit layer-norm gains. Each
    /// tensor is seeded by (seed, name) so components shared between the
    /// baseline and KDSM graphs start from identical values.
    static ModelParams init(const NetConfig& cfg, std::uint64_t seed);
};

/// Parameter node handles for one forward build.
struct BoundParams {
    std::map<std::string, NodeId> ids;
    NodeId at(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ModelParams& params);

NodeId vision_encode(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                     NodeId image);
NodeId keypoint_adapter(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                        NodeId raw);

struct VkraOut {
    NodeId y_t;     // [K x d]
    NodeId v_tilde; // [C_f x h x w]
};
VkraOut vkra_forward(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                     NodeId raw_text, NodeId vision_feat);

NodeId merge_residual(Graph& g, NodeId v, NodeId v_tilde);
NodeId vision_head(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                   NodeId feat);
NodeId vision_adapter(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                      NodeId h_raw);

struct ForwardOutputs {
    NodeId h_raw = -1;     // [O x hei x wid] (KDSM) or [K x hei x wid]
    NodeId t_adapted = -1; // [K x C]
    NodeId v_adapted = -1; // [C x O], KDSM only
    NodeId logits_p = -1;  // [K x O], KDSM only
};

ForwardOutputs baseline_forward(Graph& g, const BoundParams& bp,
                                const NetConfig& cfg, NodeId image,
                                NodeId raw_text);
ForwardOutputs kdsm_forward(Graph& g, const BoundParams& bp,
                            const NetConfig& cfg, NodeId image,
                            NodeId raw_text);

} // namespace kdsm
