#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kdsm/checkpoint.hpp"
#include "kdsm/evalkit.hpp"
#include "kdsm/matching.hpp"
#include "kdsm/network.hpp"
#include "kdsm/synthworld.hpp"
#include "kdsm/text.hpp"

namespace kdsm {

struct TrainConfig {
    std::string mode = "kdsm"; // "baseline" | "kdsm"
    int K = 100;
    int O = 100;
    int C = 64;
    int C0 = 512;
    int d = 512;
    int heads = 4;
    int self_layers = 3;
    int cross_layers = 3;
    int ffn_dim = 2048;
    double dropout = 0.1;
    double sigma = 2.0;
    int hei = 64, wid = 64;
    int image_size = 64;
    std::vector<int> encoder_widths = {16, 32, 64};
    std::vector<int> head_widths = {32, 16, 16};
    int kp_hidden = 0;
    int va_hidden = 256;
    double alpha = 1e-6;
    double beta = 1.0;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps = 2000;
    int batch = 16;
    std::uint64_t seed = 1;
    std::uint64_t text_seed = 0;
    int checkpoint_every = 500;
    int log_every = 50;
    std::string embedding_table; // optional KEMB path
    bool allow_synth_fallback = false;

    void validate() const;
    NetConfig net() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Stored-snapshot precedence: the checkpoint's config wins; a warning line
/// is appended to `warnings` for each field the caller tried to override.
TrainConfig config_from_checkpoint(const Checkpoint& ck,
                                   const TrainConfig* requested = nullptr,
                                   std::vector<std::string>* warnings = nullptr);

/// One training item: a dataset sample restricted to the keypoint indices
/// its split side may see.
struct SplitItem {
    int sample = 0;
    std::vector<int> kp_idx;
};

std::vector<SplitItem> split_items(const Dataset& data, const SplitPlan& split,
                                   bool train_side);

using StepCallback = std::function<void(int step, double loss)>;

Checkpoint train(const TrainConfig& cfg, const Dataset& data,
                 const SplitPlan& split, const std::string& out_path = "",
                 const Checkpoint* resume = nullptr,
                 const StepCallback& on_step = nullptr);

enum class AssignMode { MaxValue, Greedy };

MetricReport evaluate(const Checkpoint& ck, const Dataset& data,
                      const SplitPlan& split, AssignMode mode);

struct InferredKeypoint {
    PromptSpec prompt;
    double x = 0, y = 0; // input-image coordinates
    double score = 0;
    int group = -1; // selected heatmap channel (KDSM); -1 in baseline mode
};

std::vector<InferredKeypoint> infer(const Checkpoint& ck, const Tensor& image,
                                    const std::vector<PromptSpec>& prompts,
                                    AssignMode mode = AssignMode::MaxValue);

} // namespace kdsm
