#include "kdsm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <json.hpp>

#include "kdsm/rng.hpp"

using json = nlohmann::json;

namespace kdsm {

void TrainConfig::validate() const {
    if (mode != "kdsm" && mode != "baseline")
        throw ConfigError("config: mode must be 'kdsm' or 'baseline'");
    if (alpha < 0 || beta < 0)
        throw ConfigError("config: alpha and beta must be >= 0");
    if (sigma <= 0) throw ConfigError("config: sigma must be positive");
    if (steps <= 0 || batch <= 0)
        throw ConfigError("config: steps and batch must be positive");
    if (lr <= 0) throw ConfigError("config: learning rate must be positive");
    if (checkpoint_every <= 0 || log_every <= 0)
        throw ConfigError("config: checkpoint_every/log_every must be positive");
    net().validate();
}

NetConfig TrainConfig::net() const {
    NetConfig n;
    n.kdsm_mode = mode == "kdsm";
    n.image_size = image_size;
    n.c0 = C0;
    n.c = C;
    n.d = d;
    n.heads = heads;
    n.ffn_dim = ffn_dim;
    n.self_layers = self_layers;
    n.cross_layers = cross_layers;
    n.dropout = dropout;
    n.K = K;
    n.O = O;
    n.hei = hei;
    n.wid = wid;
    n.encoder_widths = encoder_widths;
    n.head_widths = head_widths;
    n.kp_hidden = kp_hidden;
    n.va_hidden = va_hidden;
    return n;
}

std::string TrainConfig::to_json() const {
    json j;
    j["mode"] = mode;
    j["K"] = K;
    j["O"] = O;
    j["C"] = C;
    j["C0"] = C0;
    j["d"] = d;
    j["heads"] = heads;
    j["self_layers"] = self_layers;
    j["cross_layers"] = cross_layers;
    j["ffn_dim"] = ffn_dim;
    j["dropout"] = dropout;
    j["sigma"] = sigma;
    j["hei"] = hei;
    j["wid"] = wid;
    j["image_size"] = image_size;
    j["encoder_widths"] = encoder_widths;
    j["head_widths"] = head_widths;
    j["kp_hidden"] = kp_hidden;
    j["va_hidden"] = va_hidden;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["lr"] = lr;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["steps"] = steps;
    j["batch"] = batch;
    j["seed"] = seed;
    j["text_seed"] = text_seed;
    j["checkpoint_every"] = checkpoint_every;
    j["log_every"] = log_every;
    j["embedding_table"] = embedding_table;
    j["allow_synth_fallback"] = allow_synth_fallback;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config json: ") + e.what());
    }
    TrainConfig c;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key))
            field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("mode", c.mode);
    get("K", c.K);
    get("O", c.O);
    get("C", c.C);
    get("C0", c.C0);
    get("d", c.d);
    get("heads", c.heads);
    get("self_layers", c.self_layers);
    get("cross_layers", c.cross_layers);
    get("ffn_dim", c.ffn_dim);
    get("dropout", c.dropout);
    get("sigma", c.sigma);
    get("hei", c.hei);
    get("wid", c.wid);
    get("image_size", c.image_size);
    get("encoder_widths", c.encoder_widths);
    get("head_widths", c.head_widths);
    get("kp_hidden", c.kp_hidden);
    get("va_hidden", c.va_hidden);
    get("alpha", c.alpha);
    get("beta", c.beta);
    get("lr", c.lr);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("steps", c.steps);
    get("batch", c.batch);
    get("seed", c.seed);
    get("text_seed", c.text_seed);
    get("checkpoint_every", c.checkpoint_every);
    get("log_every", c.log_every);
    get("embedding_table", c.embedding_table);
    get("allow_synth_fallback", c.allow_synth_fallback);
    return c;
}

TrainConfig config_from_checkpoint(const Checkpoint& ck,
                                   const TrainConfig* requested,
                                   std::vector<std::string>* warnings) {
    TrainConfig stored = TrainConfig::from_json(ck.config_json);
    if (requested && warnings && requested->to_json() != stored.to_json())
        warnings->push_back(
            "checkpoint config snapshot differs from the requested config; "
            "the stored snapshot wins");
    return stored;
}

std::vector<SplitItem> split_items(const Dataset& data, const SplitPlan& split,
                                   bool train_side) {
    std::vector<SplitItem> items;
    if (split.setting == 'B') {
        const auto& names = train_side ? split.train_species : split.test_species;
        const std::set<std::string> keep(names.begin(), names.end());
        for (int i = 0; i < static_cast<int>(data.samples.size()); ++i) {
            const Sample& s = data.samples[static_cast<std::size_t>(i)];
            if (!keep.count(s.species)) continue;
            SplitItem it;
            it.sample = i;
            it.kp_idx.resize(s.prompts.size());
            std::iota(it.kp_idx.begin(), it.kp_idx.end(), 0);
            items.push_back(std::move(it));
        }
        return items;
    }
    const auto& by_species =
        train_side ? split.train_categories : split.test_categories;
    for (int i = 0; i < static_cast<int>(data.samples.size()); ++i) {
        const Sample& s = data.samples[static_cast<std::size_t>(i)];
        auto it = by_species.find(s.species);
        if (it == by_species.end()) continue;
        const std::set<std::string> keep(it->second.begin(), it->second.end());
        SplitItem item;
        item.sample = i;
        for (int k = 0; k < static_cast<int>(s.prompts.size()); ++k)
            if (keep.count(s.prompts[static_cast<std::size_t>(k)].keypoint_category))
                item.kp_idx.push_back(k);
        if (!item.kp_idx.empty()) items.push_back(std::move(item));
    }
    return items;
}

namespace {

struct TextBundle {
    EmbeddingTable table;
    bool has_table = false;
    TextSource source;

    void wire() {
        if (has_table) source.table = &table;
    }
};

TextBundle make_text_source(const TrainConfig& cfg) {
    TextBundle b;
    b.source.dim = cfg.C0;
    b.source.seed = cfg.text_seed;
    b.source.allow_synth_fallback = cfg.allow_synth_fallback;
    if (!cfg.embedding_table.empty()) {
        b.table = load_table(cfg.embedding_table);
        b.has_table = true;
    }
    b.wire();
    return b;
}

// A sample restricted to its split-visible keypoints.
struct ItemView {
    const Sample* sample = nullptr;
    Tensor image; // possibly augmented copy
    std::vector<PromptSpec> prompts;
    KeypointSet kps;
};

ItemView make_view(const Dataset& data, const SplitItem& item) {
    ItemView v;
    v.sample = &data.samples[static_cast<std::size_t>(item.sample)];
    v.image = v.sample->image;
    for (int k : item.kp_idx) {
        v.prompts.push_back(v.sample->prompts[static_cast<std::size_t>(k)]);
        v.kps.coords.push_back(v.sample->kps.coords[static_cast<std::size_t>(k)]);
        v.kps.visible.push_back(v.sample->kps.visible[static_cast<std::size_t>(k)]);
    }
    v.kps.bbox = v.sample->kps.bbox;
    return v;
}

void augment_view(ItemView& v, std::uint64_t aug_seed) {
    Sample tmp;
    tmp.image = std::move(v.image);
    tmp.kps = v.kps;
    tmp.species = v.sample->species;
    Sample out = augment(tmp, aug_seed);
    v.image = std::move(out.image);
    v.kps = out.kps;
}

ModelParams params_from_checkpoint(const Checkpoint& ck,
                                   const TrainConfig& cfg) {
    ModelParams params = ModelParams::init(cfg.net(), cfg.seed);
    for (auto& [name, tensor] : params.store.items()) {
        const Tensor* src = ck.find(name);
        if (!src)
            throw DataError("checkpoint: missing tensor " + name);
        if (src->shape != tensor.shape)
            throw DataError("checkpoint: shape mismatch for " + name + ", " +
                            shape_str(src->shape) + " vs " +
                            shape_str(tensor.shape));
        tensor.data = src->data;
    }
    return params;
}

struct AdamState {
    std::vector<Eigen::VectorXd> m, v;
    long t = 0;
};

// Selected-channel decode with image-coordinate rescaling; sel -1 means no
// channel (invalid prediction).
std::vector<DecodedKeypoint> decode_selection(const Tensor& h_raw,
                                              const std::vector<int>& sel,
                                              double coord_scale) {
    const int hei = h_raw.shape[1], wid = h_raw.shape[2];
    std::vector<DecodedKeypoint> out;
    for (int s : sel) {
        DecodedKeypoint d;
        if (s >= 0) {
            double best = h_raw.at(s, 0, 0);
            int bi = 0, bj = 0;
            for (int i = 0; i < hei; ++i)
                for (int j = 0; j < wid; ++j)
                    if (h_raw.at(s, i, j) > best) {
                        best = h_raw.at(s, i, j);
                        bi = i;
                        bj = j;
                    }
            d.x = bj * coord_scale;
            d.y = bi * coord_scale;
            d.score = best;
            d.valid = best > 0.0;
        }
        out.push_back(d);
    }
    return out;
}

std::vector<int> select_channels(const Tensor& p_matrix, int K_valid,
                                 AssignMode mode) {
    if (mode == AssignMode::MaxValue) return row_selection(p_matrix, K_valid);
    // Greedy assignment runs on the valid prompt rows only; padded
    // placeholder rows must not claim channels.
    const int O = p_matrix.shape[1];
    Tensor valid_rows = Tensor::zeros({K_valid, O});
    valid_rows.mat2d() = p_matrix.mat(p_matrix.shape[0], O).topRows(K_valid);
    PredictedMatrix pm;
    pm.p = std::move(valid_rows);
    return greedy_assign(pm).l;
}

class Trainer {
public:
    Trainer(const TrainConfig& cfg, const Dataset& data, const SplitPlan& split)
        : cfg_(cfg), data_(data), net_(cfg.net()), text_(make_text_source(cfg)) {
        cfg_.validate();
        items_ = split_items(data, split, /*train_side=*/true);
        if (items_.empty())
            throw DataError("train: split has no training items");
        for (const SplitItem& it : items_)
            if (static_cast<int>(it.kp_idx.size()) > cfg_.K)
                throw CapacityError("train: sample has more prompts than K");
        if (net_.kdsm_mode) grouping_ = cluster_training_categories();
    }

    Checkpoint run(const std::string& out_path, const Checkpoint* resume,
                   const StepCallback& on_step);

private:
    Grouping cluster_training_categories() {
        std::set<SpeciesCategory> pairs;
        for (const SplitItem& it : items_) {
            const Sample& s = data_.samples[static_cast<std::size_t>(it.sample)];
            for (int k : it.kp_idx)
                pairs.insert(
                    {s.species,
                     s.prompts[static_cast<std::size_t>(k)].keypoint_category});
        }
        // the paper clusters the {keypoint category} term embeddings
        std::vector<LabeledEmbedding> embs;
        for (const auto& p : pairs)
            embs.push_back({p, text_.source.encode(p.second)});
        return constrained_kmeans(embs, cfg_.O, cfg_.seed);
    }

    const PromptBatch& prompt_batch(const ItemView& v) {
        auto it = prompt_cache_.find(v.sample->species);
        if (it != prompt_cache_.end()) return it->second;
        PromptBatch b = embed_batch(v.prompts, text_.source, cfg_.K);
        return prompt_cache_.emplace(v.sample->species, std::move(b))
            .first->second;
    }

    const DomainMatrix& domain_matrix(const ItemView& v) {
        auto it = dm_cache_.find(v.sample->species);
        if (it != dm_cache_.end()) return it->second;
        std::vector<SpeciesCategory> pairs;
        for (const PromptSpec& p : v.prompts)
            pairs.push_back({p.species, p.keypoint_category});
        DomainMatrix dm = build_domain_matrix(pairs, grouping_, cfg_.K);
        return dm_cache_.emplace(v.sample->species, std::move(dm)).first->second;
    }

    const std::vector<int>& epoch_perm(long epoch) {
        auto it = perm_cache_.find(epoch);
        if (it != perm_cache_.end()) return it->second;
        std::vector<int> perm(items_.size());
        std::iota(perm.begin(), perm.end(), 0);
        SplitMix64 rng(mix_seed(cfg_.seed, 0x65706f63ULL,
                                static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = perm.size() - 1; i > 0; --i)
            std::swap(perm[i], perm[rng.below(i + 1)]);
        if (perm_cache_.size() > 4) perm_cache_.clear();
        return perm_cache_.emplace(epoch, std::move(perm)).first->second;
    }

    Checkpoint make_checkpoint(const ModelParams& params, const AdamState& adam,
                               long completed_steps,
                               const std::vector<std::string>& log_tail) const {
        Checkpoint ck;
        ck.config_json = cfg_.to_json();
        for (const auto& [name, t] : params.store.items())
            ck.tensors.emplace_back(name, t);
        const auto& items = params.store.items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            Tensor m(items[i].second.shape, adam.m[i]);
            Tensor v(items[i].second.shape, adam.v[i]);
            ck.tensors.emplace_back("adam.m." + items[i].first, std::move(m));
            ck.tensors.emplace_back("adam.v." + items[i].first, std::move(v));
        }
        ck.tensors.emplace_back(
            "trainer.step",
            Tensor::scalar(static_cast<double>(completed_steps)));
        ck.has_grouping = net_.kdsm_mode;
        if (net_.kdsm_mode) ck.grouping = grouping_;
        ck.log_tail = log_tail;
        return ck;
    }

    TrainConfig cfg_;
    const Dataset& data_;
    NetConfig net_;
    TextBundle text_;
    std::vector<SplitItem> items_;
    Grouping grouping_;
    std::map<std::string, PromptBatch> prompt_cache_;
    std::map<std::string, DomainMatrix> dm_cache_;
    std::map<long, std::vector<int>> perm_cache_;
};

Checkpoint Trainer::run(const std::string& out_path, const Checkpoint* resume,
                        const StepCallback& on_step) {
    ModelParams params = ModelParams::init(net_, cfg_.seed);
    const std::size_t n_params = params.store.items().size();
    AdamState adam;
    adam.m.resize(n_params);
    adam.v.resize(n_params);
    for (std::size_t i = 0; i < n_params; ++i) {
        const auto numel = params.store.items()[i].second.numel();
        adam.m[i] = Eigen::VectorXd::Zero(numel);
        adam.v[i] = Eigen::VectorXd::Zero(numel);
    }
    long start_step = 0;
    std::vector<std::string> log_tail;

    if (resume) {
        const TrainConfig stored = config_from_checkpoint(*resume);
        if (stored.to_json() != cfg_.to_json())
            throw ConfigError("resume: checkpoint was trained with a "
                              "different config");
        for (std::size_t i = 0; i < n_params; ++i) {
            auto& [name, tensor] = params.store.items()[i];
            const Tensor* w = resume->find(name);
            const Tensor* m = resume->find("adam.m." + name);
            const Tensor* v = resume->find("adam.v." + name);
            if (!w || !m || !v)
                throw DataError("resume: checkpoint missing state for " + name);
            tensor.data = w->data;
            adam.m[i] = m->data;
            adam.v[i] = v->data;
        }
        const Tensor* st = resume->find("trainer.step");
        if (!st) throw DataError("resume: checkpoint missing trainer.step");
        start_step = static_cast<long>(st->data[0]);
        adam.t = start_step;
        log_tail = resume->log_tail;
    }

    const long n_items = static_cast<long>(items_.size());
    std::vector<Eigen::VectorXd> finite_snapshot(n_params);
    long snapshot_step = -1;

    for (long step = start_step; step < cfg_.steps; ++step) {
        double lr = cfg_.lr;
        if (step >= (9 * static_cast<long>(cfg_.steps)) / 10)
            lr *= 0.01;
        else if (step >= (7 * static_cast<long>(cfg_.steps)) / 10)
            lr *= 0.1;

        Graph g;
        g.set_mode(true, mix_seed(cfg_.seed, 0xd70011ULL,
                                  static_cast<std::uint64_t>(step)));
        BoundParams bp = bind_params(g, params);

        NodeId batch_loss = -1;
        for (int j = 0; j < cfg_.batch; ++j) {
            const long gidx = step * cfg_.batch + j;
            const std::vector<int>& perm = epoch_perm(gidx / n_items);
            const SplitItem& item =
                items_[static_cast<std::size_t>(perm[static_cast<std::size_t>(gidx % n_items)])];
            ItemView v = make_view(data_, item);
            const PromptBatch& pb = prompt_batch(v); // prompts are augment-invariant
            augment_view(v, mix_seed(cfg_.seed, 0xa7621ULL,
                                     static_cast<std::uint64_t>(gidx)));

            const int gt_channels = net_.kdsm_mode ? cfg_.O : cfg_.K;
            HeatmapStack gt = encode_gaussian(v.kps, gt_channels, cfg_.hei,
                                              cfg_.wid, cfg_.sigma,
                                              cfg_.image_size);
            NodeId img = g.constant(std::move(v.image));
            NodeId raw = g.constant(pb.raw);

            NodeId sample_loss;
            if (net_.kdsm_mode) {
                ForwardOutputs out = kdsm_forward(g, bp, net_, img, raw);
                LossNodes ln = total_loss_graph(g, out.h_raw, out.logits_p,
                                                domain_matrix(v), gt,
                                                cfg_.alpha, cfg_.beta);
                sample_loss = ln.total;
            } else {
                ForwardOutputs out = baseline_forward(g, bp, net_, img, raw);
                // masked MSE over the first K_valid channels only
                const int kv = pb.K_valid;
                std::vector<int> first(static_cast<std::size_t>(kv));
                std::iota(first.begin(), first.end(), 0);
                NodeId pred = ops::gather_channels(g, out.h_raw, first, kv);
                Tensor gt_kv = Tensor::zeros({kv, cfg_.hei, cfg_.wid});
                gt_kv.data = gt.channels.data.segment(
                    0, static_cast<std::int64_t>(kv) * cfg_.hei * cfg_.wid);
                sample_loss = ops::mse(g, pred, g.constant(std::move(gt_kv)));
            }
            batch_loss = (batch_loss < 0)
                             ? sample_loss
                             : ops::add(g, batch_loss, sample_loss);
        }
        batch_loss = ops::scale(g, batch_loss, 1.0 / cfg_.batch);
        const double loss_val = g.value(batch_loss).data[0];

        if (!std::isfinite(loss_val)) {
            if (snapshot_step >= 0) {
                for (std::size_t i = 0; i < n_params; ++i)
                    params.store.items()[i].second.data = finite_snapshot[i];
            }
            Checkpoint ck = make_checkpoint(params, adam, std::max(snapshot_step, 0L),
                                            log_tail);
            if (!out_path.empty()) save_checkpoint(ck, out_path);
            throw NumericError("train: non-finite loss at step " +
                               std::to_string(step) +
                               "; last finite state saved");
        }

        for (std::size_t i = 0; i < n_params; ++i)
            finite_snapshot[i] = params.store.items()[i].second.data;
        snapshot_step = step;

        g.backward(batch_loss);
        adam.t += 1;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(adam.t));
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(adam.t));
        for (std::size_t i = 0; i < n_params; ++i) {
            auto& [name, tensor] = params.store.items()[i];
            const NodeId id = bp.at(name);
            Eigen::VectorXd grad =
                g.has_grad(id) ? g.grad(id)
                               : Eigen::VectorXd::Zero(tensor.numel()).eval();
            adam.m[i] = cfg_.adam_beta1 * adam.m[i] + (1.0 - cfg_.adam_beta1) * grad;
            adam.v[i] = cfg_.adam_beta2 * adam.v[i].array().matrix() +
                        (1.0 - cfg_.adam_beta2) * grad.cwiseProduct(grad);
            const Eigen::ArrayXd mhat = adam.m[i].array() / bc1;
            const Eigen::ArrayXd vhat = adam.v[i].array() / bc2;
            tensor.data.array() -=
                lr * mhat / (vhat.sqrt() + cfg_.adam_eps);
        }

        const long done = step + 1;
        if (done % cfg_.log_every == 0 || done == cfg_.steps) {
            char line[96];
            std::snprintf(line, sizeof(line), "step %ld loss %.17g", done,
                          loss_val);
            log_tail.emplace_back(line);
            if (log_tail.size() > 50)
                log_tail.erase(log_tail.begin(),
                               log_tail.end() - 50);
        }
        if (on_step) on_step(static_cast<int>(done), loss_val);
        if (!out_path.empty() && done % cfg_.checkpoint_every == 0 &&
            done < cfg_.steps)
            save_checkpoint(make_checkpoint(params, adam, done, log_tail),
                            out_path);
    }

    Checkpoint ck = make_checkpoint(params, adam, cfg_.steps, log_tail);
    if (!out_path.empty()) save_checkpoint(ck, out_path);
    return ck;
}

} // namespace

Checkpoint train(const TrainConfig& cfg, const Dataset& data,
                 const SplitPlan& split, const std::string& out_path,
                 const Checkpoint* resume, const StepCallback& on_step) {
    Trainer t(cfg, data, split);
    return t.run(out_path, resume, on_step);
}

namespace {

struct EvalModel {
    TrainConfig cfg;
    NetConfig net;
    ModelParams params;
    TextBundle text;
};

EvalModel eval_model(const Checkpoint& ck) {
    EvalModel m{config_from_checkpoint(ck), {}, {}, {}};
    m.net = m.cfg.net();
    m.params = params_from_checkpoint(ck, m.cfg);
    m.text = make_text_source(m.cfg);
    return m;
}

std::vector<DecodedKeypoint> forward_decode(EvalModel& m,
                                            const Tensor& image,
                                            const PromptBatch& pb,
                                            AssignMode mode,
                                            std::vector<int>* groups_out) {
    Graph g;
    g.set_mode(false);
    BoundParams bp = bind_params(g, m.params);
    NodeId img = g.constant(image);
    NodeId raw = g.constant(pb.raw);
    const double coord_scale =
        static_cast<double>(m.cfg.image_size) / m.cfg.hei;
    std::vector<int> sel;
    const Tensor* maps = nullptr;
    if (m.net.kdsm_mode) {
        ForwardOutputs out = kdsm_forward(g, bp, m.net, img, raw);
        PredictedMatrix p = predict_P(g.value(out.logits_p));
        sel = select_channels(p.p, pb.K_valid, mode);
        maps = &g.value(out.h_raw);
    } else {
        ForwardOutputs out = baseline_forward(g, bp, m.net, img, raw);
        for (int i = 0; i < pb.K_valid; ++i) sel.push_back(i);
        maps = &g.value(out.h_raw);
    }
    if (groups_out) *groups_out = sel;
    return decode_selection(*maps, sel, coord_scale);
}

} // namespace

MetricReport evaluate(const Checkpoint& ck, const Dataset& data,
                      const SplitPlan& split, AssignMode mode) {
    EvalModel m = eval_model(ck);
    const std::vector<SplitItem> items =
        split_items(data, split, /*train_side=*/false);
    if (items.empty()) throw DataError("evaluate: split has no test items");

    std::map<std::string, PromptBatch> cache;
    FoldAccumulator acc;
    for (const SplitItem& item : items) {
        ItemView v = make_view(data, item);
        auto it = cache.find(v.sample->species);
        if (it == cache.end())
            it = cache.emplace(v.sample->species,
                               embed_batch(v.prompts, m.text.source, m.cfg.K))
                     .first;
        std::vector<DecodedKeypoint> preds =
            forward_decode(m, v.image, it->second, mode, nullptr);
        acc.add(preds, v.kps);
    }
    FoldScore fs;
    fs.fold = split.fold;
    fs.pck02 = acc.pck(0.2);
    fs.pck005 = acc.pck(0.05);
    fs.nme = acc.nme();
    fs.keypoints = acc.keypoints();
    return aggregate({fs});
}

std::vector<InferredKeypoint> infer(const Checkpoint& ck, const Tensor& image,
                                    const std::vector<PromptSpec>& prompts,
                                    AssignMode mode) {
    if (prompts.empty()) throw ValidationError("infer: no prompts given");
    EvalModel m = eval_model(ck);
    if (static_cast<int>(prompts.size()) > m.cfg.K)
        throw CapacityError("infer: more prompts than K=" +
                            std::to_string(m.cfg.K));
    PromptBatch pb = embed_batch(prompts, m.text.source, m.cfg.K);
    std::vector<int> groups;
    std::vector<DecodedKeypoint> preds =
        forward_decode(m, image, pb, mode, &groups);
    std::vector<InferredKeypoint> out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        InferredKeypoint k;
        k.prompt = prompts[i];
        k.x = preds[i].x;
        k.y = preds[i].y;
        k.score = preds[i].score;
        k.group = m.net.kdsm_mode ? groups[i] : -1;
        out.push_back(std::move(k));
    }
    return out;
}

} // namespace kdsm
