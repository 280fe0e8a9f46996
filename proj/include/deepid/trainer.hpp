#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "csv.hpp"
#include "facegen.hpp"
#include "supervision.hpp"
#include "verify.hpp"

namespace deepid {

struct LabeledImages {
    Tensor images;                  // [N,C,H,W]
    std::vector<int> labels;        // contiguous class index per row
    std::vector<int> identity_ids;  // original dataset identity per row
};

// Images of the listed identities, labels remapped to their position in `ids`.
inline LabeledImages subset_by_ids(const Dataset& ds, const std::vector<int>& ids) {
    std::map<int, int> remap;
    for (std::size_t i = 0; i < ids.size(); ++i) remap[ids[i]] = static_cast<int>(i);
    std::vector<const FaceImage*> picked;
    for (const FaceImage& img : ds.images)
        if (remap.count(img.identity)) picked.push_back(&img);
    if (picked.empty()) throw argument_error("subset_by_ids: no images match the requested identities");
    const Shape& s = picked[0]->pixels.shape();
    LabeledImages out;
    out.images = Tensor({picked.size(), s[0], s[1], s[2]});
    for (std::size_t i = 0; i < picked.size(); ++i) {
        std::copy(picked[i]->pixels.data(), picked[i]->pixels.data() + picked[i]->pixels.size(),
                  out.images.data() + i * picked[i]->pixels.size());
        out.labels.push_back(remap[picked[i]->identity]);
        out.identity_ids.push_back(picked[i]->identity);
    }
    return out;
}

inline std::vector<Tensor> rows_as_images(const LabeledImages& set) {
    const std::size_t n = set.images.dim(0);
    const Shape img_shape{set.images.dim(1), set.images.dim(2), set.images.dim(3)};
    const std::size_t stride = numel(img_shape);
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t(img_shape);
        std::copy(set.images.data() + i * stride, set.images.data() + (i + 1) * stride, t.data());
        out.push_back(std::move(t));
    }
    return out;
}

struct TrainConfig {
    int batch = 32;
    int epochs = 30;
    float lr = 0.05f;
    float lr_decay = 0.5f;  // multiplier applied when patience runs out
    int patience = 3;       // epochs without validation improvement before decay
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
    int positives_per_batch = 8;
    int negatives_per_batch = 8;
    int val_pairs = 200;        // schedule metric: L2-threshold pair accuracy on FC-4
    int checkpoint_every = 0;   // periodic checkpoint cadence in epochs; 0 disables
    std::uint64_t seed = 1;
    VerifConfig verif;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.batch < 2) throw config_error("train: batch must be >= 2");
    if (cfg.epochs < 1) throw config_error("train: epochs must be >= 1");
    if (!(cfg.lr > 0.0f)) throw config_error("train: lr must be positive");
    if (!(cfg.lr_decay > 0.0f && cfg.lr_decay <= 1.0f)) throw config_error("train: lr_decay must be in (0,1]");
    if (cfg.patience < 1) throw config_error("train: patience must be >= 1");
    if (!(cfg.momentum >= 0.0f && cfg.momentum < 1.0f)) throw config_error("train: momentum must be in [0,1)");
    if (!(cfg.weight_decay >= 0.0f)) throw config_error("train: weight_decay must be >= 0");
    if (cfg.positives_per_batch < 0 || cfg.negatives_per_batch < 0)
        throw config_error("train: pair counts must be >= 0");
    if (cfg.val_pairs < 2) throw config_error("train: val_pairs must be >= 2");
    if (cfg.checkpoint_every < 0) throw config_error("train: checkpoint_every must be >= 0");
    validate(cfg.verif);
}

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    std::array<double, 4> ident_acc{};  // per-branch batch accuracy over the epoch
    double val_acc = 0.0;
    float lr = 0.0f;
};

struct TrainLog {
    std::vector<EpochRow> rows;
};

inline void write_train_log_csv(std::ostream& out, const TrainLog& log) {
    out << "epoch,train_loss,ident_acc_fc1,ident_acc_fc2,ident_acc_fc3,ident_acc_fc4,val_verif_acc,lr\n";
    for (const EpochRow& r : log.rows) {
        out << r.epoch << ',' << format_real(r.train_loss);
        for (double a : r.ident_acc) out << ',' << format_real(a);
        out << ',' << format_real(r.val_acc) << ',' << format_real(static_cast<double>(r.lr)) << '\n';
    }
}

struct TrainResult {
    ModelParams params;  // best-validation checkpoint
    TrainLog log;
    double best_val_acc = 0.0;
    int best_epoch = 0;
};

// ------------------------------------------------------------- checkpoint I/O

namespace detail {

inline void write_u32le(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(std::istream& in, const std::string& section) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw io_error("checkpoint truncated in " + section);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::string arch_header_text(const ArchConfig& cfg) {
    std::string s;
    s += "input_h=" + std::to_string(cfg.input_h) + "\n";
    s += "input_w=" + std::to_string(cfg.input_w) + "\n";
    s += "input_channels=" + std::to_string(cfg.input_channels) + "\n";
    s += "conv_channels=" + std::to_string(cfg.conv_channels[0]) + "," + std::to_string(cfg.conv_channels[1]) + "," +
         std::to_string(cfg.conv_channels[2]) + "," + std::to_string(cfg.conv_channels[3]) + "\n";
    s += "kernels=" + std::to_string(cfg.kernels[0]) + "," + std::to_string(cfg.kernels[1]) + "," +
         std::to_string(cfg.kernels[2]) + "," + std::to_string(cfg.kernels[3]) + "\n";
    s += "fc_dim=" + std::to_string(cfg.fc_dim) + "\n";
    s += "num_identities=" + std::to_string(cfg.num_identities) + "\n";
    s += "seed=" + std::to_string(cfg.seed) + "\n";
    return s;
}

inline ArchConfig parse_arch_header(const std::string& text) {
    ArchConfig cfg;
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string line;
    auto four = [](const std::string& v, const char* key) {
        const std::vector<int> vals = split_ints(v);
        if (vals.size() != 4) throw io_error(std::string("checkpoint header: ") + key + " needs four values");
        return std::array<int, 4>{vals[0], vals[1], vals[2], vals[3]};
    };
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw io_error("checkpoint header: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        try {
            if (key == "input_h") cfg.input_h = std::stoi(val);
            else if (key == "input_w") cfg.input_w = std::stoi(val);
            else if (key == "input_channels") cfg.input_channels = std::stoi(val);
            else if (key == "conv_channels") cfg.conv_channels = four(val, "conv_channels");
            else if (key == "kernels") cfg.kernels = four(val, "kernels");
            else if (key == "fc_dim") cfg.fc_dim = std::stoi(val);
            else if (key == "num_identities") cfg.num_identities = std::stoi(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else throw io_error("checkpoint header: unknown key '" + key + "'");
        } catch (const io_error&) {
            throw;
        } catch (const std::exception&) {
            throw io_error("checkpoint header: cannot parse '" + line + "'");
        }
        seen.insert(key);
    }
    for (const char* key : {"input_h", "input_w", "input_channels", "conv_channels", "kernels", "fc_dim",
                            "num_identities", "seed"})
        if (!seen.count(key)) throw io_error(std::string("checkpoint header: missing key '") + key + "'");
    return cfg;
}

} // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

// Format: magic "DID2", format version u32, then a length-prefixed textual
// header (the ArchConfig as key=value lines), then the 24 parameter tensors in
// the ModelParams order, each as rank u32, extents u32[], and a row-major
// payload of 32-bit little-endian IEEE-754 reals.
inline void save_checkpoint(const ModelParams& params, const ArchConfig& arch, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("save_checkpoint: cannot open " + path.string());
    out.write("DID2", 4);
    detail::write_u32le(out, kCheckpointVersion);
    const std::string header = detail::arch_header_text(arch);
    detail::write_u32le(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const Tensor* t : params.tensors()) {
        detail::write_u32le(out, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t i = 0; i < t->rank(); ++i) detail::write_u32le(out, static_cast<std::uint32_t>(t->dim(i)));
        for (std::size_t i = 0; i < t->size(); ++i)
            detail::write_u32le(out, std::bit_cast<std::uint32_t>((*t)[i]));
    }
    if (!out) throw io_error("save_checkpoint: failed writing " + path.string());
}

inline std::pair<ModelParams, ArchConfig> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "DID2", 4) != 0)
        throw io_error("load_checkpoint: bad magic in " + path.string() + " (not a DID2 checkpoint)");
    const std::uint32_t version = detail::read_u32le(in, "version");
    if (version != kCheckpointVersion)
        throw io_error("load_checkpoint: unsupported format version " + std::to_string(version));
    const std::uint32_t header_len = detail::read_u32le(in, "header length");
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (static_cast<std::uint32_t>(in.gcount()) != header_len) throw io_error("checkpoint truncated in header");
    const ArchConfig arch = detail::parse_arch_header(header);
    ModelParams params = zero_params(arch);
    const std::vector<std::string> names = param_tensor_names();
    std::size_t idx = 0;
    for (Tensor* t : params.tensors()) {
        const std::string& name = names[idx++];
        const std::uint32_t rank = detail::read_u32le(in, "tensor " + name + " rank");
        if (rank != t->rank())
            throw io_error("load_checkpoint: tensor " + name + " has rank " + std::to_string(rank) + ", expected " +
                           std::to_string(t->rank()));
        for (std::size_t i = 0; i < t->rank(); ++i) {
            const std::uint32_t ext = detail::read_u32le(in, "tensor " + name + " extents");
            if (ext != t->dim(i))
                throw io_error("load_checkpoint: tensor " + name + " extent " + std::to_string(i) + " is " +
                               std::to_string(ext) + ", expected " + std::to_string(t->dim(i)));
        }
        for (std::size_t i = 0; i < t->size(); ++i)
            (*t)[i] = std::bit_cast<float>(detail::read_u32le(in, "tensor " + name + " payload"));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw io_error("load_checkpoint: trailing bytes after the last tensor");
    return {std::move(params), arch};
}

// ------------------------------------------------------------- training loop

namespace detail {

inline Tensor gather_rows(const Tensor& images, const std::vector<std::size_t>& idx) {
    const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t stride = c * h * w;
    Tensor out({idx.size(), c, h, w});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(images.data() + idx[i] * stride, images.data() + (idx[i] + 1) * stride, out.data() + i * stride);
    return out;
}

// Schedule metric: best single L2 threshold on FC-4 features over a fixed
// validation pair list. Cheap on purpose; no Joint Bayesian inside the loop.
inline double val_pair_accuracy(const ModelParams& params, const ArchConfig& arch, const Tensor& val_images,
                                const PairBatch& pairs) {
    const std::size_t n = val_images.dim(0);
    std::vector<Tensor> imgs;
    imgs.reserve(n);
    const std::size_t stride = val_images.dim(1) * val_images.dim(2) * val_images.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t({val_images.dim(1), val_images.dim(2), val_images.dim(3)});
        std::copy(val_images.data() + i * stride, val_images.data() + (i + 1) * stride, t.data());
        imgs.push_back(std::move(t));
    }
    const Tensor feats = extract_batch_features(params, arch, imgs, 4, false);
    std::vector<ScoredPair> scored;
    scored.reserve(pairs.pairs.size());
    for (const Pair& p : pairs.pairs)
        scored.push_back({l2_score(row_of(feats, p.a), row_of(feats, p.b)), p.same});
    return threshold_accuracy(scored, choose_threshold(scored));
}

} // namespace detail

// Shuffled mini-batch SGD with the combined identification-verification
// objective on all four branches. The learning rate decays by lr_decay when
// the validation metric fails to improve for `patience` epochs; the
// best-validation parameters are returned. Deterministic given the seed.
inline TrainResult train(const TrainConfig& cfg, const ArchConfig& arch, const LabeledImages& train_set,
                         const LabeledImages& val_set, const std::filesystem::path& checkpoint_dir = {}) {
    validate(cfg);
    validate(arch);
    const std::size_t n = train_set.images.dim(0);
    if (n < 2) throw argument_error("train: training set needs at least two images");
    if (train_set.labels.size() != n) throw shape_error("train: label count does not match image count");
    for (int l : train_set.labels)
        if (l < 0 || l >= arch.num_identities)
            throw config_error("train: label " + std::to_string(l) + " outside [0," +
                               std::to_string(arch.num_identities) + "); set arch num_identities accordingly");
    {
        const std::set<int> a(train_set.identity_ids.begin(), train_set.identity_ids.end());
        for (int id : val_set.identity_ids)
            if (a.count(id))
                throw argument_error("train: identity " + std::to_string(id) +
                                     " appears in both the train and validation sets");
    }

    RngState rng(cfg.seed);
    ModelParams params = init_params(arch);  // deterministic from arch.seed
    ModelParams velocity = zero_params(arch);

    RngState val_rng = rng.fork(0x7A11);
    const int vp = std::max(1, cfg.val_pairs / 2);
    const PairBatch val_pairs = sample_distinct_pairs(val_set.labels, vp, vp, val_rng);

    TrainResult result;
    result.best_val_acc = -1.0;
    float lr = cfg.lr;
    int since_improve = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        std::array<std::size_t, 4> correct{};
        std::size_t seen = 0;

        for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch));
            if (hi - lo < 2) continue;
            std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);

            PairBatch pairs;
            std::vector<int> labels;
            Tensor batch;
            for (int attempt = 0;; ++attempt) {
                labels.clear();
                for (std::size_t i : idx) labels.push_back(train_set.labels[i]);
                try {
                    pairs = sample_pairs(labels, cfg.positives_per_batch, cfg.negatives_per_batch, rng);
                    break;
                } catch (const sampling_error&) {
                    if (attempt >= 64) throw;
                    // redraw the whole batch from the training set
                    std::vector<std::size_t> all(n);
                    std::iota(all.begin(), all.end(), 0);
                    rng.shuffle(all.begin(), all.end());
                    idx.assign(all.begin(), all.begin() + (hi - lo));
                }
            }
            batch = detail::gather_rows(train_set.images, idx);

            auto [outs, tape] = forward(params, arch, batch);
            const CombinedObjective obj = combined_objective(outs, labels, pairs, cfg.verif);
            if (!std::isfinite(obj.loss))
                throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batches));
            for (int s = 0; s < kNumStages; ++s) {
                const Tensor& lg = outs.logits[s];
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    std::size_t best = 0;
                    for (std::size_t k = 1; k < lg.dim(1); ++k)
                        if (lg(i, k) > lg(i, best)) best = k;
                    correct[s] += static_cast<int>(best) == labels[i];
                }
            }
            seen += idx.size();

            const ModelParams grads = model_backward(arch, tape, obj.grad_fc, obj.grad_logits);
            // weight decay applies to weight matrices only, not biases
            const auto p_all = params.tensors();
            const auto g_all = grads.tensors();
            const auto v_all = velocity.tensors();
            std::vector<Tensor*> pw, vw, pb, vb;
            std::vector<const Tensor*> gw, gb;
            for (std::size_t t = 0; t < p_all.size(); ++t) {
                if (p_all[t]->rank() >= 2) {
                    pw.push_back(p_all[t]);
                    gw.push_back(g_all[t]);
                    vw.push_back(v_all[t]);
                } else {
                    pb.push_back(p_all[t]);
                    gb.push_back(g_all[t]);
                    vb.push_back(v_all[t]);
                }
            }
            sgd_step(pw, gw, vw, lr, cfg.momentum, cfg.weight_decay);
            sgd_step(pb, gb, vb, lr, cfg.momentum, 0.0f);
            loss_sum += obj.loss;
            ++batches;
        }

        const double val_acc = detail::val_pair_accuracy(params, arch, val_set.images, val_pairs);
        EpochRow row;
        row.epoch = epoch;
        row.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        for (int s = 0; s < kNumStages; ++s)
            row.ident_acc[s] = seen ? static_cast<double>(correct[s]) / static_cast<double>(seen) : 0.0;
        row.val_acc = val_acc;
        row.lr = lr;
        result.log.rows.push_back(row);

        if (val_acc > result.best_val_acc) {
            result.best_val_acc = val_acc;
            result.best_epoch = epoch;
            result.params = params;
            since_improve = 0;
        } else {
            ++since_improve;
            if (since_improve >= cfg.patience) {
                lr *= cfg.lr_decay;
                since_improve = 0;
            }
        }
        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
            save_checkpoint(params, arch, checkpoint_dir / name);
        }
    }
    return result;
}

// Post-hoc identification accuracy of one branch over a labeled set.
inline double ident_accuracy(const ModelParams& params, const ArchConfig& arch, const LabeledImages& set,
                             int branch, std::size_t chunk = 64) {
    if (branch < 1 || branch > kNumStages) throw argument_error("ident_accuracy: branch must be in 1..4");
    const std::size_t n = set.images.dim(0);
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const Tensor batch = detail::gather_rows(set.images, idx);
        auto [outs, tape] = forward(params, arch, batch);
        (void)tape;
        const Tensor& lg = outs.logits[branch - 1];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < lg.dim(1); ++k)
                if (lg(i, k) > lg(i, best)) best = k;
            correct += static_cast<int>(best) == set.labels[idx[i]];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace deepid
