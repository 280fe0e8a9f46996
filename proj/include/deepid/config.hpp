#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "supervision.hpp"
#include "trainer.hpp"

namespace deepid {

// Flat key=value run configuration. Every key has a documented default;
// unknown keys are errors. A resolved config written with write_config() is
// itself a loadable config file.

struct ConfigKey {
    const char* key;
    const char* def;
    const char* doc;
};

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"arch.input_h", "32", "input image height"},
        {"arch.input_w", "32", "input image width"},
        {"arch.input_channels", "1", "input channels (1 = grayscale)"},
        {"arch.conv_channels", "8,8,8,8", "feature maps per conv stage"},
        {"arch.kernels", "3,3,3,3", "odd square kernel size per stage (same padding, stride 1)"},
        {"arch.fc_dim", "64", "width of each supervised feature layer"},
        {"arch.num_identities", "0", "identity classifier width; 0 = use the train split size"},
        {"arch.seed", "1", "parameter initialization seed"},

        {"data.dir", "data", "dataset directory (written by gen-data, read by everything else)"},
        {"data.num_ids", "64", "generated identities"},
        {"data.imgs_per_id", "25", "generated images per identity"},
        {"data.num_attrs", "4", "generated binary attributes"},
        {"data.h", "32", "generated image height"},
        {"data.w", "32", "generated image width"},
        {"data.latent_dim", "6", "identity latent dimension"},
        {"data.seed", "7", "dataset generator seed"},
        {"data.train_ids", "40", "identities in the train split"},
        {"data.val_ids", "10", "identities in the validation split (rest go to test)"},

        {"train.batch", "32", "mini-batch size"},
        {"train.epochs", "30", "training epochs"},
        {"train.lr", "0.05", "initial learning rate"},
        {"train.lr_decay", "0.5", "learning-rate multiplier when patience runs out"},
        {"train.patience", "3", "epochs without validation improvement before decay"},
        {"train.momentum", "0.9", "SGD momentum"},
        {"train.weight_decay", "0.0001", "L2 weight decay"},
        {"train.positives_per_batch", "8", "same-identity pairs sampled per batch"},
        {"train.negatives_per_batch", "8", "different-identity pairs sampled per batch"},
        {"train.val_pairs", "200", "fixed validation pairs for the schedule metric"},
        {"train.checkpoint_every", "0", "periodic checkpoint cadence in epochs; 0 = best only"},
        {"train.seed", "1", "shuffling/pair-sampling seed"},

        {"verif.margin", "2.0", "contrastive margin on different-identity pairs"},
        {"verif.lambda", "0.05", "verification weight against identification"},
        {"verif.branch_weights", "1,1,1,1", "per-branch weights of the combined objective"},

        {"eval.pairs", "600", "verification pairs drawn from the test split (half positive)"},
        {"eval.folds", "10", "folds for pair-verification accuracy"},
        {"eval.layer", "4", "feature branch used for evaluation (1..4)"},
        {"eval.flip", "0", "1 = concatenate features of the mirrored image"},
        {"eval.metric", "jb", "identification metric: jb | l2 | cosine"},
        {"eval.far", "0.01", "false-alarm rate for open-set identification"},
        {"eval.gallery_per_id", "1", "gallery images per known identity"},
        {"eval.jb_shrinkage", "0.3", "Joint Bayesian covariance shrinkage"},
        {"eval.jb_em_iters", "0", "Joint Bayesian EM refinement iterations"},
        {"eval.seed", "3", "pair/protocol sampling seed"},

        {"analysis.levels", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7", "occlusion levels (fraction of height/side)"},
        {"analysis.fill", "0", "occluder pixel value"},
        {"analysis.metric", "cosine", "robustness metric: l2 | cosine | jb"},
        {"analysis.folds", "10", "folds for analysis verification accuracies"},
        {"analysis.pairs", "600", "pairs for analysis verification accuracies"},
        {"analysis.sources", "fc1,fc2,fc3,fc4,lbp", "feature sources in robustness sweeps"},
        {"analysis.split_seed", "11", "selectivity two-fold split seed"},
        {"analysis.bins", "20", "activation histogram bins"},
        {"analysis.top_neurons", "3", "excitatory/inhibitory neurons per histogram figure"},
        {"analysis.identities", "3", "identity targets in the selectivity study"},
        {"analysis.identity", "0", "test-split identity index for activation maps"},
        {"analysis.seed", "13", "occluder placement seed"},
    };
    return keys;
}

struct RunConfig {
    std::map<std::string, std::string> kv;  // resolved: every known key present
};

inline RunConfig default_config() {
    RunConfig rc;
    for (const ConfigKey& k : config_keys()) rc.kv[k.key] = k.def;
    return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open config file " + path.string());
    RunConfig rc = default_config();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed = line;
        const auto b = trimmed.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        trimmed = trimmed.substr(b);
        if (trimmed[0] == '#') continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw config_error(path.string() + ":" + std::to_string(lineno) + ": expected key=value, got '" + line +
                               "'");
        auto strip = [](std::string s) {
            const auto lo = s.find_first_not_of(" \t");
            const auto hi = s.find_last_not_of(" \t");
            return lo == std::string::npos ? std::string() : s.substr(lo, hi - lo + 1);
        };
        const std::string key = strip(trimmed.substr(0, eq));
        const std::string val = strip(trimmed.substr(eq + 1));
        if (!rc.kv.count(key))
            throw config_error(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        rc.kv[key] = val;
    }
    return rc;
}

inline void write_config(std::ostream& out, const RunConfig& rc) {
    for (const auto& [k, v] : rc.kv) out << k << "=" << v << "\n";
}

// ------------------------------------------------------------ typed accessors

inline const std::string& cfg_str(const RunConfig& rc, const std::string& key) {
    auto it = rc.kv.find(key);
    if (it == rc.kv.end()) throw config_error("internal: unknown config key '" + key + "'");
    return it->second;
}

inline int cfg_int(const RunConfig& rc, const std::string& key) {
    try {
        return std::stoi(cfg_str(rc, key));
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not an integer: '" + cfg_str(rc, key) + "'");
    }
}

inline std::uint64_t cfg_u64(const RunConfig& rc, const std::string& key) {
    try {
        return std::stoull(cfg_str(rc, key));
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not an unsigned integer: '" + cfg_str(rc, key) + "'");
    }
}

inline double cfg_real(const RunConfig& rc, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(cfg_str(rc, key), &pos);
        if (pos != cfg_str(rc, key).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not a real number: '" + cfg_str(rc, key) + "'");
    }
}

template <class T, class Parse>
inline std::vector<T> cfg_list(const RunConfig& rc, const std::string& key, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(cfg_str(rc, key));
    std::string tok;
    try {
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) out.push_back(parse(tok));
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not a comma list: '" + cfg_str(rc, key) + "'");
    }
    return out;
}

inline std::vector<int> cfg_int_list(const RunConfig& rc, const std::string& key) {
    return cfg_list<int>(rc, key, [](const std::string& s) { return std::stoi(s); });
}

inline std::vector<double> cfg_real_list(const RunConfig& rc, const std::string& key) {
    return cfg_list<double>(rc, key, [](const std::string& s) { return std::stod(s); });
}

inline std::vector<std::string> cfg_str_list(const RunConfig& rc, const std::string& key) {
    return cfg_list<std::string>(rc, key, [](const std::string& s) { return s; });
}

// --------------------------------------------------------- section builders

inline ArchConfig arch_from(const RunConfig& rc) {
    ArchConfig a;
    a.input_h = cfg_int(rc, "arch.input_h");
    a.input_w = cfg_int(rc, "arch.input_w");
    a.input_channels = cfg_int(rc, "arch.input_channels");
    const std::vector<int> ch = cfg_int_list(rc, "arch.conv_channels");
    const std::vector<int> ks = cfg_int_list(rc, "arch.kernels");
    if (ch.size() != 4) throw config_error("arch.conv_channels needs four values");
    if (ks.size() != 4) throw config_error("arch.kernels needs four values");
    for (int s = 0; s < 4; ++s) {
        a.conv_channels[s] = ch[s];
        a.kernels[s] = ks[s];
    }
    a.fc_dim = cfg_int(rc, "arch.fc_dim");
    a.num_identities = cfg_int(rc, "arch.num_identities");
    a.seed = cfg_u64(rc, "arch.seed");
    return a;
}

inline VerifConfig verif_from(const RunConfig& rc) {
    VerifConfig vc;
    vc.margin = static_cast<float>(cfg_real(rc, "verif.margin"));
    vc.lambda_ve = static_cast<float>(cfg_real(rc, "verif.lambda"));
    const std::vector<double> bw = cfg_real_list(rc, "verif.branch_weights");
    if (bw.size() != 4) throw config_error("verif.branch_weights needs four values");
    for (int s = 0; s < 4; ++s) vc.branch_weights[s] = static_cast<float>(bw[s]);
    return vc;
}

inline TrainConfig train_from(const RunConfig& rc) {
    TrainConfig tc;
    tc.batch = cfg_int(rc, "train.batch");
    tc.epochs = cfg_int(rc, "train.epochs");
    tc.lr = static_cast<float>(cfg_real(rc, "train.lr"));
    tc.lr_decay = static_cast<float>(cfg_real(rc, "train.lr_decay"));
    tc.patience = cfg_int(rc, "train.patience");
    tc.momentum = static_cast<float>(cfg_real(rc, "train.momentum"));
    tc.weight_decay = static_cast<float>(cfg_real(rc, "train.weight_decay"));
    tc.positives_per_batch = cfg_int(rc, "train.positives_per_batch");
    tc.negatives_per_batch = cfg_int(rc, "train.negatives_per_batch");
    tc.val_pairs = cfg_int(rc, "train.val_pairs");
    tc.checkpoint_every = cfg_int(rc, "train.checkpoint_every");
    tc.seed = cfg_u64(rc, "train.seed");
    tc.verif = verif_from(rc);
    return tc;
}

} // namespace deepid
