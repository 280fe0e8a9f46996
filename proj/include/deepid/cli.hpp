#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "analysis.hpp"
#include "config.hpp"
#include "svg.hpp"

namespace deepid {
namespace cli {

namespace fs = std::filesystem;

// Every run writes resolved_config.txt (all keys post-default) and seed.txt
// next to its artifacts; re-running from those files reproduces the CSV
// outputs byte for byte.
inline void write_run_stamp(const fs::path& out_dir, const RunConfig& rc) {
    fs::create_directories(out_dir);
    std::ofstream cfg(out_dir / "resolved_config.txt", std::ios::binary);
    if (!cfg) throw io_error("cannot write resolved_config.txt under " + out_dir.string());
    write_config(cfg, rc);
    std::ofstream seeds(out_dir / "seed.txt", std::ios::binary);
    if (!seeds) throw io_error("cannot write seed.txt under " + out_dir.string());
    for (const auto& [k, v] : rc.kv)
        if (k.find("seed") != std::string::npos) seeds << k << "=" << v << "\n";
}

struct SplitView {
    std::vector<Tensor> images;
    std::vector<int> ids;           // identity per image
    std::vector<std::size_t> global_index;  // position in the dataset image list
};

inline SplitView split_view(const Dataset& ds, const std::vector<int>& ids) {
    const std::set<int> wanted(ids.begin(), ids.end());
    SplitView v;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        if (!wanted.count(ds.images[i].identity)) continue;
        v.images.push_back(ds.images[i].pixels);
        v.ids.push_back(ds.images[i].identity);
        v.global_index.push_back(i);
    }
    if (v.images.empty()) throw config_error("dataset split is empty; check the manifest splits");
    return v;
}

inline Dataset load_data(const RunConfig& rc) {
    const std::string dir = cfg_str(rc, "data.dir");
    if (dir.empty()) throw config_error("data.dir is not set");
    return load_dataset(dir);
}

inline std::vector<PairIdx> eval_pairs(const SplitView& view, int total, std::uint64_t seed) {
    const int pos = total / 2;
    const int neg = total - pos;
    RngState rng(seed);
    const PairBatch pb = sample_distinct_pairs(view.ids, pos, neg, rng);
    std::vector<PairIdx> out;
    out.reserve(pb.pairs.size());
    for (const Pair& p : pb.pairs) out.push_back({p.a, p.b, p.same});
    return out;
}

// ------------------------------------------------------------------ gen-data

inline int run_gen_data(const RunConfig& rc, const fs::path& out_dir) {
    const Dataset ds = gen_dataset(cfg_int(rc, "data.num_ids"), cfg_int(rc, "data.imgs_per_id"),
                                   cfg_int(rc, "data.num_attrs"), cfg_int(rc, "data.h"), cfg_int(rc, "data.w"),
                                   cfg_u64(rc, "data.seed"), cfg_int(rc, "data.train_ids"),
                                   cfg_int(rc, "data.val_ids"), cfg_int(rc, "data.latent_dim"));
    write_dataset(ds, out_dir);
    write_run_stamp(out_dir, rc);
    std::cout << "gen-data: " << ds.images.size() << " images, " << ds.manifest.num_identities << " identities ("
              << ds.manifest.train_ids.size() << " train / " << ds.manifest.val_ids.size() << " val / "
              << ds.manifest.test_ids.size() << " test), " << ds.manifest.attribute_names.size()
              << " attributes -> " << out_dir.string() << "\n";
    return 0;
}

// --------------------------------------------------------------------- train

inline int run_train(const RunConfig& orig, const fs::path& out_dir) {
    RunConfig rc = orig;
    const Dataset ds = load_data(rc);
    const LabeledImages train_set = subset_by_ids(ds, ds.manifest.train_ids);
    const LabeledImages val_set = subset_by_ids(ds, ds.manifest.val_ids);

    ArchConfig arch = arch_from(rc);
    if (arch.num_identities == 0) {
        arch.num_identities = static_cast<int>(ds.manifest.train_ids.size());
        rc.kv["arch.num_identities"] = std::to_string(arch.num_identities);
    }
    arch.input_h = ds.manifest.height;
    arch.input_w = ds.manifest.width;
    arch.input_channels = ds.manifest.channels;
    rc.kv["arch.input_h"] = std::to_string(arch.input_h);
    rc.kv["arch.input_w"] = std::to_string(arch.input_w);
    rc.kv["arch.input_channels"] = std::to_string(arch.input_channels);

    const TrainConfig tc = train_from(rc);
    write_run_stamp(out_dir, rc);
    const TrainResult result = train(tc, arch, train_set, val_set, out_dir);
    save_checkpoint(result.params, arch, out_dir / "best.ckpt");
    {
        std::ofstream log(out_dir / "train_log.csv", std::ios::binary);
        write_train_log_csv(log, result.log);
    }
    const EpochRow& last = result.log.rows.back();
    std::cout << "train: " << result.log.rows.size() << " epochs, final loss " << format_real(last.train_loss, 6)
              << ", branch-4 train acc " << format_real(last.ident_acc[3], 6) << "\n";
    std::cout << "train: best validation pair accuracy " << format_real(result.best_val_acc, 6) << " at epoch "
              << result.best_epoch << " -> " << (out_dir / "best.ckpt").string() << "\n";
    return 0;
}

// --------------------------------------------------------------- eval-verify

inline int run_eval_verify(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const SplitView test = split_view(ds, ds.manifest.test_ids);
    const SplitView val = split_view(ds, ds.manifest.val_ids);

    const int layer = cfg_int(rc, "eval.layer");
    const bool flip = cfg_int(rc, "eval.flip") != 0;
    const std::vector<PairIdx> pairs = eval_pairs(test, cfg_int(rc, "eval.pairs"), cfg_u64(rc, "eval.seed"));
    const Tensor feats = extract_batch_features(params, arch, test.images, layer, flip);
    const Tensor val_feats = extract_batch_features(params, arch, val.images, layer, flip);
    const auto jb = std::make_shared<const JointBayesModel>(
        fit_joint_bayes(val_feats, val.ids, cfg_real(rc, "eval.jb_shrinkage"), cfg_int(rc, "eval.jb_em_iters")));

    write_run_stamp(out_dir, rc);
    {
        CsvWriter out(out_dir / "pairs.csv");
        out.row({"img_a", "img_b", "same"});
        for (const PairIdx& p : pairs)
            out.row({std::to_string(test.global_index[p.a]), std::to_string(test.global_index[p.b]),
                     p.same ? "1" : "0"});
    }

    const int folds = cfg_int(rc, "eval.folds");
    CsvWriter verify_csv(out_dir / "verify.csv");
    verify_csv.row({"metric", "accuracy", "std"});
    CsvWriter scores_csv(out_dir / "scores.csv");
    scores_csv.row({"metric", "img_a", "img_b", "same", "score"});
    CsvWriter roc_csv(out_dir / "roc.csv");
    roc_csv.row({"metric", "fpr", "tpr"});
    std::vector<svg::Series> roc_series;

    for (const std::string& metric : {std::string("jb"), std::string("l2"), std::string("cosine")}) {
        std::vector<ScoredPair> scored;
        for (const PairIdx& p : pairs) {
            const auto a = row_of(feats, p.a), b = row_of(feats, p.b);
            double s = 0.0;
            if (metric == "jb") s = jb_log_ratio(*jb, a, b);
            else if (metric == "l2") s = l2_score(a, b);
            else s = cosine_score(a, b);
            scored.push_back({s, p.same});
            scores_csv.row({metric, std::to_string(test.global_index[p.a]), std::to_string(test.global_index[p.b]),
                            p.same ? "1" : "0", format_real(s)});
        }
        const VerifAccuracy acc = verification_accuracy(scored, folds);
        verify_csv.row({metric, format_real(acc.mean), format_real(acc.stdev)});
        svg::Series series;
        series.label = metric;
        for (const RocPoint& pt : roc(scored)) {
            roc_csv.row({metric, format_real(pt.fpr), format_real(pt.tpr)});
            series.x.push_back(pt.fpr);
            series.y.push_back(pt.tpr);
        }
        roc_series.push_back(std::move(series));
        std::cout << "eval-verify: " << metric << " accuracy " << format_real(acc.mean, 6) << " +/- "
                  << format_real(acc.stdev, 6) << "\n";
    }
    std::ofstream roc_svg(out_dir / "roc.svg", std::ios::binary);
    svg::write_line_chart(roc_svg, "pair verification ROC (FC-" + std::to_string(layer) + ")",
                          "false positive rate", "true positive rate", roc_series);
    return 0;
}

// ---------------------------------------------------------------- eval-ident

inline int run_eval_ident(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const SplitView val = split_view(ds, ds.manifest.val_ids);

    std::vector<int> test_ids = ds.manifest.test_ids;
    if (test_ids.size() < 2) throw config_error("eval-ident: need at least two test identities");
    RngState rng(cfg_u64(rc, "eval.seed"));
    rng.shuffle(test_ids.begin(), test_ids.end());
    const std::size_t known_count = (test_ids.size() + 1) / 2;
    const std::vector<int> known_ids(test_ids.begin(), test_ids.begin() + known_count);
    const std::vector<int> unknown_ids(test_ids.begin() + known_count, test_ids.end());

    const int layer = cfg_int(rc, "eval.layer");
    const bool flip = cfg_int(rc, "eval.flip") != 0;
    const int per_id = cfg_int(rc, "eval.gallery_per_id");
    if (per_id < 1) throw config_error("eval.gallery_per_id must be >= 1");

    const std::set<int> known_set(known_ids.begin(), known_ids.end());
    std::map<int, int> seen;
    std::vector<Tensor> gallery_imgs, known_imgs, unknown_imgs;
    std::vector<int> gallery_lbl, known_lbl, unknown_lbl;
    for (const FaceImage& img : ds.images) {
        if (known_set.count(img.identity)) {
            if (seen[img.identity]++ < per_id) {
                gallery_imgs.push_back(img.pixels);
                gallery_lbl.push_back(img.identity);
            } else {
                known_imgs.push_back(img.pixels);
                known_lbl.push_back(img.identity);
            }
        } else if (std::find(unknown_ids.begin(), unknown_ids.end(), img.identity) != unknown_ids.end()) {
            unknown_imgs.push_back(img.pixels);
            unknown_lbl.push_back(img.identity);
        }
    }
    if (known_imgs.empty()) throw config_error("eval-ident: no known probes left outside the gallery");

    IdentSet gallery{extract_batch_features(params, arch, gallery_imgs, layer, flip), gallery_lbl};
    IdentSet known{extract_batch_features(params, arch, known_imgs, layer, flip), known_lbl};
    IdentSet unknown{extract_batch_features(params, arch, unknown_imgs, layer, flip), unknown_lbl};

    const std::string metric_name = cfg_str(rc, "eval.metric");
    Metric metric;
    if (metric_name == "l2") metric = l2_metric();
    else if (metric_name == "cosine") metric = cosine_metric();
    else if (metric_name == "jb") {
        const Tensor val_feats = extract_batch_features(params, arch, val.images, layer, flip);
        metric = jb_metric(std::make_shared<const JointBayesModel>(fit_joint_bayes(
            val_feats, val.ids, cfg_real(rc, "eval.jb_shrinkage"), cfg_int(rc, "eval.jb_em_iters"))));
    } else {
        throw config_error("eval.metric must be jb, l2, or cosine, got '" + metric_name + "'");
    }

    const double far = cfg_real(rc, "eval.far");
    const double rank1 = rank1_closed(gallery, known, metric);
    const double dir = dir_at_far(gallery, known, unknown, far, metric);

    write_run_stamp(out_dir, rc);
    CsvWriter csv(out_dir / "ident.csv");
    csv.row({"measure", "metric", "value"});
    csv.row({"rank1_closed", metric_name, format_real(rank1)});
    csv.row({"dir_at_far_" + format_real(far, 4), metric_name, format_real(dir)});
    std::cout << "eval-ident: rank-1 closed-set " << format_real(rank1, 6) << " (" << metric_name << ", "
              << known.ids.size() << " probes, gallery " << gallery.ids.size() << ")\n";
    std::cout << "eval-ident: DIR at FAR " << format_real(far, 4) << " = " << format_real(dir, 6) << " ("
              << unknown.ids.size() << " unknown probes)\n";
    return 0;
}

// ------------------------------------------------------------------- analyze

inline std::vector<FeatureSource> feature_sources(const RunConfig& rc, const ModelParams& params,
                                                  const ArchConfig& arch) {
    const bool flip = cfg_int(rc, "eval.flip") != 0;
    std::vector<FeatureSource> sources;
    for (const std::string& name : cfg_str_list(rc, "analysis.sources")) {
        if (name == "fc1" || name == "fc2" || name == "fc3" || name == "fc4") {
            const int layer = name[2] - '0';
            sources.push_back({name, [&params, &arch, layer, flip](const std::vector<Tensor>& imgs) {
                                   return extract_batch_features(params, arch, imgs, layer, flip);
                               }});
        } else if (name == "lbp") {
            sources.push_back({name, [](const std::vector<Tensor>& imgs) { return lbp_baseline(imgs); }});
        } else {
            throw argument_error("analysis.sources: unknown feature source '" + name + "'");
        }
    }
    return sources;
}

inline int run_analyze_sparsity(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const SplitView test = split_view(ds, ds.manifest.test_ids);
    const Tensor feats =
        extract_batch_features(params, arch, test.images, cfg_int(rc, "eval.layer"), cfg_int(rc, "eval.flip") != 0);
    const SparsityReport rep = sparsity_report(feats);

    write_run_stamp(out_dir, rc);
    {
        CsvWriter csv(out_dir / "sparsity.csv");
        csv.row({"stat", "value"});
        csv.row({"images", std::to_string(feats.dim(0))});
        csv.row({"neurons", std::to_string(feats.dim(1))});
        csv.row({"per_image_mean", format_real(rep.image_mean)});
        csv.row({"per_image_std", format_real(rep.image_std)});
        csv.row({"per_image_rate", format_real(rep.image_rate)});
        csv.row({"per_neuron_mean", format_real(rep.neuron_mean)});
        csv.row({"per_neuron_std", format_real(rep.neuron_std)});
        csv.row({"per_neuron_rate", format_real(rep.neuron_rate)});
    }
    auto dump_hist = [&](const std::string& stem, const Histogram& h, const std::string& xlab) {
        CsvWriter csv(out_dir / (stem + ".csv"));
        csv.row({"bin_lo", "bin_hi", "count"});
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            csv.row({format_real(h.lo + h.width * static_cast<double>(i)),
                     format_real(h.lo + h.width * static_cast<double>(i + 1)), std::to_string(h.counts[i])});
        std::ofstream svg_out(out_dir / (stem + ".svg"), std::ios::binary);
        svg::write_histogram(svg_out, stem, xlab, h.lo, h.width, h.counts);
    };
    dump_hist("sparsity_image_hist", rep.image_hist, "activated neurons per image");
    dump_hist("sparsity_neuron_hist", rep.neuron_hist, "images per activated neuron");
    std::cout << "sparsity: per-image " << format_real(rep.image_mean, 6) << " +/- " << format_real(rep.image_std, 6)
              << " of " << feats.dim(1) << " neurons (rate " << format_real(rep.image_rate, 4) << ")\n";
    std::cout << "sparsity: per-neuron " << format_real(rep.neuron_mean, 6) << " +/- "
              << format_real(rep.neuron_std, 6) << " of " << feats.dim(0) << " images (rate "
              << format_real(rep.neuron_rate, 4) << ")\n";
    return 0;
}

inline int run_analyze_binarize(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const SplitView test = split_view(ds, ds.manifest.test_ids);
    const SplitView val = split_view(ds, ds.manifest.val_ids);
    const int layer = cfg_int(rc, "eval.layer");
    const bool flip = cfg_int(rc, "eval.flip") != 0;

    const std::vector<PairIdx> pairs = eval_pairs(test, cfg_int(rc, "analysis.pairs"), cfg_u64(rc, "eval.seed"));
    const Tensor feats = extract_batch_features(params, arch, test.images, layer, flip);
    const Tensor fit_feats = extract_batch_features(params, arch, val.images, layer, flip);
    const BinarizationTable table =
        binarization_experiment(feats, test.ids, pairs, cfg_int(rc, "analysis.folds"), fit_feats, val.ids,
                                cfg_real(rc, "eval.jb_shrinkage"), cfg_int(rc, "eval.jb_em_iters"));

    write_run_stamp(out_dir, rc);
    CsvWriter csv(out_dir / "binarize.csv");
    csv.row({"representation", "metric", "accuracy", "std"});
    auto emit = [&](const char* rep, const char* met, const VerifAccuracy& a) {
        csv.row({rep, met, format_real(a.mean), format_real(a.stdev)});
        std::cout << "binarize: " << rep << "+" << met << " accuracy " << format_real(a.mean, 6) << " +/- "
                  << format_real(a.stdev, 6) << "\n";
    };
    emit("real", "jb", table.real_jb);
    emit("real", "l2", table.real_l2);
    emit("binary", "jb", table.binary_jb);
    emit("binary", "hamming", table.binary_hamming);
    return 0;
}

inline int run_analyze_selectivity(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const SplitView test = split_view(ds, ds.manifest.test_ids);
    const int layer = cfg_int(rc, "eval.layer");
    const bool flip = cfg_int(rc, "eval.flip") != 0;
    const std::uint64_t split_seed = cfg_u64(rc, "analysis.split_seed");
    const int bins = cfg_int(rc, "analysis.bins");
    const int top_neurons = cfg_int(rc, "analysis.top_neurons");

    const Tensor deep = extract_batch_features(params, arch, test.images, layer, flip);
    const Tensor lbp = lbp_baseline(test.images);

    struct Target {
        std::string name;
        std::vector<std::uint8_t> mask;
    };
    std::vector<Target> targets;
    const std::size_t n = test.images.size();
    for (std::size_t a = 0; a < ds.manifest.attribute_names.size(); ++a) {
        Target t;
        t.name = ds.manifest.attribute_names[a];
        t.mask.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            t.mask[i] = ds.images[test.global_index[i]].attributes.size() > a &&
                        ds.images[test.global_index[i]].attributes[a];
        targets.push_back(std::move(t));
    }
    const int id_targets = std::min<int>(cfg_int(rc, "analysis.identities"),
                                         static_cast<int>(ds.manifest.test_ids.size()));
    for (int k = 0; k < id_targets; ++k) {
        Target t;
        t.name = "identity_" + std::to_string(ds.manifest.test_ids[k]);
        t.mask.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.mask[i] = test.ids[i] == ds.manifest.test_ids[k];
        targets.push_back(std::move(t));
    }

    write_run_stamp(out_dir, rc);
    CsvWriter csv(out_dir / "selectivity.csv");
    csv.row({"target", "best_neuron", "best_acc", "polarity", "lbp_best_feature", "lbp_best_acc"});
    for (const Target& t : targets) {
        bool pos = false, neg = false;
        for (std::uint8_t b : t.mask) (b ? pos : neg) = true;
        if (!pos || !neg) {
            std::cout << "selectivity: skipping '" << t.name << "' (single-class target in the test split)\n";
            continue;
        }
        const SelectivityReport drep = per_neuron_accuracy(deep, t.mask, split_seed);
        const SelectivityReport lrep = per_neuron_accuracy(lbp, t.mask, split_seed);
        const NeuronStat& best = drep.neurons[drep.best_neuron];
        csv.row({t.name, std::to_string(drep.best_neuron), format_real(drep.best_heldout_acc),
                 best.excitatory ? "excitatory" : "inhibitory", std::to_string(lrep.best_neuron),
                 format_real(lrep.best_heldout_acc)});
        std::cout << "selectivity: " << t.name << " best neuron " << drep.best_neuron << " acc "
                  << format_real(drep.best_heldout_acc, 6) << " (lbp best " << format_real(lrep.best_heldout_acc, 6)
                  << ")\n";

        const ExcitationProfile prof = excitation_profile(deep, t.mask, split_seed);
        {
            CsvWriter pcsv(out_dir / ("selectivity_profile_" + t.name + ".csv"));
            pcsv.row({"rank", "neuron", "target_mean", "target_std", "comp_mean", "comp_std", "heldout_acc",
                      "polarity"});
            for (std::size_t r = 0; r < prof.by_rank.size(); ++r) {
                const NeuronStat& s = prof.by_rank[r];
                pcsv.row({std::to_string(r), std::to_string(s.neuron), format_real(s.target_mean),
                          format_real(s.target_std), format_real(s.comp_mean), format_real(s.comp_std),
                          format_real(s.heldout_acc), s.excitatory ? "excitatory" : "inhibitory"});
            }
            svg::Series tm{"target mean", {}, {}}, cm{"others mean", {}, {}}, ac{"accuracy", {}, {}};
            for (std::size_t r = 0; r < prof.by_rank.size(); ++r) {
                tm.x.push_back(static_cast<double>(r));
                tm.y.push_back(prof.by_rank[r].target_mean);
                cm.x.push_back(static_cast<double>(r));
                cm.y.push_back(prof.by_rank[r].comp_mean);
                ac.x.push_back(static_cast<double>(r));
                ac.y.push_back(prof.by_rank[r].heldout_acc);
            }
            std::ofstream svg_out(out_dir / ("selectivity_profile_" + t.name + ".svg"), std::ios::binary);
            svg::write_line_chart(svg_out, "neuron profile: " + t.name, "neuron rank (by target mean)", "value",
                                  {tm, cm, ac});
        }

        // activation histograms of the most selective excitatory/inhibitory neurons
        std::vector<std::size_t> picks;
        auto pick_best = [&](bool excitatory) {
            std::vector<std::size_t> order(drep.neurons.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return drep.neurons[a].heldout_acc > drep.neurons[b].heldout_acc;
            });
            int taken = 0;
            for (std::size_t idx : order) {
                if (drep.neurons[idx].excitatory == excitatory && taken < top_neurons) {
                    picks.push_back(idx);
                    ++taken;
                }
            }
        };
        pick_best(true);
        pick_best(false);
        std::vector<std::pair<std::string, std::vector<std::uint8_t>>> subsets;
        subsets.emplace_back("all", std::vector<std::uint8_t>(n, 1));
        subsets.emplace_back(t.name, t.mask);
        std::vector<std::uint8_t> comp(n);
        for (std::size_t i = 0; i < n; ++i) comp[i] = !t.mask[i];
        subsets.emplace_back("rest", comp);
        const ActivationHistograms hists = activation_histograms(deep, subsets, picks, bins);
        CsvWriter hcsv(out_dir / ("selectivity_hist_" + t.name + ".csv"));
        hcsv.row({"neuron", "subset", "bin_lo", "bin_hi", "count"});
        for (const NeuronHistograms& nh : hists.neurons) {
            const double width = (nh.hi - nh.lo) / bins;
            for (const auto& [subset, counts] : nh.per_subset)
                for (std::size_t bi = 0; bi < counts.size(); ++bi)
                    hcsv.row({std::to_string(nh.neuron), subset,
                              format_real(nh.lo + width * static_cast<double>(bi)),
                              format_real(nh.lo + width * static_cast<double>(bi + 1)),
                              std::to_string(counts[bi])});
        }
        if (!hists.neurons.empty()) {
            std::vector<svg::Series> ser;
            const NeuronHistograms& nh = hists.neurons.front();
            const double width = (nh.hi - nh.lo) / bins;
            for (const auto& [subset, counts] : nh.per_subset) {
                svg::Series s;
                s.label = subset;
                for (std::size_t bi = 0; bi < counts.size(); ++bi) {
                    s.x.push_back(nh.lo + width * (static_cast<double>(bi) + 0.5));
                    s.y.push_back(static_cast<double>(counts[bi]));
                }
                ser.push_back(std::move(s));
            }
            std::ofstream svg_out(out_dir / ("selectivity_hist_" + t.name + ".svg"), std::ios::binary);
            svg::write_line_chart(svg_out, "activation histogram, neuron " + std::to_string(nh.neuron) + " (" +
                                               t.name + ")",
                                  "activation", "count", ser);
        }
    }
    return 0;
}

inline int run_analyze_robustness(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const SplitView test = split_view(ds, ds.manifest.test_ids);
    const SplitView val = split_view(ds, ds.manifest.val_ids);

    const std::vector<FeatureSource> sources = feature_sources(rc, params, arch);
    const std::vector<PairIdx> pairs = eval_pairs(test, cfg_int(rc, "analysis.pairs"), cfg_u64(rc, "eval.seed"));
    const std::vector<double> levels = cfg_real_list(rc, "analysis.levels");
    const float fill = static_cast<float>(cfg_real(rc, "analysis.fill"));
    const int folds = cfg_int(rc, "analysis.folds");
    const std::string metric_name = cfg_str(rc, "analysis.metric");
    MetricKind metric;
    if (metric_name == "l2") metric = MetricKind::l2;
    else if (metric_name == "cosine") metric = MetricKind::cosine;
    else if (metric_name == "jb") metric = MetricKind::jb;
    else throw config_error("analysis.metric must be jb, l2, or cosine, got '" + metric_name + "'");

    write_run_stamp(out_dir, rc);
    CsvWriter csv(out_dir / "robustness.csv");
    csv.row({"kind", "level", "source", "accuracy", "std"});
    std::vector<svg::Series> series;
    for (const OcclusionKind kind : {OcclusionKind::partial, OcclusionKind::block}) {
        const std::string kind_name = kind == OcclusionKind::partial ? "partial" : "block";
        RngState rng(cfg_u64(rc, "analysis.seed") + (kind == OcclusionKind::block ? 1 : 0));
        const RobustnessCurve curve =
            robustness_sweep(sources, test.images, pairs, kind, levels, fill, metric, folds, rng, &val.images,
                             &val.ids, cfg_real(rc, "eval.jb_shrinkage"), cfg_int(rc, "eval.jb_em_iters"));
        for (std::size_t s = 0; s < curve.sources.size(); ++s) {
            svg::Series ser;
            ser.label = kind_name + " " + curve.sources[s];
            for (std::size_t li = 0; li < curve.levels.size(); ++li) {
                csv.row({kind_name, format_real(curve.levels[li]), curve.sources[s],
                         format_real(curve.accuracy[s][li].mean), format_real(curve.accuracy[s][li].stdev)});
                ser.x.push_back(curve.levels[li]);
                ser.y.push_back(curve.accuracy[s][li].mean);
            }
            series.push_back(std::move(ser));
            std::cout << "robustness: " << kind_name << " " << curve.sources[s] << " accuracy "
                      << format_real(curve.accuracy[s].front().mean, 6) << " at level 0 -> "
                      << format_real(curve.accuracy[s].back().mean, 6) << " at level "
                      << format_real(curve.levels.back(), 4) << "\n";
        }
    }
    std::ofstream svg_out(out_dir / "robustness.svg", std::ios::binary);
    svg::write_line_chart(svg_out, "verification accuracy under occlusion (" + metric_name + ")",
                          "occlusion level", "verification accuracy", series);
    return 0;
}

inline int run_analyze_activation_map(const RunConfig& rc, const fs::path& ckpt, const fs::path& out_dir) {
    auto [params, arch] = load_checkpoint(ckpt);
    const Dataset ds = load_data(rc);
    const int which = cfg_int(rc, "analysis.identity");
    if (which < 0 || static_cast<std::size_t>(which) >= ds.manifest.test_ids.size())
        throw config_error("analysis.identity is outside the test split");
    const int identity = ds.manifest.test_ids[which];
    std::vector<Tensor> imgs;
    for (const FaceImage& img : ds.images)
        if (img.identity == identity) imgs.push_back(img.pixels);

    const std::vector<double> levels = cfg_real_list(rc, "analysis.levels");
    const float fill = static_cast<float>(cfg_real(rc, "analysis.fill"));
    write_run_stamp(out_dir, rc);
    for (const OcclusionKind kind : {OcclusionKind::partial, OcclusionKind::block}) {
        const std::string kind_name = kind == OcclusionKind::partial ? "partial" : "block";
        RngState rng(cfg_u64(rc, "analysis.seed") + (kind == OcclusionKind::block ? 1 : 0));
        const ActivationMap map = mean_activation_map(params, arch, imgs, kind, levels, fill, rng);
        CsvWriter csv(out_dir / ("activation_map_" + kind_name + ".csv"));
        csv.row({"level", "rank", "neuron", "mean_activation"});
        std::vector<std::string> labels;
        for (std::size_t li = 0; li < map.levels.size(); ++li) {
            labels.push_back(format_real(map.levels[li], 4));
            for (std::size_t r = 0; r < map.column_order.size(); ++r)
                csv.row({format_real(map.levels[li]), std::to_string(r), std::to_string(map.column_order[r]),
                         format_real(map.values[li][r])});
        }
        std::ofstream svg_out(out_dir / ("activation_map_" + kind_name + ".svg"), std::ios::binary);
        svg::write_heatmap(svg_out, "mean FC-4 activations, identity " + std::to_string(identity) + " (" +
                                        kind_name + " occlusion)",
                           "neuron (sorted by unoccluded mean)", "occlusion level", labels, map.values);
        std::cout << "activation-map: " << kind_name << " map over " << imgs.size() << " images of identity "
                  << identity << " -> " << (out_dir / ("activation_map_" + kind_name + ".csv")).string() << "\n";
    }
    return 0;
}

// ------------------------------------------------------------------ dispatch

inline int dispatch(std::vector<std::string> args) {
    CLI::App app{"DeepID2+ desk-scale lab: multi-branch ConvNet training, verification protocols, and analyses"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, analyze_what;
    int threads = 0;

    auto add_common = [&](CLI::App* sub, bool need_config, bool need_ckpt) {
        if (need_config)
            sub->add_option("--config", config_path, "run configuration file")->required();
        else
            sub->add_option("--config", config_path, "run configuration file");
        sub->add_option("--out", out_dir, "artifact output directory")->required();
        if (need_ckpt) sub->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
        sub->add_option("--threads", threads, "worker thread cap (or env DID2_THREADS)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic identity/attribute dataset");
    add_common(gen, false, false);
    CLI::App* train_cmd = app.add_subcommand("train", "train the network on a generated dataset");
    add_common(train_cmd, true, false);
    CLI::App* everify = app.add_subcommand("eval-verify", "pair verification protocol on the test split");
    add_common(everify, true, true);
    CLI::App* eident = app.add_subcommand("eval-ident", "closed- and open-set identification protocols");
    add_common(eident, true, true);
    CLI::App* analyze = app.add_subcommand("analyze", "sparsity | binarize | selectivity | robustness | activation-map");
    analyze->add_option("what", analyze_what, "which analysis to run")->required();
    add_common(analyze, true, true);

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (threads <= 0) {
            const char* env = std::getenv("DID2_THREADS");
            threads = env ? std::atoi(env) : 1;
        }
        set_max_threads(threads);

        const RunConfig rc = config_path.empty() ? default_config() : load_config(config_path);
        if (app.got_subcommand(gen)) return run_gen_data(rc, out_dir);
        if (app.got_subcommand(train_cmd)) return run_train(rc, out_dir);
        if (app.got_subcommand(everify)) return run_eval_verify(rc, ckpt_path, out_dir);
        if (app.got_subcommand(eident)) return run_eval_ident(rc, ckpt_path, out_dir);
        if (app.got_subcommand(analyze)) {
            if (analyze_what == "sparsity") return run_analyze_sparsity(rc, ckpt_path, out_dir);
            if (analyze_what == "binarize") return run_analyze_binarize(rc, ckpt_path, out_dir);
            if (analyze_what == "selectivity") return run_analyze_selectivity(rc, ckpt_path, out_dir);
            if (analyze_what == "robustness") return run_analyze_robustness(rc, ckpt_path, out_dir);
            if (analyze_what == "activation-map") return run_analyze_activation_map(rc, ckpt_path, out_dir);
            std::cerr << "error: unknown analysis '" << analyze_what << "'\n\n" << analyze->help();
            return 2;
        }
        std::cerr << app.help();
        return 2;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace cli
} // namespace deepid
