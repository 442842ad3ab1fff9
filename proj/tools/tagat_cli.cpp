// tagat: vessel-graph driven multi-modal retinal image fusion.
//
// Subcommands: synth, graph-extract, train, fuse, evaluate, ablate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tagat/data_io.hpp"
#include "tagat/error.hpp"
#include "tagat/metrics.hpp"
#include "tagat/pipeline.hpp"
#include "tagat/vessel_graph.hpp"

namespace fs = std::filesystem;
using namespace tagat;

namespace {

int cmd_synth(const std::string& out_dir, int count, int height, int width, int depth,
              uint64_t seed) {
    fs::create_directories(out_dir);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
        SyntheticSceneSpec spec;
        spec.height = height;
        spec.width = width;
        spec.vessel_tree_depth = depth;
        spec.seed = seed + static_cast<uint64_t>(i);
        RegisteredPair pair = generate_synthetic_pair(spec);
        std::string id = "synth" + std::to_string(i);
        ManifestEntry e;
        e.id = id;
        e.image1 = id + "_1.png";
        e.image2 = id + "_2.png";
        e.mask1 = id + "_mask.png";
        e.mask2 = id + "_mask.png";
        save_png_gray(pair.image1, (fs::path(out_dir) / e.image1).string());
        save_png_gray(pair.image2, (fs::path(out_dir) / e.image2).string());
        save_png_mask(*pair.mask1, (fs::path(out_dir) / e.mask1).string());
        entries.push_back(e);
    }
    write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), entries);
    std::cout << "wrote " << count << " pairs to " << out_dir << "\n";
    return 0;
}

int cmd_graph_extract(const std::string& image_path, const std::string& mask_path,
                      const std::string& out_path, bool no_prune) {
    Plane mask;
    if (!mask_path.empty()) {
        RegisteredPair tmp = load_pair(image_path.empty() ? mask_path : image_path,
                                       image_path.empty() ? mask_path : image_path,
                                       mask_path, std::nullopt);
        mask = *tmp.mask1;
    } else {
        if (image_path.empty()) throw ConfigError("graph-extract: need --image or --mask");
        RegisteredPair tmp = load_pair(image_path, image_path);
        mask = segment_vessels(tmp.image1);
    }
    VesselGraph g = extract_graph(skeletonize(mask), no_prune ? 0 : 3);
    std::ofstream out(out_path);
    if (!out) throw FormatError("graph-extract: cannot write " + out_path);
    out << graph_to_json(g) << "\n";
    std::cout << "nodes " << g.node_count() << " edges " << g.edge_count() << " -> " << out_path
              << "\n";
    return 0;
}

Dataset dataset_from_config(const TrainConfig& cfg) {
    if (cfg.manifest.empty()) throw ConfigError("config: manifest path is required for training");
    std::string base = fs::path(cfg.manifest).parent_path().string();
    return prepare_dataset(read_manifest(cfg.manifest), cfg, base);
}

int cmd_train(const std::string& config_path, int stage, const std::string& from_ckpt) {
    TrainConfig cfg = TrainConfig::from_json_file(config_path);
    if (cfg.out_dir.empty()) cfg.out_dir = "runs";
    fs::create_directories(cfg.out_dir);
    Dataset data = dataset_from_config(cfg);
    std::ofstream log((fs::path(cfg.out_dir) / ("stage" + std::to_string(stage) + "_log.jsonl"))
                          .string());

    TrainOutput out;
    if (stage == 1) {
        out = train_stage1(data, cfg, &log);
    } else {
        std::string s1 = from_ckpt.empty()
                             ? (fs::path(cfg.out_dir) / "stage1.ckpt").string()
                             : from_ckpt;
        out = train_stage2(data, cfg, Checkpoint::load(s1), &log);
    }
    std::string ckpt_path =
        (fs::path(cfg.out_dir) / ("stage" + std::to_string(stage) + (out.aborted ? "_lastgood" : "") +
                                  ".ckpt"))
            .string();
    out.checkpoint.save(ckpt_path);
    if (out.aborted) {
        std::cerr << "training aborted (" << out.abort_reason << "); last good state saved to "
                  << ckpt_path << "\n";
        return 2;
    }
    std::cout << "stage " << stage << " done: " << out.steps.size() << " steps, checkpoint "
              << ckpt_path << "\n";
    return 0;
}

int cmd_fuse(const std::string& ckpt_path, const std::string& img1, const std::string& img2,
             const std::string& mask1, const std::string& mask2, const std::string& out_path,
             const std::string& metrics_path, const std::string& attention_path,
             bool color_recompose) {
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    std::optional<std::string> m1, m2;
    if (!mask1.empty()) m1 = mask1;
    if (!mask2.empty()) m2 = mask2;
    RegisteredPair pair = load_pair(img1, img2, m1, m2);
    FuseOptions opts;
    opts.want_attention = !attention_path.empty();
    opts.color_recompose = color_recompose;
    FuseResult res = fuse_pair(pair, ckpt, opts);

    if (color_recompose && res.chroma) save_png_color(res.fused, *res.chroma, out_path);
    else save_png_gray(res.fused, out_path);

    if (!metrics_path.empty()) {
        std::ofstream mo(metrics_path);
        write_metric_csv(mo, {{pair.id, res.metrics}});
    }
    if (!attention_path.empty()) {
        std::ofstream ao(attention_path);
        nlohmann::json j;
        j["modality1"] = nlohmann::json::parse(attention_to_json(res.attention1));
        j["modality2"] = nlohmann::json::parse(attention_to_json(res.attention2));
        ao << j.dump(2) << "\n";
    }
    std::cout << "fused -> " << out_path << "  (EN " << res.metrics.en << ", SSIM "
              << res.metrics.ssim << ")\n";
    return 0;
}

int cmd_evaluate(const std::string& fused_dir, const std::string& manifest_path,
                 const std::string& out_path) {
    auto entries = read_manifest(manifest_path);
    std::string base = fs::path(manifest_path).parent_path().string();
    std::vector<std::pair<std::string, MetricReport>> rows;
    for (const auto& e : entries) {
        fs::path fused_path = fs::path(fused_dir) / (e.id + ".png");
        if (!fs::exists(fused_path)) fused_path = fs::path(fused_dir) / (e.id + "_fused.png");
        if (!fs::exists(fused_path)) {
            std::cerr << "skip " << e.id << ": no fused image in " << fused_dir << "\n";
            continue;
        }
        RegisteredPair pair = load_manifest_entry(e, base);
        RegisteredPair fused_pair = load_pair(fused_path.string(), fused_path.string());
        Plane fused = fused_pair.image1;
        if (!fused.same_size(pair.image1)) {
            pair = resize_pair(pair, fused.h, fused.w);
        }
        rows.push_back({e.id, evaluate_pair(fused, pair.image1, pair.image2)});
    }
    std::ofstream out(out_path);
    if (!out) throw FormatError("evaluate: cannot write " + out_path);
    write_metric_csv(out, rows);
    std::cout << "evaluated " << rows.size() << " pairs -> " << out_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& variants_csv,
               const std::string& out_path) {
    TrainConfig cfg = TrainConfig::from_json_file(config_path);
    if (cfg.out_dir.empty()) cfg.out_dir = "runs";
    fs::create_directories(cfg.out_dir);
    std::vector<std::string> variants;
    std::stringstream ss(variants_csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) variants.push_back(item);
    Dataset data = dataset_from_config(cfg);
    std::ofstream log((fs::path(cfg.out_dir) / "ablation_log.jsonl").string());
    auto rows = run_ablation(data, data, cfg, variants, &log);

    std::ofstream out(out_path);
    if (!out) throw FormatError("ablate: cannot write " + out_path);
    out << "variant,SD,MI,VIF,SSIM\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f\n", r.variant.c_str(), r.sd, r.mi,
                      r.vif, r.ssim);
        out << buf;
        std::cout << buf;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TaGAT retinal image fusion"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic desk-scale dataset");
    std::string synth_out = "data/synth";
    int synth_count = 8, synth_h = 64, synth_w = 80, synth_depth = 3;
    uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--count", synth_count, "number of pairs");
    synth->add_option("--height", synth_h, "image height");
    synth->add_option("--width", synth_w, "image width");
    synth->add_option("--depth", synth_depth, "vessel tree depth");
    synth->add_option("--seed", synth_seed, "base seed");

    auto* gx = app.add_subcommand("graph-extract", "extract the vessel graph from a mask or image");
    std::string gx_image, gx_mask, gx_out = "graph.json";
    bool gx_noprune = false;
    gx->add_option("--image", gx_image, "intensity image (segmented when no mask given)");
    gx->add_option("--mask", gx_mask, "binary vessel mask (PNG, 0/255)");
    gx->add_option("--out", gx_out, "output JSON path");
    gx->add_flag("--no-prune", gx_noprune, "keep spurs shorter than 3 px");

    auto* train = app.add_subcommand("train", "run one training stage");
    std::string train_cfg;
    int train_stage = 1;
    std::string train_from;
    train->add_option("--config", train_cfg, "JSON config file")->required();
    train->add_option("--stage", train_stage, "1 or 2")->check(CLI::Range(1, 2));
    train->add_option("--from", train_from, "stage-1 checkpoint (stage 2 only)");

    auto* fuse = app.add_subcommand("fuse", "fuse one registered pair");
    std::string fuse_ckpt, fuse_m1, fuse_m2, fuse_out = "fused.png";
    std::vector<std::string> fuse_pair_paths;
    std::string fuse_metrics, fuse_attention;
    bool fuse_color = false;
    fuse->add_option("--ckpt", fuse_ckpt, "stage-2 checkpoint")->required();
    fuse->add_option("--pair", fuse_pair_paths, "the two registered images")
        ->expected(2)
        ->required();
    fuse->add_option("--mask1", fuse_m1, "vessel mask for image 1");
    fuse->add_option("--mask2", fuse_m2, "vessel mask for image 2");
    fuse->add_option("--out", fuse_out, "fused PNG path");
    fuse->add_option("--metrics", fuse_metrics, "metric CSV path");
    fuse->add_option("--dump-attention", fuse_attention, "attention JSON path");
    fuse->add_flag("--color-recompose", fuse_color, "reattach source chroma to the fused image");

    auto* eval = app.add_subcommand("evaluate", "metric report for a directory of fused images");
    std::string eval_dir, eval_manifest, eval_out = "report.csv";
    eval->add_option("--dir", eval_dir, "directory with <id>.png fused images")->required();
    eval->add_option("--manifest", eval_manifest, "dataset manifest (JSONL)")->required();
    eval->add_option("--out", eval_out, "CSV output path");

    auto* ablate = app.add_subcommand("ablate", "train and score the Table-2 ablation variants");
    std::string ab_cfg, ab_variants = "I,II,III,IV,V", ab_out = "ablation.csv";
    ablate->add_option("--config", ab_cfg, "JSON config file")->required();
    ablate->add_option("--variants", ab_variants, "comma-separated variant ids");
    ablate->add_option("--out", ab_out, "CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_count, synth_h, synth_w, synth_depth, synth_seed);
        if (gx->parsed()) return cmd_graph_extract(gx_image, gx_mask, gx_out, gx_noprune);
        if (train->parsed()) return cmd_train(train_cfg, train_stage, train_from);
        if (fuse->parsed())
            return cmd_fuse(fuse_ckpt, fuse_pair_paths[0], fuse_pair_paths[1], fuse_m1, fuse_m2,
                            fuse_out, fuse_metrics, fuse_attention, fuse_color);
        if (eval->parsed()) return cmd_evaluate(eval_dir, eval_manifest, eval_out);
        if (ablate->parsed()) return cmd_ablate(ab_cfg, ab_variants, ab_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
