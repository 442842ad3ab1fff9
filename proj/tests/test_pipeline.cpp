#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tagat/error.hpp"
#include "tagat/pipeline.hpp"

using namespace tagat;
namespace fs = std::filesystem;

namespace {

TrainConfig micro_config() {
    TrainConfig cfg;
    cfg.apply_toy_preset();
    cfg.input_h = 32;
    cfg.input_w = 40;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.attention_heads = 2;
    cfg.encoder.restormer_blocks = 1;
    cfg.encoder.lt_blocks = 1;
    cfg.encoder.inn_blocks = 2;
    cfg.tae.in_channels = 8;
    cfg.tae.reduced_channels = 8;
    cfg.tae.giu_heads = 2;
    cfg.tae.head_dim = 8;
    cfg.tae.patch_size = 9;
    cfg.decoder_blocks = 1;
    cfg.decoder_heads = 2;
    cfg.stage1_epochs = 10;
    cfg.stage2_epochs = 10;
    cfg.max_steps_per_stage = 6;
    cfg.seed = 123;
    return cfg;
}

fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "tagat_pipeline_test";
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config: json round trip and toy preset") {
    TrainConfig cfg;
    cfg.toy_mode = false;
    nlohmann::json j = cfg.to_json();
    TrainConfig back = TrainConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.stage1_epochs == 40);
    CHECK(back.stage2_epochs == 80);
    CHECK(back.lr == doctest::Approx(1e-4));
    CHECK(back.input_h == 288);
    CHECK(back.input_w == 360);
    CHECK(back.encoder.embed_dim == 64);
    CHECK(back.tae.giu_heads == 12);

    TrainConfig toy;
    toy.apply_toy_preset();
    CHECK(toy.input_h == 64);
    CHECK(toy.input_w == 80);
    CHECK(toy.encoder.embed_dim == 16);
    CHECK(toy.encoder.restormer_blocks == 1);
    CHECK(toy.encoder.attention_heads == 2);
    CHECK(toy.tae.giu_heads == 4);
    nlohmann::json tj = toy.to_json();
    CHECK(TrainConfig::from_json(tj).to_json() == tj);
}

TEST_CASE("config: lr schedule halves every 20 epochs") {
    TrainConfig cfg;
    CHECK(cfg.lr_at_epoch(0) == doctest::Approx(1e-4));
    CHECK(cfg.lr_at_epoch(19) == doctest::Approx(1e-4));
    CHECK(cfg.lr_at_epoch(20) == doctest::Approx(0.5e-4)); // epoch-20 lr = 0.5 x initial
    CHECK(cfg.lr_at_epoch(40) == doctest::Approx(0.25e-4));
}

TEST_CASE("config: validation rejects bad ablation ids and weights") {
    TrainConfig cfg = micro_config();
    cfg.ablation = "VI";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config();
    cfg.weights.epsilon = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config();
    cfg.batch_size = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("checkpoint: save -> load -> save produces identical bytes") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(2, cfg, 7, 2);
    cfg.max_steps_per_stage = 2;
    TrainOutput out = train_stage1(data, cfg);
    auto dir = tmpdir();
    auto p1 = dir / "a.ckpt";
    auto p2 = dir / "b.ckpt";
    out.checkpoint.save(p1.string());
    Checkpoint loaded = Checkpoint::load(p1.string());
    loaded.save(p2.string());
    CHECK(read_file(p1) == read_file(p2));
    CHECK(loaded.stage == 1);
    CHECK(loaded.fingerprint == cfg.arch_fingerprint());
}

TEST_CASE("checkpoint: corrupted magic and fingerprint raise version errors") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(1, cfg, 9, 2);
    cfg.max_steps_per_stage = 1;
    TrainOutput out = train_stage1(data, cfg);
    auto dir = tmpdir();
    auto p = dir / "c.ckpt";
    out.checkpoint.save(p.string());

    std::string bytes = read_file(p);
    bytes[0] = 'X';
    {
        std::ofstream bad(dir / "bad_magic.ckpt", std::ios::binary);
        bad << bytes;
    }
    CHECK_THROWS_AS(Checkpoint::load((dir / "bad_magic.ckpt").string()), VersionError);

    // tamper with the stored fingerprint (bytes 16..23 after magic+2*u32)
    bytes = read_file(p);
    bytes[16] ^= 0xFF;
    {
        std::ofstream bad(dir / "bad_fp.ckpt", std::ios::binary);
        bad << bytes;
    }
    CHECK_THROWS_AS(Checkpoint::load((dir / "bad_fp.ckpt").string()), VersionError);
}

TEST_CASE("training: deterministic loss logs and identical checkpoints per seed") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(2, cfg, 11, 2);
    std::ostringstream log1, log2;
    TrainOutput a = train_stage1(data, cfg, &log1);
    TrainOutput b = train_stage1(data, cfg, &log2);
    CHECK(log1.str() == log2.str());
    REQUIRE(a.steps.size() == b.steps.size());
    for (size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].total == b.steps[i].total);
    auto dir = tmpdir();
    a.checkpoint.save((dir / "d1.ckpt").string());
    b.checkpoint.save((dir / "d2.ckpt").string());
    CHECK(read_file(dir / "d1.ckpt") == read_file(dir / "d2.ckpt"));
}

TEST_CASE("training: stage 2 fine-tunes from stage 1; losses stay finite") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(2, cfg, 13, 2);
    TrainOutput s1 = train_stage1(data, cfg);
    CHECK_FALSE(s1.aborted);
    TrainOutput s2 = train_stage2(data, cfg, s1.checkpoint);
    CHECK_FALSE(s2.aborted);
    CHECK(s2.checkpoint.stage == 2);
    for (const auto& r : s2.steps) CHECK(std::isfinite(r.total));
    // fusion parameters only exist in the stage-2 checkpoint
    CHECK(s2.checkpoint.values.count("fusion.fb.w") == 1);
    CHECK(s1.checkpoint.values.count("fusion.fb.w") == 0);
}

TEST_CASE("training: stage-2 rejects mismatched checkpoints") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(1, cfg, 15, 2);
    TrainOutput s1 = train_stage1(data, cfg);
    TrainConfig other = cfg;
    other.encoder.embed_dim = 4;
    other.tae.in_channels = 4;
    other.tae.reduced_channels = 4;
    other.tae.head_dim = 4;
    CHECK_THROWS_AS(train_stage2(data, other, s1.checkpoint), VersionError);

    TrainOutput s2 = train_stage2(data, cfg, s1.checkpoint);
    CHECK_THROWS_AS(train_stage2(data, cfg, s2.checkpoint), ConfigError); // wrong stage
}

TEST_CASE("fuse: bit-identical outputs, empty masks still fuse") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(2, cfg, 17, 2);
    TrainOutput s1 = train_stage1(data, cfg);
    TrainOutput s2 = train_stage2(data, cfg, s1.checkpoint);

    SyntheticSceneSpec spec;
    spec.height = 48;
    spec.width = 56;
    spec.seed = 99;
    RegisteredPair pair = generate_synthetic_pair(spec);
    FuseResult r1 = fuse_pair(pair, s2.checkpoint);
    FuseResult r2 = fuse_pair(pair, s2.checkpoint);
    CHECK(r1.fused.v == r2.fused.v);
    CHECK(r1.fused.h == cfg.input_h); // resized to the checkpoint input size
    CHECK(r1.fused.w == cfg.input_w);
    for (double v : r1.fused.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // empty vessel masks: zero graph-feature path still produces a fusion
    RegisteredPair empty_masks = pair;
    empty_masks.mask1 = Plane(48, 56, 0.0);
    empty_masks.mask2 = Plane(48, 56, 0.0);
    FuseResult r3 = fuse_pair(empty_masks, s2.checkpoint);
    for (double v : r3.fused.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // a stage-1 checkpoint is rejected
    CHECK_THROWS_AS(fuse_pair(pair, s1.checkpoint), ConfigError);
}

TEST_CASE("fuse: attention dump carries normalized rows") {
    TrainConfig cfg = micro_config();
    Dataset data = make_synthetic_dataset(1, cfg, 19, 2);
    TrainOutput s1 = train_stage1(data, cfg);
    TrainOutput s2 = train_stage2(data, cfg, s1.checkpoint);
    SyntheticSceneSpec spec;
    spec.height = cfg.input_h;
    spec.width = cfg.input_w;
    spec.seed = 5;
    FuseOptions opts;
    opts.want_attention = true;
    FuseResult r = fuse_pair(generate_synthetic_pair(spec), s2.checkpoint, opts);
    REQUIRE(!r.attention1.empty());
    for (const auto& head : r.attention1) {
        std::map<int, double> sums;
        for (const auto& e : head) sums[e.i] += e.alpha;
        for (const auto& [node, s] : sums) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(attention_to_json(r.attention1).size() > 2);
}

TEST_CASE("prepare_sample: external masks pass through to graph extraction") {
    TrainConfig cfg = micro_config();
    SyntheticSceneSpec spec;
    spec.height = cfg.input_h;
    spec.width = cfg.input_w;
    spec.seed = 23;
    RegisteredPair pair = generate_synthetic_pair(spec);
    TrainSample s = prepare_sample(pair, cfg);
    // mask passthrough: the graph comes from the provided mask, not the segmenter
    VesselGraph direct = extract_graph(skeletonize(*pair.mask1), 3);
    CHECK(s.graph1.nodes == direct.nodes);
    CHECK(s.graph1.edges == direct.edges);
    CHECK(s.pair.mask1->v == pair.mask1->v); // same size: untouched
}

TEST_CASE("prepare_dataset: graph cache is reused and invalidated by mask changes") {
    auto dir = tmpdir() / "cacheds";
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainConfig cfg = micro_config();

    SyntheticSceneSpec spec;
    spec.height = cfg.input_h;
    spec.width = cfg.input_w;
    spec.seed = 29;
    RegisteredPair pair = generate_synthetic_pair(spec);
    save_png_gray(pair.image1, (dir / "i1.png").string());
    save_png_gray(pair.image2, (dir / "i2.png").string());
    save_png_mask(*pair.mask1, (dir / "m.png").string());
    std::vector<ManifestEntry> entries{{"p0", "i1.png", "i2.png", "m.png", "m.png"}};
    write_manifest((dir / "manifest.jsonl").string(), entries);

    Dataset d1 = prepare_dataset(entries, cfg, dir.string());
    auto cache_file = dir / ".tagat_graph_cache" / "p0_m1.json";
    REQUIRE(fs::exists(cache_file));
    auto t1 = fs::last_write_time(cache_file);

    Dataset d2 = prepare_dataset(entries, cfg, dir.string()); // hash hit: no rewrite
    CHECK(fs::last_write_time(cache_file) == t1);
    CHECK(d1[0].graph1.nodes == d2[0].graph1.nodes);

    // changing the mask invalidates the cache entry
    Plane inverted(pair.mask1->h, pair.mask1->w, 0.0);
    for (size_t i = 0; i < inverted.v.size(); ++i) inverted.v[i] = 1.0 - pair.mask1->v[i];
    save_png_mask(inverted, (dir / "m.png").string());
    Dataset d3 = prepare_dataset(entries, cfg, dir.string());
    CHECK(d3[0].graph1.nodes != d1[0].graph1.nodes);
}

TEST_CASE("ablation: every variant trains briefly and reports the table columns") {
    TrainConfig cfg = micro_config();
    cfg.max_steps_per_stage = 2;
    Dataset data = make_synthetic_dataset(1, cfg, 31, 2);
    auto rows = run_ablation(data, data, cfg, {"I", "IV", "V"});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].variant == "I");
    CHECK(rows[3].variant == "Ours");
    for (const auto& r : rows) {
        CHECK(std::isfinite(r.sd));
        CHECK(std::isfinite(r.mi));
        CHECK(std::isfinite(r.vif));
        CHECK(std::isfinite(r.ssim));
    }
}

TEST_CASE("ablation IV trains without error and logs the variant id") {
    TrainConfig cfg = micro_config();
    cfg.ablation = "IV";
    cfg.max_steps_per_stage = 2;
    Dataset data = make_synthetic_dataset(1, cfg, 37, 2);
    std::ostringstream log;
    TrainOutput s1 = train_stage1(data, cfg, &log);
    CHECK_FALSE(s1.aborted);
    TrainOutput s2 = train_stage2(data, cfg, s1.checkpoint, &log);
    CHECK_FALSE(s2.aborted);
    CHECK(s2.checkpoint.config().ablation == "IV");
}

TEST_CASE("training: non-finite loss aborts with the last good state") {
    TrainConfig cfg = micro_config();
    cfg.lr = 1e18; // first step blows the parameters up; the next loss is NaN
    cfg.max_steps_per_stage = 6;
    Dataset data = make_synthetic_dataset(1, cfg, 41, 2);
    TrainOutput out = train_stage1(data, cfg);
    CHECK(out.aborted);
    CHECK_FALSE(out.abort_reason.empty());
    CHECK(out.checkpoint.values.size() > 0);
    for (const auto& [name, vals] : out.checkpoint.values)
        for (double v : vals) REQUIRE(std::isfinite(v)); // last-good snapshot only
}

TEST_CASE("image/tensor round trip") {
    Plane p(3, 4);
    for (size_t i = 0; i < p.v.size(); ++i) p.v[i] = i * 0.05;
    Tensor t = image_to_tensor(p);
    CHECK(t.shape() == Shape{1, 3, 4});
    Plane back = tensor_to_plane(t);
    CHECK(back.v == p.v);
}
