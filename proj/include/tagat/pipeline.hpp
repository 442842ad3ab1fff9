#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tagat/data_io.hpp"
#include "tagat/fusion_decoder.hpp"
#include "tagat/losses.hpp"
#include "tagat/lsr_encoder.hpp"
#include "tagat/metrics.hpp"
#include "tagat/tae.hpp"
#include "tagat/vessel_graph.hpp"

namespace tagat {

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

struct TrainConfig {
    uint64_t seed = 17;
    bool toy_mode = false;
    int stage1_epochs = 40;
    int stage2_epochs = 80;
    double lr = 1e-4;
    double lr_decay_factor = 0.5;
    int lr_decay_every = 20; // epochs
    int batch_size = 1;
    int input_h = 288, input_w = 360;
    LossWeights weights;
    EncoderConfig encoder;
    TaeConfig tae;
    int decoder_blocks = 4;
    int decoder_heads = 4;
    std::string ablation = "none"; // none | I | II | III | IV | V
    // run plumbing
    std::string manifest;
    std::string out_dir;
    bool augment = false;
    int max_steps_per_stage = 0; // 0 = run the full epoch budget
    int log_every = 1;

    void validate() const;
    // Desk-scale preset: 64x80, embed 16, 1 Restormer block, 2 attention
    // heads, 4 GIU heads in a 16-dim space, 1 decoder block.
    void apply_toy_preset();

    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig from_json_file(const std::string& path);
    nlohmann::json to_json() const;
    double lr_at_epoch(int epoch_zero_based) const;
    uint64_t arch_fingerprint() const;
};

// Full model: shared LSR encoder, shared TAE applied per modality with its
// own graph, stage-II fusion layers, shared decoder.
struct TagatModel {
    TrainConfig cfg;
    DecoderMask mask;           // ablation III / IV
    bool use_graph_loss = true; // ablation I
    LsrEncoder encoder;
    Tae tae;
    FusionLayers fusion;
    Decoder decoder;

    explicit TagatModel(const TrainConfig& cfg);
    nn::ParamMap stage1_params() const; // everything except fusion layers
    nn::ParamMap all_params() const;
};

Tensor image_to_tensor(const Plane& p); // {1,H,W}, no grad
Plane tensor_to_plane(const Tensor& t); // {1,H,W} -> Plane

class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(nn::ParamMap& params, double lr);
    int64_t t() const { return t_; }

    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments>& state() { return state_; }
    const std::map<std::string, Moments>& state() const { return state_; }
    void set_t(int64_t t) { t_ = t; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

struct Checkpoint {
    uint32_t version = 1;
    uint32_t stage = 0;
    uint64_t fingerprint = 0;
    std::string config_json;
    uint64_t epoch = 0;
    uint64_t global_step = 0;
    uint64_t adam_t = 0;
    // sorted by name; moments sized like values
    std::map<std::string, Shape> shapes;
    std::map<std::string, std::vector<double>> values, adam_m, adam_v;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path); // VersionError on mismatch
    TrainConfig config() const;
};

struct TrainSample {
    RegisteredPair pair;
    VesselGraph graph1, graph2;
};
using Dataset = std::vector<TrainSample>;

// Resize to the configured input size, take masks from the manifest (or run
// the baseline segmenter), skeletonize and extract graphs. Graphs are cached
// beside the dataset keyed by a content hash of the mask and parameters.
Dataset prepare_dataset(const std::vector<ManifestEntry>& entries, const TrainConfig& cfg,
                        const std::string& base_dir);
TrainSample prepare_sample(RegisteredPair pair, const TrainConfig& cfg);
Dataset make_synthetic_dataset(int count, const TrainConfig& cfg, uint64_t seed0,
                               int tree_depth = 3);

struct TrainOutput {
    Checkpoint checkpoint;
    std::vector<LossReport> steps;
    bool aborted = false;       // non-finite loss: checkpoint holds last good state
    std::string abort_reason;
};

TrainOutput train_stage1(const Dataset& data, const TrainConfig& cfg,
                         std::ostream* log = nullptr);
TrainOutput train_stage2(const Dataset& data, const TrainConfig& cfg, const Checkpoint& stage1,
                         std::ostream* log = nullptr);

struct FuseOptions {
    bool want_attention = false;
    bool color_recompose = false;
};

struct FuseResult {
    Plane fused;                // luminance, [0,1], at checkpoint input size
    MetricReport metrics;       // against the resized sources
    RegisteredPair resized;     // inputs as seen by the network
    AttentionMap attention1, attention2; // last GIU layer, when requested
    std::optional<std::array<Plane, 2>> chroma; // recomposition source
};

FuseResult fuse_pair(const RegisteredPair& pair, const Checkpoint& checkpoint,
                     const FuseOptions& opts = {});

// Stage-I reconstructions of both modalities from a stage-1 (or stage-2)
// checkpoint; used to assess how much the autoencoder retained.
std::pair<Plane, Plane> reconstruct_pair(const TrainSample& sample, const Checkpoint& checkpoint);

struct AblationRow {
    std::string variant; // I..V or Ours
    double sd = 0, mi = 0, vif = 0, ssim = 0;
};

// Trains and evaluates each requested variant plus the full model with a
// shared seed; rows come back in Table-2 order (I..V then Ours).
std::vector<AblationRow> run_ablation(const Dataset& train_data, const Dataset& eval_data,
                                      const TrainConfig& base,
                                      const std::vector<std::string>& variants,
                                      std::ostream* log = nullptr);

std::string attention_to_json(const AttentionMap& attention);

} // namespace tagat
