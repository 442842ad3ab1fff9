#include "tagat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tagat/error.hpp"

namespace tagat {

using nlohmann::json;

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// ----------------------------------------------------------------- config

void TrainConfig::validate() const {
    if (stage1_epochs <= 0 || stage2_epochs <= 0) throw ConfigError("config: epochs must be > 0");
    if (lr <= 0 || lr_decay_factor <= 0 || lr_decay_every <= 0)
        throw ConfigError("config: bad learning-rate schedule");
    if (batch_size != 1) throw ConfigError("config: batch_size is fixed to 1");
    if (input_h <= 0 || input_w <= 0) throw ConfigError("config: input size must be positive");
    if (ablation != "none" && ablation != "I" && ablation != "II" && ablation != "III" &&
        ablation != "IV" && ablation != "V")
        throw ConfigError("config: ablation must be one of none,I,II,III,IV,V");
    weights.validate();
    encoder.validate();
    tae.validate();
    if (decoder_blocks < 0 || decoder_heads < 1) throw ConfigError("config: bad decoder geometry");
}

void TrainConfig::apply_toy_preset() {
    toy_mode = true;
    input_h = 64;
    input_w = 80;
    lr = 1e-3; // a few hundred steps must show progress at desk scale
    encoder.embed_dim = 16;
    encoder.restormer_blocks = 1;
    encoder.attention_heads = 2;
    encoder.lt_blocks = 1;
    encoder.inn_blocks = 2;
    tae.in_channels = 16;
    tae.reduced_channels = 16;
    tae.giu_heads = 4;
    tae.head_dim = 16;
    decoder_blocks = 1;
    decoder_heads = 2;
}

double TrainConfig::lr_at_epoch(int epoch_zero_based) const {
    int k = epoch_zero_based / lr_decay_every;
    return lr * std::pow(lr_decay_factor, k);
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.seed = j.value("seed", c.seed);
    c.toy_mode = j.value("toy_mode", false);
    if (c.toy_mode) c.apply_toy_preset();
    c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
    c.stage2_epochs = j.value("stage2_epochs", c.stage2_epochs);
    c.lr = j.value("lr", c.lr);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("input_size")) {
        c.input_h = j["input_size"].at(0).get<int>();
        c.input_w = j["input_size"].at(1).get<int>();
    }
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        c.weights.alpha1 = w.value("alpha1", c.weights.alpha1);
        c.weights.alpha2 = w.value("alpha2", c.weights.alpha2);
        c.weights.alpha3 = w.value("alpha3", c.weights.alpha3);
        c.weights.alpha4 = w.value("alpha4", c.weights.alpha4);
        c.weights.alpha5 = w.value("alpha5", c.weights.alpha5);
        c.weights.mu = w.value("mu", c.weights.mu);
        c.weights.epsilon = w.value("epsilon", c.weights.epsilon);
    }
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        c.encoder.embed_dim = e.value("embed_dim", c.encoder.embed_dim);
        c.encoder.restormer_blocks = e.value("restormer_blocks", c.encoder.restormer_blocks);
        c.encoder.attention_heads = e.value("attention_heads", c.encoder.attention_heads);
        c.encoder.lt_blocks = e.value("lt_blocks", c.encoder.lt_blocks);
        c.encoder.inn_blocks = e.value("inn_blocks", c.encoder.inn_blocks);
    }
    if (j.contains("tae")) {
        const auto& t = j["tae"];
        c.tae.reduced_channels = t.value("reduced_channels", c.tae.reduced_channels);
        c.tae.giu_layers = t.value("giu_layers", c.tae.giu_layers);
        c.tae.giu_heads = t.value("giu_heads", c.tae.giu_heads);
        c.tae.head_dim = t.value("head_dim", c.tae.head_dim);
        c.tae.patch_size = t.value("patch_size", c.tae.patch_size);
        c.tae.leaky_slope = t.value("leaky_slope", c.tae.leaky_slope);
    }
    if (j.contains("decoder")) {
        const auto& d = j["decoder"];
        c.decoder_blocks = d.value("restormer_blocks", c.decoder_blocks);
        c.decoder_heads = d.value("attention_heads", c.decoder_heads);
    }
    c.ablation = j.value("ablation", c.ablation);
    c.manifest = j.value("manifest", c.manifest);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.augment = j.value("augment", c.augment);
    c.max_steps_per_stage = j.value("max_steps_per_stage", c.max_steps_per_stage);
    c.log_every = j.value("log_every", c.log_every);
    c.tae.in_channels = c.encoder.embed_dim;
    c.validate();
    return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad JSON: ") + e.what());
    }
    return from_json(j);
}

json TrainConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["toy_mode"] = toy_mode;
    j["stage1_epochs"] = stage1_epochs;
    j["stage2_epochs"] = stage2_epochs;
    j["lr"] = lr;
    j["lr_decay_factor"] = lr_decay_factor;
    j["lr_decay_every"] = lr_decay_every;
    j["batch_size"] = batch_size;
    j["input_size"] = {input_h, input_w};
    j["weights"] = {{"alpha1", weights.alpha1}, {"alpha2", weights.alpha2},
                    {"alpha3", weights.alpha3}, {"alpha4", weights.alpha4},
                    {"alpha5", weights.alpha5}, {"mu", weights.mu},
                    {"epsilon", weights.epsilon}};
    j["encoder"] = {{"embed_dim", encoder.embed_dim},
                    {"restormer_blocks", encoder.restormer_blocks},
                    {"attention_heads", encoder.attention_heads},
                    {"lt_blocks", encoder.lt_blocks},
                    {"inn_blocks", encoder.inn_blocks}};
    j["tae"] = {{"reduced_channels", tae.reduced_channels}, {"giu_layers", tae.giu_layers},
                {"giu_heads", tae.giu_heads},               {"head_dim", tae.head_dim},
                {"patch_size", tae.patch_size},             {"leaky_slope", tae.leaky_slope}};
    j["decoder"] = {{"restormer_blocks", decoder_blocks}, {"attention_heads", decoder_heads}};
    j["ablation"] = ablation;
    j["manifest"] = manifest;
    j["out_dir"] = out_dir;
    j["augment"] = augment;
    j["max_steps_per_stage"] = max_steps_per_stage;
    j["log_every"] = log_every;
    return j;
}

uint64_t TrainConfig::arch_fingerprint() const {
    json a;
    a["encoder"] = {{"embed_dim", encoder.embed_dim},
                    {"restormer_blocks", encoder.restormer_blocks},
                    {"attention_heads", encoder.attention_heads},
                    {"lt_blocks", encoder.lt_blocks},
                    {"inn_blocks", encoder.inn_blocks}};
    a["tae"] = {{"reduced_channels", tae.reduced_channels}, {"giu_layers", tae.giu_layers},
                {"giu_heads", tae.giu_heads},               {"head_dim", tae.head_dim},
                {"patch_size", tae.patch_size},             {"leaky_slope", tae.leaky_slope}};
    a["decoder"] = {{"restormer_blocks", decoder_blocks}, {"attention_heads", decoder_heads}};
    a["ablation"] = ablation;
    a["input_size"] = {input_h, input_w};
    std::string s = a.dump();
    return fnv1a64(s.data(), s.size());
}

// ------------------------------------------------------------------ model

namespace {

TrainConfig normalized(TrainConfig cfg) {
    cfg.tae.in_channels = cfg.encoder.embed_dim;
    if (cfg.ablation == "II") cfg.tae.g2s_diffusion = false;
    if (cfg.ablation == "V") cfg.tae.gcn_mode = true;
    cfg.validate();
    return cfg;
}

} // namespace

TagatModel::TagatModel(const TrainConfig& cfg_in) : cfg(normalized(cfg_in)) {
    if (cfg.ablation == "I") use_graph_loss = false;
    if (cfg.ablation == "III") {
        mask.use_base = false;
        mask.use_detail = false;
    }
    if (cfg.ablation == "IV") mask.use_graph = false;

    std::mt19937_64 rng(cfg.seed);
    encoder = LsrEncoder(cfg.encoder, rng);
    tae = Tae(cfg.tae, rng);
    decoder = Decoder(cfg.encoder.embed_dim, cfg.tae.head_dim, cfg.decoder_blocks,
                      cfg.decoder_heads, rng);
    fusion = FusionLayers(cfg.encoder.embed_dim, cfg.tae.head_dim, rng);
}

nn::ParamMap TagatModel::stage1_params() const {
    nn::ParamMap p;
    encoder.collect(p, "encoder");
    tae.collect(p, "tae");
    decoder.collect(p, "decoder");
    return p;
}

nn::ParamMap TagatModel::all_params() const {
    nn::ParamMap p = stage1_params();
    fusion.collect(p, "fusion");
    return p;
}

Tensor image_to_tensor(const Plane& p) {
    return Tensor::from_vector({1, p.h, p.w}, p.v);
}

Plane tensor_to_plane(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 1) throw ShapeError("tensor_to_plane: expected {1,H,W}");
    Plane p(t.dim(1), t.dim(2));
    p.v = t.data();
    return p;
}

// ------------------------------------------------------------------- Adam

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(nn::ParamMap& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        auto& st = state_[name];
        auto& val = p.data();
        if (st.m.size() != val.size()) {
            st.m.assign(val.size(), 0.0);
            st.v.assign(val.size(), 0.0);
        }
        const auto& g = p.grad();
        if (g.empty()) { // parameter untouched by this objective
            continue;
        }
        for (size_t i = 0; i < val.size(); ++i) {
            st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
            st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = st.m[i] / bc1;
            double vhat = st.v[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

// -------------------------------------------------------------- checkpoint

namespace {

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw VersionError("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    uint64_t n = get<uint64_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw VersionError("checkpoint: truncated file");
    return s;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
    put<uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::istream& in) {
    uint64_t n = get<uint64_t>(in);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw VersionError("checkpoint: truncated file");
    return v;
}

constexpr char kMagic[8] = {'T', 'A', 'G', 'A', 'T', 'C', 'K', '1'};

} // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, version);
    put<uint32_t>(out, stage);
    put<uint64_t>(out, fingerprint);
    put_string(out, config_json);
    put<uint64_t>(out, epoch);
    put<uint64_t>(out, global_step);
    put<uint64_t>(out, adam_t);
    put<uint32_t>(out, static_cast<uint32_t>(values.size()));
    for (const auto& [name, val] : values) {
        put_string(out, name);
        const Shape& s = shapes.at(name);
        put<uint32_t>(out, static_cast<uint32_t>(s.size()));
        for (int d : s) put<int32_t>(out, d);
        put_doubles(out, val);
        put_doubles(out, adam_m.at(name));
        put_doubles(out, adam_v.at(name));
    }
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw VersionError("checkpoint: bad magic");
    Checkpoint c;
    c.version = get<uint32_t>(in);
    if (c.version != 1) throw VersionError("checkpoint: unsupported version");
    c.stage = get<uint32_t>(in);
    c.fingerprint = get<uint64_t>(in);
    c.config_json = get_string(in);
    c.epoch = get<uint64_t>(in);
    c.global_step = get<uint64_t>(in);
    c.adam_t = get<uint64_t>(in);
    uint32_t count = get<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(in);
        uint32_t nd = get<uint32_t>(in);
        Shape s(nd);
        for (uint32_t d = 0; d < nd; ++d) s[d] = get<int32_t>(in);
        c.shapes[name] = s;
        c.values[name] = get_doubles(in);
        c.adam_m[name] = get_doubles(in);
        c.adam_v[name] = get_doubles(in);
    }
    // fingerprint must match the embedded configuration
    if (c.config().arch_fingerprint() != c.fingerprint)
        throw VersionError("checkpoint: fingerprint does not match embedded config");
    return c;
}

TrainConfig Checkpoint::config() const {
    return TrainConfig::from_json(json::parse(config_json));
}

namespace {

Checkpoint make_checkpoint(const TrainConfig& cfg, uint32_t stage, const nn::ParamMap& params,
                           const Adam& adam, uint64_t epoch, uint64_t step) {
    Checkpoint c;
    c.stage = stage;
    c.fingerprint = cfg.arch_fingerprint();
    c.config_json = cfg.to_json().dump();
    c.epoch = epoch;
    c.global_step = step;
    c.adam_t = static_cast<uint64_t>(adam.t());
    for (const auto& [name, p] : params) {
        c.shapes[name] = p.shape();
        c.values[name] = p.data();
        auto it = adam.state().find(name);
        if (it != adam.state().end() && it->second.m.size() == p.data().size()) {
            c.adam_m[name] = it->second.m;
            c.adam_v[name] = it->second.v;
        } else {
            c.adam_m[name] = std::vector<double>(p.data().size(), 0.0);
            c.adam_v[name] = std::vector<double>(p.data().size(), 0.0);
        }
    }
    return c;
}

void load_params_into(const Checkpoint& ckpt, nn::ParamMap& params) {
    for (const auto& [name, val] : ckpt.values) {
        auto it = params.find(name);
        if (it == params.end())
            throw VersionError("checkpoint: parameter not in model: " + name);
        if (it->second.shape() != ckpt.shapes.at(name))
            throw VersionError("checkpoint: shape mismatch for " + name);
        it->second.data() = val;
    }
}

} // namespace

// ----------------------------------------------------------------- dataset

namespace {

VesselGraph graph_for(const Plane& image, const std::optional<Plane>& mask,
                      const std::string& cache_path, int min_spur_len) {
    Plane m = mask ? *mask : segment_vessels(image);
    uint64_t h = fnv1a64(m.v.data(), m.v.size() * sizeof(double));
    h = fnv1a64(&min_spur_len, sizeof(min_spur_len), h);
    h = fnv1a64(&m.h, sizeof(m.h), h);
    h = fnv1a64(&m.w, sizeof(m.w), h);

    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
        try {
            std::ifstream in(cache_path);
            json j;
            in >> j;
            if (j.value("hash", uint64_t(0)) == h)
                return graph_from_json(j.at("graph").dump());
        } catch (...) {
            // fall through to recomputation
        }
    }
    VesselGraph g = extract_graph(skeletonize(m), min_spur_len);
    if (!cache_path.empty()) {
        std::filesystem::create_directories(std::filesystem::path(cache_path).parent_path());
        std::ofstream out(cache_path);
        json j;
        j["hash"] = h;
        j["graph"] = json::parse(graph_to_json(g));
        out << j.dump();
    }
    return g;
}

} // namespace

TrainSample prepare_sample(RegisteredPair pair, const TrainConfig& cfg) {
    TrainSample s;
    s.pair = resize_pair(pair, cfg.input_h, cfg.input_w);
    s.graph1 = graph_for(s.pair.image1, s.pair.mask1, "", 3);
    s.graph2 = graph_for(s.pair.image2, s.pair.mask2, "", 3);
    return s;
}

Dataset prepare_dataset(const std::vector<ManifestEntry>& entries, const TrainConfig& cfg,
                        const std::string& base_dir) {
    Dataset out;
    std::string cache_dir =
        base_dir.empty() ? "" : (std::filesystem::path(base_dir) / ".tagat_graph_cache").string();
    uint64_t aug_seed = cfg.seed ^ 0xA5A5A5A5A5A5A5A5ull;
    for (size_t i = 0; i < entries.size(); ++i) {
        RegisteredPair pair = load_manifest_entry(entries[i], base_dir);
        std::vector<RegisteredPair> variants{resize_pair(pair, cfg.input_h, cfg.input_w)};
        if (cfg.augment)
            variants.push_back(augment(variants[0], AugmentationSpec::random(aug_seed + i)));
        for (size_t v = 0; v < variants.size(); ++v) {
            TrainSample s;
            s.pair = std::move(variants[v]);
            std::string c1, c2;
            if (!cache_dir.empty() && v == 0) { // augmented copies are not cached
                c1 = cache_dir + "/" + entries[i].id + "_m1.json";
                c2 = cache_dir + "/" + entries[i].id + "_m2.json";
            }
            s.graph1 = graph_for(s.pair.image1, s.pair.mask1, c1, 3);
            s.graph2 = graph_for(s.pair.image2, s.pair.mask2, c2, 3);
            out.push_back(std::move(s));
        }
    }
    return out;
}

Dataset make_synthetic_dataset(int count, const TrainConfig& cfg, uint64_t seed0,
                               int tree_depth) {
    Dataset out;
    for (int i = 0; i < count; ++i) {
        SyntheticSceneSpec spec;
        spec.height = cfg.input_h;
        spec.width = cfg.input_w;
        spec.vessel_tree_depth = tree_depth;
        spec.seed = seed0 + static_cast<uint64_t>(i);
        RegisteredPair pair = generate_synthetic_pair(spec);
        TrainSample s;
        s.pair = std::move(pair);
        s.graph1 = extract_graph(skeletonize(*s.pair.mask1), 3);
        s.graph2 = extract_graph(skeletonize(*s.pair.mask2), 3);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------- training

namespace {

struct PairFeatures {
    FeatureBundle b1, b2;
    Tensor g1, g2; // graph feature maps (zero maps for empty graphs)
};

PairFeatures forward_features(const TagatModel& model, const TrainSample& s,
                              AttentionMap* att1 = nullptr, AttentionMap* att2 = nullptr) {
    PairFeatures f;
    Tensor img1 = image_to_tensor(s.pair.image1);
    Tensor img2 = image_to_tensor(s.pair.image2);
    f.b1 = model.encoder.encode(img1);
    f.b2 = model.encoder.encode(img2);
    f.g1 = model.tae.forward(f.b1.base, f.b1.detail, s.graph1, att1);
    f.g2 = model.tae.forward(f.b2.base, f.b2.detail, s.graph2, att2);
    return f;
}

using ParamSnapshot = std::map<std::string, std::vector<double>>;

ParamSnapshot snapshot(const nn::ParamMap& params) {
    ParamSnapshot s;
    for (const auto& [name, p] : params) s[name] = p.data();
    return s;
}

void restore(nn::ParamMap& params, const ParamSnapshot& s) {
    for (auto& [name, p] : params) p.data() = s.at(name);
}

void log_step(std::ostream* log, int stage, int epoch, uint64_t step, const std::string& id,
              double lr, const LossReport& report) {
    if (!log) return;
    json j;
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["step"] = step;
    j["sample"] = id;
    j["lr"] = lr;
    j["total"] = report.total;
    j["terms"] = report.terms;
    if (!report.graph_present) j["graph_absent"] = true;
    (*log) << j.dump() << "\n";
}

void log_epoch(std::ostream* log, int stage, int epoch, double mean_total, size_t n) {
    if (!log) return;
    json j;
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["epoch_mean_total"] = n > 0 ? mean_total / n : 0.0;
    (*log) << j.dump() << "\n";
}

} // namespace

TrainOutput train_stage1(const Dataset& data, const TrainConfig& cfg, std::ostream* log) {
    if (data.empty()) throw ConfigError("train_stage1: empty dataset");
    TagatModel model(cfg);
    nn::ParamMap params = model.stage1_params();
    Adam adam;
    TrainOutput out;
    ParamSnapshot last_good = snapshot(params);
    uint64_t last_good_t = 0;
    uint64_t step = 0;
    int epoch = 0;
    bool done = false;

    for (epoch = 0; epoch < cfg.stage1_epochs && !done; ++epoch) {
        double lr = cfg.lr_at_epoch(epoch);
        double epoch_total = 0.0;
        size_t epoch_n = 0;
        for (const auto& s : data) {
            try {
                PairFeatures f = forward_features(model, s);
                Tensor img1 = image_to_tensor(s.pair.image1);
                Tensor img2 = image_to_tensor(s.pair.image2);
                Tensor rec1 = model.decoder.reconstruct_stage1(f.b1, f.g1, model.mask);
                Tensor rec2 = model.decoder.reconstruct_stage1(f.b2, f.g2, model.mask);
                Stage1Parts parts;
                parts.l1 = recon_loss(img1, rec1, cfg.weights.mu);
                parts.l2 = recon_loss(img2, rec2, cfg.weights.mu);
                parts.decomp = decomp_loss(f.b1.base, f.b2.base, f.b1.detail, f.b2.detail,
                                           cfg.weights.epsilon);
                if (model.use_graph_loss) parts.graph = graph_loss(f.g1, f.g2);
                auto [total, report] = total_stage1(parts, cfg.weights);
                total.backward();
                adam.step(params, lr);
                for (auto& [name, p] : params) p.zero_grad();
                ++step;
                if (cfg.log_every > 0 && step % cfg.log_every == 0)
                    log_step(log, 1, epoch, step, s.pair.id, lr, report);
                out.steps.push_back(report);
                epoch_total += report.total;
                ++epoch_n;
                last_good = snapshot(params);
                last_good_t = step;
            } catch (const NumericError& e) {
                restore(params, last_good);
                out.aborted = true;
                out.abort_reason = e.what();
                out.checkpoint = make_checkpoint(cfg, 1, params, adam, epoch, last_good_t);
                return out;
            }
            if (cfg.max_steps_per_stage > 0 &&
                step >= static_cast<uint64_t>(cfg.max_steps_per_stage)) {
                done = true;
                break;
            }
        }
        log_epoch(log, 1, epoch, epoch_total, epoch_n);
    }
    out.checkpoint = make_checkpoint(cfg, 1, params, adam, epoch, step);
    return out;
}

TrainOutput train_stage2(const Dataset& data, const TrainConfig& cfg, const Checkpoint& stage1,
                         std::ostream* log) {
    if (data.empty()) throw ConfigError("train_stage2: empty dataset");
    if (stage1.stage != 1) throw ConfigError("train_stage2: expected a stage-1 checkpoint");
    if (stage1.fingerprint != cfg.arch_fingerprint())
        throw VersionError("train_stage2: checkpoint fingerprint does not match config");
    TagatModel model(cfg);
    nn::ParamMap params = model.all_params();
    {
        nn::ParamMap stage1_params = model.stage1_params();
        load_params_into(stage1, stage1_params); // fusion layers stay freshly initialized
    }
    Adam adam;
    TrainOutput out;
    ParamSnapshot last_good = snapshot(params);
    uint64_t last_good_t = 0;
    uint64_t step = 0;
    int epoch = 0;
    bool done = false;

    for (epoch = 0; epoch < cfg.stage2_epochs && !done; ++epoch) {
        double lr = cfg.lr_at_epoch(epoch);
        double epoch_total = 0.0;
        size_t epoch_n = 0;
        for (const auto& s : data) {
            try {
                PairFeatures f = forward_features(model, s);
                Tensor img1 = image_to_tensor(s.pair.image1);
                Tensor img2 = image_to_tensor(s.pair.image2);
                Tensor fused =
                    fuse_stage2(model.fusion, model.decoder, f.b1, f.b2, f.g1, f.g2, model.mask);
                Stage2Parts parts;
                parts.intensity = stage2_intensity_loss(fused, img1, img2);
                parts.grad = grad_loss(fused, img1, img2);
                parts.decomp = decomp_loss(f.b1.base, f.b2.base, f.b1.detail, f.b2.detail,
                                           cfg.weights.epsilon);
                if (model.use_graph_loss) parts.graph = graph_loss(f.g1, f.g2);
                auto [total, report] = total_stage2(parts, cfg.weights);
                total.backward();
                adam.step(params, lr);
                for (auto& [name, p] : params) p.zero_grad();
                ++step;
                if (cfg.log_every > 0 && step % cfg.log_every == 0)
                    log_step(log, 2, epoch, step, s.pair.id, lr, report);
                out.steps.push_back(report);
                epoch_total += report.total;
                ++epoch_n;
                last_good = snapshot(params);
                last_good_t = step;
            } catch (const NumericError& e) {
                restore(params, last_good);
                out.aborted = true;
                out.abort_reason = e.what();
                out.checkpoint = make_checkpoint(cfg, 2, params, adam, epoch, last_good_t);
                return out;
            }
            if (cfg.max_steps_per_stage > 0 &&
                step >= static_cast<uint64_t>(cfg.max_steps_per_stage)) {
                done = true;
                break;
            }
        }
        log_epoch(log, 2, epoch, epoch_total, epoch_n);
    }
    out.checkpoint = make_checkpoint(cfg, 2, params, adam, epoch, step);
    return out;
}

// -------------------------------------------------------------------- fuse

namespace {

Plane forward_fuse_sample(const TagatModel& model, const TrainSample& s,
                          AttentionMap* att1 = nullptr, AttentionMap* att2 = nullptr) {
    PairFeatures f = forward_features(model, s, att1, att2);
    Tensor fused = fuse_stage2(model.fusion, model.decoder, f.b1, f.b2, f.g1, f.g2, model.mask);
    return tensor_to_plane(fused);
}

} // namespace

FuseResult fuse_pair(const RegisteredPair& pair, const Checkpoint& checkpoint,
                     const FuseOptions& opts) {
    if (checkpoint.stage != 2)
        throw ConfigError("fuse: a stage-2 checkpoint is required (fusion layers trained)");
    TrainConfig cfg = checkpoint.config();
    TagatModel model(cfg);
    nn::ParamMap params = model.all_params();
    load_params_into(checkpoint, params);

    FuseResult res;
    TrainSample s = prepare_sample(pair, cfg);
    res.resized = s.pair;
    AttentionMap *a1 = opts.want_attention ? &res.attention1 : nullptr;
    AttentionMap *a2 = opts.want_attention ? &res.attention2 : nullptr;
    res.fused = forward_fuse_sample(model, s, a1, a2);
    res.metrics = evaluate_pair(res.fused, s.pair.image1, s.pair.image2);
    if (opts.color_recompose) {
        if (s.pair.chroma2) res.chroma = s.pair.chroma2;
        else if (s.pair.chroma1) res.chroma = s.pair.chroma1;
    }
    return res;
}

std::pair<Plane, Plane> reconstruct_pair(const TrainSample& sample, const Checkpoint& checkpoint) {
    TrainConfig cfg = checkpoint.config();
    TagatModel model(cfg);
    if (checkpoint.stage == 2) {
        nn::ParamMap params = model.all_params();
        load_params_into(checkpoint, params);
    } else {
        nn::ParamMap params = model.stage1_params();
        load_params_into(checkpoint, params);
    }
    PairFeatures f = forward_features(model, sample);
    Tensor rec1 = model.decoder.reconstruct_stage1(f.b1, f.g1, model.mask);
    Tensor rec2 = model.decoder.reconstruct_stage1(f.b2, f.g2, model.mask);
    return {tensor_to_plane(rec1), tensor_to_plane(rec2)};
}

// ---------------------------------------------------------------- ablation

std::vector<AblationRow> run_ablation(const Dataset& train_data, const Dataset& eval_data,
                                      const TrainConfig& base,
                                      const std::vector<std::string>& variants,
                                      std::ostream* log) {
    std::vector<std::string> order = variants;
    order.push_back("Ours");
    std::vector<AblationRow> rows;
    for (const auto& v : order) {
        TrainConfig cfg = base;
        cfg.ablation = (v == "Ours") ? "none" : v;
        cfg.validate();
        if (log) (*log) << "{\"ablation_variant\":\"" << v << "\"}\n";
        TrainOutput s1 = train_stage1(train_data, cfg, log);
        if (s1.aborted) throw NumericError("ablation " + v + ": stage 1 aborted: " + s1.abort_reason);
        TrainOutput s2 = train_stage2(train_data, cfg, s1.checkpoint, log);
        if (s2.aborted) throw NumericError("ablation " + v + ": stage 2 aborted: " + s2.abort_reason);

        TagatModel model(cfg);
        nn::ParamMap params = model.all_params();
        load_params_into(s2.checkpoint, params);
        AblationRow row;
        row.variant = v;
        for (const auto& s : eval_data) {
            Plane fused = forward_fuse_sample(model, s);
            MetricReport m = evaluate_pair(fused, s.pair.image1, s.pair.image2);
            row.sd += m.sd;
            row.mi += m.mi;
            row.vif += m.vif;
            row.ssim += m.ssim;
        }
        double n = static_cast<double>(eval_data.size());
        if (n > 0) {
            row.sd /= n;
            row.mi /= n;
            row.vif /= n;
            row.ssim /= n;
        }
        rows.push_back(row);
    }
    return rows;
}

std::string attention_to_json(const AttentionMap& attention) {
    json j = json::array();
    for (const auto& head : attention) {
        json h = json::array();
        for (const auto& e : head) h.push_back({{"i", e.i}, {"j", e.j}, {"alpha", e.alpha}});
        j.push_back(std::move(h));
    }
    return j.dump();
}

} // namespace tagat
