// Python surface for the main operations: synthetic data, the vessel-graph
// chain, the metric suite, training and fusion.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>
#include <optional>

#include "tagat/data_io.hpp"
#include "tagat/metrics.hpp"
#include "tagat/pipeline.hpp"
#include "tagat/vessel_graph.hpp"

namespace py = pybind11;
using namespace tagat;

namespace {

using Array2d = py::array_t<double, py::array::c_style | py::array::forcecast>;

Plane to_plane(const Array2d& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    Plane p(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + p.size(), p.v.begin());
    return p;
}

py::array_t<double> from_plane(const Plane& p) {
    py::array_t<double> a({p.h, p.w});
    std::copy(p.v.begin(), p.v.end(), a.mutable_data());
    return a;
}

py::dict pair_to_dict(const RegisteredPair& pair) {
    py::dict d;
    d["id"] = pair.id;
    d["image1"] = from_plane(pair.image1);
    d["image2"] = from_plane(pair.image2);
    if (pair.mask1) d["mask1"] = from_plane(*pair.mask1);
    if (pair.mask2) d["mask2"] = from_plane(*pair.mask2);
    return d;
}

py::dict report_to_dict(const MetricReport& r) {
    py::dict d;
    d["EN"] = r.en;
    d["SD"] = r.sd;
    d["SF"] = r.sf;
    d["MI"] = r.mi;
    d["SCD"] = r.scd;
    d["VIF"] = r.vif;
    d["QABF"] = r.qabf;
    d["SSIM"] = r.ssim;
    return d;
}

} // namespace

PYBIND11_MODULE(_tagat_core, m) {
    m.doc() = "Topology-aware graph-attention retinal image fusion";

    m.def(
        "generate_synthetic_pair",
        [](int height, int width, int depth, uint64_t seed) {
            SyntheticSceneSpec spec;
            spec.height = height;
            spec.width = width;
            spec.vessel_tree_depth = depth;
            spec.seed = seed;
            return pair_to_dict(generate_synthetic_pair(spec));
        },
        py::arg("height") = 64, py::arg("width") = 80, py::arg("depth") = 3, py::arg("seed") = 0,
        "Render one registered synthetic pair (same vessel tree, two contrast profiles).");

    m.def(
        "segment_vessels", [](const Array2d& img) { return from_plane(segment_vessels(to_plane(img))); },
        py::arg("image"), "Baseline multiscale ridge segmentation with hysteresis.");

    m.def(
        "skeletonize", [](const Array2d& mask) { return from_plane(skeletonize(to_plane(mask))); },
        py::arg("mask"));

    m.def(
        "extract_graph",
        [](const Array2d& skeleton, int min_spur_len) {
            VesselGraph g = extract_graph(to_plane(skeleton), min_spur_len);
            return py::make_tuple(g.nodes, g.edges);
        },
        py::arg("skeleton"), py::arg("min_spur_len") = 3,
        "Returns (nodes [(x,y)...], edges [(i,j)...]).");

    m.def(
        "evaluate_pair",
        [](const Array2d& fused, const Array2d& a, const Array2d& b) {
            return report_to_dict(evaluate_pair(to_plane(fused), to_plane(a), to_plane(b)));
        },
        py::arg("fused"), py::arg("image1"), py::arg("image2"),
        "Eight fusion-quality metrics on [0,1] luminance arrays.");

    m.def(
        "train",
        [](const std::string& config_path, int stage, const std::string& stage1_ckpt,
           const std::string& out_ckpt, const std::string& log_path) {
            TrainConfig cfg = TrainConfig::from_json_file(config_path);
            Dataset data;
            if (!cfg.manifest.empty()) {
                std::filesystem::path mp(cfg.manifest);
                data = prepare_dataset(read_manifest(cfg.manifest), cfg,
                                       mp.parent_path().string());
            } else {
                data = make_synthetic_dataset(4, cfg, cfg.seed);
            }
            std::ofstream log;
            if (!log_path.empty()) log.open(log_path);
            std::ostream* lp = log_path.empty() ? nullptr : &log;
            TrainOutput out = stage == 1
                                  ? train_stage1(data, cfg, lp)
                                  : train_stage2(data, cfg, Checkpoint::load(stage1_ckpt), lp);
            out.checkpoint.save(out_ckpt);
            py::dict d;
            d["steps"] = out.steps.size();
            d["aborted"] = out.aborted;
            d["final_total"] = out.steps.empty() ? 0.0 : out.steps.back().total;
            return d;
        },
        py::arg("config_path"), py::arg("stage"), py::arg("stage1_ckpt") = "",
        py::arg("out_ckpt") = "model.ckpt", py::arg("log_path") = "",
        "Run one training stage; without a manifest a small synthetic dataset is used.");

    m.def(
        "fuse",
        [](const std::string& ckpt_path, const Array2d& img1, const Array2d& img2,
           const std::optional<Array2d>& mask1, const std::optional<Array2d>& mask2) {
            RegisteredPair pair;
            pair.id = "py";
            pair.image1 = to_plane(img1);
            pair.image2 = to_plane(img2);
            if (mask1) pair.mask1 = to_plane(*mask1);
            if (mask2) pair.mask2 = to_plane(*mask2);
            pair.validate();
            FuseResult res = fuse_pair(pair, Checkpoint::load(ckpt_path));
            py::dict d;
            d["fused"] = from_plane(res.fused);
            d["metrics"] = report_to_dict(res.metrics);
            return d;
        },
        py::arg("ckpt_path"), py::arg("image1"), py::arg("image2"),
        py::arg("mask1") = std::nullopt, py::arg("mask2") = std::nullopt,
        "Fuse one registered pair with a stage-2 checkpoint.");

    m.def("metric_report_header", &metric_report_header);
}
