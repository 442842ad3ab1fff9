#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tagat/plane.hpp"

namespace tagat {

// Vessel topology graph: nodes are branch points and endpoints of the
// skeletonized vessel mask, edges follow skeleton connectivity.
struct VesselGraph {
    int h = 0, w = 0;
    std::vector<std::pair<int, int>> nodes; // (x, y)
    std::vector<std::pair<int, int>> edges; // (i, j), i < j, stored once

    size_t node_count() const { return nodes.size(); }
    size_t edge_count() const { return edges.size(); }
    void validate() const; // bounds, no self loops, unique coords
};

struct SegmenterOptions {
    enum class Polarity { Auto, Bright, Dark };
    std::vector<double> scales{1.0, 1.5, 2.0, 2.5, 3.0};
    double beta = 0.5;          // blobness sensitivity
    double high_threshold = 0.22; // on max-normalized vesselness
    double low_threshold = 0.08;
    int min_component_px = 25;
    Polarity polarity = Polarity::Auto;
};

// Multiscale Hessian ridge filter with hysteresis thresholding. The built-in
// baseline behind the pluggable segmenter; external masks bypass it.
Plane segment_vessels(const Plane& image, const SegmenterOptions& opts = {});

// Morphological thinning to 1-px-wide curves (8-connectivity preserving),
// followed by removal of residual 2x2 foreground blocks.
Plane skeletonize(const Plane& mask);

// Nodes: skeleton pixels with exactly 1 (endpoints) or >= 3 (branch points)
// foreground 8-neighbors; adjacent branch pixels merge into one node at the
// cluster centroid. Edges trace node-free skeleton corridors. Components
// without any node pixel (isolated cycles / lone pixels) contribute a single
// anchor node. Spur edges to leaf endpoints shorter than min_spur_len pixels
// (counted as moves along the corridor) are pruned together with the leaf.
VesselGraph extract_graph(const Plane& skeleton, int min_spur_len = 3);

// Proportional coordinate scaling with rounding and in-bounds clamping;
// coincident nodes are merged and edges reindexed/deduplicated.
VesselGraph scale_graph(const VesselGraph& graph, int new_h, int new_w);

std::string graph_to_json(const VesselGraph& graph);
VesselGraph graph_from_json(const std::string& text);

} // namespace tagat
