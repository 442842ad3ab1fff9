#include "tagat/vessel_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "tagat/error.hpp"

namespace tagat {

void VesselGraph::validate() const {
    std::set<std::pair<int, int>> seen;
    for (auto [x, y] : nodes) {
        if (x < 0 || x >= w || y < 0 || y >= h)
            throw ShapeError("VesselGraph: node coordinate out of bounds");
        if (!seen.insert({x, y}).second) throw ShapeError("VesselGraph: duplicate node coordinate");
    }
    std::set<std::pair<int, int>> eseen;
    for (auto [i, j] : edges) {
        if (i < 0 || j < 0 || i >= static_cast<int>(nodes.size()) ||
            j >= static_cast<int>(nodes.size()))
            throw ShapeError("VesselGraph: edge index out of range");
        if (i == j) throw ShapeError("VesselGraph: self loop");
        if (i > j) throw ShapeError("VesselGraph: edge not stored as i<j");
        if (!eseen.insert({i, j}).second) throw ShapeError("VesselGraph: duplicate edge");
    }
}

// ---------------------------------------------------------------- segmenter

namespace {

struct Hessian {
    Plane xx, yy, xy;
};

Hessian hessian_at_scale(const Plane& img, double sigma) {
    Plane g = gaussian_blur(img, sigma);
    const int h = g.h, w = g.w;
    auto ref = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return g.at(y, x);
    };
    Hessian out{Plane(h, w), Plane(h, w), Plane(h, w)};
    const double s2 = sigma * sigma; // scale normalization
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            out.xx.at(y, x) = s2 * (ref(y, x + 1) - 2 * ref(y, x) + ref(y, x - 1));
            out.yy.at(y, x) = s2 * (ref(y + 1, x) - 2 * ref(y, x) + ref(y - 1, x));
            out.xy.at(y, x) = s2 * 0.25 *
                              (ref(y + 1, x + 1) + ref(y - 1, x - 1) - ref(y + 1, x - 1) -
                               ref(y - 1, x + 1));
        }
    return out;
}

// Frangi vesselness for one polarity (bright: ridge has lambda2 < 0).
void accumulate_vesselness(const Hessian& hs, double beta, bool bright, Plane& acc) {
    const int h = acc.h, w = acc.w;
    // c = half of the max Frobenius norm at this scale
    double smax = 0.0;
    std::vector<double> l1v(static_cast<size_t>(h) * w), l2v(l1v.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double a = hs.xx.at(y, x), b = hs.xy.at(y, x), d = hs.yy.at(y, x);
            double tr2 = (a + d) / 2.0;
            double det = std::sqrt(std::max(0.0, (a - d) * (a - d) / 4.0 + b * b));
            double e1 = tr2 + det, e2 = tr2 - det;
            if (std::fabs(e1) > std::fabs(e2)) std::swap(e1, e2); // |l1| <= |l2|
            size_t i = static_cast<size_t>(y) * w + x;
            l1v[i] = e1;
            l2v[i] = e2;
            smax = std::max(smax, std::sqrt(e1 * e1 + e2 * e2));
        }
    if (smax <= 0.0) return;
    const double c2 = 2.0 * (0.5 * smax) * (0.5 * smax);
    const double b2 = 2.0 * beta * beta;
    for (size_t i = 0; i < l1v.size(); ++i) {
        double l1 = l1v[i], l2 = l2v[i];
        if (bright ? (l2 >= 0.0) : (l2 <= 0.0)) continue;
        double rb = l1 / l2;
        double s2 = l1 * l1 + l2 * l2;
        double v = std::exp(-rb * rb / b2) * (1.0 - std::exp(-s2 / c2));
        if (v > acc.v[i]) acc.v[i] = v;
    }
}

double top_percentile_mean(const Plane& p, double frac) {
    std::vector<double> v = p.v;
    size_t k = std::max<size_t>(1, static_cast<size_t>(v.size() * frac));
    std::nth_element(v.begin(), v.begin() + (v.size() - k), v.end());
    double s = 0.0;
    for (size_t i = v.size() - k; i < v.size(); ++i) s += v[i];
    return s / k;
}

Plane hysteresis(const Plane& response, double hi, double lo) {
    const int h = response.h, w = response.w;
    Plane out(h, w);
    std::deque<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (response.at(y, x) >= hi) {
                out.at(y, x) = 1.0;
                q.push_back({y, x});
            }
    while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                if (out.at(ny, nx) == 0.0 && response.at(ny, nx) >= lo) {
                    out.at(ny, nx) = 1.0;
                    q.push_back({ny, nx});
                }
            }
    }
    return out;
}

void drop_small_components(Plane& mask, int min_px) {
    const int h = mask.h, w = mask.w;
    std::vector<int> label(static_cast<size_t>(h) * w, -1);
    int next = 0;
    std::vector<int> counts;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x) == 0.0 || label[static_cast<size_t>(y) * w + x] >= 0) continue;
            int id = next++;
            counts.push_back(0);
            std::deque<std::pair<int, int>> q{{y, x}};
            label[static_cast<size_t>(y) * w + x] = id;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop_front();
                ++counts[id];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        size_t i = static_cast<size_t>(ny) * w + nx;
                        if (mask.at(ny, nx) > 0.0 && label[i] < 0) {
                            label[i] = id;
                            q.push_back({ny, nx});
                        }
                    }
            }
        }
    for (size_t i = 0; i < label.size(); ++i)
        if (label[i] >= 0 && counts[label[i]] < min_px) mask.v[i] = 0.0;
}

} // namespace

Plane segment_vessels(const Plane& image, const SegmenterOptions& opts) {
    for (double v : image.v)
        if (v < 0.0 || v > 1.0) throw FormatError("segment_vessels: intensities must be in [0,1]");

    Plane bright(image.h, image.w), dark(image.h, image.w);
    for (double sigma : opts.scales) {
        Hessian hs = hessian_at_scale(image, sigma);
        if (opts.polarity != SegmenterOptions::Polarity::Dark)
            accumulate_vesselness(hs, opts.beta, true, bright);
        if (opts.polarity != SegmenterOptions::Polarity::Bright)
            accumulate_vesselness(hs, opts.beta, false, dark);
    }
    Plane* resp = &bright;
    if (opts.polarity == SegmenterOptions::Polarity::Dark) resp = &dark;
    else if (opts.polarity == SegmenterOptions::Polarity::Auto &&
             top_percentile_mean(dark, 0.01) > top_percentile_mean(bright, 0.01))
        resp = &dark;

    double mx = *std::max_element(resp->v.begin(), resp->v.end());
    if (mx <= 0.0) return Plane(image.h, image.w); // all background is a valid outcome
    for (double& v : resp->v) v /= mx;
    Plane mask = hysteresis(*resp, opts.high_threshold, opts.low_threshold);
    drop_small_components(mask, opts.min_component_px);
    return mask;
}

// ---------------------------------------------------------------- thinning

namespace {

inline bool fg(const Plane& p, int y, int x) {
    return y >= 0 && y < p.h && x >= 0 && x < p.w && p.at(y, x) > 0.5;
}

// neighbors p2..p9 clockwise from north
void neighbors8(const Plane& p, int y, int x, int n[8]) {
    n[0] = fg(p, y - 1, x);
    n[1] = fg(p, y - 1, x + 1);
    n[2] = fg(p, y, x + 1);
    n[3] = fg(p, y + 1, x + 1);
    n[4] = fg(p, y + 1, x);
    n[5] = fg(p, y + 1, x - 1);
    n[6] = fg(p, y, x - 1);
    n[7] = fg(p, y - 1, x - 1);
}

int count_neighbors(const int n[8]) {
    int s = 0;
    for (int i = 0; i < 8; ++i) s += n[i];
    return s;
}

int transitions(const int n[8]) {
    int t = 0;
    for (int i = 0; i < 8; ++i) t += (n[i] == 0 && n[(i + 1) % 8] == 1);
    return t;
}

} // namespace

Plane skeletonize(const Plane& mask) {
    for (double v : mask.v)
        if (v != 0.0 && v != 1.0) throw FormatError("skeletonize: mask must be binary");
    Plane sk = mask;

    // Zhang-Suen
    bool changed = true;
    std::vector<std::pair<int, int>> kill;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            kill.clear();
            for (int y = 0; y < sk.h; ++y)
                for (int x = 0; x < sk.w; ++x) {
                    if (sk.at(y, x) < 0.5) continue;
                    int n[8];
                    neighbors8(sk, y, x, n);
                    int b = count_neighbors(n);
                    if (b < 2 || b > 6) continue;
                    if (transitions(n) != 1) continue;
                    // n[0]=N, n[2]=E, n[4]=S, n[6]=W
                    if (pass == 0) {
                        if (n[0] * n[2] * n[4] != 0) continue;
                        if (n[2] * n[4] * n[6] != 0) continue;
                    } else {
                        if (n[0] * n[2] * n[6] != 0) continue;
                        if (n[0] * n[4] * n[6] != 0) continue;
                    }
                    kill.push_back({y, x});
                }
            for (auto [y, x] : kill) sk.at(y, x) = 0.0;
            if (!kill.empty()) changed = true;
        }
    }

    // remove leftover 2x2 blocks: delete simple (connectivity-preserving)
    // non-endpoint pixels until no solid 2x2 square remains
    bool block_found = true;
    while (block_found) {
        block_found = false;
        for (int y = 0; y + 1 < sk.h && !block_found; ++y)
            for (int x = 0; x + 1 < sk.w && !block_found; ++x) {
                if (!(fg(sk, y, x) && fg(sk, y, x + 1) && fg(sk, y + 1, x) &&
                      fg(sk, y + 1, x + 1)))
                    continue;
                const int cand[4][2] = {{y, x}, {y, x + 1}, {y + 1, x}, {y + 1, x + 1}};
                for (auto& c : cand) {
                    int n[8];
                    neighbors8(sk, c[0], c[1], n);
                    if (count_neighbors(n) >= 2 && transitions(n) == 1) {
                        sk.at(c[0], c[1]) = 0.0;
                        block_found = true;
                        break;
                    }
                }
                if (!block_found) { // degenerate isolated square: keep one corner row
                    sk.at(y + 1, x + 1) = 0.0;
                    block_found = true;
                }
            }
    }
    return sk;
}

// ---------------------------------------------------------------- extraction

namespace {

const int kDy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
const int kDx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

} // namespace

VesselGraph extract_graph(const Plane& skeleton, int min_spur_len) {
    const int h = skeleton.h, w = skeleton.w;
    VesselGraph g;
    g.h = h;
    g.w = w;

    auto idx = [w](int y, int x) { return static_cast<size_t>(y) * w + x; };
    std::vector<int> degree(static_cast<size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!fg(skeleton, y, x)) continue;
            int d = 0;
            for (int k = 0; k < 8; ++k) d += fg(skeleton, y + kDy[k], x + kDx[k]);
            degree[idx(y, x)] = d;
        }

    // node pixels: endpoints (deg 1) and branch pixels (deg >= 3); branch
    // pixels 8-adjacent to each other merge into one cluster
    std::vector<int> node_id(static_cast<size_t>(h) * w, -1);
    struct Cluster {
        long sx = 0, sy = 0;
        int count = 0;
        bool endpoint = false;
    };
    std::vector<Cluster> clusters;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!fg(skeleton, y, x) || node_id[idx(y, x)] >= 0) continue;
            int d = degree[idx(y, x)];
            if (d == 1) {
                node_id[idx(y, x)] = static_cast<int>(clusters.size());
                clusters.push_back({x, y, 1, true});
            } else if (d >= 3) {
                int id = static_cast<int>(clusters.size());
                clusters.push_back({});
                std::deque<std::pair<int, int>> q{{y, x}};
                node_id[idx(y, x)] = id;
                while (!q.empty()) {
                    auto [cy, cx] = q.front();
                    q.pop_front();
                    clusters[id].sx += cx;
                    clusters[id].sy += cy;
                    ++clusters[id].count;
                    for (int k = 0; k < 8; ++k) {
                        int ny = cy + kDy[k], nx = cx + kDx[k];
                        if (!fg(skeleton, ny, nx)) continue;
                        if (degree[idx(ny, nx)] >= 3 && node_id[idx(ny, nx)] < 0) {
                            node_id[idx(ny, nx)] = id;
                            q.push_back({ny, nx});
                        }
                    }
                }
            }
        }

    // trace corridors (non-node pixels all have degree 2)
    struct RawEdge {
        int a, b, len;
    };
    std::vector<RawEdge> raw_edges;
    std::set<std::pair<int, int>> edge_keys;
    std::vector<char> corridor_done(static_cast<size_t>(h) * w, 0);

    auto add_edge = [&](int a, int b, int len) {
        if (a == b) return; // self-path dropped
        auto key = std::minmax(a, b);
        if (edge_keys.insert({key.first, key.second}).second)
            raw_edges.push_back({key.first, key.second, len});
    };

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int start_id = node_id[idx(y, x)];
            if (start_id < 0 || !fg(skeleton, y, x)) continue;
            for (int k = 0; k < 8; ++k) {
                int ny = y + kDy[k], nx = x + kDx[k];
                if (!fg(skeleton, ny, nx)) continue;
                int nid = node_id[idx(ny, nx)];
                if (nid >= 0) {
                    if (nid != start_id) add_edge(start_id, nid, 1);
                    continue;
                }
                if (corridor_done[idx(ny, nx)]) continue;
                // walk the degree-2 corridor
                int py = y, px = x, cy = ny, cx = nx, len = 1;
                while (true) {
                    corridor_done[idx(cy, cx)] = 1;
                    int ty = -1, tx = -1;
                    for (int kk = 0; kk < 8; ++kk) {
                        int yy = cy + kDy[kk], xx = cx + kDx[kk];
                        if (!fg(skeleton, yy, xx) || (yy == py && xx == px)) continue;
                        ty = yy;
                        tx = xx;
                        break;
                    }
                    if (ty < 0) { // dead end without a node pixel (should not happen)
                        break;
                    }
                    ++len;
                    if (node_id[idx(ty, tx)] >= 0) {
                        add_edge(start_id, node_id[idx(ty, tx)], len);
                        break;
                    }
                    py = cy;
                    px = cx;
                    cy = ty;
                    cx = tx;
                }
            }
        }

    // components without any node pixel (isolated cycles, lone pixels):
    // contribute one anchor node at their lexicographically first pixel
    {
        std::vector<char> seen(static_cast<size_t>(h) * w, 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!fg(skeleton, y, x) || seen[idx(y, x)]) continue;
                bool has_node = false;
                std::vector<std::pair<int, int>> comp;
                std::deque<std::pair<int, int>> q{{y, x}};
                seen[idx(y, x)] = 1;
                while (!q.empty()) {
                    auto [cy, cx] = q.front();
                    q.pop_front();
                    comp.push_back({cy, cx});
                    if (node_id[idx(cy, cx)] >= 0) has_node = true;
                    for (int k = 0; k < 8; ++k) {
                        int nny = cy + kDy[k], nnx = cx + kDx[k];
                        if (fg(skeleton, nny, nnx) && !seen[idx(nny, nnx)]) {
                            seen[idx(nny, nnx)] = 1;
                            q.push_back({nny, nnx});
                        }
                    }
                }
                if (!has_node) {
                    auto [ay, ax] = comp.front(); // row-major scan: lexicographic min
                    clusters.push_back({ax, ay, 1, false});
                }
            }
    }

    // spur pruning: drop leaf endpoints whose single edge is shorter than
    // min_spur_len, together with the edge
    std::vector<int> graph_degree(clusters.size(), 0);
    for (const auto& e : raw_edges) {
        ++graph_degree[e.a];
        ++graph_degree[e.b];
    }
    std::vector<char> drop_node(clusters.size(), 0);
    std::vector<char> drop_edge(raw_edges.size(), 0);
    for (size_t i = 0; i < raw_edges.size(); ++i) {
        const auto& e = raw_edges[i];
        if (e.len >= min_spur_len) continue;
        int leaf = -1;
        if (clusters[e.a].endpoint && graph_degree[e.a] == 1) leaf = e.a;
        else if (clusters[e.b].endpoint && graph_degree[e.b] == 1) leaf = e.b;
        if (leaf >= 0) {
            drop_edge[i] = 1;
            drop_node[leaf] = 1;
        }
    }

    // emit nodes (centroids) and remap edges
    std::vector<int> remap(clusters.size(), -1);
    std::map<std::pair<int, int>, int> coord_to_node; // merge coincident centroids
    for (size_t i = 0; i < clusters.size(); ++i) {
        if (drop_node[i]) continue;
        const auto& c = clusters[i];
        int cx = std::clamp(static_cast<int>(std::lround(double(c.sx) / c.count)), 0, w - 1);
        int cy = std::clamp(static_cast<int>(std::lround(double(c.sy) / c.count)), 0, h - 1);
        auto it = coord_to_node.find({cx, cy});
        if (it != coord_to_node.end()) {
            remap[i] = it->second;
        } else {
            remap[i] = static_cast<int>(g.nodes.size());
            coord_to_node[{cx, cy}] = remap[i];
            g.nodes.push_back({cx, cy});
        }
    }
    std::set<std::pair<int, int>> final_edges;
    for (size_t i = 0; i < raw_edges.size(); ++i) {
        if (drop_edge[i]) continue;
        int a = remap[raw_edges[i].a], b = remap[raw_edges[i].b];
        if (a < 0 || b < 0 || a == b) continue;
        final_edges.insert(std::minmax(a, b));
    }
    g.edges.assign(final_edges.begin(), final_edges.end());
    return g;
}

VesselGraph scale_graph(const VesselGraph& graph, int new_h, int new_w) {
    if (new_h <= 0 || new_w <= 0) throw ShapeError("scale_graph: target must be positive");
    VesselGraph out;
    out.h = new_h;
    out.w = new_w;
    const double sy = graph.h > 0 ? static_cast<double>(new_h) / graph.h : 1.0;
    const double sx = graph.w > 0 ? static_cast<double>(new_w) / graph.w : 1.0;

    std::vector<int> remap(graph.nodes.size(), -1);
    std::map<std::pair<int, int>, int> coord_to_node;
    for (size_t i = 0; i < graph.nodes.size(); ++i) {
        auto [x, y] = graph.nodes[i];
        int nx = std::clamp(static_cast<int>(std::lround(x * sx)), 0, new_w - 1);
        int ny = std::clamp(static_cast<int>(std::lround(y * sy)), 0, new_h - 1);
        auto it = coord_to_node.find({nx, ny});
        if (it != coord_to_node.end()) {
            remap[i] = it->second;
        } else {
            remap[i] = static_cast<int>(out.nodes.size());
            coord_to_node[{nx, ny}] = remap[i];
            out.nodes.push_back({nx, ny});
        }
    }
    std::set<std::pair<int, int>> es;
    for (auto [i, j] : graph.edges) {
        int a = remap[i], b = remap[j];
        if (a == b) continue;
        es.insert(std::minmax(a, b));
    }
    out.edges.assign(es.begin(), es.end());
    return out;
}

std::string graph_to_json(const VesselGraph& graph) {
    nlohmann::json j;
    j["image_size"] = {graph.h, graph.w};
    auto& nodes = j["nodes"] = nlohmann::json::array();
    for (auto [x, y] : graph.nodes) nodes.push_back({x, y});
    auto& edges = j["edges"] = nlohmann::json::array();
    for (auto [a, b] : graph.edges) edges.push_back({a, b});
    return j.dump();
}

VesselGraph graph_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    VesselGraph g;
    g.h = j.at("image_size").at(0).get<int>();
    g.w = j.at("image_size").at(1).get<int>();
    for (const auto& n : j.at("nodes")) g.nodes.push_back({n.at(0).get<int>(), n.at(1).get<int>()});
    for (const auto& e : j.at("edges")) g.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    g.validate();
    return g;
}

} // namespace tagat
