#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "cct/nn.hpp"

// Dynamic topology from learned coordinates plus edge/triangle message passing (GT-Full).
namespace cct {

struct SimplicialComplex {
    std::size_t n = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (src, dst)
    std::vector<std::uint8_t> adjacency;                     // n*n, symmetric, zero diagonal
    std::vector<std::array<std::size_t, 3>> triangles;

    bool adjacent(std::size_t i, std::size_t j) const { return adjacency[i * n + j] != 0; }

    std::vector<std::size_t> neighbors(std::size_t v) const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < n; ++j)
            if (adjacent(v, j)) out.push_back(j);
        return out;
    }

    // Undirected edges (i < j) of the symmetrized adjacency, lexicographic.
    std::vector<std::pair<std::size_t, std::size_t>> undirected_edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (adjacent(i, j)) out.emplace_back(i, j);
        return out;
    }
};

// Row-major point set [n, dim] viewed as doubles.
struct PointSet {
    std::size_t n = 0, dim = 0;
    std::vector<double> xs;

    double dist2(std::size_t a, std::size_t b) const {
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = xs[a * dim + c] - xs[b * dim + c];
            s += d * d;
        }
        return s;
    }
};

namespace detail {

inline void symmetrize(SimplicialComplex& sc) {
    sc.adjacency.assign(sc.n * sc.n, 0);
    for (auto [s, d] : sc.edges) {
        sc.adjacency[s * sc.n + d] = 1;
        sc.adjacency[d * sc.n + s] = 1;
    }
}

// The k nearest of `candidates` to v, ties broken by lower index.
inline std::vector<std::size_t> nearest(const PointSet& pts, std::size_t v, std::vector<std::size_t> candidates,
                                        std::size_t k) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(candidates.size());
    for (auto c : candidates) scored.emplace_back(pts.dist2(v, c), c);
    const auto take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
    return out;
}

}  // namespace detail

// Each vertex i gets edges i -> j to its k nearest other vertices; adjacency is the symmetrization.
inline SimplicialComplex knn_graph(const PointSet& pts, std::size_t k) {
    if (k >= pts.n) throw ContractError(fmt::format("knn_graph: k={} must be < T={}", k, pts.n));
    SimplicialComplex sc;
    sc.n = pts.n;
    for (std::size_t i = 0; i < pts.n; ++i) {
        std::vector<std::size_t> cand;
        for (std::size_t j = 0; j < pts.n; ++j)
            if (j != i) cand.push_back(j);
        for (auto j : detail::nearest(pts, i, cand, k)) sc.edges.emplace_back(i, j);
    }
    detail::symmetrize(sc);
    return sc;
}

// Triples i<j<k with all three edges present, lexicographic, truncated to `cap`.
inline std::vector<std::array<std::size_t, 3>> lift_triangles(const SimplicialComplex& sc, std::size_t cap) {
    std::vector<std::array<std::size_t, 3>> out;
    for (std::size_t i = 0; i < sc.n && out.size() < cap; ++i)
        for (std::size_t j = i + 1; j < sc.n && out.size() < cap; ++j) {
            if (!sc.adjacent(i, j)) continue;
            for (std::size_t k = j + 1; k < sc.n && out.size() < cap; ++k)
                if (sc.adjacent(i, k) && sc.adjacent(j, k)) out.push_back({i, j, k});
        }
    return out;
}

// Causal variant used inside the decoder: token t links to its min(k, t) nearest predecessors with
// edges (neighbor -> t), so every message into t is computed from positions <= t.
inline SimplicialComplex causal_knn_graph(const PointSet& pts, std::size_t k) {
    SimplicialComplex sc;
    sc.n = pts.n;
    for (std::size_t t = 1; t < pts.n; ++t) {
        std::vector<std::size_t> cand(t);
        for (std::size_t j = 0; j < t; ++j) cand[j] = j;
        for (auto j : detail::nearest(pts, t, cand, k)) sc.edges.emplace_back(j, t);
    }
    detail::symmetrize(sc);
    return sc;
}

// Triangles ordered by their largest vertex, then (i, j); the cap therefore never lets a later
// token change which triangles an earlier token sees.
inline std::vector<std::array<std::size_t, 3>> causal_triangles(const SimplicialComplex& sc, std::size_t cap) {
    std::vector<std::array<std::size_t, 3>> out;
    for (std::size_t k = 2; k < sc.n && out.size() < cap; ++k)
        for (std::size_t i = 0; i < k && out.size() < cap; ++i) {
            if (!sc.adjacent(i, k)) continue;
            for (std::size_t j = i + 1; j < k && out.size() < cap; ++j)
                if (sc.adjacent(j, k) && sc.adjacent(i, j)) out.push_back({i, j, k});
        }
    return out;
}

// ---- Ollivier-Ricci curvature ----

namespace detail {

// All-pairs hop counts; unreachable pairs are capped at the largest finite distance (at least 1).
inline std::vector<std::size_t> hop_distances(const SimplicialComplex& sc) {
    constexpr auto inf = std::numeric_limits<std::size_t>::max();
    const std::size_t n = sc.n;
    std::vector<std::size_t> dist(n * n, inf);
    std::size_t diameter = 1;
    for (std::size_t s = 0; s < n; ++s) {
        std::queue<std::size_t> q;
        dist[s * n + s] = 0;
        q.push(s);
        while (!q.empty()) {
            const auto u = q.front();
            q.pop();
            for (std::size_t v = 0; v < n; ++v) {
                if (sc.adjacent(u, v) && dist[s * n + v] == inf) {
                    dist[s * n + v] = dist[s * n + u] + 1;
                    diameter = std::max(diameter, dist[s * n + v]);
                    q.push(v);
                }
            }
        }
    }
    for (auto& d : dist)
        if (d == inf) d = diameter;
    return dist;
}

// Exact balanced transportation by successive shortest paths on integer supplies.
inline std::int64_t min_cost_transport(const std::vector<std::int64_t>& supply, const std::vector<std::int64_t>& demand,
                                       const std::vector<std::int64_t>& cost) {
    const std::size_t ns = supply.size(), nd = demand.size();
    const std::size_t src = ns + nd, sink = src + 1, nv = sink + 1;
    struct Arc {
        std::size_t to;
        std::int64_t cap, cost;
    };
    std::vector<Arc> arcs;
    std::vector<std::vector<std::size_t>> out(nv);
    auto link = [&](std::size_t a, std::size_t b, std::int64_t cap, std::int64_t c) {
        out[a].push_back(arcs.size());
        arcs.push_back({b, cap, c});
        out[b].push_back(arcs.size());
        arcs.push_back({a, 0, -c});
    };
    for (std::size_t i = 0; i < ns; ++i) link(src, i, supply[i], 0);
    for (std::size_t j = 0; j < nd; ++j) link(ns + j, sink, demand[j], 0);
    for (std::size_t i = 0; i < ns; ++i)
        for (std::size_t j = 0; j < nd; ++j) link(i, ns + j, std::numeric_limits<std::int64_t>::max() / 4, cost[i * nd + j]);

    std::int64_t total = 0;
    constexpr auto inf = std::numeric_limits<std::int64_t>::max() / 4;
    while (true) {
        std::vector<std::int64_t> d(nv, inf);
        std::vector<std::size_t> via(nv, arcs.size());
        d[src] = 0;
        for (std::size_t round = 0; round < nv; ++round) {  // Bellman-Ford; residual graph has negative arcs
            bool changed = false;
            for (std::size_t u = 0; u < nv; ++u) {
                if (d[u] == inf) continue;
                for (auto a : out[u]) {
                    if (arcs[a].cap > 0 && d[u] + arcs[a].cost < d[arcs[a].to]) {
                        d[arcs[a].to] = d[u] + arcs[a].cost;
                        via[arcs[a].to] = a;
                        changed = true;
                    }
                }
            }
            if (!changed) break;
        }
        if (d[sink] == inf) break;
        std::int64_t push = inf;
        for (auto v = sink; v != src; v = arcs[via[v] ^ 1].to) push = std::min(push, arcs[via[v]].cap);
        for (auto v = sink; v != src; v = arcs[via[v] ^ 1].to) {
            arcs[via[v]].cap -= push;
            arcs[via[v] ^ 1].cap += push;
        }
        total += push * d[sink];
    }
    return total;
}

}  // namespace detail

// W1 between uniform neighbor measures of x and y under the hop metric.
inline double neighbor_w1(const SimplicialComplex& sc, std::size_t x, std::size_t y,
                          const std::vector<std::size_t>& hops) {
    const auto nx = sc.neighbors(x), ny = sc.neighbors(y);
    if (nx.empty() || ny.empty()) throw ContractError("ollivier_ricci: endpoint without neighbors");
    // Scale masses to integers: each of x's neighbors holds |N(y)| units, each of y's holds |N(x)|.
    std::vector<std::int64_t> supply(nx.size(), static_cast<std::int64_t>(ny.size()));
    std::vector<std::int64_t> demand(ny.size(), static_cast<std::int64_t>(nx.size()));
    std::vector<std::int64_t> cost(nx.size() * ny.size());
    for (std::size_t i = 0; i < nx.size(); ++i)
        for (std::size_t j = 0; j < ny.size(); ++j)
            cost[i * ny.size() + j] = static_cast<std::int64_t>(hops[nx[i] * sc.n + ny[j]]);
    const auto c = detail::min_cost_transport(supply, demand, cost);
    return static_cast<double>(c) / static_cast<double>(nx.size() * ny.size());
}

inline double ollivier_ricci(const SimplicialComplex& sc, std::size_t x, std::size_t y) {
    if (x >= sc.n || y >= sc.n || !sc.adjacent(x, y)) throw ContractError("ollivier_ricci: edge not present");
    return 1.0 - neighbor_w1(sc, x, y, detail::hop_distances(sc));
}

// Curvature of every undirected edge, lexicographic edge order.
inline std::vector<double> edge_curvatures(const SimplicialComplex& sc) {
    const auto hops = detail::hop_distances(sc);
    std::vector<double> out;
    for (auto [i, j] : sc.undirected_edges()) out.push_back(1.0 - neighbor_w1(sc, i, j, hops));
    return out;
}

// ---- message passing ----

struct GtConfig {
    std::size_t d_coord = 0;  // 0 -> d_model / 2
    std::size_t k = 4;
    std::size_t triangle_cap = 64;
    double coord_clamp = 20.0;
    double gate_bias = -5.0;
};

template <class T>
struct GtFullWeights {
    Linear<T> coord;     // d -> dc
    Mlp2<T> edge_mlp;    // 2dc -> dc -> dm
    Mlp2<T> tri_mlp;     // 2dc -> dc -> dm
    Linear<T> gate;      // d -> 1
    Linear<T> readout;   // dm -> d
    std::size_t d_coord = 0, d_msg = 0;

    static GtFullWeights make(ParamSet<T>& ps, const std::string& p, std::size_t d_model, const GtConfig& cfg) {
        GtFullWeights w;
        w.d_coord = cfg.d_coord ? cfg.d_coord : d_model / 2;
        w.d_msg = w.d_coord;
        const auto dc = w.d_coord, dm = w.d_msg;
        const auto n = InitSpec::normal(0.02);
        const auto z = InitSpec::zeros();
        const auto tier = LrTier::cognitive;
        const auto own = Component::gt_full;
        w.coord = Linear<T>::make(ps, p + "coord", d_model, dc, n, z, tier, own);
        w.edge_mlp = {Linear<T>::make(ps, p + "edge_mlp.0", 2 * dc, dc, n, z, tier, own),
                      Linear<T>::make(ps, p + "edge_mlp.1", dc, dm, n, z, tier, own)};
        w.tri_mlp = {Linear<T>::make(ps, p + "tri_mlp.0", 2 * dc, dc, n, z, tier, own),
                     Linear<T>::make(ps, p + "tri_mlp.1", dc, dm, n, z, tier, own)};
        w.gate = Linear<T>::make(ps, p + "gate_proj", d_model, 1, z, InitSpec::constant(cfg.gate_bias), tier, own);
        w.readout = Linear<T>::make(ps, p + "readout", dm, d_model, z, z, tier, own);
        return w;
    }
};

template <class T>
Tensor<T> project_coords(const Linear<T>& coord, const Tensor<T>& h, T bound = T(20)) {
    return clamp(coord(h), -bound, bound);
}

// coords: [N, dc] over all nodes; edges index rows of coords. Each dst node averages the messages of
// its incoming edges; nodes with none get zero.
template <class T>
Tensor<T> edge_messages(const Tensor<T>& coords, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        const Mlp2<T>& mlp, std::size_t d_msg) {
    const std::size_t n = coords.size(0);
    if (edges.empty()) return Tensor<T>::zeros({n, d_msg});
    std::vector<std::size_t> src, dst;
    for (auto [s, d] : edges) {
        src.push_back(s);
        dst.push_back(d);
    }
    auto in = concat_last<T>({gather_rows(coords, std::span<const std::size_t>(src)),
                              gather_rows(coords, std::span<const std::size_t>(dst))});
    return scatter_mean(mlp(in), std::span<const std::size_t>(dst), n);
}

enum class TriangleDelivery { all_vertices, max_vertex };

// Permutation-invariant triangle features concat(sum, mean) of the three vertex coordinates.
template <class T>
Tensor<T> triangle_messages(const Tensor<T>& coords, const std::vector<std::array<std::size_t, 3>>& tris,
                            const Mlp2<T>& mlp, std::size_t d_msg, TriangleDelivery delivery) {
    const std::size_t n = coords.size(0);
    if (tris.empty()) return Tensor<T>::zeros({n, d_msg});
    std::array<std::vector<std::size_t>, 3> v;
    for (const auto& t : tris)
        for (int c = 0; c < 3; ++c) v[c].push_back(t[c]);
    auto s = add(add(gather_rows(coords, std::span<const std::size_t>(v[0])),
                     gather_rows(coords, std::span<const std::size_t>(v[1]))),
                 gather_rows(coords, std::span<const std::size_t>(v[2])));
    auto msg = mlp(concat_last<T>({s, scale(s, T(1) / T(3))}));
    if (delivery == TriangleDelivery::max_vertex) {
        std::vector<std::size_t> top;
        for (const auto& t : tris) top.push_back(std::max({t[0], t[1], t[2]}));
        return scatter_mean(msg, std::span<const std::size_t>(top), n);
    }
    std::vector<std::size_t> all;
    for (int c = 0; c < 3; ++c) all.insert(all.end(), v[c].begin(), v[c].end());
    return scatter_mean(concat_rows<T>({msg, msg, msg}), std::span<const std::size_t>(all), n);
}

// h + sigmoid(gate_proj(h)) * readout(msg)
template <class T>
Tensor<T> gated_fuse(const Tensor<T>& h, const Tensor<T>& geo_msg, const Linear<T>& gate, const Linear<T>& readout) {
    return add(h, mul(readout(geo_msg), sigmoid(gate(h))));
}

template <class T>
struct GtOutput {
    Tensor<T> h;
    std::vector<SimplicialComplex> topology;  // one per batch element
};

template <class T>
PointSet to_points(const Tensor<T>& coords, std::size_t b, std::size_t n, std::size_t dc) {
    PointSet p{n, dc, std::vector<double>(n * dc)};
    for (std::size_t i = 0; i < n * dc; ++i) p.xs[i] = static_cast<double>(coords[b * n * dc + i]);
    return p;
}

// Full causal GT-Full layer on h [B, T, d]. Topology is rebuilt per batch element from coordinate values
// and carries no gradient; gradients reach the coordinates only through the messages.
template <class T>
GtOutput<T> gt_full_forward(const GtFullWeights<T>& w, const GtConfig& cfg, const Tensor<T>& h) {
    const std::size_t B = h.size(0), S = h.size(1), dc = w.d_coord;
    auto coords = project_coords(w.coord, h, static_cast<T>(cfg.coord_clamp));
    GtOutput<T> out;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<std::array<std::size_t, 3>> tris;
    for (std::size_t b = 0; b < B; ++b) {
        auto sc = causal_knn_graph(to_points(coords, b, S, dc), cfg.k);
        sc.triangles = causal_triangles(sc, cfg.triangle_cap);
        for (auto [s, t] : sc.edges) edges.emplace_back(b * S + s, b * S + t);
        for (const auto& t : sc.triangles) tris.push_back({b * S + t[0], b * S + t[1], b * S + t[2]});
        out.topology.push_back(std::move(sc));
    }
    auto flat = reshape(coords, {B * S, dc});
    auto msg = add(edge_messages(flat, edges, w.edge_mlp, w.d_msg),
                   triangle_messages(flat, tris, w.tri_mlp, w.d_msg, TriangleDelivery::max_vertex));
    out.h = gated_fuse(h, reshape(msg, {B, S, w.d_msg}), w.gate, w.readout);
    return out;
}

}  // namespace cct
