#include "phonssm/graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace phonssm {

namespace {

AnatomicalGraph finalize(int node_count, std::vector<std::pair<int, int>> raw_edges) {
    std::set<std::pair<int, int>> dedup;
    for (auto [a, b] : raw_edges) {
        if (a == b || a < 0 || b < 0 || a >= node_count || b >= node_count)
            throw std::logic_error("graph: bad edge");
        dedup.emplace(std::min(a, b), std::max(a, b));
    }
    if (dedup.size() != raw_edges.size()) throw std::logic_error("graph: duplicate edge");

    AnatomicalGraph g;
    g.node_count = node_count;
    g.edges.assign(dedup.begin(), dedup.end());
    g.mask.assign(static_cast<std::size_t>(node_count) * node_count, 0);
    for (int i = 0; i < node_count; ++i)
        g.mask[static_cast<std::size_t>(i) * node_count + i] = 1;
    for (auto [a, b] : g.edges) {
        g.mask[static_cast<std::size_t>(a) * node_count + b] = 1;
        g.mask[static_cast<std::size_t>(b) * node_count + a] = 1;
    }
    g.neighbors.assign(static_cast<std::size_t>(node_count), {});
    for (int i = 0; i < node_count; ++i) g.neighbors[static_cast<std::size_t>(i)].push_back(i);
    for (auto [a, b] : g.edges) {
        g.neighbors[static_cast<std::size_t>(a)].push_back(b);
        g.neighbors[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
    return g;
}

// 21-landmark hand edges, local indices (wrist = 0, four joints per finger,
// thumb through pinky).
std::vector<std::pair<int, int>> hand21_edges() {
    std::vector<std::pair<int, int>> e;
    // finger chains, wrist through tip
    for (int base : {1, 5, 9, 13, 17}) {
        e.emplace_back(0, base);
        e.emplace_back(base, base + 1);
        e.emplace_back(base + 1, base + 2);
        e.emplace_back(base + 2, base + 3);
    }
    // palm web across the bases (thumb included)
    e.emplace_back(1, 5);
    e.emplace_back(5, 9);
    e.emplace_back(9, 13);
    e.emplace_back(13, 17);
    // index-middle and ring-pinky coupling at the proximal joints
    e.emplace_back(6, 10);
    e.emplace_back(14, 18);
    return e;
}

// 33-landmark pose topology. The standard connection list leaves the face
// (0-8) and mouth (9,10) detached from the body, so nose-to-mouth and
// nose-to-shoulder edges are added to keep the graph a single component.
std::vector<std::pair<int, int>> pose33_edges() {
    std::vector<std::pair<int, int>> e = {
        {0, 1},   {1, 2},   {2, 3},   {3, 7},   {0, 4},   {4, 5},   {5, 6},   {6, 8},
        {9, 10},  {11, 12}, {11, 13}, {13, 15}, {15, 17}, {15, 19}, {15, 21}, {17, 19},
        {12, 14}, {14, 16}, {16, 18}, {16, 20}, {16, 22}, {18, 20}, {11, 23}, {12, 24},
        {23, 24}, {23, 25}, {24, 26}, {25, 27}, {26, 28}, {27, 29}, {28, 30}, {29, 31},
        {30, 32}, {27, 31}, {28, 32},
        // attachment edges
        {0, 9},   {0, 10},  {0, 11},  {0, 12},
    };
    return e;
}

}  // namespace

std::size_t AnatomicalGraph::mask_true_count() const {
    std::size_t n = 0;
    for (std::uint8_t m : mask) n += m;
    return n;
}

bool AnatomicalGraph::is_connected() const {
    if (node_count == 0) return false;
    std::vector<char> seen(static_cast<std::size_t>(node_count), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int reached = 1;
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int v : neighbors[static_cast<std::size_t>(u)]) {
            if (v == u || seen[static_cast<std::size_t>(v)]) continue;
            seen[static_cast<std::size_t>(v)] = 1;
            ++reached;
            q.push(v);
        }
    }
    return reached == node_count;
}

AnatomicalGraph build_hand_graph(const LandmarkLayout& layout) {
    if (layout.kind != LayoutKind::DominantHand21)
        throw std::invalid_argument("build_hand_graph: layout must be DominantHand21");
    return finalize(kHandNodeCount, hand21_edges());
}

AnatomicalGraph build_holistic_graph(const LandmarkLayout& layout) {
    if (layout.kind != LayoutKind::PoseHands75)
        throw std::invalid_argument("build_holistic_graph: layout must be PoseHands75");
    std::vector<std::pair<int, int>> e = pose33_edges();
    for (int offset : {kLeftHandOffset, kRightHandOffset})
        for (auto [a, b] : hand21_edges()) e.emplace_back(a + offset, b + offset);
    // pose wrists (15 left, 16 right) to the hand wrists
    e.emplace_back(15, kLeftHandOffset);
    e.emplace_back(16, kRightHandOffset);
    return finalize(75, std::move(e));
}

std::string edge_list_text(const AnatomicalGraph& g) {
    std::ostringstream os;
    for (auto [a, b] : g.edges) os << a << ' ' << b << '\n';
    return os.str();
}

void export_edge_list(const AnatomicalGraph& g, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("export_edge_list: cannot open " + path);
    f << edge_list_text(g);
}

}  // namespace phonssm
