#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "phonssm/tensor.hpp"

namespace phonssm {

enum class LayoutKind { DominantHand21, PoseHands75 };

struct LandmarkLayout {
    LayoutKind kind = LayoutKind::DominantHand21;
    int node_count = 21;
    int coord_dims = 3;

    static LandmarkLayout dominant_hand21() { return {LayoutKind::DominantHand21, 21, 3}; }
    static LandmarkLayout pose_hands75() { return {LayoutKind::PoseHands75, 75, 3}; }
};

/// Skeletal connectivity plus the boolean attention mask derived from it.
/// Immutable after construction; mask[i][j] is true iff (i,j) is an edge or
/// i == j (self-attention), and is always symmetric.
struct AnatomicalGraph {
    int node_count = 0;
    std::vector<std::pair<int, int>> edges;   // unordered pairs, stored (lo,hi), sorted
    std::vector<std::uint8_t> mask;           // node_count × node_count, row-major
    std::vector<std::vector<int>> neighbors;  // per node, sorted, includes self

    bool mask_at(int i, int j) const {
        return mask[static_cast<std::size_t>(i) * node_count + j] != 0;
    }
    std::size_t mask_true_count() const;
    bool is_connected() const;  // ignoring self-loops
};

/// Model input: T frames of N landmarks with 3 coordinates each.
struct LandmarkSequence {
    LandmarkLayout layout;
    Tensor coords;  // [T × N × 3]
    int frames() const { return coords.rank() == 3 ? coords.dim(0) : 0; }
};

// Offsets of the hand blocks inside the 75-landmark holistic layout.
inline constexpr int kPoseNodeCount = 33;
inline constexpr int kLeftHandOffset = 33;
inline constexpr int kRightHandOffset = 54;
inline constexpr int kHandNodeCount = 21;

/// Fixed 21-node dominant-hand graph: per-finger chains from the wrist,
/// the palm web across the knuckles, and index-middle / ring-pinky
/// coupling edges. 26 edges total; the exact list is committed under
/// docs/hand21_edges.txt.
AnatomicalGraph build_hand_graph(const LandmarkLayout& layout);

/// 75-node pose+hands graph: standard 33-point pose topology (augmented so
/// the face and mouth attach to the body), two hand subgraphs, and one
/// wrist bridge per side.
AnatomicalGraph build_holistic_graph(const LandmarkLayout& layout);

/// One "i j" pair per line.
std::string edge_list_text(const AnatomicalGraph& g);
void export_edge_list(const AnatomicalGraph& g, const std::string& path);

}  // namespace phonssm
