#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace inslam {

struct PixelCoord {
    int row = 0;
    int col = 0;
    bool operator==(const PixelCoord&) const = default;
    auto operator<=>(const PixelCoord&) const = default;
};

// A disjoint set of pixels from one frame, produced by clustering.
struct InstanceMask {
    std::vector<PixelCoord> pixels;  // sorted (row, col), unique
    int frame_index = 0;
    size_t size() const { return pixels.size(); }
};

// Unit-norm pooled descriptor of a mask (mean feature, L2-normalized).
struct MaskDescriptor {
    Eigen::VectorXd vector;
    int frame_index = 0;
    int mask_index = 0;
};

struct ClusterConfig {
    double epsilon = 0.75;    // cosine threshold, in (-1, 1)
    int delta = 20;           // clusters must exceed this many pixels
    uint64_t seed = 0;
    int max_iters = 0;        // 0 = one iteration per valid pixel
};

// Greedy iterative peeling: pick a random remaining feature as seed, gather
// everything with cosine > epsilon, refine the center once (normalized mean),
// re-gather against the refined center, keep the cluster iff its size exceeds
// delta, and remove its features from the pool either way. Zero-norm features
// count as invalid. Deterministic given cfg.seed.
std::vector<InstanceMask> cluster_embeddings(const std::vector<float>& embedding,
                                             int height, int width, int dim,
                                             const std::vector<uint8_t>& valid,
                                             const ClusterConfig& cfg);

// Sum of the mask's raw features, L2-normalized. Throws std::domain_error if
// the sum has (near-)zero norm.
MaskDescriptor pool_and_normalize(const std::vector<float>& embedding, int height,
                                  int width, int dim, const InstanceMask& mask);

// Oracle partition: connected components of the graph with an edge wherever
// pairwise cosine > epsilon. Quadratic; capped at 5000 features.
std::vector<std::vector<int>> brute_force_clusters(
    const std::vector<Eigen::VectorXd>& features, double epsilon);

// The default minimum cluster size is calibrated at 64x48; other resolutions
// scale it by pixel area.
int scaled_delta(int delta_at_base, int height, int width);

}  // namespace inslam
