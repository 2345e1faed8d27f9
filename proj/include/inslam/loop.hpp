#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "inslam/chunk.hpp"
#include "inslam/clustering.hpp"
#include "inslam/lie.hpp"

namespace inslam {

struct LoopCandidate {
    int query_frame = 0;   // global frame index, strictly after place_frame
    int place_frame = 0;
    double retrieval_distance = 0.0;  // meters between camera centers
};

struct LoopConfig {
    double radius = 3.0;          // spatial retrieval radius, meters
    int min_temporal_gap = 240;   // frames (two default chunks)
    int tau_loop = 3;             // accepted iff inliers exceed this
    double cos_min = 0.8;         // descriptor cosine for mutual matches
    double r_in = 0.10;           // RANSAC inlier residual, meters
    int ransac_iters = 200;
    uint64_t seed = 0;
    ClusterConfig cluster;        // for clustering the re-inferred pair
};

struct LoopMatch {
    int query_mask = 0;
    int place_mask = 0;
    double cosine = 0.0;
    double residual = 0.0;  // meters, against the final fit
};

struct LoopVerification {
    std::vector<LoopMatch> matches;  // mutual nearest neighbors above cos_min
    int consistent_count = 0;        // RANSAC inliers
    bool accepted = false;
    // Maps query-camera coordinates into place-camera coordinates, recovered
    // from the matched instance centroids (inlier refit).
    std::optional<Sim3Transform> relative_sim3;
    // Same mapping read off the pair chunk's own poses. Instance matching
    // verifies the pair; the jointly inferred poses carry no mask-centroid
    // visibility bias, so pose-graph constraints are built from this one.
    std::optional<Sim3Transform> relative_from_poses;
};

struct OverlapResult {
    double ratio = 0.0;
    int64_t covisible_pixels = 0;
    int64_t valid_source_pixels = 0;
};

// A frame plus the world pose used for overlap or benchmark computations.
struct KeyframeView {
    const ChunkOutput* chunk = nullptr;
    int frame_index = 0;
    SE3Pose world_pose;  // camera -> world
    int global_index = 0;

    const FrameOutput& frame() const { return chunk->frames[frame_index]; }
};

// Keyframes whose camera center lies within radius of the current frame's
// and whose index is at most current - min_temporal_gap, sorted by distance.
// keyframe_indices empty = consider every index.
std::vector<LoopCandidate> retrieve_candidates(
    const std::vector<SE3Pose>& trajectory, int current, double radius,
    int min_temporal_gap, const std::vector<int>& keyframe_indices = {});

// Verifies a re-inferred 2-frame pair chunk (frame 0 = place, frame 1 =
// query): clusters both frames, pools descriptors, forms mutual-nearest-
// neighbor matches above cos_min, back-projects mask centroids into the
// pair's shared frame, and RANSAC-fits a Sim(3) between the two centroid
// sets. Accepted iff the inlier count exceeds tau_loop; relative_sim3 is the
// inlier refit expressed camera-to-camera.
LoopVerification verify_loop(const ChunkOutput& pair_output, const LoopConfig& cfg);

// Overlap rate: valid source pixels that re-project into the target frame
// (positive depth, in bounds) and agree with the target depth within
// depth_tol. Throws std::domain_error when the source has no valid pixel.
OverlapResult compute_overlap(const KeyframeView& source, const KeyframeView& target,
                              double depth_tol);

struct LoopBenchmark {
    std::vector<int> places;   // indices into the keyframe list
    std::vector<int> queries;
    Eigen::MatrixXd overlap;   // queries x places, query-as-source overlap
};

// Greedy place/query split at the given stride: a keyframe becomes a place
// if its best overlap against all existing places is below place_threshold.
LoopBenchmark build_loop_benchmark(const std::vector<KeyframeView>& keyframes,
                                   int stride, double place_threshold,
                                   double depth_tol = 0.05);

struct RetrievalMetrics {
    double precision = 0.0;
    double recall_at_1 = 0.0;
    double f1 = 0.0;
    int tp = 0, fp = 0, fn = 0;
};

// Top-1 retrieval scoring: a returned place is a true positive iff its
// overlap with the query exceeds tau; queries with at least one qualifying
// place and no correct return count as false negatives.
RetrievalMetrics evaluate_retrieval(
    const std::map<int, std::optional<int>>& top1_by_query,
    const LoopBenchmark& bench, double tau);

// Comparison baseline: frame descriptor = normalized mean of every pixel
// embedding (background included), retrieval by cosine.
Eigen::VectorXd global_mean_descriptor(const ChunkOutput& chunk, int frame_index);
std::map<int, std::optional<int>> retrieve_top1_global(
    const std::vector<Eigen::VectorXd>& query_desc,
    const std::vector<Eigen::VectorXd>& place_desc);

// Instance-anchored retrieval: per-frame mask descriptors from beta, scored
// by the number of mutual-nearest-neighbor matches above cos_min (mean match
// cosine breaks ties). Queries with no match anywhere abstain.
std::vector<Eigen::VectorXd> frame_instance_descriptors(const ChunkOutput& chunk,
                                                        int frame_index,
                                                        const ClusterConfig& cfg);
std::map<int, std::optional<int>> retrieve_top1_instances(
    const std::vector<std::vector<Eigen::VectorXd>>& query_sets,
    const std::vector<std::vector<Eigen::VectorXd>>& place_sets, double cos_min);

}  // namespace inslam
