#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "inslam/chunk.hpp"
#include "inslam/lie.hpp"

namespace inslam {

// Scene primitives are ray-castable analytic shapes.
struct Sphere {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 1.0;
};

struct Box {  // axis-aligned
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
};

struct ScenePrimitive {
    enum class Kind { Sphere, Box } kind = Kind::Sphere;
    Sphere sphere;
    Box box;

    static ScenePrimitive make_sphere(const Eigen::Vector3d& c, double r) {
        ScenePrimitive p;
        p.kind = Kind::Sphere;
        p.sphere = {c, r};
        return p;
    }
    static ScenePrimitive make_box(const Eigen::Vector3d& c, const Eigen::Vector3d& he) {
        ScenePrimitive p;
        p.kind = Kind::Box;
        p.box = {c, he};
        return p;
    }
    // Smallest ray parameter t > t_min with origin + t * dir inside the
    // surface, or nullopt. dir need not be unit length.
    std::optional<double> intersect(const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& dir,
                                    double t_min = 1e-6) const;
};

struct SceneObject {
    int32_t instance_id = 0;
    ScenePrimitive primitive;
    Eigen::VectorXd embedding;       // unit norm, dimension = scene embed_dim
    Eigen::VectorXd lang_embedding;  // optional (size 0 = absent), unit norm
};

// Per-frame corruption applied by the oracle renderer. Drift is a constant
// Sim(3) tangent rate accumulated over the local frame index of a chunk, so
// consecutive chunks disagree on their shared frames the way chained
// front-end inferences do.
struct NoiseModel {
    double depth_sigma = 0.0;   // meters
    double embed_sigma = 0.0;   // per-channel, before re-normalization
    TangentVec7 drift_rate;     // per local frame
};

struct SyntheticScene {
    std::vector<SceneObject> objects;
    std::vector<SE3Pose> trajectory;  // camera -> world, one per frame
    std::vector<double> timestamps;   // optional; defaults to frame index
    NoiseModel noise;
    CameraIntrinsics intrinsics;
    int height = 48;
    int width = 64;
    int embed_dim = 8;
    uint64_t seed = 0;

    void validate() const;  // unit-norm embeddings, consistent dimensions
    double timestamp_of(int frame) const {
        return timestamps.empty() ? static_cast<double>(frame) : timestamps[frame];
    }
};

// Everything the renderer knows that a real front-end would not expose.
struct ChunkGroundTruth {
    std::vector<int32_t> pixel_ids;       // N*H*W, -1 = background
    std::vector<SE3Pose> world_poses;     // noise-free camera -> world
    std::vector<SE3Pose> local_poses;     // noise-free camera -> chunk frame
    std::vector<int> frame_indices;       // global frame index per chunk frame
    bool any_hit = false;                 // false = empty frustum (warning)
};

struct RenderedChunk {
    ChunkOutput chunk;
    ChunkGroundTruth gt;
};

// Renders frames [first, first + count) of the scene into one chunk whose
// local frame is the noise-free camera frame of its first frame.
RenderedChunk render_synthetic_chunk(const SyntheticScene& scene, int first,
                                     int count, int64_t chunk_id,
                                     int overlap_with_prev = 0);

// Same, for an explicit (e.g. temporally downsampled) frame index list.
RenderedChunk render_synthetic_chunk_frames(const SyntheticScene& scene,
                                            const std::vector<int>& frame_indices,
                                            int64_t chunk_id,
                                            int overlap_with_prev = 0);

// Oracle stand-in for joint re-inference of a {place, query} frame pair:
// a fresh 2-frame chunk anchored at frame_a's camera, rendered with fresh
// noise, the same ground-truth object vectors, and no accumulated drift.
RenderedChunk simulate_reinference(const SyntheticScene& scene, int frame_a,
                                   int frame_b);

// count unit vectors with pairwise cosine <= 1 - gap, from a seeded RNG.
// Throws std::runtime_error if rejection sampling cannot satisfy the gap.
std::vector<Eigen::VectorXd> make_separated_embeddings(int count, int dim,
                                                       double gap, uint64_t seed);

// Camera pose looking from eye toward target, x right, y down, z forward.
SE3Pose lookat(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
               const Eigen::Vector3d& up = {0.0, 0.0, 1.0});

// Cameras on a horizontal circle of given radius about center, looking
// inward, sweeping angles [angle0, angle1).
std::vector<SE3Pose> orbit_trajectory(const Eigen::Vector3d& center, double radius,
                                      double height, int frames, double angle0,
                                      double angle1);

uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace inslam
