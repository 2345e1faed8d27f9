#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "inslam/chunk.hpp"
#include "inslam/clustering.hpp"
#include "inslam/lie.hpp"

namespace inslam {

// A persistent 3D instance: fused world-frame points (each tagged with the
// chunk it came from, so loop corrections can re-anchor it), the instance
// prototype mirrored from the feature bank, and an optional language-space
// feature of external dimension.
struct GlobalInstance {
    int64_t id = 0;
    std::vector<Eigen::Vector3d> points;
    std::vector<int64_t> point_chunks;  // provenance, parallel to points
    Eigen::VectorXd prototype;
    Eigen::VectorXd semantic_feature;   // size 0 = absent
    int semantic_obs = 0;
    int64_t last_seen = -1;             // global frame index

    std::unordered_set<uint64_t> voxel_keys;  // dedup cells, derived state
};

struct GlobalInstanceMap {
    std::map<int64_t, GlobalInstance> instances;
    double voxel_size = 0.02;

    GlobalInstance& get_or_create(int64_t id);
};

struct LabelSet {
    std::vector<std::pair<std::string, Eigen::VectorXd>> labels;  // unit-norm
    void validate() const;
};

struct LabelAssignment {
    std::string name;
    double score = 0.0;
    bool low_confidence = false;  // no semantic feature or all-zero cosine
};

// Back-projects the mask's valid-depth pixels through the frame's intrinsics,
// maps them into the world with world_from_camera, and merges them into the
// instance with voxel-grid dedup. A mask with no valid depth is a no-op.
// Also pools the frame's language raster over the mask (when present) into
// the instance's semantic feature by running mean.
void fuse_observation(GlobalInstanceMap& map, int64_t instance_id,
                      const InstanceMask& mask, const ChunkOutput& chunk,
                      int frame_index, const Sim3Transform& world_from_camera,
                      int64_t global_frame_index);

// Per-instance argmax over label-embedding cosines; instances without a
// semantic feature map to "unknown". Throws std::invalid_argument on an
// empty label set.
std::map<int64_t, LabelAssignment> assign_labels(const GlobalInstanceMap& map,
                                                 const LabelSet& labels);

// Applies each point's chunk correction (world -> corrected world). Points
// whose chunk has no correction keep their position; the count of such
// points is returned so callers can warn.
size_t retag_on_loop(GlobalInstanceMap& map,
                     const std::map<int64_t, Sim3Transform>& corrections);

// Text-header + per-instance binary block export, and a PLY point export
// (x y z, instance id as a scalar property) for external viewers.
void export_map(const GlobalInstanceMap& map, const std::filesystem::path& path);
void export_map_ply(const GlobalInstanceMap& map, const std::filesystem::path& path);

}  // namespace inslam
