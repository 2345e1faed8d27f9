#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "inslam/clustering.hpp"
#include "inslam/instance_map.hpp"
#include "inslam/lie.hpp"

namespace inslam {

// Per-instance prototype vectors maintained by running average, plus the
// monotone id counter used for fresh instances.
struct FeatureBank {
    std::map<int64_t, Eigen::VectorXd> prototypes;
    std::map<int64_t, int> counts;
    int64_t next_id = 0;

    int64_t allocate() { return next_id++; }
    // b <- normalize((c b + f) / (c + 1)); exact fixed point on constant input.
    void update(int64_t id, const Eigen::VectorXd& descriptor);
    void insert_new(int64_t id, const Eigen::VectorXd& descriptor);
};

struct AffinityConfig {
    double alpha = 0.4;      // geometric weight
    double beta = 0.6;       // semantic weight
    double tau_match = 0.55;
    void validate() const;
};

struct AffinityLogRow {
    int mask_index = 0;
    int64_t instance_id = 0;
    double s_geo = 0.0;
    double s_sem = 0.0;
    double affinity = 0.0;
    bool chosen = false;
};

struct AssociationResult {
    std::vector<int64_t> assignments;  // per mask: matched or freshly created id
    std::set<int64_t> new_ids;
    std::vector<AffinityLogRow> affinity_log;
};

// Projects each instance's stored points into the frame: camera-frame z must
// be positive, the pixel inside the image, and the point not occluded (point
// depth <= observed depth + z_tol). Returns sorted flat pixel indices per
// instance; instances with no surviving pixel are absent.
std::map<int64_t, std::vector<int>> project_instances(
    const GlobalInstanceMap& map, const Sim3Transform& world_from_camera,
    const CameraIntrinsics& intrinsics, const std::vector<float>& depth,
    int height, int width, double z_tol = 0.05);

// |a intersect b| / |a union b| over pixel sets; 0 when the union is empty.
double mask_iou(const InstanceMask& mask, const std::vector<int>& projected_flat,
                int width);

// Joint geometric-semantic association: candidates are instances with
// positive IoU, affinity = alpha * IoU + beta * <f_k, b_j>, accepted above
// tau_match, otherwise a fresh instance. Masks are processed in descending
// order of their best affinity and a claimed instance is removed from later
// candidate sets, so no instance is assigned twice in one frame. Argmax ties
// break toward the lowest instance id.
AssociationResult associate(
    const std::vector<std::pair<InstanceMask, MaskDescriptor>>& masks,
    const std::map<int64_t, std::vector<int>>& projections, FeatureBank& bank,
    const AffinityConfig& cfg, int width);

}  // namespace inslam
