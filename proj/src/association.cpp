#include "inslam/association.hpp"

#include <algorithm>
#include <cmath>

namespace inslam {

void AffinityConfig::validate() const {
    if (alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0) {
        throw std::invalid_argument("affinity weights must be nonnegative, not both zero");
    }
}

void FeatureBank::update(int64_t id, const Eigen::VectorXd& descriptor) {
    const int c = counts.at(id);
    Eigen::VectorXd blended = c * prototypes.at(id) + descriptor;
    const double norm = blended.norm();
    if (norm > 1e-12) blended /= norm;
    prototypes[id] = std::move(blended);
    counts[id] = c + 1;
}

void FeatureBank::insert_new(int64_t id, const Eigen::VectorXd& descriptor) {
    prototypes[id] = descriptor;
    counts[id] = 1;
    next_id = std::max(next_id, id + 1);
}

std::map<int64_t, std::vector<int>> project_instances(
    const GlobalInstanceMap& map, const Sim3Transform& world_from_camera,
    const CameraIntrinsics& intrinsics, const std::vector<float>& depth,
    int height, int width, double z_tol) {
    const Sim3Transform camera_from_world = world_from_camera.inverse();
    std::map<int64_t, std::vector<int>> out;
    for (const auto& [id, inst] : map.instances) {
        std::vector<int> pixels;
        for (const Eigen::Vector3d& p : inst.points) {
            const Eigen::Vector3d cam = camera_from_world.apply(p);
            if (cam.z() <= 0.0) continue;
            const long u = std::lround(intrinsics.fx * cam.x() / cam.z() + intrinsics.cx);
            const long v = std::lround(intrinsics.fy * cam.y() / cam.z() + intrinsics.cy);
            if (u < 0 || u >= width || v < 0 || v >= height) continue;
            const size_t px = static_cast<size_t>(v) * width + u;
            if (cam.z() > depth[px] + z_tol) continue;  // occluded
            pixels.push_back(static_cast<int>(px));
        }
        if (pixels.empty()) continue;
        std::sort(pixels.begin(), pixels.end());
        pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
        out.emplace(id, std::move(pixels));
    }
    return out;
}

double mask_iou(const InstanceMask& mask, const std::vector<int>& projected_flat,
                int width) {
    size_t inter = 0;
    size_t i = 0, j = 0;
    // mask.pixels are sorted by (row, col), so flat indices are ascending.
    while (i < mask.pixels.size() && j < projected_flat.size()) {
        const int a = mask.pixels[i].row * width + mask.pixels[i].col;
        const int b = projected_flat[j];
        if (a == b) {
            ++inter;
            ++i;
            ++j;
        } else if (a < b) {
            ++i;
        } else {
            ++j;
        }
    }
    const size_t uni = mask.pixels.size() + projected_flat.size() - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

AssociationResult associate(
    const std::vector<std::pair<InstanceMask, MaskDescriptor>>& masks,
    const std::map<int64_t, std::vector<int>>& projections, FeatureBank& bank,
    const AffinityConfig& cfg, int width) {
    cfg.validate();
    const int k_count = static_cast<int>(masks.size());

    struct Candidate {
        int64_t id;
        double s_geo, s_sem, affinity;
    };
    std::vector<std::vector<Candidate>> candidates(k_count);
    std::vector<double> best_affinity(k_count,
                                      -std::numeric_limits<double>::infinity());

    AssociationResult result;
    result.assignments.assign(k_count, -1);
    for (int k = 0; k < k_count; ++k) {
        for (const auto& [id, projected] : projections) {
            const double iou = mask_iou(masks[k].first, projected, width);
            if (iou <= 0.0) continue;
            const double s_sem = masks[k].second.vector.dot(bank.prototypes.at(id));
            const double a = cfg.alpha * iou + cfg.beta * s_sem;
            candidates[k].push_back({id, iou, s_sem, a});
            best_affinity[k] = std::max(best_affinity[k], a);
            result.affinity_log.push_back({k, id, iou, s_sem, a, false});
        }
    }

    // Greedy pass in descending best-affinity order; physical instances occur
    // at most once per frame, so a claimed id leaves later candidate sets.
    std::vector<int> order(k_count);
    for (int k = 0; k < k_count; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return best_affinity[a] > best_affinity[b];
    });

    std::set<int64_t> claimed;
    for (int k : order) {
        const Candidate* best = nullptr;
        for (const Candidate& c : candidates[k]) {  // ascending id: ties keep lowest
            if (claimed.count(c.id)) continue;
            if (!best || c.affinity > best->affinity) best = &c;
        }
        if (best && best->affinity > cfg.tau_match) {
            result.assignments[k] = best->id;
            claimed.insert(best->id);
            bank.update(best->id, masks[k].second.vector);
            for (AffinityLogRow& row : result.affinity_log) {
                if (row.mask_index == k && row.instance_id == best->id) row.chosen = true;
            }
        } else {
            const int64_t fresh = bank.allocate();
            bank.insert_new(fresh, masks[k].second.vector);
            result.assignments[k] = fresh;
            result.new_ids.insert(fresh);
        }
    }
    return result;
}

}  // namespace inslam
