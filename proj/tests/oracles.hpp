// Test-only oracles: independent second implementations used to cross-check
// the library. Nothing here may call the code path it verifies.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "inslam/chunk.hpp"
#include "inslam/contrastive.hpp"
#include "inslam/lie.hpp"
#include "inslam/loop.hpp"
#include "inslam/synthetic.hpp"

namespace inslam::oracle {

// Geometric (closest-approach) sphere test and per-face box test; the library
// renderer uses the quadratic and slab forms.
struct RayHit {
    int object = -1;
    double t = 0.0;
};
RayHit raycast(const SyntheticScene& scene, const Eigen::Vector3d& origin,
               const Eigen::Vector3d& dir);

// Plain-double re-implementation of the overlap rate at 1:1 resolution.
struct OverlapCount {
    int64_t covisible = 0;
    int64_t valid = 0;
};
OverlapCount overlap_count(const KeyframeView& source, const KeyframeView& target,
                           double depth_tol);

// Central finite differences of a scalar loss over every feature coordinate.
// Returns the max relative error against the analytic gradient.
template <typename LossFn>
double fd_gradient_max_rel_error(const LabeledFeatureSet& set, const Margins& margins,
                                 LossFn&& loss_fn, double h = 1e-5) {
    const LossResult analytic = loss_fn(set, margins);
    double max_rel = 0.0;
    for (size_t p = 0; p < set.features.size(); ++p) {
        for (int i = 0; i < set.features[p].size(); ++i) {
            LabeledFeatureSet plus = set, minus = set;
            plus.features[p](i) += h;
            minus.features[p](i) -= h;
            const double fd =
                (loss_fn(plus, margins).loss - loss_fn(minus, margins).loss) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(analytic.grad[p](i)), 1e-6});
            max_rel = std::max(max_rel, std::abs(fd - analytic.grad[p](i)) / scale);
        }
    }
    return max_rel;
}

// Confusion-count twin for the semantic metrics.
struct ConfusionCounts {
    std::map<std::string, int64_t> gt_count, tp, assigned;
};
ConfusionCounts confusion_counts(const std::vector<Eigen::Vector3d>& pred_points,
                                 const std::vector<std::string>& pred_labels,
                                 const std::vector<Eigen::Vector3d>& gt_points,
                                 const std::vector<std::string>& gt_labels,
                                 double radius);

Sim3Transform random_sim3(std::mt19937_64& rng, double max_angle = 3.0,
                          double max_sigma = 0.7);
SE3Pose random_se3(std::mt19937_64& rng, double max_angle = 3.0);
Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim);

}  // namespace inslam::oracle
