#pragma once

#include <Eigen/Dense>
#include <vector>

namespace inslam {

// Pixel features grouped into per-view masks, each mask tagged with the
// instance identity it observes. One mask per (view, identity) in
// well-formed data.
struct LabeledFeatureSet {
    std::vector<Eigen::VectorXd> features;  // one per pixel
    std::vector<int> mask_of;               // pixel -> mask index
    std::vector<int> view_of;               // mask -> view index
    std::vector<int> identity_of;           // mask -> instance identity

    int mask_count() const { return static_cast<int>(identity_of.size()); }
    void validate() const;  // unit-norm features, non-empty masks
};

struct Margins {
    double m_pull = 0.9;  // in (0, 1]
    double m_push = 0.2;  // in [0, 1), strictly below m_pull
};

struct LossResult {
    double loss = 0.0;
    std::vector<Eigen::VectorXd> grad;  // d loss / d feature, one per pixel
    // Smallest |hinge argument| over all contributing terms; tests use it to
    // reject evaluation points too close to a kink for finite differences.
    double min_abs_hinge_arg = std::numeric_limits<double>::infinity();
};

// Mean over masks of mean over member pixels of max(0, m_pull - S(f_p, mu)),
// where mu is the plain (unnormalized) mean of the mask's features. The
// gradient includes the dependence of mu on each member feature.
LossResult intra_pull_loss(const LabeledFeatureSet& set, const Margins& margins);

// Sum over ordered centroid pairs of equal identity of
// max(0, m_pull - S(mu_i, mu_j)), divided by the total number of centroids.
LossResult cross_pull_loss(const LabeledFeatureSet& set, const Margins& margins);

// Sum over ordered centroid pairs of different identity of
// max(0, S(mu_i, mu_j) - m_push), divided by the total number of centroids.
LossResult push_loss(const LabeledFeatureSet& set, const Margins& margins);

// Gradient descent on the sum of the three losses with re-normalization to
// unit length after every step; a step that would increase the loss is
// rejected and the learning rate halved.
LabeledFeatureSet optimize_toy_embeddings(const LabeledFeatureSet& set,
                                          const Margins& margins, int steps,
                                          double lr);

double total_contrastive_loss(const LabeledFeatureSet& set, const Margins& margins);

}  // namespace inslam
