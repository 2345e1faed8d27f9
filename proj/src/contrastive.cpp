#include "inslam/contrastive.hpp"

#include <cmath>
#include <stdexcept>

namespace inslam {

namespace {

struct Centroids {
    std::vector<Eigen::VectorXd> mu;          // per mask, plain mean
    std::vector<std::vector<int>> members;    // per mask, pixel indices
};

Centroids compute_centroids(const LabeledFeatureSet& set) {
    Centroids out;
    const int masks = set.mask_count();
    out.members.resize(masks);
    for (size_t p = 0; p < set.features.size(); ++p) {
        const int m = set.mask_of[p];
        if (m < 0 || m >= masks) throw std::invalid_argument("mask_of out of range");
        out.members[m].push_back(static_cast<int>(p));
    }
    out.mu.resize(masks);
    for (int m = 0; m < masks; ++m) {
        if (out.members[m].empty()) throw std::invalid_argument("empty mask");
        Eigen::VectorXd acc =
            Eigen::VectorXd::Zero(set.features[out.members[m][0]].size());
        for (int p : out.members[m]) acc += set.features[p];
        out.mu[m] = acc / static_cast<double>(out.members[m].size());
    }
    return out;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.dot(b) / (a.norm() * b.norm());
}

// d S(a, b) / d a for S = cosine similarity.
Eigen::VectorXd dcos_da(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    const double s = a.dot(b) / (na * nb);
    return b / (na * nb) - (s / (na * na)) * a;
}

LossResult zero_result(const LabeledFeatureSet& set) {
    LossResult r;
    r.grad.resize(set.features.size());
    for (size_t p = 0; p < set.features.size(); ++p) {
        r.grad[p] = Eigen::VectorXd::Zero(set.features[p].size());
    }
    return r;
}

// Shared body of the two centroid-pair losses. `same_identity` selects which
// ordered pairs contribute; `pull` flips the hinge direction.
LossResult centroid_pair_loss(const LabeledFeatureSet& set, double margin,
                              bool same_identity, bool pull) {
    LossResult r = zero_result(set);
    if (set.features.empty() || set.mask_count() == 0) return r;
    const Centroids cent = compute_centroids(set);
    const int n = set.mask_count();
    std::vector<Eigen::VectorXd> dmu(n);
    for (int m = 0; m < n; ++m) dmu[m] = Eigen::VectorXd::Zero(cent.mu[m].size());

    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            if ((set.identity_of[i] == set.identity_of[j]) != same_identity) continue;
            const double s = cosine(cent.mu[i], cent.mu[j]);
            const double arg = pull ? margin - s : s - margin;
            r.min_abs_hinge_arg = std::min(r.min_abs_hinge_arg, std::abs(arg));
            if (arg <= 0.0) continue;
            sum += arg;
            const double sign = pull ? -1.0 : 1.0;
            dmu[i] += sign * dcos_da(cent.mu[i], cent.mu[j]);
            dmu[j] += sign * dcos_da(cent.mu[j], cent.mu[i]);
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    r.loss = sum * inv;
    for (int m = 0; m < n; ++m) {
        const double scale = inv / static_cast<double>(cent.members[m].size());
        for (int p : cent.members[m]) r.grad[p] += scale * dmu[m];
    }
    return r;
}

}  // namespace

void LabeledFeatureSet::validate() const {
    if (features.size() != mask_of.size()) {
        throw std::invalid_argument("features/mask_of size mismatch");
    }
    if (view_of.size() != identity_of.size()) {
        throw std::invalid_argument("view_of/identity_of size mismatch");
    }
    for (const Eigen::VectorXd& f : features) {
        if (std::abs(f.norm() - 1.0) > 1e-6) {
            throw std::invalid_argument("feature not unit norm");
        }
    }
    compute_centroids(*this);  // throws on empty masks / bad indices
}

LossResult intra_pull_loss(const LabeledFeatureSet& set, const Margins& margins) {
    LossResult r = zero_result(set);
    if (set.features.empty() || set.mask_count() == 0) return r;
    const Centroids cent = compute_centroids(set);
    const int n = set.mask_count();

    double total = 0.0;
    for (int m = 0; m < n; ++m) {
        const auto& members = cent.members[m];
        const Eigen::VectorXd& mu = cent.mu[m];
        const double pixel_w = 1.0 / (static_cast<double>(n) * members.size());
        Eigen::VectorXd dmu = Eigen::VectorXd::Zero(mu.size());
        double mask_sum = 0.0;
        for (int p : members) {
            const double s = cosine(set.features[p], mu);
            const double arg = margins.m_pull - s;
            r.min_abs_hinge_arg = std::min(r.min_abs_hinge_arg, std::abs(arg));
            if (arg <= 0.0) continue;
            mask_sum += arg;
            r.grad[p] -= pixel_w * dcos_da(set.features[p], mu);
            dmu -= dcos_da(mu, set.features[p]);
        }
        total += mask_sum / members.size();
        // Every member moves the centroid: d mu / d f_q = I / |m|.
        const Eigen::VectorXd per_member = (pixel_w / members.size()) * dmu;
        for (int q : members) r.grad[q] += per_member;
    }
    r.loss = total / n;
    return r;
}

LossResult cross_pull_loss(const LabeledFeatureSet& set, const Margins& margins) {
    return centroid_pair_loss(set, margins.m_pull, /*same_identity=*/true,
                              /*pull=*/true);
}

LossResult push_loss(const LabeledFeatureSet& set, const Margins& margins) {
    return centroid_pair_loss(set, margins.m_push, /*same_identity=*/false,
                              /*pull=*/false);
}

double total_contrastive_loss(const LabeledFeatureSet& set, const Margins& margins) {
    return intra_pull_loss(set, margins).loss + cross_pull_loss(set, margins).loss +
           push_loss(set, margins).loss;
}

LabeledFeatureSet optimize_toy_embeddings(const LabeledFeatureSet& set,
                                          const Margins& margins, int steps,
                                          double lr) {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    LabeledFeatureSet cur = set;
    double cur_loss = total_contrastive_loss(cur, margins);
    for (int it = 0; it < steps && cur_loss > 0.0; ++it) {
        const LossResult a = intra_pull_loss(cur, margins);
        const LossResult b = cross_pull_loss(cur, margins);
        const LossResult c = push_loss(cur, margins);
        LabeledFeatureSet next = cur;
        for (size_t p = 0; p < next.features.size(); ++p) {
            next.features[p] -= lr * (a.grad[p] + b.grad[p] + c.grad[p]);
            const double norm = next.features[p].norm();
            if (norm > 1e-12) next.features[p] /= norm;
        }
        const double next_loss = total_contrastive_loss(next, margins);
        if (next_loss > cur_loss) {
            lr *= 0.5;  // keep the loss non-increasing; retry smaller
            continue;
        }
        cur = std::move(next);
        cur_loss = next_loss;
    }
    return cur;
}

}  // namespace inslam
