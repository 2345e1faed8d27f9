#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace inslam {

// Thrown by sim3_log / so3_log when the rotation angle is too close to pi
// for the axis to be recovered reliably.
struct RotationNearPiError : std::domain_error {
    using std::domain_error::domain_error;
};

// Thrown by fit_sim3_umeyama on coincident or collinear correspondence sets.
struct DegeneratePointSetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tangent vector of Sim(3): translational part rho, rotational part phi
// (radians), log-scale sigma. Ordering matches the 7-vector (rho, phi, sigma)
// used by the pose graph and the g2o-style text format.
struct TangentVec7 {
    Eigen::Vector3d rho = Eigen::Vector3d::Zero();
    Eigen::Vector3d phi = Eigen::Vector3d::Zero();
    double sigma = 0.0;

    Eigen::Matrix<double, 7, 1> vec() const {
        Eigen::Matrix<double, 7, 1> v;
        v << rho, phi, sigma;
        return v;
    }
    static TangentVec7 from_vec(const Eigen::Matrix<double, 7, 1>& v) {
        return {v.head<3>(), v.segment<3>(3), v(6)};
    }
    double norm() const { return vec().norm(); }
};

// Rigid transform: x -> R x + t. Rotation kept as a matrix; inputs are
// expected orthonormal with det +1.
struct SE3Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return rotation * p + translation;
    }
    SE3Pose inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }
    Eigen::Matrix4d matrix() const;
};

SE3Pose compose(const SE3Pose& a, const SE3Pose& b);

// Similarity transform: x -> s R x + t, s > 0. Values are immutable; every
// operation returns a new transform. compose_count tracks chain length so
// long products get re-orthonormalized every 64 steps.
struct Sim3Transform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double scale = 1.0;
    int compose_count = 0;

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return scale * (rotation * p) + translation;
    }
    Sim3Transform inverse() const;
    // 4x4 with the scale folded into the rotation block (upper-left = s R).
    Eigen::Matrix4d matrix() const;
    static Sim3Transform from_matrix(const Eigen::Matrix4d& m);
    static Sim3Transform from_se3(const SE3Pose& p) {
        return {p.rotation, p.translation, 1.0, 0};
    }
    SE3Pose to_se3() const { return {rotation, translation}; }
    static Sim3Transform identity() { return {}; }
};

Sim3Transform compose(const Sim3Transform& a, const Sim3Transform& b);

// SO(3) exponential/logarithm. so3_log throws RotationNearPiError when the
// angle exceeds pi - 1e-6.
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& phi);
Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation);
Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// SE(3) exponential/logarithm with tangent ordering (rho, phi).
SE3Pose se3_exp(const Eigen::Matrix<double, 6, 1>& v);
Eigen::Matrix<double, 6, 1> se3_log(const SE3Pose& pose);

// Sim(3) exponential/logarithm. exp is total; log requires rotation angle
// below pi (see so3_log).
Sim3Transform sim3_exp(const TangentVec7& v);
TangentVec7 sim3_log(const Sim3Transform& s);

// Weighted Umeyama fit: the similarity minimizing sum_i w_i |dst_i - S(src_i)|^2.
// Needs >= 3 correspondences spanning at least a plane; coincident or
// collinear sets raise DegeneratePointSetError. Empty weights = uniform.
Sim3Transform fit_sim3_umeyama(std::span<const Eigen::Vector3d> src,
                               std::span<const Eigen::Vector3d> dst,
                               std::span<const double> weights = {});

// Orthogonal projection of a near-rotation matrix onto SO(3).
Eigen::Matrix3d orthonormalized(const Eigen::Matrix3d& m);

}  // namespace inslam
