#include "inslam/lie.hpp"

#include <cmath>

namespace inslam {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Scalar coefficients of W(sigma, phi) = C I + A phi^ + B phi^^2, the matrix
// mapping rho to the translation of sim3_exp. Derived from
// W = integral_0^1 exp(sigma u) exp(u phi^) du. Branches keep every regime
// free of catastrophic cancellation.
void sim3_w_coeffs(double sigma, double theta, double& A, double& B, double& C) {
    const double t2 = theta * theta;
    const double c = sigma * sigma + t2;
    C = (std::abs(sigma) < 1e-17) ? 1.0 : std::expm1(sigma) / sigma;

    if (c < 1e-4) {
        // Bivariate Taylor expansion, total order 4 (error < 1e-12 here).
        const double s2 = sigma * sigma;
        A = 0.5 + sigma / 3.0 + s2 / 8.0 + s2 * sigma / 30.0 + s2 * s2 / 144.0
            - t2 / 24.0 - sigma * t2 / 30.0 - s2 * t2 / 72.0 + t2 * t2 / 720.0;
        B = 1.0 / 6.0 + sigma / 8.0 + s2 / 20.0 + s2 * sigma / 72.0 + s2 * s2 / 336.0
            - t2 / 120.0 - sigma * t2 / 144.0 + t2 * t2 / 5040.0;
        return;
    }

    const double s = std::exp(sigma);
    if (theta < 1e-9) {
        // |sigma| >= ~1e-2 in this branch. The phi terms are O(theta) so the
        // theta-corrections to A and B are negligible.
        A = (s * (sigma - 1.0) + 1.0) / (sigma * sigma);
        B = (s * (0.5 * sigma * sigma - sigma + 1.0) - 1.0)
            / (sigma * sigma * sigma);
        return;
    }

    const double a = s * std::sin(theta);
    const double b = s * std::cos(theta);
    A = (a * sigma + (1.0 - b) * theta) / (theta * c);
    B = (C - ((b - 1.0) * sigma + a * theta) / c) / t2;
}

Eigen::Matrix3d sim3_w(double sigma, const Eigen::Vector3d& phi) {
    double A, B, C;
    sim3_w_coeffs(sigma, phi.norm(), A, B, C);
    const Eigen::Matrix3d hat = skew(phi);
    return C * Eigen::Matrix3d::Identity() + A * hat + B * (hat * hat);
}

}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

Eigen::Matrix3d orthonormalized(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return r;
}

SE3Pose compose(const SE3Pose& a, const SE3Pose& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Eigen::Matrix4d SE3Pose::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
}

Sim3Transform Sim3Transform::inverse() const {
    Sim3Transform r;
    r.scale = 1.0 / scale;
    r.rotation = rotation.transpose();
    r.translation = -(r.scale * (r.rotation * translation));
    r.compose_count = compose_count;
    return r;
}

Eigen::Matrix4d Sim3Transform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = scale * rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
}

Sim3Transform Sim3Transform::from_matrix(const Eigen::Matrix4d& m) {
    Sim3Transform s;
    const Eigen::Matrix3d sr = m.topLeftCorner<3, 3>();
    // det(sR) = s^3; rows of sR have norm s.
    s.scale = std::cbrt(sr.determinant());
    s.rotation = sr / s.scale;
    s.translation = m.topRightCorner<3, 1>();
    return s;
}

Sim3Transform compose(const Sim3Transform& a, const Sim3Transform& b) {
    Sim3Transform r;
    r.scale = a.scale * b.scale;
    r.rotation = a.rotation * b.rotation;
    r.translation = a.scale * (a.rotation * b.translation) + a.translation;
    r.compose_count = std::max(a.compose_count, b.compose_count) + 1;
    if (r.compose_count >= 64) {
        r.rotation = orthonormalized(r.rotation);
        r.compose_count = 0;
    }
    return r;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& phi) {
    const double t2 = phi.squaredNorm();
    const double theta = std::sqrt(t2);
    double k1, k2;  // sin(t)/t and (1-cos(t))/t^2
    if (theta < 1e-4) {
        k1 = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        k2 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    } else {
        k1 = std::sin(theta) / theta;
        const double sh = std::sin(0.5 * theta);
        k2 = 2.0 * sh * sh / t2;
    }
    const Eigen::Matrix3d hat = skew(phi);
    return Eigen::Matrix3d::Identity() + k1 * hat + k2 * (hat * hat);
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation) {
    Eigen::Vector3d vee;
    vee << rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
        rotation(1, 0) - rotation(0, 1);
    vee *= 0.5;
    const double cos_theta =
        std::clamp(0.5 * (rotation.trace() - 1.0), -1.0, 1.0);
    const double sin_theta = vee.norm();
    const double theta = std::atan2(sin_theta, cos_theta);
    if (theta > kPi - 1e-6) {
        throw RotationNearPiError("so3_log: rotation angle within 1e-6 of pi");
    }
    if (theta < 1e-10) {
        return vee;
    }
    return vee * (theta / sin_theta);
}

SE3Pose se3_exp(const Eigen::Matrix<double, 6, 1>& v) {
    const Eigen::Vector3d rho = v.head<3>();
    const Eigen::Vector3d phi = v.tail<3>();
    return {so3_exp(phi), sim3_w(0.0, phi) * rho};
}

Eigen::Matrix<double, 6, 1> se3_log(const SE3Pose& pose) {
    const Eigen::Vector3d phi = so3_log(pose.rotation);
    const Eigen::Vector3d rho =
        sim3_w(0.0, phi).partialPivLu().solve(pose.translation);
    Eigen::Matrix<double, 6, 1> v;
    v << rho, phi;
    return v;
}

Sim3Transform sim3_exp(const TangentVec7& v) {
    Sim3Transform s;
    s.scale = std::exp(v.sigma);
    s.rotation = so3_exp(v.phi);
    s.translation = sim3_w(v.sigma, v.phi) * v.rho;
    return s;
}

TangentVec7 sim3_log(const Sim3Transform& s) {
    TangentVec7 v;
    v.sigma = std::log(s.scale);
    v.phi = so3_log(s.rotation);
    v.rho = sim3_w(v.sigma, v.phi).partialPivLu().solve(s.translation);
    return v;
}

Sim3Transform fit_sim3_umeyama(std::span<const Eigen::Vector3d> src,
                               std::span<const Eigen::Vector3d> dst,
                               std::span<const double> weights) {
    const size_t n = src.size();
    if (n != dst.size() || (!weights.empty() && weights.size() != n)) {
        throw std::invalid_argument("fit_sim3_umeyama: size mismatch");
    }
    if (n < 3) {
        throw DegeneratePointSetError("fit_sim3_umeyama: need >= 3 correspondences");
    }

    double wsum = 0.0;
    Eigen::Vector3d mu_src = Eigen::Vector3d::Zero();
    Eigen::Vector3d mu_dst = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (w < 0.0) throw std::invalid_argument("fit_sim3_umeyama: negative weight");
        wsum += w;
        mu_src += w * src[i];
        mu_dst += w * dst[i];
    }
    if (wsum <= 0.0) {
        throw DegeneratePointSetError("fit_sim3_umeyama: all weights zero");
    }
    mu_src /= wsum;
    mu_dst /= wsum;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_src = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        const Eigen::Vector3d ds = src[i] - mu_src;
        const Eigen::Vector3d dd = dst[i] - mu_dst;
        cov += w * dd * ds.transpose();
        var_src += w * ds.squaredNorm();
    }
    cov /= wsum;
    var_src /= wsum;

    if (var_src < 1e-18 * std::max(1.0, mu_src.squaredNorm())) {
        throw DegeneratePointSetError("fit_sim3_umeyama: coincident source points");
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d d = svd.singularValues();
    if (d(1) < 1e-12 * d(0) || d(0) <= 0.0) {
        throw DegeneratePointSetError("fit_sim3_umeyama: collinear correspondences");
    }

    Eigen::Vector3d sign = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        sign(2) = -1.0;
    }
    Sim3Transform out;
    out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
    out.scale = d.dot(sign) / var_src;
    if (!(out.scale > 0.0)) {
        throw DegeneratePointSetError("fit_sim3_umeyama: nonpositive scale");
    }
    out.translation = mu_dst - out.scale * (out.rotation * mu_src);
    return out;
}

}  // namespace inslam
