#include "oracles.hpp"

#include <cmath>

namespace inslam::oracle {

namespace {

// Closest-approach sphere intersection (vs the library's quadratic form).
double sphere_hit(const Sphere& s, const Eigen::Vector3d& o, const Eigen::Vector3d& w,
                  double t_min) {
    const Eigen::Vector3d l = s.center - o;
    const double ww = w.dot(w);
    const double t_ca = l.dot(w) / ww;
    const double d2 = l.dot(l) - t_ca * t_ca * ww;
    const double r2 = s.radius * s.radius;
    if (d2 > r2) return -1.0;
    const double t_hc = std::sqrt((r2 - d2) / ww);
    if (t_ca - t_hc > t_min) return t_ca - t_hc;
    if (t_ca + t_hc > t_min) return t_ca + t_hc;
    return -1.0;
}

// Six-plane box intersection (vs the library's slab form).
double box_hit(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& w,
               double t_min) {
    double best = -1.0;
    for (int axis = 0; axis < 3; ++axis) {
        for (int side = -1; side <= 1; side += 2) {
            const double plane = b.center(axis) + side * b.half_extents(axis);
            if (std::abs(w(axis)) < 1e-14) continue;
            const double t = (plane - o(axis)) / w(axis);
            if (t <= t_min) continue;
            bool inside = true;
            for (int other = 0; other < 3; ++other) {
                if (other == axis) continue;
                const double coord = o(other) + t * w(other);
                if (coord < b.center(other) - b.half_extents(other) - 1e-12 ||
                    coord > b.center(other) + b.half_extents(other) + 1e-12) {
                    inside = false;
                    break;
                }
            }
            if (inside && (best < 0.0 || t < best)) best = t;
        }
    }
    return best;
}

}  // namespace

RayHit raycast(const SyntheticScene& scene, const Eigen::Vector3d& origin,
               const Eigen::Vector3d& dir) {
    RayHit hit;
    for (size_t k = 0; k < scene.objects.size(); ++k) {
        const ScenePrimitive& prim = scene.objects[k].primitive;
        double t = -1.0;
        if (prim.kind == ScenePrimitive::Kind::Sphere) {
            t = sphere_hit(prim.sphere, origin, dir, 1e-6);
        } else {
            t = box_hit(prim.box, origin, dir, 1e-6);
        }
        if (t > 0.0 && (hit.object < 0 || t < hit.t)) {
            hit.object = static_cast<int>(k);
            hit.t = t;
        }
    }
    return hit;
}

OverlapCount overlap_count(const KeyframeView& source, const KeyframeView& target,
                           double depth_tol) {
    const FrameOutput& src = source.frame();
    const FrameOutput& tgt = target.frame();
    const int sh = source.chunk->height, sw = source.chunk->width;
    const int th = target.chunk->height, tw = target.chunk->width;

    // Hand-rolled pose arithmetic, mirroring the library's sequence:
    // world = R_s * cam + t_s; cam_t = R_t^T * world + (-R_t^T t_t).
    double rs[3][3], ts[3], rti[3][3], tti[3];
    for (int i = 0; i < 3; ++i) {
        ts[i] = source.world_pose.translation(i);
        for (int j = 0; j < 3; ++j) {
            rs[i][j] = source.world_pose.rotation(i, j);
            rti[i][j] = target.world_pose.rotation(j, i);
        }
    }
    for (int i = 0; i < 3; ++i) {
        tti[i] = -(rti[i][0] * target.world_pose.translation(0) +
                   rti[i][1] * target.world_pose.translation(1) +
                   rti[i][2] * target.world_pose.translation(2));
    }

    OverlapCount out;
    for (int r = 0; r < sh; ++r) {
        for (int c = 0; c < sw; ++c) {
            const double d = src.depth[static_cast<size_t>(r) * sw + c];
            if (d <= 0.0) continue;
            ++out.valid;
            const double cam[3] = {d * (c - src.intrinsics.cx) / src.intrinsics.fx,
                                   d * (r - src.intrinsics.cy) / src.intrinsics.fy, d};
            double world[3], camt[3];
            for (int i = 0; i < 3; ++i) {
                world[i] = rs[i][0] * cam[0] + rs[i][1] * cam[1] + rs[i][2] * cam[2] + ts[i];
            }
            for (int i = 0; i < 3; ++i) {
                camt[i] = rti[i][0] * world[0] + rti[i][1] * world[1] +
                          rti[i][2] * world[2] + tti[i];
            }
            if (camt[2] <= 0.0) continue;
            const long u =
                std::lround(tgt.intrinsics.fx * camt[0] / camt[2] + tgt.intrinsics.cx);
            const long v =
                std::lround(tgt.intrinsics.fy * camt[1] / camt[2] + tgt.intrinsics.cy);
            if (u < 0 || u >= tw || v < 0 || v >= th) continue;
            const double td = tgt.depth[static_cast<size_t>(v) * tw + u];
            if (std::abs(camt[2] - td) < depth_tol) ++out.covisible;
        }
    }
    return out;
}

ConfusionCounts confusion_counts(const std::vector<Eigen::Vector3d>& pred_points,
                                 const std::vector<std::string>& pred_labels,
                                 const std::vector<Eigen::Vector3d>& gt_points,
                                 const std::vector<std::string>& gt_labels,
                                 double radius) {
    ConfusionCounts out;
    for (size_t g = 0; g < gt_points.size(); ++g) {
        ++out.gt_count[gt_labels[g]];
        int best = -1;
        double best_d = radius;
        for (size_t p = 0; p < pred_points.size(); ++p) {
            const double d = (pred_points[p] - gt_points[g]).norm();
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(p);
            }
        }
        if (best < 0) continue;
        ++out.assigned[pred_labels[best]];
        if (pred_labels[best] == gt_labels[g]) ++out.tp[gt_labels[g]];
    }
    return out;
}

Sim3Transform random_sim3(std::mt19937_64& rng, double max_angle, double max_sigma) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Eigen::Vector3d axis(uni(rng), uni(rng), uni(rng));
    while (axis.norm() < 1e-6) axis = {uni(rng), uni(rng), uni(rng)};
    axis.normalize();
    std::uniform_real_distribution<double> angle_dist(0.0, max_angle);
    std::uniform_real_distribution<double> sigma_dist(-max_sigma, max_sigma);
    Sim3Transform s;
    s.rotation = so3_exp(axis * angle_dist(rng));
    s.translation = {uni(rng) * 2.0, uni(rng) * 2.0, uni(rng) * 2.0};
    s.scale = std::exp(sigma_dist(rng));
    return s;
}

SE3Pose random_se3(std::mt19937_64& rng, double max_angle) {
    const Sim3Transform s = random_sim3(rng, max_angle, 0.0);
    return {s.rotation, s.translation};
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd v(dim);
    do {
        for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
    } while (v.norm() < 1e-9);
    return v.normalized();
}

}  // namespace inslam::oracle
