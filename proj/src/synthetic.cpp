#include "inslam/synthetic.hpp"

#include <cmath>
#include <random>

namespace inslam {

namespace {

// splitmix64 step; decorrelates derived stream seeds.
uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct FrameRender {
    FrameOutput frame;
    std::vector<int32_t> ids;
    bool any_hit = false;
};

// Casts rays from the camera's true world pose (the scene primitives live in
// world coordinates), reports the pose in the chunk-local frame, and applies
// the Sim(3) distortion `drift` to pose and depth. Depth itself is
// camera-relative, so the frame choice only affects the pose field.
FrameRender render_frame(const SyntheticScene& scene, const SE3Pose& world_pose,
                         const SE3Pose& local_pose, const Sim3Transform& drift,
                         double timestamp, uint64_t frame_seed) {
    const int h = scene.height, w = scene.width, d = scene.embed_dim;
    FrameRender out;
    out.frame.intrinsics = scene.intrinsics;
    out.frame.timestamp = timestamp;
    out.frame.depth.assign(static_cast<size_t>(h) * w, 0.0f);
    out.frame.embedding.assign(static_cast<size_t>(h) * w * d, 0.0f);
    const int lang_dim =
        scene.objects.empty() ? 0 : static_cast<int>(scene.objects[0].lang_embedding.size());
    if (lang_dim > 0) {
        out.frame.lang.assign(static_cast<size_t>(h) * w * lang_dim, 0.0f);
    }
    out.ids.assign(static_cast<size_t>(h) * w, -1);

    std::mt19937_64 rng(frame_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const Eigen::Vector3d origin = world_pose.translation;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            Eigen::Vector3d dir_cam((c - scene.intrinsics.cx) / scene.intrinsics.fx,
                                    (r - scene.intrinsics.cy) / scene.intrinsics.fy,
                                    1.0);
            const Eigen::Vector3d dir = world_pose.rotation * dir_cam;
            double best_t = 0.0;
            int best = -1;
            for (size_t k = 0; k < scene.objects.size(); ++k) {
                if (auto t = scene.objects[k].primitive.intersect(origin, dir)) {
                    if (best < 0 || *t < best_t) {
                        best_t = *t;
                        best = static_cast<int>(k);
                    }
                }
            }
            if (best < 0) continue;
            out.any_hit = true;
            const size_t px = static_cast<size_t>(r) * w + c;
            out.ids[px] = scene.objects[best].instance_id;

            double depth = best_t;  // dir_cam.z == 1, so t is camera z
            if (scene.noise.depth_sigma > 0.0) depth += scene.noise.depth_sigma * gauss(rng);
            depth *= drift.scale;
            out.frame.depth[px] = static_cast<float>(std::max(depth, 1e-4));

            Eigen::VectorXd e = scene.objects[best].embedding;
            if (scene.noise.embed_sigma > 0.0) {
                for (int i = 0; i < d; ++i) e(i) += scene.noise.embed_sigma * gauss(rng);
                e.normalize();
            }
            for (int i = 0; i < d; ++i) {
                out.frame.embedding[px * d + i] = static_cast<float>(e(i));
            }
            if (lang_dim > 0 && scene.objects[best].lang_embedding.size() == lang_dim) {
                for (int i = 0; i < lang_dim; ++i) {
                    out.frame.lang[px * lang_dim + i] =
                        static_cast<float>(scene.objects[best].lang_embedding(i));
                }
            }
        }
    }

    out.frame.pose.rotation = drift.rotation * local_pose.rotation;
    out.frame.pose.translation = drift.apply(local_pose.translation);
    return out;
}

RenderedChunk render_span(const SyntheticScene& scene, const std::vector<int>& frames,
                          int64_t chunk_id, int overlap_with_prev, bool apply_drift,
                          uint64_t stream_tag) {
    scene.validate();
    RenderedChunk out;
    out.chunk.chunk_id = chunk_id;
    out.chunk.height = scene.height;
    out.chunk.width = scene.width;
    out.chunk.embed_dim = scene.embed_dim;
    out.chunk.lang_dim =
        scene.objects.empty() ? 0 : static_cast<int>(scene.objects[0].lang_embedding.size());
    out.chunk.overlap_with_prev = overlap_with_prev;

    const SE3Pose anchor_inv = scene.trajectory[frames[0]].inverse();
    for (size_t i = 0; i < frames.size(); ++i) {
        const int f = frames[i];
        const SE3Pose local = compose(anchor_inv, scene.trajectory[f]);
        Sim3Transform drift;
        if (apply_drift) {
            TangentVec7 v = scene.noise.drift_rate;
            const double steps = static_cast<double>(i);
            v.rho *= steps;
            v.phi *= steps;
            v.sigma *= steps;
            drift = sim3_exp(v);
        }
        const uint64_t fseed =
            mix_seed(scene.seed, splitmix64(stream_tag * 0x10001ULL + f));
        FrameRender fr = render_frame(scene, scene.trajectory[f], local, drift,
                                      scene.timestamp_of(f), fseed);
        out.chunk.frames.push_back(std::move(fr.frame));
        out.gt.pixel_ids.insert(out.gt.pixel_ids.end(), fr.ids.begin(), fr.ids.end());
        out.gt.world_poses.push_back(scene.trajectory[f]);
        out.gt.local_poses.push_back(local);
        out.gt.frame_indices.push_back(f);
        out.gt.any_hit = out.gt.any_hit || fr.any_hit;
    }
    out.chunk.validate();
    return out;
}

}  // namespace

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

std::optional<double> ScenePrimitive::intersect(const Eigen::Vector3d& origin,
                                                const Eigen::Vector3d& dir,
                                                double t_min) const {
    if (kind == Kind::Sphere) {
        const Eigen::Vector3d oc = origin - sphere.center;
        const double a = dir.squaredNorm();
        const double b = 2.0 * dir.dot(oc);
        const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) return std::nullopt;
        const double sq = std::sqrt(disc);
        const double t0 = (-b - sq) / (2.0 * a);
        if (t0 > t_min) return t0;
        const double t1 = (-b + sq) / (2.0 * a);
        if (t1 > t_min) return t1;
        return std::nullopt;
    }
    // Box: slab test per axis.
    double t_entry = -std::numeric_limits<double>::infinity();
    double t_exit = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
        const double lo = box.center(i) - box.half_extents(i);
        const double hi = box.center(i) + box.half_extents(i);
        if (std::abs(dir(i)) < 1e-12) {
            if (origin(i) < lo || origin(i) > hi) return std::nullopt;
            continue;
        }
        double ta = (lo - origin(i)) / dir(i);
        double tb = (hi - origin(i)) / dir(i);
        if (ta > tb) std::swap(ta, tb);
        t_entry = std::max(t_entry, ta);
        t_exit = std::min(t_exit, tb);
    }
    if (t_entry > t_exit) return std::nullopt;
    if (t_entry > t_min) return t_entry;
    if (t_exit > t_min) return t_exit;
    return std::nullopt;
}

void SyntheticScene::validate() const {
    if (trajectory.empty()) throw std::invalid_argument("scene has no trajectory");
    if (!timestamps.empty() && timestamps.size() != trajectory.size()) {
        throw std::invalid_argument("timestamps disagree with trajectory");
    }
    if (height <= 0 || width <= 0 || embed_dim <= 0 || intrinsics.fx <= 0.0 ||
        intrinsics.fy <= 0.0) {
        throw std::invalid_argument("bad scene camera parameters");
    }
    int lang_dim = -1;
    for (const SceneObject& o : objects) {
        if (o.embedding.size() != embed_dim) {
            throw std::invalid_argument("object embedding dimension mismatch");
        }
        if (std::abs(o.embedding.norm() - 1.0) > 1e-6) {
            throw std::invalid_argument("object embedding not unit norm");
        }
        const int ld = static_cast<int>(o.lang_embedding.size());
        if (lang_dim < 0) lang_dim = ld;
        if (ld != lang_dim) {
            throw std::invalid_argument("inconsistent lang embedding dimensions");
        }
    }
}

RenderedChunk render_synthetic_chunk(const SyntheticScene& scene, int first,
                                     int count, int64_t chunk_id,
                                     int overlap_with_prev) {
    if (first < 0 || count <= 0 ||
        first + count > static_cast<int>(scene.trajectory.size())) {
        throw std::invalid_argument("frame range outside trajectory");
    }
    std::vector<int> frames(count);
    for (int i = 0; i < count; ++i) frames[i] = first + i;
    return render_span(scene, frames, chunk_id, overlap_with_prev,
                       /*apply_drift=*/true, /*stream_tag=*/1);
}

RenderedChunk render_synthetic_chunk_frames(const SyntheticScene& scene,
                                            const std::vector<int>& frame_indices,
                                            int64_t chunk_id, int overlap_with_prev) {
    if (frame_indices.empty()) throw std::invalid_argument("empty frame list");
    for (int f : frame_indices) {
        if (f < 0 || f >= static_cast<int>(scene.trajectory.size())) {
            throw std::invalid_argument("frame index outside trajectory");
        }
    }
    return render_span(scene, frame_indices, chunk_id, overlap_with_prev,
                       /*apply_drift=*/true, /*stream_tag=*/1);
}

RenderedChunk simulate_reinference(const SyntheticScene& scene, int frame_a,
                                   int frame_b) {
    const int n = static_cast<int>(scene.trajectory.size());
    if (frame_a < 0 || frame_a >= n || frame_b < 0 || frame_b >= n) {
        throw std::invalid_argument("reinference frame outside trajectory");
    }
    return render_span(scene, {frame_a, frame_b}, /*chunk_id=*/-1,
                       /*overlap_with_prev=*/0, /*apply_drift=*/false,
                       /*stream_tag=*/2);
}

std::vector<Eigen::VectorXd> make_separated_embeddings(int count, int dim,
                                                       double gap, uint64_t seed) {
    if (count <= 0 || dim <= 0 || gap <= 0.0) {
        throw std::invalid_argument("make_separated_embeddings: bad arguments");
    }
    std::mt19937_64 rng(mix_seed(seed, 0xE5CEDA11ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Eigen::VectorXd> out;
    int attempts = 0;
    while (static_cast<int>(out.size()) < count) {
        if (++attempts > 20000) {
            throw std::runtime_error("make_separated_embeddings: gap unsatisfiable");
        }
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
        if (v.norm() < 1e-9) continue;
        v.normalize();
        bool ok = true;
        for (const Eigen::VectorXd& u : out) {
            if (u.dot(v) > 1.0 - gap) {
                ok = false;
                break;
            }
        }
        if (ok) out.push_back(std::move(v));
    }
    return out;
}

SE3Pose lookat(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
               const Eigen::Vector3d& up) {
    Eigen::Vector3d forward = target - eye;
    if (forward.norm() < 1e-12) throw std::invalid_argument("lookat: eye == target");
    forward.normalize();
    Eigen::Vector3d right = forward.cross(up);
    if (right.norm() < 1e-9) {
        right = forward.cross(Eigen::Vector3d(0.0, 1.0, 0.0));
    }
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);
    SE3Pose pose;
    pose.rotation.col(0) = right;
    pose.rotation.col(1) = down;
    pose.rotation.col(2) = forward;
    pose.translation = eye;
    return pose;
}

std::vector<SE3Pose> orbit_trajectory(const Eigen::Vector3d& center, double radius,
                                      double height, int frames, double angle0,
                                      double angle1) {
    std::vector<SE3Pose> out;
    out.reserve(frames);
    for (int i = 0; i < frames; ++i) {
        const double a =
            angle0 + (angle1 - angle0) * (frames == 1 ? 0.0 : double(i) / frames);
        const Eigen::Vector3d eye =
            center + Eigen::Vector3d(radius * std::cos(a), radius * std::sin(a), height);
        out.push_back(lookat(eye, center));
    }
    return out;
}

}  // namespace inslam
