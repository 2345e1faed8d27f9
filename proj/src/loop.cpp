#include "inslam/loop.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace inslam {

namespace {

// Mutual nearest neighbors in cosine space, both directions, above cos_min.
std::vector<std::pair<int, int>> mutual_matches(
    const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
    double cos_min, std::vector<double>* cosines) {
    std::vector<std::pair<int, int>> out;
    for (size_t i = 0; i < a.size(); ++i) {
        int best_j = -1;
        double best = -2.0;
        for (size_t j = 0; j < b.size(); ++j) {
            const double s = a[i].dot(b[j]);
            if (s > best) {
                best = s;
                best_j = static_cast<int>(j);
            }
        }
        if (best_j < 0 || best <= cos_min) continue;
        // reverse direction
        int back = -1;
        double best_back = -2.0;
        for (size_t k = 0; k < a.size(); ++k) {
            const double s = b[best_j].dot(a[k]);
            if (s > best_back) {
                best_back = s;
                back = static_cast<int>(k);
            }
        }
        if (back == static_cast<int>(i)) {
            out.emplace_back(static_cast<int>(i), best_j);
            if (cosines) cosines->push_back(best);
        }
    }
    return out;
}

// Centroid of a mask's valid-depth pixels, lifted into the chunk-local frame.
std::optional<Eigen::Vector3d> mask_centroid(const ChunkOutput& chunk, int frame_index,
                                             const InstanceMask& mask) {
    const FrameOutput& f = chunk.frames[frame_index];
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    int n = 0;
    for (const PixelCoord& p : mask.pixels) {
        const double d = f.depth_at(p.row, p.col, chunk.width);
        if (d <= 0.0) continue;
        acc += f.pose.apply(backproject_pixel(f.intrinsics, p.row, p.col, d));
        ++n;
    }
    if (n == 0) return std::nullopt;
    return acc / n;
}

struct FrameClusters {
    std::vector<InstanceMask> masks;
    std::vector<Eigen::VectorXd> descriptors;
};

FrameClusters cluster_frame(const ChunkOutput& chunk, int frame_index,
                            const ClusterConfig& cfg) {
    const FrameOutput& f = chunk.frames[frame_index];
    std::vector<uint8_t> valid(chunk.pixels_per_frame());
    for (size_t i = 0; i < valid.size(); ++i) valid[i] = f.depth[i] > 0.0f;
    FrameClusters out;
    out.masks = cluster_embeddings(f.embedding, chunk.height, chunk.width,
                                   chunk.embed_dim, valid, cfg);
    for (InstanceMask& m : out.masks) m.frame_index = frame_index;
    out.descriptors.reserve(out.masks.size());
    for (const InstanceMask& m : out.masks) {
        out.descriptors.push_back(pool_and_normalize(f.embedding, chunk.height,
                                                     chunk.width, chunk.embed_dim, m)
                                      .vector);
    }
    return out;
}

}  // namespace

std::vector<LoopCandidate> retrieve_candidates(
    const std::vector<SE3Pose>& trajectory, int current, double radius,
    int min_temporal_gap, const std::vector<int>& keyframe_indices) {
    if (current < 0 || current >= static_cast<int>(trajectory.size())) {
        throw std::invalid_argument("retrieve_candidates: current outside trajectory");
    }
    const Eigen::Vector3d center = trajectory[current].translation;
    std::vector<LoopCandidate> out;
    const auto consider = [&](int idx) {
        if (idx > current - min_temporal_gap) return;
        const double dist = (trajectory[idx].translation - center).norm();
        if (dist > radius) return;
        out.push_back({current, idx, dist});
    };
    if (keyframe_indices.empty()) {
        for (int i = 0; i < static_cast<int>(trajectory.size()); ++i) consider(i);
    } else {
        for (int i : keyframe_indices) consider(i);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const LoopCandidate& a, const LoopCandidate& b) {
                         return a.retrieval_distance < b.retrieval_distance;
                     });
    return out;
}

LoopVerification verify_loop(const ChunkOutput& pair_output, const LoopConfig& cfg) {
    if (pair_output.frame_count() != 2) {
        throw std::invalid_argument("verify_loop: pair chunk must have 2 frames");
    }
    LoopVerification result;
    const FrameClusters place = cluster_frame(pair_output, 0, cfg.cluster);
    const FrameClusters query = cluster_frame(pair_output, 1, cfg.cluster);
    if (place.masks.empty() || query.masks.empty()) return result;

    std::vector<double> cosines;
    const std::vector<std::pair<int, int>> pairs =
        mutual_matches(query.descriptors, place.descriptors, cfg.cos_min, &cosines);

    // Matched mask centroids in the pair's shared frame; matches[i]
    // corresponds to q_pts[i] / p_pts[i].
    std::vector<Eigen::Vector3d> q_pts, p_pts;
    for (size_t m = 0; m < pairs.size(); ++m) {
        const auto qc = mask_centroid(pair_output, 1, query.masks[pairs[m].first]);
        const auto pc = mask_centroid(pair_output, 0, place.masks[pairs[m].second]);
        if (!qc || !pc) continue;
        q_pts.push_back(*qc);
        p_pts.push_back(*pc);
        result.matches.push_back(
            {pairs[m].first, pairs[m].second, cosines[m], 0.0});
    }
    if (q_pts.size() < 3) return result;  // Sim(3) needs three correspondences

    // RANSAC over centroid correspondences; the fixed iteration count keeps
    // verification deterministic for a given seed.
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<size_t> pick(0, q_pts.size() - 1);
    std::vector<int> best_inliers;
    Sim3Transform best_fit;
    for (int it = 0; it < cfg.ransac_iters; ++it) {
        size_t a = pick(rng), b = pick(rng), c = pick(rng);
        if (a == b || b == c || a == c) continue;
        const std::vector<Eigen::Vector3d> src = {q_pts[a], q_pts[b], q_pts[c]};
        const std::vector<Eigen::Vector3d> dst = {p_pts[a], p_pts[b], p_pts[c]};
        Sim3Transform fit;
        try {
            fit = fit_sim3_umeyama(src, dst);
        } catch (const DegeneratePointSetError&) {
            continue;
        }
        std::vector<int> inliers;
        for (size_t i = 0; i < q_pts.size(); ++i) {
            if ((p_pts[i] - fit.apply(q_pts[i])).norm() < cfg.r_in) {
                inliers.push_back(static_cast<int>(i));
            }
        }
        if (inliers.size() > best_inliers.size()) {
            best_inliers = std::move(inliers);
            best_fit = fit;
        }
    }
    if (best_inliers.size() < 3) return result;

    std::vector<Eigen::Vector3d> src, dst;
    for (int i : best_inliers) {
        src.push_back(q_pts[i]);
        dst.push_back(p_pts[i]);
    }
    Sim3Transform shared_fit = best_fit;
    try {
        shared_fit = fit_sim3_umeyama(src, dst);
    } catch (const DegeneratePointSetError&) {
        // inlier set degenerate for a joint fit; keep the minimal-sample fit
    }
    result.consistent_count = 0;
    for (size_t i = 0; i < q_pts.size(); ++i) {
        const double res = (p_pts[i] - shared_fit.apply(q_pts[i])).norm();
        result.matches[i].residual = res;
        if (res < cfg.r_in) ++result.consistent_count;
    }
    result.accepted = result.consistent_count > cfg.tau_loop;
    if (result.accepted) {
        // Express the shared-frame fit camera-to-camera: query cam -> place cam.
        const Sim3Transform t_query =
            Sim3Transform::from_se3(pair_output.frames[1].pose);
        const Sim3Transform t_place =
            Sim3Transform::from_se3(pair_output.frames[0].pose);
        result.relative_sim3 =
            compose(t_place.inverse(), compose(shared_fit, t_query));
        result.relative_from_poses = compose(t_place.inverse(), t_query);
    }
    return result;
}

OverlapResult compute_overlap(const KeyframeView& source, const KeyframeView& target,
                              double depth_tol) {
    const FrameOutput& src = source.frame();
    const FrameOutput& tgt = target.frame();
    const int sh = source.chunk->height, sw = source.chunk->width;
    const int th = target.chunk->height, tw = target.chunk->width;
    const SE3Pose tgt_from_world = target.world_pose.inverse();

    OverlapResult out;
    for (int r = 0; r < sh; ++r) {
        for (int c = 0; c < sw; ++c) {
            const double d = src.depth_at(r, c, sw);
            if (d <= 0.0) continue;
            ++out.valid_source_pixels;
            const Eigen::Vector3d world =
                source.world_pose.apply(backproject_pixel(src.intrinsics, r, c, d));
            const Eigen::Vector3d cam = tgt_from_world.apply(world);
            if (cam.z() <= 0.0) continue;
            const long u = std::lround(tgt.intrinsics.fx * cam.x() / cam.z() +
                                       tgt.intrinsics.cx);
            const long v = std::lround(tgt.intrinsics.fy * cam.y() / cam.z() +
                                       tgt.intrinsics.cy);
            if (u < 0 || u >= tw || v < 0 || v >= th) continue;
            const double td = tgt.depth_at(static_cast<int>(v), static_cast<int>(u), tw);
            if (std::abs(cam.z() - td) < depth_tol) ++out.covisible_pixels;
        }
    }
    if (out.valid_source_pixels == 0) {
        throw std::domain_error("compute_overlap: source frame has no valid depth");
    }
    out.ratio = static_cast<double>(out.covisible_pixels) /
                static_cast<double>(out.valid_source_pixels);
    return out;
}

LoopBenchmark build_loop_benchmark(const std::vector<KeyframeView>& keyframes,
                                   int stride, double place_threshold,
                                   double depth_tol) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    LoopBenchmark bench;
    for (int i = 0; i < static_cast<int>(keyframes.size()); i += stride) {
        double best = 0.0;
        for (int p : bench.places) {
            best = std::max(best,
                            compute_overlap(keyframes[i], keyframes[p], depth_tol).ratio);
        }
        if (best < place_threshold) {
            bench.places.push_back(i);
        } else {
            bench.queries.push_back(i);
        }
    }
    bench.overlap.resize(static_cast<Eigen::Index>(bench.queries.size()),
                         static_cast<Eigen::Index>(bench.places.size()));
    for (size_t q = 0; q < bench.queries.size(); ++q) {
        for (size_t p = 0; p < bench.places.size(); ++p) {
            bench.overlap(q, p) =
                compute_overlap(keyframes[bench.queries[q]], keyframes[bench.places[p]],
                                depth_tol)
                    .ratio;
        }
    }
    return bench;
}

RetrievalMetrics evaluate_retrieval(
    const std::map<int, std::optional<int>>& top1_by_query,
    const LoopBenchmark& bench, double tau) {
    RetrievalMetrics m;
    for (size_t q = 0; q < bench.queries.size(); ++q) {
        bool has_qualifying = false;
        for (Eigen::Index p = 0; p < bench.overlap.cols(); ++p) {
            if (bench.overlap(static_cast<Eigen::Index>(q), p) > tau) {
                has_qualifying = true;
                break;
            }
        }
        const auto it = top1_by_query.find(static_cast<int>(q));
        const std::optional<int> returned =
            it == top1_by_query.end() ? std::nullopt : it->second;
        bool correct = false;
        if (returned) {
            correct = bench.overlap(static_cast<Eigen::Index>(q), *returned) > tau;
            if (correct) {
                ++m.tp;
            } else {
                ++m.fp;
            }
        }
        if (has_qualifying && !correct) ++m.fn;
    }
    m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
    m.recall_at_1 = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
    m.f1 = (m.precision + m.recall_at_1) > 0.0
               ? 2.0 * m.precision * m.recall_at_1 / (m.precision + m.recall_at_1)
               : 0.0;
    return m;
}

Eigen::VectorXd global_mean_descriptor(const ChunkOutput& chunk, int frame_index) {
    const FrameOutput& f = chunk.frames[frame_index];
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(chunk.embed_dim);
    const size_t px = chunk.pixels_per_frame();
    for (size_t p = 0; p < px; ++p) {
        for (int i = 0; i < chunk.embed_dim; ++i) {
            acc(i) += f.embedding[p * chunk.embed_dim + i];
        }
    }
    const double norm = acc.norm();
    if (norm > 1e-12) acc /= norm;
    return acc;
}

std::map<int, std::optional<int>> retrieve_top1_global(
    const std::vector<Eigen::VectorXd>& query_desc,
    const std::vector<Eigen::VectorXd>& place_desc) {
    std::map<int, std::optional<int>> out;
    for (size_t q = 0; q < query_desc.size(); ++q) {
        int best = -1;
        double best_score = -2.0;
        for (size_t p = 0; p < place_desc.size(); ++p) {
            const double s = query_desc[q].dot(place_desc[p]);
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(p);
            }
        }
        out[static_cast<int>(q)] =
            best >= 0 ? std::optional<int>(best) : std::nullopt;
    }
    return out;
}

std::vector<Eigen::VectorXd> frame_instance_descriptors(const ChunkOutput& chunk,
                                                        int frame_index,
                                                        const ClusterConfig& cfg) {
    return cluster_frame(chunk, frame_index, cfg).descriptors;
}

std::map<int, std::optional<int>> retrieve_top1_instances(
    const std::vector<std::vector<Eigen::VectorXd>>& query_sets,
    const std::vector<std::vector<Eigen::VectorXd>>& place_sets, double cos_min) {
    std::map<int, std::optional<int>> out;
    for (size_t q = 0; q < query_sets.size(); ++q) {
        int best = -1;
        size_t best_count = 0;
        double best_mean = -2.0;
        for (size_t p = 0; p < place_sets.size(); ++p) {
            std::vector<double> cosines;
            const auto pairs =
                mutual_matches(query_sets[q], place_sets[p], cos_min, &cosines);
            if (pairs.empty()) continue;
            double mean = 0.0;
            for (double c : cosines) mean += c;
            mean /= cosines.size();
            if (pairs.size() > best_count ||
                (pairs.size() == best_count && mean > best_mean)) {
                best_count = pairs.size();
                best_mean = mean;
                best = static_cast<int>(p);
            }
        }
        out[static_cast<int>(q)] =
            best >= 0 ? std::optional<int>(best) : std::nullopt;
    }
    return out;
}

}  // namespace inslam
