#include "inslam/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "inslam/parallel.hpp"

namespace inslam {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct StageTimes {
    double ingest = 0.0, mask_seg = 0.0, assoc = 0.0, align = 0.0;
    double loop_det = 0.0, loop_opt = 0.0;
};

class ScopedTimer {
  public:
    explicit ScopedTimer(double& sink) : sink_(sink), t0_(Clock::now()) {}
    ~ScopedTimer() {
        sink_ += std::chrono::duration<double>(Clock::now() - t0_).count();
    }

  private:
    double& sink_;
    Clock::time_point t0_;
};

Sim3Transform se3_to_sim3(const SE3Pose& p) { return Sim3Transform::from_se3(p); }

SE3Pose anchored_pose(const Sim3Transform& anchor, const SE3Pose& local) {
    SE3Pose out;
    out.rotation = anchor.rotation * local.rotation;
    out.translation = anchor.apply(local.translation);
    return out;
}

}  // namespace

std::string object_label(int32_t instance_id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "object_%02d", instance_id);
    return buf;
}

SyntheticScene make_preset_scene(const SceneSpec& spec) {
    SyntheticScene scene;
    scene.height = spec.height;
    scene.width = spec.width;
    scene.embed_dim = spec.embed_dim;
    scene.seed = spec.seed;
    scene.noise.depth_sigma = spec.depth_sigma;
    scene.noise.embed_sigma = spec.embed_sigma;
    scene.noise.drift_rate = spec.drift_rate;
    scene.intrinsics = {0.8 * spec.width, 0.8 * spec.width, 0.5 * spec.width,
                        0.5 * spec.height};

    if (spec.preset == "orbit") {
        const int k = std::max(1, spec.objects);
        const std::vector<Eigen::VectorXd> emb =
            make_separated_embeddings(k + (spec.floor ? 1 : 0), spec.embed_dim,
                                      spec.gap, spec.seed);
        std::vector<Eigen::VectorXd> lang;
        if (spec.with_lang) {
            lang = make_separated_embeddings(k + (spec.floor ? 1 : 0), spec.lang_dim,
                                             0.5, mix_seed(spec.seed, 0x1A5));
        }
        for (int i = 0; i < k; ++i) {
            const double a = 2.0 * M_PI * i / k;
            SceneObject obj;
            obj.instance_id = i;
            obj.primitive = ScenePrimitive::make_sphere(
                {spec.object_ring_radius * std::cos(a),
                 spec.object_ring_radius * std::sin(a),
                 0.25 * ((i % 3) - 1)},
                0.45);
            obj.embedding = emb[i];
            if (spec.with_lang) obj.lang_embedding = lang[i];
            scene.objects.push_back(std::move(obj));
        }
        if (spec.floor) {
            SceneObject floor;
            floor.instance_id = k;
            floor.primitive = ScenePrimitive::make_box({0.0, 0.0, -1.2}, {8.0, 8.0, 0.3});
            floor.embedding = emb[k];
            if (spec.with_lang) floor.lang_embedding = lang[k];
            scene.objects.push_back(std::move(floor));
        }
        scene.trajectory = orbit_trajectory({0.0, 0.0, 0.0}, spec.orbit_radius,
                                            spec.orbit_height, spec.frames, 0.0,
                                            2.0 * M_PI);
        return scene;
    }

    if (spec.preset == "adjacent_duplicates") {
        // Two spheres sharing one embedding vector, plus a distinct backdrop.
        // Frame 0 sees only the left sphere, frame 1 only the right one, and
        // later frames see the right sphere with a sliver of the left, so the
        // joint affinity must disambiguate two semantically identical
        // candidates by overlap.
        const std::vector<Eigen::VectorXd> emb =
            make_separated_embeddings(2, spec.embed_dim, spec.gap, spec.seed);
        SceneObject left;
        left.instance_id = 0;
        left.primitive = ScenePrimitive::make_sphere({-1.5, 3.0, 0.0}, 0.7);
        left.embedding = emb[0];
        SceneObject right = left;
        right.instance_id = 1;
        right.primitive = ScenePrimitive::make_sphere({1.5, 3.0, 0.0}, 0.7);
        SceneObject backdrop;
        backdrop.instance_id = 2;
        backdrop.primitive = ScenePrimitive::make_box({0.0, 6.5, 0.0}, {10.0, 0.5, 6.0});
        backdrop.embedding = emb[1];
        scene.objects = {left, right, backdrop};

        const Eigen::Vector3d lc = left.primitive.sphere.center;
        const Eigen::Vector3d rc = right.primitive.sphere.center;
        scene.trajectory = {
            lookat({-1.5, -1.0, 0.0}, lc),              // left only
            lookat({2.4, -0.2, 0.0}, rc),               // right only
            lookat({1.2, 0.2, 0.0}, rc + Eigen::Vector3d(-0.7, 0.0, 0.0)),
        };
        for (int f = 3; f < spec.frames; ++f) scene.trajectory.push_back(scene.trajectory[2]);
        return scene;
    }

    throw ConfigError("unknown scene preset: " + spec.preset);
}

LabelSet preset_scene_labels(const SyntheticScene& scene) {
    LabelSet set;
    for (const SceneObject& obj : scene.objects) {
        if (obj.lang_embedding.size() == 0) continue;
        set.labels.emplace_back(object_label(obj.instance_id), obj.lang_embedding);
    }
    return set;
}

PipelineConfig PipelineConfig::from_config(const Config& cfg) {
    PipelineConfig p;
    p.chunk_size = static_cast<int>(cfg.get_int("pipeline.chunk_size", 120));
    p.chunk_overlap = static_cast<int>(cfg.get_int("pipeline.chunk_overlap", 60));
    p.sample_rate = static_cast<int>(cfg.get_int("pipeline.sample_rate", 1));
    p.seed = static_cast<uint64_t>(cfg.get_int("seed", 7));

    p.cluster.epsilon = cfg.get_double("cluster.epsilon", 0.75);
    p.cluster_delta_base = static_cast<int>(cfg.get_int("cluster.delta", 20));
    p.cluster.seed = static_cast<uint64_t>(cfg.get_int("cluster.seed", p.seed));

    p.affinity.alpha = cfg.get_double("assoc.alpha", 0.4);
    p.affinity.beta = cfg.get_double("assoc.beta", 0.6);
    p.affinity.tau_match = cfg.get_double("assoc.tau_match", 0.55);
    p.z_tol = cfg.get_double("assoc.z_tol", 0.05);

    p.loop.radius = cfg.get_double("loop.radius", 3.0);
    p.loop.tau_loop = static_cast<int>(cfg.get_int("loop.tau_loop", 3));
    p.loop.cos_min = cfg.get_double("loop.cos_min", 0.8);
    p.loop.r_in = cfg.get_double("loop.r_in", 0.10);
    p.loop.ransac_iters = static_cast<int>(cfg.get_int("loop.ransac_iters", 200));
    p.loop.min_temporal_gap = static_cast<int>(cfg.get_int(
        "loop.min_temporal_gap", 2 * (p.chunk_size - p.chunk_overlap)));
    p.loop.seed = static_cast<uint64_t>(cfg.get_int("loop.seed", p.seed));
    p.keyframe_stride = static_cast<int>(cfg.get_int("loop.keyframe_stride", 10));
    p.max_candidates_per_query =
        static_cast<int>(cfg.get_int("loop.max_candidates", 3));
    p.batch_loop_optimization = cfg.get_bool("loop.batch_mode", false);
    p.eval_loop_benchmark = cfg.get_bool("eval.loop_benchmark", false);

    p.kernel.huber_delta = cfg.get_double("graph.huber_delta", 0.05);
    p.opt.max_iters = static_cast<int>(cfg.get_int("graph.max_iters", 100));
    p.opt.tol = cfg.get_double("graph.tol", 1e-10);

    p.voxel_size = cfg.get_double("map.voxel_size", 0.02);
    p.eval_match_radius = cfg.get_double("eval.match_radius", 0.05);
    p.overlap_depth_tol = cfg.get_double("eval.overlap_depth_tol", 0.05);

    p.input_dir = cfg.get_string("paths.input", "");
    p.pairs_dir = cfg.get_string("paths.pairs", "");
    p.gt_trajectory = cfg.get_string("paths.gt_trajectory", "");
    p.output_dir = cfg.get_string("paths.output", "run_out");

    p.scene.preset = cfg.get_string("scene.preset", "orbit");
    p.scene.frames = static_cast<int>(cfg.get_int("scene.frames", 240));
    p.scene.objects = static_cast<int>(cfg.get_int("scene.objects", 6));
    p.scene.gap = cfg.get_double("scene.gap", 0.5);
    p.scene.height = static_cast<int>(cfg.get_int("scene.height", 48));
    p.scene.width = static_cast<int>(cfg.get_int("scene.width", 64));
    p.scene.embed_dim = static_cast<int>(cfg.get_int("scene.embed_dim", 8));
    p.scene.depth_sigma = cfg.get_double("scene.depth_sigma", 0.0);
    p.scene.embed_sigma = cfg.get_double("scene.embed_sigma", 0.0);
    p.scene.seed = static_cast<uint64_t>(cfg.get_int("scene.seed", p.seed));
    p.scene.orbit_radius = cfg.get_double("scene.orbit_radius", 4.0);
    p.scene.orbit_height = cfg.get_double("scene.orbit_height", 1.2);
    p.scene.object_ring_radius = cfg.get_double("scene.object_ring_radius", 1.3);
    p.scene.floor = cfg.get_bool("scene.floor", true);
    p.scene.with_lang = cfg.get_bool("scene.with_lang", false);
    p.scene.lang_dim = static_cast<int>(cfg.get_int("scene.lang_dim", 16));
    const std::vector<double> drift = cfg.get_doubles("scene.drift", {});
    if (!drift.empty()) {
        if (drift.size() != 7) {
            throw ConfigError("scene.drift needs 7 comma-separated values");
        }
        p.scene.drift_rate.rho = {drift[0], drift[1], drift[2]};
        p.scene.drift_rate.phi = {drift[3], drift[4], drift[5]};
        p.scene.drift_rate.sigma = drift[6];
    }
    p.raw = cfg;
    p.validate();
    return p;
}

void PipelineConfig::validate() const {
    if (chunk_overlap < 0 || chunk_overlap >= chunk_size) {
        throw ConfigError("chunk_overlap must be in [0, chunk_size)");
    }
    if (sample_rate < 1) throw ConfigError("sample_rate must be >= 1");
    if (!input_dir.empty() && sample_rate != 1) {
        throw ConfigError("sample_rate applies to synthetic input only");
    }
    if (chunk_overlap < 3 && chunk_size > 3) {
        throw ConfigError("chunk_overlap must be >= 3 for Sim(3) chunk alignment");
    }
    if (output_dir.empty()) throw ConfigError("paths.output is required");
}

namespace {

// Consumed-stream bookkeeping: which chunk first contains each frame.
struct StreamLayout {
    std::vector<int> chunk_start;           // consumed index of frame 0 per chunk
    std::vector<int> owner_chunk;           // per consumed frame
    std::vector<int> owner_index;           // frame index inside owner chunk
    std::vector<int> original;              // original scene frame per consumed

    int consumed() const { return static_cast<int>(owner_chunk.size()); }
};

StreamLayout compute_layout(const std::vector<ChunkOutput>& chunks,
                            const std::vector<int>& original) {
    StreamLayout layout;
    layout.original = original;
    int start = 0;
    for (size_t c = 0; c < chunks.size(); ++c) {
        if (c > 0) start += chunks[c - 1].frame_count() - chunks[c].overlap_with_prev;
        layout.chunk_start.push_back(start);
        const int end = start + chunks[c].frame_count();
        if (static_cast<int>(layout.owner_chunk.size()) < end) {
            layout.owner_chunk.resize(end, -1);
            layout.owner_index.resize(end, -1);
        }
        for (int i = 0; i < chunks[c].frame_count(); ++i) {
            const int g = start + i;
            if (layout.owner_chunk[g] < 0) {
                layout.owner_chunk[g] = static_cast<int>(c);
                layout.owner_index[g] = i;
            }
        }
    }
    if (layout.original.empty()) {
        layout.original.resize(layout.owner_chunk.size());
        for (size_t g = 0; g < layout.original.size(); ++g) {
            layout.original[g] = static_cast<int>(g);
        }
    }
    return layout;
}

struct GtCentroidAccum {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int64_t count = 0;
};

double mean_centroid_error(const GlobalInstanceMap& map,
                           const std::map<int64_t, GtCentroidAccum>& gt) {
    double err = 0.0;
    int n = 0;
    for (const auto& [id, inst] : map.instances) {
        const auto it = gt.find(id);
        if (it == gt.end() || it->second.count == 0 || inst.points.empty()) continue;
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (const Eigen::Vector3d& p : inst.points) centroid += p;
        centroid /= static_cast<double>(inst.points.size());
        err += (centroid - it->second.sum / static_cast<double>(it->second.count)).norm();
        ++n;
    }
    return n > 0 ? err / n : -1.0;
}

}  // namespace

void generate_scene_dumps(const PipelineConfig& cfg, const fs::path& dir) {
    const SyntheticScene scene = make_preset_scene(cfg.scene);
    fs::create_directories(dir);

    std::vector<int> consumed;
    for (int f = 0; f < static_cast<int>(scene.trajectory.size()); f += cfg.sample_rate) {
        consumed.push_back(f);
    }
    const int n = static_cast<int>(consumed.size());
    const int step = cfg.chunk_size - cfg.chunk_overlap;

    Trajectory gt;
    for (int g = 0; g < n; ++g) {
        gt.stamps.push_back(scene.timestamp_of(consumed[g]));
        gt.poses.push_back(scene.trajectory[consumed[g]]);
    }
    save_trajectory_tum(gt, dir / "gt_trajectory.tum");

    int64_t chunk_id = 0;
    for (int start = 0; start == 0 || start + cfg.chunk_overlap < n; start += step) {
        const int count = std::min(cfg.chunk_size, n - start);
        if (count <= 0) break;
        const int ov = chunk_id == 0 ? 0 : cfg.chunk_overlap;
        std::vector<int> frames(consumed.begin() + start,
                                consumed.begin() + start + count);
        const RenderedChunk rendered =
            render_synthetic_chunk_frames(scene, frames, chunk_id, ov);
        char name[32];
        std::snprintf(name, sizeof name, "chunk_%06lld",
                      static_cast<long long>(chunk_id));
        save_chunk(rendered.chunk, dir / name, &rendered.gt.pixel_ids);
        ++chunk_id;
        if (start + count >= n) break;
    }
}

LoopBenchReport run_loop_benchmark(const PipelineConfig& cfg, int stride,
                                   double place_threshold) {
    const SyntheticScene scene = make_preset_scene(cfg.scene);
    const int n = static_cast<int>(scene.trajectory.size());

    // One single-frame chunk per keyframe; the local frame index is 0, so no
    // drift distorts the benchmark geometry.
    std::vector<int> frames;
    std::vector<ChunkOutput> kf_chunks;
    for (int f = 0; f < n; f += stride) {
        frames.push_back(f);
        kf_chunks.push_back(
            render_synthetic_chunk_frames(scene, {f}, static_cast<int64_t>(f)).chunk);
    }
    std::vector<KeyframeView> views;
    for (size_t i = 0; i < frames.size(); ++i) {
        KeyframeView v;
        v.chunk = &kf_chunks[i];
        v.frame_index = 0;
        v.world_pose = scene.trajectory[frames[i]];
        v.global_index = frames[i];
        views.push_back(v);
    }

    const LoopBenchmark bench =
        build_loop_benchmark(views, 1, place_threshold, cfg.overlap_depth_tol);
    LoopBenchReport report;
    report.n_places = static_cast<int>(bench.places.size());
    report.n_queries = static_cast<int>(bench.queries.size());

    ClusterConfig bcfg = cfg.cluster;
    bcfg.delta = scaled_delta(cfg.cluster_delta_base, scene.height, scene.width);
    std::vector<std::vector<Eigen::VectorXd>> q_sets, p_sets;
    std::vector<Eigen::VectorXd> q_glob, p_glob;
    for (int q : bench.queries) {
        bcfg.seed = mix_seed(cfg.cluster.seed, 0xBE0000ULL + views[q].global_index);
        q_sets.push_back(frame_instance_descriptors(*views[q].chunk, 0, bcfg));
        q_glob.push_back(global_mean_descriptor(*views[q].chunk, 0));
    }
    for (int p : bench.places) {
        bcfg.seed = mix_seed(cfg.cluster.seed, 0xBE0000ULL + views[p].global_index);
        p_sets.push_back(frame_instance_descriptors(*views[p].chunk, 0, bcfg));
        p_glob.push_back(global_mean_descriptor(*views[p].chunk, 0));
    }
    const auto inst_top1 = retrieve_top1_instances(q_sets, p_sets, cfg.loop.cos_min);
    const auto glob_top1 = retrieve_top1_global(q_glob, p_glob);

    for (size_t qi = 0; qi < bench.queries.size(); ++qi) {
        LoopBenchRow row;
        row.query_frame = views[bench.queries[qi]].global_index;
        const auto it = inst_top1.find(static_cast<int>(qi));
        if (it != inst_top1.end() && it->second) {
            const int pi = *it->second;
            row.place_frame = views[bench.places[pi]].global_index;
            row.overlap = bench.overlap(static_cast<Eigen::Index>(qi), pi);
            LoopConfig lcfg = cfg.loop;
            lcfg.cluster = bcfg;
            lcfg.cluster.seed = mix_seed(cfg.loop.seed, 0xB2ULL + row.query_frame);
            lcfg.seed = lcfg.cluster.seed;
            const LoopVerification ver = verify_loop(
                simulate_reinference(scene, row.place_frame, row.query_frame).chunk,
                lcfg);
            row.consistent_count = ver.consistent_count;
            row.accepted = ver.accepted;
        }
        report.rows.push_back(row);
    }

    for (double tau : {0.1, 0.2, 0.3, 0.4, 0.5}) {
        RetrievalBinResult bin;
        bin.tau = tau;
        bin.instance = evaluate_retrieval(inst_top1, bench, tau);
        bin.global_stub = evaluate_retrieval(glob_top1, bench, tau);
        report.bins.push_back(bin);
    }
    return report;
}

RunResult run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.output_dir);

    RunResult result;
    result.config_snapshot = cfg.raw;
    StageTimes times;

    // ---- inference-ingest: synthetic oracle or chunk dumps ----------------
    std::vector<ChunkOutput> chunks;
    std::vector<std::vector<int32_t>> chunk_gt_ids;
    std::vector<std::vector<SE3Pose>> chunk_gt_world;
    std::optional<SyntheticScene> scene;
    std::vector<int> consumed_original;
    {
        ScopedTimer t(times.ingest);
        if (cfg.input_dir.empty()) {
            scene = make_preset_scene(cfg.scene);
            std::vector<int> consumed;
            for (int f = 0; f < static_cast<int>(scene->trajectory.size());
                 f += cfg.sample_rate) {
                consumed.push_back(f);
            }
            const int n = static_cast<int>(consumed.size());
            const int step = cfg.chunk_size - cfg.chunk_overlap;
            int64_t chunk_id = 0;
            for (int start = 0; start == 0 || start + cfg.chunk_overlap < n;
                 start += step) {
                const int count = std::min(cfg.chunk_size, n - start);
                if (count <= 0) break;
                const int ov = chunk_id == 0 ? 0 : cfg.chunk_overlap;
                std::vector<int> frames(consumed.begin() + start,
                                        consumed.begin() + start + count);
                RenderedChunk rendered =
                    render_synthetic_chunk_frames(*scene, frames, chunk_id, ov);
                chunks.push_back(std::move(rendered.chunk));
                chunk_gt_ids.push_back(std::move(rendered.gt.pixel_ids));
                chunk_gt_world.push_back(std::move(rendered.gt.world_poses));
                for (size_t i = (chunk_id == 0 ? 0 : cfg.chunk_overlap);
                     i < frames.size(); ++i) {
                    consumed_original.push_back(frames[i]);
                }
                char name[32];
                std::snprintf(name, sizeof name, "chunk_%06lld",
                              static_cast<long long>(chunk_id));
                save_chunk(chunks.back(), cfg.output_dir / "chunks" / name,
                           &chunk_gt_ids.back());
                ++chunk_id;
                if (start + count >= n) break;
            }
        } else {
            std::vector<fs::path> dirs;
            for (const auto& entry : fs::directory_iterator(cfg.input_dir)) {
                if (entry.is_directory() &&
                    entry.path().filename().string().rfind("chunk_", 0) == 0) {
                    dirs.push_back(entry.path());
                }
            }
            std::sort(dirs.begin(), dirs.end());
            if (dirs.empty()) {
                throw StageError("inference-ingest", -1, -1,
                                 "no chunk_* directories under " +
                                     cfg.input_dir.string());
            }
            for (const fs::path& d : dirs) {
                try {
                    chunks.push_back(load_chunk(d));
                } catch (const DumpError& e) {
                    throw StageError("inference-ingest",
                                     static_cast<int64_t>(chunks.size()), -1, e.what());
                }
                chunk_gt_ids.push_back(load_chunk_gt_ids(d, chunks.back()));
                chunk_gt_world.emplace_back();
            }
        }
    }
    const StreamLayout layout = compute_layout(chunks, consumed_original);
    const int n_chunks = static_cast<int>(chunks.size());
    const int n_frames = layout.consumed();
    result.chunk_count = n_chunks;
    result.consumed_frames = n_frames;

    const bool have_gt_ids = !chunk_gt_ids.empty() && !chunk_gt_ids[0].empty();
    const bool have_gt_world = scene.has_value();

    // ---- chunk align.: sequential Sim(3) odometry chain -------------------
    std::vector<Sim3Transform> anchors_odo(n_chunks);  // chunk-local -> world
    std::vector<GraphEdge> odo_edges;
    {
        ScopedTimer t(times.align);
        for (int c = 1; c < n_chunks; ++c) {
            Sim3Transform meas;
            try {
                meas = align_adjacent_chunks(chunks[c - 1], chunks[c]);
            } catch (const std::exception& e) {
                throw StageError("chunk align.", chunks[c].chunk_id, -1, e.what());
            }
            anchors_odo[c] = compose(anchors_odo[c - 1], meas);
            GraphEdge e;
            e.from = chunks[c - 1].chunk_id;
            e.to = chunks[c].chunk_id;
            e.measurement = meas;
            e.kind = GraphEdge::Kind::Odometry;
            odo_edges.push_back(std::move(e));
        }
    }
    std::vector<Sim3Transform> anchors = anchors_odo;

    // ---- per-chunk: mask seg. -> inst. assoc. -> loop det./opt. ------------
    FeatureBank bank;
    GlobalInstanceMap map;
    map.voxel_size = cfg.voxel_size;
    std::vector<SE3Pose> est_traj(n_frames);
    std::vector<int> keyframes;
    std::vector<GraphEdge> loop_edges;
    std::ostringstream affinity_log, loop_log;
    affinity_log << "frame\tmask\tinstance\ts_geo\ts_sem\taffinity\tdecision\n";
    loop_log << "query\tplace\tmatches\tinliers\taccepted\n";

    std::map<int32_t, int64_t> gt_to_assigned;
    std::map<int64_t, int32_t> assigned_to_gt;
    int64_t assoc_total = 0, assoc_errors = 0;
    std::map<int64_t, GtCentroidAccum> gt_centroids;
    std::map<int32_t, int> gt_object_index;
    if (scene) {
        for (size_t i = 0; i < scene->objects.size(); ++i) {
            gt_object_index[scene->objects[i].instance_id] = static_cast<int>(i);
        }
    }
    std::optional<GlobalInstanceMap> map_before_correction;
    int loops_checked = 0;

    const auto run_optimization = [&]() {
        PoseGraph graph;
        for (int c = 0; c < n_chunks; ++c) {
            graph.add_node(chunks[c].chunk_id, anchors[c]);
        }
        for (const GraphEdge& e : odo_edges) graph.add_edge(e);
        for (const GraphEdge& e : loop_edges) graph.add_edge(e);
        OptimizeResult opt = optimize(graph, cfg.kernel, cfg.opt);
        for (int c = 0; c < n_chunks; ++c) {
            anchors[c] = opt.states.at(chunks[c].chunk_id);
        }
        if (!map_before_correction) map_before_correction = map;
        retag_on_loop(map, apply_corrections(opt));
        for (int g = 0; g < n_frames; ++g) {
            const int oc = layout.owner_chunk[g];
            if (oc < 0) continue;
            est_traj[g] = anchored_pose(
                anchors[oc], chunks[oc].frames[layout.owner_index[g]].pose);
        }
        save_pose_graph(graph, cfg.output_dir / "graph.g2o", chunks[0].chunk_id);
    };

    for (int c = 0; c < n_chunks; ++c) {
        const ChunkOutput& chunk = chunks[c];
        const int first_owned = c == 0 ? 0 : chunk.overlap_with_prev;
        const int owned = chunk.frame_count() - first_owned;

        // mask seg.
        std::vector<std::vector<InstanceMask>> frame_masks(owned);
        std::vector<std::vector<MaskDescriptor>> frame_descs(owned);
        {
            ScopedTimer t(times.mask_seg);
            ClusterConfig ccfg = cfg.cluster;
            ccfg.delta = scaled_delta(cfg.cluster_delta_base, chunk.height, chunk.width);
            try {
                parallel_for(static_cast<size_t>(owned), [&](size_t oi) {
                    const int i = first_owned + static_cast<int>(oi);
                    const int g = layout.chunk_start[c] + i;
                    const FrameOutput& f = chunk.frames[i];
                    std::vector<uint8_t> valid(chunk.pixels_per_frame());
                    for (size_t px = 0; px < valid.size(); ++px) {
                        valid[px] = f.depth[px] > 0.0f;
                    }
                    ClusterConfig fcfg = ccfg;
                    fcfg.seed = mix_seed(ccfg.seed, static_cast<uint64_t>(g));
                    frame_masks[oi] = cluster_embeddings(
                        f.embedding, chunk.height, chunk.width, chunk.embed_dim,
                        valid, fcfg);
                    for (InstanceMask& m : frame_masks[oi]) m.frame_index = i;
                    for (const InstanceMask& m : frame_masks[oi]) {
                        frame_descs[oi].push_back(
                            pool_and_normalize(f.embedding, chunk.height, chunk.width,
                                               chunk.embed_dim, m));
                    }
                });
            } catch (const std::exception& e) {
                throw StageError("mask seg.", chunk.chunk_id, -1, e.what());
            }
        }

        // inst. assoc. + fusion (single-writer, sequential over frames)
        {
            ScopedTimer t(times.assoc);
            for (int oi = 0; oi < owned; ++oi) {
                const int i = first_owned + oi;
                const int g = layout.chunk_start[c] + i;
                const FrameOutput& f = chunk.frames[i];
                try {
                    const Sim3Transform wfc =
                        compose(anchors[c], se3_to_sim3(f.pose));
                    const auto projections = project_instances(
                        map, wfc, f.intrinsics, f.depth, chunk.height, chunk.width,
                        cfg.z_tol);
                    std::vector<std::pair<InstanceMask, MaskDescriptor>> pairs;
                    for (size_t k = 0; k < frame_masks[oi].size(); ++k) {
                        pairs.emplace_back(frame_masks[oi][k], frame_descs[oi][k]);
                    }
                    const AssociationResult assoc =
                        associate(pairs, projections, bank, cfg.affinity, chunk.width);
                    for (const AffinityLogRow& row : assoc.affinity_log) {
                        affinity_log << g << "\t" << row.mask_index << "\t"
                                     << row.instance_id << "\t" << row.s_geo << "\t"
                                     << row.s_sem << "\t" << row.affinity << "\t"
                                     << (row.chosen ? "match" : "candidate") << "\n";
                    }
                    for (size_t k = 0; k < pairs.size(); ++k) {
                        const int64_t id = assoc.assignments[k];
                        fuse_observation(map, id, pairs[k].first, chunk, i, wfc, g);
                        map.get_or_create(id).prototype = bank.prototypes.at(id);
                        if (assoc.new_ids.count(id)) {
                            affinity_log << g << "\t" << k << "\t" << id
                                         << "\t0\t0\t0\tnew\n";
                        }

                        if (have_gt_ids && !chunk_gt_ids[c].empty()) {
                            // majority ground-truth id over the mask's pixels
                            std::map<int32_t, int> votes;
                            const int32_t* ids = chunk_gt_ids[c].data() +
                                                 static_cast<size_t>(i) *
                                                     chunk.pixels_per_frame();
                            for (const PixelCoord& p : pairs[k].first.pixels) {
                                ++votes[ids[p.row * chunk.width + p.col]];
                            }
                            int32_t gt = -1;
                            int best = 0;
                            for (const auto& [vid, cnt] : votes) {
                                if (cnt > best) {
                                    best = cnt;
                                    gt = vid;
                                }
                            }
                            if (gt >= 0) {
                                ++assoc_total;
                                const auto itg = gt_to_assigned.find(gt);
                                if (itg == gt_to_assigned.end()) {
                                    if (assigned_to_gt.count(id)) {
                                        ++assoc_errors;
                                    } else {
                                        gt_to_assigned[gt] = id;
                                        assigned_to_gt[id] = gt;
                                    }
                                } else if (itg->second != id) {
                                    ++assoc_errors;
                                }
                            }
                            if (scene && gt >= 0) {
                                const SE3Pose& gt_pose = chunk_gt_world[c][i];
                                const SceneObject& obj =
                                    scene->objects[gt_object_index.at(gt)];
                                GtCentroidAccum& acc = gt_centroids[id];
                                for (const PixelCoord& p : pairs[k].first.pixels) {
                                    if (ids[p.row * chunk.width + p.col] != gt) continue;
                                    Eigen::Vector3d dir_cam(
                                        (p.col - f.intrinsics.cx) / f.intrinsics.fx,
                                        (p.row - f.intrinsics.cy) / f.intrinsics.fy, 1.0);
                                    const auto hit = obj.primitive.intersect(
                                        gt_pose.translation, gt_pose.rotation * dir_cam);
                                    if (!hit) continue;
                                    acc.sum += gt_pose.apply(*hit * dir_cam);
                                    ++acc.count;
                                }
                            }
                        }
                    }
                    est_traj[g] = anchored_pose(anchors[c], f.pose);
                } catch (const StageError&) {
                    throw;
                } catch (const std::exception& e) {
                    throw StageError("inst. assoc.", chunk.chunk_id, g, e.what());
                }
            }
        }

        // loop det. over this chunk's keyframes
        for (int oi = 0; oi < owned; ++oi) {
            const int i = first_owned + oi;
            const int g = layout.chunk_start[c] + i;
            const bool is_keyframe =
                (g % cfg.keyframe_stride == 0) || (i == chunk.frame_count() - 1);
            if (!is_keyframe) continue;
            std::vector<LoopCandidate> candidates;
            {
                ScopedTimer t(times.loop_det);
                candidates = retrieve_candidates(est_traj, g, cfg.loop.radius,
                                                 cfg.loop.min_temporal_gap, keyframes);
            }
            keyframes.push_back(g);
            int tried = 0;
            for (const LoopCandidate& cand : candidates) {
                if (tried++ >= cfg.max_candidates_per_query) break;
                LoopVerification ver;
                ChunkOutput pair_chunk;
                {
                    ScopedTimer t(times.loop_det);
                    try {
                        if (scene) {
                            pair_chunk = simulate_reinference(
                                             *scene, layout.original[cand.place_frame],
                                             layout.original[cand.query_frame])
                                             .chunk;
                        } else {
                            char name[48];
                            std::snprintf(name, sizeof name, "pair_%06d_%06d",
                                          cand.query_frame, cand.place_frame);
                            const fs::path pair_dir = cfg.pairs_dir / name;
                            if (cfg.pairs_dir.empty() || !fs::exists(pair_dir)) {
                                continue;  // no re-inference available for this pair
                            }
                            pair_chunk = load_chunk(pair_dir);
                        }
                        LoopConfig lcfg = cfg.loop;
                        lcfg.cluster = cfg.cluster;
                        lcfg.cluster.delta = scaled_delta(
                            cfg.cluster_delta_base, pair_chunk.height, pair_chunk.width);
                        lcfg.cluster.seed =
                            mix_seed(cfg.loop.seed,
                                     static_cast<uint64_t>(cand.query_frame) * 1000003ULL +
                                         static_cast<uint64_t>(cand.place_frame));
                        lcfg.seed = lcfg.cluster.seed;
                        ver = verify_loop(pair_chunk, lcfg);
                        ++loops_checked;
                    } catch (const std::exception& e) {
                        throw StageError("loop det.", chunk.chunk_id, g, e.what());
                    }
                }
                loop_log << cand.query_frame << "\t" << cand.place_frame << "\t"
                         << ver.matches.size() << "\t" << ver.consistent_count << "\t"
                         << (ver.accepted ? 1 : 0) << "\n";
                if (!ver.accepted) continue;

                const int pc = layout.owner_chunk[cand.place_frame];
                const int qc = layout.owner_chunk[cand.query_frame];
                if (pc == qc) continue;  // intra-chunk loops add no constraint
                const SE3Pose& place_local =
                    chunks[pc].frames[layout.owner_index[cand.place_frame]].pose;
                const SE3Pose& query_local =
                    chunks[qc].frames[layout.owner_index[cand.query_frame]].pose;
                GraphEdge e;
                e.from = chunks[pc].chunk_id;
                e.to = chunks[qc].chunk_id;
                e.measurement =
                    compose(se3_to_sim3(place_local),
                            compose(*ver.relative_sim3,
                                    se3_to_sim3(query_local).inverse()));
                e.information *= std::min(ver.consistent_count, 10);
                e.kind = GraphEdge::Kind::Loop;
                loop_edges.push_back(std::move(e));
                ++result.loops_accepted;
                if (!cfg.batch_loop_optimization) {
                    ScopedTimer t(times.loop_opt);
                    try {
                        run_optimization();
                    } catch (const std::exception& ex) {
                        throw StageError("loop opt.", chunk.chunk_id, g, ex.what());
                    }
                }
                break;  // first verified loop per query
            }
        }
    }

    if (cfg.batch_loop_optimization && !loop_edges.empty()) {
        ScopedTimer t(times.loop_opt);
        try {
            run_optimization();
        } catch (const std::exception& ex) {
            throw StageError("loop opt.", -1, -1, ex.what());
        }
    }

    // ---- evaluation --------------------------------------------------------
    Trajectory traj_pre, traj_post, traj_gt;
    for (int g = 0; g < n_frames; ++g) {
        const int oc = layout.owner_chunk[g];
        const double stamp = chunks[oc].frames[layout.owner_index[g]].timestamp;
        traj_pre.stamps.push_back(stamp);
        traj_pre.poses.push_back(
            anchored_pose(anchors_odo[oc], chunks[oc].frames[layout.owner_index[g]].pose));
        traj_post.stamps.push_back(stamp);
        traj_post.poses.push_back(
            anchored_pose(anchors[oc], chunks[oc].frames[layout.owner_index[g]].pose));
        if (have_gt_world) {
            traj_gt.stamps.push_back(stamp);
            traj_gt.poses.push_back(scene->trajectory[layout.original[g]]);
        }
    }
    if (!have_gt_world && !cfg.gt_trajectory.empty()) {
        traj_gt = load_trajectory_tum(cfg.gt_trajectory);
    }
    if (!traj_gt.stamps.empty()) {
        result.ate_pre = ate_rmse(traj_pre, traj_gt, TrajectoryAlignment::Similarity);
        result.ate_post = ate_rmse(traj_post, traj_gt, TrajectoryAlignment::Similarity);
    }
    if (assoc_total > 0) {
        result.association_accuracy =
            1.0 - static_cast<double>(assoc_errors) / static_cast<double>(assoc_total);
    }
    if (!gt_centroids.empty()) {
        result.centroid_error_post = mean_centroid_error(map, gt_centroids);
        result.centroid_error_pre =
            map_before_correction
                ? mean_centroid_error(*map_before_correction, gt_centroids)
                : result.centroid_error_post;
    }

    MetricsReport& report = result.report;
    report.ate_pre_opt = result.ate_pre;
    report.ate_post_opt = result.ate_post;
    report.loops_checked = loops_checked;
    report.loops_accepted = result.loops_accepted;
    report.chunk_count = n_chunks;
    report.frame_count = n_frames;
    report.instance_count = static_cast<int>(map.instances.size());

    if (scene && cfg.scene.with_lang) {
        SemanticEvalInput sem;
        sem.match_radius = cfg.eval_match_radius;
        const auto labels = assign_labels(map, preset_scene_labels(*scene));
        for (const auto& [id, inst] : map.instances) {
            const auto it = labels.find(id);
            for (const Eigen::Vector3d& p : inst.points) {
                sem.predicted_points.push_back(p);
                sem.predicted_labels.push_back(it->second.name);
            }
        }
        std::set<std::string> class_set;
        for (const SceneObject& obj : scene->objects) {
            class_set.insert(object_label(obj.instance_id));
        }
        sem.classes.assign(class_set.begin(), class_set.end());
        for (int g = 0; g < n_frames; ++g) {
            const int oc = layout.owner_chunk[g];
            const int i = layout.owner_index[g];
            const int32_t* ids =
                chunk_gt_ids[oc].data() + static_cast<size_t>(i) *
                                              chunks[oc].pixels_per_frame();
            const SE3Pose& gt_pose = chunk_gt_world[oc][i];
            const CameraIntrinsics& k = chunks[oc].frames[i].intrinsics;
            for (int r = 0; r < chunks[oc].height; r += 4) {
                for (int col = 0; col < chunks[oc].width; col += 4) {
                    const int32_t gid = ids[r * chunks[oc].width + col];
                    if (gid < 0) continue;
                    Eigen::Vector3d dir_cam((col - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0);
                    const SceneObject& obj = scene->objects[gt_object_index.at(gid)];
                    const auto hit = obj.primitive.intersect(
                        gt_pose.translation, gt_pose.rotation * dir_cam);
                    if (!hit) continue;
                    sem.gt_points.push_back(gt_pose.apply(*hit * dir_cam));
                    sem.gt_labels.push_back(object_label(gid));
                }
            }
        }
        if (!sem.gt_points.empty()) report.semantics = semantic_metrics(sem);
    }

    if (scene && cfg.eval_loop_benchmark && !keyframes.empty()) {
        std::vector<KeyframeView> views;
        for (int g : keyframes) {
            KeyframeView v;
            v.chunk = &chunks[layout.owner_chunk[g]];
            v.frame_index = layout.owner_index[g];
            v.world_pose = scene->trajectory[layout.original[g]];
            v.global_index = g;
            views.push_back(v);
        }
        const LoopBenchmark bench =
            build_loop_benchmark(views, 1, 0.3, cfg.overlap_depth_tol);
        std::vector<std::vector<Eigen::VectorXd>> q_sets, p_sets;
        std::vector<Eigen::VectorXd> q_glob, p_glob;
        ClusterConfig bcfg = cfg.cluster;
        bcfg.delta = scaled_delta(cfg.cluster_delta_base, chunks[0].height,
                                  chunks[0].width);
        for (int q : bench.queries) {
            bcfg.seed = mix_seed(cfg.cluster.seed, 0xBE00000ULL + views[q].global_index);
            q_sets.push_back(frame_instance_descriptors(*views[q].chunk,
                                                        views[q].frame_index, bcfg));
            q_glob.push_back(global_mean_descriptor(*views[q].chunk, views[q].frame_index));
        }
        for (int p : bench.places) {
            bcfg.seed = mix_seed(cfg.cluster.seed, 0xBE00000ULL + views[p].global_index);
            p_sets.push_back(frame_instance_descriptors(*views[p].chunk,
                                                        views[p].frame_index, bcfg));
            p_glob.push_back(global_mean_descriptor(*views[p].chunk, views[p].frame_index));
        }
        const auto inst_top1 = retrieve_top1_instances(q_sets, p_sets, cfg.loop.cos_min);
        const auto glob_top1 = retrieve_top1_global(q_glob, p_glob);
        for (double tau : {0.1, 0.2, 0.3, 0.4, 0.5}) {
            RetrievalBinResult bin;
            bin.tau = tau;
            bin.instance = evaluate_retrieval(inst_top1, bench, tau);
            bin.global_stub = evaluate_retrieval(glob_top1, bench, tau);
            report.retrieval.push_back(bin);
        }
    }

    report.timings = {
        {"inference-ingest", times.ingest, n_chunks, n_frames},
        {"mask seg.", times.mask_seg, n_chunks, n_frames},
        {"inst. assoc.", times.assoc, n_chunks, n_frames},
        {"chunk align.", times.align, n_chunks, n_frames},
        {"loop det.", times.loop_det, n_chunks, n_frames},
        {"loop opt.", times.loop_opt, n_chunks, n_frames},
    };
    result.timings = report.timings;

    // ---- outputs -----------------------------------------------------------
    const auto write_text = [&](const fs::path& name, const std::string& text) {
        std::ofstream out(cfg.output_dir / name, std::ios::trunc);
        if (!out) {
            throw StageError("report", -1, -1,
                             "cannot write " + (cfg.output_dir / name).string());
        }
        out << text;
        result.outputs[name.string()] = cfg.output_dir / name;
    };
    save_trajectory_tum(traj_pre, cfg.output_dir / "trajectory_pre_opt.tum");
    save_trajectory_tum(traj_post, cfg.output_dir / "trajectory_post_opt.tum");
    if (!traj_gt.stamps.empty()) {
        save_trajectory_tum(traj_gt, cfg.output_dir / "trajectory_gt.tum");
    }
    export_map(map, cfg.output_dir / "map.bin");
    export_map_ply(map, cfg.output_dir / "map.ply");
    write_text("affinity_log.tsv", affinity_log.str());
    write_text("loop_log.tsv", loop_log.str());
    write_text("report.txt",
               report.to_key_values() + "\n" + report.to_table(false));

    std::ostringstream manifest;
    manifest << "== config ==\n" << result.config_snapshot.serialize();
    manifest << "seed = " << cfg.seed << "\n";
    manifest << "== outputs ==\n";
    for (const auto& [name, path] : result.outputs) {
        manifest << name << " = " << path.string() << "\n";
    }
    manifest << "== timing ==\n" << report.to_table(true);
    write_text("manifest.txt", manifest.str());

    return result;
}

}  // namespace inslam
