#pragma once

#include <chrono>
#include <filesystem>
#include <optional>

#include "inslam/association.hpp"
#include "inslam/config.hpp"
#include "inslam/evaluation.hpp"
#include "inslam/instance_map.hpp"
#include "inslam/loop.hpp"
#include "inslam/pose_graph.hpp"
#include "inslam/synthetic.hpp"

namespace inslam {

// Failure inside a pipeline stage; the CLI maps this to exit code 4.
struct StageError : std::runtime_error {
    std::string stage;
    int64_t chunk_id = -1;
    int frame = -1;
    StageError(std::string stage_name, int64_t chunk, int frame_idx,
               const std::string& msg)
        : std::runtime_error("stage '" + stage_name + "' failed (chunk " +
                             std::to_string(chunk) + ", frame " +
                             std::to_string(frame_idx) + "): " + msg),
          stage(std::move(stage_name)),
          chunk_id(chunk),
          frame(frame_idx) {}
};

// Parameters of the built-in oracle scenes.
struct SceneSpec {
    std::string preset = "orbit";  // orbit | adjacent_duplicates
    int frames = 240;
    int objects = 6;
    double gap = 0.5;              // ground-truth embedding separation
    int height = 48;
    int width = 64;
    int embed_dim = 8;
    double depth_sigma = 0.0;
    double embed_sigma = 0.0;
    TangentVec7 drift_rate;
    uint64_t seed = 7;
    double orbit_radius = 4.0;
    double orbit_height = 1.2;
    double object_ring_radius = 1.3;
    bool floor = true;
    bool with_lang = false;        // attach language embeddings + labels
    int lang_dim = 16;
};

SyntheticScene make_preset_scene(const SceneSpec& spec);
// Label text for a scene object; the query-label set of a with_lang scene
// pairs these names with the objects' language embeddings.
std::string object_label(int32_t instance_id);
LabelSet preset_scene_labels(const SyntheticScene& scene);

struct PipelineConfig {
    int chunk_size = 120;
    int chunk_overlap = 60;
    int sample_rate = 1;  // take every k-th frame (synthetic input only)
    ClusterConfig cluster;
    int cluster_delta_base = 20;  // at 64x48, scaled by area
    AffinityConfig affinity;
    double z_tol = 0.05;
    LoopConfig loop;
    int keyframe_stride = 10;     // plus the last frame of every chunk
    int max_candidates_per_query = 3;
    bool batch_loop_optimization = false;
    bool eval_loop_benchmark = false;
    RobustKernel kernel;
    OptimizeOptions opt;
    double voxel_size = 0.02;
    double eval_match_radius = 0.05;
    double overlap_depth_tol = 0.05;
    uint64_t seed = 7;

    std::filesystem::path input_dir;       // chunk dumps; empty = synthetic scene
    std::filesystem::path pairs_dir;       // re-inferred pair dumps (dump mode)
    std::filesystem::path gt_trajectory;   // TUM reference (dump mode)
    std::filesystem::path output_dir;
    SceneSpec scene;
    Config raw;  // snapshot echoed into the run manifest

    static PipelineConfig from_config(const Config& cfg);
    void validate() const;  // throws ConfigError
};

struct RunResult {
    MetricsReport report;
    Config config_snapshot;
    std::vector<StageTiming> timings;
    std::map<std::string, std::filesystem::path> outputs;

    int chunk_count = 0;
    int consumed_frames = 0;
    int loops_accepted = 0;
    // Ground-truth-dependent diagnostics (synthetic input only, else -1).
    double association_accuracy = -1.0;
    double centroid_error_pre = -1.0;
    double centroid_error_post = -1.0;
    std::optional<double> ate_pre;
    std::optional<double> ate_post;
};

// Runs ingest -> align -> cluster -> associate -> fuse -> loop detect ->
// optimize -> retag -> evaluate, writing every artifact under output_dir.
// Deterministic given the config (two identical runs produce byte-identical
// reports and dumps).
RunResult run_pipeline(const PipelineConfig& cfg);

// Writes a preset scene to chunk dumps + ground-truth trajectory under dir.
void generate_scene_dumps(const PipelineConfig& cfg, const std::filesystem::path& dir);

// Place-recognition benchmark on an oracle scene: keyframes sampled at a
// fixed stride become places when their overlap with existing places falls
// below the threshold, otherwise queries. Each query's instance-retrieval
// top-1 is verified by re-inference; metrics are reported per overlap bin
// for instance retrieval and for the pooled-global-descriptor stub.
struct LoopBenchRow {
    int query_frame = 0;   // scene frame indices
    int place_frame = -1;  // -1 = abstained
    double overlap = 0.0;
    int consistent_count = 0;
    bool accepted = false;
};

struct LoopBenchReport {
    std::vector<LoopBenchRow> rows;
    std::vector<RetrievalBinResult> bins;  // tau in {0.1 .. 0.5}
    int n_places = 0;
    int n_queries = 0;
};

LoopBenchReport run_loop_benchmark(const PipelineConfig& cfg, int stride = 5,
                                   double place_threshold = 0.3);

}  // namespace inslam
