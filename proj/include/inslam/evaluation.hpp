#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inslam/lie.hpp"
#include "inslam/loop.hpp"

namespace inslam {

struct Trajectory {
    std::vector<double> stamps;  // strictly increasing
    std::vector<SE3Pose> poses;  // camera -> world

    void validate() const;
    size_t size() const { return stamps.size(); }
};

// TUM text format: "stamp tx ty tz qx qy qz qw" per line, '#' comments.
Trajectory load_trajectory_tum(const std::filesystem::path& path);
void save_trajectory_tum(const Trajectory& traj, const std::filesystem::path& path);

enum class TrajectoryAlignment { None, Rigid, Similarity };

// RMSE over translation errors after optionally aligning the estimate onto
// the reference (rigid = scale fixed at 1). Stamps associate to the nearest
// reference stamp within 0.02 s; fewer than two associations is an error.
double ate_rmse(const Trajectory& estimated, const Trajectory& reference,
                TrajectoryAlignment alignment = TrajectoryAlignment::Similarity);

struct SemanticEvalInput {
    std::vector<Eigen::Vector3d> predicted_points;
    std::vector<std::string> predicted_labels;
    std::vector<Eigen::Vector3d> gt_points;
    std::vector<std::string> gt_labels;
    std::vector<std::string> classes;
    double match_radius = 0.05;  // meters
};

struct SemanticMetrics {
    double miou = 0.0;
    double macc = 0.0;
    double f_miou = 0.0;
    double f_acc = 0.0;
    std::map<std::string, double> per_class_iou;
    std::map<std::string, double> per_class_acc;
};

// Each gt point takes the label of its nearest predicted point within
// match_radius (otherwise it counts as wrong for every class); per-class IoU
// and accuracy come from the resulting confusion counts. Mean metrics average
// over classes present in the ground truth; f-* weight by gt frequency.
SemanticMetrics semantic_metrics(const SemanticEvalInput& input);

// Stage timing mirrors the runtime breakdown used in the report: wall time
// per pipeline stage plus the chunk/frame counts it was divided over.
struct StageTiming {
    std::string stage;
    double seconds = 0.0;
    int chunks = 0;
    int frames = 0;
};

struct RetrievalBinResult {
    double tau = 0.0;
    RetrievalMetrics instance;
    std::optional<RetrievalMetrics> global_stub;
};

struct MetricsReport {
    std::optional<double> ate_pre_opt;
    std::optional<double> ate_post_opt;
    std::optional<SemanticMetrics> semantics;
    std::vector<RetrievalBinResult> retrieval;
    int loops_accepted = 0;
    int loops_checked = 0;
    int chunk_count = 0;
    int frame_count = 0;
    int instance_count = 0;
    std::vector<StageTiming> timings;

    // Deterministic machine-readable block (no wall times).
    std::string to_key_values() const;
    // Human-readable tables; includes the timing breakdown.
    std::string to_table(bool include_timings = true) const;
};

}  // namespace inslam
