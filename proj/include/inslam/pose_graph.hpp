#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "inslam/chunk.hpp"
#include "inslam/lie.hpp"

namespace inslam {

struct GraphNode {
    int64_t chunk_id = 0;
    Sim3Transform state;  // chunk-local frame -> world
};

// Relative constraint between two chunk frames. The measurement maps
// to-chunk-local coordinates into from-chunk-local coordinates, i.e. its
// noise-free value is state_from^-1 * state_to.
struct GraphEdge {
    enum class Kind { Odometry, Loop };
    int64_t from = 0;
    int64_t to = 0;
    Sim3Transform measurement;
    Eigen::Matrix<double, 7, 7> information =
        Eigen::Matrix<double, 7, 7>::Identity();
    Kind kind = Kind::Odometry;
};

struct RobustKernel {
    double huber_delta = 0.05;  // knee in whitened tangent-norm units
};

struct PoseGraph {
    std::map<int64_t, GraphNode> nodes;
    std::vector<GraphEdge> edges;

    void add_node(int64_t chunk_id, const Sim3Transform& state);
    void add_edge(GraphEdge edge);
};

struct OptimizeResult {
    std::map<int64_t, Sim3Transform> states;
    std::map<int64_t, Sim3Transform> initial_states;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> cost_history;  // accepted-step costs, non-increasing
};

struct OptimizeOptions {
    int max_iters = 100;
    double tol = 1e-10;           // relative cost decrease
    double fd_step = 1e-6;        // tangent-space central-difference step
    double initial_lambda = 1e-4;
    bool use_robust_kernel = true;
    int64_t gauge_id = -1;        // -1 = lowest chunk id
};

// Odometry measurement between consecutive chunks: Umeyama on the shared
// frames' camera centers (prev chunk's copies as dst), returning the
// transform mapping next-chunk coordinates into prev-chunk coordinates.
// Collinear centers fall back to augmenting each shared frame with a point
// 1 m along its optical axis.
Sim3Transform align_adjacent_chunks(const ChunkOutput& prev, const ChunkOutput& next);

// Levenberg-Marquardt on the product Sim(3) manifold. Residual per edge:
// sim3_log(measurement^-1 * state_from^-1 * state_to), whitened by the edge
// information, robustified by IRLS Huber reweighting. Jacobians are central
// finite differences in each endpoint's 7-dim tangent (right perturbation).
// The gauge node is held fixed. Throws on a disconnected graph (naming the
// unreachable chunks) and on non-SPD information matrices.
OptimizeResult optimize(const PoseGraph& graph, const RobustKernel& kernel,
                        const OptimizeOptions& options = {});

// correction_c = optimized_c * initial_c^-1, the world-space fix-up to apply
// to everything anchored in chunk c.
std::map<int64_t, Sim3Transform> apply_corrections(const OptimizeResult& result);

double robust_cost(const PoseGraph& graph, const RobustKernel& kernel,
                   const std::map<int64_t, Sim3Transform>& states,
                   bool use_robust_kernel = true);

// Huber kernel on the squared whitened norm: rho(x) = x when sqrt(x) <= delta,
// else 2 delta sqrt(x) - delta^2.
double huber_rho(double squared_norm, double delta);

// Text dump, one record per line:
//   VERTEX_SIM3 id rx ry rz px py pz s     (sim3_log of the state: rho, phi, sigma)
//   FIX id
//   EDGE_SIM3 from to m1..m7 i11 i12 .. i77  (measurement log + upper-tri info)
void save_pose_graph(const PoseGraph& graph, const std::filesystem::path& path,
                     int64_t fixed_id = -1);
PoseGraph load_pose_graph(const std::filesystem::path& path);

}  // namespace inslam
