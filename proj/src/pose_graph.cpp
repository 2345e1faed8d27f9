#include "inslam/pose_graph.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "inslam/parallel.hpp"

namespace inslam {

namespace {

using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat7 = Eigen::Matrix<double, 7, 7>;

Vec7 edge_residual(const GraphEdge& edge, const Sim3Transform& from_state,
                   const Sim3Transform& to_state) {
    const Sim3Transform rel =
        compose(edge.measurement.inverse(), compose(from_state.inverse(), to_state));
    return sim3_log(rel).vec();
}

Sim3Transform perturbed(const Sim3Transform& state, int dim, double step) {
    Vec7 delta = Vec7::Zero();
    delta(dim) = step;
    return compose(state, sim3_exp(TangentVec7::from_vec(delta)));
}

void check_information(const GraphEdge& edge) {
    const Mat7& info = edge.information;
    if ((info - info.transpose()).norm() > 1e-9 * (1.0 + info.norm())) {
        throw std::invalid_argument("edge information not symmetric");
    }
    Eigen::LLT<Mat7> llt(info);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("edge information not positive definite");
    }
}

}  // namespace

void PoseGraph::add_node(int64_t chunk_id, const Sim3Transform& state) {
    if (!nodes.emplace(chunk_id, GraphNode{chunk_id, state}).second) {
        throw std::invalid_argument("duplicate graph node");
    }
}

void PoseGraph::add_edge(GraphEdge edge) {
    if (edge.from == edge.to) throw std::invalid_argument("self edge");
    if (!nodes.count(edge.from) || !nodes.count(edge.to)) {
        throw std::invalid_argument("edge references unknown node");
    }
    check_information(edge);
    edges.push_back(std::move(edge));
}

double huber_rho(double squared_norm, double delta) {
    const double r = std::sqrt(squared_norm);
    if (r <= delta) return squared_norm;
    return 2.0 * delta * r - delta * delta;
}

double robust_cost(const PoseGraph& graph, const RobustKernel& kernel,
                   const std::map<int64_t, Sim3Transform>& states,
                   bool use_robust_kernel) {
    double cost = 0.0;
    for (const GraphEdge& e : graph.edges) {
        const Vec7 r = edge_residual(e, states.at(e.from), states.at(e.to));
        const double sq = r.dot(e.information * r);
        cost += use_robust_kernel ? huber_rho(sq, kernel.huber_delta) : sq;
    }
    return cost;
}

Sim3Transform align_adjacent_chunks(const ChunkOutput& prev, const ChunkOutput& next) {
    const int ov = next.overlap_with_prev;
    if (ov < 3) throw std::invalid_argument("need >= 3 overlapping frames");
    if (ov > prev.frame_count() || ov > next.frame_count()) {
        throw std::invalid_argument("overlap exceeds chunk length");
    }
    std::vector<Eigen::Vector3d> src, dst;  // next-local -> prev-local
    for (int i = 0; i < ov; ++i) {
        const SE3Pose& p = prev.frames[prev.frame_count() - ov + i].pose;
        const SE3Pose& n = next.frames[i].pose;
        src.push_back(n.translation);
        dst.push_back(p.translation);
    }
    try {
        return fit_sim3_umeyama(src, dst);
    } catch (const DegeneratePointSetError&) {
        // Straight-line camera centers: add a point 1 m down each optical axis.
        std::vector<Eigen::Vector3d> src2 = src, dst2 = dst;
        for (int i = 0; i < ov; ++i) {
            const SE3Pose& p = prev.frames[prev.frame_count() - ov + i].pose;
            const SE3Pose& n = next.frames[i].pose;
            src2.push_back(n.apply(Eigen::Vector3d(0.0, 0.0, 1.0)));
            dst2.push_back(p.apply(Eigen::Vector3d(0.0, 0.0, 1.0)));
        }
        return fit_sim3_umeyama(src2, dst2);
    }
}

OptimizeResult optimize(const PoseGraph& graph, const RobustKernel& kernel,
                        const OptimizeOptions& options) {
    if (graph.nodes.empty()) throw std::invalid_argument("empty graph");
    if (kernel.huber_delta <= 0.0) throw std::invalid_argument("huber_delta <= 0");
    for (const GraphEdge& e : graph.edges) check_information(e);

    const int64_t gauge =
        options.gauge_id >= 0 ? options.gauge_id : graph.nodes.begin()->first;
    if (!graph.nodes.count(gauge)) throw std::invalid_argument("gauge node missing");

    // Connectivity from the gauge node; optimization of an unreachable
    // component would be unconstrained.
    {
        std::map<int64_t, std::vector<int64_t>> adj;
        for (const GraphEdge& e : graph.edges) {
            adj[e.from].push_back(e.to);
            adj[e.to].push_back(e.from);
        }
        std::map<int64_t, bool> seen;
        std::deque<int64_t> queue{gauge};
        seen[gauge] = true;
        while (!queue.empty()) {
            const int64_t cur = queue.front();
            queue.pop_front();
            for (int64_t nb : adj[cur]) {
                if (!seen[nb]) {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        std::string unreachable;
        for (const auto& [id, node] : graph.nodes) {
            if (!seen[id]) unreachable += " " + std::to_string(id);
        }
        if (!unreachable.empty()) {
            throw std::invalid_argument("graph disconnected; unreachable chunks:" +
                                        unreachable);
        }
    }

    // Free-parameter layout: 7 per node except the gauge.
    std::vector<int64_t> ids;
    std::map<int64_t, int> offset;
    for (const auto& [id, node] : graph.nodes) {
        if (id == gauge) continue;
        offset[id] = static_cast<int>(ids.size()) * 7;
        ids.push_back(id);
    }
    const int dim = static_cast<int>(ids.size()) * 7;

    OptimizeResult result;
    for (const auto& [id, node] : graph.nodes) {
        result.states[id] = node.state;
        result.initial_states[id] = node.state;
    }
    result.initial_cost =
        robust_cost(graph, kernel, result.states, options.use_robust_kernel);
    result.cost_history.push_back(result.initial_cost);
    if (dim == 0 || graph.edges.empty()) {
        result.final_cost = result.initial_cost;
        result.converged = true;
        return result;
    }

    double lambda = options.initial_lambda;
    double cost = result.initial_cost;
    const size_t n_edges = graph.edges.size();
    std::vector<Vec7> residuals(n_edges);
    std::vector<Eigen::Matrix<double, 7, 14>> jacobians(n_edges);

    for (int iter = 0; iter < options.max_iters; ++iter) {
        // Residuals and FD Jacobians, one independent task per edge.
        parallel_for(n_edges, [&](size_t ei) {
            const GraphEdge& e = graph.edges[ei];
            const Sim3Transform& sf = result.states.at(e.from);
            const Sim3Transform& st = result.states.at(e.to);
            residuals[ei] = edge_residual(e, sf, st);
            for (int d = 0; d < 7; ++d) {
                const Vec7 rp = edge_residual(e, perturbed(sf, d, options.fd_step), st);
                const Vec7 rm = edge_residual(e, perturbed(sf, d, -options.fd_step), st);
                jacobians[ei].col(d) = (rp - rm) / (2.0 * options.fd_step);
                const Vec7 tp = edge_residual(e, sf, perturbed(st, d, options.fd_step));
                const Vec7 tm = edge_residual(e, sf, perturbed(st, d, -options.fd_step));
                jacobians[ei].col(7 + d) = (tp - tm) / (2.0 * options.fd_step);
            }
        });

        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
        for (size_t ei = 0; ei < n_edges; ++ei) {
            const GraphEdge& e = graph.edges[ei];
            const Vec7& r = residuals[ei];
            const double sq = r.dot(e.information * r);
            double w = 1.0;
            if (options.use_robust_kernel) {
                const double norm = std::sqrt(sq);
                if (norm > kernel.huber_delta) w = kernel.huber_delta / norm;
            }
            const int of = (e.from == gauge) ? -1 : offset.at(e.from);
            const int ot = (e.to == gauge) ? -1 : offset.at(e.to);
            const auto jf = jacobians[ei].leftCols<7>();
            const auto jt = jacobians[ei].rightCols<7>();
            const Mat7 wi = w * e.information;
            if (of >= 0) {
                h.block<7, 7>(of, of) += jf.transpose() * wi * jf;
                g.segment<7>(of) += jf.transpose() * (wi * r);
            }
            if (ot >= 0) {
                h.block<7, 7>(ot, ot) += jt.transpose() * wi * jt;
                g.segment<7>(ot) += jt.transpose() * (wi * r);
            }
            if (of >= 0 && ot >= 0) {
                const Mat7 cross = jf.transpose() * wi * jt;
                h.block<7, 7>(of, ot) += cross;
                h.block<7, 7>(ot, of) += cross.transpose();
            }
        }

        bool accepted = false;
        while (!accepted && lambda < 1e12) {
            Eigen::MatrixXd damped = h;
            damped.diagonal().array() += lambda;
            const Eigen::VectorXd delta = damped.ldlt().solve(-g);
            std::map<int64_t, Sim3Transform> candidate = result.states;
            for (size_t i = 0; i < ids.size(); ++i) {
                const Vec7 d = delta.segment<7>(static_cast<int>(i) * 7);
                candidate[ids[i]] =
                    compose(candidate[ids[i]], sim3_exp(TangentVec7::from_vec(d)));
            }
            const double new_cost =
                robust_cost(graph, kernel, candidate, options.use_robust_kernel);
            if (new_cost < cost) {
                accepted = true;
                const double drop = cost - new_cost;
                result.states = std::move(candidate);
                cost = new_cost;
                result.cost_history.push_back(cost);
                lambda = std::max(lambda / 10.0, 1e-12);
                if (drop / std::max(cost, 1e-300) < options.tol) {
                    result.converged = true;
                }
            } else {
                lambda *= 10.0;
            }
        }
        ++result.iterations;
        if (!accepted || result.converged || cost == 0.0) {
            result.converged = result.converged || cost == 0.0 || !accepted;
            break;
        }
    }
    result.final_cost = cost;
    return result;
}

std::map<int64_t, Sim3Transform> apply_corrections(const OptimizeResult& result) {
    std::map<int64_t, Sim3Transform> out;
    for (const auto& [id, state] : result.states) {
        out[id] = compose(state, result.initial_states.at(id).inverse());
    }
    return out;
}

void save_pose_graph(const PoseGraph& graph, const std::filesystem::path& path,
                     int64_t fixed_id) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    char buf[64];
    const auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [id, node] : graph.nodes) {
        const Vec7 v = sim3_log(node.state).vec();
        out << "VERTEX_SIM3 " << id;
        for (int i = 0; i < 7; ++i) out << " " << fmt(v(i));
        out << "\n";
    }
    if (fixed_id >= 0) out << "FIX " << fixed_id << "\n";
    for (const GraphEdge& e : graph.edges) {
        const Vec7 m = sim3_log(e.measurement).vec();
        out << "EDGE_SIM3 " << e.from << " " << e.to;
        for (int i = 0; i < 7; ++i) out << " " << fmt(m(i));
        for (int i = 0; i < 7; ++i) {
            for (int j = i; j < 7; ++j) out << " " << fmt(e.information(i, j));
        }
        out << "\n";
    }
}

PoseGraph load_pose_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    PoseGraph graph;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag == "VERTEX_SIM3") {
            int64_t id;
            Vec7 v;
            if (!(ss >> id >> v(0) >> v(1) >> v(2) >> v(3) >> v(4) >> v(5) >> v(6))) {
                throw std::runtime_error("bad VERTEX_SIM3 line: " + line);
            }
            graph.add_node(id, sim3_exp(TangentVec7::from_vec(v)));
        } else if (tag == "EDGE_SIM3") {
            GraphEdge e;
            Vec7 m;
            if (!(ss >> e.from >> e.to >> m(0) >> m(1) >> m(2) >> m(3) >> m(4) >>
                  m(5) >> m(6))) {
                throw std::runtime_error("bad EDGE_SIM3 line: " + line);
            }
            for (int i = 0; i < 7; ++i) {
                for (int j = i; j < 7; ++j) {
                    double v;
                    if (!(ss >> v)) throw std::runtime_error("bad edge information");
                    e.information(i, j) = v;
                    e.information(j, i) = v;
                }
            }
            e.measurement = sim3_exp(TangentVec7::from_vec(m));
            e.kind = (e.to == e.from + 1) ? GraphEdge::Kind::Odometry
                                          : GraphEdge::Kind::Loop;
            graph.add_edge(std::move(e));
        } else if (tag == "FIX") {
            int64_t id;
            ss >> id;  // informational; optimize() picks its own gauge argument
        } else {
            throw std::runtime_error("unknown record '" + tag + "'");
        }
    }
    return graph;
}

}  // namespace inslam
