#include "inslam/evaluation.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <sstream>

namespace inslam {

namespace {

constexpr double kStampTolerance = 0.02;  // seconds

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Kabsch: rotation + translation only, scale pinned to 1.
SE3Pose fit_rigid(const std::vector<Eigen::Vector3d>& src,
                  const std::vector<Eigen::Vector3d>& dst) {
    const size_t n = src.size();
    Eigen::Vector3d mu_src = Eigen::Vector3d::Zero(), mu_dst = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        mu_src += src[i];
        mu_dst += dst[i];
    }
    mu_src /= static_cast<double>(n);
    mu_dst /= static_cast<double>(n);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        cov += (dst[i] - mu_dst) * (src[i] - mu_src).transpose();
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d d = svd.singularValues();
    if (d(1) < 1e-12 * std::max(d(0), 1e-300)) {
        throw DegeneratePointSetError("rigid alignment: degenerate trajectories");
    }
    Eigen::Vector3d sign = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;
    SE3Pose out;
    out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
    out.translation = mu_dst - out.rotation * mu_src;
    return out;
}

}  // namespace

void Trajectory::validate() const {
    if (stamps.size() != poses.size()) {
        throw std::invalid_argument("trajectory stamps/poses size mismatch");
    }
    for (size_t i = 1; i < stamps.size(); ++i) {
        if (stamps[i] <= stamps[i - 1]) {
            throw std::invalid_argument("trajectory stamps not strictly increasing");
        }
    }
}

Trajectory load_trajectory_tum(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Trajectory traj;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double stamp, tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> stamp >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
            throw std::runtime_error("bad TUM line: " + line);
        }
        SE3Pose pose;
        pose.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
        pose.translation = {tx, ty, tz};
        traj.stamps.push_back(stamp);
        traj.poses.push_back(pose);
    }
    traj.validate();
    return traj;
}

void save_trajectory_tum(const Trajectory& traj, const std::filesystem::path& path) {
    traj.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "# stamp tx ty tz qx qy qz qw\n";
    for (size_t i = 0; i < traj.size(); ++i) {
        const Eigen::Quaterniond q(traj.poses[i].rotation);
        const Eigen::Vector3d& t = traj.poses[i].translation;
        out << fmt17(traj.stamps[i]) << " " << fmt17(t.x()) << " " << fmt17(t.y())
            << " " << fmt17(t.z()) << " " << fmt17(q.x()) << " " << fmt17(q.y()) << " "
            << fmt17(q.z()) << " " << fmt17(q.w()) << "\n";
    }
}

double ate_rmse(const Trajectory& estimated, const Trajectory& reference,
                TrajectoryAlignment alignment) {
    estimated.validate();
    reference.validate();
    std::vector<Eigen::Vector3d> est_pts, ref_pts;
    size_t j = 0;
    for (size_t i = 0; i < estimated.size(); ++i) {
        const double stamp = estimated.stamps[i];
        while (j + 1 < reference.size() &&
               std::abs(reference.stamps[j + 1] - stamp) <=
                   std::abs(reference.stamps[j] - stamp)) {
            ++j;
        }
        if (std::abs(reference.stamps[j] - stamp) > kStampTolerance) continue;
        est_pts.push_back(estimated.poses[i].translation);
        ref_pts.push_back(reference.poses[j].translation);
    }
    if (est_pts.size() < 2) {
        throw std::invalid_argument("ate_rmse: fewer than 2 stamp associations");
    }

    std::vector<Eigen::Vector3d> aligned = est_pts;
    if (alignment == TrajectoryAlignment::Rigid) {
        const SE3Pose fit = fit_rigid(est_pts, ref_pts);
        for (Eigen::Vector3d& p : aligned) p = fit.apply(p);
    } else if (alignment == TrajectoryAlignment::Similarity) {
        const Sim3Transform fit = fit_sim3_umeyama(est_pts, ref_pts);
        for (Eigen::Vector3d& p : aligned) p = fit.apply(p);
    }

    double sq_sum = 0.0;
    for (size_t i = 0; i < aligned.size(); ++i) {
        sq_sum += (aligned[i] - ref_pts[i]).squaredNorm();
    }
    return std::sqrt(sq_sum / aligned.size());
}

SemanticMetrics semantic_metrics(const SemanticEvalInput& input) {
    if (input.gt_points.empty()) throw std::invalid_argument("empty ground truth");
    if (input.predicted_points.size() != input.predicted_labels.size() ||
        input.gt_points.size() != input.gt_labels.size()) {
        throw std::invalid_argument("points/labels size mismatch");
    }

    std::map<std::string, int64_t> gt_count, tp, assigned;
    for (const std::string& c : input.classes) {
        gt_count[c] = 0;
        tp[c] = 0;
        assigned[c] = 0;
    }

    const double r2 = input.match_radius * input.match_radius;
    for (size_t g = 0; g < input.gt_points.size(); ++g) {
        const std::string& truth = input.gt_labels[g];
        if (!gt_count.count(truth)) {
            throw std::invalid_argument("gt label outside class list: " + truth);
        }
        ++gt_count[truth];
        std::string label = "unmatched";
        double best = r2;
        for (size_t p = 0; p < input.predicted_points.size(); ++p) {
            const double d2 = (input.predicted_points[p] - input.gt_points[g]).squaredNorm();
            if (d2 <= best) {
                best = d2;
                label = input.predicted_labels[p];
            }
        }
        if (assigned.count(label)) ++assigned[label];
        if (label == truth) ++tp[truth];
    }

    SemanticMetrics out;
    int64_t total_gt = 0;
    int present = 0;
    for (const std::string& c : input.classes) {
        if (gt_count[c] == 0) continue;
        ++present;
        total_gt += gt_count[c];
        const double fp = static_cast<double>(assigned[c] - tp[c]);
        const double iou = tp[c] / (static_cast<double>(gt_count[c]) + fp);
        const double acc = static_cast<double>(tp[c]) / gt_count[c];
        out.per_class_iou[c] = iou;
        out.per_class_acc[c] = acc;
        out.miou += iou;
        out.macc += acc;
    }
    if (present > 0) {
        out.miou /= present;
        out.macc /= present;
        for (const std::string& c : input.classes) {
            if (gt_count[c] == 0) continue;
            const double w = static_cast<double>(gt_count[c]) / total_gt;
            out.f_miou += w * out.per_class_iou[c];
            out.f_acc += w * out.per_class_acc[c];
        }
    }
    return out;
}

std::string MetricsReport::to_key_values() const {
    std::ostringstream out;
    out << "chunks=" << chunk_count << "\n";
    out << "frames=" << frame_count << "\n";
    out << "instances=" << instance_count << "\n";
    out << "loops_checked=" << loops_checked << "\n";
    out << "loops_accepted=" << loops_accepted << "\n";
    if (ate_pre_opt) out << "ate_rmse_pre_opt=" << fmt17(*ate_pre_opt) << "\n";
    if (ate_post_opt) out << "ate_rmse_post_opt=" << fmt17(*ate_post_opt) << "\n";
    if (semantics) {
        out << "miou=" << fmt17(semantics->miou) << "\n";
        out << "macc=" << fmt17(semantics->macc) << "\n";
        out << "f_miou=" << fmt17(semantics->f_miou) << "\n";
        out << "f_acc=" << fmt17(semantics->f_acc) << "\n";
    }
    for (const RetrievalBinResult& bin : retrieval) {
        const std::string tag = "retrieval_tau_" + std::to_string(bin.tau).substr(0, 4);
        out << tag << "_precision=" << fmt17(bin.instance.precision) << "\n";
        out << tag << "_recall_at_1=" << fmt17(bin.instance.recall_at_1) << "\n";
        out << tag << "_f1=" << fmt17(bin.instance.f1) << "\n";
        if (bin.global_stub) {
            out << tag << "_global_f1=" << fmt17(bin.global_stub->f1) << "\n";
        }
    }
    return out.str();
}

std::string MetricsReport::to_table(bool include_timings) const {
    std::ostringstream out;
    out << "== run summary ==\n";
    out << "chunks " << chunk_count << ", frames " << frame_count << ", instances "
        << instance_count << "\n";
    out << "loops: " << loops_accepted << " accepted of " << loops_checked
        << " checked\n";
    if (ate_pre_opt) out << "ATE RMSE (pre-opt):  " << *ate_pre_opt << " m\n";
    if (ate_post_opt) out << "ATE RMSE (post-opt): " << *ate_post_opt << " m\n";
    if (semantics) {
        out << "semantics: mIoU " << semantics->miou << "  mAcc " << semantics->macc
            << "  f-mIoU " << semantics->f_miou << "  f-Acc " << semantics->f_acc
            << "\n";
    }
    if (!retrieval.empty()) {
        out << "tau\tprecision\trecall@1\tf1\n";
        for (const RetrievalBinResult& bin : retrieval) {
            out << bin.tau << "\t" << bin.instance.precision << "\t"
                << bin.instance.recall_at_1 << "\t" << bin.instance.f1 << "\n";
        }
    }
    if (include_timings && !timings.empty()) {
        out << "== timing (ms) ==\nstage\ttotal\tper-chunk\tper-frame\n";
        for (const StageTiming& t : timings) {
            const double ms = t.seconds * 1e3;
            out << t.stage << "\t" << ms << "\t" << (t.chunks > 0 ? ms / t.chunks : 0.0)
                << "\t" << (t.frames > 0 ? ms / t.frames : 0.0) << "\n";
        }
    }
    return out.str();
}

}  // namespace inslam
