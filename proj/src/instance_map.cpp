#include "inslam/instance_map.hpp"

#include <cmath>
#include <fstream>

namespace inslam {

namespace {

// 21 bits per axis, biased; covers +-1e6 cells.
uint64_t voxel_key(const Eigen::Vector3d& p, double voxel) {
    const auto cell = [&](double v) -> uint64_t {
        const int64_t c = static_cast<int64_t>(std::floor(v / voxel)) + (1 << 20);
        return static_cast<uint64_t>(c & 0x1FFFFF);
    };
    return cell(p.x()) | (cell(p.y()) << 21) | (cell(p.z()) << 42);
}

}  // namespace

GlobalInstance& GlobalInstanceMap::get_or_create(int64_t id) {
    auto [it, inserted] = instances.try_emplace(id);
    if (inserted) it->second.id = id;
    return it->second;
}

void LabelSet::validate() const {
    if (labels.empty()) throw std::invalid_argument("empty label set");
    for (const auto& [name, emb] : labels) {
        if (std::abs(emb.norm() - 1.0) > 1e-6) {
            throw std::invalid_argument("label embedding not unit norm: " + name);
        }
    }
}

void fuse_observation(GlobalInstanceMap& map, int64_t instance_id,
                      const InstanceMask& mask, const ChunkOutput& chunk,
                      int frame_index, const Sim3Transform& world_from_camera,
                      int64_t global_frame_index) {
    const FrameOutput& frame = chunk.frames.at(frame_index);
    GlobalInstance& inst = map.get_or_create(instance_id);

    bool any_valid = false;
    for (const PixelCoord& p : mask.pixels) {
        const double d = frame.depth_at(p.row, p.col, chunk.width);
        if (d <= 0.0) continue;
        any_valid = true;
        const Eigen::Vector3d cam = backproject_pixel(frame.intrinsics, p.row, p.col, d);
        const Eigen::Vector3d world = world_from_camera.apply(cam);
        const uint64_t key = voxel_key(world, map.voxel_size);
        if (inst.voxel_keys.insert(key).second) {
            inst.points.push_back(world);
            inst.point_chunks.push_back(chunk.chunk_id);
        }
    }
    if (!any_valid) return;
    inst.last_seen = global_frame_index;

    if (chunk.lang_dim > 0) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(chunk.lang_dim);
        for (const PixelCoord& p : mask.pixels) {
            const size_t base =
                (static_cast<size_t>(p.row) * chunk.width + p.col) * chunk.lang_dim;
            for (int i = 0; i < chunk.lang_dim; ++i) acc(i) += frame.lang[base + i];
        }
        if (acc.norm() > 1e-9) {
            acc.normalize();
            if (inst.semantic_obs == 0) {
                inst.semantic_feature = acc;
            } else {
                inst.semantic_feature =
                    (inst.semantic_obs * inst.semantic_feature + acc).normalized();
            }
            ++inst.semantic_obs;
        }
    }
}

std::map<int64_t, LabelAssignment> assign_labels(const GlobalInstanceMap& map,
                                                 const LabelSet& labels) {
    labels.validate();
    std::map<int64_t, LabelAssignment> out;
    for (const auto& [id, inst] : map.instances) {
        LabelAssignment a;
        if (inst.semantic_feature.size() == 0) {
            a.name = "unknown";
            a.low_confidence = true;
        } else {
            int best = 0;
            double best_score = -2.0;
            for (size_t i = 0; i < labels.labels.size(); ++i) {
                if (labels.labels[i].second.size() != inst.semantic_feature.size()) {
                    throw std::invalid_argument("label dimension mismatch");
                }
                const double s = inst.semantic_feature.dot(labels.labels[i].second);
                if (s > best_score) {  // ties keep the first label in list order
                    best_score = s;
                    best = static_cast<int>(i);
                }
            }
            a.name = labels.labels[best].first;
            a.score = best_score;
            a.low_confidence = best_score <= 0.0;
        }
        out.emplace(id, std::move(a));
    }
    return out;
}

size_t retag_on_loop(GlobalInstanceMap& map,
                     const std::map<int64_t, Sim3Transform>& corrections) {
    size_t missing = 0;
    for (auto& [id, inst] : map.instances) {
        inst.voxel_keys.clear();
        for (size_t i = 0; i < inst.points.size(); ++i) {
            const auto it = corrections.find(inst.point_chunks[i]);
            if (it == corrections.end()) {
                ++missing;
            } else {
                inst.points[i] = it->second.apply(inst.points[i]);
            }
            inst.voxel_keys.insert(voxel_key(inst.points[i], map.voxel_size));
        }
    }
    return missing;
}

void export_map(const GlobalInstanceMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "INSTANCEMAP1 " << map.instances.size() << " " << map.voxel_size << "\n";
    for (const auto& [id, inst] : map.instances) {
        const int64_t n = static_cast<int64_t>(inst.points.size());
        const int32_t proto_dim = static_cast<int32_t>(inst.prototype.size());
        const int32_t sem_dim = static_cast<int32_t>(inst.semantic_feature.size());
        out.write(reinterpret_cast<const char*>(&id), sizeof(id));
        out.write(reinterpret_cast<const char*>(&n), sizeof(n));
        out.write(reinterpret_cast<const char*>(&proto_dim), sizeof(proto_dim));
        out.write(reinterpret_cast<const char*>(&sem_dim), sizeof(sem_dim));
        for (const Eigen::Vector3d& p : inst.points) {
            const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                                  static_cast<float>(p.z())};
            out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
        }
        for (int i = 0; i < proto_dim; ++i) {
            const float v = static_cast<float>(inst.prototype(i));
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
        for (int i = 0; i < sem_dim; ++i) {
            const float v = static_cast<float>(inst.semantic_feature(i));
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
}

void export_map_ply(const GlobalInstanceMap& map, const std::filesystem::path& path) {
    size_t total = 0;
    for (const auto& [id, inst] : map.instances) total += inst.points.size();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << total
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property int instance_id\nend_header\n";
    for (const auto& [id, inst] : map.instances) {
        for (const Eigen::Vector3d& p : inst.points) {
            out << static_cast<float>(p.x()) << " " << static_cast<float>(p.y()) << " "
                << static_cast<float>(p.z()) << " " << id << "\n";
        }
    }
}

}  // namespace inslam
