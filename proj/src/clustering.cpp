#include "inslam/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace inslam {

namespace {

struct WorkingSet {
    std::vector<int> pixel;                 // flat pixel index per feature
    std::vector<Eigen::VectorXd> unit;      // L2-normalized features
};

WorkingSet collect_valid(const std::vector<float>& embedding, int height, int width,
                         int dim, const std::vector<uint8_t>& valid) {
    WorkingSet ws;
    const size_t px_count = static_cast<size_t>(height) * width;
    if (embedding.size() != px_count * dim || valid.size() != px_count) {
        throw std::invalid_argument("cluster_embeddings: buffer sizes disagree");
    }
    for (size_t px = 0; px < px_count; ++px) {
        if (!valid[px]) continue;
        Eigen::VectorXd f(dim);
        bool finite = true;
        for (int i = 0; i < dim; ++i) {
            f(i) = embedding[px * dim + i];
            finite = finite && std::isfinite(f(i));
        }
        if (!finite) continue;
        const double norm = f.norm();
        if (norm < 1e-12) continue;  // zero-norm features are invalid, not errors
        ws.pixel.push_back(static_cast<int>(px));
        ws.unit.push_back(f / norm);
    }
    return ws;
}

}  // namespace

std::vector<InstanceMask> cluster_embeddings(const std::vector<float>& embedding,
                                             int height, int width, int dim,
                                             const std::vector<uint8_t>& valid,
                                             const ClusterConfig& cfg) {
    if (cfg.epsilon <= -1.0 || cfg.epsilon >= 1.0) {
        throw std::invalid_argument("epsilon outside (-1, 1)");
    }
    if (cfg.delta < 1) throw std::invalid_argument("delta must be >= 1");
    WorkingSet ws = collect_valid(embedding, height, width, dim, valid);

    std::vector<int> remaining(ws.pixel.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    const int iter_cap =
        cfg.max_iters > 0 ? cfg.max_iters : static_cast<int>(remaining.size()) + 1;

    std::vector<InstanceMask> masks;
    int iters = 0;
    std::vector<char> in_cluster(ws.pixel.size(), 0);
    while (!remaining.empty()) {
        if (++iters > iter_cap) {
            throw std::runtime_error("cluster_embeddings: iteration cap exceeded");
        }
        std::uniform_int_distribution<size_t> pick(0, remaining.size() - 1);
        const int seed_idx = remaining[pick(rng)];
        const Eigen::VectorXd& seed = ws.unit[seed_idx];

        // Initial mask by similarity to the seed, then one center refinement.
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
        for (int i : remaining) {
            if (ws.unit[i].dot(seed) > cfg.epsilon) acc += ws.unit[i];
        }
        Eigen::VectorXd center = acc.norm() > 1e-12 ? (acc / acc.norm()).eval() : seed;

        std::vector<int> cluster;
        for (int i : remaining) {
            if (ws.unit[i].dot(center) > cfg.epsilon) {
                cluster.push_back(i);
                in_cluster[i] = 1;
            }
        }
        // The refined center can drop the seed; remove it regardless so every
        // iteration peels at least one feature.
        if (!in_cluster[seed_idx]) {
            cluster.push_back(seed_idx);
            in_cluster[seed_idx] = 1;
        }

        if (static_cast<int>(cluster.size()) > cfg.delta) {
            InstanceMask mask;
            mask.pixels.reserve(cluster.size());
            for (int i : cluster) {
                mask.pixels.push_back({ws.pixel[i] / width, ws.pixel[i] % width});
            }
            std::sort(mask.pixels.begin(), mask.pixels.end());
            masks.push_back(std::move(mask));
        }

        std::vector<int> next;
        next.reserve(remaining.size() - cluster.size());
        for (int i : remaining) {
            if (!in_cluster[i]) next.push_back(i);
        }
        remaining.swap(next);
        for (int i : cluster) in_cluster[i] = 0;
    }
    return masks;
}

MaskDescriptor pool_and_normalize(const std::vector<float>& embedding, int height,
                                  int width, int dim, const InstanceMask& mask) {
    if (mask.pixels.empty()) throw std::invalid_argument("pool: empty mask");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
    for (const PixelCoord& p : mask.pixels) {
        if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
            throw std::invalid_argument("pool: pixel outside frame");
        }
        const size_t base = (static_cast<size_t>(p.row) * width + p.col) * dim;
        for (int i = 0; i < dim; ++i) acc(i) += embedding[base + i];
    }
    const double norm = acc.norm();
    if (norm < 1e-9) {
        throw std::domain_error("pool: feature sum has zero norm");
    }
    MaskDescriptor d;
    d.vector = acc / norm;
    d.frame_index = mask.frame_index;
    return d;
}

std::vector<std::vector<int>> brute_force_clusters(
    const std::vector<Eigen::VectorXd>& features, double epsilon) {
    const int n = static_cast<int>(features.size());
    if (n > 5000) throw std::invalid_argument("brute_force_clusters: too many features");
    std::vector<Eigen::VectorXd> unit(features);
    for (Eigen::VectorXd& f : unit) {
        const double norm = f.norm();
        if (norm > 1e-12) f /= norm;
    }
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (unit[i].dot(unit[j]) > epsilon) {
                parent[find(i)] = find(j);
            }
        }
    }
    std::vector<std::vector<int>> groups(n);
    for (int i = 0; i < n; ++i) groups[find(i)].push_back(i);
    std::vector<std::vector<int>> out;
    for (auto& g : groups) {
        if (!g.empty()) out.push_back(std::move(g));
    }
    return out;
}

int scaled_delta(int delta_at_base, int height, int width) {
    const double base_area = 64.0 * 48.0;
    const double scaled = delta_at_base * (static_cast<double>(height) * width) / base_area;
    return std::max(1, static_cast<int>(std::lround(scaled)));
}

}  // namespace inslam
