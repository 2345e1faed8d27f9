#include <CLI11.hpp>
#include <iostream>
#include <random>

#include "inslam/contrastive.hpp"
#include "inslam/pipeline.hpp"

namespace {

using namespace inslam;

// Exit codes: 0 success, 2 config error, 3 data error, 4 stage failure.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitStage = 4;

Config load_config(const std::string& config_path,
                   const std::vector<std::string>& overrides) {
    Config cfg;
    if (!config_path.empty()) cfg = Config::from_file(config_path);
    cfg.merge(Config::from_overrides(overrides));
    return cfg;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
    const PipelineConfig cfg =
        PipelineConfig::from_config(load_config(config_path, overrides));
    const RunResult result = run_pipeline(cfg);
    std::cout << result.report.to_table(true);
    std::cout << "outputs under " << cfg.output_dir.string() << "\n";
    return 0;
}

int cmd_gen_scene(const std::string& config_path,
                  const std::vector<std::string>& overrides, const std::string& out) {
    PipelineConfig cfg = PipelineConfig::from_config(load_config(config_path, overrides));
    if (!out.empty()) cfg.output_dir = out;
    generate_scene_dumps(cfg, cfg.output_dir);
    std::cout << "scene dumps written to " << cfg.output_dir.string() << "\n";
    return 0;
}

int cmd_cluster(const std::string& chunk_dir, const std::string& out_dir,
                double epsilon, int delta_base, uint64_t seed) {
    const ChunkOutput chunk = load_chunk(chunk_dir);
    std::filesystem::create_directories(out_dir);
    ClusterConfig ccfg;
    ccfg.epsilon = epsilon;
    ccfg.delta = scaled_delta(delta_base, chunk.height, chunk.width);

    std::vector<int32_t> raster(chunk.frames.size() * chunk.pixels_per_frame(), -1);
    std::ofstream table(std::filesystem::path(out_dir) / "masks.tsv", std::ios::trunc);
    table << "frame\tmask\tpixels\tdescriptor\n";
    for (int f = 0; f < chunk.frame_count(); ++f) {
        const FrameOutput& frame = chunk.frames[f];
        std::vector<uint8_t> valid(chunk.pixels_per_frame());
        for (size_t i = 0; i < valid.size(); ++i) valid[i] = frame.depth[i] > 0.0f;
        ClusterConfig fcfg = ccfg;
        fcfg.seed = mix_seed(seed, static_cast<uint64_t>(f));
        const auto masks = cluster_embeddings(frame.embedding, chunk.height,
                                              chunk.width, chunk.embed_dim, valid, fcfg);
        for (size_t m = 0; m < masks.size(); ++m) {
            const MaskDescriptor d = pool_and_normalize(
                frame.embedding, chunk.height, chunk.width, chunk.embed_dim, masks[m]);
            table << f << "\t" << m << "\t" << masks[m].size() << "\t";
            for (int i = 0; i < d.vector.size(); ++i) {
                table << (i ? "," : "") << d.vector(i);
            }
            table << "\n";
            for (const PixelCoord& p : masks[m].pixels) {
                raster[f * chunk.pixels_per_frame() + p.row * chunk.width + p.col] =
                    static_cast<int32_t>(m);
            }
        }
    }
    std::ofstream bin(std::filesystem::path(out_dir) / "mask_ids.bin",
                      std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(raster.data()),
              static_cast<std::streamsize>(raster.size() * sizeof(int32_t)));
    std::cout << "masks written to " << out_dir << "\n";
    return 0;
}

int cmd_associate(const std::string& config_path,
                  const std::vector<std::string>& overrides) {
    Config cfg = load_config(config_path, overrides);
    cfg.set("loop.max_candidates", "0");  // association audit only, no loops
    const RunResult result = run_pipeline(PipelineConfig::from_config(cfg));
    std::cout << "affinity log: "
              << result.outputs.at("affinity_log.tsv").string() << "\n";
    if (result.association_accuracy >= 0.0) {
        std::cout << "association accuracy vs ground truth: "
                  << result.association_accuracy << "\n";
    }
    return 0;
}

int cmd_loopbench(const std::string& config_path,
                  const std::vector<std::string>& overrides, int stride,
                  double place_threshold) {
    const PipelineConfig cfg =
        PipelineConfig::from_config(load_config(config_path, overrides));
    const LoopBenchReport report = run_loop_benchmark(cfg, stride, place_threshold);
    std::filesystem::create_directories(cfg.output_dir);

    std::ofstream rows(cfg.output_dir / "benchmark.tsv", std::ios::trunc);
    rows << "query\tplace\toverlap\tdecision\tconsistent_count\n";
    for (const LoopBenchRow& r : report.rows) {
        rows << r.query_frame << "\t" << r.place_frame << "\t" << r.overlap << "\t"
             << (r.accepted ? "accept" : "reject") << "\t" << r.consistent_count
             << "\n";
    }
    std::ofstream metrics(cfg.output_dir / "metrics.tsv", std::ios::trunc);
    metrics << "tau\tprecision\trecall_at_1\tf1\tglobal_stub_f1\n";
    std::cout << "places " << report.n_places << ", queries " << report.n_queries
              << "\ntau\tP\tR@1\tF1\tstub F1\n";
    for (const RetrievalBinResult& bin : report.bins) {
        metrics << bin.tau << "\t" << bin.instance.precision << "\t"
                << bin.instance.recall_at_1 << "\t" << bin.instance.f1 << "\t"
                << (bin.global_stub ? bin.global_stub->f1 : 0.0) << "\n";
        std::cout << bin.tau << "\t" << bin.instance.precision << "\t"
                  << bin.instance.recall_at_1 << "\t" << bin.instance.f1 << "\t"
                  << (bin.global_stub ? bin.global_stub->f1 : 0.0) << "\n";
    }
    return 0;
}

int cmd_optimize(const std::string& graph_in, const std::string& graph_out,
                 double huber_delta, int max_iters) {
    PoseGraph graph = load_pose_graph(graph_in);
    RobustKernel kernel{huber_delta};
    OptimizeOptions options;
    options.max_iters = max_iters;
    const OptimizeResult result = optimize(graph, kernel, options);
    std::cout << "cost " << result.initial_cost << " -> " << result.final_cost
              << " in " << result.iterations << " iterations\n";
    for (auto& [id, node] : graph.nodes) node.state = result.states.at(id);
    if (!graph_out.empty()) {
        save_pose_graph(graph, graph_out, graph.nodes.begin()->first);
        std::cout << "optimized graph written to " << graph_out << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& est, const std::string& ref, const std::string& align) {
    TrajectoryAlignment mode;
    if (align == "none") {
        mode = TrajectoryAlignment::None;
    } else if (align == "rigid") {
        mode = TrajectoryAlignment::Rigid;
    } else if (align == "similarity") {
        mode = TrajectoryAlignment::Similarity;
    } else {
        throw ConfigError("--align must be none|rigid|similarity");
    }
    const double rmse =
        ate_rmse(load_trajectory_tum(est), load_trajectory_tum(ref), mode);
    std::cout << "ate_rmse=" << rmse << "\n";
    return 0;
}

// Independent finite-difference probe of the three loss gradients.
int cmd_losscheck(uint64_t seed, int pixels, int masks) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    LabeledFeatureSet set;
    const int dim = 8;
    for (int m = 0; m < masks; ++m) {
        set.view_of.push_back(m % 2);
        set.identity_of.push_back(m / 2);
    }
    for (int p = 0; p < pixels; ++p) {
        Eigen::VectorXd f(dim);
        for (int i = 0; i < dim; ++i) f(i) = gauss(rng);
        f.normalize();
        set.features.push_back(f);
        set.mask_of.push_back(p % masks);
    }
    const Margins margins;

    const auto fd_error = [&](auto loss_fn) {
        const LossResult res = loss_fn(set, margins);
        double max_rel = 0.0;
        const double h = 1e-5;
        for (size_t p = 0; p < set.features.size(); ++p) {
            for (int i = 0; i < dim; ++i) {
                LabeledFeatureSet plus = set, minus = set;
                plus.features[p](i) += h;
                minus.features[p](i) -= h;
                const double fd =
                    (loss_fn(plus, margins).loss - loss_fn(minus, margins).loss) /
                    (2.0 * h);
                const double denom = std::max(std::abs(fd), 1e-8);
                max_rel = std::max(max_rel, std::abs(fd - res.grad[p](i)) / denom);
            }
        }
        return std::make_pair(res.loss, max_rel);
    };
    const auto [l1, e1] = fd_error(intra_pull_loss);
    const auto [l2, e2] = fd_error(cross_pull_loss);
    const auto [l3, e3] = fd_error(push_loss);
    std::cout << "intra_pull: loss=" << l1 << " max_fd_rel_err=" << e1 << "\n";
    std::cout << "cross_pull: loss=" << l2 << " max_fd_rel_err=" << e2 << "\n";
    std::cout << "push:       loss=" << l3 << " max_fd_rel_err=" << e3 << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"instance-semantic SLAM back-end"};
    app.require_subcommand(1);

    std::string config_path, out_dir, chunk_dir, graph_in, graph_out, est, ref;
    std::string align = "similarity";
    std::vector<std::string> overrides;
    double epsilon = 0.75, huber_delta = 0.05, place_threshold = 0.3;
    int delta_base = 20, max_iters = 100, stride = 5, pixels = 64, masks = 6;
    uint64_t seed = 7;

    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", overrides, "config overrides, key=value");
    };

    CLI::App* run = app.add_subcommand("run", "full pipeline");
    add_config(run);
    CLI::App* gen = app.add_subcommand("gen-scene", "write oracle chunk dumps");
    add_config(gen);
    gen->add_option("--out", out_dir, "output directory");
    CLI::App* cluster = app.add_subcommand("cluster", "cluster one chunk dump");
    cluster->add_option("--chunk", chunk_dir, "chunk dump directory")->required();
    cluster->add_option("--out", out_dir, "output directory")->required();
    cluster->add_option("--epsilon", epsilon, "cosine threshold");
    cluster->add_option("--delta", delta_base, "min cluster size at 64x48");
    cluster->add_option("--seed", seed, "clustering seed");
    CLI::App* assoc = app.add_subcommand("associate", "association audit run");
    add_config(assoc);
    CLI::App* bench = app.add_subcommand("loopbench", "place-recognition benchmark");
    add_config(bench);
    bench->add_option("--stride", stride, "keyframe stride");
    bench->add_option("--place-threshold", place_threshold, "overlap threshold");
    CLI::App* opt = app.add_subcommand("optimize", "optimize a pose graph file");
    opt->add_option("--graph", graph_in, "input g2o-style file")->required();
    opt->add_option("--out", graph_out, "optimized output file");
    opt->add_option("--huber-delta", huber_delta, "robust kernel knee");
    opt->add_option("--max-iters", max_iters, "iteration cap");
    CLI::App* eval = app.add_subcommand("eval", "trajectory ATE");
    eval->add_option("--est", est, "estimated trajectory (TUM)")->required();
    eval->add_option("--ref", ref, "reference trajectory (TUM)")->required();
    eval->add_option("--align", align, "none|rigid|similarity");
    CLI::App* loss = app.add_subcommand("losscheck", "loss + FD gradient probe");
    loss->add_option("--seed", seed, "feature set seed");
    loss->add_option("--pixels", pixels, "pixel count");
    loss->add_option("--masks", masks, "mask count");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, overrides);
        if (gen->parsed()) return cmd_gen_scene(config_path, overrides, out_dir);
        if (cluster->parsed()) {
            return cmd_cluster(chunk_dir, out_dir, epsilon, delta_base, seed);
        }
        if (assoc->parsed()) return cmd_associate(config_path, overrides);
        if (bench->parsed()) {
            return cmd_loopbench(config_path, overrides, stride, place_threshold);
        }
        if (opt->parsed()) return cmd_optimize(graph_in, graph_out, huber_delta, max_iters);
        if (eval->parsed()) return cmd_eval(est, ref, align);
        if (loss->parsed()) return cmd_losscheck(seed, pixels, masks);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const StageError& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return kExitStage;
    } catch (const DumpError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
