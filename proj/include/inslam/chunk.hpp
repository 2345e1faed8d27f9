#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "inslam/lie.hpp"

namespace inslam {

// Dump loading failures, one kind per distinguishable corruption.
enum class DumpErrorKind { MagicMismatch, DimensionMismatch, TruncatedPayload, Io };

struct DumpError : std::runtime_error {
    DumpErrorKind kind;
    DumpError(DumpErrorKind k, const std::string& msg)
        : std::runtime_error(msg), kind(k) {}
};

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
};

// One frame of front-end output: camera pose in the chunk-local frame,
// per-pixel depth (meters, 0 = invalid), per-pixel instance embedding, and
// optionally a per-pixel language-feature raster of external dimension.
struct FrameOutput {
    SE3Pose pose;  // camera -> chunk-local world
    std::vector<float> depth;      // H*W, row-major
    std::vector<float> embedding;  // H*W*D, pixel-major then channel
    std::vector<float> lang;       // H*W*lang_dim or empty
    CameraIntrinsics intrinsics;
    double timestamp = 0.0;

    float depth_at(int row, int col, int width) const {
        return depth[static_cast<size_t>(row) * width + col];
    }
    const float* embed_at(int row, int col, int width, int dim) const {
        return embedding.data() + (static_cast<size_t>(row) * width + col) * dim;
    }
};

// One front-end inference result over a window of frames.
struct ChunkOutput {
    int64_t chunk_id = 0;
    int height = 0;
    int width = 0;
    int embed_dim = 8;
    int lang_dim = 0;  // 0 when no language raster is present
    int overlap_with_prev = 0;
    std::vector<FrameOutput> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
    size_t pixels_per_frame() const {
        return static_cast<size_t>(height) * width;
    }
    void validate() const;  // throws std::invalid_argument on broken invariants

    // Back-project pixel (row, col) of frame f at its stored depth into the
    // chunk-local frame. Depth must be valid.
    Eigen::Vector3d backproject(int f, int row, int col) const;
};

Eigen::Vector3d backproject_pixel(const CameraIntrinsics& k, int row, int col,
                                  double depth);

// Chunk dump layout (one directory per chunk):
//   meta       UTF-8 text: magic line "IRISCHUNK1", then
//              "<chunk_id> <N> <H> <W> <D> <overlap_with_prev>", then N lines
//              "<fx> <fy> <cx> <cy>", then N timestamp lines. A trailing
//              "lang_dim <L>" line is present iff a language raster is stored.
//   poses.bin  N x 16 float64, little-endian, row-major 4x4 (scale folded
//              into the upper-left 3x3 block).
//   depth.bin  N x H x W float32, little-endian, row-major.
//   embed.bin  N x H x W x D float32, pixel-major then channel.
//   gt_ids.bin optional, N x H x W int32 (oracle chunks only).
//   lang.bin   optional, N x H x W x L float32.
void save_chunk(const ChunkOutput& chunk, const std::filesystem::path& dir,
                const std::vector<int32_t>* gt_ids = nullptr);
ChunkOutput load_chunk(const std::filesystem::path& dir);

// Loads gt_ids.bin for a previously loaded chunk; empty if absent.
std::vector<int32_t> load_chunk_gt_ids(const std::filesystem::path& dir,
                                       const ChunkOutput& chunk);

}  // namespace inslam
