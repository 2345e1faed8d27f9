#include "inslam/chunk.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace inslam {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "IRISCHUNK1";

void write_binary(const fs::path& path, const void* data, size_t bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DumpError(DumpErrorKind::Io, "cannot open " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw DumpError(DumpErrorKind::Io, "short write to " + path.string());
}

std::vector<char> read_binary(const fs::path& path, size_t expected_bytes,
                              const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DumpError(DumpErrorKind::TruncatedPayload,
                        std::string(what) + " missing: " + path.string());
    }
    std::vector<char> buf(expected_bytes);
    in.read(buf.data(), static_cast<std::streamsize>(expected_bytes));
    if (static_cast<size_t>(in.gcount()) != expected_bytes) {
        throw DumpError(DumpErrorKind::TruncatedPayload,
                        std::string(what) + " truncated: " + path.string());
    }
    // Any trailing bytes mean the declared dimensions do not match the payload.
    char extra;
    if (in.read(&extra, 1)) {
        throw DumpError(DumpErrorKind::DimensionMismatch,
                        std::string(what) + " larger than declared dimensions: " +
                            path.string());
    }
    return buf;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void ChunkOutput::validate() const {
    if (frames.empty()) throw std::invalid_argument("chunk has no frames");
    if (overlap_with_prev < 0 || overlap_with_prev >= frame_count()) {
        throw std::invalid_argument("overlap_with_prev out of range");
    }
    if (height <= 0 || width <= 0 || embed_dim <= 0) {
        throw std::invalid_argument("nonpositive chunk dimensions");
    }
    const size_t px = pixels_per_frame();
    for (const FrameOutput& f : frames) {
        if (f.depth.size() != px || f.embedding.size() != px * embed_dim) {
            throw std::invalid_argument("frame buffer sizes disagree with H/W/D");
        }
        if (lang_dim > 0 && f.lang.size() != px * lang_dim) {
            throw std::invalid_argument("frame lang buffer disagrees with lang_dim");
        }
        if (f.intrinsics.fx <= 0.0 || f.intrinsics.fy <= 0.0) {
            throw std::invalid_argument("nonpositive focal length");
        }
    }
}

Eigen::Vector3d backproject_pixel(const CameraIntrinsics& k, int row, int col,
                                  double depth) {
    return {depth * (col - k.cx) / k.fx, depth * (row - k.cy) / k.fy, depth};
}

Eigen::Vector3d ChunkOutput::backproject(int f, int row, int col) const {
    const FrameOutput& fr = frames[f];
    const double d = fr.depth_at(row, col, width);
    return fr.pose.apply(backproject_pixel(fr.intrinsics, row, col, d));
}

void save_chunk(const ChunkOutput& chunk, const fs::path& dir,
                const std::vector<int32_t>* gt_ids) {
    chunk.validate();
    fs::create_directories(dir);
    const int n = chunk.frame_count();
    const size_t px = chunk.pixels_per_frame();

    std::ostringstream meta;
    meta << kMagic << "\n";
    meta << chunk.chunk_id << " " << n << " " << chunk.height << " "
         << chunk.width << " " << chunk.embed_dim << " "
         << chunk.overlap_with_prev << "\n";
    for (const FrameOutput& f : chunk.frames) {
        meta << format_double(f.intrinsics.fx) << " " << format_double(f.intrinsics.fy)
             << " " << format_double(f.intrinsics.cx) << " "
             << format_double(f.intrinsics.cy) << "\n";
    }
    for (const FrameOutput& f : chunk.frames) {
        meta << format_double(f.timestamp) << "\n";
    }
    if (chunk.lang_dim > 0) meta << "lang_dim " << chunk.lang_dim << "\n";
    {
        std::ofstream out(dir / "meta", std::ios::trunc);
        if (!out) throw DumpError(DumpErrorKind::Io, "cannot open meta");
        out << meta.str();
    }

    std::vector<double> poses(static_cast<size_t>(n) * 16);
    for (int i = 0; i < n; ++i) {
        Eigen::Matrix<double, 4, 4, Eigen::RowMajor> m =
            chunk.frames[i].pose.matrix();
        std::memcpy(poses.data() + i * 16, m.data(), 16 * sizeof(double));
    }
    write_binary(dir / "poses.bin", poses.data(), poses.size() * sizeof(double));

    std::vector<float> depth(static_cast<size_t>(n) * px);
    std::vector<float> embed(static_cast<size_t>(n) * px * chunk.embed_dim);
    for (int i = 0; i < n; ++i) {
        std::memcpy(depth.data() + i * px, chunk.frames[i].depth.data(),
                    px * sizeof(float));
        std::memcpy(embed.data() + i * px * chunk.embed_dim,
                    chunk.frames[i].embedding.data(),
                    px * chunk.embed_dim * sizeof(float));
    }
    write_binary(dir / "depth.bin", depth.data(), depth.size() * sizeof(float));
    write_binary(dir / "embed.bin", embed.data(), embed.size() * sizeof(float));

    if (chunk.lang_dim > 0) {
        std::vector<float> lang(static_cast<size_t>(n) * px * chunk.lang_dim);
        for (int i = 0; i < n; ++i) {
            std::memcpy(lang.data() + i * px * chunk.lang_dim,
                        chunk.frames[i].lang.data(),
                        px * chunk.lang_dim * sizeof(float));
        }
        write_binary(dir / "lang.bin", lang.data(), lang.size() * sizeof(float));
    }

    if (gt_ids) {
        if (gt_ids->size() != static_cast<size_t>(n) * px) {
            throw std::invalid_argument("gt_ids size disagrees with chunk");
        }
        write_binary(dir / "gt_ids.bin", gt_ids->data(),
                     gt_ids->size() * sizeof(int32_t));
    }
}

ChunkOutput load_chunk(const fs::path& dir) {
    std::ifstream meta(dir / "meta");
    if (!meta) {
        throw DumpError(DumpErrorKind::TruncatedPayload,
                        "meta missing: " + (dir / "meta").string());
    }
    std::string magic;
    if (!std::getline(meta, magic)) {
        throw DumpError(DumpErrorKind::TruncatedPayload, "meta file empty");
    }
    if (magic != kMagic) {
        throw DumpError(DumpErrorKind::MagicMismatch,
                        "bad magic '" + magic + "' (want " + kMagic + ")");
    }

    ChunkOutput chunk;
    int n = 0;
    if (!(meta >> chunk.chunk_id >> n >> chunk.height >> chunk.width >>
          chunk.embed_dim >> chunk.overlap_with_prev)) {
        throw DumpError(DumpErrorKind::TruncatedPayload, "meta header truncated");
    }
    if (n <= 0 || chunk.height <= 0 || chunk.width <= 0 || chunk.embed_dim <= 0 ||
        chunk.overlap_with_prev < 0 || chunk.overlap_with_prev >= n) {
        throw DumpError(DumpErrorKind::DimensionMismatch,
                        "meta header dimensions out of range");
    }
    chunk.frames.resize(n);
    for (FrameOutput& f : chunk.frames) {
        if (!(meta >> f.intrinsics.fx >> f.intrinsics.fy >> f.intrinsics.cx >>
              f.intrinsics.cy)) {
            throw DumpError(DumpErrorKind::TruncatedPayload, "meta intrinsics truncated");
        }
        if (f.intrinsics.fx <= 0.0 || f.intrinsics.fy <= 0.0) {
            throw DumpError(DumpErrorKind::DimensionMismatch, "nonpositive focal length");
        }
    }
    for (FrameOutput& f : chunk.frames) {
        if (!(meta >> f.timestamp)) {
            throw DumpError(DumpErrorKind::TruncatedPayload, "meta timestamps truncated");
        }
    }
    std::string key;
    if (meta >> key) {
        if (key != "lang_dim" || !(meta >> chunk.lang_dim) || chunk.lang_dim <= 0) {
            throw DumpError(DumpErrorKind::DimensionMismatch,
                            "unrecognized trailing meta field '" + key + "'");
        }
    }

    const size_t px = chunk.pixels_per_frame();
    const std::vector<char> poses =
        read_binary(dir / "poses.bin", static_cast<size_t>(n) * 16 * sizeof(double),
                    "poses.bin");
    const std::vector<char> depth =
        read_binary(dir / "depth.bin", static_cast<size_t>(n) * px * sizeof(float),
                    "depth.bin");
    const std::vector<char> embed = read_binary(
        dir / "embed.bin",
        static_cast<size_t>(n) * px * chunk.embed_dim * sizeof(float), "embed.bin");
    std::vector<char> lang;
    if (chunk.lang_dim > 0) {
        lang = read_binary(dir / "lang.bin",
                           static_cast<size_t>(n) * px * chunk.lang_dim * sizeof(float),
                           "lang.bin");
    }

    for (int i = 0; i < n; ++i) {
        FrameOutput& f = chunk.frames[i];
        Eigen::Matrix<double, 4, 4, Eigen::RowMajor> m;
        std::memcpy(m.data(), poses.data() + i * 16 * sizeof(double),
                    16 * sizeof(double));
        f.pose.rotation = m.topLeftCorner<3, 3>();
        f.pose.translation = m.topRightCorner<3, 1>();
        f.depth.resize(px);
        std::memcpy(f.depth.data(), depth.data() + i * px * sizeof(float),
                    px * sizeof(float));
        f.embedding.resize(px * chunk.embed_dim);
        std::memcpy(f.embedding.data(),
                    embed.data() + i * px * chunk.embed_dim * sizeof(float),
                    px * chunk.embed_dim * sizeof(float));
        if (chunk.lang_dim > 0) {
            f.lang.resize(px * chunk.lang_dim);
            std::memcpy(f.lang.data(),
                        lang.data() + i * px * chunk.lang_dim * sizeof(float),
                        px * chunk.lang_dim * sizeof(float));
        }
    }
    return chunk;
}

std::vector<int32_t> load_chunk_gt_ids(const fs::path& dir, const ChunkOutput& chunk) {
    const fs::path path = dir / "gt_ids.bin";
    if (!fs::exists(path)) return {};
    const size_t count = chunk.frames.size() * chunk.pixels_per_frame();
    const std::vector<char> raw =
        read_binary(path, count * sizeof(int32_t), "gt_ids.bin");
    std::vector<int32_t> ids(count);
    std::memcpy(ids.data(), raw.data(), raw.size());
    return ids;
}

}  // namespace inslam
