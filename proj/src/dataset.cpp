#include "memvad/dataset.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace memvad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp" || ext == ".tif" ||
           ext == ".tiff";
}

std::vector<int> read_labels(const fs::path& path, std::size_t expect) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open label file " + path.string());
    std::vector<int> labels;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const int v = std::stoi(line);
        if (v != 0 && v != 1)
            throw std::runtime_error("label file " + path.string() + " has non-binary entry");
        labels.push_back(v);
    }
    if (labels.size() != expect)
        throw std::runtime_error("label file " + path.string() + " has " +
                                 std::to_string(labels.size()) + " entries for " +
                                 std::to_string(expect) + " frames");
    return labels;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Tensor mat_to_tensor(const cv::Mat& img) {
    Tensor t(1, 3, img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.cols; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(0, c, y, x) = static_cast<float>(row[x][c]) / 127.5f - 1.0f;
    }
    return t;
}

}  // namespace

std::vector<VideoEntry> scan_videos(const fs::path& split_dir, bool require_labels) {
    if (!fs::is_directory(split_dir))
        throw std::runtime_error("dataset split directory missing: " + split_dir.string());
    std::vector<VideoEntry> videos;
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(split_dir))
        if (entry.is_directory()) subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    if (subdirs.empty())
        throw std::runtime_error("dataset split has no video directories: " + split_dir.string());

    for (const auto& dir : subdirs) {
        VideoEntry v;
        v.id = dir.filename().string();
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && is_image_file(entry.path()))
                v.frames.push_back(entry.path());
        std::sort(v.frames.begin(), v.frames.end());
        if (v.frames.empty())
            throw std::runtime_error("video directory has no frames: " + dir.string());
        if (require_labels) {
            const fs::path label_path = dir / "labels.txt";
            if (!fs::exists(label_path))
                throw std::runtime_error("test video missing labels.txt: " + dir.string());
            v.labels = read_labels(label_path, v.frames.size());
        }
        videos.push_back(std::move(v));
    }
    return videos;
}

std::vector<ClipRef> make_clips(const std::vector<VideoEntry>& videos, Task task) {
    std::vector<ClipRef> clips;
    const int context = task == Task::prediction ? 4 : 0;
    for (int vi = 0; vi < static_cast<int>(videos.size()); ++vi) {
        const int n = static_cast<int>(videos[vi].frames.size());
        for (int t = context; t < n; ++t) clips.push_back({vi, t});
    }
    return clips;
}

Tensor load_frame(const fs::path& path, int size) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("cannot read frame " + path.string());
    if (img.rows != size || img.cols != size)
        cv::resize(img, img, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    return mat_to_tensor(img);
}

FrameCache::FrameCache(int size, std::size_t budget_mb)
    : size_(size), budget_bytes_(budget_mb * 1024 * 1024) {}

Tensor FrameCache::get(const fs::path& path) {
    const std::string key = path.string();
    auto it = store_.find(key);
    if (it == store_.end()) {
        cv::Mat img = cv::imread(key, cv::IMREAD_COLOR);
        if (img.empty()) throw std::runtime_error("cannot read frame " + key);
        if (img.rows != size_ || img.cols != size_)
            cv::resize(img, img, cv::Size(size_, size_), 0, 0, cv::INTER_LINEAR);
        const std::size_t bytes = static_cast<std::size_t>(size_) * size_ * 3;
        if (used_bytes_ + bytes > budget_bytes_) {
            return mat_to_tensor(img);  // over budget: decode-only path
        }
        std::vector<std::uint8_t> packed(bytes);
        for (int y = 0; y < size_; ++y) {
            const cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
            std::memcpy(packed.data() + static_cast<std::size_t>(y) * size_ * 3, row,
                        static_cast<std::size_t>(size_) * 3);
        }
        used_bytes_ += bytes;
        it = store_.emplace(key, std::move(packed)).first;
    }
    const auto& packed = it->second;
    Tensor t(1, 3, size_, size_);
    for (int y = 0; y < size_; ++y)
        for (int x = 0; x < size_; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(0, c, y, x) =
                    static_cast<float>(packed[(static_cast<std::size_t>(y) * size_ + x) * 3 + c]) /
                        127.5f - 1.0f;
    return t;
}

Tensor salt_pepper(const Tensor& frame, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio < 1.0))
        throw std::invalid_argument("salt_pepper: ratio must be in [0, 1)");
    Tensor out = frame;
    const int hw = frame.h * frame.w;
    const int corrupt = static_cast<int>(std::floor(ratio * hw));
    if (corrupt == 0) return out;

    std::mt19937_64 rng(splitmix64(seed));
    std::vector<int> positions(hw);
    std::iota(positions.begin(), positions.end(), 0);
    for (int i = 0; i < corrupt; ++i) {  // partial Fisher-Yates
        std::uniform_int_distribution<int> pick(i, hw - 1);
        std::swap(positions[i], positions[pick(rng)]);
    }
    std::uniform_int_distribution<int> coin(0, 1);
    for (int s = 0; s < frame.n; ++s)
        for (int i = 0; i < corrupt; ++i) {
            const int y = positions[i] / frame.w, x = positions[i] % frame.w;
            const float value = coin(rng) ? 1.0f : -1.0f;
            for (int c = 0; c < frame.c; ++c) out.at(s, c, y, x) = value;
        }
    return out;
}

// ---- synthetic shapes -------------------------------------------------------

AnomalyClass anomaly_class_from_string(const std::string& s) {
    if (s == "normal") return AnomalyClass::normal;
    if (s == "spatial") return AnomalyClass::spatial;
    if (s == "temporal") return AnomalyClass::temporal;
    if (s == "spatio_temporal") return AnomalyClass::spatio_temporal;
    throw std::invalid_argument("unknown anomaly class: " + s);
}

std::string to_string(AnomalyClass c) {
    switch (c) {
        case AnomalyClass::normal: return "normal";
        case AnomalyClass::spatial: return "spatial";
        case AnomalyClass::temporal: return "temporal";
        case AnomalyClass::spatio_temporal: return "spatio_temporal";
    }
    throw std::logic_error("unreachable anomaly class");
}

ShapeTag shape_from_string(const std::string& s) {
    if (s == "circle") return ShapeTag::circle;
    if (s == "square") return ShapeTag::square;
    throw std::invalid_argument("unknown shape: " + s);
}

std::string to_string(ShapeTag s) { return s == ShapeTag::circle ? "circle" : "square"; }

void SynthScene::validate() const {
    if (canvas_h < 2 * radius + 2 || canvas_w < 2 * radius + 2)
        throw std::invalid_argument("SynthScene: canvas too small for the shape");
    const bool square = shape == ShapeTag::square;
    const bool fast = speed == 10;
    AnomalyClass expect = square ? (fast ? AnomalyClass::spatio_temporal : AnomalyClass::spatial)
                                 : (fast ? AnomalyClass::temporal : AnomalyClass::normal);
    if (speed != 5 && speed != 10)
        throw std::invalid_argument("SynthScene: speed must be 5 (normal) or 10 (fast)");
    if (anomaly_class != expect)
        throw std::invalid_argument("SynthScene: class " + to_string(anomaly_class) +
                                    " does not match shape/speed (" + to_string(shape) + ", " +
                                    std::to_string(speed) + ")");
}

SynthScene scene_for_class(AnomalyClass c, int canvas, int radius) {
    SynthScene s;
    s.canvas_h = s.canvas_w = canvas;
    s.radius = radius;
    s.anomaly_class = c;
    s.shape = (c == AnomalyClass::spatial || c == AnomalyClass::spatio_temporal)
                  ? ShapeTag::square
                  : ShapeTag::circle;
    s.speed = (c == AnomalyClass::temporal || c == AnomalyClass::spatio_temporal) ? 10 : 5;
    s.validate();
    return s;
}

bool synth_pixel_on(const SynthScene& scene, int center_x, int center_y, int x, int y) {
    // torus along x so the trajectory wraps; y never wraps (start keeps it inside)
    int dx = std::abs(x - center_x);
    dx = std::min(dx, scene.canvas_w - dx);
    const int dy = std::abs(y - center_y);
    if (scene.shape == ShapeTag::square) return dx <= scene.radius && dy <= scene.radius;
    return dx * dx + dy * dy <= scene.radius * scene.radius;
}

SynthClip synth_generate(const SynthScene& scene_in, int frame_count, std::uint64_t seed) {
    SynthScene scene = scene_in;
    if (frame_count < 1) throw std::invalid_argument("synth_generate: frame_count must be >= 1");
    std::mt19937_64 rng(splitmix64(seed));
    if (scene.start_x < 0) {
        std::uniform_int_distribution<int> dx(0, scene.canvas_w - 1);
        scene.start_x = dx(rng);
    }
    if (scene.start_y < 0) {
        std::uniform_int_distribution<int> dy(scene.radius, scene.canvas_h - 1 - scene.radius);
        scene.start_y = dy(rng);
    }
    if (scene.direction == 0) {
        std::uniform_int_distribution<int> dd(0, 1);
        scene.direction = dd(rng) ? 1 : -1;
    }
    scene.validate();
    if (scene.start_y < scene.radius || scene.start_y > scene.canvas_h - 1 - scene.radius)
        throw std::invalid_argument("synth_generate: shape leaves the canvas vertically");

    SynthClip clip;
    clip.scene = scene;
    const int label = scene.anomaly_class == AnomalyClass::normal ? 0 : 1;
    for (int t = 0; t < frame_count; ++t) {
        long long raw = scene.start_x + static_cast<long long>(t) * scene.speed * scene.direction;
        const int cx = static_cast<int>(((raw % scene.canvas_w) + scene.canvas_w) % scene.canvas_w);
        Tensor frame(1, 3, scene.canvas_h, scene.canvas_w);
        for (int y = 0; y < scene.canvas_h; ++y)
            for (int x = 0; x < scene.canvas_w; ++x) {
                const float v = synth_pixel_on(scene, cx, scene.start_y, x, y) ? 1.0f : -1.0f;
                for (int c = 0; c < 3; ++c) frame.at(0, c, y, x) = v;
            }
        clip.frames.push_back(std::move(frame));
        clip.labels.push_back(label);
    }
    return clip;
}

namespace {

void write_clip(const fs::path& video_dir, const SynthClip& clip, bool with_labels) {
    fs::create_directories(video_dir);
    char name[32];
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
        const Tensor& f = clip.frames[t];
        cv::Mat img(f.h, f.w, CV_8UC3);
        for (int y = 0; y < f.h; ++y) {
            cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
            for (int x = 0; x < f.w; ++x)
                for (int c = 0; c < 3; ++c)
                    row[x][c] = static_cast<std::uint8_t>(
                        std::clamp((f.at(0, c, y, x) + 1.0f) * 127.5f, 0.0f, 255.0f));
        }
        std::snprintf(name, sizeof(name), "%06zu.jpg", t);
        if (!cv::imwrite((video_dir / name).string(), img, {cv::IMWRITE_JPEG_QUALITY, 100}))
            throw std::runtime_error("failed to write " + (video_dir / name).string());
    }
    if (with_labels) {
        std::ofstream lf(video_dir / "labels.txt", std::ios::trunc);
        for (int l : clip.labels) lf << l << '\n';
    }
}

json scene_manifest_entry(const std::string& split, const std::string& video_id,
                          const SynthClip& clip) {
    json j;
    j["split"] = split;
    j["video_id"] = video_id;
    j["shape"] = to_string(clip.scene.shape);
    j["radius"] = clip.scene.radius;
    j["speed"] = clip.scene.speed;
    j["class"] = to_string(clip.scene.anomaly_class);
    j["start"] = {clip.scene.start_x, clip.scene.start_y};
    j["direction"] = clip.scene.direction;
    j["canvas"] = {clip.scene.canvas_h, clip.scene.canvas_w};
    j["frames"] = clip.frames.size();
    return j;
}

}  // namespace

void write_synth_dataset(const fs::path& root, const SynthDatasetSpec& spec) {
    if (spec.train_videos < 1 || spec.test_videos_per_class < 1 || spec.frames_per_video < 1)
        throw std::invalid_argument("write_synth_dataset: counts must be >= 1");
    fs::create_directories(root / "train");
    fs::create_directories(root / "test");
    json manifest = json::array();
    std::uint64_t scene_ordinal = 0;
    char id[64];

    for (int i = 0; i < spec.train_videos; ++i) {
        SynthScene scene = scene_for_class(AnomalyClass::normal, spec.canvas, spec.radius);
        SynthClip clip =
            synth_generate(scene, spec.frames_per_video, spec.seed * 1000003ULL + scene_ordinal++);
        std::snprintf(id, sizeof(id), "normal_v%03d", i);
        write_clip(root / "train" / id, clip, false);
        manifest.push_back(scene_manifest_entry("train", id, clip));
    }
    for (AnomalyClass c : spec.test_classes)
        for (int i = 0; i < spec.test_videos_per_class; ++i) {
            SynthScene scene = scene_for_class(c, spec.canvas, spec.radius);
            SynthClip clip = synth_generate(scene, spec.frames_per_video,
                                            spec.seed * 1000003ULL + scene_ordinal++);
            std::snprintf(id, sizeof(id), "%s_v%03d", to_string(c).c_str(), i);
            write_clip(root / "test" / id, clip, true);
            manifest.push_back(scene_manifest_entry("test", id, clip));
        }

    std::ofstream mf(root / "scene.json", std::ios::trunc);
    mf << manifest.dump(2) << '\n';
    if (!mf) throw std::runtime_error("failed to write scene manifest under " + root.string());
}

int extract_frames(const fs::path& video, const fs::path& out_dir) {
    cv::VideoCapture cap(video.string());
    if (!cap.isOpened())
        throw std::runtime_error("extract_frames: cannot open video " + video.string());
    fs::create_directories(out_dir);
    cv::Mat frame;
    int count = 0;
    char name[32];
    while (cap.read(frame)) {
        std::snprintf(name, sizeof(name), "%06d.jpg", count);
        if (!cv::imwrite((out_dir / name).string(), frame, {cv::IMWRITE_JPEG_QUALITY, 100}))
            throw std::runtime_error("extract_frames: failed to write frame " +
                                     std::to_string(count));
        ++count;
    }
    if (count == 0)
        throw std::runtime_error("extract_frames: no decodable frames in " + video.string());
    return count;
}

}  // namespace memvad
