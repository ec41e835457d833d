#pragma once

#include "memvad/model.hpp"
#include "memvad/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace memvad {

// ---- frame-folder datasets --------------------------------------------------
// Layout: root/{train|test}/<video_id>/<zero-padded>.jpg, with a labels.txt
// (one 0/1 per line, one per frame) next to each test video's frames.

struct VideoEntry {
    std::string id;
    std::vector<std::filesystem::path> frames;
    std::vector<int> labels;  // empty when labels were not required
};

std::vector<VideoEntry> scan_videos(const std::filesystem::path& split_dir, bool require_labels);

// One sample: `target` indexes the scored frame. Prediction clips read the
// four preceding frames as input; reconstruction clips read the frame itself.
struct ClipRef {
    int video = 0;
    int target = 0;
};

// Deterministic order (videos by id, frames ascending); prediction windows
// never cross a video boundary.
std::vector<ClipRef> make_clips(const std::vector<VideoEntry>& videos, Task task);

// Frame loaded as 1 x 3 x size x size in [-1, 1] (resized when needed).
Tensor load_frame(const std::filesystem::path& path, int size);

// Byte-frame cache so training epochs do not re-decode JPEGs. Holds resized
// 8-bit images up to `budget_mb`, then falls through to disk.
class FrameCache {
public:
    explicit FrameCache(int size, std::size_t budget_mb = 512);
    Tensor get(const std::filesystem::path& path);

private:
    int size_;
    std::size_t budget_bytes_;
    std::size_t used_bytes_ = 0;
    std::map<std::string, std::vector<std::uint8_t>> store_;
};

// Exactly floor(ratio * H * W) distinct pixel positions forced to -1 (pepper)
// or +1 (salt) across all channels, an even coin per position. Deterministic
// in `seed`.
Tensor salt_pepper(const Tensor& frame, double ratio, std::uint64_t seed);

// ---- synthetic moving shapes ------------------------------------------------

enum class AnomalyClass { normal, spatial, temporal, spatio_temporal };
enum class ShapeTag { circle, square };

AnomalyClass anomaly_class_from_string(const std::string& s);
std::string to_string(AnomalyClass c);
ShapeTag shape_from_string(const std::string& s);
std::string to_string(ShapeTag s);

struct SynthScene {
    ShapeTag shape = ShapeTag::circle;
    int radius = 10;       // circle radius or square half-side, pixels
    int speed = 5;         // pixels per frame
    int canvas_h = 64;
    int canvas_w = 64;
    int start_x = -1;      // -1: sample from seed
    int start_y = -1;
    int direction = 0;     // +1 or -1 along x; 0: sample from seed
    AnomalyClass anomaly_class = AnomalyClass::normal;

    void validate() const;  // class <-> (shape, speed) mapping, canvas fit
};

// Builds the scene the class dictates: circle/square, speed 5/10.
SynthScene scene_for_class(AnomalyClass c, int canvas, int radius = 10);

struct SynthClip {
    std::vector<Tensor> frames;  // each 1 x 3 x H x W
    std::vector<int> labels;     // all 0 for normal scenes, all 1 otherwise
    SynthScene scene;            // with sampled start/direction filled in
};

// Frame t draws the shape centered at start + t*speed*direction along x,
// wrapping at the canvas edge. Unset start/direction are sampled from seed.
SynthClip synth_generate(const SynthScene& scene, int frame_count, std::uint64_t seed);

// Foreground predicate used by the renderer (torus metric along x).
bool synth_pixel_on(const SynthScene& scene, int center_x, int center_y, int x, int y);

struct SynthDatasetSpec {
    int canvas = 64;
    int radius = 10;
    int frames_per_video = 24;
    int train_videos = 12;                // all normal
    int test_videos_per_class = 4;        // 25% each class by default
    std::vector<AnomalyClass> test_classes = {AnomalyClass::normal, AnomalyClass::spatial,
                                              AnomalyClass::temporal,
                                              AnomalyClass::spatio_temporal};
    std::uint64_t seed = 1;
};

// Writes root/train, root/test (with labels.txt) and a root/scene.json
// manifest describing every scene.
void write_synth_dataset(const std::filesystem::path& root, const SynthDatasetSpec& spec);

// ---- video ingestion ----------------------------------------------------------

// Splits a video container into %06d.jpg frames (quality 100); returns the
// frame count. Re-running overwrites the same names.
int extract_frames(const std::filesystem::path& video, const std::filesystem::path& out_dir);

}  // namespace memvad
