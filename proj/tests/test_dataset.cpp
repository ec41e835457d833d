#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "memvad/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/videoio.hpp>

#include <filesystem>
#include <fstream>
#include <random>

using namespace memvad;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("memvad_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_dummy_video_dir(const fs::path& dir, int frames, bool labels, int label_value = 0) {
    fs::create_directories(dir);
    cv::Mat img(16, 16, CV_8UC3, cv::Scalar(10, 20, 30));
    char name[16];
    for (int i = 0; i < frames; ++i) {
        std::snprintf(name, sizeof(name), "%06d.jpg", i);
        cv::imwrite((dir / name).string(), img);
    }
    if (labels) {
        std::ofstream f(dir / "labels.txt");
        for (int i = 0; i < frames; ++i) f << label_value << "\n";
    }
}

}  // namespace

TEST_CASE("make_clips: sliding-window arithmetic per task") {
    std::vector<VideoEntry> videos(2);
    videos[0].frames.resize(10);
    videos[1].frames.resize(10);

    auto pred = make_clips(videos, Task::prediction);
    CHECK(pred.size() == 12);  // (10-4) per video, no straddling
    for (const auto& clip : pred) CHECK(clip.target >= 4);

    auto recon = make_clips(videos, Task::reconstruction);
    CHECK(recon.size() == 20);

    std::vector<VideoEntry> single(1);
    single[0].frames.resize(7);
    CHECK(make_clips(single, Task::prediction).size() == 3);
    CHECK(make_clips(single, Task::denoise_reconstruction).size() == 7);
}

TEST_CASE("scan_videos: layout errors") {
    TempDir tmp("scan");
    CHECK_THROWS_AS(scan_videos(tmp.path / "missing", false), std::runtime_error);

    fs::create_directories(tmp.path / "empty_split");
    CHECK_THROWS_AS(scan_videos(tmp.path / "empty_split", false), std::runtime_error);

    write_dummy_video_dir(tmp.path / "test" / "v000", 5, false);
    CHECK_THROWS_AS(scan_videos(tmp.path / "test", true), std::runtime_error);  // labels missing
    fs::create_directories(tmp.path / "test" / "v001");
    CHECK_THROWS_AS(scan_videos(tmp.path / "test", false), std::runtime_error);  // empty video
}

TEST_CASE("scan_videos: deterministic ordering and label parsing") {
    TempDir tmp("scan2");
    write_dummy_video_dir(tmp.path / "test" / "v002", 4, true, 1);
    write_dummy_video_dir(tmp.path / "test" / "v000", 3, true, 0);
    write_dummy_video_dir(tmp.path / "test" / "v001", 5, true, 0);
    auto videos = scan_videos(tmp.path / "test", true);
    REQUIRE(videos.size() == 3);
    CHECK(videos[0].id == "v000");
    CHECK(videos[1].id == "v001");
    CHECK(videos[2].id == "v002");
    CHECK(videos[2].labels == std::vector<int>(4, 1));
    CHECK(videos[0].frames.size() == 3);
}

TEST_CASE("salt_pepper: exact corruption budget and determinism") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-0.5f, 0.5f);
    Tensor frame(1, 3, 64, 64);
    for (auto& v : frame.data) v = u(rng);

    CHECK(salt_pepper(frame, 0.0, 1).data == frame.data);

    Tensor noisy = salt_pepper(frame, 0.25, 7);
    int corrupted = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            bool changed = false;
            for (int c = 0; c < 3; ++c)
                if (noisy.at(0, c, y, x) != frame.at(0, c, y, x)) changed = true;
            if (!changed) continue;
            ++corrupted;
            const float v = noisy.at(0, 0, y, x);
            CHECK((v == 1.0f || v == -1.0f));
            CHECK(noisy.at(0, 1, y, x) == v);  // same value across channels
            CHECK(noisy.at(0, 2, y, x) == v);
        }
    CHECK(corrupted == 1024);  // floor(0.25 * 64 * 64); original values never hit +-1 here

    CHECK(salt_pepper(frame, 0.25, 7).data == noisy.data);      // same seed, same corruption
    CHECK(salt_pepper(frame, 0.25, 8).data != noisy.data);      // different seed differs
    CHECK_THROWS_AS(salt_pepper(frame, 1.0, 1), std::invalid_argument);

    // budget exactness across ratios and sizes
    for (double ratio : {0.1, 0.33, 0.5}) {
        for (int side : {16, 24}) {
            Tensor f2(1, 3, side, side);
            for (auto& v : f2.data) v = 0.123f;
            Tensor n2 = salt_pepper(f2, ratio, 11);
            int count = 0;
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x)
                    if (n2.at(0, 0, y, x) != 0.123f) ++count;
            CHECK(count == static_cast<int>(ratio * side * side));
        }
    }
}

TEST_CASE("synth scenes: class mapping and motion arithmetic") {
    SynthScene normal = scene_for_class(AnomalyClass::normal, 64);
    CHECK(normal.shape == ShapeTag::circle);
    CHECK(normal.speed == 5);
    SynthScene temporal = scene_for_class(AnomalyClass::temporal, 64);
    CHECK(temporal.shape == ShapeTag::circle);
    CHECK(temporal.speed == 10);
    SynthScene spatial = scene_for_class(AnomalyClass::spatial, 64);
    CHECK(spatial.shape == ShapeTag::square);
    CHECK(spatial.speed == 5);
    SynthScene st = scene_for_class(AnomalyClass::spatio_temporal, 64);
    CHECK(st.shape == ShapeTag::square);
    CHECK(st.speed == 10);

    SynthScene bad = normal;
    bad.shape = ShapeTag::square;  // square at speed 5 is the spatial class
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    SynthScene cramped = normal;
    cramped.canvas_h = cramped.canvas_w = 12;
    CHECK_THROWS_AS(cramped.validate(), std::invalid_argument);
}

TEST_CASE("synth_generate: trajectory, rasterization oracle, labels") {
    SynthScene scene = scene_for_class(AnomalyClass::normal, 64);
    scene.start_x = 10;
    scene.start_y = 32;
    scene.direction = 1;
    SynthClip clip = synth_generate(scene, 4, 1);
    CHECK(clip.labels == std::vector<int>(4, 0));

    // t=3: center at 10 + 3*5 = 25, all pixels match the brute-force predicate
    const int cx = 25, cy = 32, r = 10;
    const Tensor& f3 = clip.frames[3];
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            // mid-canvas: torus metric equals the plain one
            const bool on = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
            CHECK(f3.at(0, 0, y, x) == (on ? 1.0f : -1.0f));
        }

    SynthScene fast = scene_for_class(AnomalyClass::temporal, 64);
    fast.start_x = 10;
    fast.start_y = 32;
    fast.direction = 1;
    SynthClip fc = synth_generate(fast, 4, 1);
    CHECK(fc.labels == std::vector<int>(4, 1));
    // t=3: center at 10 + 3*10 = 40
    CHECK(fc.frames[3].at(0, 0, 32, 40) == 1.0f);
    CHECK(fc.frames[3].at(0, 0, 32, 40 + 11) == -1.0f);

    // motion linearity: frame t equals frame t+1 shifted back by the speed
    for (int t = 0; t + 1 < 4; ++t)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const int xs = ((x + fast.speed) % 64 + 64) % 64;
                CHECK(fc.frames[t].at(0, 0, y, x) == fc.frames[t + 1].at(0, 0, y, xs));
            }
}

TEST_CASE("synth_generate: square rasterization and wrap-around") {
    SynthScene scene = scene_for_class(AnomalyClass::spatial, 64);
    scene.start_x = 60;  // wraps: at t=2 center is (60+10) mod 64 = 6
    scene.start_y = 20;
    scene.direction = 1;
    SynthClip clip = synth_generate(scene, 3, 1);
    const Tensor& f = clip.frames[2];
    CHECK(f.at(0, 0, 20, 6) == 1.0f);
    CHECK(f.at(0, 0, 20, 16) == 1.0f);   // |16-6| = 10 <= half-side
    CHECK(f.at(0, 0, 20, 60) == 1.0f);   // wraps: torus distance 10
    CHECK(f.at(0, 0, 20, 17) == -1.0f);
    CHECK(f.at(0, 0, 31, 6) == -1.0f);   // dy = 11 > half-side
    CHECK(f.at(0, 0, 30, 6) == 1.0f);
}

TEST_CASE("synth_generate: seeded sampling is deterministic and in bounds") {
    SynthScene scene = scene_for_class(AnomalyClass::normal, 64);
    SynthClip a = synth_generate(scene, 6, 99);
    SynthClip b = synth_generate(scene, 6, 99);
    CHECK(a.scene.start_x == b.scene.start_x);
    CHECK(a.scene.start_y == b.scene.start_y);
    CHECK(a.scene.direction == b.scene.direction);
    for (std::size_t t = 0; t < a.frames.size(); ++t)
        CHECK(a.frames[t].data == b.frames[t].data);
    CHECK(a.scene.start_y >= scene.radius);
    CHECK(a.scene.start_y <= 63 - scene.radius);
    CHECK((a.scene.direction == 1 || a.scene.direction == -1));
}

TEST_CASE("write_synth_dataset: layout, labels, manifest, loader round-trip") {
    TempDir tmp("synthds");
    SynthDatasetSpec spec;
    spec.canvas = 32;
    spec.frames_per_video = 8;
    spec.train_videos = 2;
    spec.test_videos_per_class = 1;
    spec.seed = 5;
    write_synth_dataset(tmp.path, spec);

    CHECK(fs::exists(tmp.path / "scene.json"));
    auto train = scan_videos(tmp.path / "train", false);
    CHECK(train.size() == 2);
    auto test = scan_videos(tmp.path / "test", true);
    REQUIRE(test.size() == 4);
    for (const auto& video : test) {
        CHECK(video.frames.size() == 8);
        const bool anomalous = video.id.rfind("normal", 0) != 0;
        for (int l : video.labels) CHECK(l == (anomalous ? 1 : 0));
        CHECK(video.frames[0].filename().string() == "000000.jpg");
    }

    // same spec + seed reproduces identical bytes
    TempDir tmp2("synthds2");
    write_synth_dataset(tmp2.path, spec);
    CHECK(file_bytes(tmp.path / "test" / test[0].id / "000003.jpg") ==
          file_bytes(tmp2.path / "test" / test[0].id / "000003.jpg"));
    CHECK(file_bytes(tmp.path / "scene.json") == file_bytes(tmp2.path / "scene.json"));
}

TEST_CASE("load_frame and FrameCache agree; range is [-1, 1]") {
    TempDir tmp("frames");
    write_dummy_video_dir(tmp.path / "v", 1, false);
    const fs::path frame = tmp.path / "v" / "000000.jpg";
    Tensor a = load_frame(frame, 16);
    CHECK(a.c == 3);
    CHECK(a.h == 16);
    for (float v : a.data) CHECK((v >= -1.0f && v <= 1.0f));

    FrameCache cache(16, 64);
    CHECK(cache.get(frame).data == a.data);
    CHECK(cache.get(frame).data == a.data);  // cached path matches too

    Tensor resized = load_frame(frame, 32);
    CHECK(resized.h == 32);
}

TEST_CASE("extract_frames: count contract and idempotence") {
    TempDir tmp("extract");
    const fs::path video_path = tmp.path / "clip.avi";
    {
        cv::VideoWriter writer(video_path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'),
                               10.0, cv::Size(32, 32));
        if (!writer.isOpened()) {
            MESSAGE("VideoWriter backend unavailable; skipping extract_frames test");
            return;
        }
        cv::Mat img(32, 32, CV_8UC3);
        for (int i = 0; i < 20; ++i) {
            img.setTo(cv::Scalar(i * 10, 0, 255 - i * 10));
            writer.write(img);
        }
    }
    const fs::path out = tmp.path / "frames";
    CHECK(extract_frames(video_path, out) == 20);
    CHECK(fs::exists(out / "000000.jpg"));
    CHECK(fs::exists(out / "000019.jpg"));

    CHECK(extract_frames(video_path, out) == 20);  // idempotent re-run
    int files = 0;
    for (const auto& e : fs::directory_iterator(out))
        if (e.path().extension() == ".jpg") ++files;
    CHECK(files == 20);

    CHECK_THROWS_AS(extract_frames(tmp.path / "missing.avi", out), std::runtime_error);
}
