#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "errors.hpp"
#include "features.hpp"
#include "rng.hpp"

#include <filesystem>
#include <fstream>

using namespace gazediff;

namespace {

std::filesystem::path tmp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "gazediff_test_features";
    std::filesystem::create_directories(dir);
    return dir;
}

Tensor random_grid(std::vector<int64_t> shape, uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double & v : t.data) {
        v = static_cast<double>(static_cast<float>(rng.next_gaussian()));
    }
    return t;
}

} // namespace

TEST_CASE("feature file declares its shape and survives a round trip") {
    Tensor t = random_grid({37, 37, 8}, 1); // reference patch grid, narrow width for speed
    auto path = tmp_dir() / "grid.sdft";
    save_feature_file(path.string(), t);
    VisualFeatureMap m = load_visual_features(path.string());
    CHECK(m.h == 37);
    CHECK(m.w == 37);
    CHECK(m.dim == 8);
    CHECK(m.grid.data == t.data);
}

TEST_CASE("one-patch toy map loads as rank 3") {
    Tensor t = Tensor({1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
    auto path = tmp_dir() / "tiny.sdft";
    save_feature_file(path.string(), t);
    VisualFeatureMap m = load_visual_features(path.string());
    CHECK(m.patches() == 1);
    CHECK(m.flattened().rows() == 1);
    CHECK(m.flattened().cols() == 4);
}

TEST_CASE("truncated payload raises IntegrityError") {
    Tensor t = random_grid({4, 4, 4}, 2);
    auto path = tmp_dir() / "trunc.sdft";
    save_feature_file(path.string(), t);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    CHECK_THROWS_AS(load_feature_file(path.string()), IntegrityError);
}

TEST_CASE("corrupt header raises FormatError") {
    auto path = tmp_dir() / "header.sdft";
    {
        std::ofstream os(path, std::ios::binary);
        os << "JUNKJUNKJUNK";
    }
    CHECK_THROWS_AS(load_feature_file(path.string()), FormatError);
}

TEST_CASE("payload corruption is caught by the checksum") {
    Tensor t = random_grid({3, 3, 2}, 3);
    auto path = tmp_dir() / "crc.sdft";
    save_feature_file(path.string(), t);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-2, std::ios::end);
    char byte = 0;
    f.read(&byte, 1);
    f.seekp(-2, std::ios::end);
    byte = static_cast<char>(byte ^ 0x40);
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS_AS(load_feature_file(path.string()), IntegrityError);
}

TEST_CASE("task feature files must be rank 1") {
    Tensor t = random_grid({2, 2}, 4);
    auto path = tmp_dir() / "rank2.sdft";
    save_feature_file(path.string(), t);
    CHECK_THROWS_AS(load_task_features(path.string()), IntegrityError);
    CHECK_THROWS_AS(load_visual_features(path.string()), IntegrityError);
}

// ---------------------------------------------------------------------------
// toy encoder

TEST_CASE("toy_encode produces the expected grid shape") {
    Tensor image = Tensor::zeros({8, 8});
    VisualFeatureMap m = toy_encode(image, 4, 6, 0);
    CHECK(m.h == 2);
    CHECK(m.w == 2);
    CHECK(m.dim == 6);
}

TEST_CASE("toy_encode is deterministic per seed") {
    Tensor image = random_grid({16, 16}, 5);
    VisualFeatureMap a = toy_encode(image, 4, 8, 7);
    VisualFeatureMap b = toy_encode(image, 4, 8, 7);
    CHECK(a.grid.data == b.grid.data);
    VisualFeatureMap c = toy_encode(image, 4, 8, 8);
    CHECK(a.grid.data != c.grid.data);
}

TEST_CASE("toy_encode locality: a one-patch edit changes exactly one cell") {
    Tensor image = random_grid({12, 12}, 6);
    Tensor edited = image;
    // patch (1, 2) under patch size 4
    for (int r = 4; r < 8; ++r) {
        for (int c = 8; c < 12; ++c) {
            edited.at(r, c) += 1.0;
        }
    }
    VisualFeatureMap a = toy_encode(image, 4, 5, 9);
    VisualFeatureMap b = toy_encode(edited, 4, 5, 9);
    for (int gr = 0; gr < 3; ++gr) {
        for (int gc = 0; gc < 3; ++gc) {
            bool differs = false;
            for (int d = 0; d < 5; ++d) {
                size_t idx = (static_cast<size_t>(gr) * 3 + gc) * 5 + static_cast<size_t>(d);
                if (a.grid.data[idx] != b.grid.data[idx]) {
                    differs = true;
                }
            }
            CHECK(differs == (gr == 1 && gc == 2));
        }
    }
}

TEST_CASE("toy_encode resizes non-divisible images down to a patch multiple") {
    Tensor image = random_grid({10, 13}, 10);
    VisualFeatureMap m = toy_encode(image, 4, 3, 1);
    CHECK(m.h == 2);
    CHECK(m.w == 3);
}

// ---------------------------------------------------------------------------
// task features

TEST_CASE("task vectors are fixed per (string, seed) and differ across both") {
    TaskFeature a = derive_task_feature("laptop", 16, 0);
    TaskFeature b = derive_task_feature("laptop", 16, 0);
    CHECK(a.vec.data == b.vec.data);
    CHECK(a.vec.data != derive_task_feature("fork", 16, 0).vec.data);
    CHECK(a.vec.data != derive_task_feature("laptop", 16, 1).vec.data);
}

TEST_CASE("free viewing is the empty string's vector") {
    TaskFeature f = derive_task_feature("", 8, 0);
    CHECK(f.dim() == 8);
    CHECK(f.vec.all_finite());
    CHECK(f.vec.data != derive_task_feature("anything", 8, 0).vec.data);
}

TEST_CASE("feature source: files required for stimuli, derived for tasks") {
    auto dir = tmp_dir() / "source";
    std::filesystem::create_directories(dir);
    Tensor grid = random_grid({2, 2, 4}, 11);
    save_feature_file((dir / "stimA.sdft").string(), grid);

    FeatureSource source(dir.string(), 8, 0);
    const VisualFeatureMap & m = source.visual("stimA");
    CHECK(m.dim == 4);
    CHECK_THROWS_AS(source.visual("stimB"), MissingFeature);
    try {
        source.visual("stimB");
    } catch (const MissingFeature & e) {
        CHECK(std::string(e.what()).find("stimB") != std::string::npos);
    }

    const TaskFeature & derived = source.task("bottle");
    CHECK(derived.vec.data == derive_task_feature("bottle", 8, 0).vec.data);

    // a file on disk overrides the derived vector
    Tensor tv = Tensor({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    save_feature_file((dir / "keyboard.sdft").string(), tv);
    const TaskFeature & from_file = source.task("keyboard");
    CHECK(from_file.vec.data == tv.data);
}
