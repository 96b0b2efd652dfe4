#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "checkpoint.hpp"
#include "errors.hpp"
#include "optim.hpp"
#include "rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace gazediff;

TEST_CASE("zero gradient and zero weight decay leave the value unchanged") {
    ParamStore store;
    Parameter & p = store.create("w", Tensor::matrix(1, 2, {1.5, -0.25}));
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    adamw_step(store, cfg, 1);
    CHECK(p.value.data[0] == doctest::Approx(1.5));
    CHECK(p.value.data[1] == doctest::Approx(-0.25));
}

TEST_CASE("single AdamW step matches the hand-evaluated update") {
    // p=1, g=1, lr=0.1, betas=(0.9, 0.999), eps=1e-8, wd=0, step=1.
    // alpha_1 = lr * sqrt(1 - b2) / (1 - b1); update = alpha_1 * m / (sqrt(v) + eps)
    ParamStore store;
    Parameter & p = store.create("w", Tensor::matrix(1, 1, {1.0}));
    p.grad.data[0] = 1.0;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    adamw_step(store, cfg, 1);

    const double m = 0.1, v = 0.001;
    const double alpha = 0.1 * std::sqrt(1.0 - 0.999) / (1.0 - 0.9);
    const double expect = 1.0 - alpha * m / (std::sqrt(v) + 1e-8);
    CHECK(p.value.data[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(p.value.data[0] == doctest::Approx(0.9000000316).epsilon(1e-9));
}

TEST_CASE("weight decay is decoupled: applied to the value before the update") {
    ParamStore store;
    Parameter & p = store.create("w", Tensor::matrix(1, 1, {2.0}));
    p.grad.data[0] = 0.0;
    AdamWConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.1;
    adamw_step(store, cfg, 1);
    // gradient is zero, so the whole change is the multiplicative decay
    CHECK(p.value.data[0] == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-15));
}

TEST_CASE("moment trajectory matches a reference loop") {
    ParamStore store;
    Parameter & p = store.create("w", Tensor::matrix(1, 1, {0.5}));
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.02;

    double ref = 0.5, m = 0.0, v = 0.0;
    const double grads[5] = {0.3, -0.2, 0.7, 0.05, -0.4};
    for (int step = 1; step <= 5; ++step) {
        double g = grads[step - 1];
        p.grad.data[0] = g;
        adamw_step(store, cfg, step);

        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double alpha = cfg.lr * std::sqrt(1.0 - std::pow(0.999, step)) /
                       (1.0 - std::pow(0.9, step));
        ref = ref * (1.0 - cfg.lr * cfg.weight_decay) - alpha * m / (std::sqrt(v) + 1e-8);
        CHECK(p.value.data[0] == doctest::Approx(ref).epsilon(1e-14));
    }
}

TEST_CASE("clip_grad_norm rescales only above the bound") {
    ParamStore store;
    Parameter & p = store.create("w", Tensor::zeros({2}));
    p.grad.data = {3.0, 4.0}; // norm 5
    double norm = clip_grad_norm(store, 10.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(p.grad.data[0] == doctest::Approx(3.0));

    norm = clip_grad_norm(store, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(std::hypot(p.grad.data[0], p.grad.data[1]) == doctest::Approx(1.0));
}

// ---------------------------------------------------------------------------
// SDKP checkpoints

namespace {

std::filesystem::path tmp_file(const char * name) {
    auto dir = std::filesystem::temp_directory_path() / "gazediff_test_optim";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("checkpoint round trip is bit-exact for f32 payloads") {
    Rng rng(21);
    Checkpoint ckpt;
    ckpt.config["arch"] = "test";
    ckpt.set_int("step", 12345);
    ckpt.set_double("lr", 1e-4);
    Tensor a = Tensor::zeros({3, 4});
    Tensor b = Tensor::zeros({7});
    for (double & v : a.data) {
        v = static_cast<double>(static_cast<float>(rng.next_gaussian()));
    }
    for (double & v : b.data) {
        v = static_cast<double>(static_cast<float>(rng.next_gaussian()));
    }
    ckpt.tensors.emplace_back("a", a);
    ckpt.tensors.emplace_back("b", b);

    auto p1 = tmp_file("roundtrip1.sdkp");
    auto p2 = tmp_file("roundtrip2.sdkp");
    save_checkpoint(p1.string(), ckpt);
    Checkpoint loaded = load_checkpoint(p1.string());
    CHECK(loaded.config == ckpt.config);
    REQUIRE(loaded.tensors.size() == 2);
    CHECK(loaded.tensors[0].second.data == a.data);
    CHECK(loaded.tensors[1].second.data == b.data);

    // byte-for-byte stability through a save/load/save cycle
    save_checkpoint(p2.string(), loaded);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("corrupt magic and truncation are detected") {
    auto p = tmp_file("corrupt.sdkp");
    {
        std::ofstream os(p, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(p.string()), FormatError);

    Checkpoint ckpt;
    ckpt.tensors.emplace_back("t", Tensor::zeros({8}));
    save_checkpoint(p.string(), ckpt);
    auto size = std::filesystem::file_size(p);
    std::filesystem::resize_file(p, size - 5);
    CHECK_THROWS_AS(load_checkpoint(p.string()), IntegrityError);
}

TEST_CASE("round_to_f32 makes values exactly representable") {
    ParamStore store;
    Parameter & p = store.create("w", Tensor::matrix(1, 1, {0.1234567890123456789}));
    p.m.data[0] = 1.0 / 3.0;
    store.round_to_f32();
    CHECK(p.value.data[0] == static_cast<double>(static_cast<float>(p.value.data[0])));
    CHECK(p.m.data[0] == static_cast<double>(static_cast<float>(p.m.data[0])));
}
