#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mapunetr/patchwork.hpp"
#include "mapunetr/rng.hpp"

using namespace mapunetr;

namespace {

Tensor<double> random_image(size_t h, size_t w, size_t c, Rng& rng) {
    std::vector<double> data(h * w * c);
    for (auto& v : data) v = rng.uniform();
    return Tensor<double>::from({h, w, c}, std::move(data));
}

}  // namespace

TEST_CASE("patchify token counts and layout") {
    Rng rng(1);
    auto big = random_image(256, 256, 3, rng);
    auto seq = patchify(big, 16);
    CHECK(seq.n_patches == 256);
    CHECK(seq.tokens.shape() == Shape{256, 768});
    CHECK(seq.grid_rows == 16);
    CHECK(seq.grid_cols == 16);
    CHECK(seq.n_patches * 16 * 16 == 256 * 256);

    auto one = random_image(16, 16, 1, rng);
    auto s1 = patchify(one, 16);
    CHECK(s1.n_patches == 1);
    CHECK(s1.tokens.data() == one.data());

    // 4x4 single-channel image, values 0..15 row-major, P=2
    std::vector<double> vals(16);
    for (size_t i = 0; i < 16; ++i) vals[i] = static_cast<double>(i);
    auto img = Tensor<double>::from({4, 4, 1}, std::move(vals));
    auto s2 = patchify(img, 2);
    REQUIRE(s2.tokens.shape() == Shape{4, 4});
    CHECK(std::vector<double>(s2.tokens.data().begin(), s2.tokens.data().begin() + 4) ==
          std::vector<double>{0, 1, 4, 5});

    CHECK_THROWS_AS(patchify(img, 3), ShapeError);
}

TEST_CASE("patchify/unpatchify roundtrip is bitwise") {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        size_t p = 1 + rng.uniform_int(4);           // 1..4
        size_t h = p * (1 + rng.uniform_int(5));     // multiples of p
        size_t w = p * (1 + rng.uniform_int(5));
        size_t c = 1 + rng.uniform_int(3);
        auto img = random_image(h, w, c, rng);
        auto seq = patchify(img, p);
        CHECK(seq.n_patches * p * p == h * w);
        auto back = unpatchify(seq, h, w);
        CHECK(back.data() == img.data());
        CHECK(back.shape() == img.shape());
    }
}

TEST_CASE("unpatchify layout and errors") {
    Rng rng(3);
    auto img = random_image(4, 4, 1, rng);
    auto seq = patchify(img, 2);
    // token 1 occupies the top-right 2x2 block
    auto back = unpatchify(seq, 4, 4);
    CHECK(back.data()[2] == seq.tokens.data()[1 * 4 + 0]);
    CHECK(back.data()[3] == seq.tokens.data()[1 * 4 + 1]);
    CHECK(back.data()[6] == seq.tokens.data()[1 * 4 + 2]);

    CHECK_THROWS_AS(unpatchify(seq, 8, 8), ShapeError);
}

TEST_CASE("patchify gradient flows through tokens") {
    Rng rng(4);
    auto img = random_image(4, 4, 1, rng);
    img.set_requires_grad(true);
    auto seq = patchify(img, 2);
    backward(sum_all(mul(seq.tokens, seq.tokens)));
    for (size_t i = 0; i < img.numel(); ++i)
        CHECK(img.grad()[i] == doctest::Approx(2.0 * img.data()[i]));
}

TEST_CASE("embed_tokens") {
    // W_E = 0 -> output equals pos
    auto raw = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto w0 = Tensor<double>(Shape{3, 2}, 0.0);
    auto pos = Tensor<double>::from({2, 2}, {9, 8, 7, 6});
    CHECK(embed_tokens(raw, w0, pos).data() == pos.data());

    // single token hand product
    auto tok = Tensor<double>::from({1, 2}, {1, 0});
    auto we = Tensor<double>::from({2, 2}, {2, 3, 5, 7});
    auto zero_pos = Tensor<double>(Shape{1, 2}, 0.0);
    CHECK(embed_tokens(tok, we, zero_pos).data() == std::vector<double>{2, 3});

    CHECK_THROWS_AS(embed_tokens(raw, we, pos), ShapeError);
}
