#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mapunetr/attnmap.hpp"
#include "mapunetr/rng.hpp"

using namespace mapunetr;

namespace {

AttentionRecord make_record(size_t heads, size_t n) {
    AttentionRecord rec;
    rec.heads = heads;
    rec.n = n;
    rec.weights.assign(heads * n * n, 0.0);
    return rec;
}

AttentionRecord random_record(size_t heads, size_t n, Rng& rng) {
    AttentionRecord rec = make_record(heads, n);
    for (size_t h = 0; h < heads; ++h)
        for (size_t i = 0; i < n; ++i) {
            double sum = 0;
            for (size_t j = 0; j < n; ++j) {
                double v = rng.uniform(0.01, 1.0);
                rec.weights[(h * n + i) * n + j] = v;
                sum += v;
            }
            for (size_t j = 0; j < n; ++j) rec.weights[(h * n + i) * n + j] /= sum;
        }
    return rec;
}

}  // namespace

TEST_CASE("head_mean_map basics") {
    // uniform attention -> uniform 1/N
    auto rec = make_record(1, 4);
    for (auto& w : rec.weights) w = 0.25;
    auto scores = head_mean_map(rec);
    REQUIRE(scores.size() == 4);
    for (double s : scores) CHECK(s == doctest::Approx(0.25).epsilon(1e-12));

    // single head: exactly its own column means
    Rng rng(1);
    auto r1 = random_record(1, 3, rng);
    auto s1 = head_mean_map(r1);
    for (size_t j = 0; j < 3; ++j) {
        double col = (r1.at(0, 0, j) + r1.at(0, 1, j) + r1.at(0, 2, j)) / 3.0;
        CHECK(s1[j] == doctest::Approx(col).epsilon(1e-12));
    }

    // two heads: elementwise average of the per-head column means
    auto a = random_record(1, 3, rng), b = random_record(1, 3, rng);
    auto two = make_record(2, 3);
    std::copy(a.weights.begin(), a.weights.end(), two.weights.begin());
    std::copy(b.weights.begin(), b.weights.end(), two.weights.begin() + 9);
    auto sa = head_mean_map(a), sb = head_mean_map(b), st = head_mean_map(two);
    for (size_t j = 0; j < 3; ++j)
        CHECK(st[j] == doctest::Approx(0.5 * (sa[j] + sb[j])).epsilon(1e-12));
}

TEST_CASE("head_mean_map sums to one on random stochastic records") {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        auto rec = random_record(1 + t % 4, 2 + t % 7, rng);
        auto scores = head_mean_map(rec);
        double sum = 0;
        for (double s : scores) {
            CHECK(s >= 0.0);
            sum += s;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        auto rows = row_mean_map(rec);
        double rsum = 0;
        for (double r : rows) rsum += r;
        CHECK(rsum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("rollout") {
    // single uniform layer -> uniform scores
    auto uni = make_record(1, 4);
    for (auto& w : uni.weights) w = 0.25;
    auto s = rollout({uni});
    for (double v : s) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    // identity attention in every layer: (A+I)/2 = I, product stays I
    auto eye = make_record(2, 3);
    for (size_t h = 0; h < 2; ++h)
        for (size_t i = 0; i < 3; ++i) eye.weights[(h * 3 + i) * 3 + i] = 1.0;
    auto si = rollout({eye, eye, eye});
    for (double v : si) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // column means of the final product sum to 1 for random stochastic stacks
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        std::vector<AttentionRecord> layers;
        for (int l = 0; l < 4; ++l) layers.push_back(random_record(2, 5, rng));
        auto sr = rollout(layers);
        double sum = 0;
        for (double v : sr) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }

    // inconsistent token counts
    auto small = make_record(1, 2);
    small.weights = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(rollout({uni, small}), ShapeError);
    CHECK_THROWS_AS(rollout({}), ContractError);
}

TEST_CASE("to_heatmap") {
    // constant scores -> all-zero map
    auto flat = to_heatmap(std::vector<double>(16, 0.37), 32, 32, 8);
    CHECK(flat.h == 32);
    CHECK(flat.w == 32);
    for (double v : flat.values) CHECK(v == 0.0);

    // single peaked token: the map's argmax lies inside that token's patch
    for (size_t peak : {0u, 5u, 10u, 15u}) {
        std::vector<double> scores(16, 0.1);
        scores[peak] = 1.0;
        auto map = to_heatmap(scores, 32, 32, 8);
        size_t arg = 0;
        for (size_t i = 1; i < map.values.size(); ++i)
            if (map.values[i] > map.values[arg]) arg = i;
        size_t py = (arg / 32) / 8, px = (arg % 32) / 8;
        CHECK(py == peak / 4);
        CHECK(px == peak % 4);
        // normalized range
        for (double v : map.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    // monotone at token centers before normalization
    Rng rng(4);
    std::vector<double> scores(16);
    for (auto& v : scores) v = rng.uniform(0.0, 1.0);
    for (size_t a = 0; a < 16; ++a)
        for (size_t b = 0; b < 16; ++b) {
            if (scores[a] <= scores[b]) continue;
            double va = heatmap_sample_raw(scores, 4, 4, double(a / 4), double(a % 4));
            double vb = heatmap_sample_raw(scores, 4, 4, double(b / 4), double(b % 4));
            CHECK(va > vb);
        }

    CHECK_THROWS_AS(to_heatmap(std::vector<double>(15, 0.0), 32, 32, 8), ShapeError);
    CHECK_THROWS_AS(to_heatmap(std::vector<double>(16, 0.0), 30, 32, 8), ShapeError);
}

TEST_CASE("overlay") {
    Rng rng(5);
    Image img(8, 8, 3);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    SaliencyMap map;
    map.h = 8;
    map.w = 8;
    map.values.resize(64);
    for (auto& v : map.values) v = rng.uniform(0.0, 1.0);

    // alpha = 0: bitwise identity
    Image same = overlay(map, img, 0.0);
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(same.data[i] == img.data[i]);

    // alpha = 1: pure colorized map, independent of the image
    Image pure = overlay(map, img, 1.0);
    Image black(8, 8, 3);
    Image pure2 = overlay(map, black, 1.0);
    for (size_t i = 0; i < pure.data.size(); ++i) CHECK(pure.data[i] == pure2.data[i]);

    // blended output stays in range
    for (double alpha : {0.25, 0.5, 0.75}) {
        Image out = overlay(map, img, alpha);
        CHECK(out.c == 3);
        for (float v : out.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    // single-channel images blend like their 3-channel gray expansion
    Image gray(8, 8, 1);
    for (auto& v : gray.data) v = 0.5f;
    Image gray3(8, 8, 3);
    for (auto& v : gray3.data) v = 0.5f;
    Image og = overlay(map, gray, 0.5);
    Image og3 = overlay(map, gray3, 0.5);
    for (size_t i = 0; i < og.data.size(); ++i) CHECK(og.data[i] == og3.data[i]);

    CHECK_THROWS_AS(overlay(map, img, -0.1), ConfigError);
    CHECK_THROWS_AS(overlay(map, img, 1.5), ConfigError);
    SaliencyMap wrong;
    wrong.h = 4;
    wrong.w = 4;
    wrong.values.assign(16, 0.0);
    CHECK_THROWS_AS(overlay(wrong, img, 0.5), ShapeError);
}

TEST_CASE("saliency_to_gray") {
    SaliencyMap map;
    map.h = 2;
    map.w = 3;
    map.values = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    Image g = saliency_to_gray(map);
    CHECK(g.h == 2);
    CHECK(g.w == 3);
    CHECK(g.c == 1);
    for (size_t i = 0; i < 6; ++i) CHECK(g.data[i] == doctest::Approx(map.values[i]));
}
