#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "fragvqa/extractors.hpp"
#include "support/gradcheck.hpp"

using namespace fragvqa;
using namespace fragvqa::extractors;

namespace {

Tensor random_frame(Rng& rng, std::int64_t h, std::int64_t w, std::int64_t c = 1) {
    Tensor t({h, w, c});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

double gelu_oracle(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("keyframe selection uses floor segment boundaries") {
    CHECK(select_keyframes(32, 4) == std::vector<int>{0, 8, 16, 24});
    auto all = select_keyframes(32, 32);
    for (int i = 0; i < 32; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
    // Hand enumeration: segments [0,7) [7,15) [15,22) [22,30).
    CHECK(select_keyframes(30, 4) == std::vector<int>{0, 7, 15, 22});
    CHECK_THROWS_AS(select_keyframes(30, 0), InvalidArgument);
    CHECK_THROWS_AS(select_keyframes(4, 5), InvalidArgument);
}

TEST_CASE("toy semantic tokens are a linear map of patch pixels") {
    nn::ParamSet ps(7);
    ToySemanticExtractor ex(ps, "sem", 16, 8, 1, 6);
    Rng rng(1);
    Tensor frame = random_frame(rng, 16, 16);
    auto tok = ex.extract(frame, 3);
    CHECK(tok.keyframe_index == 3);
    REQUIRE(tok.l1.patches.shape() == std::vector<std::int64_t>{4, 6});
    REQUIRE(tok.l2.patches.shape() == std::vector<std::int64_t>{4, 6});
    CHECK(tok.l1.cls.size(0) == tok.l2.cls.size(0));

    // Standalone recomputation of patch (1,0): rows 8..15, cols 0..7.
    const Tensor& w = ps.find("sem.layer1.w")->var->value;
    for (int j = 0; j < 6; ++j) {
        double acc = 0.0;
        int o = 0;
        for (int y = 8; y < 16; ++y)
            for (int x = 0; x < 8; ++x) acc += frame.at({y, x, 0}) * w.at({o++, j});
        CHECK(tok.l1.patches.at({2, j}) == doctest::Approx(acc).epsilon(1e-12));
    }
    // Class token is the patch mean.
    for (int j = 0; j < 6; ++j) {
        double m = 0.0;
        for (int k = 0; k < 4; ++k) m += tok.l1.patches.at({k, j});
        CHECK(tok.l1.cls[j] == doctest::Approx(m / 4.0).epsilon(1e-12));
    }
}

TEST_CASE("constant frames produce identical patch tokens") {
    nn::ParamSet ps(9);
    ToySemanticExtractor ex(ps, "sem", 32, 8, 1, 5);
    auto tok = ex.extract(Tensor::full({32, 32, 1}, 0.6), 0);
    for (int k = 1; k < 16; ++k)
        for (int j = 0; j < 5; ++j)
            CHECK(tok.l1.patches.at({k, j}) == doctest::Approx(tok.l1.patches.at({0, j})));
}

TEST_CASE("extractor geometry matches the 224/16 pretrained convention") {
    nn::ParamSet ps(11);
    ToySemanticExtractor ex(ps, "sem", 224, 16, 3, 16);
    CHECK(ex.patch_grid_side() == 14);
    CHECK(ex.patch_count() == 196);
    CHECK_THROWS_AS(ex.extract(Tensor::zeros({64, 64, 3}), 0), InvalidArgument);
}

TEST_CASE("extractor weights register as frozen parameters") {
    nn::ParamSet ps(13);
    ToySemanticExtractor ex(ps, "sem", 16, 8, 1, 4);
    const auto* p = ps.find("sem.layer1.w");
    REQUIRE(p != nullptr);
    CHECK(p->frozen);
    CHECK_FALSE(p->var->requires_grad);
}

TEST_CASE("zero-init residual adapter is the identity") {
    nn::ParamSet ps(15);
    Adapter f(ps, "qa", AdapterSpec{{6, 3, 6}, true});
    Rng rng(2);
    Tensor cls({1, 6});
    for (int i = 0; i < 6; ++i) cls[i] = rng.normal();
    auto out = quality_adapt(f, ad::constant(cls));
    for (int i = 0; i < 6; ++i) CHECK(out->value[i] == cls[i]);
}

TEST_CASE("adapter widths follow the bottleneck specs") {
    nn::ParamSet ps(17);
    Adapter q(ps, "quality", AdapterSpec{{768, 192, 768}, true});
    Adapter d(ps, "distortion", AdapterSpec{{128, 32, 768}, false});
    CHECK(ps.find("quality.down.w")->var->value.shape() == std::vector<std::int64_t>{768, 192});
    CHECK(ps.find("quality.up.w")->var->value.shape() == std::vector<std::int64_t>{192, 768});
    CHECK(ps.find("distortion.down.w")->var->value.shape() == std::vector<std::int64_t>{128, 32});
    CHECK(ps.find("distortion.up.w")->var->value.shape() == std::vector<std::int64_t>{32, 768});
    CHECK_THROWS_AS(Adapter(ps, "bad", AdapterSpec{{8, 4, 6}, true}), InvalidArgument);

    auto x = ad::constant(Tensor::zeros({2, 99}));
    CHECK_THROWS_AS(q.forward(x), InvalidArgument);
}

TEST_CASE("adapter with pinned weights matches a standalone MLP recomputation") {
    nn::ParamSet ps(19);
    Adapter f(ps, "qa", AdapterSpec{{3, 2, 3}, true});
    // Pin the zero-initialized up-projection to fixed values.
    Tensor& up = ps.find("qa.up.w")->var->value;
    for (std::int64_t i = 0; i < up.numel(); ++i) up[i] = 0.1 * static_cast<double>(i + 1);
    Tensor& upb = ps.find("qa.up.b")->var->value;
    upb[0] = 0.05;

    Tensor x({1, 3}, {0.4, -0.7, 1.2});
    auto out = quality_adapt(f, ad::constant(x));

    const Tensor& dw = ps.find("qa.down.w")->var->value;
    const Tensor& db = ps.find("qa.down.b")->var->value;
    double hmid[2];
    for (int j = 0; j < 2; ++j) {
        double a = db[j];
        for (int i = 0; i < 3; ++i) a += x[i] * dw.at({i, j});
        hmid[j] = gelu_oracle(a);
    }
    for (int j = 0; j < 3; ++j) {
        double y = upb[j];
        for (int i = 0; i < 2; ++i) y += hmid[i] * up.at({i, j});
        CHECK(out->value[j] == doctest::Approx(x[j] + y).epsilon(1e-12));
    }
}

TEST_CASE("non-residual adapter with zero biases maps zero to zero") {
    nn::ParamSet ps(21);
    Adapter d(ps, "da", AdapterSpec{{128, 32, 768}, false});
    auto out = distortion_adapt(d, ad::constant(Tensor::zeros({4, 128})));
    for (std::int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == 0.0);
}

TEST_CASE("distortion statistics match an independent recomputation") {
    ToyDistortionExtractor ex(4, 4, 128);
    Rng rng(3);
    Tensor frag({2, 4, 4, 1});
    for (std::int64_t i = 0; i < frag.numel(); ++i) frag[i] = rng.uniform();
    Tensor f = ex.extract_fragment(frag);
    REQUIRE(f.shape() == std::vector<std::int64_t>{128});

    double mean = 0;
    for (std::int64_t i = 0; i < 32; ++i) mean += frag[i];
    mean /= 32.0;
    CHECK(f[0] == doctest::Approx(mean).epsilon(1e-12));
    double var = 0;
    for (std::int64_t i = 0; i < 32; ++i) var += (frag[i] - mean) * (frag[i] - mean);
    CHECK(f[1] == doctest::Approx(std::sqrt(var / 32.0)).epsilon(1e-12));

    double gh = 0;
    int n = 0;
    for (int t = 0; t < 2; ++t)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x + 1 < 4; ++x) {
                gh += std::abs(frag.at({t, y, x + 1, 0}) - frag.at({t, y, x, 0}));
                ++n;
            }
    CHECK(f[2] == doctest::Approx(gh / n).epsilon(1e-12));

    double td = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) td += std::abs(frag.at({1, y, x, 0}) - frag.at({0, y, x, 0}));
    CHECK(f[5] == doctest::Approx(td / 16.0).epsilon(1e-12));

    for (int i = ToyDistortionExtractor::kStatCount; i < 128; ++i) CHECK(f[i] == 0.0);
}

TEST_CASE("zero fragments give zero statistics") {
    ToyDistortionExtractor ex(8, 8);
    Tensor f = ex.extract_fragment(Tensor::zeros({3, 8, 8, 1}));
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(f[i] == 0.0);
}

TEST_CASE("distortion extraction walks the grid and validates sizes") {
    Rng rng(5);
    fragments::VideoTensor v;
    v.frames = Tensor({2, 32, 32, 1});
    for (std::int64_t i = 0; i < v.frames.numel(); ++i) v.frames[i] = rng.uniform();
    auto fg = fragments::partition_and_sample(v, fragments::GridSpec{4, 8, 8}, rng);

    ToyDistortionExtractor ex(8, 8);
    auto feats = extract_distortion(ex, fg);
    CHECK(feats.features.shape() == std::vector<std::int64_t>{16, 128});
    Tensor first = ex.extract_fragment(fg.fragments[0]);
    for (int j = 0; j < 128; ++j) CHECK(feats.features.at({0, j}) == first[j]);

    ToyDistortionExtractor wrong(16, 16);
    CHECK_THROWS_AS(extract_distortion(wrong, fg), InvalidArgument);
}

TEST_CASE("contrastive loss closed forms") {
    // All features identical: every similarity equal, loss = log(B-1).
    Tensor same({5, 3});
    for (int i = 0; i < 5; ++i) {
        same[i * 3 + 0] = 0.3;
        same[i * 3 + 1] = -0.2;
        same[i * 3 + 2] = 0.9;
    }
    std::vector<int> labels{0, 0, 1, 1, 2};
    auto loss = distortion_contrastive_loss(ad::constant(same), labels, 0.1);
    CHECK(loss->value.item() == doctest::Approx(std::log(4.0)).epsilon(1e-10));

    // Two patterns, one-hot by pattern, batch 4: each anchor has one positive
    // at similarity 1/tau and two negatives at 0: loss = log(1 + 2 e^{-1/tau}).
    Tensor onehot({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    std::vector<int> two{7, 7, 9, 9};
    double tau = 0.1;
    auto l2 = distortion_contrastive_loss(ad::constant(onehot), two, tau);
    CHECK(l2->value.item() ==
          doctest::Approx(std::log(1.0 + 2.0 * std::exp(-1.0 / tau))).epsilon(1e-10));
    CHECK(l2->value.item() < 1e-3);  // near the minimum
}

TEST_CASE("contrastive loss is permutation and rotation invariant") {
    Rng rng(7);
    Tensor f({6, 4});
    for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = rng.normal();
    std::vector<int> labels{0, 1, 0, 2, 1, 2};
    double base = distortion_contrastive_loss(ad::constant(f), labels, 0.1)->value.item();

    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Tensor fp({6, 4});
    std::vector<int> lp(6);
    for (int i = 0; i < 6; ++i) {
        lp[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        for (int j = 0; j < 4; ++j) fp[i * 4 + j] = f[perm[static_cast<std::size_t>(i)] * 4 + j];
    }
    CHECK(distortion_contrastive_loss(ad::constant(fp), lp, 0.1)->value.item() ==
          doctest::Approx(base).epsilon(1e-12));

    Eigen::MatrixXd m = Eigen::MatrixXd::Random(4, 4);
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
    Tensor fr({6, 4});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 4; ++k) s += f[i * 4 + k] * q(k, j);
            fr[i * 4 + j] = s;
        }
    CHECK(distortion_contrastive_loss(ad::constant(fr), labels, 0.1)->value.item() ==
          doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("contrastive loss rejects degenerate batches") {
    Tensor f({3, 2}, {1, 0, 0, 1, 1, 1});
    CHECK_THROWS_AS(distortion_contrastive_loss(ad::constant(f), {4, 4, 4}, 0.1), UndefinedValue);
    CHECK_THROWS_AS(distortion_contrastive_loss(ad::constant(f), {0, 1, 2}, 0.1), UndefinedValue);
    Tensor one({1, 2}, {1, 0});
    CHECK_THROWS_AS(distortion_contrastive_loss(ad::constant(one), {0}, 0.1), InvalidArgument);
}

TEST_CASE("contrastive loss is finite for all-zero features and differentiable elsewhere") {
    auto zero = ad::leaf(Tensor::zeros({4, 3}), true);
    std::vector<int> labels{0, 0, 1, 1};
    auto l = distortion_contrastive_loss(zero, labels, 0.1);
    CHECK(std::isfinite(l->value.item()));
    CHECK(l->value.item() == doctest::Approx(std::log(3.0)).epsilon(1e-9));

    Rng rng(11);
    auto f = ad::leaf(Tensor({4, 3}), true);
    for (std::int64_t i = 0; i < f->value.numel(); ++i) f->value[i] = rng.normal();
    auto loss = [&] { return distortion_contrastive_loss(f, labels, 0.1); };
    CHECK(testsup::max_rel_grad_error({f}, loss) < 1e-6);
}

TEST_CASE("adapters train under gradient checks") {
    nn::ParamSet ps(23);
    Adapter q(ps, "qa", AdapterSpec{{6, 3, 6}, true});
    Adapter d(ps, "da", AdapterSpec{{5, 2, 4}, false});
    Rng rng(13);
    auto x = ad::leaf(Tensor({2, 6}), true);
    auto y = ad::leaf(Tensor({2, 5}), true);
    for (std::int64_t i = 0; i < x->value.numel(); ++i) x->value[i] = rng.normal();
    for (std::int64_t i = 0; i < y->value.numel(); ++i) y->value[i] = rng.normal();
    // Perturb the zero-init layers so the checks exercise nonzero paths.
    for (auto& p : ps.items())
        for (std::int64_t i = 0; i < p.var->value.numel(); ++i)
            p.var->value[i] += 0.01 * static_cast<double>((i % 7) - 3);

    std::vector<ad::Var> leaves{x, y};
    for (auto& p : ps.items()) leaves.push_back(p.var);
    auto loss = [&] {
        return ad::add(ad::sum_all(ad::square(q.forward(x))),
                       ad::sum_all(ad::square(d.forward(y))));
    };
    CHECK(testsup::max_rel_grad_error(leaves, loss, 1e-4) < 1e-6);
}

TEST_CASE("frame resize: integer area mean and identity") {
    Tensor f({4, 4, 1});
    for (int i = 0; i < 16; ++i) f[i] = static_cast<double>(i);
    Tensor half = resize_frame(f, 2, 2);
    CHECK(half.at({0, 0, 0}) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(half.at({1, 1, 0}) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    Tensor same = resize_frame(f, 4, 4);
    for (int i = 0; i < 16; ++i) CHECK(same[i] == f[i]);
    // Non-integer ratio stays within the input range.
    Tensor odd = resize_frame(f, 3, 3);
    for (std::int64_t i = 0; i < odd.numel(); ++i) {
        CHECK(odd[i] >= 0.0);
        CHECK(odd[i] <= 15.0);
    }
}
