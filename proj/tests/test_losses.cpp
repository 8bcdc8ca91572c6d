#include <catch2/catch_amalgamated.hpp>

#include "pseudoblur/losses.hpp"
#include "pseudoblur/rng.hpp"

using namespace pseudoblur;

namespace {

Image random_unit_image(int h, int w, Rng& rng) {
    Image img(3, h, w, Range::Unit);
    for (auto& v : img.tensor().data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    return img;
}

void zero_all(ParamSet& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string& name = ps.entry(i).first;
        bool is_in_gain = name.ends_with("in.g") || name.ends_with("in1.g") || name.ends_with("in2.g");
        if (!is_in_gain) ps.entry(i).second.fill(0.0f);
    }
}

} // namespace

TEST_CASE("LSGAN score formulas match their closed forms") {
    CHECK(deblur_disc_loss({1.0, 0.0}) == 0.0);
    CHECK(deblur_disc_loss({0.5, 0.5}) == Catch::Approx(0.25).margin(1e-12));
    CHECK(deblur_disc_loss({0.0, 1.0}) == Catch::Approx(1.0).margin(1e-12));

    CHECK(deblur_gen_loss(0.0, {0.0, 1.0}) == 0.0);
    CHECK(deblur_gen_loss(0.2, {0.0, 0.5}) == Catch::Approx(0.325).margin(1e-12));
    CHECK(deblur_gen_loss(0.5, {0.0, 0.5}) > deblur_gen_loss(0.2, {0.0, 0.5}));

    CHECK(reblur_disc_loss({1.0, 0.0}) == 0.0);
    CHECK(reblur_gen_loss({0.0, 1.0}, 0.0) == 0.0);
    CHECK(reblur_disc_loss({0.5, 0.5}) == Catch::Approx(0.25).margin(1e-12));
    CHECK(reblur_gen_loss({0.5, 0.5}, 0.3) == Catch::Approx(0.425).margin(1e-12));
}

TEST_CASE("LSGAN penalties are minimized at their documented fixed points") {
    double best_disc = 1e9, best_gen = 1e9;
    AdvScores best_disc_at{}, best_gen_at{};
    for (int ri = 0; ri <= 10; ++ri) {
        for (int fi = 0; fi <= 10; ++fi) {
            AdvScores s{ri / 10.0, fi / 10.0};
            if (deblur_disc_loss(s) < best_disc) {
                best_disc = deblur_disc_loss(s);
                best_disc_at = s;
            }
            if (deblur_gen_loss(0.0, s) < best_gen) {
                best_gen = deblur_gen_loss(0.0, s);
                best_gen_at = s;
            }
        }
    }
    CHECK(best_disc == 0.0);
    CHECK(best_disc_at.real_score == 1.0);
    CHECK(best_disc_at.fake_score == 0.0);
    CHECK(best_gen == 0.0);
    CHECK(best_gen_at.fake_score == 1.0);
}

TEST_CASE("l1_loss") {
    Rng rng(3);
    Image a = random_unit_image(6, 6, rng);
    SECTION("zero at equality") { CHECK(l1_loss(a, a) == 0.0); }
    SECTION("uniform offset") {
        Image lo(1, 4, 4, Range::Unit, 0.25f);
        Image hi(1, 4, 4, Range::Unit, 0.75f);
        CHECK(l1_loss(lo, hi) == Catch::Approx(0.5).margin(1e-7));
    }
    SECTION("matches the scalar brute-force oracle") {
        Image b = random_unit_image(6, 6, rng);
        double acc = 0;
        for (std::size_t i = 0; i < a.tensor().data.size(); ++i)
            acc += std::abs(double(a.tensor().data[i]) - double(b.tensor().data[i]));
        CHECK(l1_loss(a, b) == Catch::Approx(acc / a.tensor().data.size()).margin(1e-12));
    }
    SECTION("shape mismatch rejected") {
        CHECK_THROWS_AS(l1_loss(a, Image(3, 6, 7, Range::Unit)), std::invalid_argument);
    }
}

TEST_CASE("deblur_adv_scores") {
    DiscriminatorSpec spec = DiscriminatorSpec::toy();
    Rng rng(5);
    std::vector<Image> s{random_unit_image(16, 16, rng).to_signed(),
                         random_unit_image(16, 16, rng).to_signed()};
    std::vector<Image> d{random_unit_image(16, 16, rng).to_signed(),
                         random_unit_image(16, 16, rng).to_signed()};

    SECTION("zero-weight discriminator scores one half on both sides") {
        ParamSet disc = init_discriminator_params(spec, 1, "disc");
        zero_all(disc);
        AdvScores sc = deblur_adv_scores(spec, disc, s, d);
        CHECK(sc.real_score == Catch::Approx(0.5).margin(1e-7));
        CHECK(sc.fake_score == Catch::Approx(0.5).margin(1e-7));
    }
    SECTION("identical batches score identically") {
        ParamSet disc = init_discriminator_params(spec, 2, "disc");
        AdvScores sc = deblur_adv_scores(spec, disc, s, s);
        CHECK(sc.real_score == sc.fake_score);
    }
    SECTION("batch mean of per-item means") {
        ParamSet disc = init_discriminator_params(spec, 3, "disc");
        AdvScores sc = deblur_adv_scores(spec, disc, s, d);
        double real = 0, fake = 0;
        for (const auto& img : s) real += mean_score(discriminator_forward(spec, disc, img));
        for (const auto& img : d) fake += mean_score(discriminator_forward(spec, disc, img));
        CHECK(sc.real_score == Catch::Approx(real / 2).margin(1e-12));
        CHECK(sc.fake_score == Catch::Approx(fake / 2).margin(1e-12));
    }
}

TEST_CASE("reblur_content_loss uses luma only") {
    Rng rng(7);
    Image b = random_unit_image(8, 8, rng);
    SECTION("zero at equality") { CHECK(reblur_content_loss({b}, {b}) == 0.0); }
    SECTION("chroma-only perturbation is invisible") {
        // add a delta orthogonal to the BT.601 weights: luma unchanged
        Image r = b;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                float d = 0.02f;
                r.at(0, y, x) = std::clamp(b.at(0, y, x) + d, 0.0f, 1.0f);
                r.at(1, y, x) = std::clamp(b.at(1, y, x) - d * (0.299f / 0.587f), 0.0f, 1.0f);
            }
        // keep only pixels that did not clip
        bool clipped = false;
        for (int y = 0; y < 8 && !clipped; ++y)
            for (int x = 0; x < 8; ++x)
                if (r.at(0, y, x) == 1.0f || r.at(1, y, x) == 0.0f) {
                    clipped = true;
                    break;
                }
        if (!clipped) CHECK(reblur_content_loss({b}, {r}) < 1e-6);
    }
    SECTION("uniform luma offset passes through linearly") {
        Image mid(3, 8, 8, Range::Unit, 0.4f);
        Image off(3, 8, 8, Range::Unit, 0.5f);
        CHECK(reblur_content_loss({mid}, {off}) == Catch::Approx(0.1).margin(1e-6));
    }
}

TEST_CASE("reblur three-way scores") {
    DiscriminatorSpec spec = DiscriminatorSpec::toy();
    Rng rng(11);
    std::vector<Image> batch{random_unit_image(16, 16, rng).to_signed(),
                             random_unit_image(16, 16, rng).to_signed()};
    std::vector<BinaryMask> mu;
    for (int i = 0; i < 2; ++i) {
        BinaryMask m(16, 16);
        for (auto& v : m.data()) v = rng.uniform() < 0.5 ? 1 : 0;
        mu.push_back(m);
    }

    SECTION("all zero-weight discriminators average to one half") {
        ParamSet glo = init_discriminator_params(spec, 1, "g");
        ParamSet u = init_discriminator_params(spec, 2, "u");
        ParamSet v = init_discriminator_params(spec, 3, "v");
        zero_all(glo);
        zero_all(u);
        zero_all(v);
        CHECK(reblur_three_way_score(spec, glo, u, v, mu, batch) ==
              Catch::Approx(0.5).margin(1e-7));
    }
    SECTION("all-ones mask feeds the body branch the full image") {
        ParamSet shared = init_discriminator_params(spec, 4, "d");
        std::vector<BinaryMask> ones{BinaryMask(16, 16, 1), BinaryMask(16, 16, 1)};
        // weight sharing: body branch on Mu==1 equals the global branch
        for (const auto& img : batch) {
            Tensor<float> a = discriminator_forward(spec, shared, img);
            Tensor<float> b = discriminator_forward(spec, shared, apply_mask(img, ones[0]));
            CHECK(a.data == b.data);
            Tensor<float> c =
                discriminator_forward(spec, shared, apply_mask(img, invert(ones[0])));
            // scene branch sees a zero image
            Tensor<float> z = discriminator_forward(spec, shared, Image(3, 16, 16, Range::Signed));
            CHECK(c.data == z.data);
        }
    }
    SECTION("matches the brute-force (1/3b) oracle") {
        ParamSet glo = init_discriminator_params(spec, 5, "g");
        ParamSet u = init_discriminator_params(spec, 6, "u");
        ParamSet v = init_discriminator_params(spec, 7, "v");
        double acc = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            acc += mean_score(discriminator_forward(spec, glo, batch[i]));
            acc += mean_score(discriminator_forward(spec, u, apply_mask(batch[i], mu[i])));
            acc += mean_score(discriminator_forward(spec, v, apply_mask(batch[i], invert(mu[i]))));
        }
        CHECK(reblur_three_way_score(spec, glo, u, v, mu, batch) ==
              Catch::Approx(acc / 6.0).margin(1e-12));
        AdvScores sc = reblur_adv_scores(spec, glo, u, v, mu, batch, batch);
        CHECK(sc.real_score == sc.fake_score);
    }
    SECTION("mask/image shape mismatch rejected") {
        ParamSet glo = init_discriminator_params(spec, 8, "g");
        std::vector<BinaryMask> bad{BinaryMask(8, 8, 1), BinaryMask(8, 8, 1)};
        CHECK_THROWS_AS(reblur_three_way_score(spec, glo, glo, glo, bad, batch),
                        std::invalid_argument);
    }
}

TEST_CASE("meta task and test losses") {
    Rng rng(13);
    Image s = random_unit_image(8, 8, rng).to_signed();
    SECTION("zero at the fixed point") {
        CHECK(meta_task_loss(s, s, s) == 0.0);
        CHECK(meta_test_loss(s, s, s) == 0.0);
    }
    SECTION("term isolation: luma offset in the second deblur") {
        Image s_mid(3, 8, 8, Range::Unit, 0.4f);
        Image d_out_off(3, 8, 8, Range::Unit, 0.5f);
        double v = meta_task_loss(s_mid.to_signed(), s_mid.to_signed(), d_out_off.to_signed());
        CHECK(v == Catch::Approx(0.1).margin(1e-6));
    }
    SECTION("compositional oracle") {
        Image d_in = random_unit_image(8, 8, rng).to_signed();
        Image d_out = random_unit_image(8, 8, rng).to_signed();
        CHECK(meta_task_loss(s, d_in, d_out) ==
              Catch::Approx(l1_loss(s, d_in) + luma_l1(s, d_out)).margin(1e-12));
        CHECK(meta_test_loss(s, d_in, d_out) == meta_task_loss(s, d_in, d_out));
    }
    SECTION("non-negative on random inputs") {
        for (int t = 0; t < 5; ++t) {
            Image a = random_unit_image(8, 8, rng).to_signed();
            Image b = random_unit_image(8, 8, rng).to_signed();
            Image c = random_unit_image(8, 8, rng).to_signed();
            CHECK(meta_task_loss(a, b, c) >= 0.0);
        }
    }
}

TEST_CASE("graph-level loss blocks agree with the scalar formulas") {
    Rng rng(17);
    SECTION("lsgan terms") {
        Graph<float> g;
        Tensor<float> r({1}), f({1});
        r[0] = 0.5f;
        f[0] = 0.5f;
        Var<float> disc = lossops::lsgan_disc_loss(g, g.input(r), g.input(f));
        CHECK(to_double(disc->val[0]) == Catch::Approx(0.25).margin(1e-7));
        Var<float> gen = lossops::lsgan_gen_term(g, g.input(f));
        CHECK(to_double(gen->val[0]) == Catch::Approx(0.125).margin(1e-7));
    }
    SECTION("sequence loss equals the image-level composition") {
        Image s = random_unit_image(8, 8, rng).to_signed();
        Image din = random_unit_image(8, 8, rng).to_signed();
        Image dout = random_unit_image(8, 8, rng).to_signed();
        Graph<float> g;
        Var<float> loss = lossops::sequence_loss(
            g, {g.input(s.tensor())}, {g.input(din.tensor())}, {g.input(dout.tensor())});
        CHECK(to_double(loss->val[0]) ==
              Catch::Approx(meta_task_loss(s, din, dout)).margin(1e-6));
    }
    SECTION("graph luma_l1 matches the image path") {
        Image a = random_unit_image(8, 8, rng).to_signed();
        Image b = random_unit_image(8, 8, rng).to_signed();
        Graph<float> g;
        Var<float> v = lossops::luma_l1(g, g.input(a.tensor()), g.input(b.tensor()));
        CHECK(to_double(v->val[0]) == Catch::Approx(luma_l1(a, b)).margin(1e-6));
    }
}
