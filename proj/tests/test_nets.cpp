#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "d2c/checkpoint.hpp"
#include "d2c/nets.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace d2c;
namespace fs = std::filesystem;

namespace {

struct TorchEnv {
    TorchEnv() {
        torch::set_num_threads(1);
        torch::manual_seed(0);
    }
};
TorchEnv env_;

GeneratorConfig tiny_gen(int base = 4, int depth = 2) {
    GeneratorConfig g;
    g.base_width = base;
    g.depth = depth;
    return g;
}

}  // namespace

TEST_CASE("generator preserves spatial shape and respects output range") {
    torch::manual_seed(1);
    Generator gen(tiny_gen(4, 3));
    init_weights(*gen);
    gen->eval();
    torch::NoGradGuard ng;
    auto x = torch::randn({2, 1, 64, 64});
    auto y = gen->forward(x);
    REQUIRE(y.sizes() == x.sizes());
    CHECK(y.min().item<float>() >= -1.f);
    CHECK(y.max().item<float>() <= 1.f);

    GeneratorConfig wide = tiny_gen(4, 2);
    wide.output_lo = 0.0;
    wide.output_hi = 65535.0;
    Generator gen2(wide);
    auto y2 = gen2->forward(torch::randn({1, 1, 32, 32}));
    CHECK(y2.min().item<float>() >= 0.f);
    CHECK(y2.max().item<float>() <= 65535.f);
}

TEST_CASE("generator deterministic in eval mode") {
    torch::manual_seed(2);
    Generator gen(tiny_gen());
    init_weights(*gen);
    gen->eval();
    torch::NoGradGuard ng;
    auto x = torch::randn({1, 1, 32, 32});
    auto a = gen->forward(x);
    auto b = gen->forward(x);
    CHECK(torch::equal(a, b));
}

TEST_CASE("generator input perturbation response is bounded and repeatable") {
    torch::manual_seed(3);
    Generator gen(tiny_gen(4, 3));
    init_weights(*gen);
    gen->eval();
    torch::NoGradGuard ng;
    auto x = torch::randn({1, 1, 64, 64});
    auto e = 1e-3f * torch::randn({1, 1, 64, 64});
    auto measure = [&] {
        auto d = gen->forward(x + e) - gen->forward(x);
        return (d.norm() / e.norm()).item<double>();
    };
    double r1 = measure(), r2 = measure();
    CHECK(r1 == r2);          // stable across runs
    CHECK(r1 < 1e4);          // finite operator norm
    CHECK(std::isfinite(r1));
}

TEST_CASE("generator rejects wrong channel count and bad divisibility") {
    Generator gen(tiny_gen(4, 3));
    CHECK_THROWS_AS(gen->forward(torch::randn({1, 2, 64, 64})), ValidationError);
    CHECK_THROWS_AS(gen->forward(torch::randn({1, 1, 60, 60})), ValidationError);
}

TEST_CASE("config validation rejects nonsense") {
    GeneratorConfig g;
    g.depth = 0;
    CHECK_THROWS_AS(g.validate(), ValidationError);
    g = GeneratorConfig{};
    g.output_lo = 1.0;
    g.output_hi = -1.0;
    CHECK_THROWS_AS(g.validate(), ValidationError);
    DiscriminatorConfig d;
    d.n_layers = 0;
    CHECK_THROWS_AS(d.validate(), ValidationError);
    SegConfig s;
    s.threshold = 1.5;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    TrainConfig t;
    t.lambda_l1 = -1;
    CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("discriminator emits a 30x30 logit grid on 256-px patches") {
    DiscriminatorConfig cfg;  // defaults: n_layers 3
    CHECK(discriminator_grid_size(cfg, 256) == 30);
    Discriminator disc(cfg);
    torch::NoGradGuard ng;
    auto out = disc->forward(torch::randn({1, 1, 256, 256}),
                             torch::randn({1, 1, 256, 256}));
    REQUIRE(out.dim() == 4);
    CHECK(out.size(2) == 30);
    CHECK(out.size(3) == 30);
}

TEST_CASE("discriminator grid arithmetic: hand-checked sizes and monotonicity") {
    DiscriminatorConfig cfg;
    // n_layers strided halvings on 256: 256->128->64->32, then two k4 s1 p1
    // convs: 32->31->30.
    cfg.n_layers = 1;
    int g1 = discriminator_grid_size(cfg, 256);  // 128 -> 127 -> 126
    CHECK(g1 == 126);
    cfg.n_layers = 2;
    CHECK(discriminator_grid_size(cfg, 256) == 62);
    cfg.n_layers = 4;
    int g4 = discriminator_grid_size(cfg, 256);
    CHECK(g4 == 14);
    CHECK(g1 > 62);
    CHECK(g4 < 30);

    // forward shape agrees with the arithmetic for a non-default size
    cfg.n_layers = 2;
    Discriminator disc(cfg);
    torch::NoGradGuard ng;
    auto out = disc->forward(torch::randn({1, 1, 64, 64}),
                             torch::randn({1, 1, 64, 64}));
    CHECK(out.size(2) == discriminator_grid_size(cfg, 64));
}

TEST_CASE("discriminator rejects mismatched dapi/ck shapes") {
    Discriminator disc{DiscriminatorConfig{}};
    CHECK_THROWS_AS(disc->forward(torch::randn({1, 1, 64, 64}),
                                  torch::randn({1, 1, 32, 32})),
                    ValidationError);
}

TEST_CASE("gan losses: oracle generator output zeroes the L1 term") {
    torch::manual_seed(4);
    Discriminator disc{DiscriminatorConfig{}};
    init_weights(*disc);
    auto dapi = torch::randn({1, 1, 64, 64});
    auto target = torch::randn({1, 1, 64, 64});
    auto losses = gan_losses_from_fake(disc, dapi, target, target.clone(), 100.0);
    CHECK(losses.l1.item<double>() == 0.0);
    CHECK(losses.g_loss.item<double>() ==
          doctest::Approx(losses.adv.item<double>()).epsilon(1e-7));
}

TEST_CASE("gan losses: decomposition identity and lambda scaling") {
    torch::manual_seed(5);
    Discriminator disc{DiscriminatorConfig{}};
    init_weights(*disc);
    auto dapi = torch::randn({2, 1, 64, 64});
    auto target = torch::randn({2, 1, 64, 64});
    auto fake = torch::randn({2, 1, 64, 64});
    for (double lam : {0.0, 1.0, 100.0}) {
        auto l = gan_losses_from_fake(disc, dapi, target, fake, lam);
        double g = l.g_loss.item<double>();
        double expect = l.adv.item<double>() + lam * l.l1.item<double>();
        CHECK(std::abs(g - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
        CHECK(l.l1.item<double>() > 0.0);
        CHECK(l.d_loss.item<double>() >= 0.0);
    }
}

TEST_CASE("gan losses: full-batch identity via gan_step_losses") {
    torch::manual_seed(6);
    Generator gen(tiny_gen(4, 3));
    Discriminator disc{DiscriminatorConfig{}};
    init_weights(*gen);
    init_weights(*disc);
    auto dapi = torch::randn({1, 1, 64, 64});
    auto target = torch::randn({1, 1, 64, 64});
    auto l = gan_step_losses(gen, disc, dapi, target, 50.0);
    CHECK(std::isfinite(l.g_loss.item<double>()));
    CHECK(std::isfinite(l.d_loss.item<double>()));
    CHECK(l.l1.item<double>() > 0.0);
}

TEST_CASE("dice loss is zero for exact binary match, positive otherwise") {
    auto t = torch::zeros({1, 1, 8, 8});
    t.index_put_({0, 0, torch::indexing::Slice(0, 4)}, 1.0);
    CHECK(dice_loss(t.clone(), t).item<double>() == doctest::Approx(0.0));
    auto wrong = 1.0 - t;
    CHECK(dice_loss(wrong, t).item<double>() > 0.5);
}

TEST_CASE("seg losses: confident logits drive cross entropy to ~0") {
    auto target = torch::zeros({1, 1, 8, 8});
    target.index_put_({0, 0, 0}, 1.0);
    auto logits = 30.0 * (2.0 * target - 1.0);
    CHECK(seg_loss(logits, target, SegLoss::cross_entropy).item<double>() < 1e-6);
    CHECK(seg_loss(logits, target, SegLoss::dice).item<double>() < 1e-6);
    CHECK(seg_loss(logits, target, SegLoss::combined).item<double>() < 2e-6);
    auto bad = -logits;
    CHECK(seg_loss(bad, target, SegLoss::cross_entropy).item<double>() > 1.0);
}

TEST_CASE("segmenter probabilities live in [0,1] and shapes are preserved") {
    torch::manual_seed(7);
    SegConfig cfg;
    cfg.base_width = 4;
    cfg.depth = 3;
    Segmenter seg(cfg);
    init_weights(*seg);
    seg->eval();
    torch::NoGradGuard ng;
    auto p = seg->forward_prob(torch::randn({1, 1, 64, 64}));
    REQUIRE(p.sizes() == torch::IntArrayRef({1, 1, 64, 64}));
    CHECK(p.min().item<float>() >= 0.f);
    CHECK(p.max().item<float>() <= 1.f);
}

TEST_CASE("binarize: brute-force oracle, >= convention, monotonicity") {
    std::mt19937_64 rng(9);
    Raster p(16, 16);
    for (auto& v : p.data) v = float(rng() % 1000) / 999.f;
    p.data[0] = 0.5f;  // exact-threshold pixel
    auto m = binarize(p, 0.5);
    for (size_t i = 0; i < p.size(); ++i)
        REQUIRE(m.data[i] == (p.data[i] >= 0.5f ? 1.f : 0.f));
    CHECK(m.data[0] == 1.f);  // boundary counts as positive

    auto hi = binarize(p, 0.8);
    for (size_t i = 0; i < p.size(); ++i)
        REQUIRE(hi.data[i] <= m.data[i]);  // higher threshold shrinks the mask

    CHECK_THROWS_AS(binarize(p, 0.0), ValidationError);
    CHECK_THROWS_AS(binarize(p, 1.0), ValidationError);
}

TEST_CASE("raster/tensor bridges round trip") {
    std::mt19937_64 rng(10);
    Raster r(12, 7);
    for (auto& v : r.data) v = float(rng() % 4096);
    auto t = raster_to_tensor(r);
    REQUIRE(t.sizes() == torch::IntArrayRef({1, 7, 12}));
    auto back = tensor_to_raster(t, r.resolution_um);
    CHECK(back.width == 12);
    CHECK(back.height == 7);
    CHECK(back.data == r.data);
}

TEST_CASE("checkpoint round trip preserves forward outputs bit-exactly") {
    torch::manual_seed(11);
    auto dir = fs::temp_directory_path() / "d2c_test_ckpt";
    fs::create_directories(dir);

    TranslationCheckpoint ck;
    ck.generator_config = tiny_gen(4, 3);
    ck.discriminator_config = DiscriminatorConfig{};
    ck.generator = Generator(ck.generator_config);
    ck.discriminator = Discriminator(*ck.discriminator_config);
    init_weights(*ck.generator);
    init_weights(*ck.discriminator);
    ck.training_log.push_back({1, {{"g_loss", 1.5}, {"val_l1", 0.2}}});

    auto path = (dir / "t.ckpt").string();
    save_checkpoint(ck, path);
    auto loaded = load_translation_checkpoint(path);
    REQUIRE(loaded.training_log.size() == 1);
    CHECK(loaded.training_log[0].values.at("val_l1") == 0.2);
    CHECK(loaded.generator_config.base_width == 4);
    REQUIRE(loaded.discriminator_config.has_value());

    torch::NoGradGuard ng;
    ck.generator->eval();
    loaded.generator->eval();
    for (int i = 0; i < 10; ++i) {
        auto x = torch::randn({1, 1, 32, 32});
        REQUIRE(torch::equal(ck.generator->forward(x), loaded.generator->forward(x)));
    }
    auto d_in_a = torch::randn({1, 1, 64, 64});
    auto d_in_b = torch::randn({1, 1, 64, 64});
    ck.discriminator->eval();
    loaded.discriminator->eval();
    CHECK(torch::equal(ck.discriminator->forward(d_in_a, d_in_b),
                       loaded.discriminator->forward(d_in_a, d_in_b)));

    // inference-only export: drop the discriminator
    TranslationCheckpoint slim = ck;
    slim.discriminator_config.reset();
    slim.discriminator = nullptr;
    auto slim_path = (dir / "slim.ckpt").string();
    save_checkpoint(slim, slim_path);
    auto slim_loaded = load_translation_checkpoint(slim_path);
    CHECK_FALSE(slim_loaded.discriminator_config.has_value());
    CHECK(slim_loaded.discriminator.is_empty());
    auto x = torch::randn({1, 1, 32, 32});
    slim_loaded.generator->eval();
    CHECK(torch::equal(ck.generator->forward(x), slim_loaded.generator->forward(x)));

    // header peek without loading nets
    auto hdr = checkpoint_header(path);
    CHECK(hdr.at("kind") == "translation");
    CHECK(hdr.at("format_version") == 1);

    fs::remove_all(dir);
}

TEST_CASE("segmentation checkpoint round trip") {
    torch::manual_seed(12);
    auto dir = fs::temp_directory_path() / "d2c_test_ckpt_seg";
    fs::create_directories(dir);
    SegCheckpoint ck;
    ck.seg_config.base_width = 4;
    ck.seg_config.depth = 3;
    ck.seg_config.threshold = 0.42;
    ck.segmenter = Segmenter(ck.seg_config);
    init_weights(*ck.segmenter);
    auto path = (dir / "s.ckpt").string();
    save_checkpoint(ck, path);
    auto loaded = load_seg_checkpoint(path);
    CHECK(loaded.seg_config.threshold == 0.42);
    torch::NoGradGuard ng;
    ck.segmenter->eval();
    loaded.segmenter->eval();
    auto x = torch::randn({1, 1, 64, 64});
    CHECK(torch::equal(ck.segmenter->forward_prob(x),
                       loaded.segmenter->forward_prob(x)));
    // wrong loader for the kind
    CHECK_THROWS_AS(load_translation_checkpoint(path), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("corrupt or missing checkpoint files rejected") {
    auto dir = fs::temp_directory_path() / "d2c_test_ckpt_bad";
    fs::create_directories(dir);
    CHECK_THROWS(load_translation_checkpoint((dir / "absent.ckpt").string()));
    auto bad = (dir / "bad.ckpt").string();
    {
        std::ofstream f(bad, std::ios::binary);
        f << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_translation_checkpoint(bad), ValidationError);
    fs::remove_all(dir);
}

namespace {

// Central finite-difference check of analytic gradients for a scalar loss
// defined over a module's parameters.
template <typename LossFn>
void gradcheck_params(std::vector<torch::Tensor> params, LossFn loss_fn,
                      int n_checks, double eps_scale, double tol,
                      std::mt19937_64& rng) {
    // analytic gradients
    for (auto& p : params) {
        if (p.grad().defined()) p.grad().zero_();
    }
    auto loss = loss_fn();
    loss.backward();

    for (int c = 0; c < n_checks; ++c) {
        auto& p = params[rng() % params.size()];
        auto flat = p.view(-1);
        int64_t idx = int64_t(rng() % uint64_t(flat.size(0)));
        double w = flat[idx].item<double>();
        double analytic =
            p.grad().defined() ? p.grad().view(-1)[idx].item<double>() : 0.0;
        double eps = eps_scale * std::max(1.0, std::abs(w));
        torch::NoGradGuard ng;
        flat[idx] = w + eps;
        double lp;
        {
            torch::AutoGradMode ag(false);
            lp = loss_fn().template item<double>();
        }
        flat[idx] = w - eps;
        double lm;
        {
            torch::AutoGradMode ag(false);
            lm = loss_fn().template item<double>();
        }
        flat[idx] = w;
        double fd = (lp - lm) / (2.0 * eps);
        double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
        double rel = std::abs(analytic - fd) / denom;
        INFO("param check ", c, ": analytic=", analytic, " fd=", fd,
             " rel=", rel);
        REQUIRE(rel <= tol);
    }
}

}  // namespace

TEST_CASE("analytic gradients match finite differences (double precision)") {
    std::mt19937_64 rng(2718);
    for (int cfg_i = 0; cfg_i < 5; ++cfg_i) {
        torch::manual_seed(100 + cfg_i);
        GeneratorConfig gc = tiny_gen(2 + int(rng() % 3), 1 + int(rng() % 2));
        DiscriminatorConfig dc;
        dc.base_width = 2 + int(rng() % 3);
        dc.n_layers = 1;
        Generator gen(gc);
        Discriminator disc(dc);
        init_weights(*gen);
        init_weights(*disc);
        gen->to(torch::kFloat64);
        disc->to(torch::kFloat64);
        gen->train();
        disc->train();

        auto opts = torch::TensorOptions().dtype(torch::kFloat64);
        auto dapi = torch::randn({1, 1, 8, 8}, opts);
        auto target = torch::randn({1, 1, 8, 8}, opts);
        double lam = 1.0 + double(rng() % 100);

        auto g_loss_fn = [&] {
            auto fake = gen->forward(dapi);
            return gan_losses_from_fake(disc, dapi, target, fake, lam).g_loss;
        };
        gradcheck_params(gen->parameters(), g_loss_fn, 20, 1e-6, 1e-5, rng);

        auto d_loss_fn = [&] {
            torch::Tensor fake;
            {
                torch::AutoGradMode ag(false);
                fake = gen->forward(dapi);
            }
            return gan_losses_from_fake(disc, dapi, target, fake, lam).d_loss;
        };
        gradcheck_params(disc->parameters(), d_loss_fn, 20, 1e-6, 1e-5, rng);
    }
}

TEST_CASE("segmentation loss gradients match finite differences") {
    std::mt19937_64 rng(31415);
    torch::manual_seed(200);
    SegConfig sc;
    sc.base_width = 3;
    sc.depth = 2;
    Segmenter seg(sc);
    init_weights(*seg);
    seg->to(torch::kFloat64);
    seg->train();
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto x = torch::randn({1, 1, 8, 8}, opts);
    auto target = (torch::rand({1, 1, 8, 8}, opts) > 0.5).to(torch::kFloat64);
    for (SegLoss kind : {SegLoss::cross_entropy, SegLoss::dice, SegLoss::combined}) {
        auto loss_fn = [&] { return seg_loss(seg->forward_logits(x), target, kind); };
        gradcheck_params(seg->parameters(), loss_fn, 20, 1e-6, 1e-5, rng);
    }
}
