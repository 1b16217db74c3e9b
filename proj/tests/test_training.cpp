#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace activegan;
using namespace testing_support;

namespace {

using Labels = std::vector<std::size_t>;

Tensor col(std::vector<double> v) {
    Tensor t(Shape{v.size(), 1});
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
    return t;
}

GeneratedSample tagged(double id) {
    GeneratedSample s;
    s.x = {id, -id};
    s.z = {id};
    return s;
}

double ref_reward(double u_m, double u_le, const RewardConfig& c) {
    const double r_m = u_m <= c.epsilon ? std::exp(-u_m) : c.truncated;
    return c.alpha * r_m + (1.0 - c.alpha) * std::exp(u_le);
}

}  // namespace

// ---- losses --------------------------------------------------------------

TEST(DiscriminatorObjective, SinglePairExample) {
    Tape t;
    // P(fake|x^) = 0.7 means P(real|x^) = 0.3.
    Var v = acgan_discriminator_objective(t.constant(col({0.9})), t.constant(col({0.3})),
                                          t.constant(Tensor::matrix({{0.8, 0.2}})), Labels{0},
                                          t.constant(Tensor::matrix({{0.4, 0.6}})), Labels{1});
    const double expect = std::log(0.9) + std::log(0.7) + std::log(0.8) + std::log(0.6);
    EXPECT_NEAR(v.value().item(), expect, 1e-12);
    EXPECT_NEAR(v.value().item(), -1.1957, 1e-3);  // the exact sum is -1.19600
}

TEST(DiscriminatorObjective, PerfectAndDuplicatedBatches) {
    Tape t;
    Var perfect = acgan_discriminator_objective(t.constant(col({1.0})), t.constant(col({0.0})),
                                                t.constant(Tensor::matrix({{1.0, 0.0}})), Labels{0},
                                                t.constant(Tensor::matrix({{0.0, 1.0}})), Labels{1});
    EXPECT_LE(perfect.value().item(), 0.0);
    EXPECT_GT(perfect.value().item(), -1e-9);
    Var one = acgan_discriminator_objective(t.constant(col({0.9})), t.constant(col({0.3})),
                                            t.constant(Tensor::matrix({{0.8, 0.2}})), Labels{0},
                                            t.constant(Tensor::matrix({{0.4, 0.6}})), Labels{1});
    Var two = acgan_discriminator_objective(t.constant(col({0.9, 0.9})), t.constant(col({0.3, 0.3})),
                                            t.constant(Tensor::matrix({{0.8, 0.2}, {0.8, 0.2}})), Labels{0, 0},
                                            t.constant(Tensor::matrix({{0.4, 0.6}, {0.4, 0.6}})), Labels{1, 1});
    EXPECT_NEAR(one.value().item(), two.value().item(), 1e-15);
}

TEST(DiscriminatorObjective, ClampsZeroProbabilities) {
    Tape t;
    Var v = acgan_discriminator_objective(t.constant(col({0.0})), t.constant(col({1.0})),
                                          t.constant(Tensor::matrix({{0.0, 1.0}})), Labels{0},
                                          t.constant(Tensor::matrix({{1.0, 0.0}})), Labels{1});
    EXPECT_NEAR(v.value().item(), 4.0 * std::log(1e-12), 1e-9);
}

TEST(GeneratorObjective, Examples) {
    Tape t;
    Var half = acgan_generator_objective(t.constant(col({0.5})), t.constant(Tensor::matrix({{0.5, 0.5}})), Labels{1});
    EXPECT_NEAR(half.value().item(), 2.0 * std::log(0.5), 1e-15);
    EXPECT_NEAR(half.value().item(), -1.3863, 1e-4);
    Var sure = acgan_generator_objective(t.constant(col({1.0})), t.constant(Tensor::matrix({{0.0, 1.0}})), Labels{1});
    EXPECT_EQ(sure.value().item(), 0.0);
    Var a = acgan_generator_objective(t.constant(col({0.3, 0.8})), t.constant(Tensor::matrix({{0.2, 0.8}, {0.6, 0.4}})),
                                      Labels{0, 1});
    Var b = acgan_generator_objective(t.constant(col({0.3, 0.8, 0.3, 0.8})),
                                      t.constant(Tensor::matrix({{0.2, 0.8}, {0.6, 0.4}, {0.2, 0.8}, {0.6, 0.4}})),
                                      Labels{0, 1, 0, 1});
    EXPECT_NEAR(a.value().item(), b.value().item(), 1e-15);
}

TEST(Losses, EmptyBatchesAreContractErrors) {
    Tape t;
    Var p = t.constant(Tensor(Shape{0, 1}));
    Var c = t.constant(Tensor(Shape{0, 2}));
    EXPECT_THROW(acgan_generator_objective(p, c, Labels{}), ContractError);
    EXPECT_THROW(acgan_discriminator_objective(p, p, c, Labels{}, c, Labels{}), ContractError);
}

namespace {

struct LossFixture {
    ModelDims d = small_dims();
    SeededRng rng{21};
    Generator g{d, rng};
    Discriminator disc{d, rng};
    GaussianPolicy pol{d, rng};
    Tensor z = latents(6, d.latent_dim, rng);
    Labels y{0, 1, 2, 0, 1, 2};
    std::vector<double> r{0.3, 1.2, 0.0, 2.0, 0.7, 1.1};
};

}  // namespace

TEST(ActiveGanObjective, LambdaZeroAndZeroRewardsReduceToAcgan) {
    LossFixture f;
    Tape t;
    const auto db = f.disc.params().bind(t, false);
    const auto pb = f.pol.params().bind(t, false);
    Var zv = t.constant(f.z);
    Var fake = f.g.forward(f.g.params().bind(t, false), zv, f.y);
    const double acgan = generator_acgan_loss(f.disc, db, fake, f.y).value().item();
    RewardConfig zero;
    zero.lambda = 0.0;
    EXPECT_EQ(activegan_generator_loss(f.disc, db, f.pol, pb, fake, zv, f.y, f.r, zero).total.value().item(), acgan);
    RewardConfig c;
    EXPECT_EQ(activegan_generator_loss(f.disc, db, f.pol, pb, fake, zv, f.y, std::vector<double>(6, 0.0), c)
                  .total.value()
                  .item(),
              acgan);
}

TEST(ActiveGanObjective, EqualsIndependentComponentSum) {
    LossFixture f;
    Tape t;
    const auto db = f.disc.params().bind(t, false);
    const auto pb = f.pol.params().bind(t, false);
    Var zv = t.constant(f.z);
    Var fake = f.g.forward(f.g.params().bind(t, false), zv, f.y);
    RewardConfig c;
    const double total = activegan_generator_loss(f.disc, db, f.pol, pb, fake, zv, f.y, f.r, c).total.value().item();

    // Recompute both parts from raw network outputs.
    const Tensor x = fake.value();
    const auto out = f.disc.forward(db, t.constant(x));
    double acgan = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        acgan += (std::log(out.p_real.value()[i]) + std::log(out.class_probs.value().at(i, f.y[i]))) / 6.0;
    }
    const auto po = f.pol.forward(pb, t.constant(x));
    double unc = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<double> mu(3), ls(3), zz(3);
        for (std::size_t k = 0; k < 3; ++k) {
            mu[k] = po.mean.value().at(i, k);
            ls[k] = po.log_std.value().at(i, k);
            zz[k] = f.z.at(i, k);
        }
        unc += f.r[i] * ref_gaussian_log_density(mu, ls, zz) / 6.0;
    }
    EXPECT_NEAR(total, acgan + 0.1 * unc, 1e-12);
}

TEST(ActiveGanObjective, ReplayIsSizeWeighted) {
    LossFixture f;
    Tape t;
    const auto db = f.disc.params().bind(t, false);
    const auto pb = f.pol.params().bind(t, false);
    Var zv = t.constant(f.z);
    Var fake = f.g.forward(f.g.params().bind(t, false), zv, f.y);
    std::vector<GeneratedSample> replay(3);
    for (auto& s : replay) {
        s.x = {f.rng.normal(), f.rng.normal()};
        s.z = {f.rng.normal(), f.rng.normal(), f.rng.normal()};
        s.r = f.rng.uniform(0, 2);
    }
    RewardConfig c;
    const auto obj = activegan_generator_loss(f.disc, db, f.pol, pb, fake, zv, f.y, f.r, c, replay);
    const double fresh = uncertainty_loss(f.pol, pb, fake, zv, f.r).value().item();
    const double old = uncertainty_loss(f.pol, pb, replay).value().item();
    EXPECT_NEAR(obj.uncertainty.value().item(), (6.0 * fresh + 3.0 * old) / 9.0, 1e-12);
}

TEST(ActiveGanObjective, GradientMatchesFiniteDifferences) {
    const ModelDims d = small_dims();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        SeededRng rng(40 + seed);
        Generator g(d, rng);
        Discriminator disc(d, rng);
        GaussianPolicy pol(d, rng);
        randomize_biases(g.params(), rng);
        randomize_biases(disc.params(), rng);
        randomize_biases(pol.params(), rng);
        const Tensor z = latents(5, d.latent_dim, rng);
        const Labels y{0, 1, 2, 1, 0};
        const std::vector<double> r{0.5, 1.5, 0.2, 2.5, 1.0};
        auto ptrs = g.params().pointers();
        const std::size_t ng = ptrs.size();
        for (Tensor* p : pol.params().pointers()) ptrs.push_back(p);
        const auto res = check_gradients(ptrs, [&](Tape& t, const std::vector<Var>& p) {
            const std::vector<Var> gp(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(ng));
            const std::vector<Var> pp(p.begin() + static_cast<std::ptrdiff_t>(ng), p.end());
            Var zc = t.constant(z);
            const auto db = disc.params().bind(t, false);
            return activegan_generator_loss(disc, db, pol, pp, g.forward(gp, zc, y), zc, y, r, RewardConfig{}).total;
        });
        EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed;
    }
}

// ---- buffer and filter ---------------------------------------------------

TEST(SampleBuffer, FifoKeepsLastSamplesInOrder) {
    for (std::size_t n : {0u, 3u, 5u, 12u}) {
        SampleBuffer b(5);
        for (std::size_t i = 0; i < n; ++i) b.push(tagged(static_cast<double>(i)));
        ASSERT_EQ(b.size(), std::min<std::size_t>(n, 5));
        const std::size_t first = n > 5 ? n - 5 : 0;
        for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i].x[0], static_cast<double>(first + i));
    }
    EXPECT_THROW(SampleBuffer(0), ContractError);
    SampleBuffer empty(3);
    SeededRng rng(0);
    EXPECT_THROW(empty.sample(1, rng), ContractError);
}

TEST(MarginFilter, ThresholdsAndBruteForce) {
    SeededRng rng(30);
    std::vector<GeneratedSample> pool;
    for (int i = 0; i < 500; ++i) {
        auto s = tagged(i);
        s.u_m = rng.uniform();
        pool.push_back(s);
    }
    pool[7].u_m = 0.0;
    EXPECT_EQ(margin_filter(pool, 1.0).size(), pool.size());
    const auto tied = margin_filter(pool, 0.0);
    ASSERT_EQ(tied.size(), 1u);
    EXPECT_EQ(tied[0].x[0], 7.0);
    const auto kept = margin_filter(pool, 0.2);
    std::vector<double> ids;
    for (const auto& s : pool) {
        if (s.u_m <= 0.2) ids.push_back(s.x[0]);
    }
    ASSERT_EQ(kept.size(), ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(kept[i].x[0], ids[i]);
    EXPECT_THROW(margin_filter(pool, 1.1), ContractError);
}

TEST(MarginFilter, IndicesOverPosteriors) {
    SeededRng rng(31);
    Tensor p(Shape{300, 3});
    for (std::size_t i = 0; i < 300; ++i) {
        const auto d = random_distribution(3, rng);
        for (std::size_t k = 0; k < 3; ++k) p.at(i, k) = d[k];
    }
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < 300; ++i) {
        std::vector<double> row{p.at(i, 0), p.at(i, 1), p.at(i, 2)};
        if (ref_margin(row) <= 0.2) expect.push_back(i);
    }
    EXPECT_EQ(margin_filter_indices(p, 0.2), expect);
}

// ---- training loop -------------------------------------------------------

namespace {

const LabeledDataset& loop_data() {
    static const LabeledDataset d = toy_data(2, 20);
    return d;
}

}  // namespace

TEST(TrainLoop, TraceShapeAndFiniteness) {
    const auto cfg = tiny_train_config(40);
    std::size_t observed = 0;
    const auto run = train_activegan(loop_data(), cfg, [&](const TraceRow&) { ++observed; });
    ASSERT_EQ(run.trace.size(), cfg.iterations);
    EXPECT_EQ(observed, cfg.iterations);
    for (std::size_t i = 0; i < run.trace.size(); ++i) {
        const auto& r = run.trace[i];
        EXPECT_EQ(r.iteration, i);
        EXPECT_TRUE(std::isfinite(r.loss_d) && std::isfinite(r.loss_g_acgan) && std::isfinite(r.loss_unc));
        if (i < cfg.warmup) EXPECT_EQ(r.loss_unc, 0.0);
    }
    EXPECT_EQ(run.samples.size(), cfg.final_samples);
}

TEST(TrainLoop, BufferLengthAfterWarmup) {
    for (std::size_t capacity : {64u, 1000u}) {
        auto cfg = tiny_train_config(20);
        cfg.warmup = 6;
        cfg.buffer_capacity = capacity;
        const auto run = train_activegan(loop_data(), cfg);
        EXPECT_EQ(run.trace[cfg.warmup - 1].buffer_len, std::min(capacity, cfg.warmup * cfg.batch_size));
        EXPECT_EQ(run.final_buffer_len, std::min(capacity, cfg.iterations * cfg.batch_size));
    }
}

TEST(TrainLoop, UpdateCountsFollowRatio) {
    auto cfg = tiny_train_config(40);
    cfg.discriminator_ratio = 3;
    const auto run = train_activegan(loop_data(), cfg);
    EXPECT_EQ(run.generator_updates, 40u);
    EXPECT_EQ(run.discriminator_updates, 13u);
    EXPECT_EQ(run.policy_updates, 40u - cfg.warmup);
    cfg.mode = GanMode::acgan;
    EXPECT_EQ(train_activegan(loop_data(), cfg).policy_updates, 0u);
}

TEST(TrainLoop, RewardPlumbingIsExact) {
    auto cfg = tiny_train_config(30);
    cfg.reward.epsilon = 0.5;
    cfg.reward.truncated = 0.05;
    cfg.final_samples = 300;
    const auto run = train_activegan(loop_data(), cfg);
    for (const auto& s : run.samples) {
        EXPECT_EQ(s.r, ref_reward(s.u_m, s.u_le, cfg.reward));
        const auto p = run.classifier.predict_proba(s.x);
        EXPECT_EQ(s.u_m, smallest_margin(p));
    }
}

TEST(TrainLoop, LambdaZeroMatchesAcgan) {
    auto cfg = tiny_train_config(100);
    cfg.reward.lambda = 0.0;
    const auto active = train_activegan(loop_data(), cfg);
    cfg.mode = GanMode::acgan;
    const auto plain = train_activegan(loop_data(), cfg);
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
        EXPECT_NEAR(active.trace[i].loss_d, plain.trace[i].loss_d, 1e-12);
        EXPECT_NEAR(active.trace[i].loss_g_acgan, plain.trace[i].loss_g_acgan, 1e-12);
    }
    EXPECT_EQ(active.generator.params().tensors, plain.generator.params().tensors);
}

TEST(TrainLoop, DeterministicUnderSeed) {
    const auto cfg = tiny_train_config(30);
    const auto a = train_activegan(loop_data(), cfg);
    const auto b = train_activegan(loop_data(), cfg);
    for (std::size_t i = 0; i < cfg.iterations; ++i) EXPECT_EQ(trace_csv_row(a.trace[i]), trace_csv_row(b.trace[i]));
    EXPECT_EQ(a.generator.params().tensors, b.generator.params().tensors);
    auto other = cfg;
    other.seed = 99;
    EXPECT_NE(train_activegan(loop_data(), other).trace[5].loss_d, a.trace[5].loss_d);
}

TEST(TrainLoop, InvalidConfigIsContractError) {
    auto cfg = tiny_train_config(10);
    cfg.warmup = 10;
    EXPECT_THROW(train_activegan(loop_data(), cfg), ContractError);
    cfg = tiny_train_config(10);
    cfg.buffer_capacity = 4;
    EXPECT_THROW(train_activegan(loop_data(), cfg), ContractError);
    cfg = tiny_train_config(10);
    cfg.discriminator_ratio = 0;
    EXPECT_THROW(train_activegan(loop_data(), cfg), ContractError);
}

TEST(TrainLoop, DivergenceReportsIterationAndCheckpoint) {
    const auto dir = temp_dir("divergence");
    auto cfg = tiny_train_config(40);
    cfg.lr_discriminator = 1e305;
    cfg.lr_generator = 1e305;
    cfg.checkpoint_interval = 1;
    cfg.checkpoint_path = (dir / "ckpt.agan").string();
    try {
        train_activegan(loop_data(), cfg);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_LT(e.iteration(), cfg.iterations);
        EXPECT_NE(std::string(e.what()).find("ckpt.agan"), std::string::npos);
        if (e.iteration() > 0) EXPECT_NO_THROW(models_from_checkpoint(read_container(cfg.checkpoint_path)));
    }
}

TEST(Checkpoint, RoundTripPreservesModels) {
    const auto dir = temp_dir("checkpoint");
    const auto run = train_activegan(loop_data(), tiny_train_config(20));
    const auto path = (dir / "m.agan").string();
    write_container(path, checkpoint_tensors(run.dims, run.generator, run.discriminator, run.policy, run.classifier));
    const auto m = models_from_checkpoint(read_container(path));
    EXPECT_EQ(m.generator.params().tensors, run.generator.params().tensors);
    EXPECT_EQ(m.discriminator.params().tensors, run.discriminator.params().tensors);
    EXPECT_EQ(m.policy.params().tensors, run.policy.params().tensors);
    EXPECT_EQ(m.classifier.predict_proba(loop_data().features), run.classifier.predict_proba(loop_data().features));
    SeededRng a(3), b(3);
    const auto sa = generate_samples(m.generator, m.classifier, m.policy, 20, RewardConfig{}, a);
    const auto sb = generate_samples(run.generator, run.classifier, run.policy, 20, RewardConfig{}, b);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(sa[i].x, sb[i].x);
        EXPECT_EQ(sa[i].log_lik, sb[i].log_lik);
    }
}

TEST(Checkpoint, BadMetadataIsFormatError) {
    const auto run = train_activegan(loop_data(), tiny_train_config(12));
    auto t = checkpoint_tensors(run.dims, run.generator, run.discriminator, run.policy, run.classifier);
    t[0].second[0] = 0.5;
    EXPECT_THROW(models_from_checkpoint(t), FormatError);
    NamedTensors missing(t.begin() + 1, t.end());
    EXPECT_THROW(models_from_checkpoint(missing), FormatError);
}

TEST(GenerateSamples, ClassCountAndErrors) {
    const auto run = train_activegan(loop_data(), tiny_train_config(12));
    SeededRng rng(4);
    EXPECT_TRUE(generate_samples(run.generator, run.classifier, run.policy, 0, RewardConfig{}, rng).empty());
    const auto fixed = generate_samples(run.generator, run.classifier, run.policy, 50, RewardConfig{}, rng, 2);
    for (const auto& s : fixed) {
        EXPECT_EQ(s.y, 2u);
        EXPECT_TRUE(std::isfinite(s.x[0]) && std::isfinite(s.x[1]) && std::isfinite(s.log_lik));
    }
    EXPECT_THROW(generate_samples(run.generator, run.classifier, run.policy, 5, RewardConfig{}, rng, 3), ContractError);
}
