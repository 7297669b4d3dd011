#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "chn/chn_model.hpp"
#include "chn/pvae.hpp"
#include "chn/synthetic.hpp"
#include "test_util.hpp"

using namespace chn;

namespace {

ChnConfig tiny_chn_config() {
    ChnConfig cfg;
    cfg.point_dim = 6;
    cfg.f_hidden = {7};
    cfg.context_dim = 5;
    cfg.g_hidden = {8};
    cfg.meta_dim = 3;
    cfg.h_hidden = {4};
    cfg.pred_hidden = {10};
    return cfg;
}

// Owns the latent/decoder vectors that episode spans point into.
struct EpisodeFixture {
    std::vector<std::vector<double>> zs, ds;
    ChnEpisode ep;

    EpisodeFixture(std::uint64_t seed, std::size_t latent, std::size_t d_dim, std::size_t n_ctx,
                   std::size_t n_tgt, Link link, std::size_t meta_in) {
        Rng rng(seed, 42);
        ep.feature = 0;
        ep.link = link;
        for (std::size_t i = 0; i < n_ctx; ++i) {
            zs.emplace_back();
            for (std::size_t d = 0; d < latent; ++d) zs.back().push_back(rng.normal() * 0.5);
        }
        for (std::size_t i = 0; i < n_ctx; ++i) {
            const double x = link == Link::kSigmoid ? double(rng.below(2)) : rng.uniform();
            ep.context.push_back({i, zs[i], x});
        }
        for (std::size_t i = 0; i < n_tgt; ++i) {
            ds.emplace_back();
            for (std::size_t d = 0; d < d_dim; ++d) ds.back().push_back(rng.normal() * 0.5);
        }
        for (std::size_t i = 0; i < n_tgt; ++i) {
            const double x = link == Link::kSigmoid ? double(rng.below(2)) : rng.uniform();
            ep.targets.push_back({100 + i, ds[i], x});
        }
        for (std::size_t i = 0; i < meta_in; ++i) ep.meta_input.push_back(i == 0 ? 1.0 : 0.0);
    }
};

}  // namespace

TEST_CASE("encode_context") {
    Rng rng(3, stream::kChnInit);
    ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);

    SECTION("empty context encodes g(0)") {
        EpisodeFixture fx(1, 4, 5, 0, 0, Link::kSigmoid, 2);
        auto c = encode_context(chn, fx.ep);
        REQUIRE(c.size() == chn.context_dim());
        for (double v : c) REQUIRE(std::isfinite(v));
        auto g0 = mlp_forward(chn.g_net, std::vector<double>(chn.f_net.out_dim(), 0.0));
        REQUIRE(c == g0);
    }
    SECTION("permutation invariance is bit-exact") {
        EpisodeFixture fx(2, 4, 5, 5, 0, Link::kSigmoid, 2);
        auto c1 = encode_context(chn, fx.ep);
        std::reverse(fx.ep.context.begin(), fx.ep.context.end());
        auto c2 = encode_context(chn, fx.ep);
        std::swap(fx.ep.context[0], fx.ep.context[2]);
        auto c3 = encode_context(chn, fx.ep);
        REQUIRE(c1 == c2);
        REQUIRE(c1 == c3);
    }
    SECTION("duplicating a context row changes the sum") {
        EpisodeFixture fx(3, 4, 5, 2, 0, Link::kSigmoid, 2);
        auto c1 = encode_context(chn, fx.ep);
        auto dup = fx.ep;
        dup.context.push_back(fx.ep.context[0]);
        auto c2 = encode_context(chn, dup);
        // f output for the duplicated point is nonzero under random init
        REQUIRE(c1 != c2);
    }
}

TEST_CASE("encode_metadata") {
    Rng rng(4, stream::kChnInit);
    ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 3, rng);

    SECTION("all-zero tags with zero-initialized biases give zero embedding") {
        std::vector<double> zero_meta(3, 0.0);
        auto m = encode_metadata(chn, zero_meta);
        for (double v : m) REQUIRE(v == 0.0);  // biases init to 0, input 0
    }
    SECTION("identical metadata gives identical embeddings") {
        std::vector<double> meta = {1.0, 0.0, 1.0};
        REQUIRE(encode_metadata(chn, meta) == encode_metadata(chn, meta));
    }
    SECTION("length mismatch throws") {
        std::vector<double> bad = {1.0};
        REQUIRE_THROWS_AS(encode_metadata(chn, bad), std::invalid_argument);
    }
    SECTION("no-metadata mode returns the zero vector") {
        ChnParams plain = make_chn(tiny_chn_config(), 4, 5, 0, rng);
        REQUIRE_FALSE(plain.use_metadata);
        std::vector<double> empty;
        auto m = encode_metadata(plain, empty);
        REQUIRE(m == std::vector<double>(plain.meta_dim, 0.0));
        // predict_head consumes [c ; 0] and works
        EpisodeFixture fx(5, 4, 5, 2, 0, Link::kSigmoid, 0);
        auto h = predict_head(plain, fx.ep);
        REQUIRE(h.w.size() == 5);
    }
}

TEST_CASE("predict_head") {
    Rng rng(6, stream::kChnInit);
    ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);

    SECTION("zero-initialized final layer emits the neutral head") {
        EpisodeFixture fx(7, 4, 5, 3, 0, Link::kSigmoid, 2);
        auto h = predict_head(chn, fx.ep);
        REQUIRE(h.w == std::vector<double>(5, 0.0));
        REQUIRE(h.b == 0.0);
        REQUIRE(h.link == Link::kSigmoid);
    }
    SECTION("deterministic: same inputs give identical parameters") {
        // give pred_net a nonzero final layer
        Rng r2(8, stream::kChnInit);
        chn.pred_net.layers.back().W = xavier_init(chn.pred_net.layers.back().W.cols,
                                                   chn.pred_net.layers.back().W.rows, r2);
        EpisodeFixture fx(9, 4, 5, 4, 0, Link::kIdentity, 2);
        auto h1 = predict_head(chn, fx.ep);
        auto h2 = predict_head(chn, fx.ep);
        REQUIRE(h1.w == h2.w);
        REQUIRE(h1.b == h2.b);

        // and bit-identical under context permutation
        std::reverse(fx.ep.context.begin(), fx.ep.context.end());
        auto h3 = predict_head(chn, fx.ep);
        REQUIRE(h1.w == h3.w);
        REQUIRE(h1.b == h3.b);
    }
}

TEST_CASE("meta_loss") {
    SECTION("neutral head on binary targets gives -ln 2") {
        Rng rng(10, stream::kChnInit);
        ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);  // final layer zero
        EpisodeFixture fx(11, 4, 5, 3, 6, Link::kSigmoid, 2);
        std::vector<ChnEpisode> batch = {fx.ep};
        const double l = meta_loss(chn, batch, 0.1);
        REQUIRE_THAT(l, Catch::Matchers::WithinAbs(-std::log(2.0), 1e-12));
    }
    SECTION("continuous prediction equal to truth attains the density maximum") {
        Rng rng(12, stream::kChnInit);
        ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);
        EpisodeFixture fx(13, 4, 5, 0, 1, Link::kIdentity, 2);
        fx.ep.targets[0].x = 0.37;
        chn.pred_net.layers.back().b.back() = 0.37;  // b-tilde = truth, w-tilde = 0
        std::vector<ChnEpisode> batch = {fx.ep};
        const double l = meta_loss(chn, batch, 0.1);
        REQUIRE_THAT(l, Catch::Matchers::WithinAbs(-0.5 * std::log(0.2 * std::numbers::pi), 1e-12));
        REQUIRE_THAT(l, Catch::Matchers::WithinAbs(0.23236, 1e-5));
    }
    SECTION("batch loss is the target-count-weighted combination") {
        Rng rng(14, stream::kChnInit);
        ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);
        Rng r2(15, stream::kChnInit);
        chn.pred_net.layers.back().W = xavier_init(chn.pred_net.layers.back().W.cols,
                                                   chn.pred_net.layers.back().W.rows, r2);
        EpisodeFixture a(16, 4, 5, 2, 3, Link::kSigmoid, 2);
        EpisodeFixture b(17, 4, 5, 1, 1, Link::kSigmoid, 2);
        std::vector<ChnEpisode> both = {a.ep, b.ep};
        std::vector<ChnEpisode> only_a = {a.ep}, only_b = {b.ep};
        const double la = meta_loss(chn, only_a, 0.1);
        const double lb = meta_loss(chn, only_b, 0.1);
        const double lab = meta_loss(chn, both, 0.1);
        REQUIRE_THAT(lab, Catch::Matchers::WithinAbs((3.0 * la + 1.0 * lb) / 4.0, 1e-12));
    }
    SECTION("all-empty target sets are invalid") {
        Rng rng(18, stream::kChnInit);
        ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);
        EpisodeFixture fx(19, 4, 5, 3, 0, Link::kSigmoid, 2);
        std::vector<ChnEpisode> batch = {fx.ep};
        REQUIRE_THROWS_AS(meta_loss(chn, batch, 0.1), std::invalid_argument);
    }
    SECTION("psi gradients match finite differences") {
        for (std::uint64_t seed : {20, 21}) {
            Rng rng(seed, stream::kChnInit);
            ChnParams chn = make_chn(tiny_chn_config(), 4, 5, 2, rng);
            // nonzero final layer so gradients reach every net
            Rng r2(seed + 100, stream::kChnInit);
            chn.pred_net.layers.back().W = xavier_init(chn.pred_net.layers.back().W.cols,
                                                       chn.pred_net.layers.back().W.rows, r2);
            for (auto& bv : chn.pred_net.layers.back().b) bv = 0.05;

            EpisodeFixture fa(seed + 1, 4, 5, 3, 4, Link::kSigmoid, 2);
            EpisodeFixture fb(seed + 2, 4, 5, 0, 2, Link::kIdentity, 2);
            std::vector<ChnEpisode> batch = {fa.ep, fb.ep};

            ChnGrads g = zero_grads(chn);
            meta_loss(chn, batch, 0.1, &g);

            TensorList params = collect_psi(chn);
            auto eval = [&]() { return meta_loss(chn, batch, 0.1); };
            auto fd = testutil::finite_diff(params, eval);
            TensorList gl = collect_grads(g, chn.use_metadata);
            auto analytic = flatten(gl);
            REQUIRE(testutil::max_rel_error(analytic, fd) < 1e-4);
        }
    }
}

TEST_CASE("meta_train on a small synthetic benchmark") {
    SyntheticConfig scfg;
    scfg.n_rows = 150;
    scfg.n_features = 14;
    scfg.rank = 2;
    scfg.obs_prob = 0.45;
    scfg.kind = FeatureKind::kBinary;
    scfg.n_tag_groups = 2;
    Rng srng(30, stream::kSynth);
    auto data = generate_synthetic(scfg, srng);
    Rng split_rng(2, stream::kSplit);
    auto split = split_features(14, {0.5, 0.35, 0.15}, SplitMode::kRandom, &split_rng);

    PvaeConfig pcfg;
    pcfg.e_dim = 6;
    pcfg.set_dim = 6;
    pcfg.latent_dim = 4;
    pcfg.point_hidden = {6};
    pcfg.enc_hidden = {8};
    pcfg.dec_hidden = {8};
    pcfg.d_dim = 6;
    Rng init(3, stream::kBaseInit);
    PvaeModel base = make_pvae(pcfg, 14, init);
    attach_heads(base, split.train, data.ds.kinds, init);
    TrainBaseConfig tcfg;
    tcfg.epochs = 80;
    tcfg.batch_size = 50;
    tcfg.kl_warmup_epochs = 30;
    train_base(base, data.ds, split.train, tcfg, 4);
    freeze(base);
    const auto h0 = theta0_hash(base);

    const auto train_mask = feature_mask(split.train, 14);
    auto cache = build_row_cache(base, data.ds, train_mask);

    ChnConfig ccfg = tiny_chn_config();
    Rng crng(5, stream::kChnInit);
    ChnParams chn = make_chn(ccfg, base.latent_dim(), base.d_dim(), data.meta.input_dim(), crng);

    SECTION("zero epochs leave psi unchanged") {
        const auto before = psi_hash(chn);
        MetaTrainConfig mcfg;
        mcfg.epochs = 0;
        auto trace = meta_train(chn, base, data.ds, split.meta_train, cache, &data.meta, mcfg, 6);
        REQUIRE(trace.empty());
        REQUIRE(psi_hash(chn) == before);
    }
    SECTION("training improves l(psi) and never touches theta0") {
        MetaTrainConfig mcfg;
        mcfg.epochs = 60;
        mcfg.feature_batch_size = 4;
        mcfg.lr = 2e-3;
        auto trace = meta_train(chn, base, data.ds, split.meta_train, cache, &data.meta, mcfg, 6);
        REQUIRE(trace.size() == 60);
        REQUIRE(trace.back() > trace.front());
        REQUIRE(theta0_hash(base) == h0);
    }
    SECTION("unfrozen base is a contract violation") {
        PvaeModel thawed = base;
        thawed.frozen = false;
        MetaTrainConfig mcfg;
        REQUIRE_THROWS_AS(meta_train(chn, thawed, data.ds, split.meta_train, cache, &data.meta, mcfg, 6),
                          ContractViolation);
    }
}
