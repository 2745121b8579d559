#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mcd/denoiser.hpp"
#include "mcd/loss.hpp"
#include "oracles.hpp"

using namespace mcd;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab = 5;
    c.context = 4;
    c.width = 8;
    c.depth = 1;
    c.heads = 2;
    return c;
}

std::vector<TokenSequence> tiny_batch(const ModelConfig& c) {
    std::vector<TokenSequence> b;
    TokenSequence s1;
    s1.vocab = c.vocab;
    s1.ids = {0, 4, 2, 4}; // 4 = mask
    TokenSequence s2;
    s2.vocab = c.vocab;
    s2.ids = {3, 1, 4, 0};
    b.push_back(s1);
    b.push_back(s2);
    return b;
}

} // namespace

TEST_CASE("forward shape, determinism and entropy bound", "[denoiser]") {
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 7);
    CHECK(m.p.count() < 1000); // tiny enough for finite differences
    const auto batch = tiny_batch(c);
    const LogitsBatch a = forward(m, batch);
    const LogitsBatch b = forward(m, batch);
    CHECK(a.values == b.values); // bit-identical
    CHECK(a.values.rows() == 8);
    CHECK(a.values.cols() == c.vocab - 1); // mask never predicted
    CHECK(a.values.allFinite());
    for (int r = 0; r < a.values.rows(); ++r) {
        Eigen::RowVectorXd lp;
        Eigen::RowVectorXd row = a.values.row(r);
        const double mx = row.maxCoeff();
        Eigen::RowVectorXd p = (row.array() - mx).exp();
        p /= p.sum();
        double h = 0.0;
        for (int k = 0; k < p.size(); ++k) h -= p(k) * std::log(p(k));
        CHECK(h <= std::log(double(c.vocab - 1)) + 1e-12);
        CHECK(p.sum() == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("forward rejects malformed input", "[denoiser]") {
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 7);
    auto batch = tiny_batch(c);
    batch[0].ids[1] = 5; // out of range
    CHECK_THROWS_AS(forward(m, batch), std::invalid_argument);
    auto short_batch = tiny_batch(c);
    short_batch[0].ids.pop_back();
    CHECK_THROWS_AS(forward(m, short_batch), std::invalid_argument);
}

TEST_CASE("vocabulary relabeling equivariance", "[denoiser]") {
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 21);
    // permutation over clean tokens only; mask id stays fixed
    const std::vector<int> perm = {2, 0, 3, 1};
    DenoiserModel pm = m;
    for (int v = 0; v < c.vocab - 1; ++v) {
        pm.p.emb.row(perm[std::size_t(v)]) = m.p.emb.row(v);
        pm.p.w_out.col(perm[std::size_t(v)]) = m.p.w_out.col(v);
        pm.p.b_out(perm[std::size_t(v)], 0) = m.p.b_out(v, 0);
    }
    auto batch = tiny_batch(c);
    auto relabeled = batch;
    for (auto& s : relabeled) {
        for (auto& id : s.ids) {
            if (id != s.mask_id()) id = perm[std::size_t(id)];
        }
    }
    const LogitsBatch base = forward(m, batch);
    const LogitsBatch permuted = forward(pm, relabeled);
    for (int r = 0; r < base.values.rows(); ++r) {
        for (int v = 0; v < c.vocab - 1; ++v) {
            CHECK(permuted.values(r, perm[std::size_t(v)]) ==
                  Catch::Approx(base.values(r, v)).margin(1e-12));
        }
    }
}

TEST_CASE("gradients match central finite differences on all variants", "[denoiser]") {
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 3);
    const auto z = tiny_batch(c);
    const auto x0 = [&] {
        auto b = tiny_batch(c);
        b[0].ids = {0, 1, 2, 3};
        b[1].ids = {3, 1, 2, 0};
        return b;
    }();
    std::vector<MaskIndicator> m_t(2), m_s(2), masked(2);
    m_t[0].m = {0, 1, 1, 1};
    m_s[0].m = {0, 1, 0, 0};
    m_t[1].m = {1, 0, 1, 1};
    m_s[1].m = {0, 0, 1, 0};
    masked[0].m = {0, 1, 0, 1};
    masked[1].m = {0, 0, 1, 0};
    const std::vector<double> weights = {2.0, 0.7};
    const DenoiserModel teacher = init_model(c, 77);
    const LogitsBatch teacher_logits = forward(teacher, z);

    SECTION("pretrain_ce") {
        LossSpec spec;
        spec.kind = LossKind::pretrain_ce;
        spec.x0 = &x0;
        spec.masked = &masked;
        spec.time_weight = &weights;
        CHECK(oracle::max_rel_grad_error(m, z, spec) < 1e-3);
    }
    SECTION("hybrid") {
        LossSpec spec;
        spec.kind = LossKind::hybrid;
        spec.x0 = &x0;
        spec.teacher = &teacher_logits;
        spec.m_t = &m_t;
        spec.m_s = &m_s;
        spec.tau = 0.9;
        CHECK(oracle::max_rel_grad_error(m, z, spec) < 1e-3);
    }
    SECTION("kl_fwd") {
        LossSpec spec;
        spec.kind = LossKind::kl_fwd;
        spec.x0 = &x0;
        spec.teacher = &teacher_logits;
        spec.m_t = &m_t;
        spec.m_s = &m_s;
        spec.tau = 0.96;
        CHECK(oracle::max_rel_grad_error(m, z, spec) < 1e-3);
    }
    SECTION("kl_bwd") {
        LossSpec spec;
        spec.kind = LossKind::kl_bwd;
        spec.x0 = &x0;
        spec.teacher = &teacher_logits;
        spec.m_t = &m_t;
        spec.m_s = &m_s;
        spec.tau = 0.96;
        CHECK(oracle::max_rel_grad_error(m, z, spec) < 1e-3);
    }
}

TEST_CASE("zero-weight batch gives zero loss and zero gradient", "[denoiser]") {
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 3);
    const auto z = tiny_batch(c);
    const auto x0 = tiny_batch(c);
    std::vector<MaskIndicator> none(2);
    none[0].m = {0, 0, 0, 0};
    none[1].m = {0, 0, 0, 0};
    const std::vector<double> weights = {1.0, 1.0};
    LossSpec spec;
    spec.kind = LossKind::pretrain_ce;
    spec.x0 = &x0;
    spec.masked = &none;
    spec.time_weight = &weights;
    const auto [value, grads] = loss_and_gradient(m, z, spec);
    CHECK(value.total == 0.0);
    double gn = 0.0;
    grads.for_each([&](const std::string&, const Matrix& g) { gn += g.squaredNorm(); });
    CHECK(gn == 0.0);
}

TEST_CASE("duplicated batch rows keep the same loss (mean reduction)", "[denoiser]") {
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 3);
    std::vector<TokenSequence> z1 = {tiny_batch(c)[0]};
    std::vector<TokenSequence> z2 = {z1[0], z1[0]};
    std::vector<TokenSequence> x1 = {tiny_batch(c)[1]};
    std::vector<TokenSequence> x2 = {x1[0], x1[0]};
    std::vector<MaskIndicator> m1(1), m2(2);
    m1[0].m = {1, 0, 1, 1};
    m2[0].m = m1[0].m;
    m2[1].m = m1[0].m;
    const std::vector<double> w1 = {1.3}, w2 = {1.3, 1.3};
    LossSpec s1;
    s1.kind = LossKind::pretrain_ce;
    s1.x0 = &x1;
    s1.masked = &m1;
    s1.time_weight = &w1;
    LossSpec s2 = s1;
    s2.x0 = &x2;
    s2.masked = &m2;
    s2.time_weight = &w2;
    const double l1 = loss_and_dlogits(forward(m, z1), s1, nullptr).total;
    const double l2 = loss_and_dlogits(forward(m, z2), s2, nullptr).total;
    CHECK(l1 == Catch::Approx(l2).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit-exact", "[denoiser]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mcd_ckpt_test";
    fs::create_directories(dir);
    const ModelConfig c = tiny_config();
    const DenoiserModel m = init_model(c, 99);
    const std::string p1 = (dir / "a.mcd").string();
    const std::string p2 = (dir / "b.mcd").string();
    save_checkpoint(m, p1);
    const DenoiserModel loaded = load_checkpoint(p1);
    CHECK(loaded.config == m.config);
    CHECK(params_hash(loaded.p) == params_hash(m.p));
    save_checkpoint(loaded, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2); // save -> load -> save is byte-identical
    CHECK(!b1.empty());
    fs::remove_all(dir);
}

TEST_CASE("checkpoint load errors are structured", "[denoiser]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mcd_ckpt_err";
    fs::create_directories(dir);
    const std::string good = (dir / "good.mcd").string();
    const DenoiserModel m = init_model(tiny_config(), 1);
    save_checkpoint(m, good);

    // wrong magic
    {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bytes[0] = 'X';
        std::ofstream out((dir / "magic.mcd").string(), std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS_WITH(load_checkpoint((dir / "magic.mcd").string()),
                      Catch::Matchers::ContainsSubstring("magic"));

    // truncated payload
    {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() - 17);
        std::ofstream out((dir / "trunc.mcd").string(), std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.mcd").string()), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.mcd").string()), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint header declares the parameter count", "[denoiser]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mcd_ckpt_count";
    fs::create_directories(dir);
    const DenoiserModel m = init_model(tiny_config(), 1);
    const std::string path = (dir / "m.mcd").string();
    save_checkpoint(m, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string needle = "param_count=" + std::to_string(m.p.count());
    CHECK(bytes.find(needle) != std::string::npos);
    fs::remove_all(dir);
}
