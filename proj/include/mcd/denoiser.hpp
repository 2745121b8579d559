#pragma once

// Trainable denoiser x_hat(z): a small bidirectional transformer mapping
// a partially masked sequence to per-position logits over the clean
// vocabulary (K-1 outputs; the mask token is never predicted). No time
// input: the mask pattern itself carries the noise level.
//
// Backpropagation is written out by hand; the contract is the
// finite-difference check in the test suite. All math is float64.

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcd/masking.hpp"
#include "mcd/rng.hpp"

namespace mcd {

using Matrix = Eigen::MatrixXd;

struct ModelConfig {
    int vocab = 28;   // K, extended vocabulary (mask id = vocab-1)
    int context = 64; // L
    int width = 64;   // d
    int depth = 2;    // mixing blocks
    int heads = 2;

    int head_dim() const { return width / heads; }
    int clean_vocab() const { return vocab - 1; }

    void validate() const {
        if (vocab < 2 || context < 1 || width < 1 || depth < 0 || heads < 1) {
            throw std::invalid_argument("ModelConfig: nonpositive dimension");
        }
        if (width % heads != 0) {
            throw std::invalid_argument("ModelConfig: width must divide by heads");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
    Matrix ln1_g, ln1_b, ln2_g, ln2_b; // width x 1
    Matrix wq, wk, wv, wo;             // width x width
    Matrix w1;                         // width x 4*width
    Matrix b1;                         // 4*width x 1
    Matrix w2;                         // 4*width x width
    Matrix b2;                         // width x 1
};

struct Params {
    Matrix emb;  // vocab x width
    Matrix pos;  // context x width
    std::vector<BlockParams> blocks;
    Matrix lnf_g, lnf_b; // width x 1
    Matrix w_out;        // width x (vocab-1)
    Matrix b_out;        // (vocab-1) x 1

    /// Visits every parameter array in fixed order with (name, matrix&).
    template <typename Self, typename Fn>
    static void visit(Self& p, Fn&& fn) {
        fn("emb", p.emb);
        fn("pos", p.pos);
        for (std::size_t b = 0; b < p.blocks.size(); ++b) {
            const std::string pre = "blk" + std::to_string(b) + ".";
            auto& blk = p.blocks[b];
            fn(pre + "ln1_g", blk.ln1_g);
            fn(pre + "ln1_b", blk.ln1_b);
            fn(pre + "wq", blk.wq);
            fn(pre + "wk", blk.wk);
            fn(pre + "wv", blk.wv);
            fn(pre + "wo", blk.wo);
            fn(pre + "ln2_g", blk.ln2_g);
            fn(pre + "ln2_b", blk.ln2_b);
            fn(pre + "w1", blk.w1);
            fn(pre + "b1", blk.b1);
            fn(pre + "w2", blk.w2);
            fn(pre + "b2", blk.b2);
        }
        fn("lnf_g", p.lnf_g);
        fn("lnf_b", p.lnf_b);
        fn("w_out", p.w_out);
        fn("b_out", p.b_out);
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        visit(*this, fn);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        visit(*this, fn);
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
        return n;
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
        return ok;
    }
};

struct DenoiserModel {
    ModelConfig config;
    Params p;
};

inline Params zero_params(const ModelConfig& c) {
    Params p;
    p.emb = Matrix::Zero(c.vocab, c.width);
    p.pos = Matrix::Zero(c.context, c.width);
    p.blocks.resize(c.depth);
    for (auto& b : p.blocks) {
        b.ln1_g = Matrix::Zero(c.width, 1);
        b.ln1_b = Matrix::Zero(c.width, 1);
        b.ln2_g = Matrix::Zero(c.width, 1);
        b.ln2_b = Matrix::Zero(c.width, 1);
        b.wq = Matrix::Zero(c.width, c.width);
        b.wk = Matrix::Zero(c.width, c.width);
        b.wv = Matrix::Zero(c.width, c.width);
        b.wo = Matrix::Zero(c.width, c.width);
        b.w1 = Matrix::Zero(c.width, 4 * c.width);
        b.b1 = Matrix::Zero(4 * c.width, 1);
        b.w2 = Matrix::Zero(4 * c.width, c.width);
        b.b2 = Matrix::Zero(c.width, 1);
    }
    p.lnf_g = Matrix::Zero(c.width, 1);
    p.lnf_b = Matrix::Zero(c.width, 1);
    p.w_out = Matrix::Zero(c.width, c.vocab - 1);
    p.b_out = Matrix::Zero(c.vocab - 1, 1);
    return p;
}

/// Scaled-normal init: std 0.02 for embeddings and the output head,
/// Glorot for attention and feed-forward weights, identity layernorm.
inline DenoiserModel init_model(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    DenoiserModel m;
    m.config = c;
    m.p = zero_params(c);
    const RngStream rng(seed, Stream::model_init);
    std::uint64_t array_idx = 0;
    m.p.for_each([&](const std::string& name, Matrix& a) {
        const std::uint64_t ai = array_idx++;
        const bool is_ln =
            name.find("ln1_") != std::string::npos || name.find("ln2_") != std::string::npos ||
            name.find("lnf_") != std::string::npos;
        const bool is_bias = name.find(".b1") != std::string::npos ||
                             name.find(".b2") != std::string::npos || name == "b_out";
        if (is_ln) {
            const bool gain = name.back() == 'g';
            a.setConstant(gain ? 1.0 : 0.0);
            return;
        }
        if (is_bias) {
            a.setZero();
            return;
        }
        double std_dev;
        if (name == "emb" || name == "pos" || name == "w_out") {
            std_dev = 0.02;
        } else {
            std_dev = std::sqrt(2.0 / double(a.rows() + a.cols()));
        }
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            a.data()[i] = std_dev * rng.normal(ai, std::uint64_t(i));
        }
    });
    return m;
}

struct LogitsBatch {
    int batch = 0;
    int length = 0;
    int clean_vocab = 0;
    Matrix values; // (batch*length) x clean_vocab

    auto seq(int b) { return values.middleRows(b * length, length); }
    auto seq(int b) const { return values.middleRows(b * length, length); }
};

namespace detail {

struct LayerNormCache {
    Matrix xhat;            // rows x width
    Eigen::VectorXd rstd;   // rows
};

inline Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b,
                         LayerNormCache& cache) {
    const double eps = 1e-5;
    const Eigen::Index rows = x.rows(), d = x.cols();
    cache.xhat.resize(rows, d);
    cache.rstd.resize(rows);
    Matrix out(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double rstd = 1.0 / std::sqrt(var + eps);
        cache.rstd(r) = rstd;
        cache.xhat.row(r) = (x.row(r).array() - mu) * rstd;
        out.row(r) = cache.xhat.row(r).array() * g.col(0).transpose().array() +
                     b.col(0).transpose().array();
    }
    return out;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                                  const Matrix& g, Matrix& dg, Matrix& db) {
    const Eigen::Index rows = dy.rows(), d = dy.cols();
    db.col(0) += dy.colwise().sum().transpose();
    dg.col(0) += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
    Matrix dx(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        Eigen::RowVectorXd dxhat =
            dy.row(r).array() * g.col(0).transpose().array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat.array() * cache.xhat.row(r).array()).mean();
        dx.row(r) =
            cache.rstd(r) * (dxhat.array() - m1 - cache.xhat.row(r).array() * m2);
    }
    return dx;
}

inline double gelu(double x) { return x * normal_cdf(x); }
inline double gelu_grad(double x) { return normal_cdf(x) + x * normal_pdf(x); }

struct BlockCache {
    Matrix x_in;     // input to the block (pre-LN1)
    LayerNormCache ln1;
    Matrix q, k, v;  // (B*L) x d
    std::vector<Matrix> attn; // softmax weights per (b,h), each L x L
    Matrix attn_cat; // (B*L) x d, heads concatenated, pre-wo
    Matrix resid1;   // x_in + attention output
    LayerNormCache ln2;
    Matrix h_pre;    // (B*L) x 4d, pre-activation
    Matrix h_act;    // gelu(h_pre)
};

struct ForwardCache {
    std::vector<BlockCache> blocks;
    Matrix resid_final;
    LayerNormCache lnf;
    Matrix lnf_out;
};

} // namespace detail

/// Forward pass. Position i attends to the whole sequence; no time input.
/// Pure in (parameters, input): repeated calls are bit-identical.
inline LogitsBatch forward(const DenoiserModel& model,
                           const std::vector<TokenSequence>& batch,
                           detail::ForwardCache* cache = nullptr) {
    const ModelConfig& c = model.config;
    const int B = static_cast<int>(batch.size());
    if (B == 0) throw std::invalid_argument("forward: empty batch");
    const int L = c.context, d = c.width, H = c.heads, dh = c.head_dim();
    const double scale = 1.0 / std::sqrt(double(dh));

    for (const auto& s : batch) {
        if (static_cast<int>(s.size()) != L) {
            throw std::invalid_argument("forward: sequence length must equal context");
        }
        if (s.vocab != c.vocab) throw std::invalid_argument("forward: vocab mismatch");
        s.validate();
    }

    Matrix x(B * L, d);
    for (int b = 0; b < B; ++b) {
        for (int i = 0; i < L; ++i) {
            x.row(b * L + i) = model.p.emb.row(batch[b].ids[i]) + model.p.pos.row(i);
        }
    }

    detail::ForwardCache local;
    detail::ForwardCache& fc = cache ? *cache : local;
    fc.blocks.resize(c.depth);

    for (int blk = 0; blk < c.depth; ++blk) {
        const BlockParams& bp = model.p.blocks[blk];
        detail::BlockCache& bc = fc.blocks[blk];
        bc.x_in = x;
        const Matrix xn = detail::layer_norm(x, bp.ln1_g, bp.ln1_b, bc.ln1);
        bc.q.noalias() = xn * bp.wq;
        bc.k.noalias() = xn * bp.wk;
        bc.v.noalias() = xn * bp.wv;
        bc.attn.assign(std::size_t(B) * H, Matrix());
        bc.attn_cat.resize(B * L, d);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const auto qh = bc.q.block(b * L, h * dh, L, dh);
                const auto kh = bc.k.block(b * L, h * dh, L, dh);
                const auto vh = bc.v.block(b * L, h * dh, L, dh);
                Matrix s = scale * (qh * kh.transpose());
                for (int r = 0; r < L; ++r) {
                    const double mx = s.row(r).maxCoeff();
                    s.row(r) = (s.row(r).array() - mx).exp();
                    s.row(r) /= s.row(r).sum();
                }
                bc.attn[std::size_t(b) * H + h] = s;
                bc.attn_cat.block(b * L, h * dh, L, dh).noalias() = s * vh;
            }
        }
        x = bc.x_in;
        x.noalias() += bc.attn_cat * bp.wo;
        bc.resid1 = x;
        const Matrix xn2 = detail::layer_norm(x, bp.ln2_g, bp.ln2_b, bc.ln2);
        bc.h_pre.noalias() = xn2 * bp.w1;
        bc.h_pre.rowwise() += bp.b1.col(0).transpose();
        bc.h_act = bc.h_pre.unaryExpr([](double v) { return detail::gelu(v); });
        x.noalias() += bc.h_act * bp.w2;
        x.rowwise() += bp.b2.col(0).transpose();
    }

    fc.resid_final = x;
    fc.lnf_out = detail::layer_norm(x, model.p.lnf_g, model.p.lnf_b, fc.lnf);

    LogitsBatch out;
    out.batch = B;
    out.length = L;
    out.clean_vocab = c.clean_vocab();
    out.values.noalias() = fc.lnf_out * model.p.w_out;
    out.values.rowwise() += model.p.b_out.col(0).transpose();
    if (!out.values.allFinite()) {
        throw std::runtime_error("forward: non-finite logits");
    }
    return out;
}

/// Backward pass: gradient of a scalar loss with d(loss)/d(logits) given.
/// Returns parameter gradients shaped like the parameters.
inline Params backward(const DenoiserModel& model,
                       const std::vector<TokenSequence>& batch,
                       const detail::ForwardCache& fc, const Matrix& dlogits) {
    const ModelConfig& c = model.config;
    const int B = static_cast<int>(batch.size());
    const int L = c.context, d = c.width, H = c.heads, dh = c.head_dim();
    const double scale = 1.0 / std::sqrt(double(dh));

    Params g = zero_params(c);

    g.w_out.noalias() = fc.lnf_out.transpose() * dlogits;
    g.b_out.col(0) = dlogits.colwise().sum().transpose();
    Matrix dx = dlogits * model.p.w_out.transpose();
    dx = detail::layer_norm_backward(dx, fc.lnf, model.p.lnf_g, g.lnf_g, g.lnf_b);

    for (int blk = c.depth - 1; blk >= 0; --blk) {
        const BlockParams& bp = model.p.blocks[blk];
        const detail::BlockCache& bc = fc.blocks[blk];
        BlockParams& gb = g.blocks[blk];

        // feed-forward branch
        gb.b2.col(0) = dx.colwise().sum().transpose();
        gb.w2.noalias() = bc.h_act.transpose() * dx;
        Matrix dh_act = dx * bp.w2.transpose();
        Matrix dh_pre =
            dh_act.array() * bc.h_pre.unaryExpr([](double v) { return detail::gelu_grad(v); }).array();
        gb.b1.col(0) = dh_pre.colwise().sum().transpose();
        // recompute ln2 output from cache to avoid storing it
        Matrix xn2 = bc.ln2.xhat;
        for (Eigen::Index r = 0; r < xn2.rows(); ++r) {
            xn2.row(r) = xn2.row(r).array() * bp.ln2_g.col(0).transpose().array() +
                         bp.ln2_b.col(0).transpose().array();
        }
        gb.w1.noalias() = xn2.transpose() * dh_pre;
        Matrix dxn2 = dh_pre * bp.w1.transpose();
        Matrix dresid1 =
            detail::layer_norm_backward(dxn2, bc.ln2, bp.ln2_g, gb.ln2_g, gb.ln2_b);
        dresid1 += dx; // residual connection

        // attention branch
        gb.wo.noalias() = bc.attn_cat.transpose() * dresid1;
        Matrix dattn_cat = dresid1 * bp.wo.transpose();
        Matrix dq(B * L, d), dk(B * L, d), dv(B * L, d);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const Matrix& a = bc.attn[std::size_t(b) * H + h];
                const auto qh = bc.q.block(b * L, h * dh, L, dh);
                const auto kh = bc.k.block(b * L, h * dh, L, dh);
                const auto vh = bc.v.block(b * L, h * dh, L, dh);
                const auto dcat = dattn_cat.block(b * L, h * dh, L, dh);
                Matrix da = dcat * vh.transpose();
                dv.block(b * L, h * dh, L, dh).noalias() = a.transpose() * dcat;
                Matrix ds(L, L);
                for (int r = 0; r < L; ++r) {
                    const double dot = da.row(r).dot(a.row(r));
                    ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
                }
                ds *= scale;
                dq.block(b * L, h * dh, L, dh).noalias() = ds * kh;
                dk.block(b * L, h * dh, L, dh).noalias() = ds.transpose() * qh;
            }
        }
        // recompute ln1 output
        Matrix xn1 = bc.ln1.xhat;
        for (Eigen::Index r = 0; r < xn1.rows(); ++r) {
            xn1.row(r) = xn1.row(r).array() * bp.ln1_g.col(0).transpose().array() +
                         bp.ln1_b.col(0).transpose().array();
        }
        gb.wq.noalias() = xn1.transpose() * dq;
        gb.wk.noalias() = xn1.transpose() * dk;
        gb.wv.noalias() = xn1.transpose() * dv;
        Matrix dxn1 = dq * bp.wq.transpose();
        dxn1.noalias() += dk * bp.wk.transpose();
        dxn1.noalias() += dv * bp.wv.transpose();
        Matrix dx_in =
            detail::layer_norm_backward(dxn1, bc.ln1, bp.ln1_g, gb.ln1_g, gb.ln1_b);
        dx = dx_in + dresid1;
    }

    for (int b = 0; b < B; ++b) {
        for (int i = 0; i < L; ++i) {
            g.emb.row(batch[b].ids[i]) += dx.row(b * L + i);
            g.pos.row(i) += dx.row(b * L + i);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoint format, versioned by the leading magic "MCD1":
//
//   bytes 0..3   "MCD1"
//   u32          byte length of the config text block
//   text         "key=value\n" lines: vocab, context, width, depth, heads,
//                param_count
//   u32          array count
//   per array:   u32 name length, name bytes, u8 dtype tag (0 = float64),
//                u32 ndim, u64 dims..., raw little-endian payload
//
// Round trips are bit-exact; loads verify magic, config keys, shapes and
// the total parameter count before returning a model.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    return v;
}

} // namespace detail

inline void save_checkpoint(const DenoiserModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write("MCD1", 4);
    char cfg[256];
    std::snprintf(cfg, sizeof(cfg),
                  "vocab=%d\ncontext=%d\nwidth=%d\ndepth=%d\nheads=%d\nparam_count=%lld\n",
                  model.config.vocab, model.config.context, model.config.width,
                  model.config.depth, model.config.heads,
                  static_cast<long long>(model.p.count()));
    const std::uint32_t cfg_len = static_cast<std::uint32_t>(std::strlen(cfg));
    detail::write_u32(os, cfg_len);
    os.write(cfg, cfg_len);
    std::uint32_t n_arrays = 0;
    model.p.for_each([&](const std::string&, const Matrix&) { ++n_arrays; });
    detail::write_u32(os, n_arrays);
    model.p.for_each([&](const std::string& name, const Matrix& a) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(char(0)); // dtype tag: float64
        detail::write_u32(os, 2);
        detail::write_u64(os, static_cast<std::uint64_t>(a.rows()));
        detail::write_u64(os, static_cast<std::uint64_t>(a.cols()));
        os.write(reinterpret_cast<const char*>(a.data()),
                 static_cast<std::streamsize>(sizeof(double) * a.size()));
    });
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline DenoiserModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MCD1", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const std::uint32_t cfg_len = detail::read_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw std::runtime_error("checkpoint: truncated config block");

    ModelConfig c;
    long long declared_count = -1;
    std::size_t pos = 0;
    while (pos < cfg_text.size()) {
        const std::size_t eol = cfg_text.find('\n', pos);
        const std::string line = cfg_text.substr(pos, eol - pos);
        pos = (eol == std::string::npos) ? cfg_text.size() : eol + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed config line");
        const std::string key = line.substr(0, eq);
        const long long val = std::stoll(line.substr(eq + 1));
        if (key == "vocab") c.vocab = int(val);
        else if (key == "context") c.context = int(val);
        else if (key == "width") c.width = int(val);
        else if (key == "depth") c.depth = int(val);
        else if (key == "heads") c.heads = int(val);
        else if (key == "param_count") declared_count = val;
        else throw std::runtime_error("checkpoint: unknown config key: " + key);
    }
    c.validate();

    DenoiserModel m;
    m.config = c;
    m.p = zero_params(c);
    const std::uint32_t n_arrays = detail::read_u32(is);
    std::uint32_t expected = 0;
    m.p.for_each([&](const std::string&, const Matrix&) { ++expected; });
    if (n_arrays != expected) {
        throw std::runtime_error("checkpoint: array count mismatch");
    }
    m.p.for_each([&](const std::string& name, Matrix& a) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string got(name_len, '\0');
        is.read(got.data(), name_len);
        const int dtype = is.get();
        if (!is || got != name || dtype != 0) {
            throw std::runtime_error("checkpoint: unexpected array '" + got +
                                     "' (wanted '" + name + "')");
        }
        const std::uint32_t ndim = detail::read_u32(is);
        if (ndim != 2) throw std::runtime_error("checkpoint: bad ndim for " + name);
        const std::uint64_t rows = detail::read_u64(is);
        const std::uint64_t cols = detail::read_u64(is);
        if (rows != std::uint64_t(a.rows()) || cols != std::uint64_t(a.cols())) {
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        }
        is.read(reinterpret_cast<char*>(a.data()),
                static_cast<std::streamsize>(sizeof(double) * a.size()));
        if (!is) throw std::runtime_error("checkpoint: truncated payload for " + name);
    });
    if (declared_count >= 0 && declared_count != m.p.count()) {
        throw std::runtime_error("checkpoint: param_count mismatch");
    }
    is.peek();
    if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return m;
}

/// FNV-1a over all parameter bytes; used to assert the frozen teacher.
inline std::uint64_t params_hash(const Params& p) {
    std::uint64_t h = 1469598103934665603ull;
    p.for_each([&](const std::string&, const Matrix& a) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(a.data());
        for (std::size_t i = 0; i < sizeof(double) * std::size_t(a.size()); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

} // namespace mcd
