#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vibra_sr/autodiff.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/tensor.hpp"

namespace vibra_sr {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int depth = 3;
    std::vector<int> down_filters{64, 128, 256};  // 2^(5+b)
    std::vector<int> down_kernels{65, 17, 7};
    std::vector<int> up_filters{512, 256, 4};
    std::vector<int> up_kernels{7, 17, 65};
    int stride = 4;
    int safilm_blocks = 8;  // B; halved per site while frames-per-block < 4
    int safilm_layers = 2;
    int attn_heads = 2;
    int attn_model_dim = 0;  // 0 = match the channel count at the site
    int attn_ffn_mult = 4;
    int ssm_state_dim = 16;  // N
    int ssm_expand = 2;
    int ssm_conv_kernel = 4;
    int bottleneck_layers = 2;  // attention bottleneck only
    double dropout_p = 0.1;
    double lrelu_slope = 0.2;
    std::string bottleneck_kind = "mamba";  // mamba | performer_like_attention | none
    bool safilm_enabled = true;
    std::string input_grid = "pre_upsampled";
    bool normalize_windows = false;
    int target_rate_hz = 16000;
    int window_samples = 8192;  // 512 ms at 16 kHz

    void validate() const {
        if (depth < 1) throw ConfigError("model: depth must be >= 1");
        auto need = [&](const std::vector<int>& v, const char* name) {
            if (static_cast<int>(v.size()) != depth)
                throw ConfigError(std::string("model: ") + name + " must have one entry per depth");
            for (int x : v)
                if (x < 1) throw ConfigError(std::string("model: ") + name + " entries must be positive");
        };
        need(down_filters, "down_filters");
        need(down_kernels, "down_kernels");
        need(up_filters, "up_filters");
        need(up_kernels, "up_kernels");
        if (stride < 1) throw ConfigError("model: stride must be >= 1");
        if (safilm_blocks < 1) throw ConfigError("model: safilm_blocks must be >= 1");
        if (safilm_layers < 1) throw ConfigError("model: safilm_layers must be >= 1");
        if (attn_heads < 1) throw ConfigError("model: attn_heads must be >= 1");
        if (ssm_state_dim < 1) throw ConfigError("model: ssm_state_dim must be >= 1");
        if (ssm_expand < 1) throw ConfigError("model: ssm_expand must be >= 1");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("model: dropout_p must be in [0,1)");
        if (bottleneck_kind != "mamba" && bottleneck_kind != "performer_like_attention" &&
            bottleneck_kind != "none")
            throw ConfigError("model: unknown bottleneck_kind '" + bottleneck_kind + "'");
        if (input_grid != "pre_upsampled") throw ConfigError("model: input_grid must be pre_upsampled");
        for (int b = 0; b < depth; ++b) {
            if (up_filters[b] % stride != 0)
                throw ConfigError("model: up_filters must be divisible by stride (pixelshuffle)");
        }
        if (up_filters[depth - 1] != stride)
            throw ConfigError("model: final up block must emit a single channel after pixelshuffle");
        if (window_samples % pow_stride() != 0)
            throw ConfigError("model: window_samples must be divisible by stride^depth");
    }

    int64_t pow_stride() const {
        int64_t p = 1;
        for (int i = 0; i < depth; ++i) p *= stride;
        return p;
    }

    // A reduced preset for tests and smoke training.
    static ModelConfig tiny() {
        ModelConfig c;
        c.down_filters = {4, 8, 16};
        c.down_kernels = {5, 3, 3};
        c.up_filters = {32, 16, 4};
        c.up_kernels = {3, 3, 5};
        c.safilm_blocks = 4;
        c.safilm_layers = 1;
        c.attn_heads = 2;
        c.attn_ffn_mult = 2;
        c.ssm_state_dim = 2;
        c.ssm_expand = 2;
        c.bottleneck_layers = 1;
        c.dropout_p = 0.0;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"depth", c.depth},
                       {"down_filters", c.down_filters},
                       {"down_kernels", c.down_kernels},
                       {"up_filters", c.up_filters},
                       {"up_kernels", c.up_kernels},
                       {"stride", c.stride},
                       {"safilm_blocks", c.safilm_blocks},
                       {"safilm_layers", c.safilm_layers},
                       {"attn_heads", c.attn_heads},
                       {"attn_model_dim", c.attn_model_dim},
                       {"attn_ffn_mult", c.attn_ffn_mult},
                       {"ssm_state_dim", c.ssm_state_dim},
                       {"ssm_expand", c.ssm_expand},
                       {"ssm_conv_kernel", c.ssm_conv_kernel},
                       {"bottleneck_layers", c.bottleneck_layers},
                       {"dropout_p", c.dropout_p},
                       {"lrelu_slope", c.lrelu_slope},
                       {"bottleneck_kind", c.bottleneck_kind},
                       {"safilm_enabled", c.safilm_enabled},
                       {"input_grid", c.input_grid},
                       {"normalize_windows", c.normalize_windows},
                       {"target_rate_hz", c.target_rate_hz},
                       {"window_samples", c.window_samples}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig defaults;
    c = defaults;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "depth") c.depth = it->get<int>();
        else if (k == "down_filters") c.down_filters = it->get<std::vector<int>>();
        else if (k == "down_kernels") c.down_kernels = it->get<std::vector<int>>();
        else if (k == "up_filters") c.up_filters = it->get<std::vector<int>>();
        else if (k == "up_kernels") c.up_kernels = it->get<std::vector<int>>();
        else if (k == "stride") c.stride = it->get<int>();
        else if (k == "safilm_blocks") c.safilm_blocks = it->get<int>();
        else if (k == "safilm_layers") c.safilm_layers = it->get<int>();
        else if (k == "attn_heads") c.attn_heads = it->get<int>();
        else if (k == "attn_model_dim") c.attn_model_dim = it->get<int>();
        else if (k == "attn_ffn_mult") c.attn_ffn_mult = it->get<int>();
        else if (k == "ssm_state_dim") c.ssm_state_dim = it->get<int>();
        else if (k == "ssm_expand") c.ssm_expand = it->get<int>();
        else if (k == "ssm_conv_kernel") c.ssm_conv_kernel = it->get<int>();
        else if (k == "bottleneck_layers") c.bottleneck_layers = it->get<int>();
        else if (k == "dropout_p") c.dropout_p = it->get<double>();
        else if (k == "lrelu_slope") c.lrelu_slope = it->get<double>();
        else if (k == "bottleneck_kind") c.bottleneck_kind = it->get<std::string>();
        else if (k == "safilm_enabled") c.safilm_enabled = it->get<bool>();
        else if (k == "input_grid") c.input_grid = it->get<std::string>();
        else if (k == "normalize_windows") c.normalize_windows = it->get<bool>();
        else if (k == "target_rate_hz") c.target_rate_hz = it->get<int>();
        else if (k == "window_samples") c.window_samples = it->get<int>();
        else throw ConfigError("model config: unknown key '" + k + "'");
    }
}

struct TensorShape {
    int64_t channels = 1;
    int64_t time = 1;
    bool operator==(const TensorShape& o) const { return channels == o.channels && time == o.time; }
};

using ShapeTrace = std::vector<std::pair<std::string, TensorShape>>;

// ---------------------------------------------------------------------------
// Parameter store and initializers
// ---------------------------------------------------------------------------

struct ParamEntry {
    std::string name;
    ad::Var var;
};

class ParamStore {
public:
    ad::Var add(const std::string& name, Tensor init) {
        ad::Var v = ad::param(std::move(init));
        entries_.push_back({name, v});
        return v;
    }
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.var->value.size();
        return n;
    }

private:
    std::vector<ParamEntry> entries_;
};

namespace init {

inline Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

// Orthogonal rows (or columns when rows > cols) from QR of a Gaussian draw.
inline Tensor orthogonal(std::vector<int64_t> shape, Rng& rng) {
    int64_t rows = shape[0];
    int64_t cols = Tensor::numel(shape) / rows;
    int64_t big = std::max(rows, cols), small = std::min(rows, cols);
    // Gaussian (big x small), Gram-Schmidt over columns.
    std::vector<double> a(static_cast<size_t>(big * small));
    for (double& v : a) v = rng.gaussian();
    for (int64_t j = 0; j < small; ++j) {
        for (int64_t i = 0; i < j; ++i) {
            double dot = 0.0;
            for (int64_t r = 0; r < big; ++r)
                dot += a[static_cast<size_t>(r * small + i)] * a[static_cast<size_t>(r * small + j)];
            for (int64_t r = 0; r < big; ++r)
                a[static_cast<size_t>(r * small + j)] -= dot * a[static_cast<size_t>(r * small + i)];
        }
        double norm = 0.0;
        for (int64_t r = 0; r < big; ++r) {
            double v = a[static_cast<size_t>(r * small + j)];
            norm += v * v;
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (int64_t r = 0; r < big; ++r) a[static_cast<size_t>(r * small + j)] /= norm;
    }
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            t[r * cols + c] = rows <= cols ? a[static_cast<size_t>(c * small + r)]
                                           : a[static_cast<size_t>(r * small + c)];
    return t;
}

inline double inv_softplus(double y) { return std::log(std::expm1(y)); }

}  // namespace init

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct LinearLayer {
    ad::Var w;  // (out x in)
    ad::Var b;  // (out) or null

    static LinearLayer make(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                            bool bias, Rng& rng) {
        LinearLayer l;
        l.w = ps.add(name + ".w", init::xavier_uniform({out, in}, in, out, rng));
        if (bias) l.b = ps.add(name + ".b", Tensor::zeros({out}));
        return l;
    }

    ad::Var rows(ad::Tape* t, const ad::Var& x) const { return ad::linear_rows(t, x, w, b); }
    ad::Var cols(ad::Tape* t, const ad::Var& x) const { return ad::proj_cols(t, x, w, b); }
};

struct LayerNormLayer {
    ad::Var g, b;

    static LayerNormLayer make(ParamStore& ps, const std::string& name, int64_t dim) {
        LayerNormLayer l;
        l.g = ps.add(name + ".g", Tensor::full({dim}, 1.0));
        l.b = ps.add(name + ".b", Tensor::zeros({dim}));
        return l;
    }

    ad::Var rows(ad::Tape* t, const ad::Var& x) const { return ad::layer_norm_rows(t, x, g, b); }
};

// Pre-norm transformer layer over a short token sequence (n x dim).
struct TransformerLayer {
    LayerNormLayer ln1, ln2;
    LinearLayer wq, wk, wv, wo, ff1, ff2;
    int heads = 2;
    int dim = 0;
    bool linear_attention = false;  // softmax attention when false

    static TransformerLayer make(ParamStore& ps, const std::string& name, int dim, int heads,
                                 int ffn_mult, bool linear_attention, Rng& rng) {
        if (dim % heads != 0) throw ConfigError("transformer: dim must divide by heads");
        TransformerLayer t;
        t.dim = dim;
        t.heads = heads;
        t.linear_attention = linear_attention;
        t.ln1 = LayerNormLayer::make(ps, name + ".ln1", dim);
        t.ln2 = LayerNormLayer::make(ps, name + ".ln2", dim);
        t.wq = LinearLayer::make(ps, name + ".wq", dim, dim, true, rng);
        t.wk = LinearLayer::make(ps, name + ".wk", dim, dim, true, rng);
        t.wv = LinearLayer::make(ps, name + ".wv", dim, dim, true, rng);
        t.wo = LinearLayer::make(ps, name + ".wo", dim, dim, true, rng);
        t.ff1 = LinearLayer::make(ps, name + ".ff1", dim, dim * ffn_mult, true, rng);
        t.ff2 = LinearLayer::make(ps, name + ".ff2", dim * ffn_mult, dim, true, rng);
        return t;
    }

    ad::Var forward(ad::Tape* t, const ad::Var& tokens) const {
        int64_t hd = dim / heads;
        ad::Var a = ln1.rows(t, tokens);
        ad::Var q = wq.rows(t, a), k = wk.rows(t, a), v = wv.rows(t, a);
        std::vector<ad::Var> ctx;
        for (int h = 0; h < heads; ++h) {
            ad::Var qh = ad::cols_slice(t, q, h * hd, (h + 1) * hd);
            ad::Var kh = ad::cols_slice(t, k, h * hd, (h + 1) * hd);
            ad::Var vh = ad::cols_slice(t, v, h * hd, (h + 1) * hd);
            if (linear_attention) {
                // Positive-feature linear attention: phi(q) (phi(k)^T v) row-normalized.
                ad::Var fq = ad::elu1p(t, qh);
                ad::Var fk = ad::elu1p(t, kh);
                ad::Var kv = ad::matmul_nn(t, ad::transpose2d(t, fk), vh);       // (hd x hd)
                ad::Var ones = ad::constant(Tensor::full({1, fk->value.dim(0)}, 1.0));
                ad::Var ksum = ad::matmul_nn(t, ones, fk);                       // (1 x hd)
                ad::Var numer = ad::matmul_nn(t, fq, kv);                        // (n x hd)
                ad::Var denom = ad::matmul_nt(t, fq, ksum);                      // (n x 1)
                ctx.push_back(ad::div_rows_by_col(t, numer, denom));
            } else {
                ad::Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), 1.0 / std::sqrt(static_cast<double>(hd)));
                ad::Var att = ad::softmax_rows(t, scores);
                ctx.push_back(ad::matmul_nn(t, att, vh));
            }
        }
        ad::Var merged = heads == 1 ? ctx[0] : ad::cols_concat(t, ctx);
        ad::Var h1 = ad::add(t, tokens, wo.rows(t, merged));
        ad::Var f = ln2.rows(t, h1);
        f = ff2.rows(t, ad::silu(t, ff1.rows(t, f)));
        return ad::add(t, h1, f);
    }
};

// Scale-only attention-based feature-wise linear modulation. Activations
// (C x T) are cut into B temporal blocks, max-pooled per block, run through a
// small transformer, and the resulting per-block per-channel gain multiplies
// the block.
struct SaFilmLayer {
    int requested_blocks = 8;
    int channels = 0;
    std::vector<TransformerLayer> layers;
    LinearLayer in_proj;   // only when attn dim differs from channels
    LinearLayer out_proj;  // zero-initialized weights, bias 1 => identity at start
    int attn_dim = 0;

    static SaFilmLayer make(ParamStore& ps, const std::string& name, int channels,
                            const ModelConfig& cfg, Rng& rng) {
        SaFilmLayer s;
        s.requested_blocks = cfg.safilm_blocks;
        s.channels = channels;
        s.attn_dim = cfg.attn_model_dim > 0 ? cfg.attn_model_dim : channels;
        if (s.attn_dim != channels)
            s.in_proj = LinearLayer::make(ps, name + ".in", channels, s.attn_dim, true, rng);
        for (int l = 0; l < cfg.safilm_layers; ++l)
            s.layers.push_back(TransformerLayer::make(ps, name + ".layer" + std::to_string(l),
                                                      s.attn_dim, cfg.attn_heads, cfg.attn_ffn_mult,
                                                      false, rng));
        s.out_proj.w = ps.add(name + ".out.w", Tensor::zeros({channels, s.attn_dim}));
        s.out_proj.b = ps.add(name + ".out.b", Tensor::full({channels}, 1.0));
        return s;
    }

    static int64_t effective_blocks(int64_t requested, int64_t T) {
        int64_t B = std::max<int64_t>(1, std::min(requested, T));
        while (B > 1 && T / B < 4) B /= 2;
        return B;
    }

    ad::Var gamma(ad::Tape* t, const ad::Var& x) const {
        int64_t B = effective_blocks(requested_blocks, x->value.dim(1));
        ad::Var tokens = ad::block_max_pool(t, x, B);  // (B x C)
        if (in_proj.w) tokens = in_proj.rows(t, tokens);
        for (const auto& layer : layers) tokens = layer.forward(t, tokens);
        ad::Var g = out_proj.rows(t, tokens);  // (B x C)
        if (!g->value.all_finite()) throw RuntimeFailure("safilm: non-finite gamma");
        return g;
    }

    // gamma_override bypasses the transformer (test hook).
    ad::Var forward(ad::Tape* t, const ad::Var& x, const Tensor* gamma_override = nullptr) const {
        ad::Var g = gamma_override ? ad::constant(*gamma_override) : gamma(t, x);
        return ad::block_scale(t, x, g);
    }
};

// Mamba-style selective state-space block with input-dependent step size and
// projections, wrapped in layer norm and a residual connection.
struct MambaBlock {
    LayerNormLayer norm;
    LinearLayer in_proj, x_proj, dt_proj, out_proj;
    ad::Var conv_w, conv_b;  // depthwise (d_inner x K)
    ad::Var A_log, Dskip;
    int d_model = 0, d_inner = 0, n_state = 0, dt_rank = 0;

    static MambaBlock make(ParamStore& ps, const std::string& name, int d_model,
                           const ModelConfig& cfg, Rng& rng) {
        MambaBlock m;
        m.d_model = d_model;
        m.d_inner = d_model * cfg.ssm_expand;
        m.n_state = cfg.ssm_state_dim;
        m.dt_rank = std::max(1, d_model / 16);
        m.norm = LayerNormLayer::make(ps, name + ".norm", d_model);
        m.in_proj = LinearLayer::make(ps, name + ".in_proj", d_model, 2 * m.d_inner, false, rng);
        m.conv_w = ps.add(name + ".conv.w",
                          init::xavier_uniform({m.d_inner, cfg.ssm_conv_kernel}, cfg.ssm_conv_kernel,
                                               cfg.ssm_conv_kernel, rng));
        m.conv_b = ps.add(name + ".conv.b", Tensor::zeros({m.d_inner}));
        m.x_proj = LinearLayer::make(ps, name + ".x_proj", m.d_inner, m.dt_rank + 2 * m.n_state,
                                     false, rng);
        m.dt_proj = LinearLayer::make(ps, name + ".dt_proj", m.dt_rank, m.d_inner, true, rng);
        // Step-size bias so softplus lands in [1e-3, 1e-1] at start.
        for (int64_t i = 0; i < m.d_inner; ++i)
            m.dt_proj.b->value[i] = init::inv_softplus(std::exp(rng.uniform(std::log(1e-3), std::log(1e-1))));
        Tensor alog = Tensor::zeros({m.d_inner, m.n_state});
        for (int64_t d = 0; d < m.d_inner; ++d)
            for (int64_t n = 0; n < m.n_state; ++n) alog.at(d, n) = std::log(static_cast<double>(n + 1));
        m.A_log = ps.add(name + ".A_log", std::move(alog));
        m.Dskip = ps.add(name + ".D", Tensor::full({m.d_inner}, 1.0));
        m.out_proj = LinearLayer::make(ps, name + ".out_proj", m.d_inner, d_model, false, rng);
        return m;
    }

    ad::Var forward(ad::Tape* t, const ad::Var& x) const {  // x: (d_model x T)
        ad::Var tokens = ad::transpose2d(t, x);             // (T x C)
        ad::Var normed = norm.rows(t, tokens);
        ad::Var xz = ad::transpose2d(t, in_proj.rows(t, normed));  // (2*d_inner x T)
        ad::Var xpart = ad::rows_slice(t, xz, 0, d_inner);
        ad::Var zpart = ad::rows_slice(t, xz, d_inner, 2 * d_inner);
        ad::Var u = ad::silu(t, ad::dwconv1d_causal(t, xpart, conv_w, conv_b));
        ad::Var xdbl = x_proj.cols(t, u);  // (dt_rank + 2N x T)
        ad::Var dt_low = ad::rows_slice(t, xdbl, 0, dt_rank);
        ad::Var Bm = ad::rows_slice(t, xdbl, dt_rank, dt_rank + n_state);
        ad::Var Cm = ad::rows_slice(t, xdbl, dt_rank + n_state, dt_rank + 2 * n_state);
        ad::Var delta = ad::softplus(t, dt_proj.cols(t, dt_low));  // (d_inner x T), positive
        ad::Var A = ad::scale(t, ad::exp_op(t, A_log), -1.0);      // negative real parts
        ad::Var y = ad::ssm_scan(t, u, delta, A, Bm, Cm, Dskip);
        ad::Var gated = ad::mul(t, y, ad::silu(t, zpart));
        ad::Var out = ad::transpose2d(t, out_proj.rows(t, ad::transpose2d(t, gated)));
        return ad::add(t, x, out);
    }
};

// Linear-complexity attention bottleneck (the "replace Mamba" ablation).
struct AttentionBottleneck {
    std::vector<TransformerLayer> layers;

    static AttentionBottleneck make(ParamStore& ps, const std::string& name, int d_model,
                                    const ModelConfig& cfg, Rng& rng) {
        AttentionBottleneck a;
        int heads = d_model % 4 == 0 ? 4 : 1;
        for (int l = 0; l < cfg.bottleneck_layers; ++l)
            a.layers.push_back(TransformerLayer::make(ps, name + ".layer" + std::to_string(l),
                                                      d_model, heads, cfg.attn_ffn_mult,
                                                      /*linear_attention=*/true, rng));
        return a;
    }

    ad::Var forward(ad::Tape* t, const ad::Var& x) const {
        ad::Var tokens = ad::transpose2d(t, x);
        for (const auto& layer : layers) tokens = layer.forward(t, tokens);
        return ad::transpose2d(t, tokens);
    }
};

struct ConvLayer {
    ad::Var w, b;
    int stride = 1, pad = 0;

    static ConvLayer make(ParamStore& ps, const std::string& name, int cin, int cout, int kernel,
                          int stride, Rng& rng) {
        if (kernel % 2 == 0) throw ConfigError("conv: kernels must be odd for symmetric padding");
        ConvLayer c;
        c.stride = stride;
        c.pad = (kernel - 1) / 2;
        c.w = ps.add(name + ".w", init::orthogonal({cout, cin, kernel}, rng));
        c.b = ps.add(name + ".b", Tensor::zeros({cout}));
        return c;
    }

    ad::Var forward(ad::Tape* t, const ad::Var& x) const {
        return ad::conv1d(t, x, w, b, stride, pad);
    }
};

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

class Model {
public:
    Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(init_seed ? init_seed : 0xc0ffee);
        int cin = 1;
        for (int b = 0; b < cfg_.depth; ++b) {
            std::string base = "down" + std::to_string(b + 1);
            down_convs_.push_back(ConvLayer::make(params_, base + ".conv", cin,
                                                  cfg_.down_filters[b], cfg_.down_kernels[b],
                                                  cfg_.stride, rng));
            if (cfg_.safilm_enabled)
                down_safilm_.push_back(SaFilmLayer::make(params_, base + ".safilm",
                                                         cfg_.down_filters[b], cfg_, rng));
            cin = cfg_.down_filters[b];
        }
        int d_model = cfg_.down_filters[cfg_.depth - 1];
        if (cfg_.bottleneck_kind == "mamba")
            mamba_ = std::make_unique<MambaBlock>(MambaBlock::make(params_, "bottleneck.mamba", d_model, cfg_, rng));
        else if (cfg_.bottleneck_kind == "performer_like_attention")
            attn_ = std::make_unique<AttentionBottleneck>(
                AttentionBottleneck::make(params_, "bottleneck.attn", d_model, cfg_, rng));
        int c = d_model;
        for (int b = 0; b < cfg_.depth; ++b) {
            std::string base = "up" + std::to_string(b + 1);
            up_convs_.push_back(ConvLayer::make(params_, base + ".conv", c, cfg_.up_filters[b],
                                                cfg_.up_kernels[b], /*stride=*/1, rng));
            c = cfg_.up_filters[b] / cfg_.stride;
            bool last = b == cfg_.depth - 1;
            if (!last && cfg_.safilm_enabled)
                up_safilm_.push_back(SaFilmLayer::make(params_, base + ".safilm", c, cfg_, rng));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t parameter_count() const { return params_.total_count(); }

    // Per-parameter-tensor (name, count) breakdown.
    std::vector<std::pair<std::string, int64_t>> parameter_ledger() const {
        std::vector<std::pair<std::string, int64_t>> out;
        for (const auto& e : params_.entries()) out.emplace_back(e.name, e.var->value.size());
        return out;
    }

    // Forward pass over one pre-upsampled window, shape (1 x T) with T
    // divisible by stride^depth. Global residual adds the input back.
    ad::Var forward(ad::Tape* tape, const ad::Var& input, bool training = false,
                    Rng* dropout_rng = nullptr, ShapeTrace* trace = nullptr) const {
        if (input->value.rank() != 2 || input->value.dim(0) != 1)
            throw ConfigError("model: input must be (1 x T)");
        int64_t T = input->value.dim(1);
        if (T % cfg_.pow_stride() != 0)
            throw ConfigError("model: window length " + std::to_string(T) +
                              " not divisible by " + std::to_string(cfg_.pow_stride()));
        if (training && cfg_.dropout_p > 0.0 && !dropout_rng)
            throw ConfigError("model: training forward needs a dropout rng");
        auto record = [&](const char* name, const ad::Var& v) {
            if (trace) trace->emplace_back(name, TensorShape{v->value.dim(0), v->value.dim(1)});
        };
        record("input", input);

        std::vector<ad::Var> skips;
        ad::Var h = input;
        for (int b = 0; b < cfg_.depth; ++b) {
            if (h->value.dim(1) % cfg_.stride != 0)
                throw ConfigError("model: down block input length not divisible by stride");
            h = down_convs_[static_cast<size_t>(b)].forward(tape, h);
            h = ad::leaky_relu(tape, h, cfg_.lrelu_slope);
            if (cfg_.safilm_enabled) h = down_safilm_[static_cast<size_t>(b)].forward(tape, h);
            skips.push_back(h);
            record(("down" + std::to_string(b + 1)).c_str(), h);
        }

        if (mamba_) h = mamba_->forward(tape, h);
        else if (attn_) h = attn_->forward(tape, h);
        record("bottleneck", h);

        for (int b = 0; b < cfg_.depth; ++b) {
            h = ad::add(tape, h, skips[static_cast<size_t>(cfg_.depth - 1 - b)]);
            h = up_convs_[static_cast<size_t>(b)].forward(tape, h);
            if (training && cfg_.dropout_p > 0.0) h = ad::dropout(tape, h, cfg_.dropout_p, *dropout_rng);
            bool last = b == cfg_.depth - 1;
            if (!last) {
                h = ad::leaky_relu(tape, h, cfg_.lrelu_slope);
                h = ad::pixelshuffle(tape, h, cfg_.stride);
                if (cfg_.safilm_enabled) h = up_safilm_[static_cast<size_t>(b)].forward(tape, h);
            } else {
                h = ad::pixelshuffle(tape, h, cfg_.stride);
            }
            record(("up" + std::to_string(b + 1)).c_str(), h);
        }

        ad::Var out = ad::add(tape, h, input);
        record("output", out);
        return out;
    }

    // Inference helper: raw samples in, raw samples out (no tape).
    std::vector<double> enhance_window(const std::vector<double>& window) const {
        double scale = 1.0;
        std::vector<double> w = window;
        if (cfg_.normalize_windows) {
            double peak = 0.0;
            for (double v : w) peak = std::max(peak, std::abs(v));
            if (peak > 0.0) {
                scale = peak;
                for (double& v : w) v /= peak;
            }
        }
        ad::Var in = ad::constant(Tensor::from({1, static_cast<int64_t>(w.size())}, w));
        ad::Var out = forward(nullptr, in, false, nullptr, nullptr);
        std::vector<double> res = out->value.data;
        if (scale != 1.0)
            for (double& v : res) v *= scale;
        return res;
    }

    // Test hook: zero every parameter (weights and biases).
    void zero_all_parameters() {
        for (auto& e : params_.entries())
            for (double& v : e.var->value.data) v = 0.0;
    }

    const std::vector<SaFilmLayer>& down_safilm() const { return down_safilm_; }
    const MambaBlock* mamba() const { return mamba_.get(); }

private:
    ModelConfig cfg_;
    ParamStore params_;
    std::vector<ConvLayer> down_convs_;
    std::vector<SaFilmLayer> down_safilm_;
    std::vector<ConvLayer> up_convs_;
    std::vector<SaFilmLayer> up_safilm_;
    std::unique_ptr<MambaBlock> mamba_;
    std::unique_ptr<AttentionBottleneck> attn_;
};

inline int64_t count_parameters(const ModelConfig& cfg) {
    Model m(cfg, /*init_seed=*/1);
    return m.parameter_count();
}

enum class AblationVariant { full, replace_mamba_with_attention, remove_safilm };

inline AblationVariant ablation_from_string(const std::string& s) {
    if (s == "full") return AblationVariant::full;
    if (s == "replace_mamba_with_attention") return AblationVariant::replace_mamba_with_attention;
    if (s == "remove_safilm") return AblationVariant::remove_safilm;
    throw ConfigError("ablation: unknown variant '" + s + "'");
}

inline ModelConfig build_ablation(const ModelConfig& base, AblationVariant variant) {
    ModelConfig cfg = base;
    cfg.validate();
    switch (variant) {
        case AblationVariant::full:
            break;
        case AblationVariant::replace_mamba_with_attention:
            cfg.bottleneck_kind = "performer_like_attention";
            break;
        case AblationVariant::remove_safilm:
            cfg.safilm_enabled = false;
            break;
    }
    return cfg;
}

}  // namespace vibra_sr
