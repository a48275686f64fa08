#include "freetuner/unet.hpp"

#include "freetuner/errors.hpp"
#include "freetuner/rng.hpp"

#include <cmath>

namespace ft {

namespace {

bool is_bias_name(const std::string& name) {
    return name.find("_b") != std::string::npos || name.find("/b") != std::string::npos;
}

Tensor time_embedding(int t, int d) {
    std::vector<double> v(static_cast<std::size_t>(d), 0.0);
    const int half = d / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        v[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
        v[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return Tensor(Shape{1, d}, std::move(v));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

/// Adds a [1,C] bias to every spatial position of x:[C,H,W].
Tensor channel_bias(const Tensor& x, const Tensor& bias) {
    const int C = x.dim(0), HW = x.dim(1) * x.dim(2);
    return reshape(rows_add(reshape(x, Shape{C, HW}), reshape(bias, Shape{C})), x.shape());
}

struct AttnWeights {
    const Tensor *wq, *wk, *wv, *wo;
};

Tensor attention(const Tensor& x, const Tensor& text, bool cross, int layer_id,
                 const AttnWeights& w, bool record, const AttnEdit* edit,
                 std::vector<AttentionRecord>* records) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2), HW = H * W;
    Tensor X = transpose(reshape(x, Shape{C, HW}));  // [HW, C] spatial queries
    const Tensor& kv_src = cross ? text : X;
    Tensor q = matmul(X, *w.wq);
    Tensor k = matmul(kv_src, *w.wk);
    Tensor v = matmul(kv_src, *w.wv);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(w.wq->dim(1)));
    Tensor map = softmax_rows(mul_scalar(matmul(q, transpose(k)), inv_sqrt_d));

    AttentionRecord meta{layer_id, cross, H, W, map};
    if (record && records) records->push_back(meta);
    // The edit sees the same pre-edit map the record holds; downstream math
    // uses whatever it returns.
    Tensor used = (edit && *edit) ? (*edit)(meta, map) : map;
    check_arg(used.shape() == map.shape(), "attention edit changed the map shape");

    Tensor out = matmul(matmul(used, v), *w.wo);  // [HW, C]
    return reshape(transpose(out), Shape{C, H, W});
}

}  // namespace

Denoiser Denoiser::init(const DenoiserArch& arch) {
    check_arg(arch.latent_hw >= 4 && arch.latent_hw % 2 == 0, "latent size must be even and >= 4");
    check_arg(arch.d_time % 2 == 0, "time embedding width must be even");
    const int c1 = arch.c1, c2 = arch.c2, dt = arch.d_time, dx = arch.d_text;

    Params p;
    p.token_table = Tensor(Shape{arch.vocab_size, dx});
    p.time_w1 = Tensor(Shape{dt, dt});
    p.time_b1 = Tensor(Shape{1, dt});
    p.time_w2 = Tensor(Shape{dt, dt});
    p.time_b2 = Tensor(Shape{1, dt});
    p.tproj1_w = Tensor(Shape{dt, c1});
    p.tproj1_b = Tensor(Shape{1, c1});
    p.tproj2_w = Tensor(Shape{dt, c2});
    p.tproj2_b = Tensor(Shape{1, c2});
    p.in_w = Tensor(Shape{c1, arch.latent_ch, 3, 3});
    p.in_b = Tensor(Shape{c1});
    p.sa16_wq = Tensor(Shape{c1, c1});
    p.sa16_wk = Tensor(Shape{c1, c1});
    p.sa16_wv = Tensor(Shape{c1, c1});
    p.sa16_wo = Tensor(Shape{c1, c1});
    p.ca16_wq = Tensor(Shape{c1, c1});
    p.ca16_wk = Tensor(Shape{dx, c1});
    p.ca16_wv = Tensor(Shape{dx, c1});
    p.ca16_wo = Tensor(Shape{c1, c1});
    p.down_w = Tensor(Shape{c2, c1, 3, 3});
    p.down_b = Tensor(Shape{c2});
    p.sa8_wq = Tensor(Shape{c2, c2});
    p.sa8_wk = Tensor(Shape{c2, c2});
    p.sa8_wv = Tensor(Shape{c2, c2});
    p.sa8_wo = Tensor(Shape{c2, c2});
    p.ca8_wq = Tensor(Shape{c2, c2});
    p.ca8_wk = Tensor(Shape{dx, c2});
    p.ca8_wv = Tensor(Shape{dx, c2});
    p.ca8_wo = Tensor(Shape{c2, c2});
    p.mid_w = Tensor(Shape{c2, c2, 3, 3});
    p.mid_b = Tensor(Shape{c2});
    p.up_w = Tensor(Shape{c1, c2, 3, 3});
    p.up_b = Tensor(Shape{c1});
    p.out_w = Tensor(Shape{arch.latent_ch, c1, 3, 3});
    p.out_b = Tensor(Shape{arch.latent_ch});

    // Weight recipe (documented; consumed in fixed for_each order so a seed
    // pins every value): token rows 0.5*N(0,1); linear weights N(0,1)/sqrt(fan_in);
    // conv kernels N(0,1)/sqrt(9*fan_in); biases zero; output conv zero so the
    // fresh model predicts eps = 0.
    Rng rng(arch.seed);
    p.for_each([&](const std::string& name, Tensor& t) {
        if (is_bias_name(name) || name == "out/w") return;  // already zero
        std::vector<double> v(t.numel());
        double scale = 1.0;
        if (name == "token_table") scale = 0.5;
        else if (t.rank() == 4) scale = 1.0 / std::sqrt(9.0 * t.dim(1));
        else scale = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
        for (auto& x : v) x = scale * rng.normal();
        t = Tensor(t.shape(), std::move(v));
    });
    return from_params(arch, std::move(p));
}

Denoiser Denoiser::from_params(const DenoiserArch& arch, Params params) {
    check_arg(arch.vocab_size == static_cast<int>(vocabulary().size()),
              "architecture vocabulary size does not match the closed vocabulary");
    params.for_each([&](const std::string& name, const Tensor& t) {
        check_arg(t.defined(), "missing parameter tensor: " + name);
    });
    check_arg(params.token_table.dim(0) == arch.vocab_size && params.token_table.dim(1) == arch.d_text,
              "token table shape mismatch");
    check_arg(params.in_w.dim(1) == arch.latent_ch && params.out_w.dim(0) == arch.latent_ch,
              "latent channel mismatch");
    Denoiser d;
    d.arch_ = arch;
    d.params_ = std::move(params);
    return d;
}

std::size_t Denoiser::parameter_count() const {
    std::size_t n = 0;
    params_.for_each([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

EpsOut Denoiser::predict_eps(const Tensor& z_t, int t, const PromptEmbedding& prompt, bool record,
                             const AttnEdit* edit) const {
    const int hw = arch_.latent_hw;
    check_arg(z_t.rank() == 3 && z_t.dim(0) == arch_.latent_ch && z_t.dim(1) == hw && z_t.dim(2) == hw,
              "latent shape mismatch");
    check_arg(t >= 0 && t <= 1000, "timestep out of range");
    check_arg(prompt.embeddings.defined() && prompt.embeddings.rank() == 2 &&
                  prompt.embeddings.dim(1) == arch_.d_text && prompt.embeddings.dim(0) >= 1,
              "prompt embedding shape mismatch");

    const Params& p = params_;
    EpsOut out;
    std::vector<AttentionRecord>* rec = record ? &out.records : nullptr;

    Tensor temb = linear(linear(time_embedding(t, arch_.d_time), p.time_w1, p.time_b1), p.time_w2,
                         p.time_b2);
    temb = silu(temb);
    Tensor bias1 = linear(temb, p.tproj1_w, p.tproj1_b);
    Tensor bias2 = linear(temb, p.tproj2_w, p.tproj2_b);
    const Tensor& text = prompt.embeddings;

    Tensor x1 = conv2d_3x3(z_t, p.in_w, p.in_b);
    x1 = silu(channel_bias(x1, bias1));
    x1 = add(x1, attention(x1, text, false, 0, {&p.sa16_wq, &p.sa16_wk, &p.sa16_wv, &p.sa16_wo},
                           record, edit, rec));
    x1 = add(x1, attention(x1, text, true, 1, {&p.ca16_wq, &p.ca16_wk, &p.ca16_wv, &p.ca16_wo},
                           record, edit, rec));

    Tensor x2 = conv2d_3x3(avg_pool2(x1), p.down_w, p.down_b);
    x2 = silu(channel_bias(x2, bias2));
    x2 = add(x2, attention(x2, text, false, 2, {&p.sa8_wq, &p.sa8_wk, &p.sa8_wv, &p.sa8_wo},
                           record, edit, rec));
    x2 = add(x2, attention(x2, text, true, 3, {&p.ca8_wq, &p.ca8_wk, &p.ca8_wv, &p.ca8_wo},
                           record, edit, rec));
    x2 = silu(conv2d_3x3(x2, p.mid_w, p.mid_b));

    Tensor x3 = add(silu(conv2d_3x3(upsample_nearest2(x2), p.up_w, p.up_b)), x1);
    out.eps = conv2d_3x3(x3, p.out_w, p.out_b);
    return out;
}

PromptEmbedding Denoiser::tokenize(const std::string& prompt) const {
    return ft::tokenize(prompt, params_.token_table);
}

PromptEmbedding Denoiser::null_prompt() const { return tokenize(""); }

Denoiser Denoiser::taped(Tape& tape) const {
    Denoiser copy = *this;
    copy.params_.for_each([&](const std::string&, Tensor& t) { t = tape.leaf(t); });
    return copy;
}

NamedTensors Denoiser::to_named() const {
    NamedTensors named;
    named.emplace_back("arch/meta",
                       Tensor(Shape{8}, std::vector<double>{
                                            static_cast<double>(arch_.latent_ch),
                                            static_cast<double>(arch_.latent_hw),
                                            static_cast<double>(arch_.c1),
                                            static_cast<double>(arch_.c2),
                                            static_cast<double>(arch_.d_text),
                                            static_cast<double>(arch_.d_time),
                                            static_cast<double>(arch_.vocab_size),
                                            static_cast<double>(arch_.seed),
                                        }));
    params_.for_each([&](const std::string& name, const Tensor& t) { named.emplace_back(name, t); });
    return named;
}

void Denoiser::save(const std::string& path) const { save_checkpoint(path, to_named()); }

Denoiser Denoiser::load(const std::string& path) {
    NamedTensors named = load_checkpoint(path);
    const Tensor& meta = find_tensor(named, "arch/meta");
    check_arg(meta.numel() == 8, "malformed arch record");
    DenoiserArch arch;
    arch.latent_ch = static_cast<int>(meta.at(0));
    arch.latent_hw = static_cast<int>(meta.at(1));
    arch.c1 = static_cast<int>(meta.at(2));
    arch.c2 = static_cast<int>(meta.at(3));
    arch.d_text = static_cast<int>(meta.at(4));
    arch.d_time = static_cast<int>(meta.at(5));
    arch.vocab_size = static_cast<int>(meta.at(6));
    arch.seed = static_cast<unsigned>(meta.at(7));
    Params p;
    p.for_each([&](const std::string& name, Tensor& t) { t = find_tensor(named, name); });
    return from_params(arch, std::move(p));
}

}  // namespace ft
