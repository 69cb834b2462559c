// Transformer-conv fusion network.
//
// Each input stream runs a 1x1 lift, one or more transformer-conv blocks
// (channel-split between windowed self-attention and a residual conv
// branch), and a dual-attention unit. The enhanced streams are summed and
// decoded through a residual conv block and a sigmoid-bounded 3x3 head, so
// the fused image always lands in [0,1].
#pragma once

#include <string>
#include <vector>

#include "nn.hpp"
#include "tensor.hpp"

namespace mrf {

struct TcfConfig {
    int channels = 32;  // C, split into two halves inside each block
    int window = 8;
    int heads = 4;
    int ca_reduction = 8;
    int depth = 1;  // transformer-conv blocks per stream; blocks at odd index
                    // use shifted windows
    int in_channels = 1;
    // Zero-initializes every block's trailing 1x1 conv, reducing the fresh
    // network to a conv-only pipeline (the blocks start as identities).
    bool conv_only_init = false;

    void validate() const {
        check(channels % 2 == 0, "tcf: channels must be even");
        check((channels / 2) % heads == 0, "tcf: half-width must be divisible by heads");
        check(window >= 2, "tcf: window too small");
        check(depth >= 1, "tcf: depth must be >= 1");
    }
};

namespace fus_detail {

// Pre-norm windowed attention block: z += WMSA(LN(z)); z += MLP(LN(z)).
struct WindowAttentionBlock {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Conv qkv, proj, mlp1, mlp2;
    int window = 8, heads = 4;
    bool shifted = false;

    WindowAttentionBlock() = default;
    WindowAttentionBlock(ParamStore& ps, const std::string& name, int c, int window_, int heads_,
                         bool shifted_, Rng& rng)
        : window(window_), heads(heads_), shifted(shifted_) {
        ln1_g = ps.add(name + "/ln1/g", init::ones(1, 1, c));
        ln1_b = ps.add(name + "/ln1/b", init::zeros(1, 1, c));
        ln2_g = ps.add(name + "/ln2/g", init::ones(1, 1, c));
        ln2_b = ps.add(name + "/ln2/b", init::zeros(1, 1, c));
        qkv = Conv(ps, name + "/qkv", 1, c, 3 * c, rng);
        proj = Conv(ps, name + "/proj", 1, c, c, rng);
        mlp1 = Conv(ps, name + "/mlp1", 1, c, 2 * c, rng);
        mlp2 = Conv(ps, name + "/mlp2", 1, 2 * c, c, rng);
    }

    Tensor operator()(const Tensor& x) const {
        const int h = x.height(), w = x.width();
        const int ph = (window - h % window) % window;
        const int pw = (window - w % window) % window;
        Tensor z = (ph || pw) ? pad_reflect(x, 0, ph, 0, pw) : x;
        const int shift = shifted ? window / 2 : 0;
        if (shift) z = roll(z, -shift, -shift);
        Tensor attn = window_attention(qkv(layer_norm(z, ln1_g, ln1_b)), window, heads);
        z = add(z, proj(attn));
        z = add(z, mlp2(gelu(mlp1(layer_norm(z, ln2_g, ln2_b)))));
        if (shift) z = roll(z, shift, shift);
        if (ph || pw) z = crop(z, 0, 0, h, w);
        return z;
    }
};

// Channel-split transformer/conv block with inner concat-project and outer
// residual.
struct TransformerConvBlock {
    Conv split_conv, merge_conv;
    WindowAttentionBlock attn;
    ResidualConv rcb;
    int channels = 0;

    TransformerConvBlock() = default;
    TransformerConvBlock(ParamStore& ps, const std::string& name, int c, int window, int heads,
                         bool shifted, Rng& rng)
        : channels(c) {
        check(c % 2 == 0, "transformer-conv block: odd channel count");
        split_conv = Conv(ps, name + "/split", 1, c, c, rng);
        attn = WindowAttentionBlock(ps, name + "/stb", c / 2, window, heads, shifted, rng);
        rcb = ResidualConv(ps, name + "/rcb", c / 2, rng);
        merge_conv = Conv(ps, name + "/merge", 1, c, c, rng);
    }

    Tensor operator()(const Tensor& x) const {
        const Tensor h = split_conv(x);
        const int half = channels / 2;
        const Tensor a = attn(slice_channels(h, 0, half));
        const Tensor b = rcb(slice_channels(h, half, channels));
        return add(merge_conv(concat_channels({a, b})), x);
    }
};

// Dual attention: a spatial gate from channel max/mean maps and a channel
// gate from global average pooling, concatenated and fused back.
struct DualAttention {
    Conv sp1, sp2, ch1, ch2, out_conv;

    DualAttention() = default;
    DualAttention(ParamStore& ps, const std::string& name, int c, int reduction, Rng& rng) {
        sp1 = Conv(ps, name + "/sp1", 3, 2, 4, rng);
        sp2 = Conv(ps, name + "/sp2", 3, 4, 1, rng);
        const int hidden = std::max(1, c / reduction);
        ch1 = Conv(ps, name + "/ch1", 1, c, hidden, rng);
        ch2 = Conv(ps, name + "/ch2", 1, hidden, c, rng);
        out_conv = Conv(ps, name + "/out", 3, 2 * c, c, rng);
    }

    // Replicate padding keeps the gate exactly constant on constant inputs.
    Tensor spatial_gate(const Tensor& x) const {
        const Tensor pooled = concat_channels({channel_max(x), channel_mean(x)});
        const Tensor h = relu(conv2d(pad_replicate(pooled, 1, 1, 1, 1), sp1.w, sp1.b, 2, 4, 1, false));
        return sigmoid(conv2d(pad_replicate(h, 1, 1, 1, 1), sp2.w, sp2.b, 4, 1, 1, false));
    }
    Tensor channel_gate(const Tensor& x) const {
        return sigmoid(ch2(relu(ch1(global_avg_pool(x)))));
    }

    Tensor operator()(const Tensor& x) const {
        const Tensor xs = mul_broadcast(x, spatial_gate(x));
        const Tensor xc = mul_broadcast(x, channel_gate(x));
        return relu(out_conv(concat_channels({xs, xc})));
    }
};

}  // namespace fus_detail

class TcfNet {
public:
    TcfNet(const TcfConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        lift_a_ = Conv(params_, "lift_a", 1, cfg_.in_channels, cfg_.channels, rng);
        lift_b_ = Conv(params_, "lift_b", 1, cfg_.in_channels, cfg_.channels, rng);
        for (int i = 0; i < cfg_.depth; ++i) {
            const bool shifted = (i % 2) == 1;
            blocks_a_.emplace_back(params_, "tcb_a" + std::to_string(i), cfg_.channels,
                                   cfg_.window, cfg_.heads, shifted, rng);
            blocks_b_.emplace_back(params_, "tcb_b" + std::to_string(i), cfg_.channels,
                                   cfg_.window, cfg_.heads, shifted, rng);
        }
        if (cfg_.conv_only_init) {
            for (auto* blocks : {&blocks_a_, &blocks_b_})
                for (auto& blk : *blocks) {
                    for (auto& v : blk.merge_conv.w.value()) v = 0.0;
                    for (auto& v : blk.merge_conv.b.value()) v = 0.0;
                }
        }
        dau_a_ = fus_detail::DualAttention(params_, "dau_a", cfg_.channels, cfg_.ca_reduction, rng);
        dau_b_ = fus_detail::DualAttention(params_, "dau_b", cfg_.channels, cfg_.ca_reduction, rng);
        merge_rcb_ = ResidualConv(params_, "merge_rcb", cfg_.channels, rng);
        out_conv_ = Conv(params_, "out_conv", 3, cfg_.channels, cfg_.in_channels, rng);
        // Small-gain head: the fused image starts near mid-gray instead of a
        // saturated sigmoid, which would stall training.
        for (auto& v : out_conv_.w.value()) v *= 0.1;
    }

    const TcfConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Tensor forward(const Tensor& ir_reg, const Tensor& vis) const {
        check(ir_reg.shape() == vis.shape(), "fuse: input shape mismatch");
        Tensor a = lift_a_(ir_reg);
        Tensor b = lift_b_(vis);
        for (const auto& blk : blocks_a_) a = blk(a);
        for (const auto& blk : blocks_b_) b = blk(b);
        a = dau_a_(a);
        b = dau_b_(b);
        return sigmoid(out_conv_(merge_rcb_(add(a, b))));
    }

    const fus_detail::TransformerConvBlock& block_a(int i) const { return blocks_a_[i]; }
    const fus_detail::DualAttention& dau_a() const { return dau_a_; }

private:
    TcfConfig cfg_;
    ParamStore params_;
    Conv lift_a_, lift_b_, out_conv_;
    std::vector<fus_detail::TransformerConvBlock> blocks_a_, blocks_b_;
    fus_detail::DualAttention dau_a_, dau_b_;
    ResidualConv merge_rcb_;
};

}  // namespace mrf
