// Coarse-to-fine deformable registration network.
//
// Two independent feature pyramids feed a top-down decoder. At the top
// scale a decoder block estimates the first velocity subfield. Descending,
// each target scale s fuses every coarser subfield (upsampled and
// reweighted per pixel, then integrated) into a displacement field, warps
// the moving-stream features with it, refines the warped / decoded / fixed
// feature triple, and estimates the next velocity subfield from the refined
// features. The finest-scale subfield is added to the fused velocity before
// the final integration, so the whole cascade trains end to end and the
// forward field stays invertible through its velocity.
//
// All flow heads are zero-initialized: an untrained network is exactly the
// identity warp.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "field.hpp"
#include "nn.hpp"
#include "tensor.hpp"

namespace mrf {

enum class DffMode { full, interp_only };
enum class PffMode { full, concat };

struct PyramidConfig {
    int levels = 4;                                  // K
    std::vector<int> widths = {16, 32, 32, 64, 64};  // per level, size K+1
    int integration_steps = 7;
    int dff_hidden = 16;
    int se_reduction = 8;
    int in_channels = 1;
    DffMode dff_mode = DffMode::full;
    PffMode pff_mode = PffMode::full;

    void validate() const {
        check(levels >= 1, "pyramid: levels must be >= 1");
        check(static_cast<int>(widths.size()) == levels + 1,
              "pyramid: widths must list levels+1 entries");
        check(integration_steps >= 1, "pyramid: integration steps must be >= 1");
    }
};

struct FeaturePyramid {
    std::vector<Tensor> levels;  // levels[k] at (H/2^k) x (W/2^k)
};

struct RegistrationOutput {
    Tensor final_field;     // displacement at full resolution (the -phi of the warp)
    Tensor final_velocity;  // final_field = integrate_velocity(final_velocity)
    std::vector<Tensor> subfields;     // velocity subfields, index k = 0..K
    std::vector<Tensor> fused_fields;  // displacement per target scale, index s = 0..K-1
    Tensor registered;                 // warp(moving, final_field)
};

namespace reg_detail {

// One stream of the two-stream extractor: two conv+ReLU per level,
// stride-2 entry except at level 0.
struct Extractor {
    std::vector<Conv> entry, refine;

    Extractor() = default;
    Extractor(ParamStore& ps, const std::string& name, const PyramidConfig& cfg, Rng& rng) {
        int prev = cfg.in_channels;
        for (int k = 0; k <= cfg.levels; ++k) {
            const int w = cfg.widths[k];
            entry.push_back(Conv(ps, name + "/l" + std::to_string(k) + "/conv1", 3, prev, w, rng,
                                 k == 0 ? 1 : 2));
            refine.push_back(Conv(ps, name + "/l" + std::to_string(k) + "/conv2", 3, w, w, rng));
            prev = w;
        }
    }

    FeaturePyramid operator()(const Tensor& image) const {
        FeaturePyramid pyr;
        Tensor x = image;
        for (size_t k = 0; k < entry.size(); ++k) {
            // RMS-normalized levels: the registration loss otherwise learns
            // to collapse feature magnitudes into a bias-only field.
            x = rms_norm_channels(relu(refine[k](relu(entry[k](x)))));
            pyr.levels.push_back(x);
        }
        return pyr;
    }
};

// Velocity head: two conv+ReLU, then a zero-initialized 3x3 conv to 2 channels.
struct SubfieldHead {
    Conv c1, c2, flow;

    SubfieldHead() = default;
    SubfieldHead(ParamStore& ps, const std::string& name, int width, Rng& rng) {
        c1 = Conv(ps, name + "/c1", 3, width, width, rng);
        c2 = Conv(ps, name + "/c2", 3, width, width, rng);
        flow = Conv(ps, name + "/flow", 3, width, 2, rng, 1, /*zero_init=*/true);
    }

    Tensor operator()(const Tensor& feats) const { return flow(relu(c2(relu(c1(feats))))); }
};

// Dense fusion of all coarser velocity subfields at one target scale:
// upsample each to the target, map the stack through conv+ReLU to a shared
// weight volume, gate every field with its own conv+sigmoid head, sum.
struct FieldFusion {
    Conv mix;
    std::vector<Conv> weight_heads;

    FieldFusion() = default;
    FieldFusion(ParamStore& ps, const std::string& name, int num_fields, int hidden, Rng& rng) {
        mix = Conv(ps, name + "/mix", 3, 2 * num_fields, hidden, rng);
        for (int t = 0; t < num_fields; ++t)
            weight_heads.push_back(Conv(ps, name + "/weight" + std::to_string(t), 3, hidden, 1, rng));
    }

    // fields[i] is upsampled by factors[i]; all products must share the
    // target size.
    Tensor fused_velocity(const std::vector<Tensor>& fields, const std::vector<int>& factors) const {
        check(fields.size() == weight_heads.size(), "field fusion: arity mismatch");
        check(fields.size() == factors.size(), "field fusion: factor list mismatch");
        std::vector<Tensor> ups;
        for (size_t i = 0; i < fields.size(); ++i) ups.push_back(upsample_field(fields[i], factors[i]));
        for (size_t i = 1; i < ups.size(); ++i)
            check(ups[i].shape() == ups[0].shape(),
                  "field fusion: scale mismatch among subfields after upsampling");
        const Tensor weight_volume = relu(mix(concat_channels(ups)));
        Tensor acc;
        for (size_t i = 0; i < ups.size(); ++i) {
            const Tensor w = sigmoid(weight_heads[i](weight_volume));
            const Tensor term = mul_broadcast(ups[i], w);
            acc = acc.defined() ? add(acc, term) : term;
        }
        return acc;
    }
};

// Refines warped-moving / upsampled-decoded / fixed features: per-pixel
// 3-way softmax reweighting, squeeze-excitation over the reweighted stack,
// then a 1x1 fusion back to the level width.
struct FeatureRefine {
    Conv up_proj, mix, weight3, fuse1x1;
    SqueezeExcite se;

    FeatureRefine() = default;
    FeatureRefine(ParamStore& ps, const std::string& name, int width, int upper_width,
                  int se_reduction, Rng& rng) {
        up_proj = Conv(ps, name + "/up_proj", 1, upper_width, width, rng);
        mix = Conv(ps, name + "/mix", 3, 3 * width, width, rng);
        weight3 = Conv(ps, name + "/weight3", 3, width, 3, rng);
        se = SqueezeExcite(ps, name + "/se", 3 * width, se_reduction, rng);
        fuse1x1 = Conv(ps, name + "/fuse", 1, 3 * width, width, rng);
    }

    Tensor project_decoded(const Tensor& upper_decoded) const {
        return up_proj(upsample_bilinear(upper_decoded, 2));
    }

    Tensor operator()(const Tensor& warped, const Tensor& decoded_up, const Tensor& fixed,
                      PffMode mode) const {
        const Tensor cat = concat_channels({warped, decoded_up, fixed});
        if (mode == PffMode::concat) return rms_norm_channels(relu(fuse1x1(cat)));
        const Tensor cmix = relu(mix(cat));
        const Tensor s = softmax_channels(weight3(cmix));
        const Tensor weighted = concat_channels({mul_broadcast(warped, slice_channels(s, 0, 1)),
                                                 mul_broadcast(decoded_up, slice_channels(s, 1, 2)),
                                                 mul_broadcast(fixed, slice_channels(s, 2, 3))});
        return rms_norm_channels(relu(fuse1x1(se(weighted))));
    }
};

}  // namespace reg_detail

class MpdrNet {
public:
    MpdrNet(const PyramidConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const int K = cfg_.levels;
        // The streams stay independent (no weight sharing), but both start
        // from the same draws so their embeddings are comparable from the
        // first step; the cross-stream feature difference then carries the
        // alignment signal instead of an arbitrary embedding mismatch.
        Rng moving_rng = rng;
        extract_fixed_ = reg_detail::Extractor(params_, "extract_fixed", cfg_, rng);
        extract_moving_ = reg_detail::Extractor(params_, "extract_moving", cfg_, moving_rng);
        decode1_ = Conv(params_, "decode_top/c1", 3, 2 * cfg_.widths[K], cfg_.widths[K], rng);
        decode2_ = Conv(params_, "decode_top/c2", 3, cfg_.widths[K], cfg_.widths[K], rng);
        top_flow_ = Conv(params_, "decode_top/flow", 3, cfg_.widths[K], 2, rng, 1, /*zero_init=*/true);
        for (int s = K - 1; s >= 0; --s) {
            const std::string tag = std::to_string(s);
            dff_.insert(dff_.begin(), reg_detail::FieldFusion(params_, "dff" + tag, K - s,
                                                              cfg_.dff_hidden, rng));
            pff_.insert(pff_.begin(),
                        reg_detail::FeatureRefine(params_, "pff" + tag, cfg_.widths[s],
                                                  cfg_.widths[s + 1], cfg_.se_reduction, rng));
            heads_.insert(heads_.begin(),
                          reg_detail::SubfieldHead(params_, "head" + tag, cfg_.widths[s], rng));
        }
    }

    const PyramidConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    std::pair<FeaturePyramid, FeaturePyramid> extract_pyramids(const Tensor& fixed,
                                                               const Tensor& moving) const {
        check_input(fixed);
        check_input(moving);
        check(fixed.shape() == moving.shape(), "register: fixed/moving shape mismatch");
        return {extract_fixed_(fixed), extract_moving_(moving)};
    }

    // Top-of-pyramid decoding: concatenated top features -> decoded features
    // and the first velocity subfield.
    std::pair<Tensor, Tensor> decode_top(const Tensor& fixed_top, const Tensor& moving_top) const {
        check(fixed_top.shape() == moving_top.shape(), "decode_top: shape mismatch");
        const Tensor d =
            rms_norm_channels(relu(decode2_(relu(decode1_(concat_channels({fixed_top, moving_top}))))));
        return {d, top_flow_(d)};
    }

    RegistrationOutput forward(const Tensor& fixed, const Tensor& moving) const {
        auto [pyr_fixed, pyr_moving] = extract_pyramids(fixed, moving);
        const int K = cfg_.levels;

        RegistrationOutput out;
        out.subfields.assign(K + 1, Tensor());
        out.fused_fields.assign(K, Tensor());

        auto [decoded, top_field] = decode_top(pyr_fixed.levels[K], pyr_moving.levels[K]);
        out.subfields[K] = top_field;

        for (int s = K - 1; s >= 0; --s) {
            // Fuse subfields K..s+1 down to this scale.
            std::vector<Tensor> coarser;
            std::vector<int> factors;
            for (int i = K; i >= s + 1; --i) {
                coarser.push_back(out.subfields[i]);
                factors.push_back(1 << (i - s));
            }
            Tensor fused_vel;
            if (cfg_.dff_mode == DffMode::interp_only)
                fused_vel = upsample_field(out.subfields[s + 1], 2);
            else
                fused_vel = dff_[s].fused_velocity(coarser, factors);
            const Tensor fused = integrate_velocity(fused_vel, cfg_.integration_steps);

            const Tensor warped = warp(pyr_moving.levels[s], fused);
            decoded = pff_[s](warped, pff_[s].project_decoded(decoded), pyr_fixed.levels[s],
                              cfg_.pff_mode);
            out.subfields[s] = heads_[s](decoded);

            if (s == 0) {
                // Finest-scale refinement joins the velocity before the final
                // integration, keeping the output field invertible.
                out.final_velocity = add(fused_vel, out.subfields[0]);
                out.final_field = integrate_velocity(out.final_velocity, cfg_.integration_steps);
                out.fused_fields[0] = out.final_field;
            } else {
                out.fused_fields[s] = fused;
            }
        }
        out.registered = warp(moving, out.final_field);
        return out;
    }

    // Direct access for module-level tests.
    const reg_detail::FieldFusion& dff(int target_scale) const { return dff_[target_scale]; }
    const reg_detail::FeatureRefine& pff(int target_scale) const { return pff_[target_scale]; }
    const reg_detail::SubfieldHead& head(int target_scale) const { return heads_[target_scale]; }

private:
    void check_input(const Tensor& img) const {
        const int div = 1 << cfg_.levels;
        check(img.height() % div == 0 && img.width() % div == 0,
              "register: input size " + to_string(img.shape()) + " not divisible by " +
                  std::to_string(div));
        check(img.channels() == cfg_.in_channels, "register: unexpected channel count");
    }

    PyramidConfig cfg_;
    ParamStore params_;
    reg_detail::Extractor extract_fixed_, extract_moving_;
    Conv decode1_, decode2_, top_flow_;
    std::vector<reg_detail::FieldFusion> dff_;     // indexed by target scale
    std::vector<reg_detail::FeatureRefine> pff_;   // indexed by target scale
    std::vector<reg_detail::SubfieldHead> heads_;  // indexed by target scale
};

}  // namespace mrf
