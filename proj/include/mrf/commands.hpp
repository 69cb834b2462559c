// Command implementations behind the CLI subcommands. Kept in the library
// so tests can drive them directly.
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "config.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "train.hpp"

namespace mrf {

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline int cmd_synth(const SynthOptions& opt) {
    const DatasetManifest m = synthesize_dataset(opt);
    std::cout << "wrote " << m.ids.size() << " samples to " << m.root << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    RunConfig cfg;
    std::string data;  // dataset dir or manifest path
    std::string out_ckpt = "model.ckpt";
    std::string log_path;  // defaults to out_ckpt + ".losses.csv"
    std::string init_ckpt; // optional warm start
};

struct TrainedModels {
    RunConfig cfg;
    std::shared_ptr<MpdrNet> reg;
    std::shared_ptr<TcfNet> fus;
    TrainResult reg_result, fus_result;
};

inline TrainedModels run_training(const TrainOptions& opt) {
    RunConfig cfg = opt.cfg;
    const DatasetManifest manifest = DatasetManifest::load(opt.data);
    std::vector<Pair> pairs = load_pairs(manifest);

    // Reflect-pad any non-divisible sizes up front; noted in the manifest.
    const PadInfo pad = pad_needed(pairs[0].moving.shape(), cfg.pyramid.levels);
    for (auto& p : pairs) {
        p.moving = pad_for_pyramid(p.moving, pad);
        p.fixed = pad_for_pyramid(p.fixed, pad);
    }

    TrainedModels out;
    Rng reg_rng(cfg.seed);
    Rng fus_rng(cfg.seed + 1);
    out.reg = std::make_shared<MpdrNet>(cfg.pyramid, reg_rng);
    out.fus = std::make_shared<TcfNet>(cfg.tcf, fus_rng);
    if (!opt.init_ckpt.empty())
        load_checkpoint_params(opt.init_ckpt, {{"reg", &out.reg->params()}, {"fus", &out.fus->params()}});

    if (cfg.mode == TrainMode::joint) {
        out.reg_result = train_joint(*out.reg, *out.fus, pairs, cfg);
        out.fus_result = out.reg_result;
    } else {
        out.reg_result = train_registration(*out.reg, pairs, cfg);
        out.fus_result = train_fusion_frozen(*out.reg, *out.fus, pairs, cfg);
    }
    out.cfg = cfg;

    std::vector<std::string> notes;
    if (pad.any())
        notes.push_back("padded inputs: bottom=" + std::to_string(pad.bottom) +
                        " right=" + std::to_string(pad.right));
    save_checkpoint(opt.out_ckpt, cfg,
                    {{"reg", &out.reg->params()}, {"fus", &out.fus->params()}}, notes);

    std::vector<TrainLogEntry> log = out.reg_result.log;
    if (cfg.mode == TrainMode::frozen_registration) {
        for (auto e : out.fus_result.log) {
            e.iter += static_cast<int>(out.reg_result.log.size());
            log.push_back(e);
        }
    }
    write_train_log(opt.log_path.empty() ? opt.out_ckpt + ".losses.csv" : opt.log_path, log);
    return out;
}

inline int cmd_train(const TrainOptions& opt) {
    const TrainedModels m = run_training(opt);
    std::cout << "final losses: reg=" << m.reg_result.final_loss
              << " fus=" << m.fus_result.final_loss << "\n";
    std::cout << "checkpoint: " << opt.out_ckpt << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// register / fuse
// ---------------------------------------------------------------------------

struct ModelBundle {
    RunConfig cfg;
    std::shared_ptr<MpdrNet> reg;
    std::shared_ptr<TcfNet> fus;
};

inline ModelBundle load_models(const std::string& ckpt) {
    ModelBundle b;
    b.cfg = load_checkpoint_config(ckpt);
    Rng reg_rng(b.cfg.seed);
    Rng fus_rng(b.cfg.seed + 1);
    b.reg = std::make_shared<MpdrNet>(b.cfg.pyramid, reg_rng);
    b.fus = std::make_shared<TcfNet>(b.cfg.tcf, fus_rng);
    load_checkpoint_params(ckpt, {{"reg", &b.reg->params()}, {"fus", &b.fus->params()}});
    return b;
}

// Pads, registers, crops back to the original size.
inline RegistrationOutput register_padded(const MpdrNet& net, const Tensor& fixed,
                                          const Tensor& moving) {
    const PadInfo pad = pad_needed(fixed.shape(), net.config().levels);
    if (!pad.any()) return net.forward(fixed, moving);
    RegistrationOutput r =
        net.forward(pad_for_pyramid(fixed, pad), pad_for_pyramid(moving, pad));
    const int h = fixed.height(), w = fixed.width();
    r.registered = crop(r.registered, 0, 0, h, w);
    r.final_field = crop(r.final_field, 0, 0, h, w);
    r.final_velocity = crop(r.final_velocity, 0, 0, h, w);
    return r;
}

struct RegisterOptions {
    std::string fixed, moving, ckpt;
    std::string out_field, out_image;
};

inline int cmd_register(const RegisterOptions& opt) {
    const ModelBundle b = load_models(opt.ckpt);
    const Tensor moving = load_png(opt.moving);
    const Tensor fixed_vis = load_png(opt.fixed);
    check(moving.shape() == fixed_vis.shape(), "register: fixed/moving size mismatch");
    const Tensor fixed = apply_translator(fixed_vis, b.cfg.translator);
    const RegistrationOutput r = register_padded(*b.reg, fixed, moving);
    if (!opt.out_field.empty()) save_field(opt.out_field, r.final_field);
    if (!opt.out_image.empty()) save_png(opt.out_image, r.registered);
    std::cout << "registered " << opt.moving << " -> "
              << (opt.out_image.empty() ? "(no image requested)" : opt.out_image) << "\n";
    return 0;
}

struct FuseOptions {
    std::string ir, vis, ckpt, out;
};

inline int cmd_fuse(const FuseOptions& opt) {
    const ModelBundle b = load_models(opt.ckpt);
    const Tensor ir = load_png(opt.ir);
    const Tensor vis = load_png(opt.vis);
    check(ir.shape() == vis.shape(), "fuse: input size mismatch");
    const Tensor fused = b.fus->forward(ir, vis);
    save_png(opt.out, fused);
    std::cout << "fused -> " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct PairMetrics {
    std::string id;
    double mse = 0, ncc = 0, mi = 0;               // registered vs fixed
    double cc = 0, ssim = 0, vif = 0, qabf = 0;    // fusion vs (registered, vis)
    double mi_fus = 0;
    double mse_base = 0, ncc_base = 0, mi_base = 0;  // moving vs fixed
};

struct EvalReport {
    std::vector<PairMetrics> pairs;

    double mean(double PairMetrics::* field) const {
        double acc = 0;
        for (const auto& p : pairs) acc += p.*field;
        return pairs.empty() ? 0.0 : acc / pairs.size();
    }
};

inline EvalReport evaluate_models(const MpdrNet& reg, const TcfNet& fus, Translator translator,
                                  const std::vector<Pair>& data,
                                  const std::vector<std::string>& ids) {
    EvalReport rep;
    for (size_t i = 0; i < data.size(); ++i) {
        const Pair& p = data[i];
        PairMetrics pm;
        pm.id = i < ids.size() ? ids[i] : std::to_string(i);
        const Tensor fixed = apply_translator(p.fixed, translator);
        const RegistrationOutput r = register_padded(reg, fixed, p.moving);
        const Tensor registered = r.registered.detached_copy();
        const Tensor fused = fus.forward(registered, p.fixed).detached_copy();
        pm.mse = metrics::mse(registered, fixed);
        pm.ncc = metrics::ncc(registered, fixed);
        pm.mi = metrics::mutual_information(registered, fixed);
        pm.cc = metrics::cc_fusion(fused, registered, p.fixed);
        pm.ssim = metrics::ssim_fusion(fused, registered, p.fixed);
        pm.vif = metrics::vif_fusion(fused, registered, p.fixed);
        pm.qabf = metrics::qabf(fused, registered, p.fixed);
        pm.mi_fus = metrics::mi_fusion(fused, registered, p.fixed);
        pm.mse_base = metrics::mse(p.moving, fixed);
        pm.ncc_base = metrics::ncc(p.moving, fixed);
        pm.mi_base = metrics::mutual_information(p.moving, fixed);
        rep.pairs.push_back(pm);
    }
    return rep;
}

// Per-pair CSV with the pinned column order, a trailing mean-misaligned
// baseline row, and a JSON aggregate.
inline void write_eval_report(const EvalReport& rep, const std::string& csv_path,
                              const std::string& json_path) {
    {
        std::ofstream csv(csv_path);
        if (!csv) throw data_error("cannot write " + csv_path);
        csv << "pair_id,mse,ncc,mi,cc,ssim,vif,qabf\n";
        csv.precision(10);
        for (const auto& p : rep.pairs)
            csv << p.id << "," << p.mse << "," << p.ncc << "," << p.mi << "," << p.cc << ","
                << p.ssim << "," << p.vif << "," << p.qabf << "\n";
        csv << "misaligned," << rep.mean(&PairMetrics::mse_base) << ","
            << rep.mean(&PairMetrics::ncc_base) << "," << rep.mean(&PairMetrics::mi_base)
            << ",,,,\n";
    }
    nlohmann::json j;
    j["pairs"] = rep.pairs.size();
    j["registered"] = {{"mse", rep.mean(&PairMetrics::mse)},
                       {"ncc", rep.mean(&PairMetrics::ncc)},
                       {"mi", rep.mean(&PairMetrics::mi)}};
    j["misaligned"] = {{"mse", rep.mean(&PairMetrics::mse_base)},
                       {"ncc", rep.mean(&PairMetrics::ncc_base)},
                       {"mi", rep.mean(&PairMetrics::mi_base)}};
    j["fusion"] = {{"cc", rep.mean(&PairMetrics::cc)},
                   {"mi", rep.mean(&PairMetrics::mi_fus)},
                   {"ssim", rep.mean(&PairMetrics::ssim)},
                   {"vif", rep.mean(&PairMetrics::vif)},
                   {"qabf", rep.mean(&PairMetrics::qabf)}};
    std::ofstream js(json_path);
    if (!js) throw data_error("cannot write " + json_path);
    js << j.dump(2) << "\n";
}

struct EvalOptions {
    std::vector<std::string> ckpts;
    std::string data;
    std::string out_dir = ".";
};

inline int cmd_eval(const EvalOptions& opt) {
    namespace fs = std::filesystem;
    check(!opt.ckpts.empty(), "eval: at least one checkpoint required");
    const DatasetManifest manifest = DatasetManifest::load(opt.data);
    const std::vector<Pair> data = load_pairs(manifest);
    fs::create_directories(opt.out_dir);

    std::vector<EvalReport> reports;
    for (size_t k = 0; k < opt.ckpts.size(); ++k) {
        const ModelBundle b = load_models(opt.ckpts[k]);
        EvalReport rep = evaluate_models(*b.reg, *b.fus, b.cfg.translator, data, manifest.ids);
        const std::string stem = fs::path(opt.ckpts[k]).stem().string();
        write_eval_report(rep, opt.out_dir + "/" + stem + "_metrics.csv",
                          opt.out_dir + "/" + stem + "_summary.json");
        reports.push_back(std::move(rep));
    }

    if (reports.size() > 1) {
        // Side-by-side registration metrics, one column per checkpoint.
        std::ofstream cmp(opt.out_dir + "/comparison.csv");
        if (!cmp) throw data_error("cannot write comparison.csv");
        cmp << "metric";
        for (const auto& c : opt.ckpts) cmp << "," << fs::path(c).stem().string();
        cmp << "\n";
        cmp.precision(10);
        auto row = [&](const std::string& name, double PairMetrics::* field) {
            cmp << name;
            for (const auto& r : reports) cmp << "," << r.mean(field);
            cmp << "\n";
        };
        row("mse", &PairMetrics::mse);
        row("ncc", &PairMetrics::ncc);
        row("mi", &PairMetrics::mi);
        row("ssim_fusion", &PairMetrics::ssim);
        row("vif_fusion", &PairMetrics::vif);
    }
    std::cout << "evaluated " << data.size() << " pairs with " << opt.ckpts.size()
              << " checkpoint(s) into " << opt.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// errormap
// ---------------------------------------------------------------------------

// |a-b|, min-max normalized; exposed separately so tests can check the raw
// map before color mapping.
inline Tensor error_magnitude(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "errormap: shape mismatch");
    Tensor m(a.height(), a.width(), 1);
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < a.size(); ++i) {
        const double d = std::fabs(a.value()[i] - b.value()[i]);
        m.value()[i] = d;
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    if (hi - lo > 1e-12)
        for (auto& v : m.value()) v = (v - lo) / (hi - lo);
    else
        for (auto& v : m.value()) v = 0.0;
    return m;
}

// Fixed "hot" color map: black -> red -> yellow -> white.
inline Tensor apply_hot_colormap(const Tensor& map01) {
    Tensor rgb(map01.height(), map01.width(), 3);
    for (int i = 0; i < map01.size(); ++i) {
        const double t = std::clamp(map01.value()[i], 0.0, 1.0);
        rgb.value()[static_cast<size_t>(i) * 3 + 0] = std::clamp(3.0 * t, 0.0, 1.0);
        rgb.value()[static_cast<size_t>(i) * 3 + 1] = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
        rgb.value()[static_cast<size_t>(i) * 3 + 2] = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
    }
    return rgb;
}

struct ErrormapOptions {
    std::string image_a, image_b, out;
};

inline int cmd_errormap(const ErrormapOptions& opt) {
    const Tensor a = load_png(opt.image_a);
    const Tensor b = load_png(opt.image_b);
    save_png(opt.out, apply_hot_colormap(error_magnitude(a, b)));
    std::cout << "errormap -> " << opt.out << "\n";
    return 0;
}

}  // namespace mrf
