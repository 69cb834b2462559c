// Training loops, checkpoints and the padding shim that makes arbitrary
// image sizes divisible by the pyramid factor.
#pragma once

#include <filesystem>
#include <fstream>
#include <utility>

#include "config.hpp"
#include "dataset.hpp"
#include "fusion.hpp"
#include "losses.hpp"
#include "registration.hpp"

namespace mrf {

// ---------------------------------------------------------------------------
// Checkpoints: binary parameter blob + plain-text manifest with the config.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const RunConfig& cfg,
                            const std::vector<std::pair<std::string, const ParamStore*>>& nets,
                            const std::vector<std::string>& manifest_notes = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint: " + path);
    out << "MRFCKPT1\n";
    size_t total = 0;
    for (const auto& [prefix, ps] : nets) total += ps->count();
    out << total << "\n";
    for (const auto& [prefix, ps] : nets) {
        for (const auto& name : ps->names()) {
            const Tensor t = ps->get(name);
            out << prefix << "/" << name << " " << t.height() << " " << t.width() << " "
                << t.channels() << "\n";
            out.write(reinterpret_cast<const char*>(t.value().data()),
                      static_cast<std::streamsize>(t.value().size() * sizeof(double)));
        }
    }
    if (!out) throw data_error("short checkpoint write: " + path);

    std::ofstream man(path + ".manifest");
    if (!man) throw data_error("cannot write manifest: " + path + ".manifest");
    man << cfg.serialize();
    for (const auto& note : manifest_notes) man << "# " << note << "\n";
}

inline RunConfig load_checkpoint_config(const std::string& path) {
    std::ifstream man(path + ".manifest");
    if (!man) throw data_error("missing checkpoint manifest: " + path + ".manifest");
    std::ostringstream buf;
    buf << man.rdbuf();
    return RunConfig::parse(buf.str());
}

// Loads parameter blobs into already-constructed stores (shapes must match).
inline void load_checkpoint_params(
    const std::string& path, const std::vector<std::pair<std::string, ParamStore*>>& nets) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "MRFCKPT1") throw data_error("bad checkpoint magic in " + path);
    size_t total = 0;
    in >> total;
    in.ignore(1);
    for (size_t i = 0; i < total; ++i) {
        std::string name;
        int h = 0, w = 0, c = 0;
        in >> name >> h >> w >> c;
        in.ignore(1);
        if (!in) throw data_error("truncated checkpoint header: " + path);
        bool matched = false;
        for (const auto& [prefix, ps] : nets) {
            if (name.rfind(prefix + "/", 0) != 0) continue;
            Tensor t = ps->get(name.substr(prefix.size() + 1));
            check(t.shape() == Shape{h, w, c},
                  "checkpoint shape mismatch for " + name + ": file " +
                      to_string(Shape{h, w, c}) + " vs model " + to_string(t.shape()));
            in.read(reinterpret_cast<char*>(t.value().data()),
                    static_cast<std::streamsize>(t.value().size() * sizeof(double)));
            matched = true;
            break;
        }
        if (!matched) {
            // Skip payloads for nets the caller did not request.
            in.seekg(static_cast<std::streamoff>(sizeof(double)) * h * w * c, std::ios::cur);
        }
        if (!in) throw data_error("truncated checkpoint payload: " + path);
    }
}

// ---------------------------------------------------------------------------
// Padding shim
// ---------------------------------------------------------------------------

struct PadInfo {
    int bottom = 0, right = 0;
    bool any() const { return bottom || right; }
};

inline PadInfo pad_needed(const Shape& s, int levels) {
    const int div = 1 << levels;
    PadInfo p;
    p.bottom = (div - s.h % div) % div;
    p.right = (div - s.w % div) % div;
    return p;
}

inline Tensor pad_for_pyramid(const Tensor& img, const PadInfo& p) {
    return p.any() ? pad_reflect(img, 0, p.bottom, 0, p.right) : img;
}

inline Tensor apply_translator(const Tensor& visible, Translator t) {
    if (t == Translator::identity) return visible;
    Tensor out(visible.shape());
    for (int i = 0; i < visible.size(); ++i) out.value()[i] = 1.0 - visible.value()[i];
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogEntry {
    int iter = 0;
    double loss_reg = 0.0;
    double loss_fus = 0.0;
    double loss_total = 0.0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    double final_loss = 0.0;
};

inline void write_train_log(const std::string& path, const std::vector<TrainLogEntry>& log) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write training log: " + path);
    out << "iter,loss_reg,loss_fus,loss_total\n";
    out.precision(12);
    for (const auto& e : log)
        out << e.iter << "," << e.loss_reg << "," << e.loss_fus << "," << e.loss_total << "\n";
}

namespace train_detail {

inline std::vector<int> batch_indices(Rng& rng, int dataset_size, int batch) {
    std::vector<int> idx(batch);
    for (auto& i : idx) i = rng.uniform_int(0, dataset_size - 1);
    return idx;
}

}  // namespace train_detail

// Registration-only training with L_reg.
inline TrainResult train_registration(MpdrNet& net, const std::vector<Pair>& data,
                                      const RunConfig& cfg, int iters = -1) {
    check(!data.empty(), "train: empty dataset");
    if (iters < 0) iters = cfg.optim.iters;
    const int batch = std::min<int>(cfg.optim.batch, static_cast<int>(data.size()));
    Adam opt(net.params(), cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2);
    Rng batch_rng(cfg.seed + 2);
    const FeatureMapper psi = default_feature_mapper();

    TrainResult res;
    for (int it = 0; it < iters; ++it) {
        net.params().zero_grad();
        const auto idx = train_detail::batch_indices(batch_rng, static_cast<int>(data.size()), batch);
        Tensor loss;
        for (int i : idx) {
            const Tensor fixed = apply_translator(data[i].fixed, cfg.translator);
            const RegistrationOutput reg = net.forward(fixed, data[i].moving);
            const Tensor l =
                loss_reg_total(reg, fixed, data[i].moving, psi, cfg.loss,
                               cfg.pyramid.integration_steps);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0 / batch);
        loss.backward();
        opt.step();
        res.log.push_back({it, loss.item(), 0.0, loss.item()});
        res.final_loss = loss.item();
    }
    return res;
}

// Fusion-only training with L_fus; registration is frozen, so registered
// inputs are precomputed once.
inline TrainResult train_fusion_frozen(const MpdrNet& reg_net, TcfNet& fus_net,
                                       const std::vector<Pair>& data, const RunConfig& cfg,
                                       int iters = -1) {
    check(!data.empty(), "train: empty dataset");
    if (iters < 0) iters = cfg.optim.iters;
    const int batch = std::min<int>(cfg.optim.batch, static_cast<int>(data.size()));

    std::vector<Tensor> registered, visible;
    for (const auto& p : data) {
        const Tensor fixed = apply_translator(p.fixed, cfg.translator);
        registered.push_back(reg_net.forward(fixed, p.moving).registered.detached_copy());
        visible.push_back(p.fixed);
    }

    Adam opt(fus_net.params(), cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2);
    Rng batch_rng(cfg.seed + 3);
    TrainResult res;
    for (int it = 0; it < iters; ++it) {
        fus_net.params().zero_grad();
        const auto idx = train_detail::batch_indices(batch_rng, static_cast<int>(data.size()), batch);
        Tensor loss;
        for (int i : idx) {
            const Tensor fused = fus_net.forward(registered[i], visible[i]);
            const Tensor l = loss_fusion_total(fused, registered[i], visible[i], cfg.loss);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0 / batch);
        loss.backward();
        opt.step();
        res.log.push_back({it, 0.0, loss.item(), loss.item()});
        res.final_loss = loss.item();
    }
    return res;
}

// Joint training: both networks update from L_reg + balance * L_fus; the
// fusion loss sees the registered image, so its gradients flow back into
// registration.
inline TrainResult train_joint(MpdrNet& reg_net, TcfNet& fus_net, const std::vector<Pair>& data,
                               const RunConfig& cfg, int iters = -1) {
    check(!data.empty(), "train: empty dataset");
    if (iters < 0) iters = cfg.optim.iters;
    const int batch = std::min<int>(cfg.optim.batch, static_cast<int>(data.size()));
    Adam opt_reg(reg_net.params(), cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2);
    Adam opt_fus(fus_net.params(), cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2);
    Rng batch_rng(cfg.seed + 2);
    const FeatureMapper psi = default_feature_mapper();

    TrainResult res;
    for (int it = 0; it < iters; ++it) {
        reg_net.params().zero_grad();
        fus_net.params().zero_grad();
        const auto idx = train_detail::batch_indices(batch_rng, static_cast<int>(data.size()), batch);
        Tensor lreg_acc, lfus_acc;
        for (int i : idx) {
            const Tensor fixed = apply_translator(data[i].fixed, cfg.translator);
            const RegistrationOutput reg = reg_net.forward(fixed, data[i].moving);
            const Tensor lreg = loss_reg_total(reg, fixed, data[i].moving, psi, cfg.loss,
                                               cfg.pyramid.integration_steps);
            const Tensor fused = fus_net.forward(reg.registered, data[i].fixed);
            const Tensor lfus = loss_fusion_total(fused, reg.registered, data[i].fixed, cfg.loss);
            lreg_acc = lreg_acc.defined() ? add(lreg_acc, lreg) : lreg;
            lfus_acc = lfus_acc.defined() ? add(lfus_acc, lfus) : lfus;
        }
        lreg_acc = scale(lreg_acc, 1.0 / batch);
        lfus_acc = scale(lfus_acc, 1.0 / batch);
        const Tensor total = add(lreg_acc, scale(lfus_acc, cfg.balance));
        total.backward();
        opt_reg.step();
        opt_fus.step();
        res.log.push_back({it, lreg_acc.item(), lfus_acc.item(), total.item()});
        res.final_loss = total.item();
    }
    return res;
}

}  // namespace mrf
