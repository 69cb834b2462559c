// Run configuration: flat key=value text with dotted namespaces. The same
// serialization is embedded in checkpoint manifests, so a manifest alone
// reconstructs the exact run setup.
#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fusion.hpp"
#include "losses.hpp"
#include "registration.hpp"

namespace mrf {

// Bad or missing configuration; the CLI maps it to exit 2.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TrainMode { joint, frozen_registration };
enum class Translator { identity, invert };

struct OptimConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int iters = 2000;
    int batch = 8;
};

struct RunConfig {
    std::uint64_t seed = 7;
    std::string regime = "slight";
    int image_size = 64;
    std::string modality = "mono";  // mono | inverted (synthetic IR flavor)
    Translator translator = Translator::identity;
    PyramidConfig pyramid;
    TcfConfig tcf;
    LossWeights loss;
    OptimConfig optim;
    TrainMode mode = TrainMode::joint;
    double balance = 1.0;  // weight of the fusion loss in joint training

    std::string serialize() const {
        std::ostringstream o;
        o << "seed=" << seed << "\n";
        o << "regime=" << regime << "\n";
        o << "image_size=" << image_size << "\n";
        o << "modality=" << modality << "\n";
        o << "translator=" << (translator == Translator::identity ? "identity" : "invert") << "\n";
        o << "pyramid.levels=" << pyramid.levels << "\n";
        o << "pyramid.widths=";
        for (size_t i = 0; i < pyramid.widths.size(); ++i)
            o << (i ? "," : "") << pyramid.widths[i];
        o << "\n";
        o << "pyramid.int_steps=" << pyramid.integration_steps << "\n";
        o << "pyramid.dff_hidden=" << pyramid.dff_hidden << "\n";
        o << "pyramid.se_reduction=" << pyramid.se_reduction << "\n";
        o << "tcf.channels=" << tcf.channels << "\n";
        o << "tcf.window=" << tcf.window << "\n";
        o << "tcf.heads=" << tcf.heads << "\n";
        o << "tcf.reduction=" << tcf.ca_reduction << "\n";
        o << "tcf.depth=" << tcf.depth << "\n";
        o << "loss.lambda_rev=" << loss.lambda_rev << "\n";
        o << "loss.lambda_sm=" << loss.lambda_sm << "\n";
        o << "loss.lambda_ssim=" << loss.lambda_ssim << "\n";
        o << "loss.lambda_jg=" << loss.lambda_jg << "\n";
        o << "loss.lambda_svs=" << loss.lambda_svs << "\n";
        o << "optim.lr=" << optim.lr << "\n";
        o << "optim.beta1=" << optim.beta1 << "\n";
        o << "optim.beta2=" << optim.beta2 << "\n";
        o << "optim.iters=" << optim.iters << "\n";
        o << "optim.batch=" << optim.batch << "\n";
        o << "train.mode=" << (mode == TrainMode::joint ? "joint" : "frozen-registration") << "\n";
        o << "train.balance=" << balance << "\n";
        o << "ablate.dff=" << (pyramid.dff_mode == DffMode::full ? "full" : "interp-only") << "\n";
        o << "ablate.pff=" << (pyramid.pff_mode == PffMode::full ? "full" : "concat") << "\n";
        return o.str();
    }

    static RunConfig parse(const std::string& text) {
        RunConfig cfg;
        std::map<std::string, std::string> kv;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) + ": expected key=value");
            kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }

        auto get = [&](const std::string& k) -> const std::string* {
            auto it = kv.find(k);
            return it == kv.end() ? nullptr : &it->second;
        };
        auto to_int = [](const std::string& k, const std::string& v) {
            try {
                size_t pos = 0;
                const int r = std::stoi(v, &pos);
                if (pos != v.size()) throw std::invalid_argument(v);
                return r;
            } catch (const std::exception&) {
                throw config_error("config key " + k + ": bad integer '" + v + "'");
            }
        };
        auto to_double = [](const std::string& k, const std::string& v) {
            try {
                size_t pos = 0;
                const double r = std::stod(v, &pos);
                if (pos != v.size()) throw std::invalid_argument(v);
                return r;
            } catch (const std::exception&) {
                throw config_error("config key " + k + ": bad number '" + v + "'");
            }
        };

        if (auto* v = get("seed")) cfg.seed = static_cast<std::uint64_t>(std::stoull(*v));
        if (auto* v = get("regime")) cfg.regime = *v;
        if (auto* v = get("image_size")) cfg.image_size = to_int("image_size", *v);
        if (auto* v = get("modality")) cfg.modality = *v;
        if (auto* v = get("translator")) {
            if (*v == "identity")
                cfg.translator = Translator::identity;
            else if (*v == "invert")
                cfg.translator = Translator::invert;
            else
                throw config_error("translator must be identity or invert, got " + *v);
        }
        if (auto* v = get("pyramid.levels")) cfg.pyramid.levels = to_int("pyramid.levels", *v);
        if (auto* v = get("pyramid.widths")) {
            cfg.pyramid.widths.clear();
            std::istringstream ws(*v);
            std::string tok;
            while (std::getline(ws, tok, ',')) cfg.pyramid.widths.push_back(to_int("pyramid.widths", tok));
        }
        if (auto* v = get("pyramid.int_steps")) cfg.pyramid.integration_steps = to_int("pyramid.int_steps", *v);
        if (auto* v = get("pyramid.dff_hidden")) cfg.pyramid.dff_hidden = to_int("pyramid.dff_hidden", *v);
        if (auto* v = get("pyramid.se_reduction")) cfg.pyramid.se_reduction = to_int("pyramid.se_reduction", *v);
        if (auto* v = get("tcf.channels")) cfg.tcf.channels = to_int("tcf.channels", *v);
        if (auto* v = get("tcf.window")) cfg.tcf.window = to_int("tcf.window", *v);
        if (auto* v = get("tcf.heads")) cfg.tcf.heads = to_int("tcf.heads", *v);
        if (auto* v = get("tcf.reduction")) cfg.tcf.ca_reduction = to_int("tcf.reduction", *v);
        if (auto* v = get("tcf.depth")) cfg.tcf.depth = to_int("tcf.depth", *v);
        if (auto* v = get("loss.lambda_rev")) cfg.loss.lambda_rev = to_double("loss.lambda_rev", *v);
        if (auto* v = get("loss.lambda_sm")) cfg.loss.lambda_sm = to_double("loss.lambda_sm", *v);
        if (auto* v = get("loss.lambda_ssim")) cfg.loss.lambda_ssim = to_double("loss.lambda_ssim", *v);
        if (auto* v = get("loss.lambda_jg")) cfg.loss.lambda_jg = to_double("loss.lambda_jg", *v);
        if (auto* v = get("loss.lambda_svs")) cfg.loss.lambda_svs = to_double("loss.lambda_svs", *v);
        if (auto* v = get("optim.lr")) cfg.optim.lr = to_double("optim.lr", *v);
        if (auto* v = get("optim.beta1")) cfg.optim.beta1 = to_double("optim.beta1", *v);
        if (auto* v = get("optim.beta2")) cfg.optim.beta2 = to_double("optim.beta2", *v);
        if (auto* v = get("optim.iters")) cfg.optim.iters = to_int("optim.iters", *v);
        if (auto* v = get("optim.batch")) cfg.optim.batch = to_int("optim.batch", *v);
        if (auto* v = get("train.mode")) {
            if (*v == "joint")
                cfg.mode = TrainMode::joint;
            else if (*v == "frozen-registration")
                cfg.mode = TrainMode::frozen_registration;
            else
                throw config_error("train.mode must be joint or frozen-registration, got " + *v);
        }
        if (auto* v = get("train.balance")) cfg.balance = to_double("train.balance", *v);
        if (auto* v = get("ablate.dff")) {
            if (*v == "full")
                cfg.pyramid.dff_mode = DffMode::full;
            else if (*v == "interp-only")
                cfg.pyramid.dff_mode = DffMode::interp_only;
            else
                throw config_error("ablate.dff must be full or interp-only, got " + *v);
        }
        if (auto* v = get("ablate.pff")) {
            if (*v == "full")
                cfg.pyramid.pff_mode = PffMode::full;
            else if (*v == "concat")
                cfg.pyramid.pff_mode = PffMode::concat;
            else
                throw config_error("ablate.pff must be full or concat, got " + *v);
        }

        try {
            cfg.pyramid.validate();
            cfg.tcf.validate();
        } catch (const contract_error& e) {
            throw config_error(e.what());
        }
        if (cfg.loss.lambda_rev < 0 || cfg.loss.lambda_sm < 0 || cfg.loss.lambda_ssim < 0 ||
            cfg.loss.lambda_jg < 0 || cfg.loss.lambda_svs < 0)
            throw config_error("loss weights must be non-negative");
        if (cfg.optim.iters < 0 || cfg.optim.batch < 1) throw config_error("bad optimizer settings");
        return cfg;
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    // MRF_SEED overrides the configured seed when set.
    void apply_env_override() {
        if (const char* env = std::getenv("MRF_SEED")) {
            try {
                seed = static_cast<std::uint64_t>(std::stoull(env));
            } catch (const std::exception&) {
                throw config_error("MRF_SEED is not an integer: " + std::string(env));
            }
        }
    }
};

}  // namespace mrf
