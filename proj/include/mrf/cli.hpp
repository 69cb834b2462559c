// CLI argument parsing and dispatch for the mrf tool, kept in the library
// so tests can invoke subcommands in-process.
//
// Exit codes: 0 success, 2 configuration error, 3 data error.
#pragma once

#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace mrf {

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"coarse-to-fine registration and infrared-visible fusion toolkit"};
    app.require_subcommand(1);

    // synth
    SynthOptions synth_opt;
    auto* synth = app.add_subcommand("synth", "generate a misaligned dataset");
    synth->add_option("--regime", synth_opt.regime, "slight | moderate | severe | none")
        ->default_val("slight");
    synth->add_option("--seed", synth_opt.seed, "root seed")->default_val(7);
    synth->add_option("--count", synth_opt.count, "number of pairs")->default_val(10);
    synth->add_option("--in-dir", synth_opt.in_dir, "optional source PNG directory");
    synth->add_option("--out-dir", synth_opt.out_dir, "output dataset directory")->required();
    synth->add_option("--size", synth_opt.image_size, "square image size")->default_val(64);
    synth->add_option("--modality", synth_opt.modality, "mono | inverted")->default_val("mono");

    // train
    TrainOptions train_opt;
    std::string train_config;
    auto* train = app.add_subcommand("train", "train registration + fusion");
    train->add_option("--config", train_config, "key=value config file");
    train->add_option("--data", train_opt.data, "dataset directory or manifest")->required();
    train->add_option("--out-ckpt", train_opt.out_ckpt, "checkpoint path")->default_val("model.ckpt");
    train->add_option("--log", train_opt.log_path, "loss log CSV path");
    train->add_option("--init-ckpt", train_opt.init_ckpt, "warm-start checkpoint");

    // register
    RegisterOptions reg_opt;
    auto* reg = app.add_subcommand("register", "register a moving image onto a fixed image");
    reg->add_option("--fixed", reg_opt.fixed)->required();
    reg->add_option("--moving", reg_opt.moving)->required();
    reg->add_option("--ckpt", reg_opt.ckpt)->required();
    reg->add_option("--out-field", reg_opt.out_field, "displacement field output (.bin)");
    reg->add_option("--out-image", reg_opt.out_image, "registered image output (.png)");

    // fuse
    FuseOptions fuse_opt;
    auto* fuse = app.add_subcommand("fuse", "fuse a registered infrared image with a visible image");
    fuse->add_option("--ir", fuse_opt.ir)->required();
    fuse->add_option("--vis", fuse_opt.vis)->required();
    fuse->add_option("--ckpt", fuse_opt.ckpt)->required();
    fuse->add_option("--out", fuse_opt.out)->required();

    // eval
    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "metric battery over a dataset");
    eval->add_option("--ckpt", eval_opt.ckpts, "checkpoint(s); several produce a comparison table")
        ->required();
    eval->add_option("--data", eval_opt.data, "dataset directory or manifest")->required();
    eval->add_option("--out-dir", eval_opt.out_dir)->default_val(".");

    // errormap
    ErrormapOptions err_opt;
    auto* errormap = app.add_subcommand("errormap", "per-pixel |a-b| heat map");
    errormap->add_option("--a", err_opt.image_a)->required();
    errormap->add_option("--b", err_opt.image_b)->required();
    errormap->add_option("--out", err_opt.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(synth_opt);
        if (*train) {
            train_opt.cfg = train_config.empty() ? RunConfig() : RunConfig::parse_file(train_config);
            train_opt.cfg.apply_env_override();
            return cmd_train(train_opt);
        }
        if (*reg) return cmd_register(reg_opt);
        if (*fuse) return cmd_fuse(fuse_opt);
        if (*eval) return cmd_eval(eval_opt);
        if (*errormap) return cmd_errormap(err_opt);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const contract_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace mrf
