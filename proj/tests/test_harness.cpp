#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mrf/cli.hpp"
#include "mrf/mrf.hpp"
#include "oracles.hpp"

using namespace mrf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("mrf_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::vector<unsigned char> slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

int cli(std::initializer_list<const char*> args) {
    std::vector<const char*> argv{"mrf"};
    argv.insert(argv.end(), args.begin(), args.end());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

RunConfig toy_config() {
    RunConfig cfg;
    cfg.image_size = 32;
    cfg.pyramid.levels = 2;
    cfg.pyramid.widths = {4, 6, 8};
    cfg.pyramid.integration_steps = 4;
    cfg.pyramid.dff_hidden = 6;
    cfg.tcf.channels = 8;
    cfg.tcf.window = 4;
    cfg.tcf.heads = 2;
    cfg.optim.iters = 6;
    cfg.optim.batch = 2;
    return cfg;
}

}  // namespace

TEST_CASE("config text round-trips through parse and serialize") {
    RunConfig cfg = toy_config();
    cfg.seed = 99;
    cfg.regime = "moderate";
    cfg.mode = TrainMode::frozen_registration;
    cfg.translator = Translator::invert;
    cfg.pyramid.dff_mode = DffMode::interp_only;
    cfg.pyramid.pff_mode = PffMode::concat;
    cfg.loss.lambda_jg = 7.25;
    cfg.balance = 0.5;
    const RunConfig back = RunConfig::parse(cfg.serialize());
    CHECK(back.serialize() == cfg.serialize());
    CHECK(back.seed == 99);
    CHECK(back.pyramid.widths == std::vector<int>{4, 6, 8});
    CHECK(back.mode == TrainMode::frozen_registration);
    CHECK(back.pyramid.dff_mode == DffMode::interp_only);
    CHECK(back.loss.lambda_jg == 7.25);
}

TEST_CASE("config parser reports bad input") {
    CHECK_THROWS_AS(RunConfig::parse("this is not a key value line"), config_error);
    CHECK_THROWS_AS(RunConfig::parse("optim.iters=seven"), config_error);
    CHECK_THROWS_AS(RunConfig::parse("train.mode=sideways"), config_error);
    CHECK_THROWS_AS(RunConfig::parse("pyramid.levels=2\npyramid.widths=1,2"), config_error);
    CHECK_THROWS_AS(RunConfig::parse("loss.lambda_sm=-1"), config_error);
    // Comments and blank lines are fine.
    const RunConfig ok = RunConfig::parse("# comment\n\nseed=5\n");
    CHECK(ok.seed == 5);
}

TEST_CASE("MRF_SEED overrides the configured seed") {
    RunConfig cfg;
    cfg.seed = 7;
    setenv("MRF_SEED", "1234", 1);
    cfg.apply_env_override();
    CHECK(cfg.seed == 1234);
    setenv("MRF_SEED", "bogus", 1);
    CHECK_THROWS_AS(cfg.apply_env_override(), config_error);
    unsetenv("MRF_SEED");
    cfg.apply_env_override();
    CHECK(cfg.seed == 1234);
}

TEST_CASE("synthesized datasets are byte-identical across runs") {
    TempDir dir_a("synth_a"), dir_b("synth_b");
    SynthOptions opt;
    opt.count = 4;
    opt.seed = 7;
    opt.image_size = 24;
    opt.out_dir = dir_a / "";
    const auto ma = synthesize_dataset(opt);
    opt.out_dir = dir_b / "";
    const auto mb = synthesize_dataset(opt);
    REQUIRE(ma.ids == mb.ids);
    for (const auto& id : ma.ids) {
        CHECK(slurp(ma.moving_path(id)) == slurp(mb.moving_path(id)));
        CHECK(slurp(ma.fixed_path(id)) == slurp(mb.fixed_path(id)));
        CHECK(slurp(ma.field_path(id)) == slurp(mb.field_path(id)));
    }
    CHECK(slurp(dir_a / "manifest.txt") == slurp(dir_b / "manifest.txt"));
}

TEST_CASE("a collapsed regime writes moving equal to fixed") {
    TempDir dir("synth_none");
    SynthOptions opt;
    opt.count = 2;
    opt.regime = "none";
    opt.image_size = 16;
    opt.out_dir = dir / "";
    const auto m = synthesize_dataset(opt);
    for (const auto& id : m.ids)
        CHECK(slurp(m.moving_path(id)) == slurp(m.fixed_path(id)));
}

TEST_CASE("severe-regime samples stay inside their documented ranges via the manifest loader") {
    TempDir dir("synth_sev");
    SynthOptions opt;
    opt.count = 3;
    opt.regime = "severe";
    opt.image_size = 16;
    opt.out_dir = dir / "";
    synthesize_dataset(opt);
    const auto m = DatasetManifest::load(dir / "manifest.txt");
    CHECK(m.regime == "severe");
    CHECK(m.ids.size() == 3);
    const auto pairs = load_pairs(m);
    CHECK(pairs.size() == 3);
    for (const auto& p : pairs) {
        CHECK(p.moving.shape() == Shape{16, 16, 1});
        CHECK(p.field_gt.channels() == 2);
    }
}

TEST_CASE("checkpoints restore parameters exactly and manifests rebuild the config") {
    TempDir dir("ckpt");
    RunConfig cfg = toy_config();
    Rng r1(cfg.seed), r2(cfg.seed + 1);
    MpdrNet reg(cfg.pyramid, r1);
    TcfNet fus(cfg.tcf, r2);
    Rng noise(5);
    for (const auto& n : reg.params().names())
        for (auto& v : reg.params().get(n).value()) v += noise.uniform(-0.1, 0.1);

    const std::string path = dir / "m.ckpt";
    save_checkpoint(path, cfg, {{"reg", &reg.params()}, {"fus", &fus.params()}});

    const RunConfig loaded_cfg = load_checkpoint_config(path);
    CHECK(loaded_cfg.serialize() == cfg.serialize());

    Rng r3(cfg.seed), r4(cfg.seed + 1);
    MpdrNet reg2(loaded_cfg.pyramid, r3);
    TcfNet fus2(loaded_cfg.tcf, r4);
    // Scramble, then restore from file.
    for (const auto& n : reg2.params().names())
        for (auto& v : reg2.params().get(n).value()) v = -7.0;
    load_checkpoint_params(path, {{"reg", &reg2.params()}, {"fus", &fus2.params()}});
    for (const auto& n : reg.params().names())
        CHECK(oracle::max_abs_diff(reg2.params().get(n), reg.params().get(n)) == 0.0);
    for (const auto& n : fus.params().names())
        CHECK(oracle::max_abs_diff(fus2.params().get(n), fus.params().get(n)) == 0.0);
}

TEST_CASE("frozen-registration training leaves registration parameters bit-identical") {
    TempDir dir("frozen");
    SynthOptions sopt;
    sopt.count = 3;
    sopt.image_size = 16;
    sopt.out_dir = dir / "data";
    const auto manifest = synthesize_dataset(sopt);
    const auto pairs = load_pairs(manifest);

    RunConfig cfg = toy_config();
    cfg.image_size = 16;
    Rng r1(cfg.seed), r2(cfg.seed + 1);
    MpdrNet reg(cfg.pyramid, r1);
    TcfNet fus(cfg.tcf, r2);
    train_registration(reg, pairs, cfg, 3);

    std::vector<std::vector<double>> before;
    for (const auto& n : reg.params().names()) before.push_back(reg.params().get(n).value());
    train_fusion_frozen(reg, fus, pairs, cfg, 3);
    size_t i = 0;
    for (const auto& n : reg.params().names())
        CHECK(reg.params().get(n).value() == before[i++]);
}

TEST_CASE("identical config and seed reproduce training losses exactly") {
    TempDir dir("repro");
    SynthOptions sopt;
    sopt.count = 3;
    sopt.image_size = 16;
    sopt.out_dir = dir / "data";
    const auto manifest = synthesize_dataset(sopt);
    const auto pairs = load_pairs(manifest);

    RunConfig cfg = toy_config();
    cfg.image_size = 16;
    auto run_once = [&]() {
        Rng r1(cfg.seed), r2(cfg.seed + 1);
        MpdrNet reg(cfg.pyramid, r1);
        TcfNet fus(cfg.tcf, r2);
        return train_joint(reg, fus, pairs, cfg, 4);
    };
    const TrainResult a = run_once();
    const TrainResult b = run_once();
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i)
        CHECK(a.log[i].loss_total == doctest::Approx(b.log[i].loss_total).epsilon(1e-12));
}

TEST_CASE("training auto-pads non-divisible sizes and records it") {
    TempDir dir("pad");
    SynthOptions sopt;
    sopt.count = 2;
    sopt.image_size = 18;  // not divisible by 2^2
    sopt.out_dir = dir / "data";
    synthesize_dataset(sopt);

    TrainOptions topt;
    topt.cfg = toy_config();
    topt.cfg.optim.iters = 2;
    topt.data = dir / "data";
    topt.out_ckpt = dir / "m.ckpt";
    const TrainedModels m = run_training(topt);
    CHECK(m.reg_result.log.size() == 2);
    std::ifstream man(dir / "m.ckpt.manifest");
    const std::string text((std::istreambuf_iterator<char>(man)), {});
    CHECK(text.find("padded inputs") != std::string::npos);

    // register_padded crops results back to the original 20x20.
    const auto pairs = load_pairs(DatasetManifest::load(dir / "data"));
    const RegistrationOutput r = register_padded(*m.reg, pairs[0].fixed, pairs[0].moving);
    CHECK(r.registered.shape() == Shape{18, 18, 1});
    CHECK(r.final_field.shape() == Shape{18, 18, 2});
}

TEST_CASE("an untrained checkpoint registers to the identity after padding") {
    Rng rng(1);
    PyramidConfig cfg = toy_config().pyramid;
    MpdrNet net(cfg, rng);
    Rng irng(2);
    const Tensor fixed = oracle::random_tensor(20, 20, 1, irng);
    const Tensor moving = oracle::random_tensor(20, 20, 1, irng);
    const RegistrationOutput r = register_padded(net, fixed, moving);
    CHECK(oracle::max_abs_diff(r.registered, moving) == 0.0);
    for (double v : r.final_field.value()) CHECK(v == 0.0);
}

TEST_CASE("errormap magnitude matches |a-b| before color mapping") {
    Rng rng(3);
    const Tensor a = oracle::random_tensor(8, 8, 1, rng);
    const Tensor b = oracle::random_tensor(8, 8, 1, rng);
    const Tensor m = error_magnitude(a, b);
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 64; ++i) {
        lo = std::min(lo, std::fabs(a.value()[i] - b.value()[i]));
        hi = std::max(hi, std::fabs(a.value()[i] - b.value()[i]));
    }
    for (int i = 0; i < 64; ++i)
        CHECK(m.value()[i] ==
              doctest::Approx((std::fabs(a.value()[i] - b.value()[i]) - lo) / (hi - lo))
                  .epsilon(1e-12));

    // a == b: uniform zero map.
    const Tensor z = error_magnitude(a, a);
    for (double v : z.value()) CHECK(v == 0.0);

    // A single differing pixel is the unique hot spot.
    Tensor c = a.detached_copy();
    c.at(3, 4, 0) = a.at(3, 4, 0) + 0.5;
    const Tensor one = error_magnitude(a, c);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(one.at(y, x, 0) == ((y == 3 && x == 4) ? 1.0 : 0.0));

    const Tensor rgb = apply_hot_colormap(one);
    CHECK(rgb.shape() == Shape{8, 8, 3});
}

TEST_CASE("the CLI wires subcommands end to end with documented exit codes") {
    TempDir dir("cli");
    // synth
    const std::string data = dir / "data";
    CHECK(cli({"synth", "--out-dir", data.c_str(), "--count", "2", "--size", "16",
               "--seed", "3"}) == 0);

    // train with an explicit config file
    RunConfig cfg = toy_config();
    cfg.image_size = 16;
    cfg.optim.iters = 2;
    const std::string cfg_path = dir / "run.cfg";
    {
        std::ofstream out(cfg_path);
        out << cfg.serialize();
    }
    const std::string ckpt = dir / "m.ckpt";
    CHECK(cli({"train", "--config", cfg_path.c_str(), "--data", data.c_str(), "--out-ckpt",
               ckpt.c_str()}) == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".manifest"));
    CHECK(fs::exists(ckpt + ".losses.csv"));

    // register + fuse + errormap on the first pair
    const auto m = DatasetManifest::load(data);
    const std::string field = dir / "f.bin";
    const std::string reg_png = dir / "r.png";
    CHECK(cli({"register", "--fixed", m.fixed_path(m.ids[0]).c_str(), "--moving",
               m.moving_path(m.ids[0]).c_str(), "--ckpt", ckpt.c_str(), "--out-field",
               field.c_str(), "--out-image", reg_png.c_str()}) == 0);
    CHECK(fs::exists(field));
    CHECK(fs::exists(field + ".meta"));
    const Tensor f = load_field(field);
    CHECK(f.shape() == Shape{16, 16, 2});

    const std::string fused_png = dir / "fused.png";
    CHECK(cli({"fuse", "--ir", reg_png.c_str(), "--vis", m.fixed_path(m.ids[0]).c_str(),
               "--ckpt", ckpt.c_str(), "--out", fused_png.c_str()}) == 0);
    const Tensor fused = load_png(fused_png);
    CHECK(fused.shape() == Shape{16, 16, 1});

    const std::string err_png = dir / "err.png";
    CHECK(cli({"errormap", "--a", reg_png.c_str(), "--b", fused_png.c_str(), "--out",
               err_png.c_str()}) == 0);
    CHECK(fs::exists(err_png));

    // eval: pinned CSV header and the misaligned baseline row
    const std::string out_dir = dir / "eval";
    CHECK(cli({"eval", "--ckpt", ckpt.c_str(), "--data", data.c_str(), "--out-dir",
               out_dir.c_str()}) == 0);
    std::ifstream csv(out_dir + "/m_metrics.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "pair_id,mse,ncc,mi,cc,ssim,vif,qabf");
    std::string line, last;
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) {
            last = line;
            ++rows;
        }
    CHECK(rows == 3);  // two pairs + the misaligned baseline
    CHECK(last.rfind("misaligned,", 0) == 0);
    CHECK(fs::exists(out_dir + "/m_summary.json"));

    // exit code 2: broken config
    {
        std::ofstream bad(dir / "bad.cfg");
        bad << "optim.iters=thirty\n";
    }
    CHECK(cli({"train", "--config", (dir / "bad.cfg").c_str(), "--data", data.c_str()}) == 2);
    // exit code 2: unparseable flags
    CHECK(cli({"synth", "--count"}) == 2);
    // exit code 3: missing data
    CHECK(cli({"eval", "--ckpt", ckpt.c_str(), "--data", (dir / "nope").c_str()}) == 3);
    CHECK(cli({"register", "--fixed", (dir / "nope.png").c_str(), "--moving",
               (dir / "nope.png").c_str(), "--ckpt", ckpt.c_str()}) == 3);
}

TEST_CASE("eval with two checkpoints emits the side-by-side comparison table") {
    TempDir dir("cmp");
    const std::string data = dir / "data";
    SynthOptions sopt;
    sopt.count = 2;
    sopt.image_size = 16;
    sopt.out_dir = data;
    synthesize_dataset(sopt);

    RunConfig cfg = toy_config();
    cfg.image_size = 16;
    cfg.optim.iters = 2;
    for (const char* name : {"a", "b"}) {
        TrainOptions topt;
        topt.cfg = cfg;
        topt.data = data;
        topt.out_ckpt = dir / (std::string(name) + ".ckpt");
        run_training(topt);
        cfg.seed += 1;
    }
    EvalOptions eopt;
    eopt.ckpts = {dir / "a.ckpt", dir / "b.ckpt"};
    eopt.data = data;
    eopt.out_dir = dir / "out";
    CHECK(cmd_eval(eopt) == 0);
    std::ifstream cmp(dir / "out/comparison.csv");
    std::string header;
    std::getline(cmp, header);
    CHECK(header == "metric,a,b");
}

TEST_CASE("the intensity-inverting translator is exposed through configs") {
    RunConfig cfg = RunConfig::parse("translator=invert\n");
    CHECK(cfg.translator == Translator::invert);
    Tensor img(2, 2, 1, 0.25);
    const Tensor t = apply_translator(img, cfg.translator);
    for (double v : t.value()) CHECK(v == 0.75);
    const Tensor id = apply_translator(img, Translator::identity);
    CHECK(oracle::max_abs_diff(id, img) == 0.0);
}
