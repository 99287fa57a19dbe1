#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "temp_dir.hpp"
#include "trilite/checkpoint.hpp"
#include "trilite/dataset.hpp"
#include "trilite/report.hpp"

using namespace trilite;

namespace {

struct Run {
    int code = -1;
    std::string output; // stdout and stderr interleaved
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(TRILITE_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0;) r.output.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string str(const std::filesystem::path& p) { return p.string(); }

std::map<std::string, std::string> report_at(const std::filesystem::path& p) {
    std::ifstream in(p);
    return parse_report(in);
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(line);
    return out;
}

// Small synthetic experiment shared by several cases.
struct Fixture {
    TempDir dir;
    std::filesystem::path train = dir / "train.tlf", val = dir / "val.tlf", test = dir / "test.tlf";

    Fixture() {
        const std::string common = "--classes 3 --grid 8x8 --dim 16 --patch-size 4 --distractor-rate 0.3";
        REQUIRE(cli("synth " + common + " --samples 96 --seed 1 -o " + str(train)).code == 0);
        REQUIRE(cli("synth " + common + " --samples 32 --seed 2 -o " + str(val)).code == 0);
        REQUIRE(cli("synth " + common + " --samples 32 --seed 3 -o " + str(test)).code == 0);
    }

    Run train_to(const std::filesystem::path& ckpt, const std::string& extra = "") const {
        return cli("train -q --train " + str(train) + " --val " + str(val) + " -o " + str(ckpt) +
                   " --base-lr 1e-2 --batch-size 32 --epochs 4 --patience 10 " + extra);
    }
};

} // namespace

TEST_SUITE("cli") {
    TEST_CASE("synth echoes its settings and reruns byte-identically") {
        TempDir dir;
        const std::string args = "synth --classes 4 --samples 20 --grid 8x8 --dim 8 --seed 7 --distractor-rate 0.5 -o ";
        const Run a = cli(args + str(dir / "a.tlf"));
        REQUIRE(a.code == 0);
        CHECK(a.output.find("samples=20 classes=4 grid=8x8 dim=8") != std::string::npos);
        CHECK(a.output.find("seed=7") != std::string::npos);
        REQUIRE(cli(args + str(dir / "b.tlf")).code == 0);
        CHECK(read_bytes(dir / "a.tlf") == read_bytes(dir / "b.tlf"));
        const Dataset d = read_dataset(dir / "a.tlf");
        CHECK(d.samples.size() == 20);
        CHECK(d.header.classes == 4);
    }

    TEST_CASE("synth refuses an infeasible grid") {
        TempDir dir;
        const Run r = cli("synth --grid 4x4 --occlusion-rate 1 -o " + str(dir / "x.tlf"));
        CHECK(r.code == 2);
        CHECK(r.output.find("generation error") != std::string::npos);
        CHECK_FALSE(std::filesystem::exists(dir / "x.tlf"));
    }

    TEST_CASE("usage errors exit 1") {
        CHECK(cli("").code == 1);
        CHECK(cli("synth --no-such-flag -o x").code == 1);
        CHECK(cli("train --train a").code == 1);
        CHECK(cli("eval --checkpoint missing.ckpt --data missing.tlf").code == 1);
        CHECK(cli("--help").code == 0);
    }

    TEST_CASE("train writes a checkpoint and one history line per epoch") {
        Fixture f;
        const Run r = f.train_to(f.dir / "m.ckpt");
        REQUIRE(r.code == 0);
        CHECK(r.output.find("best epoch") != std::string::npos);
        const auto history = lines_of(f.dir / "m.ckpt.history");
        REQUIRE(history.size() == 4);
        CHECK(history[0].rfind("epoch=1 ", 0) == 0);
        CHECK(history[3].find("val_metric=gt_loc") != std::string::npos);
        const Checkpoint ckpt = load_checkpoint(f.dir / "m.ckpt");
        CHECK(ckpt.params.config.classes == 3);
        CHECK(ckpt.metadata.find("base_lr=") != std::string::npos);
    }

    TEST_CASE("adv off and alpha 0 train the same parameters") {
        Fixture f;
        REQUIRE(f.train_to(f.dir / "off.ckpt", "--adv off").code == 0);
        REQUIRE(f.train_to(f.dir / "zero.ckpt", "--alpha 0").code == 0);
        const HeadParams a = load_checkpoint(f.dir / "off.ckpt").params;
        const HeadParams b = load_checkpoint(f.dir / "zero.ckpt").params;
        const auto va = parameter_views(a), vb = parameter_views(b);
        REQUIRE(va.size() == vb.size());
        double worst = 0;
        for (std::size_t t = 0; t < va.size(); ++t)
            for (std::size_t i = 0; i < va[t].values.size(); ++i)
                worst = std::max(worst, std::abs(va[t].values[i] - vb[t].values[i]));
        CHECK(worst <= 1e-12);
    }

    TEST_CASE("eval report, calibration and box modes") {
        Fixture f;
        REQUIRE(f.train_to(f.dir / "m.ckpt").code == 0);
        const std::string base = "eval --checkpoint " + str(f.dir / "m.ckpt") + " --data " + str(f.test);
        REQUIRE(cli(base + " --report " + str(f.dir / "fixed.txt")).code == 0);
        REQUIRE(cli(base + " --calibrate --calib-data " + str(f.test) + " --report " + str(f.dir / "cal.txt")).code == 0);
        const auto fixed = report_at(f.dir / "fixed.txt");
        const auto cal = report_at(f.dir / "cal.txt");
        CHECK(fixed.at("summary.record_count") == "32");
        CHECK(fixed.at("localization.tau_source") == "fixed");
        CHECK(fixed.count("segmentation.pxap") == 1);
        CHECK(fixed.count("config.trained.base_lr") == 1);
        CHECK(cal.at("localization.tau_source") == "calibrated");
        CHECK(std::stod(cal.at("localization.gt_known_loc")) >= std::stod(fixed.at("localization.gt_known_loc")));
        const double gt = std::stod(fixed.at("localization.gt_known_loc"));
        CHECK(std::stod(fixed.at("localization.top5_loc")) <= gt);
        CHECK(std::stod(fixed.at("localization.top1_loc")) <= std::stod(fixed.at("localization.top5_loc")));

        const Run out = cli(base + " --metrics pxap");
        REQUIRE(out.code == 0);
        CHECK(out.output.find("[segmentation]") != std::string::npos);
        CHECK(out.output.find("gt_known_loc") == std::string::npos);
        CHECK(cli(base + " --metrics nope").code == 1);
        CHECK(cli(base + " --tau 1.5").code == 1);
    }

    TEST_CASE("merged boxes do not lose to largest on occluded objects") {
        TempDir dir;
        const std::string common = "--classes 3 --grid 12x12 --dim 16 --patch-size 4 --occlusion-rate 0.8";
        REQUIRE(cli("synth " + common + " --samples 240 --seed 1 -o " + str(dir / "tr.tlf")).code == 0);
        REQUIRE(cli("synth " + common + " --samples 60 --seed 2 -o " + str(dir / "va.tlf")).code == 0);
        REQUIRE(cli("train -q --train " + str(dir / "tr.tlf") + " --val " + str(dir / "va.tlf") + " -o " +
                    str(dir / "m.ckpt") + " --base-lr 1e-2 --batch-size 32 --epochs 30 --alpha 0.1")
                    .code == 0);
        const std::string base = "eval --checkpoint " + str(dir / "m.ckpt") + " --data " + str(dir / "va.tlf");
        REQUIRE(cli(base + " --box-mode largest --report " + str(dir / "l.txt")).code == 0);
        REQUIRE(cli(base + " --box-mode merged --report " + str(dir / "m.txt")).code == 0);
        const auto l = report_at(dir / "l.txt"), m = report_at(dir / "m.txt");
        CHECK(m.at("localization.box_mode") == "merged");
        CHECK(std::stod(m.at("localization.gt_known_loc")) >= std::stod(l.at("localization.gt_known_loc")));
    }

    TEST_CASE("eval names a missing annotation") {
        Fixture f;
        REQUIRE(f.train_to(f.dir / "m.ckpt").code == 0);
        Dataset d = read_dataset(f.test);
        d.header.has_mask = false;
        for (auto& s : d.samples) s.mask_gt.reset();
        write_dataset(f.dir / "nomask.tlf", d);
        const Run r = cli("eval --checkpoint " + str(f.dir / "m.ckpt") + " --data " + str(f.dir / "nomask.tlf") +
                          " --metrics loc,pxap");
        CHECK(r.code == 2);
        CHECK(r.output.find("mask_gt") != std::string::npos);
        // Without an explicit request the report covers what is available.
        const Run ok = cli("eval --checkpoint " + str(f.dir / "m.ckpt") + " --data " + str(f.dir / "nomask.tlf"));
        CHECK(ok.code == 0);
        CHECK(ok.output.find("pxap") == std::string::npos);
    }

    TEST_CASE("gradcheck passes, and a corrupted gradient names its group") {
        const Run ok = cli("gradcheck --seeds 3");
        CHECK(ok.code == 0);
        CHECK(ok.output.find("gradient check passed") != std::string::npos);
        CHECK(ok.output.find("seed=2") != std::string::npos);
        CHECK(ok.output.find("FAIL") == std::string::npos);

        const Run bad = cli("gradcheck --corrupt token_weight");
        CHECK(bad.code == 2);
        CHECK(bad.output.find("classifier group") != std::string::npos);
        CHECK(bad.output.find("gradient check FAILED") != std::string::npos);
        const Run head = cli("gradcheck --corrupt bn_gamma");
        CHECK(head.code == 2);
        CHECK(head.output.find("head group") != std::string::npos);
    }

    TEST_CASE("visualize writes maps; zero-initialized head is uniform gray") {
        Fixture f;
        HeadConfig cfg;
        cfg.feature_dim = cfg.token_dim = 16;
        cfg.classes = 3;
        save_checkpoint(f.dir / "zero.ckpt", HeadParams::zeros(cfg));
        const Run r = cli("visualize --checkpoint " + str(f.dir / "zero.ckpt") + " --data " + str(f.test) +
                          " --indices 0,5 --out-dir " + str(f.dir / "vis"));
        REQUIRE(r.code == 0);
        for (const char* name : {"sample_0_am.pgm", "sample_5_fg.pgm", "sample_5_bg.pgm", "sample_0_overlay.ppm"})
            CHECK(std::filesystem::exists(f.dir / "vis" / name));
        const auto pgm = read_bytes(f.dir / "vis" / "sample_0_fg.pgm");
        const std::string header = "P5\n32 32\n255\n";
        REQUIRE(pgm.size() == header.size() + 32 * 32);
        CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<long>(header.size())) == header);
        CHECK(std::all_of(pgm.begin() + static_cast<long>(header.size()), pgm.end(), [](unsigned char v) { return v == 85; }));

        cfg.mode = HeadMode::binary;
        save_checkpoint(f.dir / "bin.ckpt", HeadParams::zeros(cfg));
        const Run b = cli("visualize --checkpoint " + str(f.dir / "bin.ckpt") + " --data " + str(f.test) +
                          " --indices 1 --out-dir " + str(f.dir / "visb"));
        CHECK(b.code == 0);
        CHECK(b.output.find("binary head") != std::string::npos);
        CHECK_FALSE(std::filesystem::exists(f.dir / "visb" / "sample_1_am.pgm"));

        const Run oob = cli("visualize --checkpoint " + str(f.dir / "zero.ckpt") + " --data " + str(f.test) +
                            " --indices 32 --out-dir " + str(f.dir / "visc"));
        CHECK(oob.code == 2);
    }

    TEST_CASE("config file values apply and command-line flags override them") {
        Fixture f;
        {
            std::ofstream cfg(f.dir / "run.cfg");
            cfg << "# training setup\nbase-lr = 1e-2\nbatch-size = 32\nepochs = 2\nquiet = true\n";
        }
        const std::string base = "train --config " + str(f.dir / "run.cfg") + " --train " + str(f.train) + " --val " +
                                 str(f.val) + " -o ";
        REQUIRE(cli(base + str(f.dir / "a.ckpt")).code == 0);
        CHECK(lines_of(f.dir / "a.ckpt.history").size() == 2);
        REQUIRE(cli(base + str(f.dir / "b.ckpt") + " --epochs 3").code == 0);
        CHECK(lines_of(f.dir / "b.ckpt.history").size() == 3);
        CHECK(cli("train --config " + str(f.dir / "missing.cfg")).code == 1);
    }
}
