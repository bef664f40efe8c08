#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "support.hpp"

// Exercises the installed binary end to end through std::system. SARO_CLI_PATH
// comes from the build; every invocation redirects stdout/stderr to scratch
// files so assertions can look at both streams and the exit code.

namespace fs = std::filesystem;
namespace st = saro::testing;

namespace {

struct CliResult {
    int code = -1;
    std::string out, err;
};

CliResult run_cli(const std::string& args, const std::string& tag) {
    static const std::string dir = st::scratch_dir("cli_io");
    const std::string out = dir + "/" + tag + ".out";
    const std::string err = dir + "/" + tag + ".err";
    const std::string cmd =
        std::string(SARO_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
    const int rc = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = st::slurp(out);
    r.err = st::slurp(err);
    return r;
}

} // namespace

TEST_CASE("cli usage surface") {
    CliResult help = run_cli("--help", "help");
    CHECK(help.code == 0);
    CHECK(help.out.find("gen") != std::string::npos);
    CHECK(help.out.find("train") != std::string::npos);
    CHECK(help.out.find("gradcheck") != std::string::npos);

    CHECK(run_cli("train --help", "help_train").code == 0);

    CliResult unknown = run_cli("train --data x --out y --bogus-flag", "unknown");
    CHECK(unknown.code == 1);
    CHECK(unknown.err.find("--bogus-flag") != std::string::npos);

    CHECK(run_cli("", "nosub").code == 1);
    CHECK(run_cli("frobnicate", "badsub").code == 1);
    CHECK(run_cli("train --data x", "missing_req").code == 1); // --out required
    CHECK(run_cli("train --data x --out y --profile bogus", "badprofile").code == 1);

    // runtime failure, not usage: paths parse fine but do not exist
    CliResult broken = run_cli("eval --ckpt /nonexistent.ckpt --data /nowhere --split test",
                               "broken");
    CHECK(broken.code == 2);
    CHECK_FALSE(broken.err.empty());
}

TEST_CASE("cli pipeline: gen, train, eval, render, bake, segment") {
    const std::string dir = st::scratch_dir("cli_flow");
    const std::string data = dir + "/data";

    CliResult gen = run_cli("gen --out " + data + " --seed 3 --prims 25 --frames 3 --cams 2 --res 24",
                            "gen");
    REQUIRE(gen.code == 0);
    REQUIRE(fs::exists(data + "/manifest.json"));
    REQUIRE(fs::exists(data + "/teacher.json"));

    {
        std::ofstream cfg(dir + "/tiny.cfg");
        cfg << "feat_dim = 8\nspatial_res = 16\ntime_res = 16\nlevel_count = 2\n"
               "init_count = 40\nwarmup_iters = 5\nbatch_size = 1\n"
               "densify_interval = 10\ndensify_until = 20\nopacity_reset_interval = 25\n"
               "metrics_interval = 10\nmax_prims = 300\n";
    }
    const std::string ckpt = dir + "/model.ckpt";
    CliResult tr = run_cli("train --data " + data + " --out " + ckpt + " --iters 30 --seed 7" +
                               " --profile dnerf --config " + dir + "/tiny.cfg",
                           "train");
    REQUIRE(tr.code == 0);
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".metrics.jsonl"));

    CliResult ev = run_cli("eval --ckpt " + ckpt + " --data " + data + " --split test", "eval");
    CHECK(ev.code == 0);
    auto j = nlohmann::json::parse(ev.out);
    CHECK(j.contains("psnr"));
    CHECK(j.contains("ssim"));
    CHECK(j["n_frames"].get<int>() == 3);

    const std::string rdir = dir + "/render";
    CliResult rd = run_cli("render --ckpt " + ckpt + " --frame-list " + data +
                               "/manifest.json --out " + rdir + " --depth",
                           "render");
    CHECK(rd.code == 0);
    size_t pngs = 0, pfms = 0;
    for (const auto& e : fs::recursive_directory_iterator(rdir)) {
        if (e.path().extension() == ".png") ++pngs;
        if (e.path().extension() == ".pfm") ++pfms;
    }
    CHECK(pngs == 6); // 3 timestamps x 2 cameras
    CHECK(pfms == 6);

    const std::string baked = dir + "/baked.ckpt";
    CHECK(run_cli("bake --ckpt " + ckpt + " --out " + baked, "bake").code == 0);
    REQUIRE(fs::exists(baked));
    const std::string bdir = dir + "/render_baked";
    CHECK(run_cli("render --ckpt " + baked + " --frame-list " + data + "/manifest.json --out " +
                      bdir + " --baked",
                  "render_baked")
              .code == 0);
    size_t baked_pngs = 0;
    for (const auto& e : fs::recursive_directory_iterator(bdir))
        if (e.path().extension() == ".png") ++baked_pngs;
    CHECK(baked_pngs == 6);

    const std::string sdir = dir + "/seg";
    CliResult sg = run_cli("segment --ckpt " + ckpt + " --out " + sdir, "segment");
    CHECK(sg.code == 0);
    CHECK(fs::exists(sdir + "/dynamic.ckpt"));
    CHECK(fs::exists(sdir + "/static.ckpt"));
    auto js = nlohmann::json::parse(st::slurp(sdir + "/summary.json"));
    CHECK(js.contains("n_dynamic"));
    CHECK(js.contains("n_static"));
    CHECK(js.contains("sigma_star"));
    CHECK(js["threshold"].get<std::string>() == "otsu");

    CliResult sg2 = run_cli("segment --ckpt " + ckpt + " --lifespan-thresh 0.5 --out " + sdir,
                            "segment2");
    CHECK(sg2.code == 0);
    auto js2 = nlohmann::json::parse(st::slurp(sdir + "/summary.json"));
    CHECK(js2["threshold"].get<std::string>() == "manual");
}

TEST_CASE("cli gradcheck") {
    CliResult gc = run_cli("gradcheck", "gradcheck");
    CHECK(gc.code == 0);
    size_t lines = 0, passes = 0;
    std::istringstream in(gc.out);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("name"));
        CHECK(j.contains("max_rel_err"));
        ++lines;
        if (j["pass"].get<bool>()) ++passes;
    }
    CHECK(lines >= 10);
    CHECK(passes == lines - 1); // the deliberate-corruption probe must fail
}
