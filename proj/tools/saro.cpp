#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "saro/analysis.hpp"
#include "saro/gradients.hpp"
#include "saro/optimizer.hpp"
#include "saro/pipeline.hpp"
#include "saro/scene_io.hpp"

namespace fs = std::filesystem;
using namespace saro;

namespace {

// Checkpoints carry the training config; rendering and eval reuse it so the
// background (and any future render-relevant knob) matches training.
TrainConfig config_from_checkpoint(const Checkpoint& ck) {
    TrainConfig cfg;
    std::map<std::string, std::string> kv(ck.config.begin(), ck.config.end());
    if (!kv.empty()) cfg.apply(kv);
    return cfg;
}

struct GenArgs {
    std::string out;
    uint64_t seed = 1;
    int prims = 300, frames = 20, cams = 8, res = 48;
};

int run_gen(const GenArgs& a) {
    TeacherBundle bundle = generate_teacher_scene(a.seed, a.prims, a.frames, a.cams, a.res);
    save_teacher_bundle(a.out, bundle);
    std::printf("wrote %zu frames (%d cameras, %dx%d) and %zu teacher primitives to %s\n",
                bundle.dataset.frames.size(), a.cams, a.res, a.res,
                bundle.teacher.prims.size(), a.out.c_str());
    return 0;
}

struct TrainArgs {
    std::string data, out, profile = "dnerf", config;
    int iters = -1;
    uint64_t seed = 1;
};

int run_train(const TrainArgs& a) {
    Dataset data = load_dataset(a.data);
    TrainConfig cfg = (a.profile == "multiview") ? multiview_profile() : dnerf_profile();
    if (!a.config.empty()) cfg.apply(parse_config_file(a.config));
    if (a.iters >= 0) cfg.total_iters = a.iters;

    TrainResult result = train(data, cfg, a.seed, a.out + ".metrics.jsonl");
    save_checkpoint(a.out, result.checkpoint);
    if (result.aborted) {
        std::fprintf(stderr, "training aborted on non-finite loss at iteration %llu; "
                             "last good snapshot saved to %s\n",
                     (unsigned long long)result.iters_run, a.out.c_str());
        return 2;
    }
    std::printf("trained %llu iterations, %zu primitives, final loss %.6f -> %s\n",
                (unsigned long long)result.iters_run, result.checkpoint.cloud.size(),
                result.final_loss, a.out.c_str());
    return 0;
}

struct RenderArgs {
    std::string ckpt, frame_list, out;
    bool baked = false;
    bool depth = false;
};

int run_render(const RenderArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Model model = restore_model(ck);
    Dataset frames = load_frame_list(a.frame_list);
    TrainConfig cfg = config_from_checkpoint(ck);

    RasterizeOptions opts;
    opts.background = cfg.background;
    opts.want_depth = a.depth;

    BakedCloud baked;
    if (a.baked) {
        if (ck.has_bake) {
            baked.features = ck.bake_features;
            baked.sigma = ck.bake_sigma;
            baked.feat_dim = ck.feat_dim;
            baked.param_hash = ck.bake_hash;
        } else {
            baked = bake(model);
        }
    }

    fs::create_directories(a.out);
    for (size_t i = 0; i < frames.frames.size(); ++i) {
        const FrameRef& fr = frames.frames[i];
        const Camera& cam = frames.cameras.at(fr.camera);
        RasterizeResult res =
            a.baked ? render_from_baked(model, baked, cam, fr.time, opts)
                    : render_model(model, cam, fr.time, opts);

        std::string name = fr.image;
        if (name.empty()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "r%04zu.png", i);
            name = buf;
        }
        fs::path out_path = fs::path(a.out) / name;
        fs::create_directories(out_path.parent_path());
        write_png8(out_path.string(), res.color);
        if (a.depth) {
            fs::path dpath = out_path;
            dpath.replace_extension(".pfm");
            write_pfm_gray(dpath.string(), res.depth, res.color.width, res.color.height);
        }
    }
    std::printf("rendered %zu frames%s to %s\n", frames.frames.size(),
                a.baked ? " (baked)" : "", a.out.c_str());
    return 0;
}

struct BakeArgs {
    std::string ckpt, out;
};

int run_bake(const BakeArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Model model = restore_model(ck);
    BakedCloud baked = bake(model);
    ck.has_bake = true;
    ck.bake_features = baked.features;
    ck.bake_sigma = baked.sigma;
    ck.bake_hash = baked.param_hash;
    save_checkpoint(a.out, ck);
    std::printf("baked %zu primitives (feat dim %d) -> %s\n", model.cloud.size(),
                baked.feat_dim, a.out.c_str());
    return 0;
}

struct SegmentArgs {
    std::string ckpt, out;
    double thresh = 0.0;
};

int run_segment(const SegmentArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Model model = restore_model(ck);
    Segmentation seg = segment_by_lifespan(model, a.thresh);

    Checkpoint dyn = ck, sta = ck;
    dyn.cloud.prims.clear();
    sta.cloud.prims.clear();
    dyn.has_bake = sta.has_bake = false;
    dyn.bake_features.clear(), dyn.bake_sigma.clear();
    sta.bake_features.clear(), sta.bake_sigma.clear();
    for (size_t i = 0; i < ck.cloud.size(); ++i)
        (seg.dynamic[i] ? dyn : sta).cloud.prims.push_back(ck.cloud.prims[i]);

    fs::create_directories(a.out);
    save_checkpoint((fs::path(a.out) / "dynamic.ckpt").string(), dyn);
    save_checkpoint((fs::path(a.out) / "static.ckpt").string(), sta);

    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "{\"n_dynamic\":%zu,\"n_static\":%zu,\"sigma_star\":%.17g,"
                  "\"degenerate\":%s,\"threshold\":\"%s\"}\n",
                  seg.n_dynamic, seg.n_static, seg.sigma_star,
                  seg.degenerate ? "true" : "false", a.thresh > 0.0 ? "manual" : "otsu");
    FILE* f = std::fopen((fs::path(a.out) / "summary.json").string().c_str(), "wb");
    if (!f) throw SaroError("cannot write segmentation summary in " + a.out);
    std::fputs(buf, f);
    std::fclose(f);
    std::fputs(buf, stdout);
    return 0;
}

struct EvalArgs {
    std::string ckpt, data, split = "test";
};

int run_eval(const EvalArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Model model = restore_model(ck);
    Dataset data = load_dataset(a.data);
    TrainConfig cfg = config_from_checkpoint(ck);
    EvalReport report = evaluate(model, data, a.split, cfg.background);
    std::printf("%s\n", eval_report_json(report).c_str());
    return 0;
}

int run_gradcheck(bool full) {
    std::vector<GradCheckResult> results = run_gradient_checks(full);
    GradCheckResult probe = run_mutation_probe();
    bool ok = all_passed(results) && !probe.pass;
    results.push_back(probe);
    std::fputs(grad_report_jsonl(results).c_str(), stdout);
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D Gaussian splatting: teacher scenes, training, rendering, "
                 "baking, lifespan segmentation, evaluation, gradient checks. "
                 "SARO_THREADS caps worker threads."};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* c_gen = app.add_subcommand("gen", "Generate a synthetic teacher scene");
    c_gen->add_option("--out", gen.out, "Output dataset directory")->required();
    c_gen->add_option("--seed", gen.seed, "RNG seed");
    c_gen->add_option("--prims", gen.prims, "Teacher primitive count");
    c_gen->add_option("--frames", gen.frames, "Timestamps per camera");
    c_gen->add_option("--cams", gen.cams, "Camera count");
    c_gen->add_option("--res", gen.res, "Image resolution (square)");

    TrainArgs tr;
    CLI::App* c_train = app.add_subcommand("train", "Optimize a model on a dataset");
    c_train->add_option("--data", tr.data, "Dataset directory")->required();
    c_train->add_option("--out", tr.out, "Output checkpoint path")->required();
    c_train->add_option("--iters", tr.iters, "Override total iteration count");
    c_train->add_option("--seed", tr.seed, "RNG seed");
    c_train->add_option("--profile", tr.profile, "Hyperparameter profile")
        ->check(CLI::IsMember({"dnerf", "multiview"}));
    c_train->add_option("--config", tr.config, "key=value overrides file");

    RenderArgs rd;
    CLI::App* c_render = app.add_subcommand("render", "Render frames from a checkpoint");
    c_render->add_option("--ckpt", rd.ckpt, "Checkpoint path")->required();
    c_render->add_option("--frame-list", rd.frame_list, "Manifest-format frame list")->required();
    c_render->add_option("--out", rd.out, "Output image directory")->required();
    c_render->add_flag("--baked", rd.baked, "Use precomputed features and lifespan culling");
    c_render->add_flag("--depth", rd.depth, "Also write depth maps (.pfm)");

    BakeArgs bk;
    CLI::App* c_bake = app.add_subcommand("bake", "Precompute per-primitive features");
    c_bake->add_option("--ckpt", bk.ckpt, "Input checkpoint")->required();
    c_bake->add_option("--out", bk.out, "Output checkpoint")->required();

    SegmentArgs sg;
    CLI::App* c_seg = app.add_subcommand("segment", "Split primitives by lifespan");
    c_seg->add_option("--ckpt", sg.ckpt, "Checkpoint path")->required();
    c_seg->add_option("--lifespan-thresh", sg.thresh,
                      "Manual lifespan threshold (default: Otsu)");
    c_seg->add_option("--out", sg.out, "Output directory")->required();

    EvalArgs ev;
    CLI::App* c_eval = app.add_subcommand("eval", "Image metrics on a dataset split");
    c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
    c_eval->add_option("--data", ev.data, "Dataset directory")->required();
    c_eval->add_option("--split", ev.split, "Frame split to evaluate");

    bool gc_full = false;
    CLI::App* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
    c_gc->add_flag("--full", gc_full, "Include the full-pipeline parameter sweeps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(c_gen)) return run_gen(gen);
        if (app.got_subcommand(c_train)) return run_train(tr);
        if (app.got_subcommand(c_render)) return run_render(rd);
        if (app.got_subcommand(c_bake)) return run_bake(bk);
        if (app.got_subcommand(c_seg)) return run_segment(sg);
        if (app.got_subcommand(c_eval)) return run_eval(ev);
        if (app.got_subcommand(c_gc)) return run_gradcheck(gc_full);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
