#include "saro/analysis.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <limits>

#include <json.hpp>

#include "saro/losses.hpp"
#include "saro/temporal.hpp"

namespace saro {

std::vector<double> model_lifespans(Model& model) {
    const size_t n = model.cloud.size();
    const int m = model.field.feat_dim();
    model.field.ensure_thumbnails();
    std::vector<double> sigmas(n);
    parallel_chunks(n, 256, [&](size_t, size_t begin, size_t end) {
        std::vector<double> f(size_t(m), 0.0);
        for (size_t i = begin; i < end; ++i) {
            const Gaussian4D& g = model.cloud.prims[i];
            Vec3 scale = g.log_scale.array().exp();
            model.field.query(g.position, scale, f.data());
            sigmas[i] = model.decoder.lifespan(f.data());
        }
    });
    return sigmas;
}

LifespanThreshold otsu_lifespan_threshold(const std::vector<double>& sigmas) {
    if (sigmas.empty()) throw SaroError("otsu_lifespan_threshold: no lifespans");
    double lo = std::log(sigmas[0]), hi = lo;
    for (double s : sigmas) {
        if (!(s > 0.0)) throw SaroError("otsu_lifespan_threshold: nonpositive lifespan");
        lo = std::min(lo, std::log(s));
        hi = std::max(hi, std::log(s));
    }
    LifespanThreshold out;
    if (hi - lo < 1e-6) {
        out.degenerate = true;
        // Threshold below the cluster: "dynamic iff sigma < sigma_star" then
        // reads the whole population as static.
        out.sigma_star = std::exp(lo) * (1.0 - 1e-9);
        return out;
    }
    constexpr int kBins = 64;
    std::array<size_t, kBins> hist{};
    const double width = (hi - lo) / kBins;
    for (double s : sigmas) {
        int b = int((std::log(s) - lo) / width);
        hist[size_t(std::clamp(b, 0, kBins - 1))]++;
    }
    // Between-class variance sweep; threshold at the winning bin's upper edge.
    const double total = double(sigmas.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += double(hist[size_t(b)]) * (b + 0.5);
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = kBins / 2;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += double(hist[size_t(b)]);
        sum0 += double(hist[size_t(b)]) * (b + 0.5);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best) {
            best = var;
            best_bin = b;
        }
    }
    out.sigma_star = std::exp(lo + width * (best_bin + 1));
    return out;
}

Segmentation segment_by_lifespan(Model& model, double threshold) {
    std::vector<double> sigmas = model_lifespans(model);
    Segmentation seg;
    if (threshold > 0.0) {
        seg.sigma_star = threshold;
    } else {
        LifespanThreshold t = otsu_lifespan_threshold(sigmas);
        seg.sigma_star = t.sigma_star;
        seg.degenerate = t.degenerate;
    }
    seg.dynamic.resize(sigmas.size());
    for (size_t i = 0; i < sigmas.size(); ++i) {
        seg.dynamic[i] = sigmas[i] < seg.sigma_star ? 1 : 0;
        (seg.dynamic[i] ? seg.n_dynamic : seg.n_static)++;
    }
    return seg;
}

double segmentation_accuracy(const Model& model, const Segmentation& seg,
                             const TeacherScene& teacher) {
    const size_t n = model.cloud.size();
    if (seg.dynamic.size() != n)
        throw SaroError("segmentation_accuracy: segmentation size mismatch");
    if (teacher.prims.empty()) throw SaroError("segmentation_accuracy: empty teacher");
    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 p = model.cloud.prims[i].position.head<3>();
        const double tau = model.cloud.prims[i].position[3];
        double best = std::numeric_limits<double>::infinity();
        bool label = false;
        for (const TeacherPrim& tp : teacher.prims) {
            const double d2 = (tp.position_at(tau) - p).squaredNorm();
            if (d2 < best) {
                best = d2;
                label = tp.dynamic;
            }
        }
        if (label == (seg.dynamic[i] != 0)) ++correct;
    }
    return double(correct) / double(n);
}

EvalReport evaluate(Model& model, const Dataset& data, const std::string& split,
                    const Vec3& background) {
    const std::vector<size_t> idx = data.split_indices(split);
    if (idx.empty()) throw SaroError("evaluate: no frames tagged \"" + split + "\"");
    if (data.images.size() != data.frames.size())
        throw SaroError("evaluate: dataset images not loaded");
    model.field.ensure_thumbnails();
    EvalReport rep;
    rep.prim_count = model.cloud.size();
    rep.n_frames = idx.size();
    RasterizeOptions opts;
    opts.background = background;
    using clock = std::chrono::steady_clock;
    for (size_t k : idx) {
        const FrameRef& f = data.frames[k];
        const auto start = clock::now();
        RasterizeResult r = render_model(model, data.cameras[size_t(f.camera)], f.time, opts);
        rep.render_ms_per_frame +=
            std::chrono::duration<double, std::milli>(clock::now() - start).count();
        rep.psnr += psnr(r.color, data.images[k]);
        const double s = ssim(r.color, data.images[k]);
        rep.ssim += s;
        rep.dssim += dssim_from_ssim(s);
        const double sg = ssim_global(r.color, data.images[k]);
        rep.ssim_global += sg;
        rep.dssim_global += dssim_from_ssim(sg);
    }
    const double inv = 1.0 / double(idx.size());
    rep.psnr *= inv;
    rep.ssim *= inv;
    rep.dssim *= inv;
    rep.ssim_global *= inv;
    rep.dssim_global *= inv;
    rep.render_ms_per_frame *= inv;
    return rep;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::json j;
    j["psnr"] = report.psnr;
    j["ssim"] = report.ssim;
    j["dssim"] = report.dssim;
    j["ssim_global"] = report.ssim_global;
    j["dssim_global"] = report.dssim_global;
    j["render_ms_per_frame"] = report.render_ms_per_frame;
    j["prim_count"] = report.prim_count;
    j["n_frames"] = report.n_frames;
    return j.dump(2);
}

} // namespace saro
