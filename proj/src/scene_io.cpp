#include "saro/scene_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <png.h>

#include <json.hpp>

#include "saro/temporal.hpp"

namespace saro {

using nlohmann::json;

// --- PNG -----------------------------------------------------------------

void write_png8(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw SaroError("write_png8: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw SaroError("write_png8: libpng init failed");
    }
    std::vector<png_byte> row(size_t(img.width) * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw SaroError("write_png8: encode failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[size_t(x) * 3 + c] =
                    png_byte(std::lround(clampd(img.at(x, y, c), 0.0, 1.0) * 255.0));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image read_png8(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw SaroError("read_png8: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw SaroError("read_png8: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw SaroError("read_png8: decode failed for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (!(png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw SaroError("read_png8: " + path + " did not expand to RGB");
    }
    Image img(w, h);
    std::vector<png_byte> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = double(row[size_t(x) * 3 + c]) / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

// --- PFM -----------------------------------------------------------------

namespace {

void pfm_write_header(std::ofstream& os, const char* magic, int w, int h) {
    os << magic << "\n" << w << " " << h << "\n-1.0\n";
}

struct PfmHeader {
    bool color = false;
    int width = 0, height = 0;
    bool little_endian = true;
};

PfmHeader pfm_read_header(std::ifstream& is, const std::string& path) {
    PfmHeader hd;
    std::string magic;
    double scale = 0.0;
    is >> magic >> hd.width >> hd.height >> scale;
    if (!is || (magic != "PF" && magic != "Pf") || hd.width < 1 || hd.height < 1)
        throw SaroError("read_pfm: bad header in " + path);
    hd.color = magic == "PF";
    hd.little_endian = scale < 0.0;
    is.get(); // single whitespace byte before the raster
    return hd;
}

} // namespace

void write_pfm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw SaroError("write_pfm: cannot open " + path);
    pfm_write_header(os, "PF", img.width, img.height);
    std::vector<float> row(size_t(img.width) * 3);
    for (int y = img.height - 1; y >= 0; --y) { // bottom-up
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) row[size_t(x) * 3 + c] = float(img.at(x, y, c));
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
    }
    if (!os) throw SaroError("write_pfm: write failed for " + path);
}

void write_pfm_gray(const std::string& path, const std::vector<double>& data, int width,
                    int height) {
    if (data.size() != size_t(width) * height) throw SaroError("write_pfm_gray: size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw SaroError("write_pfm_gray: cannot open " + path);
    pfm_write_header(os, "Pf", width, height);
    std::vector<float> row(size_t(width), 0.0f);
    for (int y = height - 1; y >= 0; --y) {
        for (int x = 0; x < width; ++x) row[size_t(x)] = float(data[size_t(y) * width + x]);
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
    }
    if (!os) throw SaroError("write_pfm_gray: write failed for " + path);
}

Image read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw SaroError("read_pfm: cannot open " + path);
    PfmHeader hd = pfm_read_header(is, path);
    const int nc = hd.color ? 3 : 1;
    Image img(hd.width, hd.height);
    std::vector<float> row(size_t(hd.width) * nc);
    for (int y = hd.height - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
        if (!is) throw SaroError("read_pfm: truncated raster in " + path);
        for (int x = 0; x < hd.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = row[size_t(x) * nc + (hd.color ? c : 0)];
                if (!hd.little_endian) {
                    uint32_t u = std::bit_cast<uint32_t>(v);
                    u = __builtin_bswap32(u);
                    v = std::bit_cast<float>(u);
                }
                img.at(x, y, c) = double(v);
            }
        }
    }
    return img;
}

Image read_image(const std::string& path) {
    auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    for (char& c : ext) c = char(std::tolower((unsigned char)c));
    if (ext == ".png") return read_png8(path);
    if (ext == ".pfm") return read_pfm(path);
    throw SaroError("read_image: unsupported extension on " + path);
}

// --- PLY -----------------------------------------------------------------

void read_ply_points(const std::string& path, std::vector<Vec3>& points,
                     std::vector<Vec3>& colors) {
    std::ifstream is(path);
    if (!is) throw SaroError("read_ply_points: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line.substr(0, 3) != "ply")
        throw SaroError("read_ply_points: missing ply magic in " + path);
    size_t vertex_count = 0;
    std::vector<std::string> prop_names, prop_types;
    bool in_vertex = false, ascii = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (tok == "element") {
            std::string name;
            ls >> name;
            in_vertex = name == "vertex";
            if (in_vertex) ls >> vertex_count;
        } else if (tok == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            prop_types.push_back(type);
            prop_names.push_back(name);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!ascii) throw SaroError("read_ply_points: only ascii 1.0 supported (" + path + ")");
    auto find = [&](const char* n) {
        for (size_t i = 0; i < prop_names.size(); ++i)
            if (prop_names[i] == n) return int(i);
        return -1;
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    if (ix < 0 || iy < 0 || iz < 0)
        throw SaroError("read_ply_points: vertex element lacks x/y/z in " + path);
    const int ir = find("red"), ig = find("green"), ib = find("blue");
    auto channel = [&](const std::vector<double>& vals, int idx) {
        if (idx < 0) return 0.5;
        double v = vals[size_t(idx)];
        return prop_types[size_t(idx)] == "uchar" ? v / 255.0 : v;
    };
    points.clear();
    colors.clear();
    std::vector<double> vals(prop_names.size());
    for (size_t i = 0; i < vertex_count; ++i) {
        for (double& v : vals)
            if (!(is >> v)) throw SaroError("read_ply_points: truncated vertex data in " + path);
        points.emplace_back(vals[size_t(ix)], vals[size_t(iy)], vals[size_t(iz)]);
        colors.emplace_back(channel(vals, ir), channel(vals, ig), channel(vals, ib));
    }
}

// --- Dataset -------------------------------------------------------------

namespace {

Mat4 rigid_inverse(const Mat4& m) {
    Mat3 r = m.topLeftCorner<3, 3>();
    Vec3 t = m.topRightCorner<3, 1>();
    Mat4 out = Mat4::Identity();
    out.topLeftCorner<3, 3>() = r.transpose();
    out.topRightCorner<3, 1>() = -(r.transpose() * t);
    return out;
}

const json& require(const json& j, const char* key, const char* context) {
    auto it = j.find(key);
    if (it == j.end())
        throw SaroError(std::string("manifest: missing key \"") + key + "\" in " + context);
    return *it;
}

Vec3 parse_vec3(const json& j, const char* key) {
    if (!j.is_array() || j.size() != 3)
        throw SaroError(std::string("manifest: \"") + key + "\" must be a 3-array");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json mat4_to_json(const Mat4& m) {
    json a = json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
    return a;
}

Mat4 json_to_mat4(const json& a, const char* key) {
    if (!a.is_array() || a.size() != 16)
        throw SaroError(std::string("manifest: \"") + key + "\" must be a 16-array (row-major)");
    Mat4 m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = a[size_t(r) * 4 + c].get<double>();
    return m;
}

Dataset parse_manifest(const json& j) {
    Dataset d;
    const int width = require(j, "width", "root").get<int>();
    const int height = require(j, "height", "root").get<int>();
    const double fx = require(j, "fx", "root").get<double>();
    const double fy = require(j, "fy", "root").get<double>();
    const double cx = require(j, "cx", "root").get<double>();
    const double cy = require(j, "cy", "root").get<double>();
    const double near = require(j, "near", "root").get<double>();
    d.bbox.min = parse_vec3(require(j, "bbox_min", "root"), "bbox_min");
    d.bbox.max = parse_vec3(require(j, "bbox_max", "root"), "bbox_max");
    for (const json& jc : require(j, "cameras", "root")) {
        Mat4 c2w = json_to_mat4(require(jc, "camera_to_world", "cameras[]"), "camera_to_world");
        Camera cam;
        cam.world_to_cam = rigid_inverse(c2w);
        cam.fx = fx;
        cam.fy = fy;
        cam.cx = cx;
        cam.cy = cy;
        cam.width = width;
        cam.height = height;
        cam.near_plane = near;
        cam.validate();
        d.cameras.push_back(cam);
        d.cam_to_world.push_back(c2w);
    }
    if (d.cameras.empty()) throw SaroError("manifest: empty camera list");
    for (const json& jf : require(j, "frames", "root")) {
        FrameRef f;
        f.camera = require(jf, "camera", "frames[]").get<int>();
        if (f.camera < 0 || size_t(f.camera) >= d.cameras.size())
            throw SaroError("manifest: frame camera index out of range");
        f.time = require(jf, "time", "frames[]").get<double>();
        if (!(f.time >= 0.0 && f.time <= 1.0))
            throw SaroError("manifest: frame time outside [0,1]");
        if (jf.contains("image")) f.image = jf["image"].get<std::string>();
        if (jf.contains("split")) f.split = jf["split"].get<std::string>();
        d.frames.push_back(f);
    }
    return d;
}

json manifest_to_json(const Dataset& d) {
    if (d.cameras.empty()) throw SaroError("save_manifest: empty camera list");
    if (d.cam_to_world.size() != d.cameras.size())
        throw SaroError("save_manifest: cam_to_world not populated");
    const Camera& c0 = d.cameras.front();
    json j;
    j["width"] = c0.width;
    j["height"] = c0.height;
    j["fx"] = c0.fx;
    j["fy"] = c0.fy;
    j["cx"] = c0.cx;
    j["cy"] = c0.cy;
    j["near"] = c0.near_plane;
    j["bbox_min"] = {d.bbox.min[0], d.bbox.min[1], d.bbox.min[2]};
    j["bbox_max"] = {d.bbox.max[0], d.bbox.max[1], d.bbox.max[2]};
    json cams = json::array();
    for (const Mat4& m : d.cam_to_world) cams.push_back({{"camera_to_world", mat4_to_json(m)}});
    j["cameras"] = cams;
    json frames = json::array();
    for (const FrameRef& f : d.frames) {
        json jf;
        jf["camera"] = f.camera;
        jf["time"] = f.time;
        jf["image"] = f.image;
        jf["split"] = f.split;
        frames.push_back(jf);
    }
    j["frames"] = frames;
    return j;
}

json parse_json_file(const std::string& path, const char* what) {
    std::ifstream is(path);
    if (!is) throw SaroError(std::string(what) + ": cannot open " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw SaroError(std::string(what) + ": " + path + ": " + e.what());
    }
}

} // namespace

std::vector<size_t> Dataset::split_indices(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < frames.size(); ++i)
        if (frames[i].split == split) out.push_back(i);
    return out;
}

Dataset load_dataset(const std::string& dir) {
    json j = parse_json_file(dir + "/manifest.json", "load_dataset");
    Dataset d = parse_manifest(j);
    d.images.resize(d.frames.size());
    parallel_chunks(d.frames.size(), 1, [&](size_t, size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            if (d.frames[i].image.empty())
                throw SaroError("load_dataset: frame without image path");
            d.images[i] = read_image(dir + "/" + d.frames[i].image);
            const Camera& cam = d.cameras[size_t(d.frames[i].camera)];
            if (d.images[i].width != cam.width || d.images[i].height != cam.height)
                throw SaroError("load_dataset: image size mismatch for " + d.frames[i].image);
        }
    });
    if (j.contains("points_ply"))
        read_ply_points(dir + "/" + j["points_ply"].get<std::string>(), d.points, d.point_colors);
    return d;
}

Dataset load_frame_list(const std::string& path) {
    return parse_manifest(parse_json_file(path, "load_frame_list"));
}

void save_manifest(const std::string& dir, const Dataset& data) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw SaroError("save_manifest: cannot open " + dir + "/manifest.json");
    os << manifest_to_json(data).dump(2) << "\n";
}

// --- Teacher scenes ------------------------------------------------------

Vec3 TeacherPrim::position_at(double t) const {
    return base + lin_vel * (t - 0.5) +
           sin_amp * std::sin(2.0 * M_PI * (sin_freq * t + sin_phase));
}

namespace {

// Portable uniforms straight off the engine; distributions from <random>
// are implementation-defined.
double u01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double usym(Rng& rng) { return 2.0 * u01(rng) - 1.0; }

Vec4 random_unit_quat(Rng& rng) {
    for (;;) {
        Vec4 q(usym(rng), usym(rng), usym(rng), usym(rng));
        double n = q.norm();
        if (n > 1e-3 && n <= 1.0) return q / n;
    }
}

} // namespace

Image render_teacher(const TeacherScene& scene, const Camera& cam, double t,
                     const Vec3& background) {
    std::vector<Splat2D> splats;
    splats.reserve(scene.prims.size());
    for (size_t i = 0; i < scene.prims.size(); ++i) {
        const TeacherPrim& p = scene.prims[i];
        TemporalState state{p.tau, p.sigma, scene.state_sharpness};
        const double gamma = state_function(state, t);
        if (p.opacity * gamma < kContributionMin) continue;
        Gaussian3D g;
        g.position = p.position_at(t);
        g.rotation = p.rotation;
        g.scale = p.scale;
        g.opacity = p.opacity * gamma;
        g.sh.fill(0.0);
        for (int c = 0; c < 3; ++c) g.sh[size_t(c)] = (p.color[c] - 0.5) / kShBasis0;
        if (auto s = project_splat(g, cam, 1, int(i))) splats.push_back(*s);
    }
    RasterizeOptions opts;
    opts.background = background;
    return rasterize(splats, cam.width, cam.height, opts).color;
}

TeacherBundle generate_teacher_scene(uint64_t seed, int n_primitives, int n_frames,
                                     int n_cameras, int resolution) {
    if (n_primitives < 1 || n_frames < 2 || n_cameras < 1 || resolution < 8)
        throw SaroError("generate_teacher_scene: degenerate configuration");
    TeacherBundle bundle;
    TeacherScene& scene = bundle.teacher;
    Rng rng(seed);

    const int n_dynamic = std::max(1, int(std::lround(0.3 * n_primitives)));
    for (int i = 0; i < n_primitives; ++i) {
        TeacherPrim p;
        p.dynamic = i < n_dynamic;
        p.base = Vec3(0.85 * usym(rng), 0.85 * usym(rng), 0.85 * usym(rng));
        if (p.dynamic) {
            p.sigma = 0.04 + 0.08 * u01(rng);
            p.tau = 0.15 + 0.7 * u01(rng);
            p.lin_vel = Vec3(0.4 * usym(rng), 0.4 * usym(rng), 0.4 * usym(rng));
            p.sin_amp = Vec3(0.2 * usym(rng), 0.2 * usym(rng), 0.2 * usym(rng));
            p.sin_freq = 0.5 + u01(rng);
            p.sin_phase = u01(rng);
        } else {
            p.sigma = 5.0 + 5.0 * u01(rng);
            p.tau = 0.4 + 0.2 * u01(rng);
        }
        const double s0 = 0.04 * std::exp(u01(rng) * std::log(3.0));
        p.scale = Vec3(s0 * (0.75 + 0.5 * u01(rng)), s0 * (0.75 + 0.5 * u01(rng)),
                       s0 * (0.75 + 0.5 * u01(rng)));
        p.rotation = random_unit_quat(rng);
        p.opacity = 0.55 + 0.4 * u01(rng);
        p.color = Vec3(0.1 + 0.85 * u01(rng), 0.1 + 0.85 * u01(rng), 0.1 + 0.85 * u01(rng));
        scene.prims.push_back(p);
    }

    Dataset& d = bundle.dataset;
    d.bbox.min = Vec3(-1.4, -1.4, -1.4);
    d.bbox.max = Vec3(1.4, 1.4, 1.4);
    for (int c = 0; c < n_cameras; ++c) {
        const double angle = 2.0 * M_PI * c / n_cameras;
        const double h = 0.55 * double((c % 3) - 1);
        Vec3 eye(3.2 * std::sin(angle), h, 3.2 * std::cos(angle));
        Camera cam = make_lookat_camera(eye, Vec3::Zero(), Vec3(0, 1, 0), 55.0, resolution,
                                        resolution, 0.05);
        d.cameras.push_back(cam);
        d.cam_to_world.push_back(rigid_inverse(cam.world_to_cam));
    }
    for (int j = 0; j < n_frames; ++j) {
        const double t = double(j) / double(n_frames - 1);
        for (int c = 0; c < n_cameras; ++c) {
            FrameRef f;
            f.camera = c;
            f.time = t;
            char name[64];
            std::snprintf(name, sizeof(name), "frames/t%03d_c%02d.png", j, c);
            f.image = name;
            f.split = c == n_cameras - 1 ? "test" : "train";
            d.frames.push_back(f);
            d.images.push_back(render_teacher(scene, d.cameras[size_t(c)], t));
        }
    }
    return bundle;
}

void save_teacher_bundle(const std::string& dir, const TeacherBundle& bundle) {
    const Dataset& d = bundle.dataset;
    if (d.images.size() != d.frames.size())
        throw SaroError("save_teacher_bundle: frames without rendered images");
    std::filesystem::create_directories(dir + "/frames");
    save_manifest(dir, d);
    for (size_t i = 0; i < d.frames.size(); ++i)
        write_png8(dir + "/" + d.frames[i].image, d.images[i]);

    json j;
    j["state_sharpness"] = bundle.teacher.state_sharpness;
    json prims = json::array();
    for (const TeacherPrim& p : bundle.teacher.prims) {
        json jp;
        jp["base"] = {p.base[0], p.base[1], p.base[2]};
        jp["lin_vel"] = {p.lin_vel[0], p.lin_vel[1], p.lin_vel[2]};
        jp["sin_amp"] = {p.sin_amp[0], p.sin_amp[1], p.sin_amp[2]};
        jp["sin_freq"] = p.sin_freq;
        jp["sin_phase"] = p.sin_phase;
        jp["tau"] = p.tau;
        jp["sigma"] = p.sigma;
        jp["scale"] = {p.scale[0], p.scale[1], p.scale[2]};
        jp["rotation"] = {p.rotation[0], p.rotation[1], p.rotation[2], p.rotation[3]};
        jp["opacity"] = p.opacity;
        jp["color"] = {p.color[0], p.color[1], p.color[2]};
        jp["dynamic"] = p.dynamic;
        prims.push_back(jp);
    }
    j["prims"] = prims;
    std::ofstream os(dir + "/teacher.json");
    if (!os) throw SaroError("save_teacher_bundle: cannot open " + dir + "/teacher.json");
    os << j.dump(2) << "\n";
}

TeacherScene load_teacher_json(const std::string& path) {
    json j = parse_json_file(path, "load_teacher_json");
    TeacherScene scene;
    scene.state_sharpness = require(j, "state_sharpness", "root").get<double>();
    for (const json& jp : require(j, "prims", "root")) {
        TeacherPrim p;
        p.base = parse_vec3(require(jp, "base", "prims[]"), "base");
        p.lin_vel = parse_vec3(require(jp, "lin_vel", "prims[]"), "lin_vel");
        p.sin_amp = parse_vec3(require(jp, "sin_amp", "prims[]"), "sin_amp");
        p.sin_freq = require(jp, "sin_freq", "prims[]").get<double>();
        p.sin_phase = require(jp, "sin_phase", "prims[]").get<double>();
        p.tau = require(jp, "tau", "prims[]").get<double>();
        p.sigma = require(jp, "sigma", "prims[]").get<double>();
        p.scale = parse_vec3(require(jp, "scale", "prims[]"), "scale");
        const json& jq = require(jp, "rotation", "prims[]");
        p.rotation = Vec4(jq[0].get<double>(), jq[1].get<double>(), jq[2].get<double>(),
                          jq[3].get<double>());
        p.opacity = require(jp, "opacity", "prims[]").get<double>();
        p.color = parse_vec3(require(jp, "color", "prims[]"), "color");
        p.dynamic = require(jp, "dynamic", "prims[]").get<bool>();
        scene.prims.push_back(p);
    }
    return scene;
}

// --- Checkpoints ---------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'S', 'A', 'R', 'O'};

void put_raw(std::string& b, const void* p, size_t n) {
    b.append(static_cast<const char*>(p), n);
}
void put_u32(std::string& b, uint32_t v) {
    unsigned char x[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                          (unsigned char)(v >> 24)};
    put_raw(b, x, 4);
}
void put_u64(std::string& b, uint64_t v) {
    put_u32(b, uint32_t(v));
    put_u32(b, uint32_t(v >> 32));
}
void put_i32(std::string& b, int v) { put_u32(b, uint32_t(v)); }
void put_f32(std::string& b, double v) { put_u32(b, std::bit_cast<uint32_t>(float(v))); }
void put_f64(std::string& b, double v) { put_u64(b, std::bit_cast<uint64_t>(v)); }
void put_f32_array(std::string& b, const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) put_f32(b, p[i]);
}
void put_str(std::string& b, const std::string& s) {
    put_u64(b, s.size());
    put_raw(b, s.data(), s.size());
}

struct Reader {
    const char* p;
    size_t n, pos = 0;
    std::string ctx;

    void need(size_t k) const {
        if (pos + k > n) throw SaroError("checkpoint: truncated " + ctx + " section");
    }
    uint32_t get_u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t((unsigned char)p[pos + size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t get_u64() {
        uint64_t lo = get_u32();
        return lo | (uint64_t(get_u32()) << 32);
    }
    int get_i32() { return int(get_u32()); }
    double get_f32() { return double(std::bit_cast<float>(get_u32())); }
    double get_f64() { return std::bit_cast<double>(get_u64()); }
    void get_f32_array(std::vector<double>& out, size_t count) {
        out.resize(count);
        for (size_t i = 0; i < count; ++i) out[i] = get_f32();
    }
    std::string get_str() {
        size_t k = size_t(get_u64());
        need(k);
        std::string s(p + pos, k);
        pos += k;
        return s;
    }
    void expect_end() const {
        if (pos != n) throw SaroError("checkpoint: trailing bytes in " + ctx + " section");
    }
};

void write_section(std::ofstream& os, const char* tag, const std::string& payload) {
    std::string head;
    put_u32(head, uint32_t(std::strlen(tag)));
    put_raw(head, tag, std::strlen(tag));
    put_u64(head, payload.size());
    os.write(head.data(), std::streamsize(head.size()));
    os.write(payload.data(), std::streamsize(payload.size()));
}

} // namespace

Checkpoint make_checkpoint(Model& model, uint64_t iteration, const std::string& rng_state,
                           std::vector<std::pair<std::string, std::string>> config) {
    Checkpoint c;
    c.iteration = iteration;
    c.state_sharpness = model.state_sharpness;
    c.feat_dim = model.field.feat_dim();
    c.spatial_res = model.field.spatial_res();
    c.time_res = model.field.time_res();
    c.level_count = model.field.level_count();
    c.cloud = model.cloud;
    model.field.ensure_thumbnails();
    for (int i = 0; i < 3; ++i) {
        c.spatial0.push_back(model.field.spatial_stack(i).levels[0].data);
        c.spacetime.push_back(model.field.spacetime_plane(i).data);
    }
    c.decoder_params = model.decoder.params();
    c.rng_state = rng_state;
    c.config = std::move(config);
    return c;
}

Model restore_model(const Checkpoint& ckpt) {
    Model model(ckpt.cloud, ckpt.feat_dim, ckpt.spatial_res, ckpt.time_res, ckpt.level_count);
    model.state_sharpness = ckpt.state_sharpness;
    for (int i = 0; i < 3; ++i) {
        PlaneGrid& base = model.field.spatial_base(i);
        if (ckpt.spatial0.size() != 3 || ckpt.spatial0[size_t(i)].size() != base.data.size())
            throw SaroError("checkpoint: spatial plane size mismatch");
        base.data = ckpt.spatial0[size_t(i)];
        PlaneGrid& st = model.field.spacetime_plane_mut(i);
        if (ckpt.spacetime.size() != 3 || ckpt.spacetime[size_t(i)].size() != st.data.size())
            throw SaroError("checkpoint: spacetime plane size mismatch");
        st.data = ckpt.spacetime[size_t(i)];
    }
    if (ckpt.decoder_params.size() != model.decoder.trainable_count())
        throw SaroError("checkpoint: decoder parameter count mismatch");
    model.decoder.params() = ckpt.decoder_params;
    model.field.ensure_thumbnails();
    return model;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw SaroError("save_checkpoint: cannot open " + path);
    std::string head;
    put_raw(head, kCkptMagic, 4);
    put_u32(head, Checkpoint::kVersion);
    os.write(head.data(), std::streamsize(head.size()));

    const size_t n = ckpt.cloud.size();
    std::string meta;
    put_u64(meta, ckpt.iteration);
    put_f64(meta, ckpt.state_sharpness);
    put_i32(meta, ckpt.cloud.sh_degree);
    put_u64(meta, n);
    put_i32(meta, ckpt.feat_dim);
    put_i32(meta, ckpt.spatial_res);
    put_i32(meta, ckpt.time_res);
    put_i32(meta, ckpt.level_count);
    for (int a = 0; a < 3; ++a) put_f64(meta, ckpt.cloud.bbox.min[a]);
    for (int a = 0; a < 3; ++a) put_f64(meta, ckpt.cloud.bbox.max[a]);
    write_section(os, "META", meta);

    std::string clou;
    for (size_t i = 0; i < n; ++i) put_f32_array(clou, ckpt.cloud.prims[i].position.data(), 4);
    for (size_t i = 0; i < n; ++i) put_f32_array(clou, ckpt.cloud.prims[i].log_scale.data(), 3);
    for (size_t i = 0; i < n; ++i) put_f32_array(clou, ckpt.cloud.prims[i].rotation.data(), 4);
    for (size_t i = 0; i < n; ++i) put_f32(clou, ckpt.cloud.prims[i].opacity_logit);
    for (size_t i = 0; i < n; ++i)
        put_f32_array(clou, ckpt.cloud.prims[i].sh.data(), ckpt.cloud.prims[i].sh.size());
    write_section(os, "CLOU", clou);

    auto plane_section = [&](const std::vector<std::vector<double>>& planes, const char* tag) {
        if (planes.size() != 3) throw SaroError("save_checkpoint: expected 3 planes per group");
        std::string buf;
        for (const auto& p : planes) {
            put_u64(buf, p.size());
            put_f32_array(buf, p.data(), p.size());
        }
        write_section(os, tag, buf);
    };
    plane_section(ckpt.spatial0, "FLD0");
    plane_section(ckpt.spacetime, "FLDT");

    std::string deco;
    put_u64(deco, ckpt.decoder_params.size());
    put_f32_array(deco, ckpt.decoder_params.data(), ckpt.decoder_params.size());
    write_section(os, "DECO", deco);

    std::string rngs;
    put_str(rngs, ckpt.rng_state);
    write_section(os, "RNGS", rngs);

    std::string conf;
    put_u32(conf, uint32_t(ckpt.config.size()));
    for (const auto& [k, v] : ckpt.config) {
        put_str(conf, k);
        put_str(conf, v);
    }
    write_section(os, "CONF", conf);

    if (ckpt.has_bake) {
        std::string bake;
        put_u64(bake, ckpt.bake_sigma.size());
        put_i32(bake, ckpt.feat_dim);
        put_f32_array(bake, ckpt.bake_features.data(), ckpt.bake_features.size());
        put_f32_array(bake, ckpt.bake_sigma.data(), ckpt.bake_sigma.size());
        put_u64(bake, ckpt.bake_hash);
        write_section(os, "BAKE", bake);
    }
    if (!os) throw SaroError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw SaroError("load_checkpoint: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 8 || std::memcmp(buf.data(), kCkptMagic, 4) != 0)
        throw SaroError("load_checkpoint: bad magic in " + path);
    Reader top{buf.data(), buf.size(), 4, "header"};
    const uint32_t version = top.get_u32();
    if (version != Checkpoint::kVersion)
        throw SaroError("load_checkpoint: version " + std::to_string(version) + ", expected " +
                        std::to_string(Checkpoint::kVersion));

    Checkpoint c;
    size_t n = 0;
    bool meta = false, clou = false, fld0 = false, fldt = false, deco = false, rngs = false;
    while (top.pos < top.n) {
        top.ctx = "header";
        const uint32_t tag_len = top.get_u32();
        if (tag_len == 0 || tag_len > 64)
            throw SaroError("load_checkpoint: corrupt section tag length");
        top.need(tag_len);
        std::string tag(buf.data() + top.pos, tag_len);
        top.pos += tag_len;
        const uint64_t size = top.get_u64();
        top.need(size_t(size));
        Reader r{buf.data() + top.pos, size_t(size), 0, tag};
        top.pos += size_t(size);

        if (tag == "META") {
            c.iteration = r.get_u64();
            c.state_sharpness = r.get_f64();
            c.cloud.sh_degree = r.get_i32();
            n = size_t(r.get_u64());
            c.feat_dim = r.get_i32();
            c.spatial_res = r.get_i32();
            c.time_res = r.get_i32();
            c.level_count = r.get_i32();
            for (int a = 0; a < 3; ++a) c.cloud.bbox.min[a] = r.get_f64();
            for (int a = 0; a < 3; ++a) c.cloud.bbox.max[a] = r.get_f64();
            r.expect_end();
            meta = true;
        } else if (tag == "CLOU") {
            if (!meta) throw SaroError("load_checkpoint: CLOU before META");
            c.cloud.prims.resize(n);
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 4; ++a) c.cloud.prims[i].position[a] = r.get_f32();
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 3; ++a) c.cloud.prims[i].log_scale[a] = r.get_f32();
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 4; ++a) c.cloud.prims[i].rotation[a] = r.get_f32();
            for (size_t i = 0; i < n; ++i) c.cloud.prims[i].opacity_logit = r.get_f32();
            for (size_t i = 0; i < n; ++i)
                for (size_t a = 0; a < c.cloud.prims[i].sh.size(); ++a)
                    c.cloud.prims[i].sh[a] = r.get_f32();
            r.expect_end();
            clou = true;
        } else if (tag == "FLD0" || tag == "FLDT") {
            auto& planes = tag == "FLD0" ? c.spatial0 : c.spacetime;
            planes.clear();
            for (int i = 0; i < 3; ++i) {
                const size_t count = size_t(r.get_u64());
                planes.emplace_back();
                r.get_f32_array(planes.back(), count);
            }
            r.expect_end();
            (tag == "FLD0" ? fld0 : fldt) = true;
        } else if (tag == "DECO") {
            const size_t count = size_t(r.get_u64());
            r.get_f32_array(c.decoder_params, count);
            r.expect_end();
            deco = true;
        } else if (tag == "RNGS") {
            c.rng_state = r.get_str();
            r.expect_end();
            rngs = true;
        } else if (tag == "CONF") {
            const uint32_t pairs = r.get_u32();
            for (uint32_t i = 0; i < pairs; ++i) {
                std::string k = r.get_str();
                std::string v = r.get_str();
                c.config.emplace_back(std::move(k), std::move(v));
            }
            r.expect_end();
        } else if (tag == "BAKE") {
            const size_t count = size_t(r.get_u64());
            const int fd = r.get_i32();
            r.get_f32_array(c.bake_features, count * size_t(fd));
            r.get_f32_array(c.bake_sigma, count);
            c.bake_hash = r.get_u64();
            r.expect_end();
            c.has_bake = true;
        }
        // unknown tags skipped for forward compatibility
    }
    if (!meta || !clou || !fld0 || !fldt || !deco || !rngs)
        throw SaroError("load_checkpoint: missing required section in " + path);
    return c;
}

} // namespace saro
