#include "dmtv/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "dmtv/io_util.hpp"

namespace dmtv {

namespace {

constexpr int32_t kClipMagic = 0x44564d54;  // "TMVD" little-endian on disk
constexpr int32_t kClipVersion = 1;

const char* kShapeWords[] = {"circle", "square", "triangle", "star"};
const char* kColorWords[] = {"red", "green", "blue", "yellow"};
const char* kSizeWords[] = {"big", "small"};
const char* kMotionWords[] = {"moves", "slides", "bounces", "drifts"};
const char* kDirectionWords[] = {"left", "right", "up", "down"};
const char* kSpeedWords[] = {"slowly", "quickly"};
const char* kBackgroundWords[] = {"plain", "striped"};

template <typename E, size_t N>
E enum_from_word(const char* const (&table)[N], const std::string& w, const char* what) {
    for (size_t i = 0; i < N; ++i)
        if (w == table[i]) return static_cast<E>(i);
    throw std::invalid_argument(std::string("unknown ") + what + " word: " + w);
}

struct Rgb {
    double r, g, b;
};

Rgb shape_color(Color c) {
    switch (c) {
        case Color::red: return {0.90, 0.12, 0.12};
        case Color::green: return {0.10, 0.80, 0.18};
        case Color::blue: return {0.15, 0.25, 0.90};
        case Color::yellow: return {0.95, 0.85, 0.10};
    }
    return {0, 0, 0};
}

double shape_radius(Size s, int H, int W) {
    const double base = static_cast<double>(std::min(H, W));
    return (s == Size::big ? 0.30 : 0.19) * base;
}

// Signed distance to the shape boundary, negative inside. px/py are offsets
// from the shape center in pixels.
double shape_sdf(Shape s, double px, double py, double r) {
    switch (s) {
        case Shape::circle:
            return std::sqrt(px * px + py * py) - r;
        case Shape::square:
            return std::max(std::fabs(px), std::fabs(py)) - 0.82 * r;
        case Shape::triangle: {
            // equilateral, apex up, circumradius-ish r
            const double k = std::sqrt(3.0);
            double x = std::fabs(px) - r;
            double y = py + r / k;
            if (x + k * y > 0.0) {
                const double nx = (x - k * y) / 2.0;
                const double ny = (-k * x - y) / 2.0;
                x = nx;
                y = ny;
            }
            x -= std::clamp(x, -2.0 * r, 0.0);
            return -std::sqrt(x * x + y * y) * (y > 0.0 ? 1.0 : -1.0);
        }
        case Shape::star: {
            // four-pointed concave star (astroid), tips at distance r
            const double t = std::sqrt(std::fabs(px)) + std::sqrt(std::fabs(py));
            return 0.5 * (t * t - r);
        }
    }
    return 1e9;
}

double background_value(Background b, int /*x*/, int y, int H) {
    if (b == Background::plain) return 0.15;
    const int stripe = std::max(2, H / 8);
    return (y / stripe) % 2 == 0 ? 0.26 : 0.10;
}

// Alpha with a one-pixel linear edge; support is alpha >= 0.5.
double coverage(double sdf) { return std::clamp(0.5 - sdf, 0.0, 1.0); }

void render_frame(Tensor& frames, int f, const SceneSpec& spec, double cx, double cy,
                  double r, int H, int W) {
    const Rgb col = shape_color(spec.color);
    const int64_t plane = static_cast<int64_t>(H) * W;
    double* base = frames.data() + static_cast<int64_t>(f) * 3 * plane;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double bg = background_value(spec.background, x, y, H);
            const double a = coverage(shape_sdf(spec.shape, x - cx, y - cy, r));
            const int64_t i = static_cast<int64_t>(y) * W + x;
            base[0 * plane + i] = bg * (1.0 - a) + col.r * a;
            base[1 * plane + i] = bg * (1.0 - a) + col.g * a;
            base[2 * plane + i] = bg * (1.0 - a) + col.b * a;
        }
}

}  // namespace

const char* word(Shape v) { return kShapeWords[static_cast<int>(v)]; }
const char* word(Color v) { return kColorWords[static_cast<int>(v)]; }
const char* word(Size v) { return kSizeWords[static_cast<int>(v)]; }
const char* word(Motion v) { return kMotionWords[static_cast<int>(v)]; }
const char* word(Direction v) { return kDirectionWords[static_cast<int>(v)]; }
const char* word(Speed v) { return kSpeedWords[static_cast<int>(v)]; }
const char* word(Background v) { return kBackgroundWords[static_cast<int>(v)]; }

Shape shape_from_word(const std::string& w) { return enum_from_word<Shape>(kShapeWords, w, "shape"); }
Color color_from_word(const std::string& w) { return enum_from_word<Color>(kColorWords, w, "color"); }
Size size_from_word(const std::string& w) { return enum_from_word<Size>(kSizeWords, w, "size"); }
Motion motion_from_word(const std::string& w) { return enum_from_word<Motion>(kMotionWords, w, "motion"); }
Direction direction_from_word(const std::string& w) { return enum_from_word<Direction>(kDirectionWords, w, "direction"); }
Speed speed_from_word(const std::string& w) { return enum_from_word<Speed>(kSpeedWords, w, "speed"); }
Background background_from_word(const std::string& w) { return enum_from_word<Background>(kBackgroundWords, w, "background"); }

int displacement(Speed s) { return s == Speed::slowly ? 1 : 3; }

void direction_step(Direction d, int& dx, int& dy) {
    switch (d) {
        case Direction::left: dx = -1; dy = 0; return;
        case Direction::right: dx = 1; dy = 0; return;
        case Direction::up: dx = 0; dy = -1; return;
        case Direction::down: dx = 0; dy = 1; return;
    }
}

std::string render_caption(const SceneSpec& spec) {
    std::string s = "a ";
    s += word(spec.size);
    s += " ";
    s += word(spec.color);
    s += " ";
    s += word(spec.shape);
    s += " ";
    s += word(spec.motion);
    s += " ";
    s += word(spec.speed);
    s += " toward the ";
    s += word(spec.direction);
    s += " on the ";
    s += word(spec.background);
    s += " background";
    return s;
}

std::vector<std::string> caption_vocabulary() {
    std::set<std::string> words = {"a", "toward", "the", "on", "background"};
    for (const char* w : kShapeWords) words.insert(w);
    for (const char* w : kColorWords) words.insert(w);
    for (const char* w : kSizeWords) words.insert(w);
    for (const char* w : kMotionWords) words.insert(w);
    for (const char* w : kDirectionWords) words.insert(w);
    for (const char* w : kSpeedWords) words.insert(w);
    for (const char* w : kBackgroundWords) words.insert(w);
    return std::vector<std::string>(words.begin(), words.end());
}

VideoClip render_clip(const SceneSpec& spec, int F, int H, int W, uint64_t seed,
                      int displacement_override) {
    if (F < 2) throw std::invalid_argument("render_clip: need at least 2 frames");
    if (H < 8 || W < 8) throw std::invalid_argument("render_clip: frame must be at least 8x8");

    const double r = shape_radius(spec.size, H, W);
    const int xmin = static_cast<int>(std::ceil(r));
    const int xmax = static_cast<int>(std::floor(W - 1 - r));
    const int ymin = static_cast<int>(std::ceil(r));
    const int ymax = static_cast<int>(std::floor(H - 1 - r));
    if (xmin > xmax || ymin > ymax)
        throw std::invalid_argument("render_clip: shape does not fit inside the frame");

    Rng rng = Rng::from_stream(seed, 0xc11d);
    int cx = xmin + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(xmax - xmin + 1)));
    int cy = ymin + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(ymax - ymin + 1)));

    const int d = displacement_override >= 0 ? displacement_override : displacement(spec.speed);
    int ux, uy;
    direction_step(spec.direction, ux, uy);
    int vx = ux * d, vy = uy * d;

    VideoClip clip;
    clip.spec = spec;
    clip.seed = seed;
    clip.caption = render_caption(spec);
    clip.frames = Tensor({F, 3, H, W});
    clip.flow_gt = Tensor({F - 1, 2, H, W});

    const int64_t plane = static_cast<int64_t>(H) * W;
    for (int f = 0; f < F; ++f) {
        render_frame(clip.frames, f, spec, cx, cy, r, H, W);
        if (f == F - 1) break;
        if (spec.motion == Motion::bounces) {
            // reflect so the whole shape stays inside
            if (cx + vx < xmin || cx + vx > xmax) vx = -vx;
            if (cy + vy < ymin || cy + vy > ymax) vy = -vy;
        }
        // flow covers the support of frame f
        double* fx = clip.flow_gt.data() + (static_cast<int64_t>(f) * 2 + 0) * plane;
        double* fy = clip.flow_gt.data() + (static_cast<int64_t>(f) * 2 + 1) * plane;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const bool on = shape_sdf(spec.shape, x - cx, y - cy, r) <= 0.0;
                fx[static_cast<int64_t>(y) * W + x] = on ? vx : 0.0;
                fy[static_cast<int64_t>(y) * W + x] = on ? vy : 0.0;
            }
        cx += vx;
        cy += vy;
    }

    const std::string key = clip.caption + "#" + std::to_string(seed) + "#" +
                            std::to_string(F) + "x" + std::to_string(H) + "x" + std::to_string(W) +
                            "#d" + std::to_string(d);
    clip.clip_id = "c" + hex64(fnv1a64(key));
    return clip;
}

SceneSpec sample_spec(Rng& rng) {
    SceneSpec s;
    s.shape = static_cast<Shape>(rng.uniform_index(4));
    s.color = static_cast<Color>(rng.uniform_index(4));
    s.size = static_cast<Size>(rng.uniform_index(2));
    s.motion = static_cast<Motion>(rng.uniform_index(4));
    s.direction = static_cast<Direction>(rng.uniform_index(4));
    s.speed = static_cast<Speed>(rng.uniform_index(2));
    s.background = static_cast<Background>(rng.uniform_index(2));
    return s;
}

void write_clip_file(const std::string& path, const VideoClip& clip) {
    const int F = static_cast<int>(clip.frames.shape(0));
    const int C = static_cast<int>(clip.frames.shape(1));
    const int H = static_cast<int>(clip.frames.shape(2));
    const int W = static_cast<int>(clip.frames.shape(3));
    const bool has_flow = clip.flow_gt.defined() && clip.flow_gt.numel() > 0;
    std::vector<uint8_t> buf;
    buf.reserve(32 + static_cast<size_t>(clip.frames.numel() + (has_flow ? clip.flow_gt.numel() : 0)) * 4);
    append_i32(buf, kClipMagic);
    append_i32(buf, kClipVersion);
    append_i32(buf, F);
    append_i32(buf, C);
    append_i32(buf, H);
    append_i32(buf, W);
    append_i32(buf, has_flow ? 1 : 0);
    append_i32(buf, 0);
    for (int64_t i = 0; i < clip.frames.numel(); ++i)
        append_f32(buf, static_cast<float>(clip.frames[i]));
    if (has_flow) {
        if (clip.flow_gt.ndim() != 4 || clip.flow_gt.shape(0) != F - 1 ||
            clip.flow_gt.shape(1) != 2 || clip.flow_gt.shape(2) != H || clip.flow_gt.shape(3) != W)
            throw std::invalid_argument("write_clip_file: flow shape inconsistent with frames");
        for (int64_t i = 0; i < clip.flow_gt.numel(); ++i)
            append_f32(buf, static_cast<float>(clip.flow_gt[i]));
    }
    write_file_bytes(path, buf);
}

VideoClip read_clip_file(const std::string& path) {
    const auto buf = read_file_bytes(path);
    size_t pos = 0;
    const int32_t magic = read_i32(buf, pos);
    if (magic != kClipMagic)
        throw std::runtime_error("clip file has wrong magic: " + path);
    const int32_t version = read_i32(buf, pos);
    if (version != kClipVersion)
        throw std::runtime_error("clip file has unsupported version: " + path);
    const int32_t F = read_i32(buf, pos);
    const int32_t C = read_i32(buf, pos);
    const int32_t H = read_i32(buf, pos);
    const int32_t W = read_i32(buf, pos);
    const int32_t has_flow = read_i32(buf, pos);
    read_i32(buf, pos);  // reserved
    if (F < 2 || C < 1 || H < 1 || W < 1)
        throw std::runtime_error("clip file header is invalid: " + path);
    VideoClip clip;
    clip.frames = Tensor({F, C, H, W});
    for (int64_t i = 0; i < clip.frames.numel(); ++i)
        clip.frames[i] = static_cast<double>(read_f32(buf, pos));
    if (has_flow) {
        clip.flow_gt = Tensor({F - 1, 2, H, W});
        for (int64_t i = 0; i < clip.flow_gt.numel(); ++i)
            clip.flow_gt[i] = static_cast<double>(read_f32(buf, pos));
    }
    if (pos != buf.size())
        throw std::runtime_error("clip file has trailing bytes: " + path);
    return clip;
}

CorpusManifest build_corpus(int n_clips, int F, int H, int W, uint64_t seed,
                            const std::string& out_dir) {
    if (n_clips < 1) throw std::invalid_argument("build_corpus: need at least one clip");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "clips");

    CorpusManifest manifest;
    manifest.F = F;
    manifest.C = 3;
    manifest.H = H;
    manifest.W = W;
    manifest.seed = seed;

    std::set<std::string> seen_ids;
    nlohmann::json jclips = nlohmann::json::array();
    for (int i = 0; i < n_clips; ++i) {
        Rng rng = Rng::from_stream(seed, static_cast<uint64_t>(i), 0x5bec);
        const SceneSpec spec = sample_spec(rng);
        const uint64_t clip_seed = Rng::from_stream(seed, static_cast<uint64_t>(i), 0x51ed).next_u64();
        VideoClip clip = render_clip(spec, F, H, W, clip_seed);
        if (!seen_ids.insert(clip.clip_id).second)
            throw std::runtime_error("build_corpus: duplicate clip_id " + clip.clip_id);

        ManifestEntry e;
        e.clip_id = clip.clip_id;
        e.caption = clip.caption;
        e.seed = clip_seed;
        e.path = "clips/" + clip.clip_id + ".bin";
        e.spec = spec;
        const std::string abs_path = (fs::path(out_dir) / e.path).string();
        write_clip_file(abs_path, clip);
        const auto written = read_file_bytes(abs_path);
        e.checksum = hex64(fnv1a64(written.data(), written.size()));
        manifest.clips.push_back(e);

        nlohmann::json jc;
        jc["clip_id"] = e.clip_id;
        jc["caption"] = e.caption;
        jc["seed"] = e.seed;
        jc["path"] = e.path;
        jc["checksum"] = e.checksum;
        jc["spec"] = {
            {"shape", word(spec.shape)},     {"color", word(spec.color)},
            {"size", word(spec.size)},       {"motion", word(spec.motion)},
            {"direction", word(spec.direction)}, {"speed", word(spec.speed)},
            {"background", word(spec.background)},
        };
        jclips.push_back(jc);
    }

    nlohmann::json j;
    j["version"] = manifest.version;
    j["f"] = F;
    j["c"] = 3;
    j["h"] = H;
    j["w"] = W;
    j["seed"] = seed;
    j["clips"] = jclips;
    const std::string text = j.dump(2) + "\n";
    write_file_bytes((fs::path(out_dir) / "manifest.json").string(),
                     std::vector<uint8_t>(text.begin(), text.end()));
    return manifest;
}

CorpusManifest load_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto bytes = read_file_bytes((fs::path(dir) / "manifest.json").string());
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    CorpusManifest m;
    m.version = j.at("version").get<int>();
    m.F = j.at("f").get<int>();
    m.C = j.at("c").get<int>();
    m.H = j.at("h").get<int>();
    m.W = j.at("w").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& jc : j.at("clips")) {
        ManifestEntry e;
        e.clip_id = jc.at("clip_id").get<std::string>();
        e.caption = jc.at("caption").get<std::string>();
        e.seed = jc.at("seed").get<uint64_t>();
        e.path = jc.at("path").get<std::string>();
        e.checksum = jc.at("checksum").get<std::string>();
        const auto& js = jc.at("spec");
        e.spec.shape = shape_from_word(js.at("shape").get<std::string>());
        e.spec.color = color_from_word(js.at("color").get<std::string>());
        e.spec.size = size_from_word(js.at("size").get<std::string>());
        e.spec.motion = motion_from_word(js.at("motion").get<std::string>());
        e.spec.direction = direction_from_word(js.at("direction").get<std::string>());
        e.spec.speed = speed_from_word(js.at("speed").get<std::string>());
        e.spec.background = background_from_word(js.at("background").get<std::string>());
        m.clips.push_back(e);
    }
    return m;
}

VideoClip load_clip(const std::string& dir, const ManifestEntry& entry, bool verify_checksum) {
    namespace fs = std::filesystem;
    const std::string abs_path = (fs::path(dir) / entry.path).string();
    if (verify_checksum) {
        const auto bytes = read_file_bytes(abs_path);
        const std::string sum = hex64(fnv1a64(bytes.data(), bytes.size()));
        if (sum != entry.checksum)
            throw std::runtime_error("clip checksum mismatch for " + entry.clip_id);
    }
    VideoClip clip = read_clip_file(abs_path);
    clip.caption = entry.caption;
    clip.clip_id = entry.clip_id;
    clip.seed = entry.seed;
    clip.spec = entry.spec;
    return clip;
}

}  // namespace dmtv
