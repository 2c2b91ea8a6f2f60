#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmtv/rng.hpp"
#include "dmtv/tensor.hpp"

namespace dmtv {

enum class Shape { circle, square, triangle, star };
enum class Color { red, green, blue, yellow };
enum class Size { big, small };
enum class Motion { moves, slides, bounces, drifts };
enum class Direction { left, right, up, down };
enum class Speed { slowly, quickly };
enum class Background { plain, striped };

struct SceneSpec {
    Shape shape = Shape::circle;
    Color color = Color::red;
    Size size = Size::big;
    Motion motion = Motion::moves;
    Direction direction = Direction::left;
    Speed speed = Speed::slowly;
    Background background = Background::plain;
};

const char* word(Shape v);
const char* word(Color v);
const char* word(Size v);
const char* word(Motion v);
const char* word(Direction v);
const char* word(Speed v);
const char* word(Background v);

// Inverse lookups used when reading manifests; throw on unknown words.
Shape shape_from_word(const std::string& w);
Color color_from_word(const std::string& w);
Size size_from_word(const std::string& w);
Motion motion_from_word(const std::string& w);
Direction direction_from_word(const std::string& w);
Speed speed_from_word(const std::string& w);
Background background_from_word(const std::string& w);

// Pixels per frame for a speed word.
int displacement(Speed s);
// Unit step (dx, dy) for a direction, y pointing down.
void direction_step(Direction d, int& dx, int& dy);

struct VideoClip {
    Tensor frames;   // [F,C,H,W], values in [0,1]
    Tensor flow_gt;  // [F-1,2,H,W], pixels/frame
    std::string caption;
    std::string clip_id;
    uint64_t seed = 0;
    SceneSpec spec;
};

// "a {size} {color} {shape} {verb} {adverb} toward the {direction} on the
// {background} background", all lower case.
std::string render_caption(const SceneSpec& spec);

// Every distinct word that can occur in a caption, sorted.
std::vector<std::string> caption_vocabulary();

// Renders an F-frame clip. The start position is drawn from `seed` uniformly
// over placements that fit the whole shape in frame 0; non-bouncing shapes
// may leave the frame later. displacement_override, when >= 0, replaces the
// speed-derived step size (0 renders a static control clip).
VideoClip render_clip(const SceneSpec& spec, int F, int H, int W, uint64_t seed,
                      int displacement_override = -1);

SceneSpec sample_spec(Rng& rng);

struct ManifestEntry {
    std::string clip_id;
    std::string caption;
    uint64_t seed = 0;
    std::string path;      // relative to the corpus directory
    std::string checksum;  // fnv1a64 of the clip file bytes, hex
    SceneSpec spec;
};

struct CorpusManifest {
    int version = 1;
    int F = 0, C = 0, H = 0, W = 0;
    uint64_t seed = 0;
    std::vector<ManifestEntry> clips;
};

// Writes clips/<id>.bin files plus manifest.json under out_dir.
CorpusManifest build_corpus(int n_clips, int F, int H, int W, uint64_t seed,
                            const std::string& out_dir);

CorpusManifest load_manifest(const std::string& dir);
VideoClip load_clip(const std::string& dir, const ManifestEntry& entry,
                    bool verify_checksum = true);

// Raw clip file round-trip (header + float32 frames + float32 flow).
void write_clip_file(const std::string& path, const VideoClip& clip);
VideoClip read_clip_file(const std::string& path);

}  // namespace dmtv
