#include "dmtv/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dmtv {

uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open file for reading: " + path);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw std::runtime_error("short read: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    if (!bytes.empty())
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write: " + path);
}

bool file_exists(const std::string& path) {
    std::ifstream f(path);
    return f.good();
}

namespace {

template <typename T>
void append_le(std::vector<uint8_t>& buf, T v) {
    uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.insert(buf.end(), raw, raw + sizeof(T));
}

template <typename T>
T read_le(const std::vector<uint8_t>& buf, size_t& pos) {
    if (pos + sizeof(T) > buf.size())
        throw std::runtime_error("truncated binary payload");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

void append_i32(std::vector<uint8_t>& buf, int32_t v) { append_le(buf, v); }
void append_i64(std::vector<uint8_t>& buf, int64_t v) { append_le(buf, v); }
void append_u64(std::vector<uint8_t>& buf, uint64_t v) { append_le(buf, v); }
void append_f32(std::vector<uint8_t>& buf, float v) { append_le(buf, v); }
void append_f64(std::vector<uint8_t>& buf, double v) { append_le(buf, v); }

int32_t read_i32(const std::vector<uint8_t>& buf, size_t& pos) { return read_le<int32_t>(buf, pos); }
int64_t read_i64(const std::vector<uint8_t>& buf, size_t& pos) { return read_le<int64_t>(buf, pos); }
uint64_t read_u64(const std::vector<uint8_t>& buf, size_t& pos) { return read_le<uint64_t>(buf, pos); }
float read_f32(const std::vector<uint8_t>& buf, size_t& pos) { return read_le<float>(buf, pos); }
double read_f64(const std::vector<uint8_t>& buf, size_t& pos) { return read_le<double>(buf, pos); }

void append_str(std::vector<uint8_t>& buf, const std::string& s) {
    append_u64(buf, s.size());
    buf.insert(buf.end(), s.begin(), s.end());
}

std::string read_str(const std::vector<uint8_t>& buf, size_t& pos) {
    const uint64_t n = read_u64(buf, pos);
    if (pos + n > buf.size()) throw std::runtime_error("read_str: truncated buffer");
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
}

std::string format_double(double v) {
    // shortest representation that parses back to the same double
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return std::string(buf);
    }
    return std::string(buf);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows,
               const std::vector<std::string>* row_labels,
               const std::string& label_column) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    if (row_labels) f << label_column << ",";
    for (size_t i = 0; i < header.size(); ++i)
        f << header[i] << (i + 1 < header.size() ? "," : "");
    f << "\n";
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != header.size())
            throw std::invalid_argument("csv row width differs from header");
        if (row_labels) f << (*row_labels)[r] << ",";
        for (size_t i = 0; i < rows[r].size(); ++i)
            f << format_double(rows[r][i]) << (i + 1 < rows[r].size() ? "," : "");
        f << "\n";
    }
    if (!f) throw std::runtime_error("short write: " + path);
}

void write_bmp(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
    if (width <= 0 || height <= 0 ||
        rgb.size() != static_cast<size_t>(width) * height * 3)
        throw std::invalid_argument("write_bmp: pixel buffer does not match dimensions");
    const int row_bytes = width * 3;
    const int padding = (4 - row_bytes % 4) % 4;
    const uint32_t data_size = static_cast<uint32_t>((row_bytes + padding) * height);
    const uint32_t file_size = 54 + data_size;
    std::vector<uint8_t> out;
    out.reserve(file_size);
    // file header
    out.push_back('B');
    out.push_back('M');
    append_le<uint32_t>(out, file_size);
    append_le<uint32_t>(out, 0);
    append_le<uint32_t>(out, 54);
    // info header
    append_le<uint32_t>(out, 40);
    append_le<int32_t>(out, width);
    append_le<int32_t>(out, height);
    append_le<uint16_t>(out, 1);
    append_le<uint16_t>(out, 24);
    append_le<uint32_t>(out, 0);
    append_le<uint32_t>(out, data_size);
    append_le<int32_t>(out, 2835);
    append_le<int32_t>(out, 2835);
    append_le<uint32_t>(out, 0);
    append_le<uint32_t>(out, 0);
    // pixel rows, bottom-up, BGR
    for (int y = height - 1; y >= 0; --y) {
        for (int x = 0; x < width; ++x) {
            const size_t i = (static_cast<size_t>(y) * width + x) * 3;
            out.push_back(rgb[i + 2]);
            out.push_back(rgb[i + 1]);
            out.push_back(rgb[i]);
        }
        for (int p = 0; p < padding; ++p) out.push_back(0);
    }
    write_file_bytes(path, out);
}

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used, bit 4 is the left column.
struct Glyph {
    char ch;
    uint8_t rows[7];
};

const Glyph kFont[] = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
    {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1e}},
    {'c', {0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e}},
    {'d', {0x01, 0x01, 0x0d, 0x13, 0x11, 0x11, 0x0f}},
    {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
    {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
    {'g', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
    {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0c}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15}},
    {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
    {'p', {0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10}},
    {'q', {0x00, 0x00, 0x0d, 0x13, 0x0f, 0x01, 0x01}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'s', {0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e}},
    {'t', {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
    {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'w', {0x00, 0x00, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
    {'y', {0x00, 0x00, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'z', {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const uint8_t* glyph_rows(char c) {
    for (const auto& g : kFont)
        if (g.ch == c) return g.rows;
    return kFont[sizeof(kFont) / sizeof(kFont[0]) - 1].rows;  // space
}

struct Canvas {
    int w, h;
    std::vector<uint8_t> px;

    Canvas(int w_in, int h_in) : w(w_in), h(h_in), px(static_cast<size_t>(w) * h * 3, 255) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        const size_t i = (static_cast<size_t>(y) * w + x) * 3;
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }

    void rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
            for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x)
                set(x, y, r, g, b);
    }

    void text(int x, int y, const std::string& s, uint8_t r, uint8_t g, uint8_t b) {
        int cx = x;
        for (char raw : s) {
            const char c = (raw >= 'A' && raw <= 'Z') ? static_cast<char>(raw - 'A' + 'a') : raw;
            const uint8_t* rows = glyph_rows(c);
            for (int gy = 0; gy < 7; ++gy)
                for (int gx = 0; gx < 5; ++gx)
                    if (rows[gy] & (0x10 >> gx)) set(cx + gx, y + gy, r, g, b);
            cx += 6;
        }
    }
};

const uint8_t kPalette[][3] = {
    {66, 103, 178}, {214, 69, 65}, {38, 166, 91},
    {243, 156, 18}, {142, 68, 173}, {52, 73, 94},
};

}  // namespace

void write_bar_chart_bmp(const std::string& path,
                         const std::vector<std::string>& group_labels,
                         const std::vector<std::string>& series_names,
                         const std::vector<std::vector<double>>& values) {
    const int groups = static_cast<int>(group_labels.size());
    const int series = static_cast<int>(series_names.size());
    if (groups == 0 || series == 0 || values.size() != group_labels.size())
        throw std::invalid_argument("write_bar_chart_bmp: inconsistent inputs");
    for (const auto& row : values)
        if (row.size() != series_names.size())
            throw std::invalid_argument("write_bar_chart_bmp: ragged value rows");

    double vmax = 0.0, vmin = 0.0;
    for (const auto& row : values)
        for (double v : row) {
            vmax = std::max(vmax, v);
            vmin = std::min(vmin, v);
        }
    if (vmax == 0.0 && vmin == 0.0) vmax = 1.0;

    const int bar_w = 13, bar_gap = 3, group_gap = 18;
    const int group_w = series * (bar_w + bar_gap) + group_gap;
    const int margin_l = 50, margin_r = 16, margin_t = 26, margin_b = 34;
    const int plot_w = std::max(220, groups * group_w);
    const int plot_h = 170;
    Canvas cv(margin_l + plot_w + margin_r, margin_t + plot_h + margin_b);

    const double span = vmax - vmin;
    auto y_of = [&](double v) {
        return margin_t + static_cast<int>(std::lround((vmax - v) / span * plot_h));
    };
    const int y0 = y_of(0.0);

    // axes and the zero line
    cv.rect(margin_l - 1, margin_t, margin_l - 1, margin_t + plot_h, 0, 0, 0);
    cv.rect(margin_l - 1, y0, margin_l + plot_w, y0, 0, 0, 0);
    cv.text(2, margin_t - 3, format_double(vmax).substr(0, 7), 0, 0, 0);
    if (vmin < 0.0)
        cv.text(2, margin_t + plot_h - 3, format_double(vmin).substr(0, 7), 0, 0, 0);

    // legend across the top
    int lx = margin_l;
    for (int s = 0; s < series; ++s) {
        const auto* col = kPalette[s % 6];
        cv.rect(lx, 4, lx + 8, 12, col[0], col[1], col[2]);
        cv.text(lx + 11, 5, series_names[static_cast<size_t>(s)], 0, 0, 0);
        lx += 11 + 6 * (static_cast<int>(series_names[static_cast<size_t>(s)].size()) + 2);
    }

    for (int g = 0; g < groups; ++g) {
        const int gx = margin_l + g * group_w + group_gap / 2;
        for (int s = 0; s < series; ++s) {
            const double v = values[static_cast<size_t>(g)][static_cast<size_t>(s)];
            const int x0 = gx + s * (bar_w + bar_gap);
            const auto* col = kPalette[s % 6];
            const int yv = y_of(v);
            cv.rect(x0, std::min(y0, yv), x0 + bar_w - 1, std::max(y0, yv),
                    col[0], col[1], col[2]);
        }
        cv.text(gx, margin_t + plot_h + 8,
                group_labels[static_cast<size_t>(g)].substr(0, static_cast<size_t>(group_w / 6)),
                0, 0, 0);
    }
    write_bmp(path, cv.w, cv.h, cv.px);
}

}  // namespace dmtv
