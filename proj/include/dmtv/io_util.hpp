#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dmtv {

// FNV-1a, 64-bit. Used for file checksums and config hashes.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
bool file_exists(const std::string& path);

// Little-endian scalar packing for the binary clip and checkpoint formats.
void append_i32(std::vector<uint8_t>& buf, int32_t v);
void append_i64(std::vector<uint8_t>& buf, int64_t v);
void append_u64(std::vector<uint8_t>& buf, uint64_t v);
void append_f32(std::vector<uint8_t>& buf, float v);
void append_f64(std::vector<uint8_t>& buf, double v);

// Length-prefixed strings (u64 byte count, then raw bytes).
void append_str(std::vector<uint8_t>& buf, const std::string& s);

// Cursor-based readers; throw std::runtime_error on truncation.
int32_t read_i32(const std::vector<uint8_t>& buf, size_t& pos);
int64_t read_i64(const std::vector<uint8_t>& buf, size_t& pos);
uint64_t read_u64(const std::vector<uint8_t>& buf, size_t& pos);
float read_f32(const std::vector<uint8_t>& buf, size_t& pos);
double read_f64(const std::vector<uint8_t>& buf, size_t& pos);
std::string read_str(const std::vector<uint8_t>& buf, size_t& pos);

// CSV with a fixed header; every row must match the header width. Numbers
// are printed with enough digits to round-trip doubles.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows,
               const std::vector<std::string>* row_labels = nullptr,
               const std::string& label_column = "");
std::string format_double(double v);

// Uncompressed 24-bit BMP. pixels is row-major top-down RGB triplets.
void write_bmp(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);

// Grouped bar chart rendered into a BMP: one group per label, one bar per
// series. Used for metric comparisons.
void write_bar_chart_bmp(const std::string& path,
                         const std::vector<std::string>& group_labels,
                         const std::vector<std::string>& series_names,
                         const std::vector<std::vector<double>>& values);

}  // namespace dmtv
