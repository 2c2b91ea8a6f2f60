#include <filesystem>
#include <string>

#include "doctest.h"
#include "dmtv/io_util.hpp"

using namespace dmtv;
namespace fs = std::filesystem;

TEST_SUITE("io_util") {

TEST_CASE("fnv1a64 matches published reference values") {
    // reference digests of the 64-bit FNV-1a test vectors
    CHECK(fnv1a64(std::string("")) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ULL);
    CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
}

TEST_CASE("scalar packing round-trips") {
    std::vector<uint8_t> buf;
    append_i32(buf, -123456);
    append_i64(buf, 0x0123456789abcdefLL);
    append_u64(buf, 0xfedcba9876543210ULL);
    append_f32(buf, 1.5f);
    append_f64(buf, -2.25e-7);
    size_t pos = 0;
    CHECK(read_i32(buf, pos) == -123456);
    CHECK(read_i64(buf, pos) == 0x0123456789abcdefLL);
    CHECK(read_u64(buf, pos) == 0xfedcba9876543210ULL);
    CHECK(read_f32(buf, pos) == 1.5f);
    CHECK(read_f64(buf, pos) == -2.25e-7);
    CHECK(pos == buf.size());
    CHECK_THROWS_AS(read_i32(buf, pos), std::runtime_error);
}

TEST_CASE("little-endian layout on disk") {
    std::vector<uint8_t> buf;
    append_i32(buf, 0x01020304);
    CHECK(buf[0] == 0x04);
    CHECK(buf[3] == 0x01);
}

TEST_CASE("file bytes round-trip") {
    fs::create_directories("test_tmp");
    const std::string path = "test_tmp/io_bytes.bin";
    std::vector<uint8_t> data = {0, 1, 2, 255, 128, 7};
    write_file_bytes(path, data);
    CHECK(file_exists(path));
    CHECK(read_file_bytes(path) == data);
    CHECK_THROWS_AS(read_file_bytes("test_tmp/does_not_exist.bin"), std::runtime_error);
}

TEST_CASE("csv writer emits header plus rows and validates widths") {
    fs::create_directories("test_tmp");
    const std::string path = "test_tmp/io_test.csv";
    write_csv(path, {"step", "loss"}, {{0.0, 1.25}, {1.0, 0.5}});
    const auto bytes = read_file_bytes(path);
    const std::string text(bytes.begin(), bytes.end());
    CHECK(text == "step,loss\n0,1.25\n1,0.5\n");
    CHECK_THROWS_AS(write_csv(path, {"a", "b"}, {{1.0}}), std::invalid_argument);

    std::vector<std::string> labels = {"base"};
    write_csv(path, {"x"}, {{2.0}}, &labels, "variant");
    const auto bytes2 = read_file_bytes(path);
    CHECK(std::string(bytes2.begin(), bytes2.end()) == "variant,x\nbase,2\n");
}

TEST_CASE("format_double round-trips doubles compactly") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(-3.0) == "-3");
    CHECK(std::stod(format_double(1.0 / 3.0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-11));
}

TEST_CASE("bmp writer produces a well-formed file") {
    fs::create_directories("test_tmp");
    const std::string path = "test_tmp/io_test.bmp";
    // 3x2 RGB, one red pixel top-left
    std::vector<uint8_t> rgb(3 * 2 * 3, 0);
    rgb[0] = 255;
    write_bmp(path, 3, 2, rgb);
    const auto bytes = read_file_bytes(path);
    REQUIRE(bytes.size() >= 54);
    CHECK(bytes[0] == 'B');
    CHECK(bytes[1] == 'M');
    // 3 pixels * 3 bytes = 9, padded to 12 per row, 2 rows + 54 header
    CHECK(bytes.size() == 54 + 24);
    // bottom-up rows: the top-left red pixel sits in the second stored row,
    // as BGR
    CHECK(bytes[54 + 12 + 0] == 0);
    CHECK(bytes[54 + 12 + 1] == 0);
    CHECK(bytes[54 + 12 + 2] == 255);
    CHECK_THROWS_AS(write_bmp(path, 2, 2, rgb), std::invalid_argument);
}

TEST_CASE("bar chart renders without errors and is deterministic") {
    fs::create_directories("test_tmp");
    const std::string a = "test_tmp/chart_a.bmp";
    const std::string b = "test_tmp/chart_b.bmp";
    write_bar_chart_bmp(a, {"full", "no_reg"}, {"dyn", "align"},
                        {{1.2, 0.8}, {0.4, -0.2}});
    write_bar_chart_bmp(b, {"full", "no_reg"}, {"dyn", "align"},
                        {{1.2, 0.8}, {0.4, -0.2}});
    CHECK(read_file_bytes(a) == read_file_bytes(b));
    CHECK_THROWS_AS(write_bar_chart_bmp(a, {"x"}, {"s"}, {{1.0, 2.0}}),
                    std::invalid_argument);
}

}  // TEST_SUITE io_util
