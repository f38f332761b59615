#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>

#include "quantface/error.hpp"
#include "quantface/qtz1.hpp"
#include "quantface/rng.hpp"

using namespace quantface;

namespace {

// Hand-assembled golden container for a 2x3 matrix, built byte by byte from
// the published layout: magic "QTZ1", u8 rank, rank x u32 LE dims, f64 LE
// row-major payload.
std::string golden_bytes(const Tensor& t) {
  std::string out = "QTZ1";
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t a = 0; a < t.rank(); ++a) {
    const std::uint32_t d = static_cast<std::uint32_t>(t.dim(a));
    for (int b = 0; b < 4; ++b) {
      out.push_back(static_cast<char>((d >> (8 * b)) & 0xFF));
    }
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    const double v = t[i];
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b) {
      out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  return out;
}

Tensor sample_tensor() {
  Tensor t({2, 3});
  SplitMix64 rng(71);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
  return t;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("encoder emits the exact byte layout", "[qtz1]") {
  const Tensor t = sample_tensor();
  REQUIRE(qtz1_encode(t) == golden_bytes(t));
}

TEST_CASE("decode(encode(t)) restores shape and payload bitwise", "[qtz1]") {
  Tensor t({3, 2, 4});
  SplitMix64 rng(72);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
  const Tensor back = qtz1_decode(qtz1_encode(t));
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(back[i] == t[i]);
}

TEST_CASE("malformed containers are rejected as Io errors", "[qtz1]") {
  const std::string good = qtz1_encode(sample_tensor());

  SECTION("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    REQUIRE(kind_of([&] { qtz1_decode(bad); }) == ErrorKind::Io);
  }
  SECTION("truncated header") {
    REQUIRE(kind_of([&] { qtz1_decode(good.substr(0, 3)); }) ==
            ErrorKind::Io);
  }
  SECTION("truncated payload") {
    REQUIRE(kind_of([&] { qtz1_decode(good.substr(0, good.size() - 1)); }) ==
            ErrorKind::Io);
  }
  SECTION("trailing garbage") {
    REQUIRE(kind_of([&] { qtz1_decode(good + "!"); }) == ErrorKind::Io);
  }
  SECTION("zero dimension") {
    std::string bad = "QTZ1";
    bad.push_back(1);
    for (int i = 0; i < 4; ++i) bad.push_back(0);  // dim = 0
    REQUIRE(kind_of([&] { qtz1_decode(bad); }) == ErrorKind::Io);
  }
}

TEST_CASE("save and load roundtrip through the filesystem", "[qtz1]") {
  const auto dir = std::filesystem::temp_directory_path() / "qtz1_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "t.qtz").string();

  const Tensor t = sample_tensor();
  qtz1_save(path, t);
  const Tensor back = qtz1_load(path);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(back[i] == t[i]);

  REQUIRE(kind_of([&] { qtz1_load((dir / "missing.qtz").string()); }) ==
          ErrorKind::Io);
  std::filesystem::remove_all(dir);
}
