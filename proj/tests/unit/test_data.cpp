#include <doctest.h>

#include <fstream>
#include <set>

#include "elsnet/dataset.hpp"
#include "elsnet/elst.hpp"
#include "elsnet/phantom.hpp"
#include "fixtures.hpp"

using namespace elsnet;
namespace fs = std::filesystem;

TEST_SUITE("elst") {
  TEST_CASE("round trip f32 and u8") {
    const std::vector<float> f{1.5f, -2.0f, 0.0f, 3.25f, 1e-7f, 7.0f};
    auto a = elst::decode(elst::encode({2, 3}, std::span<const float>(f)));
    CHECK(a.dtype == elst::DType::F32);
    CHECK(a.dims == Dims{2, 3});
    CHECK(a.f32 == f);
    const std::vector<std::uint8_t> u{0, 1, 2, 255};
    auto b = elst::decode(elst::encode({4}, std::span<const std::uint8_t>(u)));
    CHECK(b.dtype == elst::DType::U8);
    CHECK(b.u8 == u);
  }

  TEST_CASE("header layout") {
    const std::vector<std::uint8_t> u{9};
    auto bytes = elst::encode({1}, std::span<const std::uint8_t>(u));
    REQUIRE(bytes.size() == 4 + 2 + 1 + 1 + 4 + 1);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ELST");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 1);
    CHECK(bytes[7] == 1);
    CHECK(bytes.back() == 9);
  }

  TEST_CASE("malformed input is rejected with an offset") {
    const std::vector<float> f{1, 2, 3, 4};
    auto good = elst::encode({2, 2}, std::span<const float>(f));
    auto truncated = good;
    truncated.resize(good.size() - 3);
    CHECK_THROWS_AS(elst::decode(truncated), FormatError);
    auto bad_magic = good;
    bad_magic[0] = 'X';
    try {
      elst::decode(bad_magic);
      FAIL("accepted bad magic");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
    auto bad_dtype = good;
    bad_dtype[6] = 7;
    CHECK_THROWS_AS(elst::decode(bad_dtype), FormatError);
    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_AS(elst::decode(trailing), FormatError);
    CHECK_THROWS_AS(elst::decode(std::span<const std::uint8_t>()), FormatError);
  }
}

TEST_SUITE("phantom") {
  PhantomConfig small() {
    PhantomConfig c;
    c.n_unlabeled = 6;
    c.n_background = 3;
    c.n_test = 4;
    return c;
  }

  TEST_CASE("split invariants") {
    for (int K : {2, 3, 5}) {
      PhantomConfig c = small();
      c.num_classes = K;
      Dataset d = generate_phantom_dataset(7, c);
      CHECK_NOTHROW(validate(d));
      std::set<int> labels(d.exemplar().mask.labels.begin(), d.exemplar().mask.labels.end());
      for (int k = 1; k <= K; ++k) CHECK(labels.count(k) == 1);
      for (const auto& s : d.split(split::kBackground))
        for (auto v : s.mask.labels) REQUIRE(v == 0);
      for (const auto& name : {split::kUnlabeled, split::kTest})
        for (const auto& s : d.split(name)) {
          for (float v : s.image.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));
          for (auto v : s.mask.labels) REQUIRE(v <= K);
        }
      CHECK(d.split(split::kUnlabeled).size() == 6);
      CHECK(d.split(split::kTest).size() == 4);
    }
  }

  TEST_CASE("same seed gives identical files, different seed does not") {
    const auto a = fixture::scratch("phantom_a"), b = fixture::scratch("phantom_b");
    save_dataset(generate_phantom_dataset(7, small()), a);
    save_dataset(generate_phantom_dataset(7, small()), b);
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), a);
      REQUIRE(elst::read_bytes(e.path()) == elst::read_bytes(b / rel));
    }
    CHECK_FALSE(generate_phantom_dataset(8, small()).exemplar().image == generate_phantom_dataset(7, small()).exemplar().image);
  }

  TEST_CASE("config limits") {
    PhantomConfig c = small();
    c.num_classes = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.num_classes = 3;
    c.size = 96;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("sample round trip and load errors") {
    const auto dir = fixture::scratch("sample_io");
    Dataset d = generate_phantom_dataset(2, PhantomConfig{});
    const Sample& s = d.split(split::kTest).front();
    save_sample(s, 3, dir);
    Sample back = load_sample(dir, s.id);
    CHECK(back.image == s.image);
    CHECK(back.mask == s.mask);

    SUBCASE("truncated image") {
      auto bytes = elst::read_bytes(dir / (s.id + ".img.elst"));
      bytes.resize(bytes.size() / 2);
      elst::write_bytes(dir / (s.id + ".img.elst"), bytes);
      CHECK_THROWS_AS(load_sample(dir, s.id), FormatError);
    }
    SUBCASE("mask value above the class count") {
      Sample bad = s;
      bad.mask.labels[0] = 4;
      save_sample(bad, 3, dir);
      CHECK_THROWS_AS(load_sample(dir, s.id), ValidationError);
    }
  }

  TEST_CASE("dataset round trip") {
    const auto dir = fixture::scratch("dataset_io");
    PhantomConfig c;
    c.n_unlabeled = 3;
    c.n_background = 2;
    c.n_test = 2;
    Dataset d = generate_phantom_dataset(4, c);
    save_dataset(d, dir);
    Dataset back = load_dataset(dir);
    CHECK(back.manifest.splits == d.manifest.splits);
    CHECK(back.exemplar().mask == d.exemplar().mask);
  }
}
