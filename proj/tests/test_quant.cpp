#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bundles.hpp"
#include "support.hpp"
#include "tinyfit/byteio.hpp"
#include "tinyfit/quant.hpp"

using namespace tinyfit;
using namespace tinyfit::test;

namespace {

// Exact reference of the fixed-point product using 128-bit integers.
std::int32_t multiplier_oracle(std::int32_t acc, quant::FixedPointMultiplier m) {
  const __int128 prod = static_cast<__int128>(acc) * m.mantissa;
  const __int128 half = m.shift == 0 ? 0 : (static_cast<__int128>(1) << (m.shift - 1));
  const __int128 mag = prod < 0 ? -prod : prod;
  __int128 q = m.shift == 0 ? mag : (mag + half) >> m.shift;
  if (prod < 0) q = -q;
  return static_cast<std::int32_t>(std::clamp<__int128>(q, INT32_MIN, INT32_MAX));
}

}  // namespace

TEST_SUITE("quant") {
  TEST_CASE("round half away from zero") {
    CHECK(quant::round_half_away(0.5) == 1);
    CHECK(quant::round_half_away(-0.5) == -1);
    CHECK(quant::round_half_away(2.5) == 3);
    CHECK(quant::round_half_away(-2.5) == -3);
    CHECK(quant::round_half_away(63.5) == 64);
    CHECK(quant::round_half_away(2.4999) == 2);
    CHECK(quant::round_half_away(-0.0) == 0);
  }

  TEST_CASE("symmetric weights: [-1, 0, 0.5] -> scale 1/127, q = [-127, 0, 64]") {
    const std::vector<double> w = {-1.0, 0.0, 0.5};
    const auto t = quant::quantize_symmetric(w);
    CHECK(t.scale == doctest::Approx(1.0 / 127.0).epsilon(1e-15));
    CHECK(t.values == std::vector<std::int8_t>{-127, 0, 64});
  }

  TEST_CASE("all-zero tensor gets scale 1") {
    const std::vector<double> w(10, 0.0);
    const auto t = quant::quantize_symmetric(w);
    CHECK(t.scale == 1.0);
    CHECK(std::all_of(t.values.begin(), t.values.end(), [](auto v) { return v == 0; }));
  }

  TEST_CASE("dequantization error is at most half a step") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> w(500);
      for (auto& x : w) x = rng.normal() * rng.uniform(0.01, 3);
      const auto t = quant::quantize_symmetric(w);
      for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(t.values[i] >= -127);
        CHECK(std::abs(w[i] - t.scale * t.values[i]) <= t.scale / 2 * (1 + 1e-12));
      }
    }
  }

  TEST_CASE("requantization multiplier reproduces the real ratio within 2^-24") {
    Rng rng(6);
    for (int i = 0; i < 2000; ++i) {
      const double real = std::exp(rng.uniform(std::log(1e-7), std::log(0.999)));
      const auto m = quant::quantize_multiplier(real);
      CHECK(m.mantissa >= (1 << 30));
      CHECK(std::abs(m.value() - real) / real <= std::ldexp(1.0, -24));
    }
  }

  TEST_CASE("apply_multiplier matches an exact 128-bit oracle") {
    Rng rng(10);
    for (int i = 0; i < 20000; ++i) {
      const auto m = quant::quantize_multiplier(std::exp(rng.uniform(std::log(1e-6), std::log(0.99))));
      const auto acc = static_cast<std::int32_t>(static_cast<std::int64_t>(rng.next() % (1ULL << 32)) - (1LL << 31));
      REQUIRE(quant::apply_multiplier(acc, m) == multiplier_oracle(acc, m));
    }
    // Exact ties round away from zero.
    const quant::FixedPointMultiplier half{1 << 30, 31};
    CHECK(quant::apply_multiplier(3, half) == 2);
    CHECK(quant::apply_multiplier(-3, half) == -2);
  }

  TEST_CASE("activation ranges include zero and map onto int8") {
    for (const auto& [lo, hi] : {std::pair{-1.0, 3.0}, {0.5, 4.0}, {-6.0, -2.0}, {0.0, 0.0}}) {
      const auto p = quant::choose_affine(lo, hi);
      CHECK(p.scale > 0);
      CHECK(p.zero_point >= -128);
      CHECK(p.zero_point <= 127);
      CHECK(quant::quantize_input(0.0f, p) == p.zero_point);
      CHECK(quant::quantize_input(1e9f, p) == 127);
      CHECK(quant::quantize_input(-1e9f, p) == -128);
    }
  }

  TEST_CASE("pruning") {
    const auto m = nn::init_model<double>(class_names(5), 12);
    SUBCASE("sparsity 0 is the identity") { CHECK(quant::prune_magnitude(m, 0.0) == m); }
    SUBCASE("sparsity 0.5 zeroes exactly the smaller half of Dense1") {
      const auto p = quant::prune_magnitude(m, 0.5);
      const auto& w0 = m.params[nn::LayerId::dense1].weight;
      const auto& w1 = p.params[nn::LayerId::dense1].weight;
      REQUIRE(w0.size() == 6144);
      CHECK((w1.array() == 0.0).count() == 3072);

      std::vector<Eigen::Index> order(static_cast<std::size_t>(w0.size()));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        return std::abs(w0.data()[a]) < std::abs(w0.data()[b]);
      });
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto i = order[k];
        if (k < 3072) CHECK(w1.data()[i] == 0.0);
        else CHECK(w1.data()[i] == w0.data()[i]);
      }
      for (auto id : {nn::LayerId::conv1, nn::LayerId::conv2, nn::LayerId::head})
        CHECK(p.params[id] == m.params[id]);
    }
    SUBCASE("ties are broken by index order") {
      auto flat = m;
      flat.params[nn::LayerId::dense1].weight.setConstant(0.25);
      const auto p = quant::prune_magnitude(flat, 0.25);
      const auto& w = p.params[nn::LayerId::dense1].weight;
      for (Eigen::Index i = 0; i < w.size(); ++i) CHECK(w.data()[i] == (i < 1536 ? 0.0 : 0.25));
    }
    SUBCASE("out of range") {
      CHECK(error_code_of([&] { quant::prune_magnitude(m, 1.0); }) == Errc::BadSparsity);
      CHECK(error_code_of([&] { quant::prune_magnitude(m, -0.1); }) == Errc::BadSparsity);
    }
  }

  TEST_CASE("calibration needs windows") {
    const auto m = nn::init_model<double>(class_names(3), 1);
    CHECK(error_code_of([&] { quant::calibrate_and_quantize(m, {}, std::vector<Window>{}, 1); }) ==
          Errc::EmptyCalibration);
  }

  TEST_CASE("bundle structure") {
    const auto b = random_bundle(6, 3, 5);
    REQUIRE(b.layers.size() == 4);
    CHECK(b.layers[0].kind == quant::LayerKind::conv);
    CHECK(b.layers[1].kind == quant::LayerKind::conv);
    CHECK(b.layers[2].kind == quant::LayerKind::dense);
    CHECK(b.layers[3].kind == quant::LayerKind::dense);
    CHECK(b.layers[3].out == 6);
    CHECK(b.layers[3].requant.mantissa == 0);
    for (const auto& l : b.layers) {
      CHECK(l.weights.size() == l.weight_count());
      CHECK(l.biases.size() == l.out);
      CHECK(l.weight_scale > 0);
      CHECK(l.input_scale > 0);
      for (auto w : l.weights) CHECK(w >= -127);
    }
    // Default pruning leaves 30 % of Dense1 at zero.
    CHECK(std::count(b.layers[2].weights.begin(), b.layers[2].weights.end(), 0) >= 1843);
  }

  TEST_CASE("wire format header, determinism and round trip") {
    const auto b = random_bundle(3, 8, 0x01020304);
    const auto bytes = quant::serialize(b);
    CHECK(quant::serialize(b) == bytes);
    CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "TBND"));
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 0x04);
    CHECK(bytes[9] == 0x01);
    CHECK(bytes[10] == 3);
    CHECK(bytes[11] == 2);  // "c0"
    CHECK(bytes[12] == 'c');
    const std::uint32_t footer = std::uint32_t{bytes[bytes.size() - 4]} | std::uint32_t{bytes[bytes.size() - 3]} << 8 |
                                 std::uint32_t{bytes[bytes.size() - 2]} << 16 | std::uint32_t{bytes[bytes.size() - 1]} << 24;
    CHECK(footer == zlib_crc(std::span(bytes).first(bytes.size() - 4)));
    CHECK(quant::deserialize(bytes) == b);
  }

  TEST_CASE("C = 18 bundle is under the 15 KiB budget") {
    const auto bytes = quant::serialize(random_bundle(18, 1));
    CHECK(bytes.size() < quant::kBundleSizeBudget);
  }

  TEST_CASE("typed errors in check order") {
    const auto bytes = quant::serialize(random_bundle(4, 2));
    CHECK(error_code_of([&] { quant::deserialize(std::span(bytes).first(13)); }) == Errc::Truncated);

    auto flipped = bytes;
    flipped[40] ^= 0x10;
    CHECK(error_code_of([&] { quant::deserialize(flipped); }) == Errc::CrcMismatch);

    auto magic = bytes;
    magic[0] = 'X';
    reseal(magic);
    CHECK(error_code_of([&] { quant::deserialize(magic); }) == Errc::BadMagic);

    auto version = bytes;
    version[4] = 2;
    reseal(version);
    CHECK(error_code_of([&] { quant::deserialize(version); }) == Errc::BadVersion);

    auto short_body = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 60);
    short_body.resize(64);
    reseal(short_body);
    CHECK(error_code_of([&] { quant::deserialize(short_body); }) == Errc::Truncated);

    auto trailing = bytes;
    trailing.insert(trailing.end() - 4, std::uint8_t{0});
    reseal(trailing);
    CHECK(error_code_of([&] { quant::deserialize(trailing); }) == Errc::Malformed);
  }

  TEST_CASE("every single-byte flip is caught by the CRC") {
    const auto bytes = quant::serialize(random_bundle(3, 4));
    Rng rng(1);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      auto c = bytes;
      c[i] ^= static_cast<std::uint8_t>(1 + rng.below(255));
      REQUIRE(error_code_of([&] { quant::deserialize(c); }) == Errc::CrcMismatch);
    }
  }

  TEST_CASE("packaging is deterministic") {
    CHECK(quant::serialize(random_bundle(7, 5)) == quant::serialize(random_bundle(7, 5)));
  }
}
