#include <gtest/gtest.h>

#include <cmath>

#include "firead/errors.hpp"
#include "firead/model.hpp"
#include "firead/profiler.hpp"
#include "firead/weights.hpp"
#include "fuzz.hpp"

namespace firead {
namespace {

std::string config_error_field(const std::string& text) {
  try {
    parse_model_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

TEST(ModelConfig, ParseRoundTripAndErrors) {
  ModelConfig c = ModelConfig::toy();
  c.use_dpdf = false;
  c.score_threshold = 0.4;
  EXPECT_EQ(parse_model_config(model_config_to_text(c)), c);
  EXPECT_EQ(parse_model_config("{\"use_air\": false}").use_air, false);

  EXPECT_EQ(config_error_field("{\"colour\": 1}"), "colour");
  EXPECT_EQ(config_error_field("{\"num_classes\": \"one\"}"), "num_classes");
  EXPECT_EQ(config_error_field("{\"num_classes\": 0}"), "num_classes");
  EXPECT_EQ(config_error_field("{\"input_size\": 100}"), "input_size");
  EXPECT_EQ(config_error_field("{\"width_multiple\": 0.1}"), "width_multiple");
  EXPECT_EQ(config_error_field("{\"blocks_per_stage\": [1, -1, 1, 1]}"), "blocks_per_stage");
  EXPECT_EQ(config_error_field("{\"input_size\": 32}"), "blocks_per_stage");
  EXPECT_EQ(config_error_field("[1, 2]"), "<document>");
  EXPECT_EQ(config_error_field("{"), "<document>");
}

TEST(ModelConfig, Variants) {
  EXPECT_EQ(parse_variant("dpdf"), Variant::dpdf);
  EXPECT_THROW(parse_variant("tiny"), ConfigError);
  const auto full = ModelConfig::preset(Variant::full);
  EXPECT_TRUE(full.use_air && full.use_dpdf);
  EXPECT_EQ(full.widths(), (std::array<std::int64_t, 5>{16, 32, 64, 128, 256}));
}

TEST(Model, ForwardShapesAllVariants) {
  for (Variant v : {Variant::baseline, Variant::air, Variant::dpdf, Variant::full}) {
    ModelConfig c = ModelConfig::toy();
    c.use_air = v == Variant::air || v == Variant::full;
    c.use_dpdf = v == Variant::dpdf || v == Variant::full;
    c.num_classes = 3;
    Rng rng(1);
    const auto m = Model<double>::build(c, rng);
    auto x = Tensor<double>::uniform({2, 3, 64, 64}, 0, 1, rng);
    const auto maps = m.forward(x, Mode::infer);
    for (int s = 0; s < 3; ++s) {
      const std::int64_t side = 64 / ModelConfig::kStrides[static_cast<std::size_t>(s)];
      EXPECT_EQ(maps[static_cast<std::size_t>(s)].shape(), (Shape{2, 7, side, side})) << variant_name(v);
    }
    EXPECT_THROW(m.forward(Tensor<double>::zeros({1, 3, 48, 48}), Mode::infer), ContractError);
  }
}

TEST(Model, BuildIsSeedDeterministic) {
  Rng a(5), b(5), c(6);
  const auto cfg = ModelConfig::toy();
  const auto ma = Model<float>::build(cfg, a), mb = Model<float>::build(cfg, b), mc = Model<float>::build(cfg, c);
  EXPECT_EQ(save_weights(ma), save_weights(mb));
  EXPECT_NE(save_weights(ma), save_weights(mc));
}

TEST(Profiler, EfficiencyTargetsAt640) {
  struct Row {
    Variant v;
    double params, gflops, ptol;
  };
  const Row rows[] = {{Variant::baseline, 3.01e6, 8.1, 0.05},
                      {Variant::air, 1.84e6, 5.4, 0.10},
                      {Variant::dpdf, 2.52e6, 6.9, 0.10},
                      {Variant::full, 1.45e6, 4.6, 0.10}};
  const auto report = ablation_report(ModelConfig{}, 640);
  ASSERT_EQ(report.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& r = report[i].report;
    EXPECT_EQ(report[i].variant, rows[i].v);
    EXPECT_NEAR(static_cast<double>(r.params) / rows[i].params, 1.0, rows[i].ptol) << variant_name(rows[i].v);
    EXPECT_NEAR(r.gflops / rows[i].gflops, 1.0, 0.10) << variant_name(rows[i].v);
    EXPECT_DOUBLE_EQ(r.gflops, 2.0 * static_cast<double>(r.macs) / 1e9);
  }
  EXPECT_LT(report[3].report.params, report[1].report.params);
  EXPECT_LT(report[3].report.params, report[2].report.params);
  EXPECT_LT(report[1].report.params, report[0].report.params);
  EXPECT_LT(report[2].report.params, report[0].report.params);
}

TEST(Profiler, MacsScaleQuadraticallyForConvOnlyGraph) {
  Rng rng(1);
  const auto base = Model<float>::build(ModelConfig::preset(Variant::baseline), rng);
  EXPECT_EQ(4 * count_macs(base, 320), count_macs(base, 640));
  // Global pooling inside the gates adds a size-independent term.
  const auto full = Model<float>::build(ModelConfig::preset(Variant::full), rng);
  const double ratio = static_cast<double>(count_macs(full, 640)) / static_cast<double>(count_macs(full, 320));
  EXPECT_NEAR(ratio, 4.0, 0.02);
  EXPECT_THROW(count_macs(full, 300), ContractError);
}

TEST(Profiler, ParamsMatchArchiveContents) {
  Rng rng(2);
  const auto m = Model<float>::build(ModelConfig::preset(Variant::full), rng);
  const auto report = profile(m, 640);
  std::int64_t trainable = 0, buffers = 0;
  for (const auto& info : inspect_archive(save_weights(m))) {
    const bool buffer = info.name.find("running_") != std::string::npos;
    (buffer ? buffers : trainable) += static_cast<std::int64_t>(info.elements);
  }
  EXPECT_EQ(trainable, report.params);
  EXPECT_EQ(trainable, count_params(m));
  EXPECT_EQ(buffers, report.buffer_elements);
  EXPECT_EQ(report.archive_bytes_f32, save_weights(m).size());
  EXPECT_EQ(report.archive_bytes_f16, save_weights(m, Dtype::f16).size());
  std::int64_t rows = 0;
  for (const auto& r : report.rows) rows += r.params;
  EXPECT_EQ(rows, report.params);
  EXPECT_EQ(layer_of("backbone.stage2.air1.attn.qkv.weight"), "backbone.stage2.air1");
}

TEST(Weights, SaveLoadSaveIsByteIdentical) {
  Rng a(3), b(4);
  const auto cfg = ModelConfig::toy();
  const auto src = Model<float>::build(cfg, a);
  auto dst = Model<float>::build(cfg, b);
  for (Dtype d : {Dtype::f32, Dtype::f16}) {
    const auto bytes = save_weights(src, d);
    load_weights(std::span<const std::uint8_t>(bytes), dst);
    EXPECT_EQ(save_weights(dst, d), bytes);
  }
  load_weights(std::span<const std::uint8_t>(save_weights(src)), dst);
  EXPECT_EQ(save_weights(dst), save_weights(src));
}

TEST(Weights, CorruptionIsRejectedWithoutSideEffects) {
  Rng a(5), b(6);
  const auto cfg = ModelConfig::toy();
  const auto src = Model<float>::build(cfg, a);
  auto dst = Model<float>::build(cfg, b);
  const auto before = save_weights(dst);
  const auto good = save_weights(src);
  auto expect_rejected = [&](std::vector<std::uint8_t> bytes) {
    EXPECT_THROW(load_weights(std::span<const std::uint8_t>(bytes), dst), FormatError);
    EXPECT_EQ(save_weights(dst), before);
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect_rejected(bad_magic);
  auto bad_version = good;
  bad_version[4] = 9;
  expect_rejected(bad_version);
  expect_rejected(std::vector<std::uint8_t>(good.begin(), good.end() - 3));
  auto trailing = good;
  trailing.push_back(0);
  expect_rejected(trailing);
  auto renamed = good;
  renamed[12 + 2] ^= 0x20;  // first character of the first name
  expect_rejected(renamed);
  ModelConfig other = cfg;
  other.head_channels = 8;
  Rng c(7);
  expect_rejected(save_weights(Model<float>::build(other, c)));
}

TEST(Weights, HalfPrecisionConversion) {
  EXPECT_EQ(float_to_half(1.0f), 0x3c00);
  EXPECT_EQ(float_to_half(-2.0f), 0xc000);
  EXPECT_EQ(float_to_half(65504.0f), 0x7bff);
  EXPECT_EQ(float_to_half(1e6f), 0x7c00);
  EXPECT_EQ(half_to_float(0x3555), 0.333251953125f);
  EXPECT_EQ(half_to_float(0x0001), std::ldexp(1.0f, -24));
  for (std::uint32_t bits = 0; bits < 0x7c00; ++bits)
    ASSERT_EQ(float_to_half(half_to_float(static_cast<std::uint16_t>(bits))), bits);
}

TEST(Decode, LtrbAroundCellCenter) {
  ModelConfig c = ModelConfig::toy();
  std::array<Tensor<double>, 3> maps;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::int64_t side = 64 / ModelConfig::kStrides[s];
    maps[s] = Tensor<double>::constant({1, 5, side, side}, -20);
  }
  // Stride 8 cell (row 2, col 3): center (28, 20) px.
  const double sp = std::log(std::expm1(1.0));  // softplus(sp) == 1
  auto d = maps[0].mutable_data();
  const std::int64_t plane = 64, cell = 2 * 8 + 3;
  d[static_cast<std::size_t>(0 * plane + cell)] = sp;
  d[static_cast<std::size_t>(1 * plane + cell)] = sp;
  d[static_cast<std::size_t>(2 * plane + cell)] = sp;
  d[static_cast<std::size_t>(3 * plane + cell)] = sp;
  d[static_cast<std::size_t>(4 * plane + cell)] = 3;
  const auto dets = decode<double>(maps, c);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].score, 1 / (1 + std::exp(-3.0)), 1e-12);
  EXPECT_NEAR(dets[0].box.cx, 28.0 / 64, 1e-9);
  EXPECT_NEAR(dets[0].box.cy, 20.0 / 64, 1e-9);
  EXPECT_NEAR(dets[0].box.w, 16.0 / 64, 1e-9);
  EXPECT_NEAR(dets[0].box.h, 16.0 / 64, 1e-9);
  EXPECT_TRUE(decode<double>(maps, 0.99).empty());
}

TEST(Nms, MatchesQuadraticReference) {
  const auto s = oracle::fuzz_nms(21, 50);
  EXPECT_TRUE(s.ok()) << s.first_failure;
}

TEST(Nms, TieBreaksAndClasses) {
  std::vector<Detection> d{{"i", 1, 0.9, {0.5, 0.5, 0.2, 0.2}},
                           {"i", 0, 0.9, {0.5, 0.5, 0.2, 0.2}},
                           {"i", 0, 0.8, {0.51, 0.5, 0.2, 0.2}},
                           {"i", 0, 0.7, {0.9, 0.9, 0.1, 0.1}}};
  const auto keep = nms(d, 0.5);
  ASSERT_EQ(keep.size(), 3u);
  EXPECT_EQ(keep[0].class_id, 0);
  EXPECT_EQ(keep[1].class_id, 1);
  EXPECT_EQ(keep[2].score, 0.7);
}

}  // namespace
}  // namespace firead
