#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "firead/errors.hpp"
#include "gradcheck_suite.hpp"
#include "image.hpp"
#include "records.hpp"
#include "synth.hpp"
#include "train.hpp"

namespace firead::tools {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("firead_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "firead");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

TEST(Letterbox, WideImageRoundTrip) {
  const auto g = Letterbox::fit(640, 320, 640);
  EXPECT_EQ(g.scale, 1.0);
  EXPECT_EQ(g.pad_x, 0);
  EXPECT_EQ(g.pad_y, 160);
  const Box src{0.25, 0.5, 0.2, 0.4};
  const Box net = g.to_network(src);
  EXPECT_DOUBLE_EQ(net.cy, (0.5 * 320 + 160) / 640);
  EXPECT_DOUBLE_EQ(net.h, 0.4 * 320 / 640);
  const Box back = g.to_source(net);
  EXPECT_DOUBLE_EQ(back.cx, src.cx);
  EXPECT_DOUBLE_EQ(back.cy, src.cy);
  EXPECT_DOUBLE_EQ(back.w, src.w);
  EXPECT_DOUBLE_EQ(back.h, src.h);
}

TEST(Letterbox, PadsWithGray) {
  Image img{4, 2, std::vector<std::uint8_t>(24, 200)};
  const auto out = letterbox(img, Letterbox::fit(4, 2, 8));
  EXPECT_EQ(out.at(0, 0, 0), 114);
  EXPECT_EQ(out.at(3, 4, 1), 200);
  EXPECT_EQ(out.at(7, 7, 2), 114);
  const auto t = to_tensor<float>(out);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_FLOAT_EQ(t.at(0, 0, 0, 0), 114.0f / 255.0f);
}

TEST(Ppm, RoundTripAndErrors) {
  Image img{3, 2, {}};
  for (int i = 0; i < 18; ++i) img.rgb.push_back(static_cast<std::uint8_t>(i * 13));
  const auto bytes = encode_ppm(img);
  const auto back = decode_ppm(bytes);
  EXPECT_EQ(back.rgb, img.rgb);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(decode_ppm(std::vector<std::uint8_t>{'P', '6', '\n', '#', ' ', 'c', '\n', '1', ' ', '1', '\n', '2',
                                                 '5', '5', '\n', 1, 2, 3})
                .rgb.size(),
            3u);
  EXPECT_THROW(decode_ppm({'P', '3', '\n'}), FormatError);
  EXPECT_THROW(decode_ppm(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1)), FormatError);
  auto deep = bytes;
  deep[9] = '6';  // maxval 255 -> 655
  EXPECT_THROW(decode_ppm(deep), FormatError);
  EXPECT_THROW(read_ppm("/nonexistent/x.ppm"), IoError);
}

TEST(Records, RoundTripAndLineNumbers) {
  const Detection d{"img.ppm", 0, 0.75, {0.5, 0.25, 0.125, 0.0625}};
  const auto parsed = parse_detections(detection_line(d) + "\n\n" + detection_line(d) + "\n");
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[1].box, d.box);
  EXPECT_EQ(parsed[1].score, 0.75);
  const GroundTruthBox g{"img.ppm", 2, {0.5, 0.5, 0.1, 0.1}};
  EXPECT_EQ(parse_ground_truth(ground_truth_line(g))[0].class_id, 2);
  try {
    parse_detections(detection_line(d) + "\n{\"image\": \"x\"}\n", "dets.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("dets.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_ground_truth("{\"image\":\"a\",\"class_id\":0,\"box\":[0.5,0.5,-1,0.1]}"), FormatError);
}

TEST(Synth, DeterministicBoundedAndWarm) {
  SynthOptions opt;
  const auto a = generate_synth(opt), b = generate_synth(opt);
  ASSERT_EQ(a.size(), 8u);
  opt.seed = 8;
  const auto c = generate_synth(opt);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.rgb, b[i].image.rgb);
    EXPECT_GE(a[i].boxes.size(), 1u);
    EXPECT_LE(a[i].boxes.size(), 4u);
    for (const auto& box : a[i].boxes) {
      EXPECT_GT(box.box.area(), 0);
      EXPECT_GE(box.box.x1(), 0);
      EXPECT_LE(box.box.x2(), 1);
      EXPECT_GE(box.box.y1(), 0);
      EXPECT_LE(box.box.y2(), 1);
    }
    const auto [inside, outside] = red_contrast(a[i]);
    EXPECT_GT(inside, outside);
  }
  EXPECT_NE(a[0].image.rgb, c[0].image.rgb);

  TempDir dir;
  write_synth(a, dir.str());
  const auto back = read_synth(dir.str());
  ASSERT_EQ(back.size(), a.size());
  EXPECT_EQ(back[3].image.rgb, a[3].image.rgb);
  EXPECT_EQ(back[3].boxes.size(), a[3].boxes.size());
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  SynthOptions so;
  so.count = 2;
  so.size = 64;
  const auto samples = generate_synth(so);
  ModelConfig cfg = ModelConfig::toy();
  TrainOptions opt;
  opt.steps = 4;
  opt.optimizer.lr = 0;
  const auto r = train_toy(cfg, samples, opt);
  for (double l : r.losses) EXPECT_NEAR(l, r.losses.front(), 1e-6 * r.losses.front());
  opt.optimizer.lr = 0.01;
  const auto moved = train_toy(cfg, samples, opt);
  EXPECT_LT(moved.losses.back(), moved.losses.front());
  const auto again = train_toy(cfg, samples, opt);
  EXPECT_EQ(moved.losses, again.losses);
}

TEST(Gradcheck, PrimitiveAndBlockUnitsPass) {
  for (const char* scope : {"primitives", "blocks"})
    for (const auto& r : run_gradcheck(scope, 3)) EXPECT_TRUE(r.passed) << r.name << " " << r.max_relative_error;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"infer"}).code, kExitUsage);
  EXPECT_EQ(cli({"profile", "--threads", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"profile", "--variant", "huge"}).code, kExitConfig);
  EXPECT_EQ(cli({"profile", "--config", "/nonexistent.json"}).code, kExitIo);
  EXPECT_EQ(cli({"infer", "/nonexistent.ppm"}).code, kExitIo);
  EXPECT_EQ(cli({"profile", "--help"}).code, kExitOk);
  TempDir dir;
  write_text(dir / "bad.json", "{\"width_multiple\": -1}");
  const auto r = cli({"profile", "--config", dir / "bad.json"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("width_multiple"), std::string::npos);
}

TEST(Cli, GradcheckFaultInjectionFails) {
  const auto good = cli({"gradcheck", "--scope", "primitives"});
  EXPECT_EQ(good.code, kExitOk) << good.out;
  const auto bad = cli({"gradcheck", "--scope", "primitives", "--inject-backward-fault"});
  EXPECT_EQ(bad.code, kExitCheck);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_FALSE(detail::backward_fault());
}

TEST(Cli, CommandsAreByteReproducible) {
  TempDir dir;
  ASSERT_EQ(cli({"synth", "--count", "3", "--size", "96", "--out", dir / "a"}).code, kExitOk);
  ASSERT_EQ(cli({"synth", "--count", "3", "--size", "96", "--out", dir / "b"}).code, kExitOk);
  for (const char* f : {"gt.jsonl", "synth_000.ppm", "synth_002.ppm"})
    EXPECT_EQ(read_file(dir / (std::string("a/") + f)), read_file(dir / (std::string("b/") + f))) << f;

  const std::vector<std::string> infer{"infer", dir / "a/synth_000.ppm", dir / "a/synth_001.ppm",
                                       "--config", dir / "toy.json", "--score", "0.01"};
  write_text(dir / "toy.json", "{\"input_size\": 64, \"width_multiple\": 0.125, "
                               "\"blocks_per_stage\": [1, 1, 1, 0], \"head_channels\": 16}");
  const auto one = cli(infer);
  ASSERT_EQ(one.code, kExitOk) << one.err;
  EXPECT_FALSE(one.out.empty());
  auto threaded = infer;
  threaded.insert(threaded.end(), {"--threads", "2"});
  EXPECT_EQ(cli(threaded).out, one.out);
  EXPECT_EQ(cli(infer).out, one.out);
  EXPECT_NE(one.out.find("\"image\":\"synth_001.ppm\""), std::string::npos);

  const auto t1 = cli({"train-toy", "--data", dir / "a", "--steps", "3", "--config", dir / "toy.json", "--out",
                       dir / "w1.bin"});
  const auto t2 = cli({"train-toy", "--data", dir / "a", "--steps", "3", "--config", dir / "toy.json", "--out",
                       dir / "w2.bin"});
  ASSERT_EQ(t1.code, kExitOk) << t1.err;
  EXPECT_EQ(read_file(dir / "w1.bin"), read_file(dir / "w2.bin"));

  auto with_weights = infer;
  with_weights.insert(with_weights.end(), {"--weights", dir / "w1.bin"});
  EXPECT_EQ(cli(with_weights).out, cli(with_weights).out);

  write_text(dir / "det.jsonl", one.out);
  const auto e1 = cli({"eval", "--detections", dir / "det.jsonl", "--gt", dir / "a/gt.jsonl"});
  EXPECT_EQ(e1.code, kExitOk);
  EXPECT_EQ(cli({"eval", "--detections", dir / "det.jsonl", "--gt", dir / "a/gt.jsonl"}).out, e1.out);
  EXPECT_EQ(cli({"profile", "--variant", "air", "--records"}).out, cli({"profile", "--variant", "air", "--records"}).out);
}

TEST(Cli, BlackImageGivesNoDetections) {
  TempDir dir;
  write_ppm(dir / "black.ppm", Image{640, 640, std::vector<std::uint8_t>(640 * 640 * 3, 0)});
  const auto r = cli({"infer", dir / "black.ppm", "--score", "0.99"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(r.out.empty()) << r.out;
}

}  // namespace
}  // namespace firead::tools
