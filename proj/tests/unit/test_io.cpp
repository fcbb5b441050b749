#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "common/test_support.hpp"
#include "json.hpp"
#include "sqnt/checkpoint.hpp"
#include "sqnt/config.hpp"
#include "sqnt/experiment.hpp"
#include "sqnt/reports.hpp"

using namespace sqnt;
using sqnt::testing::Gen;

namespace {

Network image_net(const std::string& arch, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.parse("arch = " + arch + "\ndepth = 3\nchannels = 3\n");
  return Network::build(build_specs(cfg, 1, 2), seed);
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sqnt_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Config, UnknownKeysAndBadValues) {
  ExperimentConfig cfg;
  EXPECT_THROW(cfg.set("dpeth", "3"), ConfigError);
  EXPECT_THROW(cfg.set("depth", "three"), ConfigError);
  EXPECT_THROW(cfg.set("depth", "3x"), ConfigError);
  EXPECT_THROW(cfg.parse("depth 3\n"), ConfigError);
  cfg.set("arch", "gcn_sym");
  EXPECT_THROW(cfg.validate(), ConfigError);  // graph arch on an image task
  cfg.set("task", "graph");
  cfg.set("data_kind", "sbm");
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, TextRoundTripAndHash) {
  ExperimentConfig a;
  a.parse("# a comment\narch = plain_mobile\n\ndepth = 4  # inline\nlr = 0.0125\ntv_enabled = true\n");
  EXPECT_EQ(a.arch, "plain_mobile");
  EXPECT_EQ(a.depth, 4);
  EXPECT_TRUE(a.tv_enabled);
  ExperimentConfig b;
  b.parse(a.to_text());
  EXPECT_EQ(b.to_text(), a.to_text());
  EXPECT_EQ(b.hash(), a.hash());
  b.set("seed", "99");
  EXPECT_NE(b.hash(), a.hash());
  const std::string text = a.to_text();
  EXPECT_EQ(ExperimentConfig::keys().size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST(Config, ScheduleTargetFollowsFinalWidths) {
  ExperimentConfig cfg;
  cfg.parse("bits_w = 6\nbits_a = 3\n");
  EXPECT_EQ(cfg.train.schedule.target, 3);
  cfg.parse("bits_a = 8\n");
  EXPECT_EQ(cfg.train.schedule.target, 6);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"desk_image.cfg", "desk_graph.cfg", "tv_sym.cfg"}) {
    const auto cfg = ExperimentConfig::from_file(std::string(SQNT_CONFIG_DIR) + "/" + name);
    EXPECT_NO_THROW(cfg.validate()) << name;
  }
  EXPECT_THROW(ExperimentConfig::from_file("/nonexistent/x.cfg"), std::exception);
}

TEST(Container, BitExactRoundTrip) {
  Gen g(20);
  RecordFile f;
  f.fingerprint = 0x1234567890abcdefULL;
  Tensor t = g.tensor({2, 3, 4});
  t[0] = -0.0;
  t[1] = std::numeric_limits<double>::denorm_min();
  f.put("w", t);
  f.put_ints("q", {3}, {-7, 0, 2147483647});
  f.put_text("cfg", "depth = 3\nname = \xc3\xa9\n");
  f.put_scalar("s", 0.1);
  const RecordFile back = RecordFile::deserialize(f.serialize());
  EXPECT_EQ(back.fingerprint, f.fingerprint);
  const Tensor b = back.tensor("w");
  ASSERT_EQ(b.shape(), t.shape());
  EXPECT_EQ(std::memcmp(b.values().data(), t.values().data(), sizeof(double) * static_cast<std::size_t>(t.numel())), 0);
  EXPECT_EQ(back.ints("q"), (std::vector<std::int32_t>{-7, 0, 2147483647}));
  EXPECT_EQ(back.text("cfg"), "depth = 3\nname = \xc3\xa9\n");
  EXPECT_EQ(back.scalar("s"), 0.1);
  EXPECT_THROW(back.tensor("missing"), FormatError);
  EXPECT_THROW(back.ints("w"), FormatError);
  EXPECT_THROW(back.scalar("w"), FormatError);
}

TEST(Container, SinglePrecisionStorageRounds) {
  RecordFile f;
  f.put("x", Tensor::from({2}, {0.1, 1.0 / 3.0}), DType::f32);
  const Tensor b = RecordFile::deserialize(f.serialize()).tensor("x");
  EXPECT_EQ(b[0], static_cast<double>(0.1f));
  EXPECT_EQ(b[1], static_cast<double>(1.0f / 3.0f));
}

TEST(Container, CorruptBytesRejected) {
  RecordFile f;
  f.put("x", Tensor({4}, 1.0));
  const std::string good = f.serialize();
  EXPECT_THROW(RecordFile::deserialize("JUNK" + good.substr(4)), FormatError);
  EXPECT_THROW(RecordFile::deserialize(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(RecordFile::deserialize(good + "x"), FormatError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(RecordFile::deserialize(bad_version), FormatError);
  EXPECT_THROW(RecordFile::deserialize(""), FormatError);
}

TEST(Container, SaveLoadFile) {
  RecordFile f;
  f.put("x", Tensor({2, 2}, 0.5));
  const auto path = scratch("c.sqnt").string();
  f.save(path);
  EXPECT_EQ(RecordFile::load(path).tensor("x"), f.tensor("x"));
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
}

TEST(Checkpoint, RoundTripReproducesForward) {
  Network net = image_net("sym_res", 5);
  Gen g(21);
  const Tensor x = g.tensor({2, 1, 8, 8});
  ForwardContext ctx;
  ctx.bits_w = ctx.bits_a = 4;
  const Tensor before = net.forward(Var::constant(x), ctx).value();
  const auto path = scratch("net.sqnt").string();
  save_checkpoint(net, path, {4, 4, DType::f64});
  LoadedCheckpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.meta.bits_w, 4);
  EXPECT_EQ(loaded.net.fingerprint(), net.fingerprint());
  EXPECT_EQ(loaded.net.forward(Var::constant(x), ctx).value(), before);
  EXPECT_TRUE(loaded.file.contains(net.kernels().front()->name() + ".wq"));
}

TEST(Checkpoint, FingerprintMismatchRefused) {
  Network sym = image_net("sym_res", 1), plain = image_net("plain_res", 1);
  const RecordFile ckpt = make_checkpoint(sym, {});
  EXPECT_THROW(load_parameters(plain, ckpt), FormatError);
  Network other = image_net("sym_res", 2);
  EXPECT_NO_THROW(load_parameters(other, ckpt));
}

TEST(Datasets, RecordsRoundTrip) {
  ImageDataParams p;
  p.count = 20;
  p.size = 8;
  const ImageDataset d = generate_images(p);
  const ImageDataset back = image_dataset_from_records(RecordFile::deserialize(image_dataset_records(d).serialize()));
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.classes, d.classes);

  SbmParams s;
  s.nodes = 40;
  const GraphDataset gd = generate_sbm(s);
  const GraphDataset gb = graph_dataset_from_records(graph_dataset_records(gd), gd.graph);
  EXPECT_EQ(gb.features, gd.features);
  EXPECT_EQ(gb.labels, gd.labels);
  EXPECT_EQ(gb.test_mask, gd.test_mask);
}

TEST(Reports, FormatsAndParses) {
  EXPECT_EQ(format_real(0.1), "0.1");
  EXPECT_EQ(std::stod(format_real(1.0 / 3.0)), 1.0 / 3.0);
  DivergenceReport r;
  r.layers = {{1, BlockKind::sym_res, 0.5}, {2, BlockKind::sym_res, 0.25}};
  const std::string csv = divergence_csv(r);
  EXPECT_EQ(csv, "layer,mse\n1,0.5\n2,0.25\n");
  const MseSeries s = parse_divergence_csv(csv, "run");
  EXPECT_EQ(s.layers, (std::vector<int>{1, 2}));
  EXPECT_EQ(s.mse, (std::vector<double>{0.5, 0.25}));
  EXPECT_EQ(comparison_csv(s, "a", s, "b"), "layer,nonsym,sym\n1,0.5,0.5\n2,0.25,0.25\n");
  EXPECT_EQ(growth_csv({1.0, 0.5}), "layer,norm\n0,1\n1,0.5\n");
}

TEST(Reports, ErrorsNameTheRun) {
  const MseSeries two = parse_divergence_csv("layer,mse\n1,0.5\n2,0.25\n", "a");
  const MseSeries one = parse_divergence_csv("layer,mse\n1,0.5\n", "b");
  try {
    comparison_csv(two, "nonsym.csv", one, "sym.csv");
    FAIL() << "expected ReportError";
  } catch (const ReportError& e) {
    EXPECT_NE(std::string(e.what()).find("nonsym.csv"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("sym.csv"), std::string::npos);
  }
  EXPECT_THROW(parse_divergence_csv("x,y\n", "r"), ReportError);
  EXPECT_THROW(parse_divergence_csv("layer,mse\n1\n", "r"), ReportError);
  EXPECT_THROW(parse_divergence_csv("layer,mse\n1,abc\n", "r"), ReportError);
}

TEST(Reports, ManifestJson) {
  Manifest m;
  m.command = "train";
  m.config_hash = 42;
  m.seed = 7;
  m.inputs["config"] = "a \"quoted\" path";
  m.outputs["checkpoint"] = "out.sqnt";
  const auto j = nlohmann::json::parse(manifest_json(m));
  EXPECT_EQ(j.at("command"), "train");
  EXPECT_EQ(j.at("seed"), 7);
  EXPECT_EQ(j.at("inputs").at("config"), "a \"quoted\" path");
  EXPECT_EQ(j.at("outputs").at("checkpoint"), "out.sqnt");
  EXPECT_EQ(j.at("config_hash"), "000000000000002a");
  EXPECT_EQ(j.at("versions").at("sqnt"), library_version());
  EXPECT_FALSE(j.contains("extra"));
}
