#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ldif/harness/analysis.hpp"
#include "ldif/harness/checkpoint.hpp"
#include "ldif/harness/dataset.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/harness/run_config.hpp"
#include "ldif/harness/trainer.hpp"

namespace {

using namespace ldif;
using T = double;

// Fresh empty directory per test.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("ldif_test_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

RunConfig small_run(ConditioningMode mode, Setting setting) {
  RunConfig c;
  c.model.mode = mode;
  c.model.setting = setting;
  c.model.seed = 3;
  c.model.unet.resolution = 8;
  c.model.unet.base_channels = 8;
  c.model.unet.channel_mult = {1, 2};
  c.model.unet.attention_levels = {1};
  c.model.unet.groups = 4;
  c.model.embed = {16, 16, 3, 0};
  c.model.lora.mlp = {8, 8, 1, false};
  c.model.lora.bases = 5;
  if (setting == Setting::Discrete) c.model.steps = 21;
  c.data = "synthetic:gauss_mix:k=3,std=0.3";
  c.train.iterations = 3;
  c.train.batch_size = 4;
  c.sampler.steps = 4;
  c.sample_count = 4;
  c.analysis.grid = 8;
  return c;
}

std::string be32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (24 - 8 * i)) & 0xff);
  return s;
}

std::string idx_images(std::uint32_t n, std::uint32_t r, std::uint32_t c, std::uint8_t fill = 0) {
  return be32(0x803) + be32(n) + be32(r) + be32(c) + std::string(n * r * c, static_cast<char>(fill));
}

std::string idx_labels(const std::vector<std::uint8_t>& l) {
  return be32(0x801) + be32(static_cast<std::uint32_t>(l.size())) + std::string(l.begin(), l.end());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

TEST(RunConfig, DefaultsRoundTripThroughText) {
  const RunConfig d;
  const std::string text = to_text(d);
  EXPECT_EQ(to_text(parse_run_config(text)), text);
  EXPECT_EQ(run_config_keys().size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST(RunConfig, ModifiedValuesRoundTrip) {
  RunConfig c = small_run(ConditioningMode::WithLoRA, Setting::Discrete);
  c.precision = Precision::F32;
  c.train.lr = 0.1 + 0.2;
  c.model.lora.projections = {true, false, true, false};
  c.model.lora.init = TableInit::Random;
  c.sampler.kind = SamplerKind::Ancestral;
  const RunConfig back = parse_run_config(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.model.unet.channel_mult, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(back.model.lora.projections, c.model.lora.projections);
}

TEST(RunConfig, CommentsAndBlankLinesIgnored) {
  const auto c = parse_run_config("# header\n\nmode = only_lora   # trailing\n  train.lr=0.5\n");
  EXPECT_EQ(c.model.mode, ConditioningMode::OnlyLoRA);
  EXPECT_EQ(c.train.lr, 0.5);
}

TEST(RunConfig, ErrorsNameTheLine) {
  try {
    parse_run_config("mode = baseline\nbogus.key = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("bogus.key"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config("mode baseline\n"), ConfigError);
  EXPECT_THROW(parse_run_config("train.lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_run_config("train.lr = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("unet.mid_attention = maybe\n"), ConfigError);
  EXPECT_THROW(parse_run_config("lora.projections = q,x\n"), ConfigError);
  EXPECT_THROW(parse_run_config("precision = f16\n"), ConfigError);
  EXPECT_THROW(parse_run_config("sampler.steps = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("train.ema_decay = 1\n"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(RunConfig, ReferenceFileParsesToDefaults) {
  const fs::path ref = fs::path(LDIF_SOURCE_DIR) / "configs" / "reference.cfg";
  ASSERT_TRUE(fs::exists(ref));
  EXPECT_EQ(to_text(load_run_config(ref)), to_text(RunConfig{}));
}

TEST(Idx, ParsesHeaderAndPixels) {
  std::string b = idx_images(2, 3, 4);
  b[16] = static_cast<char>(255);
  const auto im = parse_idx_images(b);
  EXPECT_EQ(im.count, 2u);
  EXPECT_EQ(im.rows, 3u);
  EXPECT_EQ(im.cols, 4u);
  ASSERT_EQ(im.pixels.size(), 24u);
  EXPECT_EQ(im.pixels[0], 255);
  EXPECT_EQ(parse_idx_labels(idx_labels({1, 7, 9})), (std::vector<std::uint8_t>{1, 7, 9}));
}

TEST(Idx, RejectsMalformedFiles) {
  EXPECT_THROW(parse_idx_images("\x00\x00"), DataError);
  std::string bad = idx_images(1, 2, 2);
  bad[3] = 0x01;
  EXPECT_THROW(parse_idx_images(bad), DataError);
  std::string trunc = idx_images(2, 2, 2);
  trunc.pop_back();
  EXPECT_THROW(parse_idx_images(trunc), DataError);
  EXPECT_THROW(parse_idx_images(idx_images(0, 2, 2)), DataError);
  EXPECT_THROW(parse_idx_labels(idx_images(1, 1, 1)), DataError);
  std::string ltrunc = idx_labels({1, 2});
  ltrunc.pop_back();
  EXPECT_THROW(parse_idx_labels(ltrunc), DataError);
}

TEST(Idx, SourceChecksLabelsAgainstImages) {
  TempDir tmp;
  const auto img = tmp.path() / "img", lab = tmp.path() / "lab", lab2 = tmp.path() / "lab2", lab3 = tmp.path() / "lab3";
  write_text(img, idx_images(3, 8, 8, 255));
  write_text(lab, idx_labels({0, 4, 9}));
  write_text(lab2, idx_labels({0, 4}));
  write_text(lab3, idx_labels({0, 4, 10}));
  IdxSource<T> src(img, lab);
  EXPECT_EQ(src.size(), 3u);
  EXPECT_EQ(src.num_classes(), 10u);
  EXPECT_EQ(src.image_shape(), (Shape{1, 8, 8}));
  SeededRng rng(1);
  const auto b = src.batch(rng, 5);
  for (T v : b.x0.data()) EXPECT_EQ(v, 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    T row = 0;
    for (std::size_t k = 0; k < 10; ++k) row += b.class_vec.at(i, k);
    EXPECT_EQ(row, 1.0);
  }
  EXPECT_THROW(IdxSource<T>(img, lab2), DataError);
  EXPECT_THROW(IdxSource<T>(img, lab3), DataError);
  EXPECT_THROW(open_dataset<T>("idx:" + (tmp.path() / "missing").string()), DataError);
  EXPECT_EQ(open_dataset<T>("idx:" + img.string(), 8)->num_classes(), 0u);
}

TEST(Idx, PixelNormalizationEndpoints) {
  EXPECT_EQ(normalize_pixel<T>(0), -1.0);
  EXPECT_EQ(normalize_pixel<T>(255), 1.0);
  EXPECT_NEAR(normalize_pixel<T>(128), 0.5 / 127.5, 1e-15);
}

TEST(GaussMix, SingleComponentHasConfiguredStd) {
  auto src = open_dataset<T>("synthetic:gauss_mix:k=1,std=0.4,dim=10");
  EXPECT_EQ(src->image_shape(), (Shape{1, 1, 10}));
  SeededRng rng(2);
  const auto b = src->batch(rng, 10000);
  double m = 0.0, q = 0.0;
  for (T v : b.x0.data()) m += v;
  m /= static_cast<double>(b.x0.size());
  for (T v : b.x0.data()) q += (v - m) * (v - m);
  const double s = std::sqrt(q / static_cast<double>(b.x0.size()));
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(s, 0.4, 0.02 * 0.4);
}

TEST(GaussMix, MeansEvenlySpacedAndLabelsMatch) {
  GaussMixSource<T> src(3, 0.0, {1, 1, 2});
  EXPECT_EQ(src.means(), (std::vector<double>{-0.5, 0.0, 0.5}));
  SeededRng rng(3);
  const auto b = src.batch(rng, 30);
  for (std::size_t i = 0; i < 30; ++i) {
    std::size_t j = 0;
    while (b.class_vec.at(i, j) == 0.0) ++j;
    EXPECT_EQ(b.x0[2 * i], src.means()[j]);
  }
  EXPECT_THROW(open_dataset<T>("synthetic:gauss_mix:k=x"), ConfigError);
  EXPECT_THROW(open_dataset<T>("synthetic:gauss_mix:q=1"), ConfigError);
  EXPECT_THROW(open_dataset<T>("synthetic:nothing"), ConfigError);
}

TEST(Shapes, BatchesAreLabelledGlyphsInRange) {
  auto src = open_dataset<T>("synthetic:shapes", 16);
  EXPECT_EQ(src->num_classes(), 10u);
  SeededRng r1(4), r2(4);
  const auto a = src->batch(r1, 50);
  EXPECT_EQ(a.x0, src->batch(r2, 50).x0);
  std::vector<int> kinds(10, 0);
  for (std::size_t i = 0; i < 50; ++i) {
    std::size_t on = 0;
    for (std::size_t p = 0; p < 256; ++p) {
      const T v = a.x0[i * 256 + p];
      EXPECT_TRUE(v == -1.0 || v == 1.0);
      on += v > 0;
    }
    EXPECT_GT(on, 0u) << i;
    EXPECT_LT(on, 256u) << i;
    for (std::size_t k = 0; k < 10; ++k) kinds[k] += a.class_vec.at(i, k) > 0;
  }
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), 0), 0);
  EXPECT_THROW(ShapesSource<T>(4), ConfigError);
}

TEST(Shapes, ClassesAreDistinguishable) {
  ShapesSource<T> src(28);
  SeededRng rng(5);
  const auto b = src.batch(rng, 400);
  std::vector<std::vector<double>> mean(10, std::vector<double>(784, 0.0));
  std::vector<int> n(10, 0);
  for (std::size_t i = 0; i < 400; ++i) {
    std::size_t k = 0;
    while (b.class_vec.at(i, k) == 0.0) ++k;
    ++n[k];
    for (std::size_t p = 0; p < 784; ++p) mean[k][p] += b.x0[i * 784 + p];
  }
  for (std::size_t a = 0; a < 10; ++a) {
    for (std::size_t c = a + 1; c < 10; ++c) {
      double d = 0.0;
      for (std::size_t p = 0; p < 784; ++p) d += std::abs(mean[a][p] / n[a] - mean[c][p] / n[c]);
      EXPECT_GT(d, 20.0) << a << " vs " << c;
    }
  }
}

template <class U>
void expect_roundtrip() {
  auto cfg = small_run(ConditioningMode::WithLoRA, Setting::Continuous).model;
  NanoUNet<U> net(cfg);
  Ema<U> ema(net.params(), 0.5);
  for (auto& v : ema.values()) {
    for (auto& x : v.data()) x = x * U(0.5) + U(0.125);
  }
  const std::string bytes = encode_checkpoint("mode = with_lora\n", 17, net.params(), &ema);
  const Checkpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.config_text, "mode = with_lora\n");
  EXPECT_EQ(ck.iteration, 17u);
  ASSERT_NE(ck.find("raw"), nullptr);
  ASSERT_NE(ck.find("ema"), nullptr);
  NanoUNet<U> other(cfg);
  for (auto& p : other.params().params()) p->value.fill(U(7));
  load_set(ck, "raw", other.params());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    EXPECT_EQ(other.params().params()[i]->value, net.params().params()[i]->value);
  }
  load_set(ck, "ema", other.params());
  for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(other.params().params()[i]->value, ema.values()[i]);
  EXPECT_EQ(encode_checkpoint("mode = with_lora\n", 17, net.params(), &ema), bytes);
}

TEST(Checkpoint, BitwiseRoundTripDouble) { expect_roundtrip<double>(); }
TEST(Checkpoint, BitwiseRoundTripFloat) { expect_roundtrip<float>(); }

TEST(Checkpoint, RejectsCorruptInput) {
  auto cfg = small_run(ConditioningMode::Baseline, Setting::Continuous).model;
  NanoUNet<T> net(cfg);
  const std::string bytes = encode_checkpoint("x", 0, net.params());
  EXPECT_THROW(decode_checkpoint(""), DataError);
  EXPECT_THROW(decode_checkpoint("LDIX" + bytes.substr(4)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), DataError);
  std::string ver = bytes;
  ver[4] = 99;
  EXPECT_THROW(decode_checkpoint(ver), DataError);
  const Checkpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.find("ema"), nullptr);
  EXPECT_THROW(load_set(ck, "ema", net.params()), DataError);
  NanoUNet<T> other(small_run(ConditioningMode::OnlyLoRA, Setting::Continuous).model);
  EXPECT_THROW(load_set(ck, "raw", other.params()), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.ldif"), DataError);
}

TEST(Checkpoint, FloatBlobsLoadIntoDoubleModel) {
  auto cfg = small_run(ConditioningMode::Baseline, Setting::Continuous).model;
  NanoUNet<float> f(cfg);
  NanoUNet<double> d(cfg);
  load_set(decode_checkpoint(encode_checkpoint("", 0, f.params())), "raw", d.params());
  for (std::size_t i = 0; i < f.params().size(); ++i) {
    const auto& a = f.params().params()[i]->value;
    const auto& b = d.params().params()[i]->value;
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(static_cast<double>(a[j]), b[j]);
  }
}

TEST(Pixels, MappingAndRounding) {
  EXPECT_EQ(to_pixel(-1.0), 0);
  EXPECT_EQ(to_pixel(1.0), 255);
  EXPECT_EQ(to_pixel(-5.0), 0);
  EXPECT_EQ(to_pixel(5.0), 255);
  EXPECT_EQ(to_pixel(0.0), 128);  // 127.5 rounds away from zero
  EXPECT_EQ(to_pixel(-0.5), 64);  // 63.75
  EXPECT_EQ(to_pixel(-1.0 + 0.49 / 127.5), 0);
}

TEST(Pixels, GridOf64DigitsIs224Square) {
  Tensor<T> im({64, 1, 28, 28});
  im.fill(-1.0);
  for (std::size_t p = 0; p < 784; ++p) im[63 * 784 + p] = 1.0;
  const std::string pgm = encode_image_grid(im, 8);
  const std::string header = "P5\n224 224\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  ASSERT_EQ(pgm.size(), header.size() + 224 * 224);
  auto px = [&](std::size_t y, std::size_t x) { return static_cast<unsigned char>(pgm[header.size() + y * 224 + x]); };
  EXPECT_EQ(px(0, 0), 0);
  EXPECT_EQ(px(223, 223), 255);
  EXPECT_EQ(px(196, 196), 255);
  EXPECT_EQ(px(195, 196), 0);
}

TEST(Pixels, ColorGridIsPpmAndPartialRowsPadded) {
  Tensor<T> im({3, 3, 2, 2});
  im.fill(1.0);
  const std::string ppm = encode_image_grid(im, 2);
  const std::string header = "P6\n4 4\n255\n";
  ASSERT_EQ(ppm.substr(0, header.size()), header);
  EXPECT_EQ(ppm.size(), header.size() + 4 * 4 * 3);
  EXPECT_EQ(static_cast<unsigned char>(ppm.back()), 0);
  EXPECT_THROW(encode_image_grid(Tensor<T>({1, 2, 2, 2}), 1), ShapeError);
  EXPECT_THROW(encode_image_grid(Tensor<T>({1, 1, 2, 2}), 0), ConfigError);
}

TEST(Io, AtomicWriteReplacesWholeFile) {
  TempDir tmp;
  const auto p = tmp.path() / "sub" / "f.txt";
  write_file_atomic(p, "first version, long");
  write_file_atomic(p, "second");
  EXPECT_EQ(read_file(p), "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(p.parent_path())) ++files;
  EXPECT_EQ(files, 1u);
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(Metrics, CsvFormat) {
  const std::string s = metrics_csv({{1, 0.5, 0.25, 1e-4, 2.0}});
  EXPECT_EQ(s, "iteration,wall_seconds,loss,lr,grad_norm\n1,0.5,0.25,0.0001,2\n");
}

TEST(Trainer, ZeroIterationsWritesInitialWeights) {
  TempDir tmp;
  auto cfg = small_run(ConditioningMode::WithLoRA, Setting::Continuous);
  cfg.train.iterations = 0;
  auto data = open_dataset<T>(cfg.data, 8);
  NanoUNet<T> net(cfg.model);
  const auto s = train_run(cfg, net, *data, tmp.path());
  NanoUNet<T> fresh(cfg.model), loaded(cfg.model);
  const Checkpoint ck = load_checkpoint(s.checkpoint);
  EXPECT_EQ(ck.iteration, 0u);
  load_set(ck, "raw", loaded.params());
  for (std::size_t i = 0; i < fresh.params().size(); ++i) {
    EXPECT_EQ(loaded.params().params()[i]->value, fresh.params().params()[i]->value);
  }
  load_set(ck, "ema", loaded.params());
  EXPECT_EQ(loaded.params().params()[0]->value, fresh.params().params()[0]->value);
  EXPECT_EQ(read_file(s.metrics), "iteration,wall_seconds,loss,lr,grad_norm\n");
  EXPECT_EQ(to_text(load_run_config(tmp.path() / "config.cfg")), to_text(cfg));
  EXPECT_FALSE(fs::exists(tmp.path() / ".lock"));
}

std::vector<std::string> metrics_without_wall(const fs::path& p) {
  std::vector<std::string> rows;
  std::istringstream in(read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    rows.push_back(line.substr(0, a) + line.substr(b));
  }
  return rows;
}

class TrainerPerSetting : public ::testing::TestWithParam<Setting> {};

TEST_P(TrainerPerSetting, SameSeedSameMetricsAndWeights) {
  TempDir tmp;
  auto cfg = small_run(ConditioningMode::WithLoRA, GetParam());
  cfg.train.checkpoint_every = 2;
  auto data = open_dataset<T>(cfg.data, 8);
  NanoUNet<T> n1(cfg.model), n2(cfg.model);
  const auto s1 = train_run(cfg, n1, *data, tmp.path() / "a");
  const auto s2 = train_run(cfg, n2, *data, tmp.path() / "b");
  EXPECT_EQ(metrics_without_wall(s1.metrics), metrics_without_wall(s2.metrics));
  EXPECT_EQ(metrics_without_wall(s1.metrics).size(), 4u);
  EXPECT_TRUE(fs::exists(tmp.path() / "a" / "ckpt_2.ldif"));
  const auto c1 = load_checkpoint(s1.checkpoint), c2 = load_checkpoint(s2.checkpoint);
  EXPECT_EQ(c1.iteration, 3u);
  ASSERT_EQ(c1.sets.size(), c2.sets.size());
  for (std::size_t s = 0; s < c1.sets.size(); ++s) {
    for (std::size_t i = 0; i < c1.sets[s].tensors.size(); ++i) {
      EXPECT_EQ(c1.sets[s].tensors[i].payload, c2.sets[s].tensors[i].payload);
    }
  }
  NanoUNet<T> fresh(cfg.model);
  EXPECT_NE(n1.params().params()[0]->value, fresh.params().params()[0]->value);

  auto other = cfg;
  other.model.seed = 4;
  NanoUNet<T> n3(other.model);
  const auto s3 = train_run(other, n3, *data, tmp.path() / "c");
  EXPECT_NE(metrics_without_wall(s1.metrics), metrics_without_wall(s3.metrics));
}

INSTANTIATE_TEST_SUITE_P(Settings, TrainerPerSetting, ::testing::Values(Setting::Discrete, Setting::Continuous),
                         [](const auto& info) { return info.param == Setting::Discrete ? "Discrete" : "Continuous"; });

TEST(Trainer, RejectsMismatchedData) {
  auto cfg = small_run(ConditioningMode::Baseline, Setting::Continuous);
  NanoUNet<T> net(cfg.model);
  auto wrong_shape = open_dataset<T>("synthetic:shapes", 16);
  EXPECT_THROW(Trainer<T>(cfg, net, *wrong_shape), DataError);
  auto wrong_classes = open_dataset<T>("synthetic:gauss_mix:k=5", 8);
  EXPECT_THROW(Trainer<T>(cfg, net, *wrong_classes), ConfigError);
}

TEST(Trainer, AdamFirstStepMovesBySignTimesLr) {
  ParamStore<T> store;
  auto p = store.create("w", Tensor<T>({3}, {1.0, 1.0, 1.0}));
  p->grad = Tensor<T>({3}, {2.0, -0.5, 0.0});
  Adam<T> adam(store, 0.1, 0.9, 0.999, 1e-8);
  adam.step(store);
  EXPECT_NEAR(p->value[0], 0.9, 1e-7);
  EXPECT_NEAR(p->value[1], 1.1, 1e-7);
  EXPECT_EQ(p->value[2], 1.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(DirectoryLock, SecondLockFailsUntilReleased) {
  TempDir tmp;
  {
    DirectoryLock a(tmp.path());
    EXPECT_THROW(DirectoryLock b(tmp.path()), Error);
    auto cfg = small_run(ConditioningMode::Baseline, Setting::Continuous);
    auto data = open_dataset<T>(cfg.data, 8);
    NanoUNet<T> net(cfg.model);
    EXPECT_THROW(train_run(cfg, net, *data, tmp.path()), Error);
  }
  EXPECT_NO_THROW(DirectoryLock c(tmp.path()));
}

class OmegaPerSetting : public ::testing::TestWithParam<Setting> {};

TEST_P(OmegaPerSetting, CosineMatrixWellFormed) {
  auto cfg = small_run(ConditioningMode::OnlyLoRA, GetParam()).model;
  NanoUNet<T> net(cfg);
  const auto a = analyze_omega(net, 12);
  EXPECT_EQ(a.grid.size(), 12u);
  ASSERT_FALSE(a.blocks.empty());
  for (const auto& b : a.blocks) {
    ASSERT_EQ(b.cosine.size(), 12u);
    for (std::size_t i = 0; i < 12; ++i) {
      EXPECT_EQ(b.cosine[i][i], 1.0);
      for (std::size_t j = 0; j < 12; ++j) {
        EXPECT_EQ(b.cosine[i][j], b.cosine[j][i]);
        EXPECT_LE(std::abs(b.cosine[i][j]), 1.0 + 1e-12);
      }
    }
    EXPECT_EQ(b.reference_profile, b.cosine[a.reference_index]);
  }
  if (GetParam() == Setting::Discrete) {
    EXPECT_EQ(a.grid.front(), 1.0);
    EXPECT_EQ(a.grid.back(), 21.0);
    EXPECT_EQ(a.reference_index, 11u);
  } else {
    EXPECT_EQ(a.grid.front(), 80.0);
    EXPECT_EQ(a.reference_index, 6u);
  }
  TempDir tmp;
  write_omega_report(tmp.path(), a);
  EXPECT_TRUE(fs::exists(tmp.path() / "summary.csv"));
  EXPECT_TRUE(fs::exists(tmp.path() / ("cos_" + a.blocks[0].label + ".pgm")));
}

TEST_P(OmegaPerSetting, ZeroCompositionWeightsAreNumericError) {
  auto cfg = small_run(ConditioningMode::OnlyLoRA, GetParam()).model;
  NanoUNet<T> net(cfg);
  for (const auto& row : param_ledger(net.params()).rows) {
    if (row.is_conditioning) net.params().get(row.name)->value.fill(0.0);
  }
  EXPECT_THROW(analyze_omega(net, 8), NumericError);
}

INSTANTIATE_TEST_SUITE_P(Settings, OmegaPerSetting, ::testing::Values(Setting::Discrete, Setting::Continuous),
                         [](const auto& info) { return info.param == Setting::Discrete ? "Discrete" : "Continuous"; });

TEST(Omega, ModelsWithoutCompositionAreRejected) {
  NanoUNet<T> base(small_run(ConditioningMode::Baseline, Setting::Continuous).model);
  EXPECT_THROW(analyze_omega(base, 8), DataError);
  auto cfg = small_run(ConditioningMode::OnlyLoRA, Setting::Discrete).model;
  cfg.lora.compositional = false;
  NanoUNet<T> per_step(cfg);
  EXPECT_THROW(analyze_omega(per_step, 8), DataError);
  NanoUNet<T> ok(small_run(ConditioningMode::OnlyLoRA, Setting::Continuous).model);
  EXPECT_THROW(analyze_omega(ok, 1), ConfigError);
}

TEST(ParamReport, IdentityAndClosedFormHold) {
  for (auto setting : {Setting::Discrete, Setting::Continuous}) {
    const auto r = param_report(small_run(ConditioningMode::WithLoRA, setting).model);
    EXPECT_TRUE(r.closed_form_ok);
    EXPECT_TRUE(r.identity_ok);
    ASSERT_EQ(r.modes.size(), 4u);
    EXPECT_EQ(r.modes[0].lora, 0u);
    EXPECT_EQ(r.modes[3].lora, 0u);
    EXPECT_GT(r.modes[1].lora, 0u);
    const std::string text = param_report_text(r);
    EXPECT_NE(text.find("holds"), std::string::npos);
    const std::string csv = param_ledger_csv(r.ledger);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.ledger.rows.size() + 1);
  }
}

// ---------------------------------------------------------------------------
// Command line

int run_cli(const std::string& args, const fs::path& root) {
  const std::string cmd = "LDIF_OUTPUT_ROOT='" + root.string() + "' '" + std::string(LDIF_CLI_PATH) + "' " + args +
                          " >'" + (root / "cli.log").string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, UsageAndConfigErrorsExitOne) {
  TempDir tmp;
  EXPECT_EQ(run_cli("--help", tmp.path()), 0);
  EXPECT_EQ(run_cli("", tmp.path()), 1);
  EXPECT_EQ(run_cli("frobnicate", tmp.path()), 1);
  EXPECT_EQ(run_cli("train /nonexistent/run.cfg", tmp.path()), 1);
  write_text(tmp.path() / "bad.cfg", "no.such.key = 1\n");
  EXPECT_EQ(run_cli("train " + (tmp.path() / "bad.cfg").string(), tmp.path()), 1);
  EXPECT_NE(read_file(tmp.path() / "cli.log").find(":1:"), std::string::npos);
}

TEST(Cli, DataErrorsExitTwo) {
  TempDir tmp;
  EXPECT_EQ(run_cli("sample /nonexistent/ckpt.ldif", tmp.path()), 2);
  write_text(tmp.path() / "junk.ldif", "LDIF garbage");
  EXPECT_EQ(run_cli("sample " + (tmp.path() / "junk.ldif").string(), tmp.path()), 2);
  write_text(tmp.path() / "idx.cfg", "data = idx:/nonexistent/images\ntrain.iterations = 1\n");
  EXPECT_EQ(run_cli("train " + (tmp.path() / "idx.cfg").string(), tmp.path()), 2);
}

TEST(Cli, TrainSampleAnalyzeAndReport) {
  TempDir tmp;
  auto cfg = small_run(ConditioningMode::OnlyLoRA, Setting::Continuous);
  cfg.output_dir = "run";
  write_text(tmp.path() / "run.cfg", to_text(cfg));
  ASSERT_EQ(run_cli("train " + (tmp.path() / "run.cfg").string() + " --log-every 0", tmp.path()), 0);
  const fs::path ck = tmp.path() / "run" / "ckpt_final.ldif";
  ASSERT_TRUE(fs::exists(ck));
  EXPECT_EQ(load_checkpoint(ck).iteration, 3u);
  ASSERT_EQ(run_cli("sample " + ck.string() + " --seed 2 --count 4 --class 1", tmp.path()), 0);
  const fs::path grid = tmp.path() / "run" / "samples" / "samples_seed2_steps4_class1.pgm";
  ASSERT_TRUE(fs::exists(grid));
  EXPECT_EQ(read_file(grid).substr(0, 12), "P5\n32 8\n255\n");
  EXPECT_EQ(run_cli("sample " + ck.string() + " --class 3", tmp.path()), 1);
  EXPECT_EQ(run_cli("analyze-omega " + ck.string() + " --grid 8", tmp.path()), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "run" / "omega" / "summary.csv"));
  EXPECT_EQ(run_cli("class-sweep " + ck.string() + " --first 0 --second 2 --points 3 --samples 2", tmp.path()), 0);
  EXPECT_EQ(run_cli("param-report " + (tmp.path() / "run.cfg").string(), tmp.path()), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "run" / "param_ledger.csv"));
  EXPECT_EQ(run_cli("param-report " + ck.string(), tmp.path()), 0);

  auto base = cfg;
  base.model.mode = ConditioningMode::Baseline;
  base.train.iterations = 0;
  write_text(tmp.path() / "base.cfg", to_text(base));
  ASSERT_EQ(run_cli("train " + (tmp.path() / "base.cfg").string() + " --out base", tmp.path()), 0);
  EXPECT_EQ(run_cli("analyze-omega " + (tmp.path() / "base" / "ckpt_final.ldif").string(), tmp.path()), 2);
}

TEST(Cli, ZeroCompositionWeightsExitThree) {
  TempDir tmp;
  auto cfg = small_run(ConditioningMode::OnlyLoRA, Setting::Continuous);
  NanoUNet<T> net(cfg.model);
  for (const auto& row : param_ledger(net.params()).rows) {
    if (row.is_conditioning) net.params().get(row.name)->value.fill(0.0);
  }
  save_checkpoint(tmp.path() / "zero.ldif", to_text(cfg), 0, net.params());
  EXPECT_EQ(run_cli("analyze-omega " + (tmp.path() / "zero.ldif").string() + " --out omega", tmp.path()), 3);
}

TEST(Cli, GradCheckPasses) {
  TempDir tmp;
  auto cfg = small_run(ConditioningMode::WithLoRA, Setting::Discrete);
  write_text(tmp.path() / "gc.cfg", to_text(cfg));
  EXPECT_EQ(run_cli("grad-check " + (tmp.path() / "gc.cfg").string() + " --coords 2", tmp.path()), 0);
}

}  // namespace
