#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "orbitsym/data.hpp"
#include "orbitsym/errors.hpp"
#include "orbitsym/eqnets.hpp"

using namespace orbitsym;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "orbitsym_test_data";
  fs::create_directories(dir);
  return dir / name;
}

Mat example(const Dataset& d, std::size_t i) {
  const std::size_t n = d.x.dim(1), k = d.x.dim(2);
  Mat m(n, k);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) m(r, c) = d.x[(i * n + r) * k + c];
  return m;
}

}  // namespace

TEST(Particles, LabelOfRestFrameVectors) {
  // Four copies of (1,0,0,0): every dot product is 1, so y = 1 + 1.
  Mat p = Mat::Zero(4, 4);
  p.row(0).setOnes();
  EXPECT_DOUBLE_EQ(particle_label(p), 2.0);
}

TEST(Particles, LabelUsesMinkowskiProduct) {
  // p1 = p3 = e1 (spatial), p2 = p4 = e0: p1.p3 = -1, p2.p4 = 1, cross terms 0.
  Mat p = Mat::Zero(4, 4);
  p(1, 0) = 1;
  p(0, 1) = 1;
  p(1, 2) = 1;
  p(0, 3) = 1;
  EXPECT_DOUBLE_EQ(particle_label(p), -1.0);
}

TEST(Particles, LabelIsLorentzInvariant) {
  const auto g = parse_group("lorentz13");
  Rng rng(5);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    Mat p(4, 4);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = 0.25 * standard_normal(rng);
    const Mat gp = sample_element(g, rng) * p;
    const double y = particle_label(p);
    worst = std::max(worst, std::abs(particle_label(gp) - y) / std::max(1.0, std::abs(y)));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Particles, SplitSizesAndLabels) {
  const auto d = generate_particle_dataset(30, 20, 10, 3);
  EXPECT_EQ(d.train.size(), 30u);
  EXPECT_EQ(d.val.size(), 20u);
  EXPECT_EQ(d.test.size(), 10u);
  EXPECT_EQ(d.train.x.shape(), (Shape{30, 4, 4}));
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    EXPECT_NEAR(d.test.targets[i], particle_label(example(d.test, i)), 1e-12);
  }
}

TEST(Particles, DeterministicPerSeed) {
  const auto a = generate_particle_dataset(10, 5, 5, 11);
  const auto b = generate_particle_dataset(10, 5, 5, 11);
  const auto c = generate_particle_dataset(10, 5, 5, 12);
  EXPECT_TRUE(std::equal(a.val.x.values().begin(), a.val.x.values().end(), b.val.x.values().begin()));
  EXPECT_NE(a.train.x[0], c.train.x[0]);
}

TEST(Particles, EvaluationSplitsAreBoosted) {
  // Boosted events carry much larger time components than raw N(0, 1/16) draws.
  const auto d = generate_particle_dataset(200, 200, 10, 4, 1.0);
  auto energy = [](const Dataset& s) {
    double e = 0;
    for (std::size_t i = 0; i < s.size(); ++i) e += std::abs(s.x[i * 16]);
    return e / static_cast<double>(s.size());
  };
  EXPECT_GT(energy(d.val), 1.5 * energy(d.train));
}

TEST(Particles, ZeroCountRejected) {
  EXPECT_THROW(generate_particle_dataset(0, 5, 5, 1), ConfigError);
}

TEST(ParticleCsv, RoundTripIsExact) {
  const auto d = generate_particle_dataset(15, 5, 5, 21);
  const fs::path path = scratch("train.csv");
  SidecarInfo info;
  info.generator = "particle";
  info.seed = 21;
  info.split = "train";
  info.n_train = 15;
  write_particle_csv(path, d.train, info);
  const Dataset back = read_particle_csv(path);
  ASSERT_EQ(back.size(), 15u);
  for (std::size_t i = 0; i < d.train.x.size(); ++i) EXPECT_EQ(back.x[i], d.train.x[i]);
  EXPECT_EQ(back.targets, d.train.targets);
  const SidecarInfo s = read_sidecar(path);
  EXPECT_EQ(s.seed, 21u);
  EXPECT_EQ(s.split, "train");
  EXPECT_EQ(sidecar_path(path).extension(), ".json");
}

TEST(ParticleCsv, MalformedRowNamesTheRow) {
  const fs::path path = scratch("bad.csv");
  {
    std::ofstream out(path);
    out << "p1_0,p1_1,p1_2,p1_3,p2_0,p2_1,p2_2,p2_3,p3_0,p3_1,p3_2,p3_3,p4_0,p4_1,p4_2,p4_3,y\n";
    out << "1,2,3\n";
  }
  try {
    read_particle_csv(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("row"), std::string::npos);
  }
}

TEST(ParticleCsv, MissingFileIsIoError) {
  EXPECT_THROW(read_particle_csv(scratch("does_not_exist.csv")), IoError);
}

TEST(Idx, RoundTrip) {
  IdxArray a{{3, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255}};
  const fs::path path = scratch("a.idx");
  write_idx(path, a);
  const IdxArray b = read_idx(path);
  EXPECT_EQ(b.shape, a.shape);
  EXPECT_EQ(b.bytes, a.bytes);
  const Tensor t = parse_idx(path);
  EXPECT_DOUBLE_EQ(t[11], 1.0);
  EXPECT_DOUBLE_EQ(t[0], 0.0);
}

TEST(Idx, EmptyFileIsFormatError) {
  const fs::path path = scratch("empty.idx");
  { std::ofstream out(path, std::ios::binary); }
  EXPECT_THROW(read_idx(path), FormatError);
}

TEST(Idx, BadMagicAndTruncation) {
  const fs::path bad = scratch("bad.idx");
  {
    std::ofstream out(bad, std::ios::binary);
    const char bytes[] = {1, 2, 3, 4, 0, 0, 0, 1, 9};
    out.write(bytes, sizeof bytes);
  }
  EXPECT_THROW(read_idx(bad), FormatError);
  const fs::path cut = scratch("cut.idx");
  {
    std::ofstream out(cut, std::ios::binary);
    const char bytes[] = {0, 0, 8, 1, 0, 0, 0, 5, 1, 2};
    out.write(bytes, sizeof bytes);
  }
  EXPECT_THROW(read_idx(cut), FormatError);
}

TEST(Digits, SyntheticDeterministicAndLabelled) {
  const ImageSet a = generate_synthetic_digits(20, 9);
  const ImageSet b = generate_synthetic_digits(20, 9);
  EXPECT_EQ(a.pixels, b.pixels);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.labels[i], static_cast<int>(i % 10));
  for (double v : a.pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Digits, IdxLoaderMatchesWrittenImages) {
  const ImageSet src = generate_synthetic_digits(4, 2);
  IdxArray img{{4, 28, 28}, {}};
  for (double v : src.pixels) img.bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255)));
  IdxArray lab{{4}, {}};
  for (int l : src.labels) lab.bytes.push_back(static_cast<std::uint8_t>(l));
  write_idx(scratch("img.idx"), img);
  write_idx(scratch("lab.idx"), lab);
  const ImageSet back = load_idx_digits(scratch("img.idx"), scratch("lab.idx"), 3);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.labels[2], 2);
  EXPECT_NEAR(back.pixels[400], src.pixels[400], 0.5 / 255 + 1e-12);
}

TEST(PointSets, RotationPreservesNormsAndValues) {
  const ImageSet imgs = generate_synthetic_digits(6, 1);
  const Dataset plain = build_rotated_pointset(imgs, 0.2, 50, false, 7);
  const Dataset turned = build_rotated_pointset(imgs, 0.2, 50, true, 7);
  EXPECT_EQ(plain.x.shape(), (Shape{6, 2, 50}));
  for (std::size_t i = 0; i < plain.invariant.size(); ++i) EXPECT_EQ(plain.invariant[i], turned.invariant[i]);
  for (std::size_t e = 0; e < 6; ++e) {
    const Mat a = example(plain, e), b = example(turned, e);
    EXPECT_LT((a.transpose() * a - b.transpose() * b).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Augment, TransformAndInverseRestore) {
  const auto d = generate_particle_dataset(5, 1, 1, 8);
  const Batch b = d.train.all();
  const auto g = parse_group("lorentz13");
  Rng rng(3);
  std::vector<Mat> fwd, back;
  for (std::size_t i = 0; i < 5; ++i) {
    fwd.push_back(sample_element(g, rng));
    back.push_back(fwd.back().inverse());
  }
  const Batch moved = transform(b, fwd);
  const Batch restored = transform(moved, back);
  for (std::size_t i = 0; i < b.x.size(); ++i) EXPECT_NEAR(restored.x[i], b.x[i], 1e-10);
  EXPECT_EQ(moved.targets, b.targets);
  EXPECT_EQ(moved.indices, b.indices);
}

TEST(Augment, KeepsLabelsInvariant) {
  const auto d = generate_particle_dataset(20, 1, 1, 9);
  Rng rng(4);
  const Batch moved = augment(d.train.all(), parse_group("lorentz13"), rng);
  Dataset tmp;
  tmp.x = moved.x;
  for (std::size_t i = 0; i < 20; ++i) {
    const double y = d.train.targets[i];
    EXPECT_NEAR(particle_label(example(tmp, i)), y, 1e-8 * std::max(1.0, std::abs(y)));
  }
}

TEST(Dataset, SubsetKeepsSourceIndices) {
  const auto d = generate_particle_dataset(10, 1, 1, 1);
  const std::vector<std::size_t> idx{7, 2};
  const Batch b = d.train.subset(idx);
  EXPECT_EQ(b.indices, idx);
  EXPECT_EQ(b.targets[0], d.train.targets[7]);
  EXPECT_EQ(b.x[0], d.train.x[7 * 16]);
}
