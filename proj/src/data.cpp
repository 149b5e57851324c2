#include "orbitsym/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "orbitsym/eqnets.hpp"
#include "orbitsym/errors.hpp"

namespace orbitsym {

namespace {

Tensor gather_examples(const Tensor& t, std::span<const std::size_t> indices) {
  Shape shape = t.shape();
  const std::size_t per = t.size() / shape[0];
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * per);
  const auto v = t.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.dim(0)) throw DimensionError("dataset index out of range");
    std::copy_n(v.data() + indices[i] * per, per, out.data() + i * per);
  }
  return Tensor::constant(std::move(shape), std::move(out));
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

Batch Dataset::subset(std::span<const std::size_t> indices) const {
  Batch b;
  b.x = gather_examples(x, indices);
  if (invariant.defined()) b.invariant = gather_examples(invariant, indices);
  b.indices.assign(indices.begin(), indices.end());
  for (std::size_t i : indices) {
    if (!targets.empty()) b.targets.push_back(targets[i]);
    if (!labels.empty()) b.labels.push_back(labels[i]);
  }
  return b;
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

// ---------------------------------------------------------------------------
// Particles

double particle_label(const Mat& p) {
  if (p.rows() != 4 || p.cols() != 4) throw DimensionError("particle_label: expected 4x4 momenta");
  auto dot = [&](int a, int b) {
    return p(0, a) * p(0, b) - p(1, a) * p(1, b) - p(2, a) * p(2, b) - p(3, a) * p(3, b);
  };
  return dot(0, 2) * dot(1, 3) + dot(0, 3) * dot(1, 2);
}

namespace {

Dataset particle_split(std::size_t count, Rng& rng, double scale, const GroupSpec* transform_group) {
  Dataset d;
  d.kind = TaskKind::regression;
  std::vector<double> x(count * 16);
  d.targets.resize(count);
  for (std::size_t e = 0; e < count; ++e) {
    Mat p(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) p.data()[i] = scale * standard_normal(rng);
    if (transform_group) p = sample_element(*transform_group, rng) * p;
    d.targets[e] = particle_label(p);
    std::copy_n(p.data(), 16, x.data() + e * 16);
  }
  d.x = Tensor::constant({count, 4, 4}, std::move(x));
  return d;
}

}  // namespace

ParticleSplits generate_particle_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                                         std::uint64_t seed, double boost_range, double scale) {
  if (n_train == 0 || n_val == 0 || n_test == 0) throw ConfigError("particle dataset counts must be at least 1");
  const GroupSpec lorentz = make_group(GroupFamily::lorentz, 4, boost_range);
  Rng train_rng(derive_seed(seed, "data.train"));
  Rng val_rng(derive_seed(seed, "data.val"));
  Rng test_rng(derive_seed(seed, "data.test"));
  ParticleSplits s;
  s.train = particle_split(n_train, train_rng, scale, nullptr);
  s.val = particle_split(n_val, val_rng, scale, &lorentz);
  s.test = particle_split(n_test, test_rng, scale, &lorentz);
  return s;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void write_particle_csv(const std::filesystem::path& path, const Dataset& data, const SidecarInfo& info) {
  if (data.x.rank() != 3 || data.x.dim(1) != 4 || data.x.dim(2) != 4) {
    throw DimensionError("write_particle_csv: expected (N,4,4) momenta");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (int j = 1; j <= 4; ++j)
    for (int c = 0; c < 4; ++c) out << 'p' << j << '_' << c << ',';
  out << "y\n";
  const auto v = data.x.values();
  for (std::size_t e = 0; e < data.size(); ++e) {
    const double* m = v.data() + e * 16;
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 4; ++c) out << format_double(m[c * 4 + j]) << ',';
    out << format_double(data.targets[e]) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());

  nlohmann::ordered_json j;
  j["generator"] = info.generator;
  j["version"] = info.version;
  j["seed"] = info.seed;
  j["split"] = info.split;
  j["counts"] = {{"train", info.n_train}, {"val", info.n_val}, {"test", info.n_test}};
  j["boost_range"] = info.boost_range;
  j["scale"] = info.scale;
  j["rows"] = data.size();
  std::ofstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("cannot write " + sidecar_path(path).string());
  side << j.dump(2) << '\n';
}

Dataset read_particle_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  Dataset d;
  d.kind = TaskKind::regression;
  std::vector<double> x;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    double vals[17];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int i = 0; i < 17; ++i) {
      const auto res = std::from_chars(p, end, vals[i]);
      if (res.ec != std::errc()) {
        throw FormatError(path.string() + ": row " + std::to_string(row) + " field " + std::to_string(i + 1) +
                          " is not a number");
      }
      p = res.ptr;
      if (i < 16) {
        if (p == end || *p != ',') {
          throw FormatError(path.string() + ": row " + std::to_string(row) + " has fewer than 17 fields");
        }
        ++p;
      }
    }
    if (p != end && *p != '\r') throw FormatError(path.string() + ": row " + std::to_string(row) + " has extra fields");
    const std::size_t base = x.size();
    x.resize(base + 16);
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 4; ++c) x[base + c * 4 + j] = vals[j * 4 + c];
    d.targets.push_back(vals[16]);
  }
  if (d.targets.empty()) throw FormatError(path.string() + ": no data rows");
  d.x = Tensor::constant({d.targets.size(), 4, 4}, std::move(x));
  return d;
}

SidecarInfo read_sidecar(const std::filesystem::path& csv_path) {
  const auto p = sidecar_path(csv_path);
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  SidecarInfo s;
  try {
    const auto j = nlohmann::json::parse(in);
    s.generator = j.at("generator").get<std::string>();
    s.version = j.at("version").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.split = j.at("split").get<std::string>();
    s.n_train = j.at("counts").at("train").get<std::size_t>();
    s.n_val = j.at("counts").at("val").get<std::size_t>();
    s.n_test = j.at("counts").at("test").get<std::size_t>();
    s.boost_range = j.at("boost_range").get<double>();
    s.scale = j.at("scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// IDX

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (raw.size() < 4) throw FormatError(name + ": missing IDX header at offset 0");
  if (raw[0] != 0 || raw[1] != 0) throw FormatError(name + ": bad IDX magic at offset 0");
  if (raw[2] != 0x08) throw FormatError(name + ": unsupported IDX dtype at offset 2 (only unsigned byte)");
  const std::size_t ndim = raw[3];
  if (ndim == 0) throw FormatError(name + ": zero dimensions at offset 3");
  if (raw.size() < 4 + 4 * ndim) throw FormatError(name + ": truncated dimension table at offset 4");
  IdxArray a;
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    const std::uint8_t* b = raw.data() + 4 + 4 * d;
    const std::size_t size = (std::size_t{b[0]} << 24) | (std::size_t{b[1]} << 16) | (std::size_t{b[2]} << 8) | b[3];
    a.shape.push_back(size);
    total *= size;
  }
  const std::size_t header = 4 + 4 * ndim;
  if (raw.size() - header < total) {
    throw FormatError(name + ": truncated payload, expected " + std::to_string(total) + " bytes after offset " +
                      std::to_string(header) + ", found " + std::to_string(raw.size() - header));
  }
  a.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header),
                 raw.begin() + static_cast<std::ptrdiff_t>(header + total));
  return a;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  if (array.shape.empty() || array.shape.size() > 255) throw DimensionError("write_idx: bad rank");
  if (shape_size(array.shape) != array.bytes.size()) throw DimensionError("write_idx: payload size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const unsigned char head[4] = {0, 0, 0x08, static_cast<unsigned char>(array.shape.size())};
  out.write(reinterpret_cast<const char*>(head), 4);
  for (std::size_t s : array.shape) {
    const auto v = static_cast<std::uint32_t>(s);
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  out.write(reinterpret_cast<const char*>(array.bytes.data()), static_cast<std::streamsize>(array.bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor parse_idx(const std::filesystem::path& path) {
  const IdxArray a = read_idx(path);
  std::vector<double> v(a.bytes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.bytes[i] / 255.0;
  return Tensor::constant(a.shape, std::move(v));
}

// ---------------------------------------------------------------------------
// Synthetic digits

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

void add_polyline(std::vector<Segment>& out, const std::vector<std::pair<double, double>>& pts) {
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    out.push_back({pts[i].first, pts[i].second, pts[i + 1].first, pts[i + 1].second});
}

void add_arc(std::vector<Segment>& out, double cx, double cy, double r, double from, double to, int pieces) {
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i <= pieces; ++i) {
    const double a = from + (to - from) * i / pieces;
    pts.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
  }
  add_polyline(out, pts);
}

std::vector<Segment> digit_template(int label) {
  constexpr double pi = std::numbers::pi;
  std::vector<Segment> s;
  switch (label) {
    case 0: add_arc(s, 0, 0, 1.0, 0, 2 * pi, 32); break;
    case 1: add_polyline(s, {{0, -1}, {0, 1}}); break;
    case 2: add_polyline(s, {{-0.4, 1}, {-0.4, -1}, {0.6, -1}}); break;
    case 3: add_polyline(s, {{0, 1}, {-0.866, -0.5}, {0.866, -0.5}, {0, 1}}); break;
    case 4:
      add_polyline(s, {{-0.8, 0}, {0.8, 0}});
      add_polyline(s, {{0, -0.8}, {0, 0.8}});
      break;
    case 5: add_polyline(s, {{-0.75, -0.75}, {0.75, -0.75}, {0.75, 0.75}, {-0.75, 0.75}, {-0.75, -0.75}}); break;
    case 6:
      add_polyline(s, {{-0.8, 1}, {0.8, 1}});
      add_polyline(s, {{0, 1}, {0, -1}});
      break;
    case 7: add_arc(s, 0, -0.3, 1.0, 0, pi, 16); break;
    case 8:
      add_arc(s, 0, 0, 1.0, 0, 2 * pi, 32);
      add_arc(s, 0, 0, 0.45, 0, 2 * pi, 16);
      break;
    case 9:
      add_arc(s, 0, 0.55, 0.45, 0, 2 * pi, 16);
      add_polyline(s, {{0, 0.1}, {0, -1}});
      break;
    default: throw DimensionError("digit_template: label out of range");
  }
  return s;
}

double segment_distance2(const Segment& g, double px, double py) {
  const double dx = g.x1 - g.x0, dy = g.y1 - g.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - g.x0) * dx + (py - g.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = g.x0 + t * dx - px, ey = g.y0 + t * dy - py;
  return ex * ex + ey * ey;
}

}  // namespace

ImageSet generate_synthetic_digits(std::size_t count, std::uint64_t seed) {
  ImageSet set;
  set.pixels.assign(count * 784, 0.0);
  set.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 0x6469676974ULL, i));
    const int label = static_cast<int>(i % 10);
    set.labels[i] = label;
    const double size = 9.0 * (0.8 + 0.3 * uniform01(rng));
    const double tilt = 0.5 * (uniform01(rng) - 0.5);
    const double sx = 3.0 * (uniform01(rng) - 0.5), sy = 3.0 * (uniform01(rng) - 0.5);
    const double sigma = 0.7 + 0.3 * uniform01(rng);
    const double peak = 0.8 + 0.2 * uniform01(rng);
    const double c = std::cos(tilt), s = std::sin(tilt);
    std::vector<Segment> segs = digit_template(label);
    for (Segment& g : segs) {
      const auto map = [&](double x, double y) {
        return std::pair{size * (c * x - s * y) + sx, size * (s * x + c * y) + sy};
      };
      const auto [ax, ay] = map(g.x0, g.y0);
      const auto [bx, by] = map(g.x1, g.y1);
      g = {ax, ay, bx, by};
    }
    double* img = set.pixels.data() + i * 784;
    for (int r = 0; r < 28; ++r)
      for (int col = 0; col < 28; ++col) {
        const double px = col - 13.5, py = 13.5 - r;
        double best = std::numeric_limits<double>::infinity();
        for (const Segment& g : segs) best = std::min(best, segment_distance2(g, px, py));
        img[r * 28 + col] = peak * std::exp(-best / (2 * sigma * sigma));
      }
  }
  return set;
}

ImageSet load_idx_digits(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit) {
  const IdxArray im = read_idx(images);
  const IdxArray lb = read_idx(labels);
  if (im.shape.size() != 3 || im.shape[1] != 28 || im.shape[2] != 28) {
    throw FormatError(images.string() + ": expected (N,28,28) images");
  }
  if (lb.shape.size() != 1 || lb.shape[0] != im.shape[0]) {
    throw FormatError(labels.string() + ": label count does not match images");
  }
  const std::size_t n = limit > 0 ? std::min(limit, im.shape[0]) : im.shape[0];
  ImageSet set;
  set.pixels.resize(n * 784);
  for (std::size_t i = 0; i < n * 784; ++i) set.pixels[i] = im.bytes[i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (lb.bytes[i] > 9) throw FormatError(labels.string() + ": label out of range at index " + std::to_string(i));
    set.labels.push_back(lb.bytes[i]);
  }
  return set;
}

Dataset build_rotated_pointset(const ImageSet& images, double t, std::size_t m, bool rotate, std::uint64_t seed) {
  const std::size_t n = images.size();
  Dataset d;
  d.kind = TaskKind::classification;
  d.labels = images.labels;
  std::vector<double> coords(n * 2 * m), values(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const PointSet p = preprocess_pointset(images.image(i), t, m);
    std::copy_n(p.values.values().data(), m, values.data() + i * m);
    double* dst = coords.data() + i * 2 * m;
    std::copy_n(p.coords.values().data(), 2 * m, dst);
    if (rotate) {
      Rng rng(derive_seed(seed, 0x726f74ULL, i));
      const double theta = 2.0 * std::numbers::pi * uniform01(rng);
      const double c = std::cos(theta), s = std::sin(theta);
      for (std::size_t k = 0; k < m; ++k) {
        const double x = dst[k], y = dst[m + k];
        dst[k] = c * x - s * y;
        dst[m + k] = s * x + c * y;
      }
    }
  }
  d.x = Tensor::constant({n, 2, m}, std::move(coords));
  d.invariant = Tensor::constant({n, m}, std::move(values));
  return d;
}

// ---------------------------------------------------------------------------
// Augmentation

Batch transform(const Batch& batch, const std::vector<Mat>& elements) {
  const std::size_t b = batch.size(), n = batch.x.dim(1), k = batch.x.dim(2);
  if (elements.size() != b) throw DimensionError("transform: one element per example required");
  std::vector<double> out(b * n * k);
  const auto v = batch.x.values();
  for (std::size_t e = 0; e < b; ++e) {
    if (static_cast<std::size_t>(elements[e].rows()) != n) throw DimensionError("transform: element size");
    Eigen::Map<const Mat> x(v.data() + e * n * k, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    Eigen::Map<Mat> y(out.data() + e * n * k, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    y.noalias() = elements[e] * x;
  }
  Batch r = batch;
  r.x = Tensor::constant(batch.x.shape(), std::move(out));
  return r;
}

Batch augment(const Batch& batch, const GroupSpec& group, Rng& rng) {
  std::vector<Mat> elements;
  elements.reserve(batch.size());
  for (std::size_t e = 0; e < batch.size(); ++e) elements.push_back(sample_element(group, rng));
  return transform(batch, elements);
}

}  // namespace orbitsym
