#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orbitsym/groups.hpp"
#include "orbitsym/rng.hpp"
#include "orbitsym/tensor.hpp"

namespace orbitsym {

enum class TaskKind { regression, classification };

/// A slice of a Dataset; `indices` are positions in the source dataset.
struct Batch {
  Tensor x;
  Tensor invariant;
  std::vector<double> targets;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  std::size_t size() const { return x.dim(0); }
};

/// Examples with an equivariant channel x (N, n, k) that the group acts on,
/// an optional invariant channel (N, e), and targets.
struct Dataset {
  TaskKind kind = TaskKind::regression;
  Tensor x;
  Tensor invariant;
  std::vector<double> targets;  // regression
  std::vector<int> labels;      // classification

  std::size_t size() const { return x.defined() ? x.dim(0) : 0; }
  /// Copies the given examples; indices are remembered for noise streams.
  Batch subset(std::span<const std::size_t> indices) const;
  /// The whole dataset as a batch with indices 0..N-1.
  Batch all() const;
};

// Particle scattering ----------------------------------------------------------

struct ParticleSplits {
  Dataset train, val, test;
};

/// y = (p1.p3)(p2.p4) + (p1.p4)(p2.p3) with a.b = a^T Lambda b; columns of
/// the 4x4 momenta are p1..p4, time component first.
double particle_label(const Mat& momenta);

/// Momenta iid N(0, scale^2) (scale 1/4 by default). Validation and test
/// events are moved by fresh O(1,3) elements; training events are not.
ParticleSplits generate_particle_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                                         std::uint64_t seed, double boost_range = 1.0, double scale = 0.25);

struct SidecarInfo {
  std::string generator;
  int version = 1;
  std::uint64_t seed = 0;
  std::string split;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  double boost_range = 1.0;
  double scale = 0.25;
};

/// One row per event: 16 momentum entries column-major (p1 first), then y.
/// Also writes `<path minus .csv>.json` describing the generator.
void write_particle_csv(const std::filesystem::path& path, const Dataset& data, const SidecarInfo& info);
Dataset read_particle_csv(const std::filesystem::path& path);
SidecarInfo read_sidecar(const std::filesystem::path& csv_path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

// IDX --------------------------------------------------------------------------

struct IdxArray {
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

/// Unsigned-byte IDX (magic 00 00 08 <ndim>, big-endian u32 sizes, payload).
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);
/// Pixels scaled to [0,1].
Tensor parse_idx(const std::filesystem::path& path);

// Digits and point sets -------------------------------------------------------

struct ImageSet {
  std::vector<double> pixels;  // N * 784, row-major 28x28 per image, values in [0,1]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
  std::span<const double> image(std::size_t i) const { return {pixels.data() + i * 784, 784}; }
};

/// Ten stroke templates (ring, bar, L, triangle, plus, square, T, arc, double
/// ring, lollipop), none a rotation of another, rendered as Gaussian-blurred
/// strokes with random scale, shift and a small tilt.
ImageSet generate_synthetic_digits(std::size_t count, std::uint64_t seed);

/// MNIST-style pair of IDX files.
ImageSet load_idx_digits(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t limit = 0);

/// Classification dataset with x = coordinates (N, 2, m) and invariant =
/// pixel values (N, m). With `rotate`, example i's coordinates are turned by
/// an angle drawn from a stream derived from (seed, i).
Dataset build_rotated_pointset(const ImageSet& images, double t, std::size_t m, bool rotate, std::uint64_t seed);

/// Applies a fresh group element per example to the equivariant channel.
Batch augment(const Batch& batch, const GroupSpec& group, Rng& rng);

/// Same, with the element for example i supplied by the caller.
Batch transform(const Batch& batch, const std::vector<Mat>& elements);

}  // namespace orbitsym
