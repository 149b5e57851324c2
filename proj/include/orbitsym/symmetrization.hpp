#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "orbitsym/data.hpp"
#include "orbitsym/eqnets.hpp"
#include "orbitsym/groups.hpp"
#include "orbitsym/invariants.hpp"
#include "orbitsym/nn.hpp"

namespace orbitsym {

enum class Method { base, base_aug, scalar_invariant, canonical_orbit, ps_orbit };
enum class OutputAction { invariant_scalar, equivariant };

Method parse_method(const std::string& text);
std::string to_string(Method m);

/// Architecture and preprocessing of a model; stored in checkpoint headers.
struct ModelSpec {
  Method method = Method::base;
  std::string group = "lorentz13";
  TaskKind task = TaskKind::regression;
  std::size_t columns = 4;         // k: vectors in the equivariant channel
  std::size_t invariant_dim = 0;   // e: invariant features per example
  std::size_t outputs = 1;         // regression targets or classes
  std::vector<std::size_t> base_hidden = {128, 128};
  Activation base_activation = Activation::silu;
  SymmetrizerOptions symmetrizer;
  NoiseDistribution noise = NoiseDistribution::uniform_trainable;
  std::size_t d_eps = 10;
  Combine combine = Combine::concat;
  OutputAction output_action = OutputAction::invariant_scalar;
  /// Data are multiplied by this before entering any network. A positive
  /// scalar commutes with every linear group action.
  double input_scale = 1.0;
  /// Regression targets are learned as (y - mean) / scale.
  double target_mean = 0.0;
  double target_scale = 1.0;
  bool invariant_project = true;
  std::uint64_t projection_seed = 0;
  Norm norm = Norm::l1;

  bool symmetrized() const { return method == Method::canonical_orbit || method == Method::ps_orbit; }
  /// Orbit-separating invariant matching this spec's group and projection.
  SeparatingInvariant invariant() const;
};

/// Per-example noise streams: example i of a pass tagged `tag` draws from
/// derive_seed(root, tag, i), so a batch's noise does not depend on how the
/// data are chunked or which thread evaluates it.
struct NoiseStreams {
  std::uint64_t root = 0;
  std::uint64_t tag = 0;
};

/// Phi(x) = mean_i  rho_out(h_i) phi(h_i^{-1} x),  h_i = q(x, eps_i), with the
/// group's approximate inverse in place of h^{-1}. Methods that do not
/// symmetrize call phi (or phi on invariant scalars) directly.
class SymmetrizedModel {
 public:
  explicit SymmetrizedModel(const ModelSpec& spec, std::uint64_t init_seed);

  struct Output {
    Tensor prediction;  // (B, outputs), learned units
    Tensor h;           // (S*B, n, n), sample-major; undefined without symmetrizer
  };

  Output forward(const Batch& batch, std::size_t samples, const NoiseStreams& streams) const;

  const ModelSpec& spec() const { return spec_; }
  const GroupSpec& group() const { return group_; }
  const Mlp& base() const { return base_; }
  const ScalarEquivariantNet* symmetrizer() const { return symmetrizer_ ? &*symmetrizer_ : nullptr; }
  const NoiseSpec& noise() const { return noise_; }

  /// Base parameters, then symmetrizer, then noise; fixed declaration order.
  std::vector<Tensor> parameters() const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  /// Replaces q with a fixed function of (vectors, extra) -> (B, n, n); for tests.
  using SymmetrizerFn = std::function<Tensor(const Tensor& u, const Tensor& extra)>;
  void override_symmetrizer(SymmetrizerFn fn) { override_ = std::move(fn); }

  /// Number of noise draws actually used for a requested count (1 when the
  /// noise is deterministic or absent).
  std::size_t effective_samples(std::size_t requested) const;

  /// Learned-unit predictions to data units.
  double to_data_units(double v) const { return v * spec_.target_scale + spec_.target_mean; }

 private:
  Tensor base_input(const Tensor& x, const Tensor& invariant) const;

  ModelSpec spec_;
  GroupSpec group_;
  Mlp base_;
  std::optional<ScalarEquivariantNet> symmetrizer_;
  NoiseSpec noise_;
  Tensor metric_;
  std::vector<std::size_t> gram_upper_;
  SymmetrizerFn override_;
};

struct LossTerms {
  Tensor total;
  Tensor task;   // MSE (learned units) or cross entropy
  Tensor orbit;  // mean orbit loss over every drawn h; 0 without symmetrizer
  Tensor h;      // the drawn elements; undefined without symmetrizer
};

/// task + lambda * orbit.
LossTerms joint_loss(const SymmetrizedModel& model, const Batch& batch, const SeparatingInvariant& f, double lambda,
                     std::size_t samples, const NoiseStreams& streams);

struct EvalResult {
  double metric = 0.0;      // MSE in data units, or classification error rate
  double orbit_loss = 0.0;  // mean over drawn h; 0 without symmetrizer
  std::vector<double> predictions;  // data units (regression) or averaged logits
};

EvalResult evaluate(const SymmetrizedModel& model, const Dataset& data, const SeparatingInvariant& f,
                    std::size_t samples, const NoiseStreams& streams, std::size_t chunk = 500);

struct TrainOptions {
  std::size_t epochs = 300;
  std::size_t batch = 200;
  double lr = 3e-3;
  double lambda = 1.0;
  std::size_t samples_train = 1;
  std::size_t samples_val = 1;
  double clip = 10.0;
  std::uint64_t seed = 0;
  /// Fresh group element per training example and step (base-aug).
  bool augment = false;
  /// Fill the `seconds` column with wall time; off keeps histories bit-reproducible.
  bool wall_time = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double task_loss = 0.0;  // mean over steps; data units for regression
  double orbit_loss = 0.0;
  double val_metric = 0.0;
  double val_orbit_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0: initial weights kept
  double best_val_metric = 0.0;
  std::vector<double> wall_seconds;  // measured per epoch regardless of `wall_time`
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam on joint_loss with global-norm clipping. Keeps the weights
/// of the epoch with the lowest validation metric.
TrainResult train(SymmetrizedModel& model, const Dataset& train_set, const Dataset& val_set,
                  const SeparatingInvariant& f, const TrainOptions& options, const EpochCallback& on_epoch = {});

/// Noise tags for evaluation passes.
inline constexpr std::uint64_t kValidationTag = 0x76616c6964ULL;
inline constexpr std::uint64_t kTestTag = 0x74657374ULL;

// Persistence ------------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

/// "OSYM", u32 version, u32 header length, JSON header, then every parameter
/// as little-endian f64 in declaration order.
void save_checkpoint(const std::filesystem::path& path, const SymmetrizedModel& model);
SymmetrizedModel load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

}  // namespace orbitsym
