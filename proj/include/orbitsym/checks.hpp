#pragma once

// Property suites shared by `orbitsym check` and the acceptance binary. Each
// row reports the worst defect seen over the trials and the bound it is held to.

#include <cstdint>
#include <string>
#include <vector>

#include "orbitsym/groups.hpp"
#include "orbitsym/invariants.hpp"

namespace orbitsym {

struct CheckRow {
  std::string suite;
  std::string property;
  std::size_t trials = 0;
  double defect = 0.0;  // worst observed value of the checked quantity
  double bound = 0.0;
  bool passed = false;
  std::string note;
};

/// The invariant used for a group throughout: projected when k > 2n^2+1.
SeparatingInvariant standard_invariant(const GroupSpec& group, std::uint64_t seed);

/// Random matrix inside the invariant's separation domain.
Mat random_domain_matrix(const SeparatingInvariant& f, Rng& rng);

/// Non-negativity, bitwise symmetry, triangle inequality (1e-9 slack),
/// intra-orbit distance <= 1e-9 and inter-orbit distance > 1e-6 over random
/// triples.
std::vector<CheckRow> metric_axiom_suite(const GroupSpec& group, std::size_t trials, std::uint64_t seed,
                                         Norm norm = Norm::l1);

/// f(g h) = f(h) relative to 1 + |f(h)|, bound 1e-9.
CheckRow invariance_check(const GroupSpec& group, std::size_t trials, std::uint64_t seed);

/// orbit_loss of sampled elements <= 1e-9.
CheckRow exact_element_check(const GroupSpec& group, std::size_t trials, std::uint64_t seed);

/// Gauss-Newton on f(h) - f(I) from random starts; every start that reaches
/// loss <= 1e-9 must pass is_member at 1e-4. Defined for O, SO, Lorentz, SL.
CheckRow zero_loss_membership_check(const GroupSpec& group, std::size_t starts, std::uint64_t seed);

/// Projected invariant keeps intra-orbit collapse (<= 1e-9) and inter-orbit
/// separation (> 1e-6). Two rows.
std::vector<CheckRow> projection_suite(const GroupSpec& group, std::size_t pairs, std::uint64_t seed);

/// Sampled elements are members, products are members, approx_inverse is exact.
std::vector<CheckRow> membership_suite(const GroupSpec& group, std::size_t trials, std::uint64_t seed);

/// Everything `orbitsym check` prints for one group.
std::vector<CheckRow> group_property_suite(const GroupSpec& group, std::size_t trials, std::uint64_t seed);

/// Reverse mode against central differences, `points` random points per
/// entry, bound 1e-5 relative.
std::vector<CheckRow> gradient_suite(std::size_t points, std::uint64_t seed);

/// Symmetrizer equivariance (<= 1e-6), featurization round trip (<= 1e-10)
/// and Phi invariance with shared noise and an exact q (<= 1e-6).
std::vector<CheckRow> equivariance_suite(std::size_t trials, std::uint64_t seed);

std::string format_rows(const std::vector<CheckRow>& rows);
bool all_passed(const std::vector<CheckRow>& rows);

}  // namespace orbitsym
