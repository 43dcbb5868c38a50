#pragma once

#include <stdexcept>
#include <string>

namespace gmix {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments or violated preconditions.
struct domain_error : error {
  using error::error;
};

// A mixture or config file that does not satisfy its invariants.
struct validation_error : error {
  using error::error;
};

// Covariance that cannot be factored, rank-zero regressions and the like.
struct numerical_error : error {
  using error::error;
};

// NaN/Inf in SGD weights or a non-PSD overlap matrix during integration.
struct divergence_error : error {
  using error::error;
};

// CSV that does not carry the columns a plot recipe needs.
struct schema_error : error {
  using error::error;
};

}  // namespace gmix
