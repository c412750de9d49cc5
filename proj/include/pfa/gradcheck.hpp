#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pfa/tensor.hpp"

namespace pfa {

/// Central-difference gradient (f(x+eps e_i) - f(x-eps e_i)) / (2 eps) per
/// element. The oracle side of every gradient check: it only ever runs
/// forward passes, so it is independent of the backward implementation.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps = 1e-6);

/// Same derivative, restricted to chosen flat indices; used where the full
/// sweep would be too expensive (end-to-end checks sample coordinates).
std::vector<double> finite_diff_grad_at(const std::function<double(const Tensor<double>&)>& f,
                                        const Tensor<double>& x,
                                        const std::vector<std::size_t>& indices, double eps = 1e-6);

/// max_i |a_i - n_i| / max(floor, |a_i|, |n_i|). The floor keeps noise on
/// near-zero gradients from registering as relative error.
double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                   double floor = 1e-3);

struct GradCheckResult {
    std::string op;
    int seeds = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Operator names accepted by run_op_gradcheck (and the CLI --op flag).
std::vector<std::string> gradcheck_ops();

/// Checks one operator family over `num_seeds` deterministic seeds derived
/// from base_seed. Throws ConfigError for unknown names.
GradCheckResult run_op_gradcheck(const std::string& op, std::uint64_t base_seed, int num_seeds);

/// Tiny full network + total loss, double precision, sampled coordinates per
/// parameter tensor plus the input image. Tolerance 1e-3.
GradCheckResult run_end_to_end_gradcheck(std::uint64_t base_seed);

/// Every operator at >= num_seeds seeds, then the end-to-end check.
std::vector<GradCheckResult> run_all_gradchecks(std::uint64_t base_seed, int num_seeds);

}  // namespace pfa
