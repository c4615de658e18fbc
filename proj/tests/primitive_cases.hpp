#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "agerank/gradcheck.hpp"
#include "agerank/ops.hpp"
#include "support.hpp"

namespace testing_support {

using agerank::Tape;
using agerank::Tensor;
using agerank::Var;
namespace ops = agerank::ops;

using PointFn = std::function<Tensor<double>(std::mt19937_64&)>;
using OpFn = std::function<Var(Tape<double>&, Var, std::mt19937_64&)>;

/// One differentiable primitive (or operand of one) under finite-difference test.
/// `op` may draw constant operands from the rng it is given; the same draws are
/// replayed for every evaluation of one instance.
struct PrimitiveCase {
  std::string name;
  PointFn point;
  OpFn op;
};

/// Test-name printer picked up by GoogleTest.
inline void PrintTo(const PrimitiveCase& c, std::ostream* os) { *os << c.name; }

/// Scalar probe of an op's output: a fixed random linear functional.
inline Var probe(Tape<double>& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(tape.value(y).shape(), rng);
  return ops::weighted_sum(tape, y, std::move(w));
}

struct CaseResult {
  bool passed = true;
  double worst = 0.0;  // largest max_rel_error over instances
  int failed_instance = -1;
};

inline CaseResult run_case(const PrimitiveCase& c, int instances, double eps, double tol) {
  std::mt19937_64 rng(std::hash<std::string>{}(c.name));
  CaseResult out;
  for (int k = 0; k < instances; ++k) {
    const auto x0 = c.point(rng);
    const std::uint64_t inst_seed = rng();
    auto fn = [&](Tape<double>& tape, Var x) {
      std::mt19937_64 local(inst_seed);
      Var y = c.op(tape, x, local);
      return probe(tape, y, inst_seed ^ 0x9e37ULL);
    };
    const auto r = agerank::grad_check(fn, x0, eps, tol);
    out.worst = std::max(out.worst, r.max_rel_error);
    if (!r.passed && out.passed) {
      out.passed = false;
      out.failed_instance = k;
    }
  }
  return out;
}

inline std::vector<PrimitiveCase> primitive_cases() {
  using R = std::mt19937_64;
  std::vector<PrimitiveCase> c;
  c.push_back({"relu", [](R& r) { return random_away_from_zero({3, 4}, r); },
               [](auto& t, Var x, R&) { return ops::relu(t, x); }});
  c.push_back({"abs", [](R& r) { return random_away_from_zero({5}, r); },
               [](auto& t, Var x, R&) { return ops::abs(t, x); }});
  c.push_back({"add_sub_mul_scale", [](R& r) { return random_tensor({2, 3}, r); },
               [](auto& t, Var x, R& r) {
                 Var k = t.leaf(random_tensor({2, 3}, r));
                 return ops::mul(t, ops::add(t, x, k), ops::sub(t, x, ops::scale(t, k, 0.5)));
               }});
  c.push_back({"mean_sum", [](R& r) { return random_tensor({4, 2}, r); },
               [](auto& t, Var x, R&) { return ops::mul(t, ops::mean(t, x), ops::sum(t, ops::mul(t, x, x))); }});
  c.push_back({"matmul_a", [](R& r) { return random_tensor({3, 4}, r); },
               [](auto& t, Var x, R& r) { return ops::matmul(t, x, t.leaf(random_tensor({4, 2}, r))); }});
  c.push_back({"matmul_b", [](R& r) { return random_tensor({4, 2}, r); },
               [](auto& t, Var x, R& r) { return ops::matmul(t, t.leaf(random_tensor({3, 4}, r)), x); }});
  c.push_back({"dense_x", [](R& r) { return random_tensor({3, 5}, r); },
               [](auto& t, Var x, R& r) {
                 return ops::dense(t, x, t.leaf(random_tensor({2, 5}, r)), t.leaf(random_tensor({2}, r)));
               }});
  c.push_back({"dense_w", [](R& r) { return random_tensor({2, 5}, r); },
               [](auto& t, Var w, R& r) {
                 return ops::dense(t, t.leaf(random_tensor({3, 5}, r)), w, t.leaf(random_tensor({2}, r)));
               }});
  c.push_back({"dense_b", [](R& r) { return random_tensor({2}, r); },
               [](auto& t, Var b, R& r) {
                 return ops::dense(t, t.leaf(random_tensor({3, 5}, r)), t.leaf(random_tensor({2, 5}, r)), b);
               }});
  c.push_back({"conv3d_x", [](R& r) { return random_tensor({2, 2, 4, 4, 4}, r); },
               [](auto& t, Var x, R& r) {
                 return ops::conv3d(t, x, t.leaf(random_tensor({3, 2, 3, 3, 3}, r)), t.leaf(random_tensor({3}, r)),
                                    {2, 1});
               }});
  c.push_back({"conv3d_w", [](R& r) { return random_tensor({3, 2, 3, 3, 3}, r); },
               [](auto& t, Var w, R& r) {
                 return ops::conv3d(t, t.leaf(random_tensor({2, 2, 4, 4, 4}, r)), w, Var{}, {1, 1});
               }});
  c.push_back({"conv3d_b", [](R& r) { return random_tensor({3}, r); },
               [](auto& t, Var b, R& r) {
                 return ops::conv3d(t, t.leaf(random_tensor({1, 2, 4, 4, 4}, r)),
                                    t.leaf(random_tensor({3, 2, 1, 1, 1}, r)), b, {1, 0});
               }});
  c.push_back({"dense_of_conv3d", [](R& r) { return random_tensor({2, 1, 4, 4, 4}, r); },
               [](auto& t, Var x, R& r) {
                 Var h = ops::conv3d(t, x, t.leaf(random_tensor({2, 1, 3, 3, 3}, r)), Var{}, {2, 1});
                 Var f = ops::reshape(t, h, {2, 16});
                 return ops::dense(t, f, t.leaf(random_tensor({3, 16}, r)), t.leaf(random_tensor({3}, r)));
               }});
  auto bn = [](Tape<double>& t, Var x, Var g, Var b) {
    ops::BatchNormStats<double> stats(3);
    return ops::batch_norm(t, x, g, b, stats, {true, 0.9, 1e-5});
  };
  c.push_back({"batch_norm_x", [](R& r) { return random_tensor({3, 3, 2, 2, 2}, r); },
               [bn](auto& t, Var x, R& r) {
                 return bn(t, x, t.leaf(random_tensor({3}, r, 0.5, 1.5)), t.leaf(random_tensor({3}, r)));
               }});
  c.push_back({"batch_norm_gamma", [](R& r) { return random_tensor({3}, r, 0.5, 1.5); },
               [bn](auto& t, Var g, R& r) {
                 return bn(t, t.leaf(random_tensor({3, 3, 2, 2, 2}, r)), g, t.leaf(random_tensor({3}, r)));
               }});
  c.push_back({"batch_norm_beta", [](R& r) { return random_tensor({3}, r); },
               [bn](auto& t, Var b, R& r) {
                 return bn(t, t.leaf(random_tensor({3, 3, 2, 2, 2}, r)), t.leaf(random_tensor({3}, r, 0.5, 1.5)), b);
               }});
  c.push_back({"batch_norm_eval", [](R& r) { return random_tensor({1, 2, 2, 2, 2}, r); },
               [](auto& t, Var x, R& r) {
                 ops::BatchNormStats<double> stats(2);
                 stats.mean = random_tensor({2}, r);
                 stats.var = random_tensor({2}, r, 0.5, 2.0);
                 return ops::batch_norm(t, x, t.leaf(random_tensor({2}, r)), t.leaf(random_tensor({2}, r)), stats,
                                        {false, 0.9, 1e-5});
               }});
  c.push_back({"global_avg_pool", [](R& r) { return random_tensor({2, 3, 2, 3, 2}, r); },
               [](auto& t, Var x, R&) { return ops::global_avg_pool(t, x); }});
  // Distinct values 0.01 apart so no perturbation changes an argmax.
  c.push_back({"max_pool3d",
               [](R& r) {
                 Tensor<double> x({1, 2, 4, 4, 4});
                 std::vector<std::size_t> perm(x.size());
                 std::iota(perm.begin(), perm.end(), 0);
                 std::shuffle(perm.begin(), perm.end(), r);
                 for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(perm[i]);
                 return x;
               },
               [](auto& t, Var x, R&) { return ops::max_pool3d(t, x, 3, 2, 1); }});
  c.push_back({"trilinear_resample", [](R& r) { return random_tensor({1, 2, 2, 3, 4}, r); },
               [](auto& t, Var x, R&) { return ops::trilinear_resample(t, x, {5, 4, 7}); }});
  c.push_back({"l2_normalize", [](R& r) { return random_away_from_zero({4, 5}, r, 0.2); },
               [](auto& t, Var x, R&) { return ops::l2_normalize(t, x); }});
  c.push_back({"pairwise_distance", [](R& r) { return random_tensor({5, 3}, r); },
               [](auto& t, Var x, R&) { return ops::pairwise_distance(t, x); }});
  c.push_back({"subset_logsumexp", [](R& r) { return random_tensor({4, 4}, r, -3.0, 3.0); },
               [](auto& t, Var z, R& r) {
                 ops::SubsetTable sets(16);
                 std::bernoulli_distribution keep(0.6);
                 for (std::size_t i = 0; i < 16; ++i) {
                   for (std::size_t k = 0; k < 4; ++k)
                     if (keep(r)) sets[i].push_back(k);
                   if (sets[i].empty()) sets[i].push_back(i % 4);
                 }
                 return ops::subset_logsumexp(t, z, sets);
               }});
  c.push_back({"reshape_transpose", [](R& r) { return random_tensor({2, 6}, r); },
               [](auto& t, Var x, R&) {
                 Var y = ops::transpose(t, ops::reshape(t, x, {3, 4}));
                 return ops::mul(t, y, y);
               }});
  return c;
}

}  // namespace testing_support
