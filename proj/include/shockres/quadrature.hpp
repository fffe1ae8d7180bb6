#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

namespace shockres::quad {

struct Result {
  double value = 0.0;
  double abs_error = 0.0;
  int evaluations = 0;
  int intervals = 0;
  bool converged = false;
};

namespace detail {

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
inline constexpr std::array<double, 11> kXgk = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};
inline constexpr std::array<double, 11> kWgk = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600525452125, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};
inline constexpr std::array<double, 5> kWg = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

template <class F>
Segment gk21(F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kWgk[10];
  double gauss = 0.0;
  double abs_k = std::abs(kronrod);
  std::array<double, 10> f1{}, f2{};
  for (int k = 0; k < 10; ++k) {
    const double dx = half * kXgk[k];
    f1[k] = f(center - dx);
    f2[k] = f(center + dx);
    kronrod += kWgk[k] * (f1[k] + f2[k]);
    abs_k += kWgk[k] * (std::abs(f1[k]) + std::abs(f2[k]));
    if (k % 2 == 1) gauss += kWg[k / 2] * (f1[k] + f2[k]);
  }
  const double mean = 0.5 * kronrod;
  double asc = kWgk[10] * std::abs(fc - mean);
  for (int k = 0; k < 10; ++k) asc += kWgk[k] * (std::abs(f1[k] - mean) + std::abs(f2[k] - mean));
  const double result = kronrod * half;
  asc *= std::abs(half);
  abs_k *= std::abs(half);
  double err = std::abs((kronrod - gauss) * half);
  if (asc != 0.0 && err != 0.0) err = asc * std::min(1.0, std::pow(200.0 * err / asc, 1.5));
  const double eps = std::numeric_limits<double>::epsilon();
  if (abs_k > std::numeric_limits<double>::min() / (50.0 * eps)) err = std::max(50.0 * eps * abs_k, err);
  return {a, b, result, err};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (21-point) integration of f over [a, b].
/// The interval with the largest error estimate is bisected until the total
/// error is below max(abs_tol, rel_tol * |integral|) or the interval budget
/// is spent; `converged` reports which.
template <class F>
Result integrate(F&& f, double a, double b, double rel_tol = 1e-8, double abs_tol = 0.0, int max_intervals = 500) {
  Result out;
  if (a == b) {
    out.converged = true;
    return out;
  }
  std::priority_queue<detail::Segment> heap;
  heap.push(detail::gk21(f, a, b));
  out.evaluations = 21;
  double total = heap.top().value;
  double error = heap.top().error;
  int intervals = 1;
  while (error > std::max(abs_tol, rel_tol * std::abs(total)) && intervals < max_intervals) {
    const detail::Segment worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {  // interval exhausted in floating point
      heap.push(worst);
      break;
    }
    const detail::Segment left = detail::gk21(f, worst.a, mid);
    const detail::Segment right = detail::gk21(f, mid, worst.b);
    out.evaluations += 42;
    total += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++intervals;
  }
  // Re-sum to shed the drift accumulated by the running updates.
  total = 0.0;
  error = 0.0;
  while (!heap.empty()) {
    total += heap.top().value;
    error += heap.top().error;
    heap.pop();
  }
  out.value = total;
  out.abs_error = error;
  out.intervals = intervals;
  out.converged = error <= std::max(abs_tol, rel_tol * std::abs(total)) * (1.0 + 1e-12);
  return out;
}

}  // namespace shockres::quad
