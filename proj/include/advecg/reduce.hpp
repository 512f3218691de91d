#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace advecg {

// Pairwise (midpoint-split) summation. A sequence formed by two identical halves sums to
// exactly twice the sum of one half, which keeps duplicated-batch computations bitwise equal.
double pairwise_sum(std::span<const double> values);

namespace detail {

template <class Leaf>
void pairwise_accumulate_impl(std::size_t begin, std::size_t end, std::span<double> out, Leaf& leaf,
                              std::vector<std::vector<double>>& scratch, std::size_t depth) {
    if (end - begin == 1) {
        leaf(begin, out);
        return;
    }
    const std::size_t mid = begin + (end - begin) / 2;
    pairwise_accumulate_impl(begin, mid, out, leaf, scratch, depth + 1);
    std::vector<double>& tmp = scratch[depth];
    tmp.resize(out.size());
    pairwise_accumulate_impl(mid, end, std::span<double>(tmp), leaf, scratch, depth + 1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tmp[i];
}

}  // namespace detail

// out (+)= sum over i in [0, n) of the vector that leaf(i, dst) writes (overwriting dst), summed
// pairwise. When `accumulate` is true the total is added to the existing contents of `out`.
template <class Leaf>
void pairwise_accumulate(std::size_t n, std::span<double> out, Leaf&& leaf, bool accumulate = true) {
    if (n == 0) return;
    std::size_t depth = 1;
    while ((std::size_t{1} << depth) < n) ++depth;
    std::vector<std::vector<double>> scratch(depth + 2);
    if (!accumulate) {
        detail::pairwise_accumulate_impl(0, n, out, leaf, scratch, 1);
        return;
    }
    std::vector<double> total(out.size());
    detail::pairwise_accumulate_impl(0, n, std::span<double>(total), leaf, scratch, 1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += total[i];
}

}  // namespace advecg
