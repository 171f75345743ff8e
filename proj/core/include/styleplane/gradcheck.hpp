#pragma once

#include <functional>
#include <string>
#include <vector>

#include "styleplane/ops.hpp"
#include "styleplane/rng.hpp"

namespace styleplane {

// A gradcheck case builds a scalar loss from a vector of leaf inputs. The
// analytic gradient from backward() is compared against central finite
// differences over every input element.
template <class T>
struct GradCheckCase {
    std::string name;
    std::vector<Tensor<T>> inputs;
    std::function<Var<T>(std::vector<Var<T>>&)> build;
};

template <class T>
struct GradCheckResult {
    std::string name;
    T max_rel_err = 0;
    bool pass = false;
};

template <class T>
GradCheckResult<T> run_gradcheck(const GradCheckCase<T>& c, T h, T tol) {
    std::vector<Var<T>> leaves;
    leaves.reserve(c.inputs.size());
    for (const auto& t : c.inputs) leaves.push_back(Var<T>::leaf(t));

    auto eval = [&](std::vector<Var<T>>& ls) { return c.build(ls).value()[0]; };

    Var<T> loss = c.build(leaves);
    backward(loss);

    GradCheckResult<T> res{c.name, T(0), false};
    for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
        const std::size_t n = leaves[pi].value().numel();
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Var<T>> lp, lm;
            for (std::size_t k = 0; k < c.inputs.size(); ++k) {
                lp.push_back(Var<T>::leaf(c.inputs[k]));
                lm.push_back(Var<T>::leaf(c.inputs[k]));
            }
            lp[pi].mutable_value()[i] += h;
            lm[pi].mutable_value()[i] -= h;
            const T fd = (eval(lp) - eval(lm)) / (T(2) * h);
            const T an = leaves[pi].has_grad() ? leaves[pi].grad()[i] : T(0);
            const T denom = std::max({T(1), std::abs(fd), std::abs(an)});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

// The registry of differentiable operations checked by cmd_gradcheck and the
// acceptance suite. Every op with a hand-written backward appears here.
template <class T>
std::vector<GradCheckCase<T>> standard_op_cases(std::uint64_t seed) {
    namespace o = ops;
    Rng rng(seed);
    auto rnd = [&rng](std::vector<int> shape, T scale = T(1)) {
        return Tensor<T>::randn(std::move(shape), rng, scale);
    };

    std::vector<GradCheckCase<T>> cases;
    auto probe = [](Var<T> v) {
        // weight the output elements unevenly so symmetric errors cannot cancel
        Rng wr(7);
        Tensor<T> w = Tensor<T>::uniform(v.value().shape(), wr, T(0.25), T(1.75));
        return o::sum(o::mul(v, Var<T>::constant(w)));
    };

    cases.push_back({"add", {rnd({3, 4}), rnd({3, 4})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::add(l[0], l[1])); }});
    cases.push_back({"sub", {rnd({3, 4}), rnd({3, 4})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::sub(l[0], l[1])); }});
    cases.push_back({"mul", {rnd({3, 4}), rnd({3, 4})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::mul(l[0], l[1])); }});
    cases.push_back({"scale", {rnd({2, 5})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::scale(l[0], T(-1.7))); }});
    cases.push_back({"exp", {rnd({2, 3}, T(0.5))},
                     [probe](std::vector<Var<T>>& l) { return probe(o::vexp(l[0])); }});
    cases.push_back({"abs", {rnd({2, 6})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::vabs(l[0])); }});
    cases.push_back({"leaky_relu", {rnd({4, 4})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::leaky_relu(l[0], T(0.2))); }});
    cases.push_back({"softplus", {rnd({3, 3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::softplus(l[0])); }});
    cases.push_back({"sigmoid", {rnd({3, 3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::vsigmoid(l[0])); }});
    cases.push_back({"tanh", {rnd({3, 3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::vtanh(l[0])); }});
    cases.push_back({"mean", {rnd({3, 5})},
                     [](std::vector<Var<T>>& l) { return o::mean(o::mul(l[0], l[0])); }});
    cases.push_back({"reshape", {rnd({2, 6})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::reshape(l[0], {3, 4})); }});
    cases.push_back({"slice_channels", {rnd({4, 3, 3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::slice_channels(l[0], 1, 3)); }});
    cases.push_back({"matmul", {rnd({3, 4}), rnd({4, 2})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::matmul(l[0], l[1])); }});
    cases.push_back({"linear", {rnd({3, 4}), rnd({4, 2}), rnd({2})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::linear(l[0], l[1], l[2])); }});
    cases.push_back({"conv2d", {rnd({2, 5, 5}), rnd({3, 2, 3, 3}), rnd({3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::conv2d(l[0], l[1], l[2], 1, 1)); }});
    cases.push_back(
        {"conv2d_strided", {rnd({2, 6, 6}), rnd({3, 2, 3, 3}), rnd({3})},
         [probe](std::vector<Var<T>>& l) { return probe(o::conv2d(l[0], l[1], l[2], 2, 1)); }});
    cases.push_back({"channel_norm", {rnd({6, 3, 3})}, [probe](std::vector<Var<T>>& l) {
                         return probe(o::channel_norm(l[0], T(1e-5)).normalized);
                     }});
    cases.push_back({"scale_site", {rnd({4, 3, 3}), rnd({1, 3, 3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::scale_site(l[0], l[1])); }});
    cases.push_back({"shift_site", {rnd({4, 3, 3}), rnd({1, 3, 3})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::shift_site(l[0], l[1])); }});
    {
        Rng cr(seed ^ 0x55);
        Tensor<T> coords = Tensor<T>::uniform({6, 2}, cr, T(-0.9), T(0.9));
        cases.push_back({"bilinear_sample", {rnd({3, 5, 5}), coords},
                         [probe](std::vector<Var<T>>& l) { return probe(o::bilinear_sample(l[0], l[1])); }});
    }
    cases.push_back({"resize_bilinear_up", {rnd({2, 4, 4})}, [probe](std::vector<Var<T>>& l) {
                         return probe(o::resize_bilinear(l[0], 7, 7));
                     }});
    cases.push_back({"resize_bilinear_down", {rnd({2, 6, 6})}, [probe](std::vector<Var<T>>& l) {
                         return probe(o::resize_bilinear(l[0], 3, 3));
                     }});
    cases.push_back({"avg_pool2", {rnd({2, 4, 4})},
                     [probe](std::vector<Var<T>>& l) { return probe(o::avg_pool2(l[0])); }});
    {
        const int h = 2, w = 2, S = 4;
        Rng sr(seed ^ 0x99);
        Tensor<T> sig({h * w * S});
        for (auto& v : sig.vec()) v = static_cast<T>(sr.uniform(0.05, 2.0));
        Tensor<T> col = Tensor<T>::uniform({h * w * S, 3}, sr, T(0), T(1));
        Tensor<T> depths({S});
        for (int j = 0; j < S; ++j) depths[j] = T(2) + T(0.3) * static_cast<T>(j);
        cases.push_back({"composite_rays", {sig, col}, [depths, h, w](std::vector<Var<T>>& l) {
                             auto res = o::composite_rays(l[0], l[1], depths, T(0.3), h, w,
                                                          {T(0.5), T(0.5), T(0.5)}, T(3.4));
                             Rng wr(11);
                             Tensor<T> mask = Tensor<T>::uniform(res.image.value().shape(), wr, T(0.25), T(1.75));
                             return o::sum(o::mul(res.image, Var<T>::constant(mask)));
                         }});
    }
    return cases;
}

}  // namespace styleplane
