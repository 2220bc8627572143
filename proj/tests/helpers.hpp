#pragma once

#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "chaosbench/common.hpp"
#include "chaosbench/params.hpp"
#include "chaosbench/tape.hpp"
#include "chaosbench/tensor.hpp"

namespace testutil {

using chaosbench::BoundParams;
using chaosbench::ParameterSet;
using chaosbench::Rng;
using chaosbench::Tape;
using chaosbench::Tensor;
using chaosbench::Var;

// Central finite differences over every element of every parameter.
inline std::vector<Tensor> fd_grads(ParameterSet& p, const std::function<double()>& loss,
                                    double h = 1e-6) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        Tensor g = Tensor::zeros(p.entry(i).value.shape());
        Tensor& v = p.entry(i).value;
        for (std::int64_t j = 0; j < v.numel(); ++j) {
            const double keep = v[j];
            v[j] = keep + h;
            const double up = loss();
            v[j] = keep - h;
            const double dn = loss();
            v[j] = keep;
            g[j] = (up - dn) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline double max_rel_err(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    double worst = 0.0;
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].same_shape(b[i]));
        for (std::int64_t j = 0; j < a[i].numel(); ++j) {
            const double d = std::abs(a[i][j] - b[i][j]);
            const double s = std::max({1.0, std::abs(a[i][j]), std::abs(b[i][j])});
            worst = std::max(worst, d / s);
        }
    }
    return worst;
}

inline Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Checks a scalar graph's parameter gradients against FD.
inline void gradcheck(ParameterSet& p,
                      const std::function<Var(Tape&, const BoundParams&)>& build,
                      double tol = 1e-5) {
    Tape t;
    BoundParams b = chaosbench::bind_params(t, p);
    Var loss = build(t, b);
    t.backward(loss);
    std::vector<Tensor> ad = chaosbench::collect_grads(t, b);
    std::vector<Tensor> fd = fd_grads(p, [&]() {
        Tape t2(false);
        BoundParams b2 = chaosbench::bind_params(t2, p);
        Var l = build(t2, b2);
        return t2.value(l)[0];
    });
    CAPTURE(max_rel_err(ad, fd));
    REQUIRE(max_rel_err(ad, fd) < tol);
}

}  // namespace testutil
