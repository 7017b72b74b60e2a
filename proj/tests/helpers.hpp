#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "iyolo/rng.hpp"
#include "iyolo/tensor.hpp"

namespace testutil {

template <typename T>
iyolo::TensorT<T> random_tensor(int c, int h, int w, iyolo::Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
    iyolo::TensorT<T> t(c, h, w);
    for (T& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline std::filesystem::path temp_dir() {
    static const std::filesystem::path dir = [] {
        std::filesystem::path p =
            std::filesystem::temp_directory_path() / "iyolo_tests";
        std::filesystem::create_directories(p);
        return p;
    }();
    return dir;
}

inline std::string temp_path(const std::string& name) {
    return (temp_dir() / name).string();
}

// Central-difference comparison for one scalar parameter. Points where the
// full-step and half-step estimates split sit on a kink (leaky hinge, pool
// argmax) and are skipped; central differences are meaningless there.
struct FdStats {
    double max_rel = 0;
    int checked = 0;
    int skipped = 0;
};

template <typename Eval>
void fd_one(double& theta, double analytic, const Eval& eval, FdStats& st, double h = 1e-3) {
    const double saved = theta;
    theta = saved + h;
    const double up = eval();
    theta = saved - h;
    const double down = eval();
    theta = saved + h / 2;
    const double up2 = eval();
    theta = saved - h / 2;
    const double down2 = eval();
    theta = saved;

    const double full = (up - down) / (2 * h);
    const double half = (up2 - down2) / h;
    if (std::fabs(full - half) > 5e-4 * std::max({std::fabs(full), std::fabs(half), 1e-2})) {
        ++st.skipped;
        return;
    }
    const double rel =
        std::fabs(analytic - full) / std::max({std::fabs(analytic), std::fabs(full), 1e-2});
    ++st.checked;
    st.max_rel = std::max(st.max_rel, rel);
}

}  // namespace testutil
