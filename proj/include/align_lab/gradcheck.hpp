#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "align_lab/network.hpp"

namespace align_lab {

using LossFn = std::function<double(const LinearNetwork&)>;

/// Central differences (L(W + hE) − L(W − hE)) / 2h for every entry of every layer.
inline std::vector<Matrix> finite_difference_gradients(const LinearNetwork& net, const LossFn& loss, double h = 1e-6) {
    std::vector<Matrix> out;
    out.reserve(net.depth());
    LinearNetwork probe = net;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix g(net.layer(l).rows(), net.layer(l).cols());
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                const double w = net.layer(l)(i, j);
                probe.layer(l)(i, j) = w + h;
                const double up = loss(probe);
                probe.layer(l)(i, j) = w - h;
                const double down = loss(probe);
                probe.layer(l)(i, j) = w;
                g(i, j) = (up - down) / (2.0 * h);
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Largest per-layer error max|a − b| relative to that layer's max|b|
/// (floored at 1e−12 so a zero gradient compares absolutely).
inline double max_relative_error(const std::vector<Matrix>& analytic, const std::vector<Matrix>& numeric) {
    require_shape(analytic.size() == numeric.size(), "max_relative_error: layer count mismatch");
    double worst = 0.0;
    for (std::size_t l = 0; l < analytic.size(); ++l) {
        require_shape(analytic[l].rows() == numeric[l].rows() && analytic[l].cols() == numeric[l].cols(),
                      "max_relative_error: shape mismatch");
        const double scale = std::max(numeric[l].cwiseAbs().maxCoeff(), 1e-12);
        worst = std::max(worst, (analytic[l] - numeric[l]).cwiseAbs().maxCoeff() / scale);
    }
    return worst;
}

} // namespace align_lab
