#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace regstream {

// Standard interleaved sine/cosine positional encoding. Time indices are
// 1-based; time t maps to position t-1, so the first frame gets sin(0)=0 on
// even entries and cos(0)=1 on odd entries. Computed in double and cast so
// float and double paths agree on the same values.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sinusoidal_pe(int time, int width) {
    if (time < 1) throw std::invalid_argument("sinusoidal_pe: time must be >= 1");
    if (width < 1) throw std::invalid_argument("sinusoidal_pe: width must be >= 1");
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> pe(width);
    const double pos = static_cast<double>(time - 1);
    for (int k = 0; k < width; k += 2) {
        const double freq = std::pow(10000.0, static_cast<double>(k) / width);
        pe(k) = static_cast<Scalar>(std::sin(pos / freq));
        if (k + 1 < width) pe(k + 1) = static_cast<Scalar>(std::cos(pos / freq));
    }
    return pe;
}

// One row per entry of `times`; entries <= 0 (register slots) get a zero row.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pe_rows(const std::vector<int>& times,
                                                              int width) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pe =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(
            static_cast<int>(times.size()), width);
    for (std::size_t r = 0; r < times.size(); ++r)
        if (times[r] >= 1) pe.row(r) = sinusoidal_pe<Scalar>(times[r], width);
    return pe;
}

}  // namespace regstream
