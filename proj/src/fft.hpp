// SPDX-License-Identifier: Apache-2.0
//
// Thin RAII wrapper over FFTW real transforms. Plans are created with
// FFTW_ESTIMATE so the chosen algorithm (and therefore every output bit)
// does not depend on timing measurements.
#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>
#include <vector>

namespace phiotdr::detail {

inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n)
    {
        std::vector<double> in(n);
        std::vector<std::complex<double>> out(n / 2 + 1);
        std::lock_guard lock(fftw_planner_mutex());
        forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                        FFTW_ESTIMATE | FFTW_UNALIGNED);
        inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(out.data()), in.data(),
                                        FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;
    ~RealFft()
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
    }

    std::size_t size() const noexcept { return n_; }
    std::size_t bins() const noexcept { return n_ / 2 + 1; }

    /// Unnormalised forward transform; `in` is preserved.
    void forward(std::span<const double> in, std::span<std::complex<double>> out) const
    {
        fftw_execute_dft_r2c(forward_, const_cast<double*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()));
    }

    /// Unnormalised inverse (scale by 1/n yourself); `in` is destroyed.
    void inverse(std::span<std::complex<double>> in, std::span<double> out) const
    {
        fftw_execute_dft_c2r(inverse_, reinterpret_cast<fftw_complex*>(in.data()), out.data());
    }

private:
    std::size_t n_;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

}  // namespace phiotdr::detail
