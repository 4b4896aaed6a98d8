#pragma once

// Radix-2 FFT for power-of-two lengths.
//
// Convention: forward transform is unnormalized,
//   X[k] = sum_n x[n] exp(-2*pi*i*k*n / n_total),
// and the inverse carries the 1/n factor, so inverse(forward(x)) == x.

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace rescomp {

using cplx = std::complex<double>;

/// Precomputed twiddle factors and bit-reversal permutation for one length.
class FftPlan {
  public:
    explicit FftPlan(std::size_t n) : n_(n) {
        if (n == 0 || (n & (n - 1)) != 0)
            throw std::invalid_argument("FftPlan: length must be a power of two, got " +
                                        std::to_string(n));
        int log2n = 0;
        while ((std::size_t(1) << log2n) < n) ++log2n;
        reverse_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (int b = 0; b < log2n; ++b)
                if (i & (std::size_t(1) << b)) r |= std::size_t(1) << (log2n - 1 - b);
            reverse_[i] = r;
        }
        twiddle_.resize(n / 2);
        constexpr double two_pi = 6.283185307179586476925286766559;
        for (std::size_t k = 0; k < n / 2; ++k) {
            double phase = -two_pi * static_cast<double>(k) / static_cast<double>(n);
            twiddle_[k] = cplx(std::cos(phase), std::sin(phase));
        }
    }

    std::size_t size() const { return n_; }

    void forward(std::span<cplx> data) const { transform(data, false); }

    void inverse(std::span<cplx> data) const {
        transform(data, true);
        const double scale = 1.0 / static_cast<double>(n_);
        for (auto& v : data) v *= scale;
    }

  private:
    void transform(std::span<cplx> data, bool conjugate) const {
        if (data.size() != n_)
            throw std::invalid_argument("FftPlan: data length does not match plan");
        for (std::size_t i = 0; i < n_; ++i) {
            std::size_t j = reverse_[i];
            if (i < j) std::swap(data[i], data[j]);
        }
        for (std::size_t len = 2; len <= n_; len <<= 1) {
            const std::size_t half = len >> 1;
            const std::size_t stride = n_ / len;
            for (std::size_t start = 0; start < n_; start += len) {
                for (std::size_t k = 0; k < half; ++k) {
                    cplx w = twiddle_[k * stride];
                    if (conjugate) w = std::conj(w);
                    cplx odd = data[start + k + half] * w;
                    cplx even = data[start + k];
                    data[start + k] = even + odd;
                    data[start + k + half] = even - odd;
                }
            }
        }
    }

    std::size_t n_;
    std::vector<std::size_t> reverse_;
    std::vector<cplx> twiddle_;
};

/// Forward FFT of a real vector; returns the full complex spectrum.
inline std::vector<cplx> fft_real(std::span<const double> x) {
    FftPlan plan(x.size());
    std::vector<cplx> data(x.begin(), x.end());
    plan.forward(data);
    return data;
}

/// Inverse partner of fft_real; returns the real part of the inverse transform.
inline std::vector<double> ifft_real(std::span<const cplx> spectrum) {
    FftPlan plan(spectrum.size());
    std::vector<cplx> data(spectrum.begin(), spectrum.end());
    plan.inverse(data);
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data[i].real();
    return out;
}

}  // namespace rescomp
