// SPDX-License-Identifier: Apache-2.0
#pragma once

// Thin RAII layer over FFTW for batched 1-D transforms in float or double.
// Planning is serialized through a process-wide mutex (the FFTW planner is not
// re-entrant); executing distinct plans concurrently is safe.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace bisense::fft {

inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

template <typename Real>
struct Fftw;

template <>
struct Fftw<double> {
    using complex_type = fftw_complex;
    using plan_type = fftw_plan;
    static complex_type* alloc(std::size_t n) { return fftw_alloc_complex(n); }
    static void free(void* p) { fftw_free(p); }
    static plan_type plan_many(int n, int howmany, complex_type* in, int istride, int idist, complex_type* out,
                               int ostride, int odist, int sign, unsigned flags) {
        return fftw_plan_many_dft(1, &n, howmany, in, nullptr, istride, idist, out, nullptr, ostride, odist, sign,
                                  flags);
    }
    static void execute(plan_type p) { fftw_execute(p); }
    static void destroy(plan_type p) { fftw_destroy_plan(p); }
};

template <>
struct Fftw<float> {
    using complex_type = fftwf_complex;
    using plan_type = fftwf_plan;
    static complex_type* alloc(std::size_t n) { return fftwf_alloc_complex(n); }
    static void free(void* p) { fftwf_free(p); }
    static plan_type plan_many(int n, int howmany, complex_type* in, int istride, int idist, complex_type* out,
                               int ostride, int odist, int sign, unsigned flags) {
        return fftwf_plan_many_dft(1, &n, howmany, in, nullptr, istride, idist, out, nullptr, ostride, odist, sign,
                                   flags);
    }
    static void execute(plan_type p) { fftwf_execute(p); }
    static void destroy(plan_type p) { fftwf_destroy_plan(p); }
};

/// SIMD-aligned complex buffer, zero-initialized.
template <typename Real>
class Buffer {
public:
    explicit Buffer(std::size_t n) : size_(n), data_(Fftw<Real>::alloc(n)) {
        if (data_ == nullptr) throw std::bad_alloc();
        std::fill(begin(), end(), std::complex<Real>{});
    }
    Buffer(const Buffer&) = delete;
    Buffer& operator=(const Buffer&) = delete;
    Buffer(Buffer&& o) noexcept : size_(o.size_), data_(o.data_) { o.data_ = nullptr; o.size_ = 0; }
    ~Buffer() { if (data_) Fftw<Real>::free(data_); }

    std::size_t size() const { return size_; }
    auto* raw() { return data_; }
    std::complex<Real>* begin() { return reinterpret_cast<std::complex<Real>*>(data_); }
    std::complex<Real>* end() { return begin() + size_; }
    const std::complex<Real>* begin() const { return reinterpret_cast<const std::complex<Real>*>(data_); }
    std::complex<Real>& operator[](std::size_t i) { return begin()[i]; }
    const std::complex<Real>& operator[](std::size_t i) const { return begin()[i]; }

private:
    std::size_t size_;
    typename Fftw<Real>::complex_type* data_;
};

/// Owned plan for a fixed pair of buffers.
template <typename Real>
class Plan {
public:
    Plan() = default;
    Plan(int n, int howmany, Buffer<Real>& in, int istride, int idist, Buffer<Real>& out, int ostride, int odist,
         int sign, unsigned flags = FFTW_ESTIMATE) {
        std::lock_guard lock(planner_mutex());
        plan_ = Fftw<Real>::plan_many(n, howmany, in.raw(), istride, idist, out.raw(), ostride, odist, sign,
                                      flags);
        if (plan_ == nullptr) throw std::runtime_error("FFTW planning failed");
    }
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;
    Plan(Plan&& o) noexcept : plan_(o.plan_) { o.plan_ = nullptr; }
    Plan& operator=(Plan&& o) noexcept {
        std::swap(plan_, o.plan_);
        return *this;
    }
    ~Plan() {
        if (plan_) {
            std::lock_guard lock(planner_mutex());
            Fftw<Real>::destroy(plan_);
        }
    }
    void execute() const { Fftw<Real>::execute(plan_); }
    explicit operator bool() const { return plan_ != nullptr; }

private:
    typename Fftw<Real>::plan_type plan_ = nullptr;
};

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

} // namespace bisense::fft
