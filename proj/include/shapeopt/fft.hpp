#pragma once

// Thin RAII layer over FFTW. Plans are created with FFTW_ESTIMATE so the chosen
// algorithm (and hence every output bit) does not depend on timing. Planning
// is not thread-safe in FFTW and is serialized here; execution is.

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>

#include <fftw3.h>

namespace shapeopt::fft {

using cplx = std::complex<double>;

namespace detail {
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
struct fftw_free_deleter {
  void operator()(cplx* p) const noexcept { fftw_free(p); }
};
}  // namespace detail

/// Complex buffer with FFTW alignment.
class Buffer {
 public:
  Buffer() = default;
  explicit Buffer(std::size_t n)
      : n_(n), data_(reinterpret_cast<cplx*>(fftw_alloc_complex(n))) {
    if (n && !data_) throw std::bad_alloc();
    for (std::size_t i = 0; i < n; ++i) data_.get()[i] = 0.0;
  }
  Buffer(const Buffer& o) : Buffer(o.n_) {
    for (std::size_t i = 0; i < n_; ++i) data_.get()[i] = o.data_.get()[i];
  }
  Buffer& operator=(const Buffer& o) {
    if (this != &o) {
      Buffer t(o);
      *this = std::move(t);
    }
    return *this;
  }
  Buffer(Buffer&&) noexcept = default;
  Buffer& operator=(Buffer&&) noexcept = default;

  std::size_t size() const noexcept { return n_; }
  cplx* data() noexcept { return data_.get(); }
  const cplx* data() const noexcept { return data_.get(); }
  cplx& operator[](std::size_t i) noexcept { return data_.get()[i]; }
  const cplx& operator[](std::size_t i) const noexcept { return data_.get()[i]; }
  std::span<cplx> span() noexcept { return {data(), n_}; }
  std::span<const cplx> span() const noexcept { return {data(), n_}; }
  cplx* begin() noexcept { return data(); }
  cplx* end() noexcept { return data() + n_; }

 private:
  std::size_t n_ = 0;
  std::unique_ptr<cplx, detail::fftw_free_deleter> data_;
};

/// In-place 1D transform pair of fixed length. backward() includes the 1/N
/// factor so backward(forward(x)) == x.
class Plan {
 public:
  explicit Plan(std::size_t n) : n_(n), scratch_(n) {
    std::lock_guard lock(detail::planner_mutex());
    auto* p = reinterpret_cast<fftw_complex*>(scratch_.data());
    fwd_ = fftw_plan_dft_1d(static_cast<int>(n), p, p, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_1d(static_cast<int>(n), p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    if (!fwd_ || !bwd_) throw std::runtime_error("FFTW planning failed");
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    std::lock_guard lock(detail::planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  std::size_t size() const noexcept { return n_; }

  void forward(Buffer& b) const {
    check(b);
    auto* p = reinterpret_cast<fftw_complex*>(b.data());
    fftw_execute_dft(fwd_, p, p);
  }
  void backward(Buffer& b) const {
    check(b);
    auto* p = reinterpret_cast<fftw_complex*>(b.data());
    fftw_execute_dft(bwd_, p, p);
    const double s = 1.0 / static_cast<double>(n_);
    for (auto& v : b) v *= s;
  }

 private:
  void check(const Buffer& b) const {
    if (b.size() != n_) throw std::invalid_argument("FFT buffer length mismatch");
  }
  std::size_t n_;
  Buffer scratch_;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

/// Signed frequency (Hz) of DFT bin m for length n at sample rate fs.
inline double bin_frequency(std::size_t m, std::size_t n, double fs) {
  const auto mi = static_cast<double>(m);
  const auto ni = static_cast<double>(n);
  return (m < (n + 1) / 2 ? mi : mi - ni) * fs / ni;
}

}  // namespace shapeopt::fft
