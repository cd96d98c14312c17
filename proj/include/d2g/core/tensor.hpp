#ifndef D2G_CORE_TENSOR_HPP
#define D2G_CORE_TENSOR_HPP

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts unsupported");

namespace d2g {

// Allocation accounting, used by the loss benchmark to report peak memory.
struct MemStats {
    static std::atomic<int64_t>& in_use() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static std::atomic<int64_t>& peak() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static void on_alloc(int64_t bytes) {
        int64_t cur = in_use().fetch_add(bytes) + bytes;
        int64_t p = peak().load();
        while (cur > p && !peak().compare_exchange_weak(p, cur)) {
        }
    }
    static void on_free(int64_t bytes) { in_use().fetch_sub(bytes); }
    static void reset_peak() { peak().store(in_use().load()); }
};

// Dense NCHW tensor of doubles. Shape is fixed at construction.
// Vectors, scalars and embeddings use trailing singleton dims.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w) {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw std::invalid_argument("Tensor: dims must be positive");
        }
        v_.assign(static_cast<size_t>(n) * c * h * w, 0.0);
        MemStats::on_alloc(bytes());
    }
    Tensor(const Tensor& o) : n_(o.n_), c_(o.c_), h_(o.h_), w_(o.w_), v_(o.v_) {
        MemStats::on_alloc(bytes());
    }
    Tensor(Tensor&& o) noexcept { swap(o); }
    Tensor& operator=(const Tensor& o) {
        if (this != &o) {
            Tensor tmp(o);
            swap(tmp);
        }
        return *this;
    }
    Tensor& operator=(Tensor&& o) noexcept {
        swap(o);
        return *this;
    }
    ~Tensor() { MemStats::on_free(bytes()); }

    void swap(Tensor& o) noexcept {
        std::swap(n_, o.n_);
        std::swap(c_, o.c_);
        std::swap(h_, o.h_);
        std::swap(w_, o.w_);
        v_.swap(o.v_);
    }

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
    static Tensor full(int n, int c, int h, int w, double x) {
        Tensor t(n, c, h, w);
        std::fill(t.v_.begin(), t.v_.end(), x);
        return t;
    }
    static Tensor scalar(double x) { return full(1, 1, 1, 1, x); }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    size_t size() const { return v_.size(); }
    int64_t bytes() const { return static_cast<int64_t>(v_.size() * sizeof(double)); }
    bool empty() const { return v_.empty(); }
    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double& operator[](size_t i) { return v_[i]; }
    double operator[](size_t i) const { return v_[i]; }
    double& at(int i, int j, int k, int l) {
        return v_[((static_cast<size_t>(i) * c_ + j) * h_ + k) * w_ + l];
    }
    double at(int i, int j, int k, int l) const {
        return v_[((static_cast<size_t>(i) * c_ + j) * h_ + k) * w_ + l];
    }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }
    void add_(const Tensor& o) {
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    }
    void sub_(const Tensor& o) {
        for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
    }
    void scale_(double k) {
        for (double& x : v_) x *= k;
    }
    void axpy_(double a, const Tensor& o) {
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += a * o.v_[i];
    }

    double sum() const {
        double s = 0;
        for (double x : v_) s += x;
        return s;
    }
    double sq_norm() const {
        double s = 0;
        for (double x : v_) s += x * x;
        return s;
    }
    double rms(const Tensor& o) const {
        double s = 0;
        for (size_t i = 0; i < v_.size(); ++i) {
            double d = v_[i] - o.v_[i];
            s += d * d;
        }
        return std::sqrt(s / static_cast<double>(v_.size()));
    }
    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }
    bool bitwise_equal(const Tensor& o) const {
        return same_shape(o) &&
               std::memcmp(v_.data(), o.v_.data(), v_.size() * sizeof(double)) == 0;
    }

    // f32 round trip used at every serialization boundary.
    std::vector<float> to_f32() const {
        std::vector<float> out(v_.size());
        for (size_t i = 0; i < v_.size(); ++i) out[i] = static_cast<float>(v_[i]);
        return out;
    }
    void from_f32(const float* p) {
        for (size_t i = 0; i < v_.size(); ++i) v_[i] = static_cast<double>(p[i]);
    }
    void round_f32_() {
        for (double& x : v_) x = static_cast<double>(static_cast<float>(x));
    }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> v_;
};

}  // namespace d2g

#endif
