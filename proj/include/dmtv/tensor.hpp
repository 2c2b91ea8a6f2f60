#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmtv {

// Dense row-major double tensor with shared storage. Copies are shallow;
// use clone() when a private buffer is needed.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)) {
        data_ = std::make_shared<std::vector<double>>(numel_from_shape(shape_), 0.0);
    }
    Tensor(std::vector<int64_t> shape, double fill)
        : shape_(std::move(shape)) {
        data_ = std::make_shared<std::vector<double>>(numel_from_shape(shape_), fill);
    }

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor({1}, v); }
    static Tensor from_vector(std::vector<int64_t> shape, std::vector<double> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (static_cast<int64_t>(values.size()) != numel_from_shape(t.shape_))
            throw std::invalid_argument("Tensor::from_vector: size mismatch");
        t.data_ = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t shape(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const std::vector<int64_t>& shape() const { return shape_; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    // New buffer, same contents.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    // Same buffer, new shape (must preserve numel).
    Tensor reshaped(std::vector<int64_t> shape) const {
        if (numel_from_shape(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: numel mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(double v) { for (auto& x : *data_) x = v; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static int64_t numel_from_shape(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("negative dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::string r = "[";
        for (size_t i = 0; i < s.size(); ++i) {
            r += std::to_string(s[i]);
            if (i + 1 < s.size()) r += ",";
        }
        return r + "]";
    }

private:
    std::vector<int64_t> shape_;
    std::shared_ptr<std::vector<double>> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
bool all_finite(const Tensor& a);

}  // namespace dmtv
