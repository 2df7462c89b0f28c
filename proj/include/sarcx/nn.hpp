#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "sarcx/types.hpp"

namespace sarcx::nn {

// Row-wise softmax with mandatory row-max subtraction. A row of all -inf (or
// equal entries) degrades to the uniform distribution instead of NaN.
Matrix softmax_rows(const Matrix& scores);

// Given p = softmax_rows(s) and upstream dp, returns ds.
Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp);

Matrix sigmoid(const Matrix& x);

// --- Flat parameter views ----------------------------------------------------
// Modules expose their trainable tensors as named raw views; the optimizer
// and the checkpoint container consume those, so parameter structs stay plain.
struct TensorView {
    std::string name;
    double* data = nullptr;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

inline TensorView view(const std::string& name, Matrix& m) {
    return TensorView{name, m.data(), m.rows(), m.cols()};
}
inline TensorView view(const std::string& name, Vector& v) {
    return TensorView{name, v.data(), v.rows(), 1};
}
inline TensorView view(const std::string& name, double& s) {
    return TensorView{name, &s, 1, 1};
}

// Decoupled-weight-decay adaptive optimizer. Parameter groups (e.g. backbone
// vs graph/fusion) step together with their own learning rates; moment state
// is keyed by tensor name.
class AdamW {
public:
    struct Group {
        std::vector<TensorView> params;
        std::vector<TensorView> grads; // index-aligned with params
        double lr = 1e-3;
    };

    explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 1e-2)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(const std::vector<Group>& groups);
    int steps_taken() const { return t_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    double beta1_, beta2_, eps_, weight_decay_;
    int t_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

} // namespace sarcx::nn
