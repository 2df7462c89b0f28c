#include "sarcx/nn.hpp"

#include <cmath>
#include <limits>

#include "sarcx/error.hpp"

namespace sarcx::nn {

Matrix softmax_rows(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double row_max = scores.row(r).maxCoeff();
        if (!std::isfinite(row_max)) {
            // All keys masked (or degenerate input): fall back to uniform so
            // degenerate sequences still decode instead of propagating NaN.
            out.row(r).setConstant(1.0 / static_cast<double>(scores.cols()));
            continue;
        }
        Eigen::ArrayXd e = (scores.row(r).array() - row_max).exp();
        out.row(r) = (e / e.sum()).matrix();
    }
    return out;
}

Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
    // ds_ij = p_ij * (dp_ij - sum_k dp_ik p_ik)
    const Vector row_dot = (dp.array() * p.array()).rowwise().sum();
    return (p.array() * (dp.array().colwise() - row_dot.array())).matrix();
}

Matrix sigmoid(const Matrix& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

void AdamW::step(const std::vector<Group>& groups) {
    ++t_;
    const double bias1 = 1.0 - std::pow(beta1_, t_);
    const double bias2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& group : groups) {
        if (group.params.size() != group.grads.size()) {
            throw UsageError("AdamW: param/grad view count mismatch");
        }
        for (std::size_t i = 0; i < group.params.size(); ++i) {
            const TensorView& p = group.params[i];
            const TensorView& g = group.grads[i];
            if (p.size() != g.size()) {
                throw UsageError("AdamW: shape mismatch for \"" + p.name + "\"");
            }
            Moments& mom = state_[p.name];
            if (mom.m.size() != p.size()) {
                mom.m.assign(p.size(), 0.0);
                mom.v.assign(p.size(), 0.0);
            }
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double grad = g.data[k];
                mom.m[k] = beta1_ * mom.m[k] + (1.0 - beta1_) * grad;
                mom.v[k] = beta2_ * mom.v[k] + (1.0 - beta2_) * grad * grad;
                const double m_hat = mom.m[k] / bias1;
                const double v_hat = mom.v[k] / bias2;
                p.data[k] -=
                    group.lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * p.data[k]);
            }
        }
    }
}

} // namespace sarcx::nn
