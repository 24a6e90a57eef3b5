#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dsn/common.hpp"

// Minimal CPU training stack: conv / maxpool / dense with explicit backward
// passes, softmax-based losses and Adam. Templated on the scalar so the same
// code runs in float for training and in double for finite-difference checks.
namespace dsn::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Vector<S, Eigen::Dynamic>;

struct Shape3 {
    int h = 0, w = 0, c = 0;
    Eigen::Index size() const { return static_cast<Eigen::Index>(h) * w * c; }
    bool operator==(const Shape3&) const = default;
};

template <class S>
struct ParamRef {
    std::string name;
    Mat<S>* value;
    Mat<S>* grad;
};

// Activations are matrices with one flattened CHW image (or feature vector)
// per column.
template <class S>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Mat<S> forward(const Mat<S>& x) = 0;
    virtual Mat<S> backward(const Mat<S>& dy) = 0;  // accumulates param grads
    virtual std::vector<ParamRef<S>> params() { return {}; }
    virtual std::unique_ptr<Layer<S>> clone() const = 0;
    virtual std::string kind() const = 0;
    virtual Shape3 out_shape() const = 0;
    virtual void drop_cache() {}
};

template <class S>
class Conv2D final : public Layer<S> {
public:
    // "same" padding, stride 1.
    Conv2D(std::string name, Shape3 in, int out_channels, int ksize, bool relu)
        : name_(std::move(name)), in_(in), k_(ksize), relu_(relu) {
        if (ksize % 2 == 0) throw shape_error("conv filter size must be odd for same padding");
        out_ = {in.h, in.w, out_channels};
        weight_.resize(out_channels, static_cast<Eigen::Index>(in.c) * k_ * k_);
        bias_.resize(out_channels, 1);
        dweight_ = Mat<S>::Zero(weight_.rows(), weight_.cols());
        dbias_ = Mat<S>::Zero(bias_.rows(), 1);
    }

    Mat<S> forward(const Mat<S>& x) override {
        check_input(x);
        const Eigen::Index batch = x.cols();
        im2col(x, cols_);
        // cols_ is (ohw*B, ic*k^2); one gemm, then contiguous per-image copies.
        const Eigen::Index ohw = static_cast<Eigen::Index>(out_.h) * out_.w;
        Mat<S> y_all(ohw * batch, out_.c);
        y_all.noalias() = cols_ * weight_.transpose();
        y_all.array().rowwise() += bias_.col(0).transpose().array();
        Mat<S> y(out_.size(), batch);
        for (Eigen::Index b = 0; b < batch; ++b)
            Eigen::Map<Mat<S>>(y.col(b).data(), ohw, out_.c) =
                y_all.middleRows(b * ohw, ohw);
        if (relu_) {
            mask_ = (y.array() > S(0)).template cast<S>();
            y = y.cwiseProduct(mask_);
        }
        batch_ = batch;
        return y;
    }

    Mat<S> backward(const Mat<S>& dy_in) override {
        Mat<S> dy = relu_ ? dy_in.cwiseProduct(mask_).eval() : dy_in;
        const Eigen::Index ohw = static_cast<Eigen::Index>(out_.h) * out_.w;
        Mat<S> dy_all(ohw * batch_, out_.c);
        for (Eigen::Index b = 0; b < batch_; ++b)
            dy_all.middleRows(b * ohw, ohw) =
                Eigen::Map<const Mat<S>>(dy.col(b).data(), ohw, out_.c);
        dweight_.noalias() += dy_all.transpose() * cols_;
        dbias_.col(0) += dy_all.colwise().sum().transpose();
        Mat<S> dcols(cols_.rows(), cols_.cols());
        dcols.noalias() = dy_all * weight_;
        Mat<S> dx = Mat<S>::Zero(in_.size(), batch_);
        col2im(dcols, dx);
        return dx;
    }

    std::vector<ParamRef<S>> params() override {
        return {{name_ + ".weight", &weight_, &dweight_},
                {name_ + ".bias", &bias_, &dbias_}};
    }

    std::unique_ptr<Layer<S>> clone() const override {
        auto c = std::make_unique<Conv2D<S>>(name_, in_, out_.c, k_, relu_);
        c->weight_ = weight_;
        c->bias_ = bias_;
        return c;
    }

    std::string kind() const override { return "conv"; }
    Shape3 out_shape() const override { return out_; }
    void drop_cache() override {
        cols_.resize(0, 0);
        mask_.resize(0, 0);
    }

private:
    void check_input(const Mat<S>& x) const {
        if (x.rows() != in_.size())
            throw shape_error("conv input rows " + std::to_string(x.rows()) +
                              " != " + std::to_string(in_.size()));
    }

    // Patch matrix layout: row (b*ohw + pixel), column (c*k + ki)*k + kj, so
    // both the writes here and the gemm against it stream contiguously.
    void im2col(const Mat<S>& x, Mat<S>& cols) const {
        const int pad = (k_ - 1) / 2;
        const Eigen::Index ohw = static_cast<Eigen::Index>(out_.h) * out_.w;
        cols.setZero(ohw * x.cols(), static_cast<Eigen::Index>(in_.c) * k_ * k_);
        for (Eigen::Index b = 0; b < x.cols(); ++b) {
            const S* xp = x.col(b).data();
            for (int c = 0; c < in_.c; ++c)
                for (int ki = 0; ki < k_; ++ki)
                    for (int kj = 0; kj < k_; ++kj) {
                        const Eigen::Index r = (static_cast<Eigen::Index>(c) * k_ + ki) * k_ + kj;
                        for (int oi = 0; oi < out_.h; ++oi) {
                            const int ii = oi + ki - pad;
                            if (ii < 0 || ii >= in_.h) continue;
                            const int j0 = std::max(0, pad - kj);
                            const int j1 = std::min(out_.w, in_.w + pad - kj);
                            if (j0 >= j1) continue;
                            const S* src = xp + (static_cast<Eigen::Index>(c) * in_.h + ii) * in_.w +
                                           (j0 + kj - pad);
                            S* dst = &cols(b * ohw + static_cast<Eigen::Index>(oi) * out_.w + j0, r);
                            for (int oj = j0; oj < j1; ++oj) *dst++ = *src++;
                        }
                    }
        }
    }

    void col2im(const Mat<S>& dcols, Mat<S>& dx) const {
        const int pad = (k_ - 1) / 2;
        const Eigen::Index ohw = static_cast<Eigen::Index>(out_.h) * out_.w;
        for (Eigen::Index b = 0; b < dx.cols(); ++b) {
            S* xp = dx.col(b).data();
            for (int c = 0; c < in_.c; ++c)
                for (int ki = 0; ki < k_; ++ki)
                    for (int kj = 0; kj < k_; ++kj) {
                        const Eigen::Index r = (static_cast<Eigen::Index>(c) * k_ + ki) * k_ + kj;
                        for (int oi = 0; oi < out_.h; ++oi) {
                            const int ii = oi + ki - pad;
                            if (ii < 0 || ii >= in_.h) continue;
                            const int j0 = std::max(0, pad - kj);
                            const int j1 = std::min(out_.w, in_.w + pad - kj);
                            if (j0 >= j1) continue;
                            S* dst = xp + (static_cast<Eigen::Index>(c) * in_.h + ii) * in_.w +
                                     (j0 + kj - pad);
                            const S* src =
                                &dcols(b * ohw + static_cast<Eigen::Index>(oi) * out_.w + j0, r);
                            for (int oj = j0; oj < j1; ++oj) *dst++ += *src++;
                        }
                    }
        }
    }

    std::string name_;
    Shape3 in_, out_;
    int k_;
    bool relu_;
    Mat<S> weight_, bias_, dweight_, dbias_;
    Mat<S> cols_, mask_;
    Eigen::Index batch_ = 0;
};

template <class S>
class MaxPool2x2 final : public Layer<S> {
public:
    explicit MaxPool2x2(Shape3 in) : in_(in) {
        if (in.h % 2 != 0 || in.w % 2 != 0)
            throw shape_error("2x2 maxpool requires even spatial dims");
        out_ = {in.h / 2, in.w / 2, in.c};
    }

    Mat<S> forward(const Mat<S>& x) override {
        if (x.rows() != in_.size()) throw shape_error("maxpool input shape mismatch");
        const Eigen::Index batch = x.cols();
        Mat<S> y(out_.size(), batch);
        argmax_.resize(static_cast<std::size_t>(out_.size()) * static_cast<std::size_t>(batch));
        for (Eigen::Index b = 0; b < batch; ++b) {
            const S* xp = x.col(b).data();
            S* yp = y.col(b).data();
            for (int c = 0; c < in_.c; ++c)
                for (int oi = 0; oi < out_.h; ++oi)
                    for (int oj = 0; oj < out_.w; ++oj) {
                        Eigen::Index best = -1;
                        S bv = S(0);
                        for (int di = 0; di < 2; ++di)
                            for (int dj = 0; dj < 2; ++dj) {
                                Eigen::Index idx =
                                    (static_cast<Eigen::Index>(c) * in_.h + 2 * oi + di) * in_.w +
                                    2 * oj + dj;
                                if (best < 0 || xp[idx] > bv) {
                                    best = idx;
                                    bv = xp[idx];
                                }
                            }
                        Eigen::Index o = (static_cast<Eigen::Index>(c) * out_.h + oi) * out_.w + oj;
                        yp[o] = bv;
                        argmax_[static_cast<std::size_t>(b * out_.size() + o)] = best;
                    }
        }
        batch_ = batch;
        return y;
    }

    Mat<S> backward(const Mat<S>& dy) override {
        Mat<S> dx = Mat<S>::Zero(in_.size(), batch_);
        for (Eigen::Index b = 0; b < batch_; ++b)
            for (Eigen::Index o = 0; o < out_.size(); ++o)
                dx(argmax_[static_cast<std::size_t>(b * out_.size() + o)], b) += dy(o, b);
        return dx;
    }

    std::unique_ptr<Layer<S>> clone() const override {
        return std::make_unique<MaxPool2x2<S>>(in_);
    }
    std::string kind() const override { return "maxpool"; }
    Shape3 out_shape() const override { return out_; }
    void drop_cache() override { argmax_.clear(); }

private:
    Shape3 in_, out_;
    std::vector<Eigen::Index> argmax_;
    Eigen::Index batch_ = 0;
};

template <class S>
class Dense final : public Layer<S> {
public:
    Dense(std::string name, Eigen::Index in_dim, Eigen::Index units, bool relu)
        : name_(std::move(name)), relu_(relu) {
        weight_.resize(units, in_dim);
        bias_.resize(units, 1);
        dweight_ = Mat<S>::Zero(units, in_dim);
        dbias_ = Mat<S>::Zero(units, 1);
    }

    Mat<S> forward(const Mat<S>& x) override {
        if (x.rows() != weight_.cols()) throw shape_error("dense input dim mismatch");
        x_ = x;
        Mat<S> y = weight_ * x;
        y.colwise() += bias_.col(0);
        if (relu_) {
            mask_ = (y.array() > S(0)).template cast<S>();
            y = y.cwiseProduct(mask_);
        }
        return y;
    }

    Mat<S> backward(const Mat<S>& dy_in) override {
        Mat<S> dy = relu_ ? dy_in.cwiseProduct(mask_).eval() : dy_in;
        dweight_.noalias() += dy * x_.transpose();
        dbias_.col(0) += dy.rowwise().sum();
        return weight_.transpose() * dy;
    }

    std::vector<ParamRef<S>> params() override {
        return {{name_ + ".weight", &weight_, &dweight_},
                {name_ + ".bias", &bias_, &dbias_}};
    }

    std::unique_ptr<Layer<S>> clone() const override {
        auto c = std::make_unique<Dense<S>>(name_, weight_.cols(), weight_.rows(), relu_);
        c->weight_ = weight_;
        c->bias_ = bias_;
        return c;
    }

    std::string kind() const override { return "dense"; }
    Shape3 out_shape() const override { return {1, 1, static_cast<int>(weight_.rows())}; }
    void drop_cache() override {
        x_.resize(0, 0);
        mask_.resize(0, 0);
    }

private:
    std::string name_;
    bool relu_;
    Mat<S> weight_, bias_, dweight_, dbias_;
    Mat<S> x_, mask_;
};

// An ordered stack of layers; [0, split) is the feature extractor, the rest
// the classifier head.
template <class S>
struct Net {
    std::vector<std::unique_ptr<Layer<S>>> layers;

    Net() = default;
    Net(Net&&) noexcept = default;
    Net& operator=(Net&&) noexcept = default;
    Net(const Net& other) { *this = other; }
    Net& operator=(const Net& other) {
        layers.clear();
        for (const auto& l : other.layers) layers.push_back(l->clone());
        return *this;
    }

    Mat<S> forward(const Mat<S>& x, std::size_t from = 0, std::size_t to = SIZE_MAX) {
        to = std::min(to, layers.size());
        Mat<S> h = x;
        for (std::size_t i = from; i < to; ++i) h = layers[i]->forward(h);
        return h;
    }

    // Backward through [from, to); returns gradient w.r.t. the input of layer
    // `from`. Parameter gradients accumulate.
    Mat<S> backward(const Mat<S>& dy, std::size_t from = 0, std::size_t to = SIZE_MAX) {
        to = std::min(to, layers.size());
        Mat<S> g = dy;
        for (std::size_t i = to; i-- > from;) g = layers[i]->backward(g);
        return g;
    }

    std::vector<ParamRef<S>> params(std::size_t from = 0, std::size_t to = SIZE_MAX) {
        to = std::min(to, layers.size());
        std::vector<ParamRef<S>> out;
        for (std::size_t i = from; i < to; ++i)
            for (auto& p : layers[i]->params()) out.push_back(p);
        return out;
    }

    void drop_caches() {
        for (auto& l : layers) l->drop_cache();
    }
};

template <class S>
void zero_grads(const std::vector<ParamRef<S>>& ps) {
    for (auto& p : ps) p.grad->setZero();
}

// ---- Gradient reversal -----------------------------------------------------

// Forward: identity. Backward: multiply the incoming gradient by -lambda.
template <class S>
const Mat<S>& grl_forward(const Mat<S>& x) {
    return x;
}

template <class S>
Mat<S> grl_backward(const Mat<S>& upstream, S lambda) {
    if (lambda < S(0)) throw config_error("GRL lambda must be >= 0");
    return (-lambda) * upstream;
}

// ---- Softmax and losses ----------------------------------------------------

template <class S>
Mat<S> softmax(const Mat<S>& z, S temperature = S(1)) {
    if (temperature <= S(0)) throw config_error("softmax temperature must be > 0");
    Mat<S> p = z / temperature;
    for (Eigen::Index b = 0; b < p.cols(); ++b) {
        auto col = p.col(b);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        col /= col.sum();
    }
    return p;
}

inline constexpr double kProbEps = 1e-12;

// Mean over columns of KL(p_target || p_model), with p_model clamped at eps.
template <class S>
S kl_divergence(const Mat<S>& p_target, const Mat<S>& p_model) {
    if (p_target.rows() != p_model.rows() || p_target.cols() != p_model.cols())
        throw shape_error("KL operands must have equal shapes");
    S total = S(0);
    for (Eigen::Index b = 0; b < p_target.cols(); ++b)
        for (Eigen::Index i = 0; i < p_target.rows(); ++i) {
            S pt = p_target(i, b);
            if (pt <= S(0)) continue;
            S pm = std::max(p_model(i, b), static_cast<S>(kProbEps));
            total += pt * (std::log(pt) - std::log(pm));
        }
    return total / static_cast<S>(p_target.cols());
}

// Distillation loss and its gradient w.r.t. the student logits. Both
// distributions are taken at the same temperature.
template <class S>
S distill_loss_grad(const Mat<S>& teacher_probs, const Mat<S>& student_logits,
                    S temperature, Mat<S>& dlogits) {
    Mat<S> ps = softmax(student_logits, temperature);
    S loss = kl_divergence(teacher_probs, ps);
    const S inv = S(1) / (static_cast<S>(student_logits.cols()) * temperature);
    dlogits = (ps - teacher_probs) * inv;
    return loss;
}

// Mean cross entropy from logits; gradient w.r.t. logits.
template <class S>
S cross_entropy_loss_grad(const Mat<S>& logits, const std::vector<int>& labels,
                          Mat<S>& dlogits) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
        throw shape_error("label count must equal batch size");
    Mat<S> p = softmax(logits);
    S loss = S(0);
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= logits.rows())
            throw data_error("label " + std::to_string(y) + " out of range");
        loss -= std::log(std::max(p(y, b), static_cast<S>(kProbEps)));
    }
    dlogits = p;
    for (Eigen::Index b = 0; b < logits.cols(); ++b)
        dlogits(labels[static_cast<std::size_t>(b)], b) -= S(1);
    dlogits /= static_cast<S>(logits.cols());
    return loss / static_cast<S>(logits.cols());
}

// ---- Adam ------------------------------------------------------------------

template <class S>
class Adam {
public:
    explicit Adam(S lr = S(1e-3), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    S learning_rate() const { return lr_; }
    void set_learning_rate(S lr) { lr_ = lr; }

    // Applies one update to the given parameter group and clears its
    // gradients. Moment state is keyed per tensor, so groups can be stepped
    // independently.
    void step(const std::vector<ParamRef<S>>& group) {
        for (const auto& p : group) {
            Slot& s = slots_[p.value];
            if (s.m.size() == 0) {
                s.m = Mat<S>::Zero(p.value->rows(), p.value->cols());
                s.v = Mat<S>::Zero(p.value->rows(), p.value->cols());
            }
            s.t += 1;
            s.m = beta1_ * s.m + (S(1) - beta1_) * (*p.grad);
            s.v = beta2_ * s.v + (S(1) - beta2_) * p.grad->cwiseProduct(*p.grad);
            const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(s.t));
            const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(s.t));
            p.value->array() -=
                lr_ * (s.m.array() / bc1) /
                ((s.v.array() / bc2).sqrt() + eps_);
            p.grad->setZero();
        }
    }

    long long step_count() const {
        long long t = 0;
        for (const auto& [k, s] : slots_) t = std::max(t, s.t);
        return t;
    }

private:
    struct Slot {
        Mat<S> m, v;
        long long t = 0;
    };
    S lr_, beta1_, beta2_, eps_;
    std::map<const Mat<S>*, Slot> slots_;
};

// Divide-by-10-on-plateau schedule driven by validation accuracy.
template <class S>
class PlateauDecay {
public:
    PlateauDecay(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

    // Returns true when the learning rate should be divided by 10 after this
    // observation.
    bool observe(double val_accuracy) {
        if (val_accuracy > best_ + min_delta_) {
            best_ = val_accuracy;
            stall_ = 0;
            return false;
        }
        if (++stall_ >= patience_) {
            stall_ = 0;
            return true;
        }
        return false;
    }

private:
    int patience_;
    double min_delta_;
    double best_ = -1.0;
    int stall_ = 0;
};

}  // namespace dsn::nn
