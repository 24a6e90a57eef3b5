#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsn/nn.hpp"

namespace dsn {

enum class LayerKind { conv, maxpool, dense };
enum class Activation { relu, softmax, none };

struct LayerDesc {
    LayerKind kind = LayerKind::conv;
    int channels = 0;  // conv out channels / dense units; ignored for maxpool
    int filter = 0;    // conv filter size / pool window
    int stride = 1;
    Activation activation = Activation::none;
};

// Declarative network description. Layers [0, split_index) form the feature
// extractor G_e; [split_index, end) form the predictor head G_y.
struct ArchitectureSpec {
    std::string name;
    std::vector<LayerDesc> layers;
    nn::Shape3 input_shape;
    int num_classes = 0;
    int split_index = 0;

    void validate() const;
    std::vector<nn::Shape3> shape_chain() const;  // output shape after each layer
    int feature_dim() const;                      // flat dim entering G_y
    long long parameter_count() const;

    std::string to_json() const;
    static ArchitectureSpec from_json(const std::string& text);
};

// The paper's three reference architectures.
ArchitectureSpec build_spec(const std::string& dataset_name);
ArchitectureSpec build_spec(const std::string& dataset_name, int num_classes);

// A live model: one net holding G_e and G_y, plus the training-time auxiliary
// head G_d behind the gradient reversal layer.
template <class S>
struct ModelHandles {
    ArchitectureSpec spec;
    nn::Net<S> net;                   // layers [0, split) = G_e, rest = G_y
    std::optional<nn::Net<S>> g_d;    // same structure as G_y, own parameters
    S grl_lambda = S(1);

    std::size_t split() const { return static_cast<std::size_t>(spec.split_index); }

    nn::Mat<S> forward_features(const nn::Mat<S>& images) {
        return net.forward(images, 0, split());
    }
    nn::Mat<S> forward_head_y(const nn::Mat<S>& features) {
        return net.forward(features, split(), SIZE_MAX);
    }
    nn::Mat<S> forward_logits_y(const nn::Mat<S>& images) { return net.forward(images); }
    nn::Mat<S> forward_logits_d(const nn::Mat<S>& features) {
        if (!g_d) throw stage_error("model has no auxiliary branch");
        return g_d->forward(features);
    }

    std::vector<nn::ParamRef<S>> params_e() { return net.params(0, split()); }
    std::vector<nn::ParamRef<S>> params_y() { return net.params(split(), SIZE_MAX); }
    std::vector<nn::ParamRef<S>> params_d() {
        if (!g_d) throw stage_error("model has no auxiliary branch");
        return g_d->params();
    }
};

// Build a freshly initialized model. Weights use fan-in-scaled normal init
// seeded from `seed`; the auxiliary head gets independent parameters.
template <class S>
ModelHandles<S> instantiate(const ArchitectureSpec& spec, std::uint64_t seed,
                            bool with_auxiliary = true);

// Build just the head layers (used for G_d and for head replacement in the
// transfer attack).
template <class S>
nn::Net<S> build_head(const ArchitectureSpec& spec, std::uint64_t seed,
                      std::optional<int> override_classes = std::nullopt);

extern template ModelHandles<float> instantiate<float>(const ArchitectureSpec&, std::uint64_t, bool);
extern template ModelHandles<double> instantiate<double>(const ArchitectureSpec&, std::uint64_t, bool);
extern template nn::Net<float> build_head<float>(const ArchitectureSpec&, std::uint64_t, std::optional<int>);
extern template nn::Net<double> build_head<double>(const ArchitectureSpec&, std::uint64_t, std::optional<int>);

}  // namespace dsn
