#include "dsn/model_zoo.hpp"

#include <random>

#include <nlohmann/json.hpp>

namespace dsn {

using nlohmann::json;

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dense: return "dense";
    }
    return "?";
}

const char* act_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::softmax: return "softmax";
        case Activation::none: return "none";
    }
    return "?";
}

LayerKind kind_from(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "maxpool") return LayerKind::maxpool;
    if (s == "dense") return LayerKind::dense;
    throw format_error("unknown layer kind: " + s);
}

Activation act_from(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "softmax") return Activation::softmax;
    if (s == "none") return Activation::none;
    throw format_error("unknown activation: " + s);
}

}  // namespace

std::vector<nn::Shape3> ArchitectureSpec::shape_chain() const {
    std::vector<nn::Shape3> chain;
    nn::Shape3 cur = input_shape;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::conv:
                if (l.stride != 1) throw shape_error("conv stride must be 1");
                cur = {cur.h, cur.w, l.channels};  // same padding
                break;
            case LayerKind::maxpool:
                if (l.filter != 2 || l.stride != 2)
                    throw shape_error("only 2x2/2 maxpool is supported");
                if (cur.h % 2 != 0 || cur.w % 2 != 0)
                    throw shape_error("maxpool on odd spatial dims in " + name);
                cur = {cur.h / 2, cur.w / 2, cur.c};
                break;
            case LayerKind::dense:
                cur = {1, 1, l.channels};
                break;
        }
        chain.push_back(cur);
    }
    return chain;
}

void ArchitectureSpec::validate() const {
    if (layers.empty()) throw shape_error("spec has no layers");
    if (num_classes < 2) throw shape_error("num_classes must be >= 2");
    const auto& last = layers.back();
    if (last.kind != LayerKind::dense || last.channels != num_classes ||
        last.activation != Activation::softmax)
        throw shape_error("last layer must be dense(num_classes) with softmax");
    if (split_index <= 0 || split_index >= static_cast<int>(layers.size()))
        throw shape_error("split_index must lie strictly inside the layer list");
    shape_chain();  // throws on inconsistent shapes
}

int ArchitectureSpec::feature_dim() const {
    auto chain = shape_chain();
    return static_cast<int>(chain[static_cast<std::size_t>(split_index - 1)].size());
}

long long ArchitectureSpec::parameter_count() const {
    long long total = 0;
    nn::Shape3 cur = input_shape;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::conv:
                total += static_cast<long long>(l.channels) * cur.c * l.filter * l.filter +
                         l.channels;
                cur = {cur.h, cur.w, l.channels};
                break;
            case LayerKind::maxpool:
                cur = {cur.h / 2, cur.w / 2, cur.c};
                break;
            case LayerKind::dense:
                total += static_cast<long long>(l.channels) * cur.size() + l.channels;
                cur = {1, 1, l.channels};
                break;
        }
    }
    return total;
}

std::string ArchitectureSpec::to_json() const {
    json j;
    j["name"] = name;
    j["input_shape"] = {input_shape.h, input_shape.w, input_shape.c};
    j["num_classes"] = num_classes;
    j["split_index"] = split_index;
    j["layers"] = json::array();
    for (const auto& l : layers) {
        json lj;
        lj["kind"] = kind_name(l.kind);
        lj["channels"] = l.channels;
        lj["filter"] = l.filter;
        lj["stride"] = l.stride;
        lj["activation"] = act_name(l.activation);
        j["layers"].push_back(lj);
    }
    return j.dump(2);
}

ArchitectureSpec ArchitectureSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw format_error(std::string("spec is not valid JSON: ") + e.what());
    }
    try {
        ArchitectureSpec s;
        s.name = j.at("name").get<std::string>();
        auto sh = j.at("input_shape");
        s.input_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
        s.num_classes = j.at("num_classes").get<int>();
        s.split_index = j.at("split_index").get<int>();
        for (const auto& lj : j.at("layers")) {
            LayerDesc l;
            l.kind = kind_from(lj.at("kind").get<std::string>());
            l.channels = lj.at("channels").get<int>();
            l.filter = lj.at("filter").get<int>();
            l.stride = lj.at("stride").get<int>();
            l.activation = act_from(lj.at("activation").get<std::string>());
            s.layers.push_back(l);
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw format_error(std::string("spec missing field: ") + e.what());
    }
}

namespace {

LayerDesc conv(int ch) { return {LayerKind::conv, ch, 3, 1, Activation::relu}; }
LayerDesc pool() { return {LayerKind::maxpool, 0, 2, 2, Activation::none}; }
LayerDesc dense(int units, Activation a) { return {LayerKind::dense, units, 0, 1, a}; }

}  // namespace

ArchitectureSpec build_spec(const std::string& dataset_name, int num_classes) {
    ArchitectureSpec s;
    s.name = dataset_name;
    if (dataset_name == "mnist") {
        s.input_shape = {28, 28, 1};
        s.num_classes = num_classes > 0 ? num_classes : 10;
        s.layers = {conv(32), pool(), conv(32), pool(),
                    dense(120, Activation::relu), dense(s.num_classes, Activation::softmax)};
    } else if (dataset_name == "gtsrb") {
        s.input_shape = {32, 32, 3};
        s.num_classes = num_classes > 0 ? num_classes : 43;
        s.layers = {conv(32), conv(32), pool(), conv(64), conv(64), pool(),
                    conv(128), conv(128), pool(),
                    dense(512, Activation::relu), dense(s.num_classes, Activation::softmax)};
    } else if (dataset_name == "pubfig") {
        s.input_shape = {224, 224, 3};
        s.num_classes = num_classes > 0 ? num_classes : 83;
        s.layers = {conv(64), conv(64), pool(),
                    conv(128), conv(128), pool(),
                    conv(256), conv(256), conv(256), pool(),
                    conv(512), conv(512), conv(512), pool(),
                    conv(512), conv(512), conv(512), pool(),
                    dense(4096, Activation::relu), dense(4096, Activation::relu),
                    dense(s.num_classes, Activation::softmax)};
    } else {
        throw missing_input_error("unknown dataset architecture: " + dataset_name);
    }
    // G_y is the final classification layer only.
    s.split_index = static_cast<int>(s.layers.size()) - 1;
    s.validate();
    return s;
}

ArchitectureSpec build_spec(const std::string& dataset_name) {
    return build_spec(dataset_name, 0);
}

namespace {

template <class S>
void init_layer_params(nn::Layer<S>& layer, bool relu, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& p : layer.params()) {
        if (p.name.ends_with(".bias")) {
            p.value->setZero();
            continue;
        }
        // fan-in scaled: He for relu layers, 1/fan_in for linear heads
        double fan_in = static_cast<double>(p.value->cols());
        double stddev = std::sqrt((relu ? 2.0 : 1.0) / fan_in);
        for (Eigen::Index i = 0; i < p.value->size(); ++i)
            p.value->data()[i] = static_cast<S>(dist(rng) * stddev);
    }
}

template <class S>
std::unique_ptr<nn::Layer<S>> make_layer(const ArchitectureSpec& spec, std::size_t idx,
                                         const std::string& name_prefix, int override_classes) {
    auto chain = spec.shape_chain();
    nn::Shape3 in = idx == 0 ? spec.input_shape : chain[idx - 1];
    const LayerDesc& l = spec.layers[idx];
    bool relu = l.activation == Activation::relu;
    switch (l.kind) {
        case LayerKind::conv:
            return std::make_unique<nn::Conv2D<S>>(name_prefix + "conv" + std::to_string(idx),
                                                   in, l.channels, l.filter, relu);
        case LayerKind::maxpool:
            return std::make_unique<nn::MaxPool2x2<S>>(in);
        case LayerKind::dense: {
            int units = l.channels;
            if (override_classes > 0 && idx + 1 == spec.layers.size()) units = override_classes;
            return std::make_unique<nn::Dense<S>>(name_prefix + "fc" + std::to_string(idx),
                                                  in.size(), units, relu);
        }
    }
    throw shape_error("unreachable layer kind");
}

}  // namespace

template <class S>
nn::Net<S> build_head(const ArchitectureSpec& spec, std::uint64_t seed,
                      std::optional<int> override_classes) {
    std::mt19937_64 rng(seed);
    nn::Net<S> head;
    for (std::size_t i = static_cast<std::size_t>(spec.split_index); i < spec.layers.size(); ++i) {
        auto layer = make_layer<S>(spec, i, "gd_", override_classes.value_or(0));
        init_layer_params(*layer, spec.layers[i].activation == Activation::relu, rng);
        head.layers.push_back(std::move(layer));
    }
    return head;
}

template <class S>
ModelHandles<S> instantiate(const ArchitectureSpec& spec, std::uint64_t seed,
                            bool with_auxiliary) {
    spec.validate();
    ModelHandles<S> m;
    m.spec = spec;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        auto layer = make_layer<S>(spec, i, "", 0);
        init_layer_params(*layer, spec.layers[i].activation == Activation::relu, rng);
        m.net.layers.push_back(std::move(layer));
    }
    if (with_auxiliary)
        m.g_d = build_head<S>(spec, split_seed(seed, "g_d"));
    return m;
}

template ModelHandles<float> instantiate<float>(const ArchitectureSpec&, std::uint64_t, bool);
template ModelHandles<double> instantiate<double>(const ArchitectureSpec&, std::uint64_t, bool);
template nn::Net<float> build_head<float>(const ArchitectureSpec&, std::uint64_t, std::optional<int>);
template nn::Net<double> build_head<double>(const ArchitectureSpec&, std::uint64_t, std::optional<int>);

}  // namespace dsn
