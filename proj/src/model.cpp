#include "demenscan/model.hpp"

#include <cmath>

#include "json.hpp"

namespace demenscan {

void ModelSpec::validate() const {
    if (conv_filters.size() != 4) {
        throw ParameterError("model spec: expected exactly 4 conv blocks, got " +
                             std::to_string(conv_filters.size()));
    }
    for (size_t f : conv_filters) {
        if (f == 0) throw ParameterError("model spec: conv filter counts must be positive");
    }
    if (fc_widths.size() != 2 || fc_widths[0] == 0 || fc_widths[1] == 0) {
        throw ParameterError("model spec: expected 2 positive fc widths");
    }
    if (input_c == 0) throw ParameterError("model spec: input channels must be positive");
    if (kernel == 0 || kernel % 2 == 0) {
        throw ParameterError("model spec: kernel must be odd and positive");
    }
    if (input_h != input_w) {
        throw ParameterError("model spec: input must be square, got " +
                             std::to_string(input_h) + "x" + std::to_string(input_w));
    }
    const size_t div = size_t(1) << conv_filters.size();
    if (input_h == 0 || input_h % div != 0) {
        throw ParameterError("model spec: input size must be divisible by " +
                             std::to_string(div) + " for the pooling stack, got " +
                             std::to_string(input_h));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ParameterError("model spec: dropout rate must be in [0, 1)");
    }
    if (num_classes < 2) throw ParameterError("model spec: need at least 2 classes");
}

std::vector<NamedShape> parameter_shapes(const ModelSpec& spec) {
    spec.validate();
    std::vector<NamedShape> shapes;
    size_t c_in = spec.input_c;
    for (size_t i = 0; i < spec.conv_filters.size(); ++i) {
        const size_t f = spec.conv_filters[i];
        shapes.push_back({"conv" + std::to_string(i + 1) + ".w", {f, c_in, spec.kernel, spec.kernel}});
        shapes.push_back({"conv" + std::to_string(i + 1) + ".b", {f}});
        c_in = f;
    }
    size_t in_w = spec.flatten_dim();
    for (size_t i = 0; i < spec.fc_widths.size(); ++i) {
        shapes.push_back({"fc" + std::to_string(i + 1) + ".w", {spec.fc_widths[i], in_w}});
        shapes.push_back({"fc" + std::to_string(i + 1) + ".b", {spec.fc_widths[i]}});
        in_w = spec.fc_widths[i];
    }
    shapes.push_back({"out.w", {spec.num_classes, in_w}});
    shapes.push_back({"out.b", {spec.num_classes}});
    return shapes;
}

size_t ModelSpec::param_count() const {
    size_t n = 0;
    for (const auto& s : parameter_shapes(*this)) {
        size_t ext = 1;
        for (size_t e : s.shape) ext *= e;
        n += ext;
    }
    return n;
}

Parameters init_parameters(const ModelSpec& spec, SeededRng& rng) {
    Parameters p = parameters_like<float>(spec);
    auto he_uniform = [&rng](Tensor& w, size_t fan_in) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (size_t i = 0; i < w.size(); ++i) {
            w[i] = static_cast<float>(rng.uniform(-limit, limit));
        }
    };
    size_t c_in = spec.input_c;
    for (size_t i = 0; i < p.conv.size(); ++i) {
        he_uniform(p.conv[i].w, c_in * spec.kernel * spec.kernel);
        c_in = spec.conv_filters[i];
    }
    size_t in_w = spec.flatten_dim();
    for (auto& layer : p.dense) {
        he_uniform(layer.w, in_w);
        in_w = layer.w.extent(0);
    }
    return p;
}

std::string model_spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["input"] = {{"height", spec.input_h}, {"width", spec.input_w}, {"channels", spec.input_c}};
    j["conv_filters"] = spec.conv_filters;
    j["kernel"] = spec.kernel;
    j["fc_widths"] = spec.fc_widths;
    j["dropout_rate"] = spec.dropout_rate;
    j["num_classes"] = spec.num_classes;
    return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
    ModelSpec spec;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        spec.input_h = j.at("input").at("height").get<size_t>();
        spec.input_w = j.at("input").at("width").get<size_t>();
        spec.input_c = j.at("input").at("channels").get<size_t>();
        spec.conv_filters = j.at("conv_filters").get<std::vector<size_t>>();
        spec.kernel = j.at("kernel").get<size_t>();
        spec.fc_widths = j.at("fc_widths").get<std::vector<size_t>>();
        spec.dropout_rate = j.at("dropout_rate").get<double>();
        spec.num_classes = j.at("num_classes").get<size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("model spec json: ") + e.what());
    }
    spec.validate();
    return spec;
}

} // namespace demenscan
