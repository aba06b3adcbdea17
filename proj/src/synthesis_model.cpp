#include "cfsm/synthesis_model.hpp"

#include "cfsm/errors.hpp"

namespace cfsm {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

nn::InstanceNorm2d instance_norm(int64_t channels) {
    return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).eps(kAdaInEps));
}

torch::Tensor upsample2x(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

}  // namespace

torch::Tensor adain(const torch::Tensor& feature, const torch::Tensor& gamma, const torch::Tensor& beta) {
    TORCH_CHECK(feature.dim() == 4, "adain expects B×C×h×w");
    auto mean = feature.mean({2, 3}, /*keepdim=*/true);
    auto var = feature.var({2, 3}, /*unbiased=*/false, /*keepdim=*/true);
    auto normalized = (feature - mean) / torch::sqrt(var + kAdaInEps);
    auto shape = [&](const torch::Tensor& p) {
        return p.dim() == 1 ? p.view({1, -1, 1, 1}) : p.view({p.size(0), p.size(1), 1, 1});
    };
    return normalized * shape(gamma) + shape(beta);
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv1 = register_module("conv1", conv(channels, channels, 3, 1, 1));
    norm1 = register_module("norm1", instance_norm(channels));
    conv2 = register_module("conv2", conv(channels, channels, 3, 1, 1));
    norm2 = register_module("norm2", instance_norm(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    auto h = torch::relu(norm1(conv1(x)));
    return x + norm2(conv2(h));
}

ContentEncoderImpl::ContentEncoderImpl(const SynthesisOptions& o) {
    const int64_t c = o.base_channels;
    stem = register_module(
        "stem", nn::Sequential(conv(o.image_channels, c, 7, 1, 3), instance_norm(c), nn::ReLU(),
                               conv(c, 2 * c, 4, 2, 1), instance_norm(2 * c), nn::ReLU(),
                               conv(2 * c, 4 * c, 4, 2, 1), instance_norm(4 * c), nn::ReLU()));
    blocks = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < o.res_blocks; ++i) blocks->push_back(ResidualBlock(4 * c));
}

torch::Tensor ContentEncoderImpl::forward(const torch::Tensor& x) {
    auto h = stem->forward(x);
    for (const auto& block : *blocks) h = block->as<ResidualBlock>()->forward(h);
    return h;
}

AdaInResidualBlockImpl::AdaInResidualBlockImpl(int64_t channels) {
    conv1 = register_module("conv1", conv(channels, channels, 3, 1, 1));
    conv2 = register_module("conv2", conv(channels, channels, 3, 1, 1));
}

DecoderImpl::DecoderImpl(const SynthesisOptions& o) : opts_(o) {
    const int64_t c = o.base_channels;
    blocks = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < o.res_blocks; ++i) blocks->push_back(AdaInResidualBlock(4 * c));
    up1 = register_module("up1", conv(4 * c, 2 * c, 5, 1, 2));
    up2 = register_module("up2", conv(2 * c, c, 5, 1, 2));
    out = register_module("out", conv(c, o.image_channels, 7, 1, 3));
}

torch::Tensor DecoderImpl::apply_adain(int layer, const torch::Tensor& x, const torch::Tensor& params,
                                       int64_t offset) {
    const int64_t c = opts_.content_channels();
    auto gamma = 1.0 + params.narrow(1, offset, c);
    auto beta = params.narrow(1, offset + c, c);
    auto y = adain(x, gamma, beta);
    if (observer_) observer_(layer, y, gamma, beta);
    return y;
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& content, const torch::Tensor& adain_params) {
    const int64_t c = opts_.content_channels();
    if (content.size(1) != c) {
        throw ArgumentError("decoder expects " + std::to_string(c) + " content channels, got " +
                            std::to_string(content.size(1)));
    }
    auto params = adain_params.dim() == 1 ? adain_params.unsqueeze(0) : adain_params;
    if (params.size(1) != opts_.adain_params()) throw ArgumentError("AdaIN parameter vector has wrong length");

    auto h = content;
    int layer = 0;
    for (const auto& m : *blocks) {
        auto* block = m->as<AdaInResidualBlock>();
        const int64_t offset = static_cast<int64_t>(layer) * 2 * c;
        auto r = torch::relu(apply_adain(layer, block->conv1(h), params, offset));
        r = apply_adain(layer + 1, block->conv2(r), params, offset + 2 * c);
        h = h + r;
        layer += 2;
    }
    h = torch::relu(up1(upsample2x(h)));
    h = torch::relu(up2(upsample2x(h)));
    return torch::tanh(out(h));
}

StyleMlpImpl::StyleMlpImpl(const SynthesisOptions& o) {
    fc1 = register_module("fc1", nn::Linear(o.style_dim, o.mlp_hidden));
    fc2 = register_module("fc2", nn::Linear(o.mlp_hidden, o.mlp_hidden));
    fc3 = register_module("fc3", nn::Linear(o.mlp_hidden, o.adain_params()));
}

torch::Tensor StyleMlpImpl::forward(const torch::Tensor& z) {
    return fc3(torch::relu(fc2(torch::relu(fc1(z)))));
}

SynthesisModelImpl::SynthesisModelImpl(const SynthesisOptions& opts) : opts_(opts) {
    if (opts.base_channels < 1 || opts.res_blocks < 1) throw ArgumentError("invalid synthesis channel plan");
    enc = register_module("enc", ContentEncoder(opts));
    dec = register_module("dec", Decoder(opts));
    mlp = register_module("mlp", StyleMlp(opts));
}

torch::Tensor SynthesisModelImpl::encode(const torch::Tensor& images) {
    if (images.dim() != 4) throw ArgumentError("encode expects B×C×H×W");
    if (images.size(2) % 4 != 0 || images.size(3) % 4 != 0) {
        throw ArgumentError("encode: spatial dims must be divisible by 4");
    }
    if (images.size(1) != opts_.image_channels) throw ArgumentError("encode: wrong number of image channels");
    return enc->forward(images);
}

torch::Tensor SynthesisModelImpl::map_style(const torch::Tensor& z) {
    if (z.size(-1) != opts_.style_dim) throw ArgumentError("map_style: style code has wrong dimension");
    return mlp->forward(z);
}

torch::Tensor SynthesisModelImpl::decode(const torch::Tensor& content, const torch::Tensor& adain_params) {
    return dec->forward(content, adain_params);
}

torch::Tensor synthesize_from_content(SynthesisModel& model, const StyleSubspace& subspace,
                                      const torch::Tensor& content, const torch::Tensor& o) {
    auto adain_params = model->map_style(to_style_code(subspace, o));
    if (adain_params.dim() == 1) adain_params = adain_params.unsqueeze(0).expand({content.size(0), -1});
    if (adain_params.size(0) != content.size(0)) throw ArgumentError("one style coefficient per image required");
    return model->decode(content, adain_params);
}

torch::Tensor synthesize(SynthesisModel& model, const StyleSubspace& subspace, const torch::Tensor& images,
                         const torch::Tensor& o) {
    return synthesize_from_content(model, subspace, model->encode(images), o);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t image_channels, int64_t c) {
    auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
    net = register_module("net", nn::Sequential(conv(image_channels, c, 4, 2, 1), lrelu(),
                                                conv(c, 2 * c, 4, 2, 1), lrelu(),
                                                conv(2 * c, 4 * c, 4, 2, 1), lrelu(),
                                                conv(4 * c, 1, 1, 1, 0)));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return net->forward(x); }

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(const SynthesisOptions& o) {
    for (int64_t k = 0; k < o.disc_scales; ++k) {
        heads_.push_back(register_module("k" + std::to_string(k), PatchDiscriminator(o.image_channels, o.disc_channels)));
    }
}

std::vector<torch::Tensor> MultiScaleDiscriminatorImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> maps;
    auto h = x;
    for (size_t k = 0; k < heads_.size(); ++k) {
        if (k > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2).stride(2));
        maps.push_back(heads_[k]->forward(h));
    }
    return maps;
}

}  // namespace cfsm
