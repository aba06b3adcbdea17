#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "cfsm/style_subspace.hpp"

namespace cfsm {

// Channel plan: encoder widths base, 2·base, 4·base (4·base = 256 reproduces the full-size
// generator). Everything else follows from these numbers.
struct SynthesisOptions {
    int64_t image_channels = 3;
    int64_t base_channels = 64;
    int64_t res_blocks = 4;
    int64_t style_dim = 128;
    int64_t mlp_hidden = 256;
    int64_t disc_channels = 64;
    int64_t disc_scales = 3;

    int64_t content_channels() const { return 4 * base_channels; }
    int64_t adain_layers() const { return 2 * res_blocks; }
    // Length of the concatenated per-layer (gamma_hat, beta) vector emitted by the MLP.
    int64_t adain_params() const { return 2 * adain_layers() * content_channels(); }
};

constexpr double kAdaInEps = 1e-5;

// Per sample and channel: ((x − mean) / sqrt(var + eps)) · gamma + beta, statistics over h×w.
// gamma/beta are C (shared) or B×C (per sample).
torch::Tensor adain(const torch::Tensor& feature, const torch::Tensor& gamma, const torch::Tensor& beta);

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ResidualBlock);

class ContentEncoderImpl : public torch::nn::Module {
public:
    explicit ContentEncoderImpl(const SynthesisOptions& opts);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential stem{nullptr};
    torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(ContentEncoder);

// Residual block whose two norm layers are AdaIN layers; the decoder drives it so it can
// route each layer's slice of the MLP output.
class AdaInResidualBlockImpl : public torch::nn::Module {
public:
    explicit AdaInResidualBlockImpl(int64_t channels);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(AdaInResidualBlock);

class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const SynthesisOptions& opts);
    torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& adain_params);

    // Called with (layer index, normalized output, effective gamma, beta) after every AdaIN layer.
    using AdaInObserver = std::function<void(int, const torch::Tensor&, const torch::Tensor&, const torch::Tensor&)>;
    void set_adain_observer(AdaInObserver observer) { observer_ = std::move(observer); }

private:
    torch::Tensor apply_adain(int layer, const torch::Tensor& x, const torch::Tensor& params, int64_t offset);

    SynthesisOptions opts_;
    torch::nn::ModuleList blocks{nullptr};
    torch::nn::Conv2d up1{nullptr}, up2{nullptr}, out{nullptr};
    AdaInObserver observer_;
};
TORCH_MODULE(Decoder);

class StyleMlpImpl : public torch::nn::Module {
public:
    explicit StyleMlpImpl(const SynthesisOptions& opts);
    torch::Tensor forward(const torch::Tensor& z);

    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
};
TORCH_MODULE(StyleMlp);

// Encoder E, AdaIN decoder G and the style MLP. Parameters are named "enc.*", "dec.*", "mlp.*".
class SynthesisModelImpl : public torch::nn::Module {
public:
    explicit SynthesisModelImpl(const SynthesisOptions& opts);

    torch::Tensor encode(const torch::Tensor& images);
    // B×d (or d) style codes → B×P AdaIN parameters (or P); effective gamma = 1 + gamma_hat.
    torch::Tensor map_style(const torch::Tensor& z);
    torch::Tensor decode(const torch::Tensor& content, const torch::Tensor& adain_params);

    const SynthesisOptions& options() const { return opts_; }

    ContentEncoder enc{nullptr};
    Decoder dec{nullptr};
    StyleMlp mlp{nullptr};

private:
    SynthesisOptions opts_;
};
TORCH_MODULE(SynthesisModel);

// encode → U·o + μ → MLP → decode. o is B×q (one coefficient per image) or q (shared).
torch::Tensor synthesize(SynthesisModel& model, const StyleSubspace& subspace, const torch::Tensor& images,
                         const torch::Tensor& o);

// Same, reusing precomputed content features.
torch::Tensor synthesize_from_content(SynthesisModel& model, const StyleSubspace& subspace,
                                      const torch::Tensor& content, const torch::Tensor& o);

class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    PatchDiscriminatorImpl(int64_t image_channels, int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Scale k sees the input average-pooled by 2^k. Children are named "k0", "k1", ...
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
public:
    explicit MultiScaleDiscriminatorImpl(const SynthesisOptions& opts);
    std::vector<torch::Tensor> forward(const torch::Tensor& x);

private:
    std::vector<PatchDiscriminator> heads_;
};
TORCH_MODULE(MultiScaleDiscriminator);

inline std::vector<torch::Tensor> discriminate(MultiScaleDiscriminator& disc, const torch::Tensor& images) {
    return disc->forward(images);
}

}  // namespace cfsm
