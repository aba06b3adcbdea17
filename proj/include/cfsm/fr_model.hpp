#pragma once

#include <torch/torch.h>

#include "cfsm/data_pipeline.hpp"
#include "cfsm/objectives.hpp"

namespace cfsm {

struct EmbeddingNetOptions {
    int64_t image_channels = 3;
    int64_t base_channels = 32;
    int64_t embedding_dim = 128;
};

// Four conv3×3-BN-ReLU-maxpool blocks (widths c, 2c, 4c, 8c), global average pool, linear projection.
// Returns raw (unnormalized) embeddings.
class EmbeddingNetImpl : public torch::nn::Module {
public:
    explicit EmbeddingNetImpl(const EmbeddingNetOptions& opts);
    torch::Tensor forward(const torch::Tensor& images);

    const EmbeddingNetOptions& options() const { return opts_; }

private:
    EmbeddingNetOptions opts_;
    torch::nn::Sequential features{nullptr};
    torch::nn::Linear project{nullptr};
};
TORCH_MODULE(EmbeddingNet);

// Recognition model: embedding network θ plus the margin classification head.
struct FRModel {
    EmbeddingNet net{nullptr};
    MarginHead head{nullptr};

    FRModel() = default;
    FRModel(const EmbeddingNetOptions& opts, int64_t num_classes, double scale, double margin);

    std::vector<torch::Tensor> parameters() const;
};

// L2-normalized embeddings in eval mode without autograd; restores the previous train/eval mode.
torch::Tensor embed(EmbeddingNet& net, const torch::Tensor& images);
inline torch::Tensor embed(EmbeddingNet& net, const Batch& batch) { return embed(net, batch.images); }

// Sets requires_grad=false on all parameters and switches to eval mode.
void freeze(torch::nn::Module& module);

}  // namespace cfsm
