#include "cfsm/fr_model.hpp"

namespace cfsm {

namespace nn = torch::nn;

EmbeddingNetImpl::EmbeddingNetImpl(const EmbeddingNetOptions& opts) : opts_(opts) {
    features = nn::Sequential();
    int64_t in = opts.image_channels;
    for (int i = 0; i < 4; ++i) {
        const int64_t out = opts.base_channels << i;
        features->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(false)));
        features->push_back(nn::BatchNorm2d(out));
        features->push_back(nn::ReLU());
        features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
        in = out;
    }
    register_module("features", features);
    project = register_module("project", nn::Linear(in, opts.embedding_dim));
}

torch::Tensor EmbeddingNetImpl::forward(const torch::Tensor& images) {
    auto h = features->forward(images);
    return project(h.mean({2, 3}));
}

FRModel::FRModel(const EmbeddingNetOptions& opts, int64_t num_classes, double scale, double margin)
    : net(opts), head(num_classes, opts.embedding_dim, scale, margin) {}

std::vector<torch::Tensor> FRModel::parameters() const {
    auto params = net->parameters();
    for (auto& p : head->parameters()) params.push_back(p);
    return params;
}

torch::Tensor embed(EmbeddingNet& net, const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    const bool was_training = net->is_training();
    net->eval();
    auto e = l2_normalize_rows(net->forward(images));
    if (was_training) net->train();
    return e;
}

void freeze(torch::nn::Module& module) {
    for (auto& p : module.parameters()) p.set_requires_grad(false);
    module.eval();
}

}  // namespace cfsm
