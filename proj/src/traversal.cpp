#include "cfsm/traversal.hpp"

#include "cfsm/errors.hpp"

namespace cfsm {

std::vector<double> sigma_grid(int steps) {
    if (steps < 1) throw ArgumentError("sigma_steps must be >= 1");
    if (steps == 1) return {0.0};
    std::vector<double> g;
    for (int i = 0; i < steps; ++i) g.push_back(-3.0 + 6.0 * i / (steps - 1));
    return g;
}

Traversal render_traversal(CfsmModel& model, const Image& input, const TraversalOptions& opts) {
    const int64_t q = model.style->q();
    Traversal t;
    t.input = input;
    std::vector<torch::Tensor> coefficient_rows;
    if (opts.mode == TraversalMode::basis) {
        if (opts.basis_index < 0 || opts.basis_index >= q) {
            throw ArgumentError("basis index " + std::to_string(opts.basis_index) + " out of range [0, " +
                                std::to_string(q) + ")");
        }
        if (opts.rows < 1) throw ArgumentError("rows must be >= 1");
        t.column_values = sigma_grid(opts.sigma_steps);
        const int last = std::min<int>(static_cast<int>(q), opts.basis_index + opts.rows);
        for (int b = opts.basis_index; b < last; ++b) {
            auto o = torch::zeros({static_cast<int64_t>(t.column_values.size()), q});
            for (size_t c = 0; c < t.column_values.size(); ++c) o[c][b] = t.column_values[c];
            coefficient_rows.push_back(o);
        }
    } else {
        t.column_values = kMagnitudeFactors;
        Rng rng(opts.seed);
        auto u = sample_coefficients(rng, 1, q)[0];
        u = u / u.norm();
        auto factors = torch::tensor(std::vector<float>(t.column_values.begin(), t.column_values.end()));
        coefficient_rows.push_back(factors.unsqueeze(1) * static_cast<float>(opts.base_magnitude) * u.unsqueeze(0));
    }

    torch::NoGradGuard no_grad;
    model.synth->eval();
    auto content = model.synth->encode(image_to_tensor(input).unsqueeze(0));
    for (const auto& o : coefficient_rows) {
        auto out = synthesize_from_content(model.synth, model.style, content.expand({o.size(0), -1, -1, -1}), o);
        std::vector<Image> row;
        for (int64_t c = 0; c < out.size(0); ++c) row.push_back(tensor_to_image(out[c]));
        t.rows.push_back(std::move(row));
    }

    const int cols = static_cast<int>(t.column_values.size()) + 1;
    std::vector<Image> tiles;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        tiles.push_back(r == 0 ? input : Image());
        for (auto& img : t.rows[r]) tiles.push_back(img);
    }
    t.grid = tile_grid(tiles, static_cast<int>(t.rows.size()), cols);
    return t;
}

Traversal render_traversal(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
                           const TraversalOptions& opts) {
    auto model = load_cfsm(checkpoint);
    auto img = read_png(image_path);
    if (img.channels != model.options().image_channels) {
        throw ArgumentError("image has " + std::to_string(img.channels) + " channels, model expects " +
                            std::to_string(model.options().image_channels));
    }
    return render_traversal(model, img, opts);
}

}  // namespace cfsm
