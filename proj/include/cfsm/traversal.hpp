#pragma once

#include <filesystem>
#include <vector>

#include "cfsm/image.hpp"
#include "cfsm/trainer_stage1.hpp"

namespace cfsm {

enum class TraversalMode { basis, magnitude };

inline const std::vector<double> kMagnitudeFactors{0.5, 1.0, 1.5, 2.0, 3.0, 4.0};

struct TraversalOptions {
    TraversalMode mode = TraversalMode::basis;
    int basis_index = 0;      // first basis shown (basis mode)
    int rows = 3;             // bases shown, starting at basis_index
    int sigma_steps = 5;      // columns spread evenly over [-3σ, 3σ]; σ = 1 for o ~ N(0, I)
    double base_magnitude = 1.0;  // magnitude mode: o = factor · base_magnitude · u, ‖u‖ = 1
    uint64_t seed = 0;        // magnitude mode: draws u
};

struct Traversal {
    Image input;
    std::vector<std::vector<Image>> rows;  // rows[r][c]
    std::vector<double> column_values;     // σ multiples or magnitude factors
    Image grid;                            // input tile in the first column of row 0, then the rows
};

std::vector<double> sigma_grid(int steps);

Traversal render_traversal(CfsmModel& model, const Image& input, const TraversalOptions& opts);
Traversal render_traversal(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
                           const TraversalOptions& opts);

}  // namespace cfsm
