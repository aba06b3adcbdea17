#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <future>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfsm/image.hpp"

namespace cfsm {

using Rng = std::mt19937_64;

enum class Split { train, test_gallery, test_probe };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

// identity_id is -1 for records of an unlabeled (target) manifest.
struct IdentityRecord {
    std::filesystem::path image_path;
    int identity_id = -1;
    Split split = Split::train;
};

struct Manifest {
    std::vector<IdentityRecord> records;
    int num_identities = 0;
    int image_size = 0;
    uint64_t seed = 0;

    size_t size() const { return records.size(); }
    bool unlabeled() const;
    // Records of one split, header fields carried over and num_identities recounted.
    Manifest subset(Split split) const;
    Manifest subset(std::span<const size_t> indices) const;
};

int count_identities(const std::vector<IdentityRecord>& records);

// JSON-lines: a header object followed by one {"path","identity","split"} object per record.
// Paths are stored relative to the manifest's directory.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

struct DegradationSpec {
    std::pair<double, double> blur_sigma_range{0.0, 0.0};
    std::vector<int> downsample_factors{1};
    std::pair<double, double> noise_std_range{0.0, 0.0};
    std::vector<int> motion_blur_lengths{1};
    struct Probabilities {
        double blur = 0.0;
        double downsample = 0.0;
        double motion = 0.0;
        double noise = 0.0;
    } apply;

    void validate() const;
};

void to_json(nlohmann::json& j, const DegradationSpec& spec);
void from_json(const nlohmann::json& j, DegradationSpec& spec);

struct Batch {
    torch::Tensor images;  // B×C×H×W float32 in [-1, 1]
    torch::Tensor labels;  // B int64, -1 for unlabeled

    int64_t size() const { return images.size(0); }
};

// Renders one procedural glyph: identity_id fixes face shape, eye layout, mouth curve and hue;
// sample_index drives the rotation/translation/brightness jitter.
Image render_glyph(int identity_id, int sample_index, int image_size, uint64_t seed);

// Writes num_identities × samples_per_id PNGs plus manifest.jsonl into out_dir.
// The last two samples of every identity are the test gallery and test probe.
// identity_offset shifts the rendered identities (labels stay 0-based) so a disjoint
// identity pool can be drawn with the same seed.
Manifest generate_toy_dataset(int num_identities, int samples_per_id, int image_size, uint64_t seed,
                              const std::filesystem::path& out_dir, int identity_offset = 0);

// Blur → resolution loss → motion blur → noise, each gated by its probability.
Image apply_degradation(const Image& image, const DegradationSpec& spec, Rng& rng);

// Individual filters, exposed for testing and reuse.
Image gaussian_blur(const Image& image, double sigma);
Image downsample_nearest(const Image& image, int factor);
Image upsample_bilinear(const Image& image, int out_height, int out_width);
Image motion_blur(const Image& image, int length, double angle_radians);
Image add_gaussian_noise(const Image& image, double stddev, Rng& rng);

// Picks round(fraction·N) records of `source` by seed, degrades them and writes an unlabeled manifest.
Manifest build_target_set(const Manifest& source, const DegradationSpec& spec, double fraction, uint64_t seed,
                          const std::filesystem::path& out_dir);

Batch load_batch(const Manifest& manifest, std::span<const int64_t> indices);

// Whole manifest decoded once into memory (toy datasets are small).
Batch load_all(const Manifest& manifest);

// Uniform with-replacement batch draws from an in-memory image set. The draw sequence depends
// only on the seed; with prefetch on, the next batch is gathered on a worker thread, which
// changes timing but not content.
class BatchSampler {
public:
    BatchSampler(Batch data, int64_t batch_size, uint64_t seed, bool prefetch = false);
    ~BatchSampler();
    BatchSampler(const BatchSampler&) = delete;
    BatchSampler& operator=(const BatchSampler&) = delete;

    Batch next();
    int64_t dataset_size() const { return data_.size(); }

private:
    Batch draw();

    Batch data_;
    int64_t batch_size_;
    Rng rng_;
    bool prefetch_;
    std::future<Batch> pending_;
};

// HWC [0,1] image ↔ CHW [-1,1] tensor.
torch::Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const torch::Tensor& chw);

}  // namespace cfsm
