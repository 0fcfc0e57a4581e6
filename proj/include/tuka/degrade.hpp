// SPDX-License-Identifier: Apache-2.0
//
// Physics-based degradation of RGB frames: atmospheric scattering,
// low-light and overexposure formation models, plus 8-bit PPM image and
// 16-bit PGM depth I/O.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace tuka {

/// Three channels, row-major, channel-interleaved, values in [0,1].
struct ImageF {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> data;

    ImageF() = default;
    ImageF(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(w * h * 3, fill) {}

    double& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * 3 + c]; }
    double at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
    bool operator==(const ImageF&) const = default;
};

/// Scene depth in metres, one value per pixel.
struct DepthMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> data;

    DepthMap() = default;
    DepthMap(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(w * h, fill) {}
    bool operator==(const DepthMap&) const = default;
};

/// Camera response: i^γ (default, darkens for γ > 1) or i^(1/γ).
enum class CrfConvention { power, inverse };

struct ScatterParams {
    double beta = 0.01;
    std::array<double, 3> airlight{0.95, 0.95, 1.0};
    double d_max = 200.0;
    double particle_size = 0.1;  // recorded only; the model has no use for it
};

struct LowLightParams {
    double brightness = 0.15;
    double exposure = 0.15;
    double gain = 8.0;
    double shot_factor = 0.4;
    double read_sigma = 3.0;  // in 8-bit digital numbers
    double gamma = 2.2;
    double denoise_strength = 0.75;
    double detail_preservation = 0.7;
    CrfConvention crf = CrfConvention::power;
    std::uint64_t seed = 0;
};

struct OverexposeParams {
    double exposure = 2.5;
    double gain = 1.5;
    double saturation = 0.9;
    double shot_factor = 0.0;  // no value given for this mode; off by default
    double read_sigma = 0.015;  // normalized units
    double gamma = 2.0;
    double bloom = 0.3;
    std::array<double, 3> color_shift{1.0, 0.96, 0.92};
    CrfConvention crf = CrfConvention::power;
    std::uint64_t seed = 0;
};

void validate(const ScatterParams& p);
void validate(const LowLightParams& p);
void validate(const OverexposeParams& p);

/// I = J·t + A·(1 − t) with t = exp(−β·min(d, d_max)), clipped to [0,1].
ImageF scatter(const ImageF& img, const DepthMap& depth, const ScatterParams& p);
/// Without a depth map every pixel sits at d_max/2; a warning goes to stderr.
ImageF scatter(const ImageF& img, const ScatterParams& p);

/// CRF(clip(G·T·B·J + N)), with the denoise blend applied to the noisy signal
/// whenever any noise source is on.
ImageF low_light(const ImageF& img, const LowLightParams& p);

/// CRF(clip(G·T_e·J + N, 0, S_sat) + bloom) times the colour shift, clipped.
ImageF overexpose(const ImageF& img, const OverexposeParams& p);

// ---------------------------------------------------------------------------
// Helpers exposed for tests

/// Mean over the 3×3 neighbourhood (edges clamped), per channel.
ImageF box_blur3(const ImageF& img);
/// Separable Gaussian blur with the given radius (σ = radius/2), edges clamped.
ImageF gaussian_blur(const ImageF& img, std::size_t radius);

// ---------------------------------------------------------------------------
// File formats

/// Binary PPM (P6), maxval 255. Values are quantized as round(v·255).
void save_image(const std::filesystem::path& path, const ImageF& img);
ImageF load_image(const std::filesystem::path& path);
ImageF decode_ppm(const std::string& bytes);
std::string encode_ppm(const ImageF& img);

/// Binary PGM (P5), maxval 65535, big-endian millimetres. Depths beyond
/// 65.535 m saturate.
void save_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap load_depth(const std::filesystem::path& path);
DepthMap decode_pgm16(const std::string& bytes);
std::string encode_pgm16(const DepthMap& depth);

// ---------------------------------------------------------------------------
// Batch processing

enum class DegradeMode { scattering, lowlight, overexposure };
DegradeMode parse_degrade_mode(const std::string& name);
std::string to_string(DegradeMode mode);

struct DegradeJob {
    DegradeMode mode = DegradeMode::scattering;
    std::filesystem::path input_dir;
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> depth_dir;  // <stem>.pgm per image
    ScatterParams scatter;
    LowLightParams low_light;
    OverexposeParams overexpose;
    std::uint64_t seed = 0;
};

/// Applies one key = value override (e.g. "beta", "gamma", "airlight") to
/// the parameters of `job.mode`. Throws ConfigError naming the key.
void apply_degrade_setting(DegradeJob& job, const std::string& key, const std::string& value);

/// Degrades every .ppm under input_dir in name order. Image i uses seed
/// mix_seed(job.seed, i). Writes the outputs and manifest.json, which is
/// also returned.
nlohmann::json run_degrade(const DegradeJob& job);

}  // namespace tuka
