// SPDX-License-Identifier: Apache-2.0
#include "tuka/degrade.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <iostream>
#include <random>
#include <sstream>

#include "tuka/archive.hpp"
#include "tuka/error.hpp"
#include "tuka/taskgen.hpp"

namespace tuka {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

double crf(double i, double gamma, CrfConvention c) {
    return std::pow(i, c == CrfConvention::power ? gamma : 1.0 / gamma);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

void check_same_size(const ImageF& img, const DepthMap& depth) {
    if (img.width != depth.width || img.height != depth.height)
        throw DimensionError("depth map is " + std::to_string(depth.width) + "x" + std::to_string(depth.height) +
                             ", image is " + std::to_string(img.width) + "x" + std::to_string(img.height));
}

void check_image(const ImageF& img) {
    if (img.data.size() != img.width * img.height * 3) throw DimensionError("image data does not match its size");
}

// Per-pixel Gaussian draws in a fixed order, so output bytes depend only on
// the seed and the image size.
class NoiseSource {
public:
    explicit NoiseSource(std::uint64_t seed) : rng_(mix_seed(seed, 0x4E4F495345ULL)) {}
    double operator()() { return normal_(rng_); }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

std::string crf_name(CrfConvention c) { return c == CrfConvention::power ? "power" : "inverse"; }

}  // namespace

void validate(const ScatterParams& p) {
    require(p.beta >= 0.0 && std::isfinite(p.beta), "beta: must be >= 0");
    for (double a : p.airlight) require(a >= 0.0 && a <= 1.0, "airlight: components must lie in [0,1]");
    require(p.d_max > 0.0, "d_max: must be positive");
}

void validate(const LowLightParams& p) {
    require(p.brightness >= 0.0, "brightness: must be >= 0");
    require(p.exposure > 0.0, "exposure: must be positive");
    require(p.gain > 0.0, "gain: must be positive");
    require(p.shot_factor >= 0.0, "shot_factor: must be >= 0");
    require(p.read_sigma >= 0.0, "read_sigma: must be >= 0");
    require(p.gamma > 0.0, "gamma: must be positive");
    require(p.denoise_strength >= 0.0 && p.denoise_strength <= 1.0, "denoise_strength: must lie in [0,1]");
    require(p.detail_preservation >= 0.0 && p.detail_preservation <= 1.0, "detail_preservation: must lie in [0,1]");
}

void validate(const OverexposeParams& p) {
    require(p.exposure > 0.0, "exposure: must be positive");
    require(p.gain > 0.0, "gain: must be positive");
    require(p.saturation > 0.0 && p.saturation <= 1.0, "saturation: must lie in (0,1]");
    require(p.shot_factor >= 0.0, "shot_factor: must be >= 0");
    require(p.read_sigma >= 0.0, "read_sigma: must be >= 0");
    require(p.gamma > 0.0, "gamma: must be positive");
    require(p.bloom >= 0.0, "bloom: must be >= 0");
    for (double c : p.color_shift) require(c >= 0.0, "color_shift: components must be >= 0");
}

ImageF scatter(const ImageF& img, const DepthMap& depth, const ScatterParams& p) {
    validate(p);
    check_image(img);
    check_same_size(img, depth);
    ImageF out = img;
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        const double d = depth.data[i];
        if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("depth must be finite and non-negative");
        const double t = std::exp(-p.beta * std::min(d, p.d_max));
        for (std::size_t c = 0; c < 3; ++c) {
            double& v = out.data[i * 3 + c];
            v = clip01(v * t + p.airlight[c] * (1.0 - t));
        }
    }
    return out;
}

ImageF scatter(const ImageF& img, const ScatterParams& p) {
    std::cerr << "warning: no depth map, using constant depth " << p.d_max / 2 << " m\n";
    return scatter(img, DepthMap(img.width, img.height, p.d_max / 2), p);
}

ImageF box_blur3(const ImageF& img) {
    ImageF out(img.width, img.height);
    const auto w = static_cast<std::ptrdiff_t>(img.width), h = static_cast<std::ptrdiff_t>(img.height);
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const auto xx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1));
                        const auto yy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1));
                        s += img.at(xx, yy, c);
                    }
                out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = s / 9.0;
            }
    return out;
}

ImageF gaussian_blur(const ImageF& img, std::size_t radius) {
    if (radius == 0) return img;
    const auto r = static_cast<std::ptrdiff_t>(radius);
    const double sigma = static_cast<double>(radius) / 2.0;
    std::vector<double> k(2 * radius + 1);
    double norm = 0.0;
    for (std::ptrdiff_t i = -r; i <= r; ++i) norm += k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    for (double& v : k) v /= norm;

    const auto w = static_cast<std::ptrdiff_t>(img.width), h = static_cast<std::ptrdiff_t>(img.height);
    auto pass = [&](const ImageF& src, bool horizontal) {
        ImageF dst(src.width, src.height);
        for (std::ptrdiff_t y = 0; y < h; ++y)
            for (std::ptrdiff_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    double s = 0.0;
                    for (std::ptrdiff_t i = -r; i <= r; ++i) {
                        const auto xx = horizontal ? std::clamp<std::ptrdiff_t>(x + i, 0, w - 1) : x;
                        const auto yy = horizontal ? y : std::clamp<std::ptrdiff_t>(y + i, 0, h - 1);
                        s += k[i + r] * src.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy), c);
                    }
                    dst.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = s;
                }
        return dst;
    };
    return pass(pass(img, true), false);
}

ImageF low_light(const ImageF& img, const LowLightParams& p) {
    validate(p);
    check_image(img);
    const double scale = p.gain * p.exposure * p.brightness;
    const bool noisy = p.shot_factor > 0.0 || p.read_sigma > 0.0;
    ImageF s = img;
    NoiseSource noise(p.seed);
    for (double& v : s.data) {
        v *= scale;
        if (noisy) {
            // shot and read noise both live in 8-bit digital numbers
            const double shot = std::sqrt(p.shot_factor * 255.0 * std::max(v, 0.0)) / 255.0;
            const double z1 = noise(), z2 = noise();
            v += shot * z1 + p.read_sigma / 255.0 * z2;
        }
    }
    if (noisy && p.denoise_strength > 0.0) {
        const ImageF blurred = box_blur3(s);
        for (std::size_t i = 0; i < s.data.size(); ++i) {
            const double den = p.detail_preservation * s.data[i] + (1.0 - p.detail_preservation) * blurred.data[i];
            s.data[i] = (1.0 - p.denoise_strength) * s.data[i] + p.denoise_strength * den;
        }
    }
    for (double& v : s.data) v = crf(clip01(v), p.gamma, p.crf);
    return s;
}

ImageF overexpose(const ImageF& img, const OverexposeParams& p) {
    validate(p);
    check_image(img);
    const double scale = p.gain * p.exposure;
    const bool noisy = p.shot_factor > 0.0 || p.read_sigma > 0.0;
    ImageF s = img;
    NoiseSource noise(p.seed);
    for (double& v : s.data) {
        v *= scale;
        if (noisy) {
            const double z1 = noise(), z2 = noise();
            v += std::sqrt(p.shot_factor * std::max(v, 0.0)) * z1 + p.read_sigma * z2;
        }
        v = std::clamp(v, 0.0, p.saturation);
    }
    if (p.bloom > 0.0) {
        ImageF mask(s.width, s.height);
        for (std::size_t i = 0; i < s.data.size(); ++i)
            if (s.data[i] >= p.saturation) mask.data[i] = s.data[i];
        const ImageF glow = gaussian_blur(mask, 5);
        for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] += p.bloom * glow.data[i];
    }
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        const double v = s.data[i] * p.color_shift[i % 3];
        s.data[i] = clip01(crf(clip01(v), p.gamma, p.crf));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Netpbm

namespace {

struct HeaderReader {
    const std::string& bytes;
    std::size_t pos = 0;

    void skip_space() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                return;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space();
        const std::size_t start = pos;
        std::size_t v = 0;
        const auto [end, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
        if (ec != std::errc()) throw ParseError(std::string("expected ") + what, start);
        pos = static_cast<std::size_t>(end - bytes.data());
        return v;
    }
};

struct NetpbmHeader {
    std::size_t width, height, maxval, payload;
};

NetpbmHeader read_header(const std::string& bytes, const char* magic) {
    if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) throw ParseError(std::string("missing ") + magic + " magic", 0);
    HeaderReader r{bytes, 2};
    NetpbmHeader h{};
    h.width = r.number("width");
    h.height = r.number("height");
    const std::size_t maxval_at = r.pos;
    h.maxval = r.number("maxval");
    if (h.width == 0 || h.height == 0) throw ParseError("image dimensions must be positive", maxval_at);
    if (r.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos])))
        throw ParseError("expected a whitespace byte after maxval", r.pos);
    h.payload = r.pos + 1;
    return h;
}

}  // namespace

std::string encode_ppm(const ImageF& img) {
    check_image(img);
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    for (double v : img.data) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clip01(v) * 255.0))));
    return out;
}

ImageF decode_ppm(const std::string& bytes) {
    const auto h = read_header(bytes, "P6");
    if (h.maxval != 255) throw ParseError("unsupported maxval " + std::to_string(h.maxval) + " (only 255)", h.payload - 1);
    ImageF img(h.width, h.height);
    const std::size_t need = img.data.size();
    if (bytes.size() - h.payload < need) throw ParseError("truncated pixel data", bytes.size());
    for (std::size_t i = 0; i < need; ++i) img.data[i] = static_cast<unsigned char>(bytes[h.payload + i]) / 255.0;
    return img;
}

std::string encode_pgm16(const DepthMap& depth) {
    if (depth.data.size() != depth.width * depth.height) throw DimensionError("depth data does not match its size");
    std::string out = "P5\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n65535\n";
    for (double d : depth.data) {
        if (!(d >= 0.0)) throw std::invalid_argument("depth must be non-negative");
        const auto mm = static_cast<std::uint16_t>(std::min(std::llround(d * 1000.0), 65535LL));
        out.push_back(static_cast<char>(mm >> 8));
        out.push_back(static_cast<char>(mm & 0xFF));
    }
    return out;
}

DepthMap decode_pgm16(const std::string& bytes) {
    const auto h = read_header(bytes, "P5");
    if (h.maxval != 65535) throw ParseError("unsupported maxval " + std::to_string(h.maxval) + " (only 65535)", h.payload - 1);
    DepthMap depth(h.width, h.height);
    if (bytes.size() - h.payload < 2 * depth.data.size()) throw ParseError("truncated depth data", bytes.size());
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        const auto hi = static_cast<unsigned char>(bytes[h.payload + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[h.payload + 2 * i + 1]);
        depth.data[i] = static_cast<double>((hi << 8) | lo) / 1000.0;
    }
    return depth;
}

void save_image(const fs::path& path, const ImageF& img) { write_file_atomic(path, encode_ppm(img)); }
ImageF load_image(const fs::path& path) { return decode_ppm(read_file(path)); }
void save_depth(const fs::path& path, const DepthMap& depth) { write_file_atomic(path, encode_pgm16(depth)); }
DepthMap load_depth(const fs::path& path) { return decode_pgm16(read_file(path)); }

// ---------------------------------------------------------------------------
// Batch

DegradeMode parse_degrade_mode(const std::string& name) {
    if (name == "scattering") return DegradeMode::scattering;
    if (name == "lowlight") return DegradeMode::lowlight;
    if (name == "overexposure") return DegradeMode::overexposure;
    throw ConfigError("mode: unknown degradation '" + name + "' (scattering, lowlight, overexposure)");
}

std::string to_string(DegradeMode mode) {
    switch (mode) {
        case DegradeMode::scattering: return "scattering";
        case DegradeMode::lowlight: return "lowlight";
        case DegradeMode::overexposure: return "overexposure";
    }
    return "?";
}

namespace {

double number(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

std::array<double, 3> triple(const std::string& key, const std::string& v) {
    std::array<double, 3> out{};
    std::stringstream ss(v);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
        if (n == 3) throw ConfigError(key + ": expected three comma-separated numbers");
        cell.erase(0, cell.find_first_not_of(" \t"));
        cell.erase(cell.find_last_not_of(" \t") + 1);
        out[n++] = number(key, cell);
    }
    if (n != 3) throw ConfigError(key + ": expected three comma-separated numbers");
    return out;
}

CrfConvention crf_of(const std::string& key, const std::string& v) {
    if (v == "power") return CrfConvention::power;
    if (v == "inverse") return CrfConvention::inverse;
    throw ConfigError(key + ": expected 'power' or 'inverse', got '" + v + "'");
}

json params_json(const DegradeJob& job) {
    switch (job.mode) {
        case DegradeMode::scattering: {
            const auto& p = job.scatter;
            return {{"beta", p.beta}, {"airlight", p.airlight}, {"d_max", p.d_max}, {"particle_size", p.particle_size}};
        }
        case DegradeMode::lowlight: {
            const auto& p = job.low_light;
            return {{"brightness", p.brightness},
                    {"exposure", p.exposure},
                    {"gain", p.gain},
                    {"shot_factor", p.shot_factor},
                    {"read_sigma", p.read_sigma},
                    {"gamma", p.gamma},
                    {"denoise_strength", p.denoise_strength},
                    {"detail_preservation", p.detail_preservation},
                    {"crf", crf_name(p.crf)}};
        }
        case DegradeMode::overexposure: {
            const auto& p = job.overexpose;
            return {{"exposure", p.exposure},     {"gain", p.gain},   {"saturation", p.saturation},
                    {"shot_factor", p.shot_factor}, {"read_sigma", p.read_sigma}, {"gamma", p.gamma},
                    {"bloom", p.bloom},           {"color_shift", p.color_shift}, {"crf", crf_name(p.crf)}};
        }
    }
    return json::object();
}

}  // namespace

void apply_degrade_setting(DegradeJob& job, const std::string& key, const std::string& value) {
    auto unknown = [&] { throw ConfigError(key + ": not a " + to_string(job.mode) + " parameter"); };
    switch (job.mode) {
        case DegradeMode::scattering: {
            auto& p = job.scatter;
            if (key == "beta") p.beta = number(key, value);
            else if (key == "airlight") p.airlight = triple(key, value);
            else if (key == "d_max") p.d_max = number(key, value);
            else if (key == "particle_size") p.particle_size = number(key, value);
            else unknown();
            validate(p);
            break;
        }
        case DegradeMode::lowlight: {
            auto& p = job.low_light;
            if (key == "brightness") p.brightness = number(key, value);
            else if (key == "exposure") p.exposure = number(key, value);
            else if (key == "gain") p.gain = number(key, value);
            else if (key == "shot_factor") p.shot_factor = number(key, value);
            else if (key == "read_sigma") p.read_sigma = number(key, value);
            else if (key == "gamma") p.gamma = number(key, value);
            else if (key == "denoise_strength") p.denoise_strength = number(key, value);
            else if (key == "detail_preservation") p.detail_preservation = number(key, value);
            else if (key == "crf") p.crf = crf_of(key, value);
            else unknown();
            validate(p);
            break;
        }
        case DegradeMode::overexposure: {
            auto& p = job.overexpose;
            if (key == "exposure") p.exposure = number(key, value);
            else if (key == "gain") p.gain = number(key, value);
            else if (key == "saturation") p.saturation = number(key, value);
            else if (key == "shot_factor") p.shot_factor = number(key, value);
            else if (key == "read_sigma") p.read_sigma = number(key, value);
            else if (key == "gamma") p.gamma = number(key, value);
            else if (key == "bloom") p.bloom = number(key, value);
            else if (key == "color_shift") p.color_shift = triple(key, value);
            else if (key == "crf") p.crf = crf_of(key, value);
            else unknown();
            validate(p);
            break;
        }
    }
}

json run_degrade(const DegradeJob& job) {
    if (!fs::is_directory(job.input_dir)) throw ConfigError("input: " + job.input_dir.string() + " is not a directory");
    if (job.depth_dir && !fs::is_directory(*job.depth_dir))
        throw ConfigError("depth: " + job.depth_dir->string() + " is not a directory");
    validate(job.scatter);
    validate(job.low_light);
    validate(job.overexpose);

    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(job.input_dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
    fs::create_directories(job.output_dir);

    json outputs = json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const ImageF img = load_image(inputs[i]);
        const std::uint64_t seed = mix_seed(job.seed, i);
        json entry{{"input", inputs[i].filename().string()}, {"output", inputs[i].filename().string()}, {"seed", seed}};
        ImageF out;
        switch (job.mode) {
            case DegradeMode::scattering: {
                const fs::path dpath = job.depth_dir ? *job.depth_dir / (inputs[i].stem().string() + ".pgm") : fs::path();
                if (!dpath.empty() && fs::exists(dpath)) {
                    out = scatter(img, load_depth(dpath), job.scatter);
                    entry["depth"] = dpath.filename().string();
                } else {
                    out = scatter(img, job.scatter);
                    entry["depth"] = nullptr;
                }
                break;
            }
            case DegradeMode::lowlight: {
                LowLightParams p = job.low_light;
                p.seed = seed;
                out = low_light(img, p);
                break;
            }
            case DegradeMode::overexposure: {
                OverexposeParams p = job.overexpose;
                p.seed = seed;
                out = overexpose(img, p);
                break;
            }
        }
        save_image(job.output_dir / inputs[i].filename(), out);
        outputs.push_back(std::move(entry));
    }
    json manifest{{"format", "tuka-degrade"},
                  {"version", 1},
                  {"mode", to_string(job.mode)},
                  {"seed", job.seed},
                  {"params", params_json(job)},
                  {"outputs", outputs}};
    write_file_atomic(job.output_dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

}  // namespace tuka
