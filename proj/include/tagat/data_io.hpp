#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tagat/plane.hpp"

namespace tagat {

// A pre-registered two-modality pair: the unit of training and inference.
// Images are luminance in [0,1]; chroma planes (Cr, Cb) are retained for
// color inputs so fused luminance can be recomposed to color at output time.
struct RegisteredPair {
    std::string id;
    Plane image1, image2;
    std::optional<std::array<Plane, 2>> chroma1, chroma2;
    std::optional<Plane> mask1, mask2; // strictly 0/1

    void validate() const; // throws RegistrationError / FormatError
};

struct AugmentationSpec {
    bool horizontal_flip = false;
    double rotation_degrees = 0.0; // in [-8, 8]
    int translate_x = 0;           // in [-20, 20]
    int translate_y = 0;

    AugmentationSpec() = default;
    AugmentationSpec(bool flip, double rot_deg, int tx, int ty); // range-checked
    static AugmentationSpec random(uint64_t seed);
};

// Per-modality rendering parameters for synthetic scenes.
struct ContrastProfile {
    double vessel_intensity = 0.85;
    double background_intensity = 0.15;
    double blur_sigma = 0.8;
    double noise_std = 0.01;
    double gradient_amplitude = 0.0; // smooth illumination ramp strength
};

// Desk-scale stand-in for a registered retinal dataset: both modalities
// render the same vascular tree under different contrast profiles.
struct SyntheticSceneSpec {
    int height = 64;
    int width = 80;
    int vessel_tree_depth = 3; // >= 1
    // FFA-like: sharp bright vessels; CF-like: dim vessels, heavy blur,
    // uneven illumination
    ContrastProfile profile1{0.88, 0.12, 0.6, 0.008, 0.02};
    ContrastProfile profile2{0.50, 0.27, 1.9, 0.016, 0.10};
    uint64_t seed = 0;

    void validate() const;
};

// Loads a registered pair from image files (PNG/TIFF, 8/16-bit, gray or RGB).
// Color inputs are converted to luminance with chroma retained. 16-bit data
// is normalized by 65535, 8-bit by 255.
RegisteredPair load_pair(const std::string& path1, const std::string& path2,
                         const std::optional<std::string>& mask_path1 = std::nullopt,
                         const std::optional<std::string>& mask_path2 = std::nullopt,
                         const std::string& id = "");

// One shared geometric transform applied to both images, chroma and masks.
// Out-of-frame pixels are filled with 0. Flip is applied before rotation and
// translation; rotation is about the image center.
RegisteredPair augment(const RegisteredPair& pair, const AugmentationSpec& spec);

RegisteredPair generate_synthetic_pair(const SyntheticSceneSpec& spec);

// Bilinear for images/chroma, nearest + re-binarize for masks.
RegisteredPair resize_pair(const RegisteredPair& pair, int target_h, int target_w);

// Dataset manifest: line-delimited JSON, one record per pair.
struct ManifestEntry {
    std::string id;
    std::string image1, image2;
    std::string mask1, mask2; // empty when absent
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
RegisteredPair load_manifest_entry(const ManifestEntry& e, const std::string& base_dir);

// 8-bit PNG output; color variant recomposes luminance with (Cr, Cb) chroma.
void save_png_gray(const Plane& image, const std::string& path);
void save_png_color(const Plane& luminance, const std::array<Plane, 2>& chroma,
                    const std::string& path);
void save_png_mask(const Plane& mask, const std::string& path); // 0/255

} // namespace tagat
